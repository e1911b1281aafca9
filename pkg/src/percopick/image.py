"""Pixel-grid primitives: micrographs, integral images, window sums.

All pixel data is 64-bit float. Types are immutable after construction and
every operation returns a fresh object, so everything here is safe to share
across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Micrograph:
    """A rectangular grid of real-valued pixel intensities (row-major)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64, copy=True, order="C")
        if px.ndim != 2:
            raise ValueError(f"pixels must be a 2D grid, got {px.ndim} dimension(s)")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"image must be at least 1x1, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("pixel values must be finite (no NaN or infinity)")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True, eq=False)
class IntegralImage:
    """Cumulative-sum table: table[r, c] = sum of pixels in rows [0, r), cols [0, c).

    The first row and column are zero, so any axis-aligned window sum is four
    table lookups.
    """

    width: int
    height: int
    table: np.ndarray


@dataclass(frozen=True)
class WindowStats:
    """A square window's position, side length, pixel sum, and mean."""

    row: int
    col: int
    side: int
    sum: float
    mean: float


def build_integral(img: Micrograph) -> IntegralImage:
    """Build the cumulative-sum table of an image in one linear sweep."""
    table = np.zeros((img.height + 1, img.width + 1), dtype=np.float64)
    table[1:, 1:] = np.cumsum(np.cumsum(img.pixels, axis=0), axis=1)
    table.setflags(write=False)
    return IntegralImage(width=img.width, height=img.height, table=table)


def window_sum(ii: IntegralImage, row: int, col: int, side: int) -> float:
    """Sum of the side x side window with top-left corner (row, col)."""
    if side < 1:
        raise ValueError(f"window side must be >= 1, got {side}")
    if row < 0 or col < 0 or row + side > ii.height or col + side > ii.width:
        raise ValueError(
            f"window (row={row}, col={col}, side={side}) not inside "
            f"a {ii.width}x{ii.height} image"
        )
    t = ii.table
    return float(
        t[row + side, col + side]
        - t[row, col + side]
        - t[row + side, col]
        + t[row, col]
    )


def downsample2x(img: Micrograph) -> Micrograph:
    """Halve both dimensions by averaging 2x2 blocks.

    A trailing odd row or column is dropped rather than padded.
    """
    if img.height < 2 or img.width < 2:
        raise ValueError(
            f"need at least a 2x2 image to downsample, got {img.width}x{img.height}"
        )
    h2, w2 = img.height // 2, img.width // 2
    blocks = img.pixels[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2)
    return Micrograph(blocks.mean(axis=(1, 3)))


def normalize_max1(img: Micrograph) -> Micrograph:
    """Divide every pixel by the maximum so the output peaks at exactly 1."""
    peak = float(img.pixels.max())
    if peak <= 0.0:
        raise ValueError(f"maximum pixel value must be positive, got {peak}")
    return Micrograph(img.pixels / peak)
