"""Thresholding and black-cluster extraction on a triangular-lattice pixel graph.

Square pixel grids are mapped onto the triangular lattice with the standard
sheared embedding: each site neighbors the four axis moves plus the
(up, right) and (down, left) diagonals. This keeps the site-percolation
critical probability at exactly 1/2, which is what separates clusters grown
inside particles from clusters grown in background noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .image import Micrograph

# Neighbor offsets of the sheared triangular-lattice embedding.
TRI_OFFSETS = ((-1, 0), (1, 0), (0, -1), (0, 1), (-1, 1), (1, -1))

# Same adjacency as a 3x3 structuring element for connected-component labeling.
_TRI_STRUCTURE = np.zeros((3, 3), dtype=bool)
_TRI_STRUCTURE[1, 1] = True
for _dr, _dc in TRI_OFFSETS:
    _TRI_STRUCTURE[1 + _dr, 1 + _dc] = True


@dataclass(frozen=True, eq=False)
class BinaryImage:
    """A thresholded picture: True = black."""

    bits: np.ndarray

    def __post_init__(self):
        b = np.array(self.bits, dtype=bool, copy=True, order="C")
        if b.ndim != 2 or b.shape[0] < 1 or b.shape[1] < 1:
            raise ValueError(f"bits must be a non-empty 2D grid, got shape {b.shape}")
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


@dataclass(frozen=True, eq=False)
class Cluster:
    """A maximal black connected component.

    pixels is an (n, 2) array of (row, col) pairs in row-major scan order;
    bbox is (min_row, min_col, max_row, max_col).
    """

    id: int
    pixel_count: int
    pixels: np.ndarray
    bbox: tuple[int, int, int, int]


def binarize(img: Micrograph, theta: float) -> BinaryImage:
    """Threshold at level theta: a pixel is black iff its value is >= theta."""
    theta = float(theta)
    if not np.isfinite(theta):
        raise ValueError(f"threshold must be finite, got {theta}")
    return BinaryImage(img.pixels >= theta)


def tri_neighbors(row: int, col: int, width: int, height: int) -> list[tuple[int, int]]:
    """In-bounds triangular-lattice neighbors of (row, col)."""
    if not (0 <= row < height and 0 <= col < width):
        raise ValueError(
            f"pixel (row={row}, col={col}) not inside a {width}x{height} image"
        )
    out = []
    for dr, dc in TRI_OFFSETS:
        r, c = row + dr, col + dc
        if 0 <= r < height and 0 <= c < width:
            out.append((r, c))
    return out


def label_black(image: BinaryImage) -> tuple[np.ndarray, int]:
    """Label black connected components under triangular adjacency.

    Returns (labels, count) where labels holds -1 on white pixels and cluster
    ids 0..count-1 on black ones. Ids follow discovery order of a row-major
    scan: the cluster whose first pixel appears earliest gets id 0.
    """
    raw, count = ndimage.label(image.bits, structure=_TRI_STRUCTURE)
    if count == 0:
        return np.full(image.bits.shape, -1, dtype=np.int64), 0
    flat = np.asarray(raw, dtype=np.int64).ravel()
    black = np.flatnonzero(flat)
    ids = flat[black]
    uniq, first = np.unique(ids, return_index=True)
    discovery = uniq[np.argsort(first)]
    remap = np.full(count + 1, -1, dtype=np.int64)
    remap[discovery] = np.arange(count)
    return remap[flat].reshape(image.bits.shape), count


def black_clusters(image: BinaryImage) -> list[Cluster]:
    """All maximal black clusters, ordered by discovery, ids consecutive from 0."""
    labels, count = label_black(image)
    if count == 0:
        return []
    flat = labels.ravel()
    black = np.flatnonzero(flat >= 0)
    ids = flat[black]
    order = np.argsort(ids, kind="stable")  # keeps row-major order inside a cluster
    sorted_pix = black[order]
    counts = np.bincount(ids, minlength=count)
    width = image.width
    clusters = []
    start = 0
    for cid in range(count):
        stop = start + int(counts[cid])
        rows, cols = np.divmod(sorted_pix[start:stop], width)
        clusters.append(
            Cluster(
                id=cid,
                pixel_count=int(counts[cid]),
                pixels=np.column_stack((rows, cols)),
                bbox=(int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())),
            )
        )
        start = stop
    return clusters


def cluster_sizes(image: BinaryImage) -> np.ndarray:
    """Pixel counts of all black clusters in discovery order (fast path)."""
    labels, count = label_black(image)
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    flat = labels.ravel()
    return np.bincount(flat[flat >= 0], minlength=count)


def filter_clusters(clusters: list[Cluster], min_pixels: int) -> list[Cluster]:
    """Keep clusters with at least min_pixels pixels, preserving order and ids."""
    if min_pixels < 1:
        raise ValueError(f"min_pixels must be >= 1, got {min_pixels}")
    return [c for c in clusters if c.pixel_count >= min_pixels]


def bernoulli_field(width: int, height: int, p: float, seed) -> BinaryImage:
    """I.i.d. site field: each pixel black with probability p, seeded."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"site probability must be in [0, 1], got {p}")
    if width < 1 or height < 1:
        raise ValueError(f"field must be at least 1x1, got {width}x{height}")
    rng = np.random.default_rng(seed)
    return BinaryImage(rng.random((height, width)) < p)
