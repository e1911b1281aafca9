"""End-to-end detection: estimate intensities, threshold at the midpoint,
extract black clusters, filter small ones, and report.

The pipeline preprocesses (downsample passes, then optional normalization),
estimates the background and particle intensities with the scan windows, and
thresholds at their midpoint. Clusters that survive the pixel-count filter
are reported as particles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .image import Micrograph, downsample2x, normalize_max1
from .percolation import BinaryImage, Cluster, binarize, black_clusters, filter_clusters
from .scan import IntensityEstimates, estimate_intensities


class DegenerateEstimatesError(ValueError):
    """Raised when the estimated background is not below the estimated particle
    intensity, so the midpoint threshold would be meaningless."""


class Decision(str, Enum):
    PARTICLES_FOUND = "ParticlesFound"
    NO_PARTICLES = "NoParticles"


@dataclass(frozen=True)
class DetectParams:
    """Pipeline parameters. Defaults follow the reference cryo-EM workflow:
    downsample twice, normalize to peak 1, windows 65 and 9, keep clusters of
    at least 30 pixels."""

    phi0: int = 65
    phi1: int = 9
    min_cluster_pixels: int = 30
    downsample_passes: int = 2
    normalize: bool = True

    def __post_init__(self):
        if self.phi0 < 1 or self.phi1 < 1:
            raise ValueError(f"window sides must be >= 1, got {self.phi0}, {self.phi1}")
        if self.min_cluster_pixels < 1:
            raise ValueError(f"min_cluster_pixels must be >= 1, got {self.min_cluster_pixels}")
        if self.downsample_passes < 0:
            raise ValueError(f"downsample_passes must be >= 0, got {self.downsample_passes}")


@dataclass(frozen=True, eq=False)
class DetectionReport:
    estimates: IntensityEstimates
    theta: float
    clusters_kept: tuple[Cluster, ...]
    clusters_total: int
    decision: Decision
    params: DetectParams
    image_dims: tuple[int, int]  # (width, height) after preprocessing


@dataclass(frozen=True, eq=False)
class DetectionArtifacts:
    """A report plus the intermediate images the report was computed from."""

    report: DetectionReport
    preprocessed: Micrograph
    binary: BinaryImage
    kept_binary: BinaryImage


@dataclass(frozen=True)
class MatchSummary:
    """Ground-truth comparison: which particles were hit, how many kept
    clusters hit nothing."""

    detected: tuple[bool, ...]
    false_clusters: int

    @property
    def all_detected(self) -> bool:
        return all(self.detected)


def compute_threshold(a_hat: float, b_hat: float) -> float:
    """Midpoint threshold between the two intensity estimates."""
    if not a_hat < b_hat:
        raise DegenerateEstimatesError(
            f"degenerate estimates: a_hat={a_hat!r} is not below b_hat={b_hat!r}"
        )
    return (a_hat + b_hat) / 2.0


def preprocess(img: Micrograph, params: DetectParams) -> Micrograph:
    """Apply downsample passes, then optional normalization; verify the result
    is still large enough for both scan windows."""
    out = img
    for _ in range(params.downsample_passes):
        out = downsample2x(out)
    if params.normalize:
        out = normalize_max1(out)
    need = max(params.phi0, params.phi1)
    if min(out.width, out.height) < need:
        raise ValueError(
            f"image is {out.width}x{out.height} after preprocessing, "
            f"smaller than the largest scan window ({need})"
        )
    return out


def _paint_clusters(clusters, width: int, height: int) -> BinaryImage:
    bits = np.zeros((height, width), dtype=bool)
    for c in clusters:
        bits[c.pixels[:, 0], c.pixels[:, 1]] = True
    return BinaryImage(bits)


def run_detection_artifacts(img: Micrograph, params: DetectParams) -> DetectionArtifacts:
    """Full pipeline, returning the report together with intermediate images."""
    pre = preprocess(img, params)
    estimates = estimate_intensities(pre, params.phi0, params.phi1)
    theta = compute_threshold(estimates.a_hat, estimates.b_hat)
    binary = binarize(pre, theta)
    clusters = black_clusters(binary)
    kept = filter_clusters(clusters, params.min_cluster_pixels)
    decision = Decision.PARTICLES_FOUND if kept else Decision.NO_PARTICLES
    report = DetectionReport(
        estimates=estimates,
        theta=theta,
        clusters_kept=tuple(kept),
        clusters_total=len(clusters),
        decision=decision,
        params=params,
        image_dims=(pre.width, pre.height),
    )
    return DetectionArtifacts(
        report=report,
        preprocessed=pre,
        binary=binary,
        kept_binary=_paint_clusters(kept, pre.width, pre.height),
    )


def run_detection(img: Micrograph, params: DetectParams) -> DetectionReport:
    """Full pipeline: preprocess, estimate, threshold, cluster, filter, decide."""
    return run_detection_artifacts(img, params).report


def match_clusters(
    clusters, dims: tuple[int, int], truth_masks
) -> MatchSummary:
    """Match kept clusters against ground-truth particle masks.

    A particle counts as detected when some kept cluster intersects its mask;
    clusters can legitimately merge over several particles. A kept cluster
    intersecting no mask is a false cluster.
    """
    width, height = dims
    grid = np.full((height, width), -1, dtype=np.int64)
    masks = list(truth_masks)
    for i, mask in enumerate(masks):
        m = np.asarray(mask, dtype=bool)
        if m.shape != (height, width):
            raise ValueError(
                f"truth mask {i} has shape {m.shape}, expected {(height, width)}"
            )
        grid[m] = i
    detected = np.zeros(len(masks), dtype=bool)
    false_clusters = 0
    for c in clusters:
        hits = grid[c.pixels[:, 0], c.pixels[:, 1]]
        hit_ids = np.unique(hits[hits >= 0])
        if hit_ids.size == 0:
            false_clusters += 1
        else:
            detected[hit_ids] = True
    return MatchSummary(detected=tuple(bool(d) for d in detected), false_clusters=false_clusters)


def match_detections(report: DetectionReport, truth_masks) -> MatchSummary:
    """Match a report's kept clusters against ground-truth masks (see match_clusters)."""
    return match_clusters(report.clusters_kept, report.image_dims, truth_masks)


def _sig6(x: float) -> float:
    """Round to 6 significant digits for stable report formatting."""
    return float(f"{x:.6g}")


def report_to_dict(report: DetectionReport) -> dict:
    p = report.params
    return {
        "a_hat": _sig6(report.estimates.a_hat),
        "b_hat": _sig6(report.estimates.b_hat),
        "theta": _sig6(report.theta),
        "clusters": [
            {"id": c.id, "pixel_count": c.pixel_count, "bbox": list(c.bbox)}
            for c in report.clusters_kept
        ],
        "clusters_total": report.clusters_total,
        "decision": report.decision.value,
        "params": {
            "phi0": p.phi0,
            "phi1": p.phi1,
            "min_cluster_pixels": p.min_cluster_pixels,
            "downsample_passes": p.downsample_passes,
            "normalize": p.normalize,
        },
        "dims": [report.image_dims[0], report.image_dims[1]],
    }


def report_to_json(report: DetectionReport) -> str:
    """Serialize a report with fixed key order and 6-significant-digit floats,
    so identical runs produce byte-identical documents."""
    return json.dumps(report_to_dict(report), indent=2) + "\n"
