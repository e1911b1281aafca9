"""Synthetic two-level scenes, bounded noise models, and Monte Carlo harnesses.

Scenes follow the additive model: every pixel is the background intensity a,
or the particle intensity b > a on a particle mask, plus i.i.d. mean-zero
noise bounded by M. Scene construction enforces the model premises up front:
particle masks are pairwise disjoint, each contains a full phi1 x phi1
square, and an explicitly placed phi0 x phi0 square is left noise-only.

Monte Carlo trials derive per-trial seeds from (seed, trial_index), so
results do not depend on scheduling and may be computed in parallel.
"""

from __future__ import annotations

import abc
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .detect import (
    DetectParams,
    match_clusters,
    match_detections,
    preprocess,
    run_detection_artifacts,
)
from .image import Micrograph
from .percolation import binarize, black_clusters, bernoulli_field, cluster_sizes, filter_clusters
from .scan import estimate_lower, naive_mean


# ---------------------------------------------------------------------------
# Noise models
# ---------------------------------------------------------------------------

class NoiseModel(abc.ABC):
    """Mean-zero i.i.d. noise, symmetric about 0, with |eps| <= bound a.s.

    Subclasses expose `bound` (the almost-sure bound M), `variance`, and a
    seeded vectorized `sample`.
    """

    @property
    def sigma(self) -> float:
        return math.sqrt(self.variance)

    @abc.abstractmethod
    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        ...


@dataclass(frozen=True)
class UniformNoise(NoiseModel):
    """Uniform noise on [-half_width, half_width]; variance half_width^2 / 3."""

    half_width: float

    def __post_init__(self):
        if not (self.half_width >= 0 and math.isfinite(self.half_width)):
            raise ValueError(f"half_width must be finite and >= 0, got {self.half_width}")

    @property
    def bound(self) -> float:
        return self.half_width

    @property
    def variance(self) -> float:
        return self.half_width ** 2 / 3.0

    def sample(self, rng, shape):
        return rng.uniform(-self.half_width, self.half_width, size=shape)


@dataclass(frozen=True)
class TruncatedGaussianNoise(NoiseModel):
    """Normal(0, sigma_raw^2) conditioned on |eps| <= bound, by rejection.

    For bound = sigma_raw the acceptance rate is about 68%, so the loop below
    rarely needs more than two rounds.
    """

    sigma_raw: float
    bound: float

    def __post_init__(self):
        if not (self.sigma_raw > 0 and math.isfinite(self.sigma_raw)):
            raise ValueError(f"sigma_raw must be finite and > 0, got {self.sigma_raw}")
        if not (self.bound > 0 and math.isfinite(self.bound)):
            raise ValueError(f"bound must be finite and > 0, got {self.bound}")

    @property
    def variance(self) -> float:
        # Exact variance of a symmetrically truncated normal:
        # sigma^2 * (1 - 2 alpha pdf(alpha) / (2 cdf(alpha) - 1)), alpha = M/sigma.
        alpha = self.bound / self.sigma_raw
        pdf = math.exp(-0.5 * alpha * alpha) / math.sqrt(2.0 * math.pi)
        mass = math.erf(alpha / math.sqrt(2.0))
        return self.sigma_raw ** 2 * (1.0 - 2.0 * alpha * pdf / mass)

    def sample(self, rng, shape):
        n = int(np.prod(shape))
        out = np.empty(n, dtype=np.float64)
        filled = 0
        while filled < n:
            need = n - filled
            draws = rng.normal(0.0, self.sigma_raw, size=int(need * 1.6) + 16)
            keep = draws[np.abs(draws) <= self.bound]
            take = min(keep.size, need)
            out[filled : filled + take] = keep[:take]
            filled += take
        return out.reshape(shape)


# ---------------------------------------------------------------------------
# Particle shapes
# ---------------------------------------------------------------------------

def square_mask(side: int) -> np.ndarray:
    if side < 1:
        raise ValueError(f"square side must be >= 1, got {side}")
    return np.ones((side, side), dtype=bool)


def disc_mask(radius: int) -> np.ndarray:
    """Filled disc: lattice points within Euclidean distance radius of the center."""
    if radius < 1:
        raise ValueError(f"disc radius must be >= 1, got {radius}")
    rr, cc = np.ogrid[-radius : radius + 1, -radius : radius + 1]
    return rr * rr + cc * cc <= radius * radius


def l_shape_mask(arm: int, thickness: int) -> np.ndarray:
    """Nonconvex L: a vertical stroke plus a horizontal stroke along the bottom,
    both `thickness` wide, inside an arm x arm bounding box."""
    if thickness < 1 or arm <= thickness:
        raise ValueError(f"need arm > thickness >= 1, got arm={arm}, thickness={thickness}")
    m = np.zeros((arm, arm), dtype=bool)
    m[:, :thickness] = True
    m[arm - thickness :, :] = True
    return m


def annulus_gap_mask(outer_radius: int, inner_radius: int, gap_half_width: int) -> np.ndarray:
    """Nonconvex C: a ring with a radial channel removed below the center."""
    if inner_radius < 1 or outer_radius <= inner_radius:
        raise ValueError(
            f"need outer_radius > inner_radius >= 1, got {outer_radius}, {inner_radius}"
        )
    if gap_half_width < 1:
        raise ValueError(f"gap_half_width must be >= 1, got {gap_half_width}")
    rr, cc = np.ogrid[-outer_radius : outer_radius + 1, -outer_radius : outer_radius + 1]
    d2 = rr * rr + cc * cc
    ring = (d2 <= outer_radius * outer_radius) & (d2 > inner_radius * inner_radius)
    ring[outer_radius + 1 :, outer_radius - gap_half_width : outer_radius + gap_half_width + 1] = False
    return ring


def shape_library(kind: str, size: int) -> np.ndarray:
    """Deterministic mask by family name, with derived secondary dimensions.

    square: side = size; disc: radius = size; l_shape: arm = size,
    thickness = size // 2; annulus_gap: outer = size, inner = size // 3,
    gap half-width = size // 6.
    """
    if kind == "square":
        return square_mask(size)
    if kind == "disc":
        return disc_mask(size)
    if kind == "l_shape":
        return l_shape_mask(size, max(1, size // 2))
    if kind == "annulus_gap":
        return annulus_gap_mask(size, max(1, size // 3), max(1, size // 6))
    raise ValueError(f"unknown shape kind {kind!r}")


def place_shape(n: int, shape: np.ndarray, row: int, col: int) -> np.ndarray:
    """Full-frame n x n mask with the shape's bounding grid placed at (row, col)."""
    shape = np.asarray(shape, dtype=bool)
    h, w = shape.shape
    if row < 0 or col < 0 or row + h > n or col + w > n:
        raise ValueError(
            f"shape of {h}x{w} at (row={row}, col={col}) does not fit an {n}x{n} frame"
        )
    frame = np.zeros((n, n), dtype=bool)
    frame[row : row + h, col : col + w] = shape
    return frame


def mask_contains_square(mask: np.ndarray, side: int) -> bool:
    """True if some side x side window lies entirely inside the mask."""
    mask = np.asarray(mask, dtype=np.int64)
    h, w = mask.shape
    if side < 1 or side > h or side > w:
        return False
    t = np.zeros((h + 1, w + 1), dtype=np.int64)
    t[1:, 1:] = np.cumsum(np.cumsum(mask, axis=0), axis=1)
    sums = t[side:, side:] - t[:-side, side:] - t[side:, :-side] + t[:-side, :-side]
    return bool((sums == side * side).any())


# ---------------------------------------------------------------------------
# Scenes
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SceneSpec:
    """Ground truth for a synthetic scene.

    particles are full-frame boolean masks. noise_square is the top-left
    corner of the guaranteed noise-only square of side noise_square_side;
    its existence is a hard model premise, so it is validated here rather
    than trusted. Every particle must contain a full min_particle_square
    square (the premise behind the particle-intensity scan window).
    """

    n: int
    a: float
    b: float
    particles: tuple[np.ndarray, ...]
    noise_square: tuple[int, int]
    noise_square_side: int
    min_particle_square: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"scene side must be >= 1, got {self.n}")
        if not (math.isfinite(self.a) and math.isfinite(self.b) and self.b > self.a):
            raise ValueError(f"need finite intensities with b > a, got a={self.a}, b={self.b}")
        if self.noise_square_side < 1 or self.min_particle_square < 1:
            raise ValueError("window sides must be >= 1")
        r0, c0 = self.noise_square
        s = self.noise_square_side
        if r0 < 0 or c0 < 0 or r0 + s > self.n or c0 + s > self.n:
            raise ValueError(
                f"noise square at {self.noise_square} with side {s} "
                f"does not fit an {self.n}x{self.n} frame"
            )
        masks = []
        coverage = np.zeros((self.n, self.n), dtype=np.int64)
        for i, mask in enumerate(self.particles):
            m = np.array(mask, dtype=bool, copy=True)
            if m.shape != (self.n, self.n):
                raise ValueError(
                    f"particle mask {i} has shape {m.shape}, expected {(self.n, self.n)}"
                )
            if not mask_contains_square(m, self.min_particle_square):
                raise ValueError(
                    f"particle mask {i} contains no full "
                    f"{self.min_particle_square}x{self.min_particle_square} square"
                )
            coverage += m
            m.setflags(write=False)
            masks.append(m)
        if (coverage > 1).any():
            raise ValueError("particle masks overlap")
        if coverage[r0 : r0 + s, c0 : c0 + s].any():
            raise ValueError(
                f"guaranteed noise square at {self.noise_square} intersects a particle"
            )
        object.__setattr__(self, "particles", tuple(masks))

    @property
    def truth_image(self) -> np.ndarray:
        base = np.full((self.n, self.n), self.a, dtype=np.float64)
        for m in self.particles:
            base[m] = self.b
        return base


def generate_scene(
    spec: SceneSpec, noise: NoiseModel, seed
) -> tuple[Micrograph, tuple[np.ndarray, ...]]:
    """Render the two-level truth image plus i.i.d. noise; reproducible from seed.

    Returns the noisy micrograph and the ground-truth particle masks.
    """
    rng = np.random.default_rng(seed)
    pixels = spec.truth_image + noise.sample(rng, (spec.n, spec.n))
    return Micrograph(pixels), spec.particles


def find_clear_square(n: int, particles, side: int) -> tuple[int, int]:
    """First (row-major) top-left corner of a side x side square that avoids
    every particle mask; raises if none exists."""
    union = np.zeros((n, n), dtype=np.int64)
    for m in particles:
        union += np.asarray(m, dtype=bool)
    if side > n:
        raise ValueError(f"square side {side} exceeds frame side {n}")
    t = np.zeros((n + 1, n + 1), dtype=np.int64)
    t[1:, 1:] = np.cumsum(np.cumsum(union, axis=0), axis=1)
    sums = t[side:, side:] - t[:-side, side:] - t[side:, :-side] + t[:-side, :-side]
    clear = np.argwhere(sums == 0)
    if clear.size == 0:
        raise ValueError(f"no noise-only square of side {side} fits between the particles")
    return int(clear[0, 0]), int(clear[0, 1])


def noise_from_dict(doc: dict) -> NoiseModel:
    kind = doc.get("kind")
    if kind == "uniform":
        return UniformNoise(half_width=float(doc["half_width"]))
    if kind == "truncated_gaussian":
        return TruncatedGaussianNoise(sigma_raw=float(doc["sigma_raw"]), bound=float(doc["bound"]))
    raise ValueError(f"unknown noise kind {kind!r}")


def scene_from_dict(doc: dict) -> tuple[SceneSpec, NoiseModel]:
    """Build a scene and its noise model from a JSON-style document.

    Expected fields: n, a, b, phi0, phi1, shapes: [{kind, size, row, col}],
    noise: {kind, ...}; optional noise_square: [row, col] (auto-placed at the
    first clear spot when omitted).
    """
    n = int(doc["n"])
    masks = []
    for i, sh in enumerate(doc.get("shapes", [])):
        mask = shape_library(str(sh["kind"]), int(sh["size"]))
        masks.append(place_shape(n, mask, int(sh["row"]), int(sh["col"])))
    phi0 = int(doc["phi0"])
    if "noise_square" in doc:
        r0, c0 = (int(v) for v in doc["noise_square"])
    else:
        r0, c0 = find_clear_square(n, masks, phi0)
    spec = SceneSpec(
        n=n,
        a=float(doc["a"]),
        b=float(doc["b"]),
        particles=tuple(masks),
        noise_square=(r0, c0),
        noise_square_side=phi0,
        min_particle_square=int(doc["phi1"]),
    )
    return spec, noise_from_dict(doc["noise"])


def load_scene(path) -> tuple[SceneSpec, NoiseModel]:
    """Read a scene document from a JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        return scene_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Window-selection probability bound
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoundResult:
    """Raw sum of per-window terms and the same sum clipped at 1."""

    raw_sum: float
    clipped: float


def window_selection_bound(
    s1_list, excess_list, b_minus_a: float, sigma: float, bound_m: float
) -> BoundResult:
    """Upper bound on the probability that some contaminated window is chosen
    over a noise-only one.

    Each window K contributes exp(-C1 s1^2 / (C2 excess + C3 s1)) with
    C1 = 3 (b-a)^2, C2 = 12 sigma^2, C3 = 4 M (b-a), where s1 is the number
    of particle pixels in K and excess the number of pixels of K outside the
    noise-only square. A term with s1 = 0 is taken as exp(0) = 1 (the bound
    is vacuous for windows containing no particle pixels). This is a
    diagnostic for hypothetical configurations, not an estimator.
    """
    s1 = [float(v) for v in s1_list]
    excess = [float(v) for v in excess_list]
    if len(s1) != len(excess):
        raise ValueError(f"list lengths differ: {len(s1)} vs {len(excess)}")
    if any(v < 0 for v in s1) or any(v < 0 for v in excess):
        raise ValueError("s1 and excess values must be >= 0")
    if not b_minus_a > 0:
        raise ValueError(f"b_minus_a must be > 0, got {b_minus_a}")
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if not bound_m > 0:
        raise ValueError(f"bound_m must be > 0, got {bound_m}")
    c1 = 3.0 * b_minus_a ** 2
    c2 = 12.0 * sigma ** 2
    c3 = 4.0 * bound_m * b_minus_a
    total = 0.0
    for s, e in zip(s1, excess):
        if s == 0.0:
            total += 1.0
        else:
            total += math.exp(-c1 * s * s / (c2 * e + c3 * s))
    return BoundResult(raw_sum=total, clipped=min(total, 1.0))


# ---------------------------------------------------------------------------
# Monte Carlo harnesses
# ---------------------------------------------------------------------------

def _fmt6(x: float) -> str:
    return f"{x:.6g}"


@dataclass(frozen=True)
class ConsistencyRow:
    phi0: int
    median_abs_err: float
    q25_abs_err: float
    q75_abs_err: float


@dataclass(frozen=True)
class ConsistencyTable:
    rows: tuple[ConsistencyRow, ...]
    naive_median_abs_err: float
    trials: int

    def to_csv(self) -> str:
        lines = ["phi0,trials,median_abs_err,q25_abs_err,q75_abs_err,naive_median_abs_err"]
        for r in self.rows:
            lines.append(
                f"{r.phi0},{self.trials},{_fmt6(r.median_abs_err)},"
                f"{_fmt6(r.q25_abs_err)},{_fmt6(r.q75_abs_err)},"
                f"{_fmt6(self.naive_median_abs_err)}"
            )
        return "\n".join(lines) + "\n"


def _consistency_trial(args):
    spec, noise, phi0_grid, seed, trial = args
    img, _ = generate_scene(spec, noise, [seed, trial])
    errs = [abs(estimate_lower(img, phi0) - spec.a) for phi0 in phi0_grid]
    return errs, abs(naive_mean(img) - spec.a)


def _run_trials(worker, arg_list, jobs: int):
    if jobs <= 1:
        return [worker(a) for a in arg_list]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, arg_list, chunksize=max(1, len(arg_list) // (4 * jobs))))


def mc_consistency(
    spec: SceneSpec,
    noise: NoiseModel,
    phi0_grid,
    trials: int,
    seed: int,
    jobs: int = 1,
) -> ConsistencyTable:
    """Distribution of the background-estimate error per scan-window side,
    with the whole-image mean as the inconsistent baseline."""
    phi0_grid = [int(p) for p in phi0_grid]
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if not phi0_grid:
        raise ValueError("phi0_grid must not be empty")
    results = _run_trials(
        _consistency_trial,
        [(spec, noise, phi0_grid, seed, t) for t in range(trials)],
        jobs,
    )
    errs = np.array([r[0] for r in results])  # (trials, len(grid))
    naive = np.array([r[1] for r in results])
    rows = tuple(
        ConsistencyRow(
            phi0=phi0,
            median_abs_err=float(np.median(errs[:, i])),
            q25_abs_err=float(np.quantile(errs[:, i], 0.25)),
            q75_abs_err=float(np.quantile(errs[:, i], 0.75)),
        )
        for i, phi0 in enumerate(phi0_grid)
    )
    return ConsistencyTable(
        rows=rows, naive_median_abs_err=float(np.median(naive)), trials=trials
    )


@dataclass(frozen=True)
class DetectionStats:
    """Aggregate detection power and false-alarm behavior over seeded trials."""

    trials: int
    n_particles: int
    all_detected_fraction: float
    any_false_fraction: float
    mean_false_clusters: float

    def to_csv(self) -> str:
        header = (
            "trials,n_particles,all_detected_fraction,"
            "any_false_fraction,mean_false_clusters"
        )
        row = (
            f"{self.trials},{self.n_particles},{_fmt6(self.all_detected_fraction)},"
            f"{_fmt6(self.any_false_fraction)},{_fmt6(self.mean_false_clusters)}"
        )
        return header + "\n" + row + "\n"


def _detection_trial(args):
    spec, noise, params, seed, trial, theta = args
    img, masks = generate_scene(spec, noise, [seed, trial])
    if theta is None:
        report = run_detection_artifacts(img, params).report
        summary = match_detections(report, masks)
        return summary.all_detected, summary.false_clusters
    pre = preprocess(img, params)
    binary = binarize(pre, theta)
    if not masks:
        # every kept cluster is false; sizes suffice
        sizes = cluster_sizes(binary)
        return True, int((sizes >= params.min_cluster_pixels).sum())
    kept = filter_clusters(black_clusters(binary), params.min_cluster_pixels)
    summary = match_clusters(kept, (pre.width, pre.height), masks)
    return summary.all_detected, summary.false_clusters


def mc_detection(
    spec: SceneSpec,
    noise: NoiseModel,
    params: DetectParams,
    trials: int,
    seed: int,
    theta: float | None = None,
    jobs: int = 1,
) -> DetectionStats:
    """Detection power (all particles hit) and false-cluster behavior.

    With theta=None each trial runs the full pipeline including the estimate
    step; passing a fixed theta skips estimation and thresholds directly,
    which is how pure-noise false-alarm experiments pin the black fraction.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    results = _run_trials(
        _detection_trial,
        [(spec, noise, params, seed, t, theta) for t in range(trials)],
        jobs,
    )
    all_detected = np.array([r[0] for r in results], dtype=bool)
    false_counts = np.array([r[1] for r in results], dtype=np.int64)
    n_particles = len(spec.particles)
    return DetectionStats(
        trials=trials,
        n_particles=n_particles,
        all_detected_fraction=float(np.mean(all_detected)) if n_particles else float("nan"),
        any_false_fraction=float(np.mean(false_counts > 0)),
        mean_false_clusters=float(np.mean(false_counts)),
    )


@dataclass(frozen=True)
class PhaseRow:
    p: float
    trial: int
    largest_cluster: int
    largest_fraction: float
    n_clusters: int


@dataclass(frozen=True)
class PhaseTable:
    n: int
    rows: tuple[PhaseRow, ...]

    def to_csv(self) -> str:
        lines = ["p,trial,largest_cluster,largest_fraction,n_clusters"]
        for r in self.rows:
            lines.append(
                f"{_fmt6(r.p)},{r.trial},{r.largest_cluster},"
                f"{_fmt6(r.largest_fraction)},{r.n_clusters}"
            )
        return "\n".join(lines) + "\n"


def percolation_phase(n: int, p_values, trials: int, seed: int) -> PhaseTable:
    """Largest-cluster statistics of seeded Bernoulli fields, one row per trial.

    The contrast between p below and above 1/2 is the mechanism that keeps
    noise clusters small while particle interiors grow a giant cluster.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rows = []
    sites = n * n
    for pi, p in enumerate(p_values):
        for t in range(trials):
            field = bernoulli_field(n, n, float(p), [seed, pi, t])
            sizes = cluster_sizes(field)
            largest = int(sizes.max()) if sizes.size else 0
            rows.append(
                PhaseRow(
                    p=float(p),
                    trial=t,
                    largest_cluster=largest,
                    largest_fraction=largest / sites,
                    n_clusters=int(sizes.size),
                )
            )
    return PhaseTable(n=n, rows=tuple(rows))
