"""Command-line front end.

Subcommands cover the detection pipeline (estimate, detect), synthetic data
(synth), the Monte Carlo harnesses (mc-consistency, mc-detection,
percolation-phase), and the window-selection bound evaluator (bound).

Exit codes: 0 success, 1 input or parse errors, 2 degenerate estimates
(background estimate not below particle estimate). Errors go to stderr as
single-line diagnostics; analysis output goes to files or stdout. Identical
invocations on identical inputs produce byte-identical outputs.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .detect import (
    DegenerateEstimatesError,
    DetectParams,
    compute_threshold,
    preprocess,
    report_to_json,
    run_detection_artifacts,
)
from .image import Micrograph
from .io import (
    ImageParseError,
    atomic_write_bytes,
    read_image,
    write_binary_image,
    write_image,
)
from .percolation import BinaryImage
from .scan import estimate_intensities
from .synth import (
    generate_scene,
    load_scene,
    mc_consistency,
    mc_detection,
    percolation_phase,
    window_selection_bound,
)


class _CliError(Exception):
    """Argument-level error; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _CliError(message)


def _fmt6(x: float) -> str:
    return f"{x:.6g}"


def _int_list(text: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _add_params_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline parameters (defaults match the reference "
                             "cryo-EM micrograph workflow)")
    g.add_argument("--phi0", type=int, default=65,
                   help="window side for the background estimate (default: %(default)s)")
    g.add_argument("--phi1", type=int, default=9,
                   help="window side for the particle estimate (default: %(default)s)")
    g.add_argument("--min-cluster", type=int, default=30, dest="min_cluster",
                   help="keep clusters of at least this many pixels (default: %(default)s)")
    g.add_argument("--downsample", type=int, default=2, dest="downsample",
                   help="number of 2x downsampling passes (default: %(default)s)")
    g.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=True,
                   help="rescale to a maximum intensity of 1 before estimating "
                        "(default: on)")


def _params_from_args(args) -> DetectParams:
    return DetectParams(
        phi0=args.phi0,
        phi1=args.phi1,
        min_cluster_pixels=args.min_cluster,
        downsample_passes=args.downsample,
        normalize=args.normalize,
    )


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_estimate(args) -> int:
    img = read_image(args.input, args.format)
    params = _params_from_args(args)
    pre = preprocess(img, params)
    est = estimate_intensities(pre, params.phi0, params.phi1)
    print(f"a_hat {_fmt6(est.a_hat)}")
    print(f"b_hat {_fmt6(est.b_hat)}")
    theta = compute_threshold(est.a_hat, est.b_hat)
    print(f"theta {_fmt6(theta)}")
    return 0


def _cmd_detect(args) -> int:
    img = read_image(args.input, args.format)
    artifacts = run_detection_artifacts(img, _params_from_args(args))
    report = artifacts.report
    doc = report_to_json(report)
    if args.output is None:
        sys.stdout.write(doc)
    else:
        atomic_write_bytes(args.output, doc.encode("utf-8"))
        print(
            f"decision {report.decision.value} clusters_kept {len(report.clusters_kept)} "
            f"clusters_total {report.clusters_total}"
        )
    if args.binary_out is not None:
        write_binary_image(artifacts.binary, args.binary_out)
    if args.filtered_out is not None:
        write_binary_image(artifacts.kept_binary, args.filtered_out)
    return 0


def _cmd_synth(args) -> int:
    spec, noise = load_scene(args.scene)
    img, masks = generate_scene(spec, noise, args.seed)
    if args.out.lower().endswith(".pgm"):
        scaled = Micrograph(img.pixels * args.pgm_maxval)
        write_image(scaled, args.out, format="pgm", maxval=args.pgm_maxval)
    else:
        write_image(img, args.out, format="csv")
    if args.truth_out is not None:
        union = np.zeros((spec.n, spec.n), dtype=bool)
        for m in masks:
            union |= m
        write_binary_image(BinaryImage(union), args.truth_out)
    print(f"wrote {spec.n}x{spec.n} scene with {len(masks)} particle(s) to {args.out}")
    return 0


def _cmd_mc_consistency(args) -> int:
    spec, noise = load_scene(args.scene)
    table = mc_consistency(
        spec, noise, args.phi0_grid, trials=args.trials, seed=args.seed, jobs=args.jobs
    )
    _write_text(args.output, table.to_csv())
    return 0


def _cmd_mc_detection(args) -> int:
    spec, noise = load_scene(args.scene)
    stats = mc_detection(
        spec,
        noise,
        _params_from_args(args),
        trials=args.trials,
        seed=args.seed,
        theta=args.theta,
        jobs=args.jobs,
    )
    _write_text(args.output, stats.to_csv())
    return 0


def _cmd_bound(args) -> int:
    result = window_selection_bound(
        args.s1, args.excess, b_minus_a=args.contrast, sigma=args.sigma, bound_m=args.bound_m
    )
    print(f"raw_sum {_fmt6(result.raw_sum)}")
    print(f"clipped {_fmt6(result.clipped)}")
    return 0


def _cmd_percolation_phase(args) -> int:
    table = percolation_phase(args.n, args.p, trials=args.trials, seed=args.seed)
    _write_text(args.output, table.to_csv())
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="percopick",
        description="Particle detection in noisy 2D images: scan-window intensity "
                    "estimates, midpoint thresholding, and percolation clustering "
                    "on the triangular lattice.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("estimate", help="print a_hat, b_hat, and the midpoint threshold")
    p.add_argument("--in", dest="input", required=True, help="input image (PGM or CSV)")
    p.add_argument("--format", choices=("pgm", "csv"), default=None,
                   help="input format (default: inferred from the suffix)")
    _add_params_flags(p)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("detect", help="run the full pipeline and emit a JSON report")
    p.add_argument("--in", dest="input", required=True, help="input image (PGM or CSV)")
    p.add_argument("--format", choices=("pgm", "csv"), default=None)
    p.add_argument("--out", dest="output", default=None,
                   help="report path (default: print to stdout)")
    p.add_argument("--binary-out", dest="binary_out", default=None,
                   help="write the thresholded image as PGM (maxval 1, 1 = black)")
    p.add_argument("--filtered-out", dest="filtered_out", default=None,
                   help="write the kept-clusters image as PGM (maxval 1, 1 = black)")
    _add_params_flags(p)
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("synth", help="generate a synthetic scene image")
    p.add_argument("--scene", required=True, help="scene description (JSON)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True,
                   help="output image; .csv is exact, .pgm is scaled and quantized")
    p.add_argument("--truth-out", dest="truth_out", default=None,
                   help="write the union of particle masks as PGM (maxval 1)")
    p.add_argument("--pgm-maxval", dest="pgm_maxval", type=int, default=65535,
                   help="scale factor and maxval for .pgm output (default: %(default)s)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("mc-consistency",
                       help="error table of the background estimate over seeded trials")
    p.add_argument("--scene", required=True)
    p.add_argument("--phi0-grid", dest="phi0_grid", type=_int_list, default=[16, 32, 64],
                   help="comma-separated window sides (default: %(default)s)")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.add_argument("--out", dest="output", default=None, help="CSV path (default: stdout)")
    p.set_defaults(func=_cmd_mc_consistency)

    p = sub.add_parser("mc-detection",
                       help="detection power and false-cluster rates over seeded trials")
    p.add_argument("--scene", required=True)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--theta", type=float, default=None,
                   help="fixed threshold (skips the estimate step; for pure-noise "
                        "false-alarm experiments)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", dest="output", default=None, help="CSV path (default: stdout)")
    _add_params_flags(p)
    p.set_defaults(func=_cmd_mc_detection)

    p = sub.add_parser("bound",
                       help="evaluate the window-selection probability bound")
    p.add_argument("--s1", type=_int_list, required=True,
                   help="comma-separated particle-pixel counts per window")
    p.add_argument("--excess", type=_int_list, required=True,
                   help="comma-separated counts of pixels outside the noise-only square")
    p.add_argument("--contrast", type=float, required=True, help="intensity gap b - a")
    p.add_argument("--sigma", type=float, required=True, help="noise standard deviation")
    p.add_argument("--bound-m", dest="bound_m", type=float, required=True,
                   help="almost-sure noise bound M")
    p.set_defaults(func=_cmd_bound)

    p = sub.add_parser("percolation-phase",
                       help="largest-cluster statistics of Bernoulli site fields")
    p.add_argument("--n", type=int, default=256, help="field side (default: %(default)s)")
    p.add_argument("--p", type=_float_list, default=[0.4, 0.6],
                   help="comma-separated site probabilities (default: %(default)s)")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", dest="output", default=None, help="CSV path (default: stdout)")
    p.set_defaults(func=_cmd_percolation_phase)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _CliError as exc:
        print(f"percopick: error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except DegenerateEstimatesError as exc:
        print(f"percopick: error: {exc}", file=sys.stderr)
        return 2
    except (ImageParseError, ValueError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"percopick: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
