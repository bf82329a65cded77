"""Command-line front end for the experiment runners.

Usage:
    python -m debiasing tv1d --lambda 20 --sigma 10 --out out/tv1d
    python -m debiasing tv2d-deconv --lambda-grid 2 4 8 16 --out out/deconv --max-iters 2000
    python -m debiasing nlm --sigma 20 --input barbara.pgm --out out/nlm
    python -m debiasing lasso --lambda 5 --sigma 1 --out out/lasso
    python -m debiasing debias-general --lambda 20 --out out/general
    python -m debiasing tv1d --config run.json --seed 3
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from debiasing.config import KINDS, load_sidecar, spec_from_mapping
from debiasing.errors import DebiasError
from debiasing.harness import run_experiment

DEFAULT_OUT = Path("out")

# CLI destination -> ExperimentSpec field
FLAG_FIELDS = {
    "lam": "lam",
    "sigma": "noise_sigma",
    "seed": "seed",
    "input": "input_path",
    "out": "out_dir",
    "max_iters": "max_iters",
    "tol": "tol",
    "beta": "beta",
    "epsilon": "epsilon",
    "trace": "trace",
    "lambda_grid": "lambda_grid",
    "length": "length",
    "pieces": "pieces",
    "min_piece_len": "min_piece_len",
    "size": "image_size",
    "shapes": "shapes",
    "bandwidth": "blur_bandwidth",
    "period": "texture_period",
    "patch_half": "patch_half",
    "window_half": "window_half",
    "levels": "kernel_levels",
    "nlm_h": "nlm_h",
    "measurements": "measurements",
    "sparsity": "sparsity",
    "max_dirs": "max_dirs",
    "stop_tol": "stop_tol",
    "bias_report": "bias_report",
}

SUBCOMMAND_HELP = {
    "tv1d": "TV denoising of a piecewise-constant 1D signal",
    "tv2d-deconv": "TV deconvolution of a blurred 2D image",
    "nlm": "nonlocal-means denoising debiased by random Jacobian directions",
    "lasso": "l1 synthesis with a random Gaussian measurement matrix",
    "debias-general": "random-direction debiasing of TV-1D against the joint iteration",
}


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON file with experiment settings (flags override it)")
    common.add_argument("--lambda", dest="lam", type=float, help="Regularization weight")
    common.add_argument("--sigma", type=float, help="Noise standard deviation")
    common.add_argument("--seed", type=int, help="Seed for data generation and noise")
    common.add_argument("--input", type=Path, help="Ground truth: PGM image (2D) or index,value CSV (1D)")
    common.add_argument("--out", type=Path, help=f"Output directory (default {DEFAULT_OUT}/<command>)")
    common.add_argument("--max-iters", type=int, help="Primal-dual iteration cap")
    common.add_argument("--tol", type=float, help="Primal-dual relative-change tolerance")
    common.add_argument("--beta", type=float, help="Support detection margin")
    common.add_argument("--epsilon", type=float, help="Perturbation size for random directions")
    common.add_argument("--max-dirs", type=int, help="Cap on random directions")
    common.add_argument("--stop-tol", type=float, help="Relative change that stops the direction loop")
    common.add_argument("--trace", action="store_true", default=None, help="Write trace.csv")
    common.add_argument(
        "--no-bias-report", dest="bias_report", action="store_false", default=None,
        help="Skip the bias decomposition at the noiseless observation",
    )
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="debiasing", description="Restore signals, remove method bias, and measure the result"
    )
    sub = parser.add_subparsers(dest="kind", required=True, metavar="command")
    common = _common_flags()
    cmds = {kind: sub.add_parser(kind, parents=[common], help=SUBCOMMAND_HELP[kind]) for kind in KINDS}

    for kind in ("tv1d", "debias-general", "lasso"):
        cmds[kind].add_argument("--length", type=int, help="Signal length")
    for kind in ("tv1d", "debias-general"):
        cmds[kind].add_argument("--pieces", type=int, help="Number of constant pieces")
        cmds[kind].add_argument("--min-piece-len", type=int, help="Shortest piece")
    for kind in ("tv2d-deconv", "nlm"):
        cmds[kind].add_argument("--size", type=int, help="Side of the generated image")

    cmds["tv2d-deconv"].add_argument("--shapes", type=int, help="Shapes in the generated cartoon")
    cmds["tv2d-deconv"].add_argument("--bandwidth", type=float, help="Gaussian blur bandwidth in pixels")
    cmds["tv2d-deconv"].add_argument(
        "--lambda-grid", type=float, nargs="+", help="Pick lambda maximizing the biased PSNR over these values"
    )
    cmds["nlm"].add_argument("--period", type=int, help="Tile side of the generated texture")
    cmds["nlm"].add_argument("--patch-half", type=int, help="Patch half-width p")
    cmds["nlm"].add_argument("--window-half", type=int, help="Search window half-width s")
    cmds["nlm"].add_argument("--levels", type=int, help="Kernel quantization levels")
    cmds["nlm"].add_argument("--h", dest="nlm_h", type=float, help="Filtering parameter (default: --sigma)")
    cmds["lasso"].add_argument("--measurements", type=int, help="Number of measurements P")
    cmds["lasso"].add_argument("--sparsity", type=int, help="Nonzeros in the ground truth")
    return parser


def _spec_from_args(args: argparse.Namespace):
    sidecar = load_sidecar(args.config) if args.config else {}
    overrides = {field: getattr(args, dest, None) for dest, field in FLAG_FIELDS.items()}
    if overrides["out_dir"] is None and "out_dir" not in sidecar and "out" not in sidecar:
        overrides["out_dir"] = DEFAULT_OUT / args.kind
    return spec_from_mapping(sidecar, kind=args.kind, **overrides)


def _fmt_db(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.2f}"


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        stream=sys.stdout,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        spec = _spec_from_args(args)
        print(f"Running {spec.kind} (seed {spec.seed}, sigma {spec.noise_sigma:g})")
        result = run_experiment(spec)
    except (DebiasError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1

    for row in result.rows:
        flag = "" if row.converged else "  (not converged)"
        print(f"  • {row.method:<18} PSNR {_fmt_db(row.psnr_db):>7} dB  iters {row.iters}{flag}")
    for key, value in result.summary.items():
        if not isinstance(value, list):
            print(f"    {key}: {value}")
    for path in result.artifacts:
        print(f"→ {path}")
    return 0
