"""Command-line front end.

Exit codes: 0 success, 1 runtime failure, 2 invalid flags or inputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .analysis import coefficient_covariance, concentration, inverse_snr, offdiagonal_ratio, seriate_covariance
from .dataio import (
    SyntheticSpec, export_results, load_coefficients, load_results, load_tracks,
    save_tracks, synthesize,
)
from .factorize import assemble_measurements
from .ica import IcaConfig
from .model import ValidationError
from .numeric import SolverConfig
from .recovery import form_basis_shapes

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {value}")
    return value


def _non_negative_float(text: str) -> float:
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {text}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def numerical_rank(W: np.ndarray, rtol: float = 1e-10) -> int:
    s = np.linalg.svd(W, compute_uv=False)
    return int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0


def cmd_synth(args) -> int:
    spec = SyntheticSpec(args.frames, args.points, args.modes, noise_std=args.noise, seed=args.seed)
    tracks, truth = synthesize(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_tracks(tracks, out / "tracks.csv")
    with open(out / "ground_truth.json", "w") as fh:
        json.dump(truth.to_json(), fh, indent=2)
        fh.write("\n")
    rank = numerical_rank(assemble_measurements(tracks).W)
    print(f"synthesized I={spec.n_frames} frames, J={spec.n_points} points, K={spec.n_modes} modes, "
          f"noise std {spec.noise_std:g}, seed {spec.seed}")
    print(f"measurement rank: {rank} (model rank K+3 = {spec.n_modes + 3})")
    print(f"wrote {out / 'tracks.csv'} and {out / 'ground_truth.json'}")
    return EXIT_OK


def cmd_factorize(args) -> int:
    tracks = load_tracks(args.input, args.format)
    ica_config = IcaConfig(contrast=args.ica_contrast)
    solver_config = SolverConfig(tol=args.solver_tol)
    result = pipeline.run(tracks, args.k, args.variant, ica_config, solver_config)
    config = {
        "input": str(args.input),
        "k": args.k,
        "variant": args.variant,
        "ica": {"contrast": ica_config.contrast, "tol": ica_config.tol, "max_iters": ica_config.max_iters},
        "solver": {"tol": solver_config.tol, "max_iters": solver_config.max_iters,
                   "num_starts": solver_config.num_starts},
    }
    export_results(result, args.out, config=config, record_timings=args.record_timings)
    print(f"Rank-1-{args.variant.upper()}: I={tracks.n_frames}, J={tracks.n_points}, K={args.k}")
    print(f"inverse SNR: {result.inverse_snr:.6g} %")
    if result.report.rigid_scene:
        print("note: rigid scene, no non-rigid residual")
    unconverged = [i for i, s in enumerate(result.solves) if not (s.converged or s.degenerate)]
    if unconverged:
        print(f"warning: direction solver did not converge for modes {unconverged}")
    for name, ms in result.timings_ms.items():
        print(f"  {name:>12s}: {ms:9.2f} ms")
    print(f"results written to {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    tracks = load_tracks(args.input, args.format)
    bundle = load_results(args.results)
    if bundle.cameras.shape[0] != tracks.n_frames or bundle.B0.shape[1] != tracks.n_points:
        raise ValidationError(
            f"results are for I={bundle.cameras.shape[0]}, J={bundle.B0.shape[1]} but tracks have "
            f"I={tracks.n_frames}, J={tracks.n_points}"
        )
    measurements = assemble_measurements(tracks)
    rigid = bundle.rigid_factor()
    shapes = form_basis_shapes(rigid, bundle.rows, bundle.directions)
    snr = inverse_snr(measurements, rigid, shapes, bundle.alpha)
    print(f"inverse SNR: {snr!r} %")
    reported = bundle.report.get("inverse_snr_percent")
    if reported is not None:
        print(f"reported:    {reported!r} %")
    return EXIT_OK


def cmd_cov(args) -> int:
    alpha = load_coefficients(Path(args.results) / "coefficients.csv")
    if alpha.ndim != 2 or alpha.shape[0] < 2 or alpha.shape[1] < 1:
        raise ValidationError("coefficients.csv needs at least 2 frames and 1 mode")
    C = coefficient_covariance(alpha)
    perm = seriate_covariance(C)
    k = C.shape[0]
    print(f"coefficient covariance ({k}x{k}):")
    with np.printoptions(precision=6, suppress=False, linewidth=160):
        print(C)
    print("seriation order: " + " ".join(str(p) for p in perm))
    print(f"concentration objective: {concentration(C, perm):.9g} "
          f"(natural order {concentration(C, range(k)):.9g})")
    print(f"max off-diagonal / max diagonal: {offdiagonal_ratio(C):.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rank1sfm", description="Non-rigid structure from motion with rank-1 basis shapes."
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic tracks with ground truth")
    p.add_argument("--frames", type=_positive_int, required=True)
    p.add_argument("--points", type=_positive_int, required=True)
    p.add_argument("--modes", type=_positive_int, required=True)
    p.add_argument("--noise", type=_non_negative_float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("factorize", help="run the rank-1 factorization on a track file")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("csv", "matrix"), default=None,
                   help="track format (default: by file extension)")
    p.add_argument("--k", type=_positive_int, required=True, help="number of deformation modes")
    p.add_argument("--variant", choices=("pca", "ica"), default="pca")
    p.add_argument("--out", required=True)
    p.add_argument("--ica-contrast", choices=("logcosh", "cubic"), default="logcosh")
    p.add_argument("--solver-tol", type=_positive_float, default=SolverConfig.tol)
    p.add_argument("--record-timings", action="store_true",
                   help="store runtimes in report.json (makes the file run-dependent)")
    p.set_defaults(func=cmd_factorize)

    p = sub.add_parser("evaluate", help="recompute inverse SNR from exported results")
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=("csv", "matrix"), default=None)
    p.add_argument("--results", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cov", help="coefficient covariance and seriation of exported results")
    p.add_argument("--results", required=True)
    p.set_defaults(func=cmd_cov)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
