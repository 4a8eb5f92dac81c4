"""Command-line surface: BER sweeps, convergence studies, matched filter
bound curves, and channel-matrix dumps.

Exit codes: 0 on success, 2 for configuration errors, 3 for numerical
failures inside a detector or bound evaluation.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from .bounds import MfbQuery, mfb_closed_form, mfb_monte_carlo
from .core import frame_streams, make_grid, map_bits, NoiseSpec, stream_rng
from .channels import apply_channel
from .detector import DetectorNumericalError, detect
from .harness import (
    ConfigError,
    ExperimentConfig,
    emit_results,
    load_config,
    run_ber_sweep,
    run_convergence_study,
    write_iteration_trace,
    _build_channel,
    _get_constellation,
)
from .precoding import block_partition, commutation_map, precode_channel, precode_vector

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _base_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    if overrides:
        cfg = replace(cfg, **overrides)
    print("resolved config:", json.dumps(cfg.to_canonical_dict()), file=sys.stderr)
    return cfg


def _out_path(cfg, args, default: str) -> str:
    return args.out or cfg.out or default


def _cmd_ber(args) -> int:
    cfg = _base_config(args)
    if args.dump_iterations:
        grid = make_grid(cfg.m, cfg.n, cfg.delta_f)
        const = _get_constellation(cfg.constellation)
        ch_rng, bits_rng, noise_rng = frame_streams(cfg.seed, 0, 0)
        channel = _build_channel(cfg, grid, ch_rng)
        bits = bits_rng.integers(0, 2, size=grid.size * const.bits_per_symbol)
        x = map_bits(bits, const)
        n0 = 10.0 ** (-cfg.snr_db[0] / 10.0)
        y = apply_channel(channel, x, NoiseSpec(n0), noise_rng)
        cmap = commutation_map(grid.m, grid.n)
        system = block_partition(precode_channel(cmap, channel), grid.n, n0)
        report = detect(
            precode_vector(cmap, y),
            system,
            cfg.detector,
            const,
            true_symbols=precode_vector(cmap, x).data,
        )
        write_iteration_trace(report, args.dump_iterations)
        print(f"iteration trace written to {args.dump_iterations}", file=sys.stderr)

    def progress(idx, snr, frames, errors):
        print(f"snr {snr:g} dB: {frames} frames, errors {errors}", file=sys.stderr)

    curves = run_ber_sweep(cfg, threads=args.threads, progress=progress)
    path = _out_path(cfg, args, "ber.csv" if args.format == "csv" else "ber.json")
    emit_results(curves, path, args.format)
    print(f"results written to {path}", file=sys.stderr)
    return EXIT_OK


def _cmd_converge(args) -> int:
    cfg = _base_config(args)
    budgets = None
    if args.budgets:
        budgets = [int(b) for b in args.budgets.split(",") if b.strip()]
    report = run_convergence_study(
        cfg, iteration_budgets=budgets, threads=args.threads, cdf_snr_db=args.cdf_snr_db
    )
    path = _out_path(cfg, args, "converge.csv" if args.format == "csv" else "converge.json")
    emit_results(report, path, args.format)
    print(f"results written to {path}", file=sys.stderr)
    return EXIT_OK


def _cmd_mfb(args) -> int:
    snrs_db = np.arange(args.snr_db_start, args.snr_db_stop + 1e-9, args.snr_db_step)
    rows = []
    rng = stream_rng(args.seed if args.seed is not None else 1, 77)
    for snr_db in snrs_db:
        snr = 10.0 ** (snr_db / 10.0)
        if args.method == "closed":
            ber, stderr = mfb_closed_form(args.p, snr), 0.0
        else:
            from .core import qpsk_constellation

            res = mfb_monte_carlo(
                MfbQuery(p=args.p, snr=snr, trials=args.trials),
                qpsk_constellation(),
                rng,
                literal_gain=args.literal_eq51,
            )
            ber, stderr = res["ber"], res["stderr"]
        rows.append((float(snr_db), ber, stderr))
    path = args.out or ("mfb.csv" if args.format == "csv" else "mfb.json")
    if args.format == "json":
        with open(path, "w") as fh:
            json.dump(
                [{"snr_db": s, "ber": b, "stderr": e} for s, b, e in rows], fh, indent=2
            )
            fh.write("\n")
    else:
        with open(path, "w") as fh:
            fh.write("snr_db,ber,stderr\n")
            for s, b, e in rows:
                fh.write(f"{s:g},{b:.6e},{e:.6e}\n")
    print(f"results written to {path}", file=sys.stderr)
    return EXIT_OK


def _cmd_channel_dump(args) -> int:
    cfg = _base_config(args)
    grid = make_grid(cfg.m, cfg.n, cfg.delta_f)
    ch_rng = frame_streams(cfg.seed, 0, 0)[0]
    channel = _build_channel(cfg, grid, ch_rng)
    h = channel.h_dd
    if args.precoded or args.mask:
        h = precode_channel(commutation_map(grid.m, grid.n), channel)
    path = _out_path(cfg, args, "channel.csv")
    if args.mask:
        system = block_partition(h, grid.n, 1.0)
        with open(path, "w") as fh:
            fh.write("d,c\n")
            for d, c in system.active_pairs():
                fh.write(f"{d},{c}\n")
    else:
        with open(path, "w") as fh:
            fh.write("row,col,re,im\n")
            rows, cols = np.nonzero(np.abs(h) >= 1e-12)
            for r, c in zip(rows, cols):
                v = h[r, c]
                fh.write(f"{r},{c},{v.real:.12e},{v.imag:.12e}\n")
    print(f"channel dump written to {path}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otfshybrid",
        description="OTFS link-level simulator with commutation-precoded hybrid detection",
    )
    parser.add_argument("--config", help="JSON experiment config (defaults otherwise)")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--threads", type=int, default=1, help="worker processes")
    parser.add_argument("--out", help="output path")
    parser.add_argument("--format", choices=("csv", "json"), default="csv")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ber = sub.add_parser("ber", help="Monte Carlo BER sweep")
    p_ber.add_argument(
        "--dump-iterations",
        metavar="PATH",
        help="also write the per-iteration eta/MSE trace of the first frame",
    )
    p_ber.set_defaults(fn=_cmd_ber)

    p_conv = sub.add_parser("converge", help="iteration-count and message-MSE study")
    p_conv.add_argument("--budgets", help="comma-separated iteration budgets for the MSE CDF")
    p_conv.add_argument("--cdf-snr-db", type=float, help="SNR for the CDF study")
    p_conv.set_defaults(fn=_cmd_converge)

    p_mfb = sub.add_parser("mfb", help="matched filter bound curve")
    p_mfb.add_argument("--p", type=int, required=True, help="number of paths")
    p_mfb.add_argument("--snr-db-start", type=float, default=0.0)
    p_mfb.add_argument("--snr-db-stop", type=float, default=20.0)
    p_mfb.add_argument("--snr-db-step", type=float, default=2.0)
    p_mfb.add_argument("--method", choices=("mc", "closed"), default="closed")
    p_mfb.add_argument("--trials", type=int, default=100_000)
    p_mfb.add_argument(
        "--literal-eq51",
        action="store_true",
        help="apply the combined gain as a plain amplitude instead of sqrt(g)",
    )
    p_mfb.set_defaults(fn=_cmd_mfb)

    p_dump = sub.add_parser("channel-dump", help="write a channel matrix as CSV")
    p_dump.add_argument("--precoded", action="store_true", help="dump the precoded matrix")
    p_dump.add_argument("--mask", action="store_true", help="dump active block positions")
    p_dump.set_defaults(fn=_cmd_channel_dump)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DetectorNumericalError, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
