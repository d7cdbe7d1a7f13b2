"""Command line front end.

Every computation in the package is exposed as a subcommand with a
fully resolved, reproducible configuration echoed into each output
header.  Exit codes are stable: 0 success, 2 usage error, 3 numerical
or domain abort, 4 opt-in assertion failure.

The default seed can be overridden with the MISOBC_SEED environment
variable (decimal or 0x-prefixed hex).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from . import capacity, regions, scheme
from .capacity import MCConfig, PowerGrid, _fmt
from .core import DomainError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_ASSERT = 4

SEED_ENV = "MISOBC_SEED"


class UsageError(Exception):
    """Flag combination that the parser alone cannot reject."""


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return capacity.DEFAULT_SEED
    try:
        return int(raw, 0)
    except ValueError as err:
        raise ValueError(f"{SEED_ENV} must be an integer, got {raw!r}") from err


def _parse_seed(text: str) -> int:
    return int(text, 0)


@contextmanager
def _open_out(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fp:
            yield fp


def _config_dict(args, fields) -> dict:
    cfg = {"subcommand": args.command}
    for name in fields:
        cfg[name] = getattr(args, name)
    return cfg


def _echo_line(cfg: dict) -> str:
    return "# config: " + json.dumps(cfg, sort_keys=True) + "\n"


def _write_json(fp, payload: dict) -> None:
    json.dump(payload, fp, sort_keys=True, indent=2)
    fp.write("\n")


def _grid_from(args) -> PowerGrid:
    if args.power is not None:
        return PowerGrid.single(args.power)
    return PowerGrid.default(num=args.grid_points, lo=args.grid_min, hi=args.grid_max)


def _mc_from(args) -> MCConfig:
    return MCConfig(samples=args.samples, seed=args.seed, workers=args.workers)


def _add_mc_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--samples", type=int, default=capacity.DEFAULT_SAMPLES,
                   help="Monte Carlo samples (default 10^6)")
    p.add_argument("--seed", type=_parse_seed, default=_default_seed(),
                   help=f"master seed (default 0x{capacity.DEFAULT_SEED:X}, "
                        f"env {SEED_ENV} overrides)")
    p.add_argument("--workers", type=int, default=1,
                   help="worker count for sample partitioning (default 1)")


def _add_grid_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group()
    group.add_argument("--power", type=float, default=None,
                       help="single transmit power instead of a grid")
    group.add_argument("--grid-points", type=int, default=50,
                       help="number of log-spaced grid points (default 50)")
    p.add_argument("--grid-min", type=float, default=1e-2,
                   help="grid lower endpoint (default 1e-2)")
    p.add_argument("--grid-max", type=float, default=1e4,
                   help="grid upper endpoint (default 1e4)")


def _add_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--format", choices=("csv", "json"), default="csv",
                   help="output format (default csv)")
    p.add_argument("--output", default=None,
                   help="output path (default stdout)")


def cmd_capacity(args) -> int:
    cfg = _config_dict(args, ("quantity", "distortion", "power", "grid_min",
                              "grid_max", "grid_points", "samples", "seed",
                              "workers", "format"))
    if args.quantity == "c21" and args.distortion is not None:
        raise UsageError("c21 takes no --distortion")
    if args.quantity == "c22d" and args.distortion is None:
        raise UsageError("c22d needs --distortion")
    table = capacity.sweep(args.quantity, _grid_from(args), _mc_from(args),
                           distortion=args.distortion)
    with _open_out(args.output) as fp:
        if args.format == "csv":
            fp.write(_echo_line(cfg))
            table.to_csv(fp)
        else:
            _write_json(fp, {"config": cfg, "rows": table.to_json()})
    return EXIT_OK


def cmd_rq(args) -> int:
    cfg = _config_dict(args, ("distortion", "power", "grid_min", "grid_max",
                              "grid_points", "samples", "seed", "workers",
                              "format", "assert_le_one"))
    table = capacity.ratio_sweep(args.distortion, _grid_from(args), _mc_from(args))
    with _open_out(args.output) as fp:
        if args.format == "csv":
            fp.write(_echo_line(cfg))
            table.to_csv(fp)
        else:
            _write_json(fp, {"config": cfg, "rows": table.to_json()})
    if args.assert_le_one:
        bad = [r for r in table.rows if r.ratio > 1.0 + 3.0 * r.ratio_stderr]
        if bad:
            for r in bad:
                print(
                    f"assertion failed: ratio {r.ratio:.6g} > 1 + 3*stderr "
                    f"({r.ratio_stderr:.3g}) at P = {r.power:.6g}",
                    file=sys.stderr,
                )
            return EXIT_ASSERT
    return EXIT_OK


def cmd_region(args) -> int:
    cfg = _config_dict(args, ("power", "distortion", "samples", "seed",
                              "workers", "output_dir"))
    mc = _mc_from(args)
    c21e = capacity.c21(args.power, mc)
    c22de = capacity.c22d(args.power, args.distortion, mc)
    outer = regions.outer_region(c21e.value)
    inner = regions.achievable_region(c21e.value, c22de.value)
    corners = regions.corner_points(inner)

    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    targets = {
        "outer_vertices.csv": lambda fp: regions.write_vertices_csv(outer, fp),
        "achievable_vertices.csv": lambda fp: regions.write_vertices_csv(inner, fp),
        "corners.csv": lambda fp: regions.write_corners_csv(corners, fp),
    }
    for name, writer in targets.items():
        with open(outdir / name, "w", encoding="utf-8", newline="\n") as fp:
            fp.write(_echo_line(cfg))
            writer(fp)
    print(f"c21 = {_fmt(c21e.value)} (stderr {_fmt(c21e.stderr)})")
    print(f"c22d = {_fmt(c22de.value)} (stderr {_fmt(c22de.stderr)})")
    sx, sy = corners.symmetric
    print(f"symmetric corner A = ({_fmt(sx)}, {_fmt(sy)})")
    for name in targets:
        print(f"wrote {outdir / name}")
    return EXIT_OK


def cmd_gap(args) -> int:
    cfg = _config_dict(args, ("distortion", "power", "grid_min", "grid_max",
                              "grid_points", "samples", "seed", "workers",
                              "format", "assert_theorem",
                              "allow_small_distortion"))
    report = regions.gap_sweep(
        args.distortion,
        _grid_from(args),
        _mc_from(args),
        allow_small_distortion=args.allow_small_distortion,
    )
    top = report.max_row()
    with _open_out(args.output) as fp:
        if args.format == "csv":
            fp.write(_echo_line(cfg))
            report.to_csv(fp)
            fp.write(f"# max_tau: P={_fmt(top.power)} tau={_fmt(top.tau)} "
                     f"tau_stderr={_fmt(top.tau_stderr)}\n")
        else:
            _write_json(fp, {
                "config": cfg,
                "rows": report.to_json(),
                "max_tau": {
                    "P": capacity._round12(top.power),
                    "tau": capacity._round12(top.tau),
                    "tau_stderr": capacity._round12(top.tau_stderr),
                },
            })
    if args.assert_theorem:
        bad = [r for r in report.rows
               if r.tau > regions.GAP_BOUND + 3.0 * r.tau_stderr]
        if bad:
            for r in bad:
                print(
                    f"assertion failed: tau {r.tau:.6g} > {regions.GAP_BOUND} "
                    f"+ 3*stderr ({r.tau_stderr:.3g}) at P = {r.power:.6g}",
                    file=sys.stderr,
                )
            return EXIT_ASSERT
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config_dict(args, ("n", "power", "distortion", "epsilon", "delta",
                              "samples", "seed", "assert_stats"))
    run_cfg = scheme.SchemeConfig(
        n=args.n,
        power=args.power,
        distortion=args.distortion,
        epsilon=args.epsilon,
        delta=args.delta,
        seed=args.seed,
    )
    transcript = scheme.run_scheme(run_cfg, ref_mc=MCConfig(samples=args.samples,
                                                            seed=args.seed))
    report = scheme.summary(transcript)
    with _open_out(args.output) as fp:
        _write_json(fp, {"config": cfg, "report": report})
    if args.dump is not None:
        with open(args.dump, "wb") as fp:
            scheme.dump_transcript(transcript, fp)
    if args.assert_stats:
        problems = scheme.check_stats(transcript)
        if problems:
            for line in problems:
                print(f"assertion failed: {line}", file=sys.stderr)
            return EXIT_ASSERT
    return EXIT_OK


def _rd_variances(args):
    if args.const_sigma2 is not None:
        return [args.const_sigma2]
    return [float(tok) for tok in args.sigma2_list.split(",") if tok.strip()]


def cmd_rd(args) -> int:
    cfg = _config_dict(args, ("mode", "budget", "const_sigma2", "sigma2_list",
                              "sigx2", "sigu2", "gain_const", "gain_rayleigh",
                              "samples", "seed", "workers", "format"))
    if args.mode in ("waterfill", "suboptimal"):
        if args.const_sigma2 is None and args.sigma2_list is None:
            raise UsageError("waterfill/suboptimal need --const-sigma2 or --sigma2-list")
        variances = _rd_variances(args)
        fn = capacity.rd_reverse_waterfill if args.mode == "waterfill" \
            else capacity.rd_suboptimal
        rate = fn(variances, args.budget)
    else:
        if args.sigx2 is None or args.sigu2 is None:
            raise UsageError("wyner mode needs --sigx2 and --sigu2")
        if args.gain_const is None and not args.gain_rayleigh:
            raise UsageError("wyner mode needs --gain-const or --gain-rayleigh")
        sampler = (capacity.constant_gain(args.gain_const)
                   if args.gain_const is not None else capacity.rayleigh_gain())
        rate = capacity.ergodic_wyner_rate(args.sigx2, args.sigu2, args.budget,
                                           sampler, _mc_from(args))
    with _open_out(args.output) as fp:
        if args.format == "csv":
            fp.write(_echo_line(cfg))
            fp.write(_fmt(rate) + "\n")
        else:
            _write_json(fp, {"config": cfg, "rate": capacity._round12(rate)})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="misobc",
        description="Rate and simulation toolkit for the two-user broadcast "
                    "channel with delayed transmitter CSI.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("capacity", help="sweep c21 or c22d over transmit power")
    p.add_argument("--quantity", choices=("c21", "c22d"), required=True)
    p.add_argument("--distortion", type=float, default=None,
                   help="quantization distortion D (c22d only)")
    _add_grid_flags(p)
    _add_mc_flags(p)
    _add_output_flags(p)
    p.set_defaults(func=cmd_capacity)

    p = sub.add_parser("rq", help="sweep the forwarding rate and its ratio to c21")
    p.add_argument("--distortion", type=float, default=4.0,
                   help="quantization distortion D (default 4)")
    p.add_argument("--assert-le-one", action="store_true",
                   help="exit 4 unless ratio <= 1 + 3*stderr everywhere")
    _add_grid_flags(p)
    _add_mc_flags(p)
    _add_output_flags(p)
    p.set_defaults(func=cmd_rq)

    p = sub.add_parser("region", help="emit outer/achievable vertices and corners")
    p.add_argument("--power", type=float, required=True)
    p.add_argument("--distortion", type=float, default=4.0)
    p.add_argument("--output-dir", default=".",
                   help="directory for the three CSV files (default .)")
    _add_mc_flags(p)
    p.set_defaults(func=cmd_region)

    p = sub.add_parser("gap", help="per-user gap between outer and achievable regions")
    p.add_argument("--distortion", type=float, default=4.0)
    p.add_argument("--assert-theorem", action="store_true",
                   help=f"exit 4 unless max tau <= {regions.GAP_BOUND} + 3*stderr")
    p.add_argument("--allow-small-distortion", action="store_true",
                   help="permit D below the certified value 4")
    _add_grid_flags(p)
    _add_mc_flags(p)
    _add_output_flags(p)
    p.set_defaults(func=cmd_gap)

    p = sub.add_parser("simulate", help="run the three-phase scheme end to end")
    p.add_argument("--n", type=int, required=True,
                   help=f"blocks per phase (1..{scheme.MAX_BLOCKS})")
    p.add_argument("--power", type=float, required=True)
    p.add_argument("--distortion", type=float, default=4.0)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--samples", type=int, default=capacity.DEFAULT_SAMPLES,
                   help="samples for the reference capacity estimates")
    p.add_argument("--seed", type=_parse_seed, default=_default_seed())
    p.add_argument("--assert-stats", action="store_true",
                   help="exit 4 if noise/correlation invariants fail")
    p.add_argument("--dump", default=None,
                   help="optional binary transcript dump path")
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("rd", help="scalar rate-distortion helpers")
    p.add_argument("--mode", choices=("waterfill", "suboptimal", "wyner"),
                   required=True)
    p.add_argument("--budget", type=float, required=True,
                   help="average distortion budget D")
    p.add_argument("--const-sigma2", type=float, default=None,
                   help="single source variance")
    p.add_argument("--sigma2-list", default=None,
                   help="comma-separated source variances")
    p.add_argument("--sigx2", type=float, default=None,
                   help="wyner: source variance")
    p.add_argument("--sigu2", type=float, default=None,
                   help="wyner: side-information noise variance")
    p.add_argument("--gain-const", type=float, default=None,
                   help="wyner: constant side-information gain")
    p.add_argument("--gain-rayleigh", action="store_true",
                   help="wyner: |CN(0,1)| random gain")
    _add_mc_flags(p)
    _add_output_flags(p)
    p.set_defaults(func=cmd_rd)

    return parser


def main(argv=None) -> int:
    try:
        parser = build_parser()
    except ValueError as err:
        # a malformed MISOBC_SEED surfaces while defaults are resolved
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except DomainError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
