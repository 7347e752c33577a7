"""Command line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
failure, 3 a failed acceptance check. Reports are still written before a
failed check turns into exit code 3.
"""

from __future__ import annotations

import argparse
import sys
import warnings

import numpy as np

from . import __version__, fracops
from .errors import AcceptanceFailure, DomainError, NumericalError
from .experiments import (
    EXPERIMENTS, FORMATS, Check, ExperimentConfig, Report, draw_drivers, emit_report,
)
from .sde import _as_point, _euler

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_ACCEPTANCE = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; argparse's own code 2 is reserved here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", default="-", help="output path, '-' for stdout (default)")
    p.add_argument("--format", choices=FORMATS, default="csv")
    p.add_argument("--threads", type=int, default=1, help="worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fracsde", description="fBm-driven SDE toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    top = parser.add_subparsers(dest="group", required=True, parser_class=_Parser)

    fbm = top.add_parser("fbm", help="fractional Brownian motion").add_subparsers(
        dest="command", required=True, parser_class=_Parser)
    _common(fbm.add_parser("sample", help="sample fBm paths"))

    ops = top.add_parser("ops", help="fractional operators").add_subparsers(
        dest="command", required=True, parser_class=_Parser)
    _common(ops.add_parser("selftest", help="operator convergence table"))

    sde = top.add_parser("sde", help="Euler solver").add_subparsers(
        dest="command", required=True, parser_class=_Parser)
    _common(sde.add_parser("solve", help="solve the SDE on sampled drivers"))

    exp = top.add_parser("exp", help="Monte Carlo experiments").add_subparsers(
        dest="command", required=True, parser_class=_Parser)
    for name in EXPERIMENTS:
        _common(exp.add_parser(name, help=f"{name} experiment"))
    return parser


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if args.threads < 1:
        raise DomainError("--threads must be at least 1")
    return cfg


def _path_report(kind, cfg, drivers, series) -> Report:
    # long format: one row per (path, time point)
    t = cfg.grid.points
    columns = ["path", "t"]
    blocks = []
    for label, arr in series:
        columns += [f"{label}_{k + 1}" for k in range(arr.shape[1])]
        blocks.append(arr)
    rows = []
    for i in range(len(drivers)):
        values = np.concatenate([b[i] for b in blocks], axis=0)
        for j, tj in enumerate(t):
            rows.append([drivers.first_index + i, float(tj), *map(float, values[:, j])])
    meta = {"config": cfg.to_dict(), **drivers.manifest()}
    return Report(kind, columns, rows, [], {}, meta)


def _drivers(cfg, threads, default_sampler):
    return draw_drivers(cfg, cfg.paths(1), cfg.sampler or default_sampler, threads)


def cmd_fbm_sample(args, cfg) -> Report:
    drivers = _drivers(cfg, args.threads, "cholesky")
    series = [("BH", drivers.bh)]
    if drivers.w is not None:
        series.insert(0, ("W", drivers.w))
    return _path_report("fbm_sample", cfg, drivers, series)


def cmd_sde_solve(args, cfg) -> Report:
    drivers = _drivers(cfg, args.threads, "cholesky")
    b = cfg.make_drift()
    x = _euler(b, _as_point(cfg.x0, cfg.dim), drivers.bh, cfg.grid)
    return _path_report("sde_solve", cfg, drivers, [("X", x), ("BH", drivers.bh)])


def cmd_ops_selftest(args, cfg) -> Report:
    rows = [list(r) for r in fracops.selftest(cfg.hurst)]
    final = {}
    for name, n, err, order in rows:
        final[name] = (err, order)
    checks = [
        Check("D^a I^a order", bool(final["D^a I^a = id"][1] >= 0.9),
              final["D^a I^a = id"][1], 0.9, "observed order"),
        Check("K_H K_H^-1 error", bool(final["K_H K_H^-1 = id"][0] < 1e-2),
              final["K_H K_H^-1 = id"][0], 1e-2, "max relative error, finest grid"),
        Check("inverse agreement", bool(final["general vs AC inverse"][0] < 5e-2),
              final["general vs AC inverse"][0], 5e-2, "max relative difference, finest grid"),
    ]
    meta = {"config": cfg.to_dict(), "version": __version__}
    return Report("ops_selftest", ["check", "n_steps", "max_error", "observed_order"], rows,
                  checks, {}, meta)


def _dispatch(args):
    cfg = _config(args)
    if args.group == "fbm":
        return cmd_fbm_sample(args, cfg)
    if args.group == "sde":
        return cmd_sde_solve(args, cfg)
    if args.group == "ops":
        return cmd_ops_selftest(args, cfg)
    return EXPERIMENTS[args.command](cfg, threads=args.threads)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            report = _dispatch(args)
        emit_report(report, args.out, args.format)
    except AcceptanceFailure as exc:
        print(f"acceptance failure: {exc}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DomainError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    failed = [c.name for c in report.checks if not c.passed]
    if failed:
        print(f"failed checks: {', '.join(failed)}", file=sys.stderr)
        return EXIT_ACCEPTANCE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
