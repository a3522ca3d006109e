"""Command-line entry point: ``ensemble-da {truth,run,bench}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import harness
from .filter import ConfigError

log = logging.getLogger("ensemble_da")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


def _threads() -> int:
    raw = os.environ.get("ENSEMBLE_DA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"ENSEMBLE_DA_THREADS must be an integer, got {raw!r}")


def _config_from_args(args, variant=None) -> harness.ExperimentConfig:
    overrides = dict(preset=args.preset, seed=args.seed, variant=variant or args.variant,
                     cycles=args.cycles,
                     allow_misspecified=True if args.allow_misspecified else None)
    if args.config:
        return harness.load_config(args.config, **overrides)
    return harness.build_config({}, **overrides)


def _write(path: Path, text: str):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as err:
        raise OSError(f"cannot write {path}: {err}") from err


def cmd_truth(args) -> int:
    # the filter variant is irrelevant here; supply one so validation passes
    system = _config_from_args(args, variant=args.variant or "cg").system
    truth = harness.make_truth(system)
    header = ["time"] + [f"x{i + 1}" for i in range(system.dimension)]
    lines = [",".join(header)]
    for t, x in zip(truth.times, truth.states):
        lines.append(",".join([repr(float(t))] + [repr(float(v)) for v in x]))
    text = "\n".join(lines) + "\n"
    if args.out:
        _write(Path(args.out) / "truth.csv", text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    report = harness.run_experiment(cfg)
    out = Path(args.out) if args.out else None
    csv_path = Path(cfg.output.csv) if cfg.output.csv else (out / "metrics.csv" if out else None)
    summary_path = (Path(cfg.output.summary) if cfg.output.summary
                    else (out / "summary.txt" if out else None))
    if csv_path:
        harness.emit_csv(report, csv_path)
    table = harness.emit_summary([report])
    if summary_path:
        _write(summary_path, table)
        _write(summary_path.with_suffix(".csv"), harness.summary_csv([report]))
    if out:
        meta = {"status": report.status_label, "message": report.message,
                "provenance": report.provenance, "config": report.config.to_dict()}
        _write(out / "report.json", json.dumps(meta, indent=2, default=str) + "\n")
    sys.stdout.write(table)
    if not report.completed:
        log.warning("run diverged at cycle %s: %s", report.diverged_at, report.message)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_bench(args) -> int:
    seeds = [args.seed + i for i in range(args.seeds)]
    reports = []
    for table in args.tables:
        cfgs = harness.table_configs(table, seeds, args.cycles, args.allow_misspecified,
                                     args.variants)
        for cfg in cfgs:
            log.info("table %s: %s %s seed=%d", table, cfg.preset, cfg.filter.variant,
                     cfg.seed)
            rep = harness.run_experiment(cfg)
            reports.append(rep)
            if args.out:
                name = f"{cfg.preset}_{cfg.filter.variant}_seed{cfg.seed}.csv"
                harness.emit_csv(rep, Path(args.out) / "runs" / name)
    table_text = harness.emit_summary(reports)
    if args.out:
        _write(Path(args.out) / "summary.txt", table_text)
        _write(Path(args.out) / "summary.csv", harness.summary_csv(reports))
    sys.stdout.write(table_text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ensemble-da", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI experiment config")
        p.add_argument("--preset", choices=sorted(harness.PRESETS))
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--variant", choices=("vanilla", "cg", "ns"))
        p.add_argument("--cycles", type=int, default=None,
                       help="override the number of assimilation cycles")
        p.add_argument("--out", help="output directory")
        p.add_argument("--allow-misspecified", action="store_true",
                       help="permit vanilla EnKF with nonlinear maps or non-Gaussian noise")

    p = sub.add_parser("truth", help="emit a spun-up Lorenz-96 trajectory as CSV")
    common(p)
    p.set_defaults(func=cmd_truth)

    p = sub.add_parser("run", help="run one experiment")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("bench", help="sweep the benchmark tables across seeds")
    common(p)
    p.add_argument("--tables", nargs="+", default=["1", "3"], choices=sorted(harness.TABLES))
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.add_argument("--variants", nargs="+", choices=("vanilla", "cg", "ns"))
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "bench" and args.seed is None:
        args.seed = 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with threadpool_limits(limits=_threads()), np.errstate(over="ignore", invalid="ignore"):
            return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
