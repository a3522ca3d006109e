"""Desk-scale sweep of the benchmark tables.

Runs every (preset, variant) row of the requested tables over a few seeds and
prints the mean row per variant. Long-run presets are shortened with --cycles.

    python scripts/reproduce_tables.py --tables 1 3 --seeds 3 --cycles 1000
"""
import argparse
import time
from collections import defaultdict

import numpy as np
from threadpoolctl import threadpool_limits

from ensemble_da import harness


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--tables", nargs="+", default=["1", "3"], choices=sorted(harness.TABLES))
    parser.add_argument("--seeds", type=int, default=3)
    parser.add_argument("--cycles", type=int, default=1000,
                        help="cap on cycles for each run (table 1 presets use 100)")
    parser.add_argument("--allow-misspecified", action="store_true")
    args = parser.parse_args()

    groups = defaultdict(list)
    with threadpool_limits(limits=1):
        for table in args.tables:
            for cfg in harness.table_configs(table, range(args.seeds),
                                             allow_misspecified=args.allow_misspecified):
                cycles = min(cfg.system.cycles, args.cycles)
                cfg = harness.build_config({}, cfg.preset, variant=cfg.filter.variant,
                                           seed=cfg.seed, cycles=cycles,
                                           allow_misspecified=args.allow_misspecified)
                start = time.perf_counter()
                report = harness.run_experiment(cfg)
                print(f"table {table} {cfg.preset:22s} {cfg.filter.variant:8s} seed {cfg.seed} "
                      f"{report.status_label:14s} {time.perf_counter() - start:6.1f} s",
                      flush=True)
                groups[(table, cfg.preset, cfg.filter.variant)].append(report)

    print()
    print(f"{'table':5s} {'preset':22s} {'variant':8s} {'done':>5s} "
          f"{'FCRPS':>8s} {'ACRPS':>8s} {'FRMSE':>8s} {'ARMSE':>8s}")
    for (table, preset, variant), reports in groups.items():
        done = [r.summary() for r in reports if r.completed]
        cols = (np.mean([getattr(s, c) for s in done]) if done else float("nan")
                for c in ("fcrps", "acrps", "frmse", "armse"))
        print(f"{table:5s} {preset:22s} {variant:8s} {len(done):2d}/{len(reports):<2d} "
              + " ".join(f"{v:8.4f}" for v in cols))


if __name__ == "__main__":
    main()
