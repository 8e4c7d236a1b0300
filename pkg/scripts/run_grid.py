#!/usr/bin/env python3
"""Planner x budget grid on a bundled model; writes one summary row per cell."""

import argparse
import csv
import sys

from ckptplan.cli import parse_bytes
from ckptplan.harness import PLANNERS, ExperimentConfig, WorkloadSpec, compare, sample_workload
from ckptplan.model import load_model
from ckptplan.scheduler import SchedulerConfig

KEYS = ["planner", "budget_bytes", "total_time_ms", "recompute_ms", "overhead_iters",
        "planner_invocations", "evictions", "max_peak_bytes", "oom_risk_count"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", default="bert12")
    ap.add_argument("--budgets", default="2.4G,2.6G,2.8G,3G,3.5G")
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", type=argparse.FileType("w"), default=sys.stdout)
    args = ap.parse_args()

    model = load_model(args.model)
    sizes = sample_workload(WorkloadSpec.for_model(model, args.batch, iterations=args.iters, seed=args.seed))
    budgets = [parse_bytes(b) for b in args.budgets.split(",")]
    base = ExperimentConfig(scheduler=SchedulerConfig(budgets[0]))
    w = csv.DictWriter(args.out, KEYS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in compare(model, sizes, list(PLANNERS), budgets, base):
        w.writerow(row)


if __name__ == "__main__":
    main()
