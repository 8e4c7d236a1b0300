#!/usr/bin/env python3
"""Peak memory against input size under Mimose plans, as CSV.

Adds a ``segment`` column numbering the constant-plan runs so the
saw-tooth can be plotted without re-deriving it.
"""

import argparse
import csv
import sys

from ckptplan.cli import parse_bytes
from ckptplan.harness import (
    ExperimentConfig, WorkloadSpec, memory_vs_size, plan_segments, run_experiment, sample_workload,
)
from ckptplan.model import load_model
from ckptplan.scheduler import SchedulerConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", default="bert12")
    ap.add_argument("--budget", type=parse_bytes, default=3_000_000_000)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--out", type=argparse.FileType("w"), default=sys.stdout)
    args = ap.parse_args()

    model = load_model(args.model)
    sizes = sample_workload(WorkloadSpec.for_model(model, args.batch, iterations=args.iters, seed=args.seed))
    cfg = ExperimentConfig(scheduler=SchedulerConfig(args.budget))
    report = run_experiment(model, sizes, "mimose", cfg)

    w = csv.writer(args.out, lineterminator="\n")
    w.writerow(["x", "peak_bytes", "plan_size", "plan_ids", "segment", "target_bytes"])
    for k, seg in enumerate(plan_segments(memory_vs_size(report))):
        for p in seg:
            w.writerow([p["x"], p["peak_bytes"], p["plan_size"], p["plan_ids"], k, cfg.scheduler.target_bytes])


if __name__ == "__main__":
    main()
