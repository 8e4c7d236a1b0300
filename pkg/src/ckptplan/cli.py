"""Command line entry point.

Exit status: 0 on success, 2 when a workload or plan cannot meet the
budget, 1 on any other error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import re
import sys
from pathlib import Path

import yaml

from .collector import CollectorConfig, CollectorState, collect_iteration
from .estimator import EstimatorModel, fit
from .harness import (
    PLANNERS, ExperimentConfig, WorkloadSpec, compare, emit_report, memory_vs_size,
    parse_distribution, points_to_csv, run_experiment, sample_workload,
)
from .model import load_model
from .scheduler import SchedulerConfig, generate_plan
from .simulator import CheckpointPlan, simulate_iteration

log = logging.getLogger("ckptplan")

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2

_UNITS = {"": 1, "k": 10**3, "m": 10**6, "g": 10**9, "t": 10**12,
          "ki": 2**10, "mi": 2**20, "gi": 2**30, "ti": 2**40}


def parse_bytes(text: str) -> int:
    """``3000000000``, ``3G``, ``3GB``, ``2.5GiB``, ``512MiB``."""
    m = re.fullmatch(r"\s*([0-9]*\.?[0-9]+(?:e[0-9]+)?)\s*([kmgt]i?)?b?\s*", str(text), re.I)
    if not m:
        raise argparse.ArgumentTypeError(f"bad byte quantity {text!r}")
    unit = (m.group(2) or "").lower()
    return int(round(float(m.group(1)) * _UNITS[unit]))


def parse_reserve(text: str, budget: int) -> int:
    if text.endswith("%"):
        return int(budget * float(text[:-1]) / 100)
    return parse_bytes(text)


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("true", "1", "yes"):
        return True
    if t in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _ids(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()] if text else []


def _write(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _scheduler(args) -> SchedulerConfig:
    reserve = None if args.reserve is None else parse_reserve(args.reserve, args.budget)
    return SchedulerConfig(
        budget_bytes=args.budget,
        reserve_bytes=reserve,
        cache_tolerance=args.cache_tolerance,
        excess_includes_constant=args.excess_includes_constant,
        verify_peak=not args.no_verify_peak,
    )


def _workload(args, model) -> WorkloadSpec:
    kw = parse_distribution(args.dist)
    spec = WorkloadSpec.for_model(model, batch_multiplier=args.batch, iterations=args.iters, seed=args.seed, **kw)
    if args.low is not None:
        spec.low = args.low
    if args.high is not None:
        spec.high = args.high
    return spec


def _experiment(args) -> ExperimentConfig:
    return ExperimentConfig(
        scheduler=_scheduler(args),
        collector=CollectorConfig(args.sheltered_iters, args.collect_new_sizes_always),
        noise=args.noise,
        noise_seed=args.seed,
    )


def _estimator(args, model) -> EstimatorModel:
    if getattr(args, "load_estimator", None):
        return EstimatorModel.load(args.load_estimator)
    return EstimatorModel.from_model(model)


# -- subcommands -------------------------------------------------------------

def cmd_simulate(args) -> int:
    model = load_model(args.model)
    plan = CheckpointPlan(frozenset(_ids(args.plan)))
    tl = simulate_iteration(model, plan, args.x)
    _write(tl.to_csv(), args.out)
    log.info("peak_bytes=%d iteration_ms=%.6g recompute_ms=%.6g", tl.peak_bytes, tl.iteration_time_ms,
             tl.recompute_time_ms)
    return EXIT_OK


def cmd_plan(args) -> int:
    model = load_model(args.model)
    plan = generate_plan(_estimator(args, model), model, args.x, _scheduler(args))
    doc = {
        "dropped_layers": sorted(plan.dropped_layers),
        "source_input_size": plan.source_input_size,
        "insufficient_budget": plan.insufficient_budget,
        "simulated_peak_bytes": simulate_iteration(model, plan, args.x).peak_bytes,
    }
    _write(yaml.safe_dump(doc, sort_keys=False), args.out)
    return EXIT_INFEASIBLE if plan.insufficient_budget else EXIT_OK


def cmd_fit(args) -> int:
    model = load_model(args.model)
    if args.sizes:
        sizes = _ids(args.sizes)
    else:
        sizes = sample_workload(_workload(args, model))
    state = CollectorState(noise=args.noise, seed=args.seed)
    for x in sizes:
        collect_iteration(model, state, x)
    est = fit(state.samples, args.order)
    if args.samples_out:
        Path(args.samples_out).write_text(state.to_csv())
    text = yaml.safe_dump(est.to_document(), sort_keys=False)
    _write(text, args.dump_estimator or args.out)
    log.info("fitted %d layers from %d distinct sizes, mean training error %.3g%%",
             len(est.fits), state.distinct_sizes(), 100 * est.mean_training_error())
    return EXIT_OK


def cmd_run(args) -> int:
    model = load_model(args.model)
    est = EstimatorModel.load(args.load_estimator) if args.load_estimator else None
    report = run_experiment(model, _workload(args, model), args.planner, _experiment(args), estimator=est)
    _write(emit_report(report, args.format), args.out)
    if args.dump_estimator and report.estimator is not None:
        report.estimator.dump(args.dump_estimator)
    if args.memory_out:
        Path(args.memory_out).write_text(points_to_csv(memory_vs_size(report)))
    agg = report.aggregates()
    log.info("total_time_ms=%.6g oom_risk=%d", agg["total_time_ms"], agg["oom_risk_count"])
    return EXIT_INFEASIBLE if agg["oom_risk_count"] else EXIT_OK


def cmd_compare(args) -> int:
    model = load_model(args.model)
    budgets = [parse_bytes(b) for b in args.budgets.split(",")] if args.budgets else [args.budget]
    if budgets == [None]:
        raise ValueError("compare needs --budget or --budgets")
    args.budget = budgets[0]
    planners = args.planners.split(",")
    for p in planners:
        if p not in PLANNERS:
            raise ValueError(f"unknown planner {p!r}")
    rows = compare(model, _workload(args, model), planners, budgets, _experiment(args))
    if args.format == "summary":
        text = json.dumps(rows, indent=2, sort_keys=True) + "\n"
    else:
        keys = ["planner", "budget_bytes", "total_time_ms", "recompute_ms", "overhead_iters",
                "planner_invocations", "evictions", "max_peak_bytes", "oom_risk_count"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([repr(r[k]) if isinstance(r[k], float) else r[k] for k in keys])
        text = buf.getvalue()
    _write(text, args.out)
    # infeasible only if a checkpointing planner could not respect the budget
    bad = any(r["oom_risk_count"] for r in rows if r["planner"] != "none")
    return EXIT_INFEASIBLE if bad else EXIT_OK


def cmd_gen_workload(args) -> int:
    if args.model:
        spec = _workload(args, load_model(args.model))
    else:
        if args.low is None or args.high is None:
            raise ValueError("gen-workload needs --model or both --low and --high")
        spec = WorkloadSpec(low=args.low, high=args.high, iterations=args.iters, seed=args.seed,
                            batch_multiplier=args.batch, **parse_distribution(args.dist))
    _write("".join(f"{x}\n" for x in sample_workload(spec)), args.out)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ckptplan", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, budget=True, workload=False, budget_required=True):
        sp.add_argument("--model", required=True, help="model file or bundled name (bert12, heterostage)")
        sp.add_argument("--out", help="output path (default stdout)")
        sp.add_argument("--seed", type=int, default=0)
        if budget:
            sp.add_argument("--budget", type=parse_bytes, required=budget_required,
                            help="bytes, or with K/M/G/Gi suffix")
            sp.add_argument("--reserve", help="bytes or percent of budget (default 8%%)")
            sp.add_argument("--cache-tolerance", type=float, default=0.0)
            sp.add_argument("--excess-includes-constant", type=_bool, default=True)
            sp.add_argument("--no-verify-peak", action="store_true",
                            help="skip the estimated-peak check after the greedy pass")
        if workload:
            _workload_args(sp)

    sp = sub.add_parser("simulate", help="replay one iteration and print its timeline")
    common(sp, budget=False)
    sp.add_argument("--x", type=int, required=True)
    sp.add_argument("--plan", default="", help="comma-separated layer ids to drop")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("plan", help="generate one checkpointing plan")
    common(sp)
    sp.add_argument("--x", type=int, required=True)
    sp.add_argument("--load-estimator", help="estimator file; default uses ground truth")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("fit", help="collect samples and fit the estimator")
    common(sp, budget=False, workload=True)
    sp.add_argument("--sizes", help="comma-separated input sizes to collect")
    sp.add_argument("--order", type=int, default=2)
    sp.add_argument("--noise", type=float, default=0.0)
    sp.add_argument("--dump-estimator")
    sp.add_argument("--samples-out")
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("run", help="full experiment under one planner")
    common(sp, workload=True)
    _experiment_args(sp)
    sp.add_argument("--planner", choices=PLANNERS, default="mimose")
    sp.add_argument("--format", choices=("csv", "summary"), default="csv")
    sp.add_argument("--load-estimator")
    sp.add_argument("--dump-estimator")
    sp.add_argument("--memory-out", help="write memory-vs-size points as CSV")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="grid over planners and budgets")
    common(sp, workload=True, budget_required=False)
    _experiment_args(sp)
    sp.add_argument("--budgets", help="comma-separated budgets (overrides --budget)")
    sp.add_argument("--planners", default=",".join(PLANNERS))
    sp.add_argument("--format", choices=("csv", "summary"), default="csv")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("gen-workload", help="print a seeded sequence of input sizes")
    sp.add_argument("--model")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int, default=0)
    _workload_args(sp)
    sp.set_defaults(func=cmd_gen_workload)
    return p


def _workload_args(sp):
    sp.add_argument("--iters", type=int, default=2000)
    sp.add_argument("--dist", default="uniform", help="uniform | normal:MU,SIGMA | power-law:ALPHA")
    sp.add_argument("--batch", type=int, default=1, help="elements per sequence unit")
    sp.add_argument("--low", type=int, help="smallest size in sequence units")
    sp.add_argument("--high", type=int, help="largest size in sequence units")


def _experiment_args(sp):
    sp.add_argument("--noise", type=float, default=0.0, help="relative measurement noise")
    sp.add_argument("--sheltered-iters", type=int, default=10)
    sp.add_argument("--collect-new-sizes-always", action="store_true")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
