"""Workload generation and end-to-end experiment runs."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .baselines import DEFAULT_EVICTION_COST_MS, dtr_simulate_iteration, static_max_plan
from .collector import CollectorConfig, CollectorState, collect_iteration, should_collect
from .estimator import EstimatorModel, can_fit, fit
from .model import ModelSpec
from .scheduler import PlanCache, SchedulerConfig, lookup_or_plan, plan_latency_probe
from .simulator import CheckpointPlan, iteration_time, simulate_iteration

PLANNERS = ("mimose", "static-max", "dtr", "none")
DISTRIBUTIONS = ("uniform", "normal", "power-law")


# -- workloads ---------------------------------------------------------------

@dataclass
class WorkloadSpec:
    """Input sizes are drawn in sequence units on ``[low, high]`` and
    multiplied by ``batch_multiplier`` to give element counts."""

    low: int
    high: int
    iterations: int = 2000
    distribution: str = "uniform"
    mu: float | None = None
    sigma: float | None = None
    alpha: float = 1.5
    batch_multiplier: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}")
        if self.low < 1 or self.low > self.high:
            raise ValueError(f"bad size range [{self.low}, {self.high}]")
        if self.iterations < 0 or self.batch_multiplier < 1:
            raise ValueError("iterations must be >= 0 and batch_multiplier >= 1")

    @classmethod
    def for_model(cls, model: ModelSpec, batch_multiplier: int = 1, **kw) -> "WorkloadSpec":
        lo, hi = model.input_range
        return cls(low=-(-lo // batch_multiplier), high=hi // batch_multiplier,
                   batch_multiplier=batch_multiplier, **kw)


def parse_distribution(text: str) -> dict:
    """``uniform`` | ``normal:MU,SIGMA`` | ``power-law:ALPHA``."""
    name, _, args = text.partition(":")
    vals = [float(v) for v in args.split(",")] if args else []
    if name == "uniform" and not vals:
        return {"distribution": "uniform"}
    if name == "normal" and len(vals) == 2:
        return {"distribution": "normal", "mu": vals[0], "sigma": vals[1]}
    if name == "power-law" and len(vals) <= 1:
        return {"distribution": "power-law", **({"alpha": vals[0]} if vals else {})}
    raise ValueError(f"cannot parse distribution {text!r}")


def sample_workload(spec: WorkloadSpec) -> list[int]:
    rng = np.random.default_rng(spec.seed)
    n, lo, hi = spec.iterations, spec.low, spec.high
    if lo == hi:
        seq = np.full(n, lo, dtype=float)
    elif spec.distribution == "uniform":
        seq = rng.integers(lo, hi + 1, size=n).astype(float)
    elif spec.distribution == "normal":
        mu = spec.mu if spec.mu is not None else (lo + hi) / 2
        sigma = spec.sigma if spec.sigma is not None else (hi - lo) / 6
        seq = np.rint(rng.normal(mu, sigma, size=n))
    else:
        # inverse CDF of p(s) ~ s^-alpha on [lo, hi + 1)
        u = rng.random(n)
        a, b, k = float(lo), float(hi + 1), spec.alpha
        if abs(k - 1.0) < 1e-12:
            s = a * (b / a) ** u
        else:
            e = 1.0 - k
            s = (a**e + u * (b**e - a**e)) ** (1.0 / e)
        seq = np.floor(s)
    seq = np.clip(seq, lo, hi).astype(np.int64)
    return [int(v) * spec.batch_multiplier for v in seq]


# -- experiments -------------------------------------------------------------

@dataclass
class ExperimentConfig:
    scheduler: SchedulerConfig
    collector: CollectorConfig = field(default_factory=CollectorConfig)
    order: int = 2
    noise: float = 0.0
    noise_seed: int = 0
    plan_cost_ms: float = 0.3  # modeled estimator+scheduler cost per cache miss
    fit_cost_ms: float = 1.0
    eviction_cost_ms: float = DEFAULT_EVICTION_COST_MS
    measure_latency: bool = False


@dataclass
class Row:
    iter: int
    x: int
    planner: str
    sheltered: bool
    collected: bool
    planned: bool
    cache_hit: bool
    peak_bytes: int
    iteration_ms: float
    plain_ms: float
    recompute_ms: float
    overhead_ms: float
    plan_size: int
    plan_ids: str
    insufficient: bool
    evictions: int


ROW_FIELDS = [f.name for f in fields(Row)]


@dataclass
class SimReport:
    planner: str
    budget_bytes: int
    reserve_bytes: int
    rows: list[Row] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    estimator: EstimatorModel | None = None
    cache: PlanCache | None = None

    def aggregates(self) -> dict:
        rows = self.rows
        n = len(rows)
        plain = sum(r.plain_ms for r in rows) / n if n else 0.0
        overhead = sum(r.overhead_ms for r in rows)
        responsive = [r for r in rows if not r.sheltered]
        return {
            "iterations": n,
            "total_time_ms": sum(r.iteration_ms for r in rows),
            "plain_time_ms": sum(r.plain_ms for r in rows),
            "mean_plain_iteration_ms": plain,
            "recompute_ms": sum(r.recompute_ms for r in rows),
            "mean_peak_bytes": sum(r.peak_bytes for r in rows) / n if n else 0.0,
            "max_peak_bytes": max((r.peak_bytes for r in rows), default=0),
            "planner_invocations": sum(r.planned for r in rows),
            "cache_hits": sum(r.cache_hit for r in rows),
            "cache_keys": len({r.x for r in responsive if r.planned}) if self.planner == "mimose" else None,
            "collector_iterations": sum(r.collected for r in rows),
            "sheltered_iterations": sum(r.sheltered for r in rows),
            "overhead_ms": overhead,
            "overhead_iters": overhead / plain if plain else 0.0,
            "evictions": sum(r.evictions for r in rows),
            "insufficient_iterations": sum(r.insufficient for r in rows),
            "oom_risk_count": sum(r.insufficient or r.peak_bytes > self.budget_bytes for r in rows),
        }

    def summary(self) -> dict:
        return {
            "planner": self.planner,
            "budget_bytes": self.budget_bytes,
            "reserve_bytes": self.reserve_bytes,
            **self.meta,
            **self.aggregates(),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in self.rows:
            d = asdict(r)
            w.writerow([_fmt(d[k]) for k in ROW_FIELDS])
        return buf.getvalue()

    def to_summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True) + "\n"


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def emit_report(report: SimReport, fmt: str = "csv", path: str | Path | None = None) -> str:
    if fmt == "csv":
        text = report.to_csv()
    elif fmt == "summary":
        text = report.to_summary_json()
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def _plan_ids(plan: CheckpointPlan) -> str:
    return ";".join(str(i) for i in sorted(plan.dropped_layers))


def _row(k, x, planner, tl, plain, plan=None, **kw) -> Row:
    plan = plan or CheckpointPlan()
    base = dict(
        iter=k, x=x, planner=planner, sheltered=False, collected=False, planned=False,
        cache_hit=False, peak_bytes=tl.peak_bytes, iteration_ms=tl.iteration_time_ms,
        plain_ms=plain, recompute_ms=tl.recompute_time_ms, overhead_ms=0.0,
        plan_size=len(plan), plan_ids=_plan_ids(plan), insufficient=plan.insufficient_budget,
        evictions=0,
    )
    base.update(kw)
    return Row(**base)


def run_experiment(
    model: ModelSpec,
    workload: list[int] | WorkloadSpec,
    planner: str,
    config: ExperimentConfig,
    estimator: EstimatorModel | None = None,
) -> SimReport:
    """Simulate every iteration of ``workload`` under one planner.

    For ``mimose`` a pre-trained ``estimator`` skips the sheltered phase.
    """
    if planner not in PLANNERS:
        raise ValueError(f"unknown planner {planner!r}")
    sizes = sample_workload(workload) if isinstance(workload, WorkloadSpec) else list(workload)
    for x in sorted(set(sizes)):
        model.check_input(x)
    sc = config.scheduler
    report = SimReport(planner, sc.budget_bytes, sc.reserve_bytes)
    report.meta["model"] = model.name
    plain = {x: iteration_time(model, None, x) for x in set(sizes)}

    if planner == "none":
        for k, x in enumerate(sizes):
            report.rows.append(_row(k, x, planner, simulate_iteration(model, None, x), plain[x]))
    elif planner == "static-max":
        plan = static_max_plan(model, model, model.input_range[1], sc)
        for k, x in enumerate(sizes):
            tl = simulate_iteration(model, plan, x)
            cost = config.plan_cost_ms if k == 0 else 0.0
            report.rows.append(_row(
                k, x, planner, tl, plain[x], plan, planned=k == 0,
                iteration_ms=tl.iteration_time_ms + cost, overhead_ms=cost,
            ))
    elif planner == "dtr":
        for k, x in enumerate(sizes):
            tl, st = dtr_simulate_iteration(model, x, sc.target_bytes, config.eviction_cost_ms)
            report.rows.append(_row(
                k, x, planner, tl, plain[x], planned=st.evictions > 0,
                iteration_ms=tl.iteration_time_ms + st.planning_cost_ms,
                overhead_ms=st.planning_cost_ms, evictions=st.evictions, insufficient=st.oom,
            ))
    else:
        _run_mimose(model, sizes, config, report, plain, estimator)
    return report


def _run_mimose(model, sizes, config, report, plain, est):
    sc = config.scheduler
    cc = config.collector
    state = CollectorState(noise=config.noise, seed=config.noise_seed)
    cache = PlanCache()
    all_layers = CheckpointPlan(frozenset(model.layer_ids))
    window = cc.max_sheltered_iters
    fit_deferred = 0
    fitted_at = None if est is None else -1

    for k, x in enumerate(sizes):
        if est is None:
            # before the estimator exists every iteration runs conservatively;
            # past the window, unseen sizes keep being collected until a fit is possible
            if should_collect(state, x, k, cc) or (k >= window and x not in state.seen_sizes):
                _, tl = collect_iteration(model, state, x)
                row = _row(k, x, "mimose", tl, plain[x], all_layers, sheltered=True, collected=True,
                           insufficient=False)
            else:
                tl = simulate_iteration(model, all_layers, x)
                row = _row(k, x, "mimose", tl, plain[x], all_layers, sheltered=True, insufficient=False)
            row.overhead_ms = row.iteration_ms - plain[x]
            if k + 1 >= window:
                if can_fit(state.samples, config.order):
                    est = fit(state.samples, config.order)
                    fitted_at = k
                    row.iteration_ms += config.fit_cost_ms
                    row.overhead_ms += config.fit_cost_ms
                else:
                    fit_deferred += 1
            report.rows.append(row)
            continue

        if cc.collect_new_sizes_always and should_collect(state, x, k, cc):
            _, tl = collect_iteration(model, state, x)
            row = _row(k, x, "mimose", tl, plain[x], all_layers, sheltered=True, collected=True,
                       insufficient=False)
            row.overhead_ms = row.iteration_ms - plain[x]
            report.rows.append(row)
            continue

        plan, hit = lookup_or_plan(cache, est, model, x, sc, k)
        tl = simulate_iteration(model, plan, x)
        cost = 0.0 if hit else config.plan_cost_ms
        report.rows.append(_row(
            k, x, "mimose", tl, plain[x], plan, planned=not hit, cache_hit=hit,
            iteration_ms=tl.iteration_time_ms + cost, overhead_ms=cost,
        ))

    report.estimator = est
    report.cache = cache
    report.meta["fitted_at_iter"] = fitted_at
    report.meta["fit_deferred_iterations"] = fit_deferred
    report.meta["distinct_cache_keys"] = len(cache)
    if config.measure_latency and est is not None and sizes:
        probe = plan_latency_probe(est, model, max(sizes), sc, repeats=50)
        report.meta["plan_latency_median_ms"] = probe.median_s * 1e3


def compare(
    model: ModelSpec,
    workload: list[int] | WorkloadSpec,
    planners: list[str],
    budgets: list[int],
    base: ExperimentConfig,
) -> list[dict]:
    """Summaries over a planner x budget grid."""
    sizes = sample_workload(workload) if isinstance(workload, WorkloadSpec) else list(workload)
    out = []
    for budget in budgets:
        sc = SchedulerConfig(
            budget_bytes=budget,
            reserve_bytes=None,
            bucket_tolerance=base.scheduler.bucket_tolerance,
            cache_tolerance=base.scheduler.cache_tolerance,
            excess_includes_constant=base.scheduler.excess_includes_constant,
            verify_peak=base.scheduler.verify_peak,
        )
        cfg = ExperimentConfig(**{**base.__dict__, "scheduler": sc})
        for p in planners:
            out.append(run_experiment(model, sizes, p, cfg).summary())
    return out


# -- memory-vs-size export ---------------------------------------------------

def memory_vs_size(report: SimReport, responsive_only: bool = True) -> list[dict]:
    """(x, peak, plan) points, one per distinct (x, plan), sorted by x."""
    seen = {}
    for r in report.rows:
        if responsive_only and r.sheltered:
            continue
        seen.setdefault((r.x, r.plan_ids), {
            "x": r.x, "peak_bytes": r.peak_bytes, "plan_ids": r.plan_ids,
            "plan_size": r.plan_size, "insufficient": r.insufficient,
        })
    return sorted(seen.values(), key=lambda d: (d["x"], d["plan_size"], d["plan_ids"]))


def plan_segments(points: list[dict]) -> list[list[dict]]:
    """Split x-sorted points into maximal runs that share one plan."""
    segs: list[list[dict]] = []
    for p in points:
        if segs and segs[-1][-1]["plan_ids"] == p["plan_ids"]:
            segs[-1].append(p)
        else:
            segs.append([p])
    return segs


def points_to_csv(points: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "peak_bytes", "plan_size", "plan_ids", "insufficient"])
    for p in points:
        w.writerow([p["x"], p["peak_bytes"], p["plan_size"], p["plan_ids"], int(p["insufficient"])])
    return buf.getvalue()

