"""Bucketed greedy selection of layers to drop, and the plan cache."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

from .estimator import EstimatorModel
from .model import ModelSpec
from .simulator import CheckpointPlan, peak_from_sizes

DEFAULT_RESERVE_FRACTION = 0.08


@dataclass
class SchedulerConfig:
    budget_bytes: int
    reserve_bytes: int | None = None  # None: 8% of the budget
    bucket_tolerance: float = 0.10
    cache_tolerance: float = 0.0
    excess_includes_constant: bool = True
    # keep selecting until the estimated replay peak also fits; off gives the bare greedy
    verify_peak: bool = True

    def __post_init__(self):
        if self.reserve_bytes is None:
            self.reserve_bytes = int(self.budget_bytes * DEFAULT_RESERVE_FRACTION)
        if not 0 <= self.bucket_tolerance < 1:
            raise ValueError("bucket_tolerance must be in [0, 1)")
        if self.cache_tolerance < 0:
            raise ValueError("cache_tolerance must be non-negative")
        if not 0 <= self.reserve_bytes < self.budget_bytes:
            raise ValueError("reserve must be non-negative and below the budget")

    @property
    def target_bytes(self) -> int:
        return self.budget_bytes - self.reserve_bytes


def make_buckets(est_mem: list[int], tolerance: float = 0.10) -> list[list[int]]:
    """Group positions of similar size; buckets largest first, each by position."""
    order = sorted(range(len(est_mem)), key=lambda p: (-est_mem[p], p))
    buckets = []
    i = 0
    while i < len(order):
        head = order[i]
        bucket = [head]
        i += 1
        while i < len(order) and est_mem[order[i]] > est_mem[head] * (1 - tolerance):
            bucket.append(order[i])
            i += 1
        bucket.sort()
        buckets.append(bucket)
    return buckets


def _select(buckets: list[list[int]], est_mem: list[int], excess: float, picked: list[int]) -> float:
    while excess > 0:
        live = [b for b in buckets if b]
        if not live:
            break
        candidates = [b for b in live if max(est_mem[p] for p in b) > excess]
        # no single layer covers the excess: take the biggest, else the smallest that does
        bucket = live[0] if not candidates else candidates[-1]
        pos = bucket.pop(0)
        picked.append(pos)
        excess -= est_mem[pos]
    return excess


def generate_plan(
    est: EstimatorModel,
    model: ModelSpec,
    x: int,
    config: SchedulerConfig,
    iter_index: int | None = None,
) -> CheckpointPlan:
    model.check_input(x)
    est_mem = est.predict_layers(model, x)
    C = model.constant_footprint
    target = config.target_bytes
    buckets = make_buckets(est_mem, config.bucket_tolerance)

    excess = sum(est_mem) + (C if config.excess_includes_constant else 0) - target
    picked: list[int] = []
    excess = _select(buckets, est_mem, excess, picked)
    short = excess > 0

    if config.verify_peak and not short:
        est_out = est.predict_boundaries(model, x)
        mask = [False] * len(est_mem)
        for p in picked:
            mask[p] = True
        while True:
            peak = peak_from_sizes(est_mem, est_out, mask, C)
            if peak <= target:
                break
            before = len(picked)
            _select(buckets, est_mem, peak - target, picked)
            if len(picked) == before:
                short = True
                break
            for p in picked[before:]:
                mask[p] = True

    ids = model.layer_ids
    return CheckpointPlan(
        frozenset(ids[p] for p in picked),
        source_input_size=x,
        generated_at_iter=iter_index,
        insufficient_budget=short,
    )


def estimated_peak(est: EstimatorModel, model: ModelSpec, plan: CheckpointPlan, x: int) -> int:
    mask = [lid in plan.dropped_layers for lid in model.layer_ids]
    return peak_from_sizes(est.predict_layers(model, x), est.predict_boundaries(model, x), mask,
                           model.constant_footprint)


@dataclass
class PlanCache:
    plans: dict[int, CheckpointPlan] = field(default_factory=dict)
    hits: int = 0
    misses: int = 0

    @property
    def invocations(self) -> int:
        return self.misses

    def __len__(self) -> int:
        return len(self.plans)

    def find(self, x: int, tolerance: float) -> tuple[int, CheckpointPlan] | None:
        if x in self.plans:
            return x, self.plans[x]
        if tolerance <= 0:
            return None
        near = [k for k in self.plans if abs(x - k) <= tolerance * k]
        if not near:
            return None
        key = min(near, key=lambda k: (abs(x - k), k))
        return key, self.plans[key]


def lookup_or_plan(
    cache: PlanCache,
    est: EstimatorModel,
    model: ModelSpec,
    x: int,
    config: SchedulerConfig,
    iter_index: int | None = None,
) -> tuple[CheckpointPlan, bool]:
    found = cache.find(x, config.cache_tolerance)
    if found is not None:
        key, plan = found
        if key == x or (
            not plan.insufficient_budget and estimated_peak(est, model, plan, x) <= config.target_bytes
        ):
            cache.hits += 1
            return plan, True
    plan = generate_plan(est, model, x, config, iter_index)
    cache.plans[x] = plan
    cache.misses += 1
    return plan, False


@dataclass
class LatencyProbe:
    median_s: float
    min_s: float
    max_s: float
    stdev_s: float
    repeats: int


def plan_latency_probe(
    est: EstimatorModel, model: ModelSpec, x: int, config: SchedulerConfig, repeats: int = 200
) -> LatencyProbe:
    """Wall-clock cost of one ``predict_total`` plus ``generate_plan``."""
    from .estimator import predict_total

    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        predict_total(est, model, x)
        generate_plan(est, model, x, config)
        samples.append(time.perf_counter() - t0)
    return LatencyProbe(
        statistics.median(samples), min(samples), max(samples),
        statistics.pstdev(samples), repeats,
    )


def predict_latency(est: EstimatorModel, layer_id: int, x: int, calls: int = 10_000) -> float:
    """Mean seconds per ``predict`` call."""
    t0 = time.perf_counter()
    for _ in range(calls):
        est.predict(layer_id, x)
    return (time.perf_counter() - t0) / calls
