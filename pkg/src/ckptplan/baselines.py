"""Comparison planners: a static plan sized for the largest input, and a
reactive evict-on-pressure simulator in the style of DTR.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .estimator import EstimatorModel
from .model import ModelSpec
from .scheduler import SchedulerConfig, generate_plan
from .simulator import BACKWARD_FACTOR, CheckpointPlan, Event, MemoryTimeline

DEFAULT_EVICTION_COST_MS = 0.05


def static_max_plan(
    est: EstimatorModel | ModelSpec,
    model: ModelSpec,
    x_max: int | None,
    config: SchedulerConfig,
) -> CheckpointPlan:
    """One plan for the largest input, to be reused for every iteration.

    ``est`` may be a trained estimator or the model itself, in which case
    ground-truth footprints are used.
    """
    if isinstance(est, ModelSpec):
        est = EstimatorModel.from_model(est)
    if x_max is None:
        x_max = model.input_range[1]
    return generate_plan(est, model, x_max, config, iter_index=-1)


@dataclass
class Resident:
    layer_id: int
    position: int
    bytes: int
    forward_ms: float
    last_use: int


@dataclass
class EvictionState:
    resident: dict = field(default_factory=dict)  # position -> Resident
    evicted: set = field(default_factory=set)
    evictions: int = 0
    planning_cost_ms: float = 0.0
    eviction_cost_ms: float = DEFAULT_EVICTION_COST_MS
    oom: bool = False


def dtr_score(entry: Resident, now: int, freed: int) -> float:
    """Staleness times freed bytes per recompute millisecond."""
    return (now - entry.last_use) * freed / entry.forward_ms


def dtr_simulate_iteration(
    model: ModelSpec,
    x: int,
    budget: int,
    eviction_cost_ms: float = DEFAULT_EVICTION_COST_MS,
) -> tuple[MemoryTimeline, EvictionState]:
    """Forward/backward with whole-layer eviction whenever an allocation
    would overflow ``budget``. Nothing carries over between calls.

    Evicting layer ``i`` keeps its replay input ``o[i-1]`` resident, the
    same convention the planned simulator uses. The staleness clock is the
    event index within the iteration.
    """
    a = model.activations(x)
    o = model.boundaries(x)
    f = model.forward_times(x)
    ids = model.layer_ids
    L = len(ids)
    C = model.constant_footprint

    st = EvictionState(eviction_cost_ms=eviction_cost_ms)
    resident = C
    t = 0.0
    recompute = 0.0
    events = [Event("start", -1, resident, t)]
    peak = resident
    clock = 0

    def freed(p):
        return a[p] - (o[p - 1] if p else 0)

    def make_room(need: int, exclude: int):
        nonlocal resident
        while resident + need > budget:
            pool = [e for p, e in st.resident.items() if p != exclude and freed(p) > 0]
            if not pool:
                st.oom = True
                return
            victim = max(pool, key=lambda e: (dtr_score(e, clock, freed(e.position)), -e.position))
            p = victim.position
            del st.resident[p]
            st.evicted.add(p)
            resident -= freed(p)
            st.evictions += 1
            st.planning_cost_ms += eviction_cost_ms
            events.append(Event("evict", ids[p], resident, t))

    for p in range(L):
        clock += 1
        make_room(a[p], p)
        resident += a[p]
        t += f[p]
        peak = max(peak, resident)
        st.resident[p] = Resident(ids[p], p, a[p], f[p], clock)
        events.append(Event("forward", ids[p], resident, t))

    for p in range(L - 1, -1, -1):
        clock += 1
        if p in st.evicted:
            make_room(freed(p), p)
            resident += freed(p)
            t += f[p]
            recompute += f[p]
            peak = max(peak, resident)
            st.evicted.discard(p)
            st.resident[p] = Resident(ids[p], p, a[p], f[p], clock)
            events.append(Event("recompute", ids[p], resident, t))
        st.resident.pop(p, None)
        t += BACKWARD_FACTOR * f[p]
        resident -= a[p]
        events.append(Event("backward", ids[p], resident, t))

    tl = MemoryTimeline(events, peak, t, recompute, C)
    tl.extra["evictions"] = st.evictions
    return tl, st
