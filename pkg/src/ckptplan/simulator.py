"""Deterministic replay of one training iteration under a checkpointing plan.

Accounting per layer ``i`` with activation ``a[i]``, output boundary ``o[i]``
and forward time ``f[i]`` (``o[-1]`` is taken as 0):

forward, i = 0..L-1
    kept     resident += a[i]
    dropped  resident += a[i] (transient), then resident -= a[i] and the
             replay input o[i-1] is retained
backward, i = L-1..0
    dropped  recompute: resident += a[i] - o[i-1]
    all      resident -= a[i]; time += 2 f[i]

Resident memory starts and ends at the model's constant footprint.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

from .model import ModelSpec

BACKWARD_FACTOR = 2.0
MAX_BRUTE_FORCE_LAYERS = 20


class Event(NamedTuple):
    phase: str  # start | forward | forward-drop | recompute | backward | evict
    layer_id: int
    resident_bytes: int
    time_ms: float


@dataclass(frozen=True)
class CheckpointPlan:
    dropped_layers: frozenset[int] = frozenset()
    source_input_size: int | None = None
    generated_at_iter: int | None = None
    insufficient_budget: bool = False

    def __post_init__(self):
        object.__setattr__(self, "dropped_layers", frozenset(self.dropped_layers))

    def __len__(self) -> int:
        return len(self.dropped_layers)

    def __contains__(self, layer_id) -> bool:
        return layer_id in self.dropped_layers

    def validate_for(self, model: ModelSpec) -> None:
        unknown = self.dropped_layers - set(model.layer_ids)
        if unknown:
            raise ValueError(f"plan references unknown layers {sorted(unknown)}")


def as_plan(plan: CheckpointPlan | Iterable[int] | None) -> CheckpointPlan:
    if plan is None:
        return CheckpointPlan()
    if isinstance(plan, CheckpointPlan):
        return plan
    return CheckpointPlan(frozenset(plan))


@dataclass
class MemoryTimeline:
    events: list[Event]
    peak_bytes: int
    iteration_time_ms: float
    recompute_time_ms: float
    constant_footprint: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def final_resident(self) -> int:
        return self.events[-1].resident_bytes

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["phase", "layer_id", "resident_bytes", "time_ms"])
        for e in self.events:
            w.writerow([e.phase, e.layer_id, e.resident_bytes, repr(float(e.time_ms))])
        return buf.getvalue()


def simulate_iteration(
    model: ModelSpec,
    plan: CheckpointPlan | Iterable[int] | None,
    x: int,
    *,
    shuttle: bool = False,
) -> MemoryTimeline:
    """Replay one iteration and return its full timeline.

    With ``shuttle=True`` every layer is first forwarded once with its
    activations materialized (the measurement pass) before the dropping
    forward; the caller passes the all-layers plan for that mode.
    """
    plan = as_plan(plan)
    plan.validate_for(model)
    a = model.activations(x)
    o = model.boundaries(x)
    f = model.forward_times(x)
    ids = model.layer_ids
    dropped = [lid in plan.dropped_layers for lid in ids]
    C = model.constant_footprint

    resident = C
    t = 0.0
    recompute = 0.0
    events = [Event("start", -1, resident, t)]
    peak = resident

    for i, lid in enumerate(ids):
        prev_out = o[i - 1] if i else 0
        if shuttle:
            t += f[i]
            events.append(Event("forward", lid, resident + a[i], t))
            peak = max(peak, resident + a[i])
        t += f[i]
        resident += a[i]
        peak = max(peak, resident)
        if dropped[i]:
            events.append(Event("forward", lid, resident, t))
            resident += prev_out - a[i]
            events.append(Event("forward-drop", lid, resident, t))
        else:
            events.append(Event("forward", lid, resident, t))

    for i in range(len(ids) - 1, -1, -1):
        lid = ids[i]
        if dropped[i]:
            prev_out = o[i - 1] if i else 0
            resident += a[i] - prev_out
            t += f[i]
            recompute += f[i]
            peak = max(peak, resident)
            events.append(Event("recompute", lid, resident, t))
        t += BACKWARD_FACTOR * f[i]
        resident -= a[i]
        events.append(Event("backward", lid, resident, t))

    return MemoryTimeline(events, peak, t, recompute, C)


def peak_memory(model: ModelSpec, plan: CheckpointPlan | Iterable[int] | None, x: int) -> int:
    a = model.activations(x)
    o = model.boundaries(x)
    return peak_from_sizes(a, o, _mask(model, as_plan(plan)), model.constant_footprint)


def _mask(model: ModelSpec, plan: CheckpointPlan) -> list[bool]:
    plan.validate_for(model)
    return [lid in plan.dropped_layers for lid in model.layer_ids]


def peak_from_sizes(
    act: Sequence[float], out: Sequence[float], dropped: Sequence[bool], constant: float = 0
) -> float:
    """Peak of the replay accounting without building an event list.

    Forward transients and backward recompute transients of layer ``i``
    both equal ``C + sum(kept[:i]) + a[i]``, where a dropped layer keeps
    only its replay input; the end-of-forward total is the other candidate.
    """
    below = constant
    peak = constant
    for i, ai in enumerate(act):
        if below + ai > peak:
            peak = below + ai
        if dropped[i]:
            below += out[i - 1] if i else 0
        else:
            below += ai
    return max(peak, below)


def iteration_time(model: ModelSpec, plan: CheckpointPlan | Iterable[int] | None, x: int) -> float:
    plan = as_plan(plan)
    f = model.forward_times(x)
    mask = _mask(model, plan)
    return sum((1 + BACKWARD_FACTOR) * fi for fi in f) + sum(fi for fi, d in zip(f, mask) if d)


def recompute_time(model: ModelSpec, plan: CheckpointPlan | Iterable[int] | None, x: int) -> float:
    plan = as_plan(plan)
    return sum(fi for fi, d in zip(model.forward_times(x), _mask(model, plan)) if d)


class InfeasibleBudget(Exception):
    pass


def brute_force_plan(model: ModelSpec, x: int, budget_bytes: int) -> tuple[CheckpointPlan, float]:
    """Exhaustive search for the cheapest plan whose peak fits ``budget_bytes``.

    Ties on recompute time go to fewer dropped layers, then to the
    lexicographically earliest positions. Raises ``InfeasibleBudget``.
    """
    L = len(model)
    if L > MAX_BRUTE_FORCE_LAYERS:
        raise ValueError(f"brute force limited to {MAX_BRUTE_FORCE_LAYERS} layers, model has {L}")
    a = model.activations(x)
    o = model.boundaries(x)
    f = model.forward_times(x)
    C = model.constant_footprint
    ids = model.layer_ids

    best_key = None
    best = None
    for k in range(L + 1):
        # combinations() yields positions in lexicographic order within a size
        for combo in itertools.combinations(range(L), k):
            mask = [False] * L
            for p in combo:
                mask[p] = True
            if peak_from_sizes(a, o, mask, C) > budget_bytes:
                continue
            cost = sum(f[p] for p in combo)
            key = (cost, k, combo)
            if best_key is None or key < best_key:
                best_key, best = key, combo
    if best is None:
        raise InfeasibleBudget(f"no plan fits {budget_bytes} bytes at x={x}")
    plan = CheckpointPlan(frozenset(ids[p] for p in best), source_input_size=x)
    return plan, best_key[0]
