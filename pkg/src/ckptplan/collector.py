"""Sheltered execution: the double-forward collector.

Each layer is forwarded twice. The first pass keeps its activations long
enough to measure bytes and time; the second drops everything except the
replay input, so residency matches an all-layers checkpointing plan.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .model import ModelSpec
from .simulator import CheckpointPlan, MemoryTimeline, simulate_iteration


@dataclass(frozen=True)
class CollectedSample:
    layer_id: int
    input_size: int
    measured_activation_bytes: float
    measured_forward_ms: float
    measured_boundary_bytes: float = 0.0
    valid: bool = True


@dataclass(frozen=True)
class RawRecord:
    """One instrumented forward of one layer, with its checkpointing context."""

    layer_id: int
    input_size: int
    activation_bytes: float
    forward_ms: float
    boundary_bytes: float = 0.0
    self_checkpointed: bool = False
    ancestor_checkpointed: bool = False
    descendant_checkpointed: bool = False


@dataclass
class CollectorConfig:
    max_sheltered_iters: int = 10
    collect_new_sizes_always: bool = False


@dataclass
class CollectorState:
    noise: float = 0.0
    seed: int = 0
    seen_sizes: set = field(default_factory=set)
    samples: list = field(default_factory=list)
    collected_iterations: int = 0

    def __post_init__(self):
        if not 0 <= self.noise < 1:
            raise ValueError("noise magnitude must be in [0, 1)")
        self._rng = np.random.default_rng(self.seed)
        self._keys = {(s.layer_id, s.input_size) for s in self.samples if s.valid}

    def _jitter(self) -> float:
        if self.noise == 0:
            return 1.0
        return 1.0 + float(self._rng.uniform(-self.noise, self.noise))

    def valid_samples(self) -> list[CollectedSample]:
        return [s for s in self.samples if s.valid]

    def distinct_sizes(self) -> int:
        return len(self.seen_sizes)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer_id", "input_size", "bytes", "ms", "valid"])
        for s in self.samples:
            w.writerow([s.layer_id, s.input_size, repr(float(s.measured_activation_bytes)),
                        repr(float(s.measured_forward_ms)), int(s.valid)])
        return buf.getvalue()


def apply_filter(raw: list[RawRecord]) -> list[CollectedSample]:
    """Keep only records measured with nothing around them checkpointed.

    A checkpointed layer has no activations to measure, and a layer whose
    parent or child runs under no-grad reports a polluted delta.
    """
    out = []
    for r in raw:
        if isinstance(r, CollectedSample):
            # already-filtered samples pass through unchanged
            if r.valid:
                out.append(r)
            continue
        if r.self_checkpointed or r.ancestor_checkpointed or r.descendant_checkpointed:
            continue
        out.append(
            CollectedSample(r.layer_id, r.input_size, r.activation_bytes, r.forward_ms, r.boundary_bytes, True)
        )
    return out


def should_collect(state: CollectorState, x: int, iter_index: int, config: CollectorConfig | None = None) -> bool:
    config = config or CollectorConfig()
    if x in state.seen_sizes:
        return False
    return iter_index < config.max_sheltered_iters or config.collect_new_sizes_always


def collect_iteration(model: ModelSpec, state: CollectorState, x: int) -> tuple[list[CollectedSample], MemoryTimeline]:
    """Run one sheltered iteration at input size ``x``.

    Returns the samples committed by this call (empty for an already seen
    size) and the iteration's timeline.
    """
    model.check_input(x)
    timeline = simulate_iteration(model, CheckpointPlan(frozenset(model.layer_ids)), x, shuttle=True)
    state.collected_iterations += 1
    if x in state.seen_sizes:
        return [], timeline

    raw = []
    for layer in model.layers:
        act = layer.activation_real(x) * state._jitter()
        out = layer.boundary_real(x) * state._jitter()
        ms = layer.forward_ms(x)
        raw.append(RawRecord(layer.id, x, act, ms, out))
        # the dropping pass runs the layer under no-grad; nothing to measure
        raw.append(RawRecord(layer.id, x, 0.0, ms, out, self_checkpointed=True))

    committed = []
    for s in apply_filter(raw):
        key = (s.layer_id, s.input_size)
        if key in state._keys or s.measured_activation_bytes <= 0:
            continue
        state._keys.add(key)
        committed.append(s)
    state.samples.extend(committed)
    state.seen_sizes.add(x)
    return committed, timeline
