import itertools
import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ckptplan.model import InputRangeError, homogeneous, total_activation
from ckptplan.simulator import (
    CheckpointPlan, InfeasibleBudget, brute_force_plan, iteration_time, peak_from_sizes,
    peak_memory, recompute_time, simulate_iteration,
)

from conftest import models, trace_reference


def subsets(ids):
    for k in range(len(ids) + 1):
        yield from (frozenset(c) for c in itertools.combinations(ids, k))


# -- hand traces -------------------------------------------------------------

def test_empty_plan_peaks_at_end_of_forward(three_layer):
    tl = simulate_iteration(three_layer, None, 1)
    assert tl.peak_bytes == 60
    fwd = [e for e in tl.events if e.phase == "forward"]
    assert fwd[-1].resident_bytes == 60


def test_dropping_last_layer_keeps_peak(three_layer):
    tl = simulate_iteration(three_layer, [2], 1)
    assert tl.peak_bytes == 60
    assert [e.resident_bytes for e in tl.events] == [0, 10, 30, 60, 31, 60, 30, 10, 0]
    assert [e.phase for e in tl.events] == [
        "start", "forward", "forward", "forward", "forward-drop",
        "recompute", "backward", "backward", "backward"]


def test_front_checkpoint_beats_back(homog12):
    # replay input of the first layer is the model input, counted as 0
    assert peak_memory(homog12, [0], 1) == 1100
    assert peak_memory(homog12, [11], 1) == 1200


def test_all_layers_plan(homog12):
    # layer 11 transient on top of ten retained boundaries (layer 0 retains nothing)
    assert peak_memory(homog12, range(12), 1) == 200


def test_empty_plan_is_constant_plus_total(bert12):
    for x in bert12.sample_inputs(5):
        assert peak_memory(bert12, None, x) == bert12.constant_footprint + total_activation(bert12, x)


def test_rejects_unknown_layer(three_layer):
    with pytest.raises(ValueError, match="unknown layers"):
        simulate_iteration(three_layer, [7], 1)


def test_rejects_out_of_range(bert12):
    with pytest.raises(InputRangeError):
        simulate_iteration(bert12, None, 1)


# -- properties --------------------------------------------------------------

@given(models(max_layers=6), st.data())
def test_matches_reference_trace(m, data):
    x = data.draw(st.integers(*m.input_range))
    plan = data.draw(st.sets(st.sampled_from(m.layer_ids)))
    tl = simulate_iteration(m, plan, x)
    readings, t = trace_reference(m, plan, x)
    assert [e.resident_bytes for e in tl.events] == readings
    assert tl.peak_bytes == max(readings)
    assert tl.iteration_time_ms == pytest.approx(t, rel=1e-12)


@given(models(max_layers=6), st.data())
def test_conservation_and_time_additivity(m, data):
    x = data.draw(st.integers(*m.input_range))
    plan = data.draw(st.sets(st.sampled_from(m.layer_ids)))
    tl = simulate_iteration(m, plan, x)
    C = m.constant_footprint
    assert tl.events[0].resident_bytes == C == tl.final_resident
    assert tl.peak_bytes == max(e.resident_bytes for e in tl.events)
    f = m.forward_times(x)
    assert tl.recompute_time_ms == pytest.approx(sum(f[i] for i in plan), abs=1e-9)
    assert tl.iteration_time_ms == pytest.approx(3 * sum(f) + sum(f[i] for i in plan), rel=1e-12)
    assert tl.iteration_time_ms == pytest.approx(iteration_time(m, plan, x), rel=1e-12)
    assert tl.recompute_time_ms == pytest.approx(recompute_time(m, plan, x), rel=1e-12)
    assert peak_memory(m, plan, x) == tl.peak_bytes


@given(models(max_layers=7))
def test_peak_dominance_and_inclusion_monotone(m):
    for x in sorted({m.input_range[0], m.input_range[1]}):
        peaks = {s: peak_memory(m, s, x) for s in subsets(m.layer_ids)}
        empty = peaks[frozenset()]
        for s, p in peaks.items():
            assert p <= empty
            for lid in set(m.layer_ids) - s:
                assert peaks[s | {lid}] <= p


def test_inclusion_monotonicity_needs_dominated_boundaries():
    # a big boundary feeding a small layer: dropping the small layer retains more
    m = homogeneous(2, activation=(100, 10), boundary=(90, 5))
    assert peak_memory(m, [1], 1) > peak_memory(m, [], 1)


@pytest.mark.parametrize("n", [4, 12])
def test_singleton_peaks_nondecreasing_in_position(n):
    m = homogeneous(n, activation=100, boundary=10)
    peaks = [peak_memory(m, [k], 1) for k in range(n)]
    assert peaks == sorted(peaks)
    assert peaks[0] < peaks[-1]


def test_peak_from_sizes_accepts_floats():
    assert peak_from_sizes([1.5, 2.5], [0.5, 0.5], [False, True], 1.0) == 5.0


def test_timeline_csv(three_layer):
    text = simulate_iteration(three_layer, [1], 1).to_csv()
    lines = text.splitlines()
    assert lines[0] == "phase,layer_id,resident_bytes,time_ms"
    assert lines[1] == "start,-1,0,0.0"
    assert len(lines) == 1 + 1 + 4 + 1 + 3


# -- brute force oracle ------------------------------------------------------

def test_brute_force_generous_budget(homog12):
    plan, cost = brute_force_plan(homog12, 1, 1200)
    assert plan.dropped_layers == frozenset() and cost == 0


def test_brute_force_infeasible(homog12):
    with pytest.raises(InfeasibleBudget):
        brute_force_plan(homog12, 1, 199)


def test_brute_force_golden(homog12, golden_dir):
    gold = json.loads((golden_dir / "brute_force_homog12_950.json").read_text())
    plan, cost = brute_force_plan(homog12, 1, 950)
    assert sorted(plan.dropped_layers) == gold["dropped_layers"] == [0, 1, 2]
    assert cost == gold["recompute_ms"] == 15
    assert peak_memory(homog12, plan, 1) == gold["peak_bytes"]


@given(st.lists(st.integers(20, 100), min_size=2, max_size=6), st.lists(st.integers(1, 3), min_size=6, max_size=6),
       st.data())
def test_brute_force_tie_break(acts, times, data):
    n = len(acts)
    m = homogeneous(n, activation=acts, boundary=10, forward_ms=times[:n])
    budget = data.draw(st.integers(peak_memory(m, range(n), 1), peak_memory(m, [], 1)))
    plan, cost = brute_force_plan(m, 1, budget)
    feasible = [s for s in subsets(range(n)) if peak_memory(m, s, 1) <= budget]
    best = min(sum(times[i] for i in s) for s in feasible)
    tied = [s for s in feasible if sum(times[i] for i in s) == best]
    fewest = min(len(s) for s in tied)
    expect = min(tuple(sorted(s)) for s in tied if len(s) == fewest)
    assert cost == best
    assert tuple(sorted(plan.dropped_layers)) == expect


def test_brute_force_tie_break_prefers_earliest_positions():
    m = homogeneous(4, activation=100, boundary=10, forward_ms=1)
    plan, cost = brute_force_plan(m, 1, 299)
    assert (sorted(plan.dropped_layers), cost) == ([0, 1], 2)


def test_brute_force_guard():
    with pytest.raises(ValueError, match="limited"):
        brute_force_plan(homogeneous(21, activation=10, boundary=1), 1, 100)


@given(models(max_layers=6), st.data())
def test_brute_force_is_optimal(m, data):
    x = m.input_range[1]
    lo = peak_memory(m, m.layer_ids, x)
    hi = peak_memory(m, [], x)
    budget = data.draw(st.integers(lo, hi))
    plan, cost = brute_force_plan(m, x, budget)
    assert peak_memory(m, plan, x) <= budget
    f = m.forward_times(x)
    for s in subsets(m.layer_ids):
        if peak_memory(m, s, x) <= budget:
            assert sum(f[i] for i in s) >= cost - 1e-9
