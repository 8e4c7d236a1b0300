from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from ckptplan.model import LayerSpec, ModelSpec, homogeneous, load_model

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def golden_dir():
    return GOLDEN


@pytest.fixture(scope="session")
def bert12():
    return load_model("bert12")


@pytest.fixture(scope="session")
def heterostage():
    return load_model("heterostage")


@pytest.fixture
def three_layer():
    return homogeneous(3, activation=(10, 20, 30), boundary=(1, 1, 1))


@pytest.fixture
def homog12():
    return homogeneous(12, activation=100, boundary=10, forward_ms=5)


@st.composite
def models(draw, min_layers=1, max_layers=8, dominated=True, x_range=(1, 64)):
    """Random models that satisfy every load-time invariant.

    With ``dominated`` each boundary also fits inside the next layer's
    activation set, which is what makes peak monotone in the plan.
    """
    n = draw(st.integers(min_layers, max_layers))
    acts = [
        (draw(st.integers(1, 400)), draw(st.integers(0, 40)), draw(st.sampled_from([0, 0, 0.5, 1, 2])))
        for _ in range(n)
    ]
    layers = []
    for i, (c0, c1, c2) in enumerate(acts):
        nxt = acts[i + 1] if dominated and i + 1 < n else (c0, c1, c2)
        b0 = draw(st.integers(1, min(c0, nxt[0])))
        b1 = draw(st.integers(0, min(c1, nxt[1])))
        t0 = draw(st.floats(0.1, 10, allow_nan=False).map(lambda v: round(v, 3)))
        t1 = draw(st.sampled_from([0, 0.01, 0.1]))
        cat = "quadratic-structure" if c2 > 0 else "implicit-reduction"
        layers.append(LayerSpec(i, i, 0, (c0, c1, c2), (b0, b1), (t0, t1), cat))
    C = draw(st.integers(0, 1000))
    lo = draw(st.integers(*x_range))
    hi = draw(st.integers(lo, x_range[1]))
    return ModelSpec(tuple(layers), C, (lo, hi), "random")


def trace_reference(model, dropped, x):
    """Straight-line event trace of the replay accounting, kept separate
    from the simulator so each checks the other."""
    L = len(model.layers)
    a = [l.activation(x) for l in model.layers]
    o = [l.boundary(x) for l in model.layers]
    f = [l.forward_ms(x) for l in model.layers]
    res = model.constant_footprint
    readings = [res]
    for i in range(L):
        res += a[i]
        readings.append(res)
        if model.layers[i].id in dropped:
            res -= a[i]
            res += o[i - 1] if i > 0 else 0
            readings.append(res)
    for i in reversed(range(L)):
        if model.layers[i].id in dropped:
            res += a[i]
            res -= o[i - 1] if i > 0 else 0
            readings.append(res)
        res -= a[i]
        readings.append(res)
    t = sum(3 * fi for fi in f) + sum(f[i] for i in range(L) if model.layers[i].id in dropped)
    return readings, t
