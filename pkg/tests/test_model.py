import pytest
from hypothesis import given
from hypothesis import strategies as st

from ckptplan.model import (
    InputRangeError, LayerSpec, ModelSpec, ModelSpecError, activation_size, dumps_model,
    homogeneous, load_model, loads_model, round_bytes, save_model, total_activation, validate,
)

from conftest import models


def layer(c, b=(1, 0), t=(1.0, 0.0), cat="quadratic-structure", lid=0):
    return LayerSpec(lid, lid, 0, c, b, t, cat)


def test_activation_pure_quadratic():
    assert activation_size(layer((0, 0, 1)), 10) == 100


def test_activation_direct_evaluation():
    assert activation_size(layer((2, 3, 0.5)), 20) == 262


def test_activation_rejects_out_of_range():
    with pytest.raises(InputRangeError):
        activation_size(layer((5, 2, 0), cat="implicit-reduction"), 0, input_range=(1, 100))


def test_round_half_up():
    assert round_bytes(2.5) == 3
    assert round_bytes(3.5) == 4
    assert round_bytes(2.4999999999) == 3  # fit noise below the 6th decimal


def test_total_activation_linear_sum():
    m = ModelSpec(tuple(layer((0, 1, 0), (0, 0.5), cat="implicit-reduction", lid=i) for i in range(3)),
                  0, (1, 100))
    assert total_activation(m, 7) == 21


def test_total_activation_homogeneous():
    m = homogeneous(12, activation=100, input_range=(1, 1000))
    for x in (1, 17, 1000):
        assert total_activation(m, x) == 1200


def test_total_activation_out_of_range(bert12):
    with pytest.raises(InputRangeError):
        total_activation(bert12, 10)


def test_bert12_spec(bert12):
    assert len(bert12) == 12
    assert {l.category for l in bert12.layers} == {"quadratic-structure"}
    assert bert12.input_range == (30 * 32, 332 * 32)
    assert bert12.constant_footprint == 1_700_000_000
    assert len({(l.activation_coeffs, l.boundary_coeffs, l.forward_time_coeffs) for l in bert12.layers}) == 1
    lo, hi = bert12.input_range
    assert total_activation(bert12, hi) > total_activation(bert12, lo)


def test_heterostage_loads(heterostage):
    assert len({l.stage_id for l in heterostage.layers}) == 4
    assert {l.category for l in heterostage.layers} == {
        "elementwise", "fixed-output", "implicit-reduction", "quadratic-structure"}


DOC = """
version: 1
constant_footprint: 0
input_range: [1, 10]
layers:
{layers}
"""

LAYER = """- {{id: {id}, position: {pos}, stage_id: 0, category: {cat},
   activation_coeffs: {a}, boundary_coeffs: {b}, forward_time_coeffs: [1.0, 0.0]}}"""


def doc(*specs):
    return DOC.format(layers="\n".join(LAYER.format(**s) for s in specs))


def test_load_homogeneous_document():
    text = doc(*[dict(id=i, pos=i, cat="fixed-output", a="[100, 0, 0]", b="[10, 0]") for i in range(12)])
    m = loads_model(text)
    assert len(m) == 12
    assert len({l.activation_coeffs for l in m.layers}) == 1


def test_boundary_exceeding_activation_names_layer():
    text = doc(dict(id=0, pos=0, cat="fixed-output", a="[100, 0, 0]", b="[10, 0]"),
               dict(id=7, pos=1, cat="fixed-output", a="[100, 0, 0]", b="[200, 0]"))
    with pytest.raises(ModelSpecError, match="layer 7"):
        loads_model(text)


@pytest.mark.parametrize("text, match", [
    ("version: 2\nlayers: []", "version"),
    ("not: [valid", "parse"),
    ("- 1\n- 2", "mapping"),
    ("version: 1\nconstant_footprint: 0\ninput_range: [1, 2]\nlayers: []", "no layers"),
    ("version: 1\nconstant_footprint: 0\ninput_range: [5, 2]\nlayers: [{id: 0, activation_coeffs: [1,0,0], "
     "boundary_coeffs: [1,0], forward_time_coeffs: [1,0], category: fixed-output}]", "exceeds"),
    ("version: 1\ninput_range: [1, 2]\nlayers: []", "constant_footprint"),
])
def test_malformed_documents(text, match):
    with pytest.raises(ModelSpecError, match=match):
        loads_model(text)


def test_duplicate_ids_rejected():
    text = doc(dict(id=3, pos=0, cat="fixed-output", a="[100, 0, 0]", b="[10, 0]"),
               dict(id=3, pos=1, cat="fixed-output", a="[100, 0, 0]", b="[10, 0]"))
    with pytest.raises(ModelSpecError, match="duplicate"):
        loads_model(text)


@pytest.mark.parametrize("cat, a, match", [
    ("fixed-output", "[100, 1, 0]", "fixed-output"),
    ("implicit-reduction", "[100, 1, 1]", "implicit-reduction"),
    ("quadratic-structure", "[100, 1, 0]", "quadratic"),
    ("elementwise", "[100, 3, 0]", "elementwise"),
    ("mystery", "[100, 0, 0]", "category"),
])
def test_category_constraints(cat, a, match):
    text = doc(dict(id=0, pos=0, cat="implicit-reduction", a="[100, 2, 0]", b="[10, 2]"),
               dict(id=1, pos=1, cat=cat, a=a, b="[10, 0]"))
    with pytest.raises(ModelSpecError, match=match):
        loads_model(text)


def test_negative_activation_inside_range_caught_at_vertex():
    # a(x) = 10 - 8x + x^2 bottoms out at -6 for x=4
    bad = ModelSpec((layer((10, -8, 1), (0.5, 0)),), 0, (1, 9))
    with pytest.raises(ModelSpecError, match="positive"):
        validate(bad)


def test_round_trip_bundled(tmp_path, bert12, heterostage):
    for m in (bert12, heterostage):
        p = tmp_path / "m.model"
        save_model(m, p)
        again = load_model(p)
        assert again == m
        assert dumps_model(again) == dumps_model(m)


@given(models())
def test_round_trip_random(m):
    m = validate(m)
    assert loads_model(dumps_model(m)) == m


@given(models(), st.data())
def test_monotone_and_boundary_dominated(m, data):
    xs = sorted(data.draw(st.lists(st.integers(*m.input_range), min_size=2, max_size=6)))
    for l in m.layers:
        acts = [l.activation(x) for x in xs]
        assert acts == sorted(acts)
        assert all(l.boundary(x) <= l.activation(x) for x in xs)
