"""Synthetic model description: layers whose activation footprint and
forward time depend on the per-iteration input size.

Input size ``x`` is a scalar element count (sequence length times batch).
Byte quantities are integers; times are milliseconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import yaml

CATEGORIES = ("elementwise", "fixed-output", "implicit-reduction", "quadratic-structure")
FORMAT_VERSION = 1


class ModelSpecError(ValueError):
    """Raised when a model document is malformed or violates an invariant."""


class InputRangeError(ValueError):
    pass


def round_bytes(value: float) -> int:
    """Round half-up to integer bytes.

    Values are first rounded to 6 decimals so that a fitted polynomial
    landing a hair below an exact ``.5`` rounds the same way as the
    ground truth does.
    """
    return int(math.floor(round(value, 6) + 0.5))


@dataclass(frozen=True)
class LayerSpec:
    id: int
    position: int
    stage_id: int
    activation_coeffs: tuple[float, float, float]
    boundary_coeffs: tuple[float, float]
    forward_time_coeffs: tuple[float, float]
    category: str = "implicit-reduction"

    def activation_real(self, x: float) -> float:
        c0, c1, c2 = self.activation_coeffs
        return c0 + c1 * x + c2 * x * x

    def boundary_real(self, x: float) -> float:
        b0, b1 = self.boundary_coeffs
        return b0 + b1 * x

    def activation(self, x: float) -> int:
        return round_bytes(self.activation_real(x))

    def boundary(self, x: float) -> int:
        return round_bytes(self.boundary_real(x))

    def forward_ms(self, x: float) -> float:
        t0, t1 = self.forward_time_coeffs
        return t0 + t1 * x


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[LayerSpec, ...]
    constant_footprint: int
    input_range: tuple[int, int]
    name: str = "model"
    _by_id: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_range", tuple(self.input_range))
        object.__setattr__(self, "_by_id", {l.id: l for l in self.layers})

    def __len__(self) -> int:
        return len(self.layers)

    @property
    def layer_ids(self) -> list[int]:
        return [l.id for l in self.layers]

    def layer(self, layer_id: int) -> LayerSpec:
        try:
            return self._by_id[layer_id]
        except KeyError:
            raise KeyError(f"unknown layer id {layer_id}") from None

    def check_input(self, x: float) -> None:
        lo, hi = self.input_range
        if not lo <= x <= hi:
            raise InputRangeError(f"input size {x} outside model range [{lo}, {hi}]")

    def activations(self, x: float) -> list[int]:
        self.check_input(x)
        return [l.activation(x) for l in self.layers]

    def boundaries(self, x: float) -> list[int]:
        self.check_input(x)
        return [l.boundary(x) for l in self.layers]

    def forward_times(self, x: float) -> list[float]:
        self.check_input(x)
        return [l.forward_ms(x) for l in self.layers]

    def sample_inputs(self, n: int = 16) -> list[int]:
        """Evenly spaced integer sizes covering the input range."""
        lo, hi = self.input_range
        if lo == hi:
            return [lo]
        return sorted({round(lo + (hi - lo) * k / (n - 1)) for k in range(n)})


def activation_size(layer: LayerSpec, x: float, input_range: Sequence[int] | None = None) -> int:
    """Ground-truth activation bytes of ``layer`` at input size ``x``."""
    if input_range is not None:
        lo, hi = input_range
        if not lo <= x <= hi:
            raise InputRangeError(f"input size {x} outside range [{lo}, {hi}]")
    return layer.activation(x)


def total_activation(model: ModelSpec, x: float) -> int:
    return sum(model.activations(x))


# -- validation --------------------------------------------------------------

def _fail(msg: str, layer: LayerSpec | None = None):
    where = f"layer {layer.id}: " if layer is not None else ""
    raise ModelSpecError(where + msg)


def validate(model: ModelSpec, samples: int = 33) -> ModelSpec:
    """Check every structural and footprint invariant; returns ``model``."""
    if not model.layers:
        _fail("model has no layers")
    lo, hi = model.input_range
    if lo < 1:
        _fail(f"x_min must be >= 1, got {lo}")
    if lo > hi:
        _fail(f"x_min {lo} exceeds x_max {hi}")
    if model.constant_footprint < 0:
        _fail("constant_footprint must be non-negative")
    ids = [l.id for l in model.layers]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        _fail(f"duplicate layer ids {dup}")
    positions = [l.position for l in model.layers]
    if positions != list(range(len(model.layers))):
        _fail(f"positions must be 0..{len(model.layers) - 1} in order, got {positions}")

    xs = model.sample_inputs(samples)
    prev: LayerSpec | None = None
    for layer in model.layers:
        if layer.category not in CATEGORIES:
            _fail(f"unknown category {layer.category!r}", layer)
        c0, c1, c2 = layer.activation_coeffs
        if layer.category == "elementwise":
            if c2 != 0:
                _fail("elementwise layer must have c2 = 0", layer)
            if prev is not None and c1 != prev.boundary_coeffs[1]:
                _fail("elementwise layer must have c1 equal to previous layer's b1", layer)
        elif layer.category == "fixed-output":
            if c1 != 0 or c2 != 0:
                _fail("fixed-output layer must have c1 = c2 = 0", layer)
        elif layer.category == "implicit-reduction":
            if c2 != 0:
                _fail("implicit-reduction layer must have c2 = 0", layer)
        elif c2 <= 0:
            _fail("quadratic-structure layer must have c2 > 0", layer)

        # extrema of a quadratic on an interval sit at the ends or the vertex
        probe = list(xs)
        if c2 != 0:
            vertex = -c1 / (2 * c2)
            if lo < vertex < hi:
                probe.append(vertex)
        for x in probe:
            a = layer.activation_real(x)
            o = layer.boundary_real(x)
            if a <= 0:
                _fail(f"activation size must be positive (a({x:g}) = {a:g})", layer)
            if o <= 0:
                _fail(f"boundary size must be positive (o({x:g}) = {o:g})", layer)
            if o > a:
                _fail(f"boundary exceeds activation at x={x:g} (o = {o:g} > a = {a:g})", layer)
        for x in (lo, hi):
            if layer.forward_ms(x) <= 0:
                _fail(f"forward time must be positive at x={x}", layer)
        prev = layer
    return model


def replay_inputs_dominated(model: ModelSpec, xs: Iterable[float] | None = None) -> bool:
    """True if every layer's input boundary fits inside its own activation set.

    This is the condition under which dropping more layers can never raise
    peak memory: a dropped layer retains ``o[i-1]`` in place of ``a[i]``.
    """
    xs = list(xs) if xs is not None else model.sample_inputs()
    layers = model.layers
    return all(
        layers[i - 1].boundary(x) <= layers[i].activation(x)
        for x in xs
        for i in range(1, len(layers))
    )


# -- documents ---------------------------------------------------------------

def to_document(model: ModelSpec) -> dict:
    return {
        "version": FORMAT_VERSION,
        "name": model.name,
        "constant_footprint": int(model.constant_footprint),
        "input_range": [int(v) for v in model.input_range],
        "layers": [
            {
                "id": l.id,
                "position": l.position,
                "stage_id": l.stage_id,
                "category": l.category,
                "activation_coeffs": list(l.activation_coeffs),
                "boundary_coeffs": list(l.boundary_coeffs),
                "forward_time_coeffs": list(l.forward_time_coeffs),
            }
            for l in model.layers
        ],
    }


def _tuple(value, n: int, key: str, idx) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != n:
        raise ModelSpecError(f"layer {idx}: {key} must be a list of {n} numbers")
    try:
        return tuple(float(v) if isinstance(v, float) else v + 0 for v in value)
    except TypeError:
        raise ModelSpecError(f"layer {idx}: {key} must contain numbers") from None


def from_document(doc: dict) -> ModelSpec:
    if not isinstance(doc, dict):
        raise ModelSpecError("model document must be a mapping")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelSpecError(f"missing or unsupported version (expected version: {FORMAT_VERSION})")
    for key in ("constant_footprint", "input_range", "layers"):
        if key not in doc:
            raise ModelSpecError(f"missing key {key!r}")
    rng = doc["input_range"]
    if not isinstance(rng, (list, tuple)) or len(rng) != 2:
        raise ModelSpecError("input_range must be [x_min, x_max]")
    if not isinstance(doc["layers"], list):
        raise ModelSpecError("layers must be a list")
    layers = []
    for idx, raw in enumerate(doc["layers"]):
        if not isinstance(raw, dict):
            raise ModelSpecError(f"layer entry {idx} must be a mapping")
        try:
            lid = int(raw["id"])
            layers.append(
                LayerSpec(
                    id=lid,
                    position=int(raw.get("position", idx)),
                    stage_id=int(raw.get("stage_id", 0)),
                    category=str(raw.get("category", "implicit-reduction")),
                    activation_coeffs=_tuple(raw["activation_coeffs"], 3, "activation_coeffs", lid),
                    boundary_coeffs=_tuple(raw["boundary_coeffs"], 2, "boundary_coeffs", lid),
                    forward_time_coeffs=_tuple(raw["forward_time_coeffs"], 2, "forward_time_coeffs", lid),
                )
            )
        except KeyError as exc:
            raise ModelSpecError(f"layer entry {idx}: missing key {exc.args[0]!r}") from None
    model = ModelSpec(
        layers=tuple(layers),
        constant_footprint=int(doc["constant_footprint"]),
        input_range=(int(rng[0]), int(rng[1])),
        name=str(doc.get("name", "model")),
    )
    return validate(model)


def dumps_model(model: ModelSpec) -> str:
    return yaml.safe_dump(to_document(model), sort_keys=False, default_flow_style=None)


def loads_model(text: str) -> ModelSpec:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ModelSpecError(f"cannot parse model document: {exc}") from None
    return from_document(doc)


BUNDLED_DIR = Path(__file__).parent / "models"


def resolve_model_path(path: str | Path) -> Path:
    """Accept a real path or the stem or name of a bundled model."""
    p = Path(path)
    if p.exists():
        return p
    for candidate in (BUNDLED_DIR / p.name, BUNDLED_DIR / f"{p.name}.model"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"model file not found: {path}")


def load_model(path: str | Path) -> ModelSpec:
    return loads_model(resolve_model_path(path).read_text())


def save_model(model: ModelSpec, path: str | Path) -> None:
    Path(path).write_text(dumps_model(model))


def homogeneous(
    n_layers: int,
    activation: float | Sequence[float],
    boundary: float | Sequence[float] = 0.0,
    forward_ms: float | Sequence[float] = 1.0,
    constant_footprint: int = 0,
    input_range: tuple[int, int] = (1, 1),
    name: str = "homogeneous",
) -> ModelSpec:
    """Model whose layers have fixed (input-independent) footprints.

    Scalars are broadcast; sequences give per-layer values. Handy for
    hand-traced fixtures such as ``a=(10, 20, 30)``.
    """
    def per_layer(v):
        return list(v) if isinstance(v, (list, tuple)) else [v] * n_layers

    acts, bounds, times = per_layer(activation), per_layer(boundary), per_layer(forward_ms)
    layers = tuple(
        LayerSpec(
            id=i,
            position=i,
            stage_id=0,
            category="fixed-output",
            activation_coeffs=(acts[i], 0, 0),
            boundary_coeffs=(bounds[i], 0),
            forward_time_coeffs=(times[i], 0),
        )
        for i in range(n_layers)
    )
    return ModelSpec(layers, constant_footprint, input_range, name)
