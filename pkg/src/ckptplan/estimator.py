"""Per-layer polynomial regression of activation bytes on input size."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
import yaml

from .collector import CollectedSample
from .model import ModelSpec, round_bytes


class EstimatorError(ValueError):
    pass


class InsufficientSamples(EstimatorError):
    def __init__(self, layer_id: int, have: int, need: int):
        super().__init__(f"layer {layer_id}: {have} distinct input sizes, need at least {need}")
        self.layer_id = layer_id


def polyfit(xs, ys, order: int) -> np.ndarray:
    """Least-squares polynomial coefficients, lowest order first.

    The design matrix is built on ``x / max|x|`` so its columns have unit
    scale, solved by ``lstsq``, then polished with one step of iterative
    refinement and unscaled.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    scale = float(np.max(np.abs(x))) or 1.0
    V = np.vander(x / scale, order + 1, increasing=True)
    coef, *_ = np.linalg.lstsq(V, y, rcond=None)
    resid = y - V @ coef
    delta, *_ = np.linalg.lstsq(V, resid, rcond=None)
    coef = coef + delta
    return coef / scale ** np.arange(order + 1)


def polyval(coeffs, x: float) -> float:
    acc = 0.0
    for c in reversed(coeffs):
        acc = acc * x + c
    return acc


@dataclass
class LayerFit:
    coeffs: tuple[float, ...]
    boundary_coeffs: tuple[float, ...] | None
    n_samples: int
    mean_rel_error: float
    max_rel_error: float


@dataclass
class EstimatorModel:
    order: int = 2
    fits: dict[int, LayerFit] = field(default_factory=dict)
    trained: bool = False

    @property
    def per_layer_coeffs(self) -> dict[int, tuple[float, ...]]:
        return {lid: f.coeffs for lid, f in self.fits.items()}

    @property
    def fit_stats(self) -> dict[int, dict]:
        return {
            lid: {"samples": f.n_samples, "mean_rel_error": f.mean_rel_error, "max_rel_error": f.max_rel_error}
            for lid, f in self.fits.items()
        }

    def mean_training_error(self) -> float:
        return float(np.mean([f.mean_rel_error for f in self.fits.values()]))

    @classmethod
    def from_model(cls, model: ModelSpec) -> "EstimatorModel":
        """Exact estimator carrying the ground-truth coefficients."""
        fits = {
            l.id: LayerFit(tuple(l.activation_coeffs), tuple(l.boundary_coeffs), 0, 0.0, 0.0)
            for l in model.layers
        }
        return cls(order=2, fits=fits, trained=True)

    # the hot path: plain python, no numpy
    def predict(self, layer_id: int, x: float) -> int:
        if not self.trained:
            raise EstimatorError("estimator is not trained")
        try:
            coeffs = self.fits[layer_id].coeffs
        except KeyError:
            raise EstimatorError(f"unknown layer {layer_id}") from None
        v = polyval(coeffs, x)
        return round_bytes(v) if v > 0 else 0

    def predict_boundary(self, layer_id: int, x: float) -> int:
        if not self.trained:
            raise EstimatorError("estimator is not trained")
        coeffs = self.fits[layer_id].boundary_coeffs
        if coeffs is None:
            return 0
        v = polyval(coeffs, x)
        return round_bytes(v) if v > 0 else 0

    def predict_layers(self, model: ModelSpec, x: float) -> list[int]:
        return [self.predict(lid, x) for lid in model.layer_ids]

    def predict_boundaries(self, model: ModelSpec, x: float) -> list[int]:
        return [self.predict_boundary(lid, x) for lid in model.layer_ids]

    # -- persistence ---------------------------------------------------------
    def to_document(self) -> dict:
        return {
            "version": 1,
            "order": self.order,
            "trained": self.trained,
            "layers": [
                {
                    "id": lid,
                    "coeffs": [float(c) for c in f.coeffs],
                    "boundary_coeffs": None if f.boundary_coeffs is None else [float(c) for c in f.boundary_coeffs],
                    "samples": f.n_samples,
                    "mean_rel_error": float(f.mean_rel_error),
                    "max_rel_error": float(f.max_rel_error),
                }
                for lid, f in sorted(self.fits.items())
            ],
        }

    @classmethod
    def from_document(cls, doc: dict) -> "EstimatorModel":
        if not isinstance(doc, dict) or doc.get("version") != 1:
            raise EstimatorError("unsupported estimator document")
        fits = {}
        for e in doc["layers"]:
            bc = e.get("boundary_coeffs")
            fits[int(e["id"])] = LayerFit(
                tuple(e["coeffs"]), None if bc is None else tuple(bc),
                int(e["samples"]), float(e["mean_rel_error"]), float(e["max_rel_error"]),
            )
        return cls(order=int(doc["order"]), fits=fits, trained=bool(doc["trained"]))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_document(), sort_keys=False))

    @classmethod
    def load(cls, path: str | Path) -> "EstimatorModel":
        return cls.from_document(yaml.safe_load(Path(path).read_text()))


def fit(samples: Iterable[CollectedSample], order: int = 2) -> EstimatorModel:
    by_layer: dict[int, list[CollectedSample]] = defaultdict(list)
    for s in samples:
        if s.valid:
            by_layer[s.layer_id].append(s)
    if not by_layer:
        raise EstimatorError("no valid samples")

    fits = {}
    for lid in sorted(by_layer):
        rows = sorted(by_layer[lid], key=lambda s: s.input_size)
        xs = [s.input_size for s in rows]
        distinct = len(set(xs))
        if distinct < order + 1:
            raise InsufficientSamples(lid, distinct, order + 1)
        ys = np.array([s.measured_activation_bytes for s in rows], dtype=float)
        coeffs = polyfit(xs, ys, order)
        bys = [s.measured_boundary_bytes for s in rows]
        bcoeffs = tuple(float(c) for c in polyfit(xs, bys, 1)) if any(bys) else None

        pred = np.array([polyval(coeffs, x) for x in xs])
        rel = np.abs(pred - ys) / np.abs(ys)
        fits[lid] = LayerFit(
            tuple(float(c) for c in coeffs), bcoeffs, len(rows), float(rel.mean()), float(rel.max())
        )
    return EstimatorModel(order=order, fits=fits, trained=True)


def predict(est: EstimatorModel, layer_id: int, x: float) -> int:
    return est.predict(layer_id, x)


def predict_total(est: EstimatorModel, model: ModelSpec, x: float) -> int:
    return sum(est.predict_layers(model, x)) + model.constant_footprint


def can_fit(samples: Iterable[CollectedSample], order: int = 2) -> bool:
    sizes = defaultdict(set)
    for s in samples:
        if s.valid:
            sizes[s.layer_id].add(s.input_size)
    return bool(sizes) and all(len(v) >= order + 1 for v in sizes.values())
