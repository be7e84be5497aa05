"""Offline mask-branch losses between a label map and a model-output map.

These are audit tools: they score maps already on disk and have no
gradients.  All logs are natural logs, with arguments floored at ``FLOOR``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .imaging import BoundingBox, FloatMap

FLOOR = 1e-7
KL_MODES = ("kl", "kl-positive", "kl-literal", "binary-kl")


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossReport:
    total: float
    per_box: tuple[tuple[int, float], ...]
    pixel_count: int

    def to_json(self) -> dict:
        return {"total": self.total, "pixel_count": self.pixel_count,
                "per_box": [{"box": i, "value": v} for i, v in self.per_box]}


def _values(m) -> np.ndarray:
    return m.values if isinstance(m, FloatMap) else np.asarray(m, dtype=np.float64)


def _check(p1: np.ndarray, p2: np.ndarray, region: Sequence[BoundingBox]) -> None:
    if p1.shape != p2.shape:
        raise LossError(f"dimension mismatch: {p1.shape} vs {p2.shape}")
    if not region:
        raise LossError("empty region")
    h, w = p1.shape
    for b in region:
        if not b.inside(w, h):
            raise LossError(f"box {b.as_tuple()} outside the map")


def _reduce(term: np.ndarray, region: Sequence[BoundingBox]) -> LossReport:
    per_box = []
    total = 0.0
    count = 0
    # Fixed box order keeps the floating-point sum reproducible.
    for i, b in enumerate(region):
        val = float(term[b.slices()].sum())
        per_box.append((i, val))
        total += val
        count += b.area
    return LossReport(total, tuple(per_box), count)


def _xlogy_ratio(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a * log(a / b)`` with floored arguments and 0 where a == 0."""
    ratio = np.log(np.maximum(a, FLOOR) / np.maximum(b, FLOOR))
    return np.where(a > 0, a * ratio, 0.0)


def cross_entropy(p1, p2, region: Sequence[BoundingBox]) -> LossReport:
    """``-sum p1 * log(p2)`` over the region boxes; ``p1`` must be binary."""
    a, b = _values(p1), _values(p2)
    _check(a, b, region)
    if not np.all((a == 0) | (a == 1)):
        raise LossError("cross entropy needs a binary label map")
    term = np.where(a > 0, -a * np.log(np.maximum(b, FLOOR)), 0.0)
    return _reduce(term, region)


def kl_divergence(p1, p2, region: Sequence[BoundingBox], mode: str = "kl") -> LossReport:
    """Divergence of the model map ``p2`` from the label map ``p1``.

    Modes:

    ``kl`` / ``binary-kl``
        Per-pixel Bernoulli divergence
        ``p1 log(p1/p2) + (1-p1) log((1-p1)/(1-p2))``; never negative, zero
        iff the maps agree.
    ``kl-positive``
        Only the nutsedge-class term ``sum p1 log(p1/p2)``.  Can go negative
        on unnormalized maps.
    ``kl-literal``
        The nutsedge-class term with a leading minus, ``-sum p1 log(p1/p2)``.
    """
    if mode not in KL_MODES:
        raise LossError(f"unknown KL mode {mode!r}")
    a, b = _values(p1), _values(p2)
    _check(a, b, region)
    if mode == "kl-positive":
        term = _xlogy_ratio(a, b)
    elif mode == "kl-literal":
        term = -_xlogy_ratio(a, b)
    else:
        # Clipping q into [FLOOR, 1 - FLOOR] keeps (q, 1 - q) a proper
        # distribution, so every pixel term is a true divergence.
        q = np.clip(b, FLOOR, 1.0 - FLOOR)
        term = _xlogy_ratio(a, q) + _xlogy_ratio(1.0 - a, 1.0 - q)
        term = np.where(a == b, 0.0, np.maximum(term, 0.0))
    return _reduce(term, region)


def loss(mode: str, label, pred, region: Sequence[BoundingBox]) -> LossReport:
    if mode == "ce":
        return cross_entropy(label, pred, region)
    return kl_divergence(label, pred, region, mode=mode)
