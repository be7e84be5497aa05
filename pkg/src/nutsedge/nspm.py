"""Skeleton-based probabilistic label maps and the leaf-width scale fit."""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .annotations import AnnotationSet, LineSegment, NutsedgeTemplate, Skeleton
from .imaging import BoundingBox, FloatMap

DEFAULT_SIGMA = 12.0


class NspmError(ValueError):
    pass


def point_segment_distance(point, segment: LineSegment) -> float:
    """Euclidean distance from ``point`` (u, v) to the closed segment."""
    pu, pv = float(point[0]), float(point[1])
    du, dv = segment.p - segment.u, segment.q - segment.v
    len2 = du * du + dv * dv
    if len2 == 0.0:
        return math.hypot(pu - segment.u, pv - segment.v)
    t = ((pu - segment.u) * du + (pv - segment.v) * dv) / len2
    t = min(1.0, max(0.0, t))
    return math.hypot((pu - segment.u) - t * du, (pv - segment.v) - t * dv)


def segment_distances(us: np.ndarray, vs: np.ndarray, segments: np.ndarray) -> np.ndarray:
    """Distances from points (us, vs) to each of the (K, 4) segments; shape (K, N)."""
    us = np.asarray(us, dtype=np.float64)[None, :]
    vs = np.asarray(vs, dtype=np.float64)[None, :]
    a_u, a_v = segments[:, 0:1], segments[:, 1:2]
    d_u, d_v = segments[:, 2:3] - a_u, segments[:, 3:4] - a_v
    len2 = d_u * d_u + d_v * d_v
    with np.errstate(invalid="ignore", divide="ignore"):
        t = ((us - a_u) * d_u + (vs - a_v) * d_v) / len2
    t = np.where(len2 > 0, np.clip(t, 0.0, 1.0), 0.0)
    return np.hypot((us - a_u) - t * d_u, (vs - a_v) - t * d_v)


def _pairs(labels) -> list[tuple[BoundingBox, Skeleton]]:
    if isinstance(labels, AnnotationSet):
        return labels.skeleton_pairs()
    pairs = []
    for item in labels:
        box, skel = item
        if skel is None:
            raise NspmError(f"box {box.as_tuple()} has no skeleton")
        pairs.append((box, skel))
    return pairs


def box_response(box: BoundingBox, skeleton: Skeleton, sigma: float) -> np.ndarray:
    """Unclamped peak-normalized Gaussian sum over one box, shape (box.height, box.width)."""
    vv, uu = np.mgrid[box.v_bottom:box.v_top + 1, box.u_left:box.u_right + 1]
    d = segment_distances(uu.ravel(), vv.ravel(), skeleton.as_array())
    raw = np.exp(-0.5 * (d / sigma) ** 2).sum(axis=0)
    return raw.reshape(box.height, box.width)


def rasterize_nspm(labels, width: int, height: int, sigma: float = DEFAULT_SIGMA) -> FloatMap:
    """Label map from (box, skeleton) pairs or an :class:`AnnotationSet`.

    Inside a box, each pixel gets the sum over that box's segments of
    ``exp(-(d / sigma)**2 / 2)``.  Overlapping boxes merge by per-pixel max,
    and the result is clamped to 1.  Pixels outside every box are 0.
    """
    if not sigma > 0:
        raise NspmError("sigma must be positive")
    out = np.zeros((height, width))
    for box, skel in _pairs(labels):
        if not box.inside(width, height):
            raise NspmError(f"box {box.as_tuple()} outside {width}x{height} image")
        sl = box.slices()
        np.maximum(out[sl], box_response(box, skel, sigma), out=out[sl])
    np.minimum(out, 1.0, out=out)
    return FloatMap(out)


def fit_half_normal(distances) -> float:
    """Maximum-likelihood half-normal scale: ``sqrt(mean(d**2))``."""
    d = np.asarray(distances, dtype=np.float64)
    if d.size == 0:
        raise NspmError("no distances to fit")
    return float(np.sqrt(np.mean(d * d)))


def template_distances(tpl: NutsedgeTemplate) -> np.ndarray:
    vs, us = np.nonzero(tpl.mask)
    return segment_distances(us, vs, tpl.skeleton.as_array()).min(axis=0)


def estimate_sigma(templates: Sequence[NutsedgeTemplate] | Iterable[NutsedgeTemplate]) -> float:
    """Fit sigma to mask-pixel distances from each template's skeleton."""
    templates = list(templates)
    if not templates:
        raise NspmError("template library is empty")
    pooled = []
    for tpl in templates:
        if tpl.skeleton is None:
            raise NspmError(f"template {tpl.name!r} has no skeleton")
        pooled.append(template_distances(tpl))
    sigma = fit_half_normal(np.concatenate(pooled))
    if sigma == 0.0:
        raise NspmError("all mask pixels lie on the skeleton; sigma is degenerate")
    return sigma
