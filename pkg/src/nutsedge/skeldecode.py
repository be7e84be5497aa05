"""Skeleton extraction from a probability map.

Pipeline: grayscale closing (disc dilation then disc erosion), a
border-renormalized Gaussian blur, ridge non-maximum suppression across the
structure-tensor orientation, 8-connected linking, and split-and-merge
polyline fitting.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .annotations import Skeleton
from .imaging import FloatMap


@dataclass(frozen=True)
class DecodeParams:
    dilate_radius: int = 2
    erode_radius: int = 2
    blur_sigma: float = 3.0
    nms_threshold: float = 0.3
    min_component: int = 10
    fit_tolerance: float = 2.0

    def __post_init__(self):
        if self.dilate_radius < 0 or self.erode_radius < 0:
            raise ValueError("morphology radii must be >= 0")
        if self.blur_sigma < 0:
            raise ValueError("blur_sigma must be >= 0")
        if not 0 < self.nms_threshold < 1:
            raise ValueError("nms_threshold must be in (0, 1)")


@dataclass(frozen=True, eq=False)
class DecodedSkeleton:
    pixels: np.ndarray              # (H, W) bool
    skeleton: Skeleton | None       # None when nothing survived
    components: int

    def pixel_list(self) -> np.ndarray:
        vs, us = np.nonzero(self.pixels)
        return np.stack([us, vs], axis=1)


def disc(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius * radius


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1-D Gaussian truncated at 3 sigma."""
    radius = max(1, int(math.ceil(3 * sigma)))
    x = np.arange(-radius, radius + 1)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def normalized_blur(values: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur that renormalizes the kernel where it leaves the image."""
    if sigma == 0:
        return values.copy()
    k = gaussian_kernel(sigma)
    num = ndimage.correlate1d(values, k, axis=0, mode="constant", cval=0.0)
    num = ndimage.correlate1d(num, k, axis=1, mode="constant", cval=0.0)
    ones = np.ones_like(values)
    den = ndimage.correlate1d(ones, k, axis=0, mode="constant", cval=0.0)
    den = ndimage.correlate1d(den, k, axis=1, mode="constant", cval=0.0)
    return num / den


def smooth_map(fmap: FloatMap, params: DecodeParams = DecodeParams()) -> FloatMap:
    vals = np.array(fmap.values)
    if params.dilate_radius > 0:
        vals = ndimage.grey_dilation(vals, footprint=disc(params.dilate_radius), mode="nearest")
    if params.erode_radius > 0:
        vals = ndimage.grey_erosion(vals, footprint=disc(params.erode_radius), mode="nearest")
    vals = normalized_blur(vals, params.blur_sigma)
    return FloatMap(np.clip(vals, 0.0, 1.0))


def ridge_normals(values: np.ndarray, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """Unit vectors (nu, nv) across the ridge: the dominant structure-tensor eigenvector."""
    gv, gu = np.gradient(values)
    juu = normalized_blur(gu * gu, sigma)
    jvv = normalized_blur(gv * gv, sigma)
    juv = normalized_blur(gu * gv, sigma)
    angle = 0.5 * np.arctan2(2 * juv, juu - jvv)
    return np.cos(angle), np.sin(angle)


def _bilinear(values: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return ndimage.map_coordinates(values, [v, u], order=1, mode="constant", cval=0.0)


def nms_mask(values: np.ndarray, params: DecodeParams, normals=None) -> np.ndarray:
    """Pixels above threshold that peak across the local ridge direction.

    A pixel must beat the interpolated neighbor one pixel along the normal and
    be no lower than the one on the opposite side, so a two-pixel plateau
    keeps exactly one pixel.
    """
    nu, nv = normals if normals is not None else ridge_normals(values, max(params.blur_sigma, 1.0))
    vv, uu = np.mgrid[0:values.shape[0], 0:values.shape[1]].astype(np.float64)
    ahead = _bilinear(values, uu + nu, vv + nv)
    behind = _bilinear(values, uu - nu, vv - nv)
    return (values >= params.nms_threshold) & (values > ahead) & (values >= behind)


# --------------------------------------------------------------------------- vectorization

_NEIGHBORS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def _bfs(start, members: set) -> dict:
    prev = {start: None}
    queue = deque([start])
    last = start
    while queue:
        cur = queue.popleft()
        last = cur
        for dv, du in _NEIGHBORS:
            nxt = (cur[0] + dv, cur[1] + du)
            if nxt in members and nxt not in prev:
                prev[nxt] = cur
                queue.append(nxt)
    prev["__last__"] = last
    return prev


def longest_path(pixels: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Approximate longest geodesic path in an 8-connected pixel set (double BFS)."""
    members = set(pixels)
    a = _bfs(min(pixels), members)["__last__"]
    tree = _bfs(a, members)
    node = tree["__last__"]
    path = []
    while node is not None:
        path.append(node)
        node = tree[node]
    return path


def _point_line_dev(pts: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    n = math.hypot(d[0], d[1])
    if n == 0:
        return np.hypot(pts[:, 0] - a[0], pts[:, 1] - a[1])
    return np.abs(d[0] * (pts[:, 1] - a[1]) - d[1] * (pts[:, 0] - a[0])) / n


def split_and_merge(path: np.ndarray, tol: float) -> list[int]:
    """Vertex indices of a polyline approximating ``path`` within ``tol``."""
    def split(i, j):
        if j - i < 2:
            return [i, j]
        dev = _point_line_dev(path[i + 1:j], path[i], path[j])
        k = int(np.argmax(dev))
        if dev[k] <= tol:
            return [i, j]
        m = i + 1 + k
        return split(i, m)[:-1] + split(m, j)

    verts = split(0, len(path) - 1)
    merged = True
    while merged and len(verts) > 2:
        merged = False
        for t in range(1, len(verts) - 1):
            i, j = verts[t - 1], verts[t + 1]
            if np.all(_point_line_dev(path[i + 1:j], path[i], path[j]) <= tol):
                del verts[t]
                merged = True
                break
    return verts


def vectorize_component(pixels: np.ndarray, tol: float, min_size: int) -> list[list[float]]:
    """Segments ``[u, v, p, q]`` covering one connected component.

    The longest path is fitted first; pixels farther than ``tol`` from the
    fitted segments are regrouped into sub-components and fitted in turn.
    """
    segments: list[list[float]] = []
    pending = [pixels]
    while pending:
        comp = pending.pop()
        if comp.shape[0] < max(min_size, 2):
            continue
        path = longest_path([(int(v), int(u)) for u, v in comp])
        pts = np.array([(u, v) for v, u in path], dtype=np.float64)
        if len(pts) < 2:
            continue
        verts = split_and_merge(pts, tol)
        new = [[*pts[a], *pts[b]] for a, b in zip(verts, verts[1:])]
        segments.extend(new)
        near = np.zeros(comp.shape[0], dtype=bool)
        for s in new:
            near |= _segment_dist(comp, s) <= tol + 1.0
        rest = comp[~near]
        if rest.shape[0] >= min_size:
            grid = np.zeros((rest[:, 1].max() + 1, rest[:, 0].max() + 1), dtype=bool)
            grid[rest[:, 1], rest[:, 0]] = True
            labels, n = ndimage.label(grid, structure=np.ones((3, 3)))
            for lab in range(1, n + 1):
                vs, us = np.nonzero(labels == lab)
                pending.append(np.stack([us, vs], axis=1))
    return segments


def _segment_dist(pts: np.ndarray, seg) -> np.ndarray:
    a = np.array(seg[:2])
    d = np.array(seg[2:]) - a
    len2 = d @ d
    rel = pts - a
    t = np.clip(rel @ d / len2, 0, 1) if len2 > 0 else np.zeros(len(pts))
    return np.hypot(rel[:, 0] - t * d[0], rel[:, 1] - t * d[1])


def nms_skeleton(fmap: FloatMap, params: DecodeParams = DecodeParams()) -> DecodedSkeleton:
    """Thin an already smoothed map to a skeleton pixel mask and line segments."""
    normals = ridge_normals(fmap.values, max(params.blur_sigma, 1.0))
    keep = nms_mask(fmap.values, params, normals)
    labels, n = ndimage.label(keep, structure=np.ones((3, 3)))
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    mask = np.zeros_like(keep)
    segments: list[list[float]] = []
    comps = 0
    for lab in range(1, n + 1):
        if sizes[lab] < params.min_component:
            continue
        comps += 1
        sel = labels == lab
        mask |= sel
        vs, us = np.nonzero(sel)
        segments.extend(vectorize_component(np.stack([us, vs], axis=1), params.fit_tolerance,
                                            params.min_component))
    skel = Skeleton.from_array(segments) if segments else None
    return DecodedSkeleton(mask, skel, comps)


def decode(fmap: FloatMap, params: DecodeParams = DecodeParams()) -> DecodedSkeleton:
    return nms_skeleton(smooth_map(fmap, params), params)
