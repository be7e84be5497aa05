"""Shared generators for synthetic skeletons and maps used across tests."""

from __future__ import annotations

import numpy as np

from nutsedge.annotations import Skeleton, skeleton_pixels
from nutsedge.imaging import BoundingBox
from nutsedge.nspm import segment_distances


def _seg_separation(a: np.ndarray, b: np.ndarray) -> float:
    """Minimum distance between two segments (non-crossing case via endpoints)."""
    d1 = segment_distances(b[[0, 2]], b[[1, 3]], a[None, :]).min()
    d2 = segment_distances(a[[0, 2]], a[[1, 3]], b[None, :]).min()
    return float(min(d1, d2))


def _crosses(a: np.ndarray, b: np.ndarray) -> bool:
    def orient(p, q, r):
        return np.sign((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))
    p1, p2, q1, q2 = a[:2], a[2:], b[:2], b[2:]
    return (orient(p1, p2, q1) != orient(p1, p2, q2)) and (orient(q1, q2, p1) != orient(q1, q2, p2))


def random_skeleton_scene(rng: np.random.Generator, size: int = 160, max_segments: int = 3,
                          min_len: float = 40.0, max_len: float = 90.0, min_sep: float = 36.0,
                          pad: int = 24, attempts: int = 500):
    """Random well-separated segments inside one padded box.

    Returns ``(box, skeleton, width, height)``; every segment is at least
    ``min_len`` long and any two are at least ``min_sep`` apart.
    """
    k = int(rng.integers(1, max_segments + 1))
    segs: list[np.ndarray] = []
    lo, hi = pad, size - 1 - pad
    for _ in range(attempts):
        if len(segs) == k:
            break
        length = rng.uniform(min_len, max_len)
        theta = rng.uniform(0, np.pi)
        u0, v0 = rng.uniform(lo, hi, size=2)
        u1, v1 = u0 + length * np.cos(theta), v0 + length * np.sin(theta)
        if not (lo <= u1 <= hi and lo <= v1 <= hi):
            continue
        cand = np.round(np.array([u0, v0, u1, v1]), 2)
        if any(_crosses(cand, s) or _seg_separation(cand, s) < min_sep for s in segs):
            continue
        segs.append(cand)
    skel = Skeleton.from_array(np.array(segs))
    ends = skel.endpoints()
    box = BoundingBox(max(0, int(np.floor(ends[:, 0].min())) - pad),
                      max(0, int(np.floor(ends[:, 1].min())) - pad),
                      min(size - 1, int(np.ceil(ends[:, 0].max())) + pad),
                      min(size - 1, int(np.ceil(ends[:, 1].max())) + pad))
    return box, skel, size, size


def skeleton_pixel_mask(skel: Skeleton, w: int, h: int) -> np.ndarray:
    mask = np.zeros((h, w), dtype=bool)
    px = skeleton_pixels(skel, w, h)
    mask[px[:, 1], px[:, 0]] = True
    return mask
