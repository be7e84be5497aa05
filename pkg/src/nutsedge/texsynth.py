"""Per-pixel non-parametric turf texture synthesis.

Output pixels are grown ring by ring around a seed block copied from a
source patch.  Each new pixel compares its already-filled neighborhood with
the neighborhood of every source pixel (Gaussian-weighted SSD) and copies
the center of a uniformly chosen candidate among those within
``(1 + epsilon)`` of the best distance.  Source patches are mirror-padded so
every source pixel is a candidate, which keeps the per-pixel cost at
``n_source * s**2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numba import njit

from .annotations import BackgroundPatch
from .imaging import RasterImage


class SynthesisError(ValueError):
    pass


@dataclass(frozen=True)
class SynthParams:
    neighborhood: int = 25
    epsilon: float = 0.1
    width: int = 64
    height: int = 64
    seed: int = 0

    def __post_init__(self):
        s = self.neighborhood
        if s < 3 or s % 2 == 0:
            raise SynthesisError(f"neighborhood must be odd and >= 3, got {s}")
        if not self.epsilon >= 0:
            raise SynthesisError("epsilon must be >= 0")
        if self.width < 1 or self.height < 1:
            raise SynthesisError("output must have positive area")
        if self.width < s or self.height < s:
            raise SynthesisError(f"output {self.width}x{self.height} smaller than window {s}")

    @property
    def half(self) -> int:
        return self.neighborhood // 2


def gaussian_window(size: int) -> np.ndarray:
    sigma = size / 6.4
    r = np.arange(size) - size // 2
    g = np.exp(-(r ** 2) / (2 * sigma ** 2))
    return np.outer(g, g)


def _as_arrays(patches) -> list[np.ndarray]:
    out = []
    for p in patches:
        if isinstance(p, BackgroundPatch):
            p = p.patch
        if isinstance(p, RasterImage):
            p = p.pixels
        out.append(np.asarray(p, dtype=np.uint8))
    return out


def _check_patches(arrays: list[np.ndarray], half: int) -> None:
    if not arrays:
        raise SynthesisError("need at least one background patch")
    for a in arrays:
        if a.ndim != 3 or a.shape[2] != 3:
            raise SynthesisError("patches must be RGB")
        if min(a.shape[:2]) < half + 1:
            raise SynthesisError(f"patch {a.shape[1]}x{a.shape[0]} too small for half-window {half}")


def seed_block_size(arrays: Sequence[np.ndarray], s: int) -> int:
    return min(s, *(min(a.shape[:2]) for a in arrays))


def seed_block_origin(width: int, height: int, block: int) -> tuple[int, int]:
    """(row, col) of the top-left corner of the centered seed block."""
    return (height - block) // 2, (width - block) // 2


def fill_order(width: int, height: int, block: int) -> np.ndarray:
    """(N, 2) array of (row, col) outside the seed block, ring by ring.

    Rings are Chebyshev distance from the seed block; raster order inside a ring.
    """
    top, left = seed_block_origin(width, height, block)
    rows, cols = np.mgrid[0:height, 0:width]
    dy = np.maximum(np.maximum(top - rows, rows - (top + block - 1)), 0)
    dx = np.maximum(np.maximum(left - cols, cols - (left + block - 1)), 0)
    ring = np.maximum(dx, dy).ravel()
    sel = ring > 0
    order = np.lexsort((cols.ravel()[sel], rows.ravel()[sel], ring[sel]))
    return np.stack([rows.ravel()[sel][order], cols.ravel()[sel][order]], axis=1)


def _source_bank(arrays: list[np.ndarray], half: int):
    """Stack mirror-padded patches into one canvas; return canvas and candidate centers."""
    padded = [np.pad(a.astype(np.float64), ((half, half), (half, half), (0, 0)), mode="symmetric")
              for a in arrays]
    height = sum(p.shape[0] for p in padded)
    width = max(p.shape[1] for p in padded)
    canvas = np.zeros((height, width, 3))
    cv, cu = [], []
    top = 0
    for a, p in zip(arrays, padded):
        canvas[top:top + p.shape[0], :p.shape[1]] = p
        rr, cc = np.mgrid[0:a.shape[0], 0:a.shape[1]]
        cv.append((rr + top + half).ravel())
        cu.append((cc + half).ravel())
        top += p.shape[0]
    return canvas, np.concatenate(cv).astype(np.int64), np.concatenate(cu).astype(np.int64)


@njit(cache=True)
def _grow(out, filled, order, canvas, cand_v, cand_u, gauss, half, eps, draws):
    height, width = filled.shape
    n_cand = cand_v.size
    size = 2 * half + 1
    dist = np.empty(n_cand)
    off_v = np.empty(size * size, np.int64)
    off_u = np.empty(size * size, np.int64)
    wts = np.empty(size * size)
    for k in range(order.shape[0]):
        v = order[k, 0]
        u = order[k, 1]
        m = 0
        for dv in range(-half, half + 1):
            y = v + dv
            if y < 0 or y >= height:
                continue
            for du in range(-half, half + 1):
                x = u + du
                if x < 0 or x >= width or not filled[y, x]:
                    continue
                off_v[m] = dv
                off_u[m] = du
                wts[m] = gauss[dv + half, du + half]
                m += 1
        dmin = np.inf
        for c in range(n_cand):
            cy = cand_v[c]
            cx = cand_u[c]
            acc = 0.0
            for j in range(m):
                y = v + off_v[j]
                x = u + off_u[j]
                sy = cy + off_v[j]
                sx = cx + off_u[j]
                d0 = out[y, x, 0] - canvas[sy, sx, 0]
                d1 = out[y, x, 1] - canvas[sy, sx, 1]
                d2 = out[y, x, 2] - canvas[sy, sx, 2]
                acc += wts[j] * (d0 * d0 + d1 * d1 + d2 * d2)
            dist[c] = acc
            if acc < dmin:
                dmin = acc
        if np.isinf(eps):
            thr = np.inf
        else:
            thr = dmin * (1.0 + eps)
        count = 0
        for c in range(n_cand):
            if dist[c] <= thr:
                count += 1
        pick = int(draws[k] * count)
        if pick >= count:
            pick = count - 1
        seen = 0
        for c in range(n_cand):
            if dist[c] <= thr:
                if seen == pick:
                    out[v, u, 0] = canvas[cand_v[c], cand_u[c], 0]
                    out[v, u, 1] = canvas[cand_v[c], cand_u[c], 1]
                    out[v, u, 2] = canvas[cand_v[c], cand_u[c], 2]
                    break
                seen += 1
        filled[v, u] = True


def synthesize_background(patches, params: SynthParams) -> RasterImage:
    """Grow a ``params.width`` x ``params.height`` turf image from ``patches``.

    Deterministic for a given ``params.seed``.  Runs in
    O(width * height * n_source_pixels * s**2).
    """
    arrays = _as_arrays(patches)
    half = params.half
    _check_patches(arrays, half)
    rng = np.random.default_rng(params.seed)
    block = seed_block_size(arrays, params.neighborhood)
    src = arrays[int(rng.integers(len(arrays)))]
    sy = int(rng.integers(src.shape[0] - block + 1))
    sx = int(rng.integers(src.shape[1] - block + 1))

    out = np.zeros((params.height, params.width, 3))
    filled = np.zeros((params.height, params.width), dtype=bool)
    top, left = seed_block_origin(params.width, params.height, block)
    out[top:top + block, left:left + block] = src[sy:sy + block, sx:sx + block]
    filled[top:top + block, left:left + block] = True

    order = fill_order(params.width, params.height, block)
    draws = rng.random(order.shape[0])
    canvas, cand_v, cand_u = _source_bank(arrays, half)
    _grow(out, filled, order, canvas, cand_v, cand_u, gaussian_window(params.neighborhood),
          half, float(params.epsilon), draws)
    return RasterImage(out.astype(np.uint8))


@dataclass
class SynthesisReport:
    checked: int = 0
    violations: list = field(default_factory=list)
    foreign_colors: int = 0
    seed_block_found: bool = True

    @property
    def ok(self) -> bool:
        return not self.violations and self.foreign_colors == 0 and self.seed_block_found


def _block_occurs(arrays, block_px: np.ndarray) -> bool:
    b = block_px.shape[0]
    for a in arrays:
        windows = np.lib.stride_tricks.sliding_window_view(a, (b, b, 3))[:, :, 0]
        if np.any(np.all(windows == block_px, axis=(2, 3, 4))):
            return True
    return False


def verify_synthesis(patches, output: RasterImage, params: SynthParams,
                     rel_tol: float = 1e-9) -> SynthesisReport:
    """Re-check every synthesized pixel by exhaustive candidate search.

    For each pixel, in the synthesizer's fill order, recompute the distance of
    every source neighborhood to the output neighborhood as it stood before
    the pixel was filled, and require that some candidate within
    ``(1 + epsilon) * d_min`` carries exactly the output color.  Violations are
    listed as ``(row, col, best_admissible_ratio)``.
    """
    arrays = _as_arrays(patches)
    half = params.half
    s = params.neighborhood
    _check_patches(arrays, half)
    report = SynthesisReport()
    out = output.pixels.astype(np.float64)
    height, width = out.shape[:2]

    windows, centers = [], []
    for a in arrays:
        p = np.pad(a.astype(np.float64), ((half, half), (half, half), (0, 0)), mode="symmetric")
        w = np.lib.stride_tricks.sliding_window_view(p, (s, s, 3))[:, :, 0]
        windows.append(w.reshape(-1, s, s, 3))
        centers.append(a.reshape(-1, 3))
    windows = np.concatenate(windows)
    centers = np.concatenate(centers)

    palette = {tuple(c) for c in centers.astype(np.uint8).tolist()}
    report.foreign_colors = sum(tuple(px) not in palette
                                for px in output.pixels.reshape(-1, 3).tolist())

    block = seed_block_size(arrays, s)
    top, left = seed_block_origin(width, height, block)
    report.seed_block_found = _block_occurs(arrays, output.pixels[top:top + block, left:left + block])

    filled = np.zeros((height + 2 * half, width + 2 * half), dtype=bool)
    filled[top + half:top + half + block, left + half:left + half + block] = True
    out_pad = np.zeros((height + 2 * half, width + 2 * half, 3))
    out_pad[half:half + height, half:half + width] = out
    gauss = gaussian_window(s)
    eps = params.epsilon

    for v, u in fill_order(width, height, block):
        known = filled[v:v + s, u:u + s]
        ys, xs = np.nonzero(known)
        target = out_pad[v:v + s, u:u + s][ys, xs]            # (m, 3)
        cand = windows[:, ys, xs]                             # (N, m, 3)
        d = ((cand - target) ** 2).sum(axis=2) @ gauss[ys, xs]
        dmin = d.min()
        color_match = np.all(centers == out[v, u], axis=1)
        if math.isinf(eps):
            admissible = color_match
        else:
            thr = dmin * (1.0 + eps)
            admissible = color_match & (d <= thr + rel_tol * max(thr, 1.0))
        report.checked += 1
        if not admissible.any():
            ratio = float(d[color_match].min() / dmin) if color_match.any() and dmin > 0 else math.inf
            report.violations.append((int(v), int(u), ratio))
        filled[v + half, u + half] = True
    return report
