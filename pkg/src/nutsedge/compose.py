"""Paste nutsedge templates onto turf backgrounds and carry their labels along."""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .annotations import (AnnotationSet, Instance, NutsedgeTemplate, Skeleton,
                          round_half_up)
from .imaging import BoundingBox, RasterImage, bbox_of_pixels
from .seeding import stage_rng


class ComposeError(ValueError):
    pass


@dataclass(frozen=True)
class ComposeConfig:
    """Recombination settings.  Densities are plants per 10**6 pixels."""

    density_min: float = 5.0
    density_max: float = 10.0
    brightness_min: float = 0.8
    brightness_max: float = 1.2
    seed: int = 0
    images_to_generate: int = 1
    min_visible_fraction: float = 0.2
    max_placement_attempts: int = 200

    def __post_init__(self):
        if not 0 < self.density_min <= self.density_max:
            raise ComposeError("need 0 < density_min <= density_max")
        if not 0 < self.brightness_min <= self.brightness_max:
            raise ComposeError("need 0 < brightness_min <= brightness_max")
        if self.images_to_generate < 0:
            raise ComposeError("images_to_generate must be >= 0")

    def count_range(self, area: int) -> tuple[int, int]:
        return (round_half_up(self.density_min * area / 1e6),
                round_half_up(self.density_max * area / 1e6))


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, s], [-s, c]])


def rigid_transform(points, theta: float, tx: float, ty: float) -> np.ndarray:
    """Apply ``[[cos, sin, tx], [-sin, cos, ty], [0, 0, 1]]`` to (N, 2) points."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    hom = np.concatenate([pts, np.ones((pts.shape[0], 1))], axis=1)
    c, s = math.cos(theta), math.sin(theta)
    mat = np.array([[c, s, tx], [-s, c, ty], [0.0, 0.0, 1.0]])
    return (hom @ mat.T)[:, :2]


def scale_value(pixels: np.ndarray, factor: float) -> np.ndarray:
    """Multiply the HSV value channel by ``factor``, clamped at 255.

    With hue and saturation held fixed, scaling V scales R, G and B by the
    same ratio, so the conversion to HSV and back collapses into one per-pixel
    multiplier ``min(factor, 255 / max(R, G, B))``.
    """
    rgb = pixels.astype(np.float64)
    vmax = rgb.max(axis=-1, keepdims=True)
    with np.errstate(divide="ignore"):
        ratio = np.where(vmax > 0, np.minimum(factor, 255.0 / np.maximum(vmax, 1e-12)), 1.0)
    return np.clip(np.rint(rgb * ratio), 0, 255).astype(np.uint8)


def clip_segment(a, b, lo, hi):
    """Liang-Barsky clip of segment a-b to the rectangle [lo, hi]; None if outside."""
    (x0, y0), (x1, y1) = a, b
    dx, dy = x1 - x0, y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0 - lo[0]), (dx, hi[0] - x0), (-dy, y0 - lo[1]), (dy, hi[1] - y0)):
        if p == 0:
            if q < 0:
                return None
            continue
        r = q / p
        if p < 0:
            t0 = max(t0, r)
        else:
            t1 = min(t1, r)
        if t0 > t1:
            return None
    # Clamp away rounding so clipped endpoints never leave the rectangle.
    def pin(x, y):
        return min(max(x, lo[0]), hi[0]), min(max(y, lo[1]), hi[1])
    return pin(x0 + t0 * dx, y0 + t0 * dy), pin(x0 + t1 * dx, y0 + t1 * dy)


def clip_polygon(poly, lo, hi) -> list[tuple[float, float]]:
    """Sutherland-Hodgman clip of a polygon to the rectangle [lo, hi]."""
    pts = [tuple(p) for p in poly]
    edges = ((0, lo[0], 1), (0, hi[0], -1), (1, lo[1], 1), (1, hi[1], -1))
    for axis, bound, sign in edges:
        if not pts:
            break
        inside = lambda p: sign * (p[axis] - bound) >= 0
        out = []
        for i, cur in enumerate(pts):
            prev = pts[i - 1]
            if inside(cur):
                if not inside(prev):
                    out.append(_cut(prev, cur, axis, bound))
                out.append(cur)
            elif inside(prev):
                out.append(_cut(prev, cur, axis, bound))
        pts = out
    return pts


def _cut(p, q, axis, bound):
    t = (bound - p[axis]) / (q[axis] - p[axis])
    pt = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
    pt[axis] = bound
    return (pt[0], pt[1])


def _clip_skeleton(skel_arr: np.ndarray, box: BoundingBox, width: int, height: int) -> Skeleton | None:
    lo = (max(box.u_left - 0.5, 0.0), max(box.v_bottom - 0.5, 0.0))
    hi = (min(box.u_right + 0.5, width - 1.0), min(box.v_top + 0.5, height - 1.0))
    kept = []
    for u, v, p, q in skel_arr:
        seg = clip_segment((u, v), (p, q), lo, hi)
        if seg is not None:
            kept.append([seg[0][0], seg[0][1], seg[1][0], seg[1][1]])
    return Skeleton.from_array(kept) if kept else None


@dataclass(frozen=True, eq=False)
class PlacedInstance:
    """A template pasted into an output image.

    ``support`` and ``box`` are the visible (clipped) mask pixels and their
    box; ``full_box`` bounds the pre-clip support.  ``skeleton`` is clipped to
    the visible box, ``full_skeleton`` is the unclipped transform.
    """

    template_id: int
    template_name: str
    theta: float
    tx: float
    ty: float
    support: np.ndarray
    box: BoundingBox
    full_box: BoundingBox
    full_area: int
    full_skeleton: Skeleton
    skeleton: Skeleton | None
    polygon: tuple[tuple[float, float], ...]


@dataclass(frozen=True, eq=False)
class ComposedImage:
    image: RasterImage
    annotations: AnnotationSet
    instances: list
    provenance: np.ndarray    # (H, W, 2) int32: instance index, flat template pixel; -1 = background
    brightness: float


def _rasterize_placement(tpl: NutsedgeTemplate, theta: float, tx: float, ty: float):
    """Output pixels covered by the rotated mask, via nearest-neighbor inverse mapping.

    Returns (us, vs, template_flat_index) without clipping.
    """
    h, w = tpl.mask.shape
    center = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    corners = np.array([[-0.5, -0.5], [w - 0.5, -0.5], [-0.5, h - 0.5], [w - 0.5, h - 0.5]]) - center
    rot = rotation_matrix(theta)
    moved = corners @ rot.T + np.array([tx, ty])
    u0, v0 = np.floor(moved.min(axis=0)).astype(int) - 1
    u1, v1 = np.ceil(moved.max(axis=0)).astype(int) + 1
    vv, uu = np.mgrid[v0:v1 + 1, u0:u1 + 1]
    q = np.stack([uu.ravel() - tx, vv.ravel() - ty], axis=1)
    back = q @ rot + center          # R^T applied row-wise
    iu = np.rint(back[:, 0]).astype(np.int64)
    iv = np.rint(back[:, 1]).astype(np.int64)
    ok = (iu >= 0) & (iu < w) & (iv >= 0) & (iv < h)
    ok[ok] = tpl.mask[iv[ok], iu[ok]]
    return uu.ravel()[ok], vv.ravel()[ok], iv[ok] * w + iu[ok]


def _transform_local(points, tpl: NutsedgeTemplate, theta, tx, ty) -> np.ndarray:
    h, w = tpl.mask.shape
    center = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    return rigid_transform(np.asarray(points, dtype=np.float64).reshape(-1, 2) - center, theta, tx, ty)


def place_template(tpl: NutsedgeTemplate, template_id: int, theta: float, tx: float, ty: float,
                   width: int, height: int):
    """Geometry of one placement; returns (PlacedInstance, template flat indices) or None if empty."""
    us, vs, src = _rasterize_placement(tpl, theta, tx, ty)
    if us.size == 0:
        return None
    full_box = bbox_of_pixels(np.stack([us, vs], axis=1))
    vis = (us >= 0) & (us < width) & (vs >= 0) & (vs < height)
    if not vis.any():
        return None
    support = np.stack([us[vis], vs[vis]], axis=1)
    box = bbox_of_pixels(support)

    ends = _transform_local(tpl.skeleton.endpoints(), tpl, theta, tx, ty)
    # Rounding in the mask resampling can leave an endpoint a fraction of a
    # pixel outside the support box; pull it back onto the box edge.
    ends[:, 0] = np.clip(ends[:, 0], full_box.u_left - 0.5, full_box.u_right + 0.5)
    ends[:, 1] = np.clip(ends[:, 1], full_box.v_bottom - 0.5, full_box.v_top + 0.5)
    full_skel = Skeleton.from_array(ends.reshape(-1, 4))
    poly = _transform_local(tpl.polygon, tpl, theta, tx, ty)
    poly = clip_polygon(poly.tolist(), (0.0, 0.0), (width - 1.0, height - 1.0))
    inst = PlacedInstance(template_id=template_id, template_name=tpl.name, theta=theta, tx=tx, ty=ty,
                          support=support, box=box, full_box=full_box, full_area=int(us.size),
                          full_skeleton=full_skel, skeleton=_clip_skeleton(full_skel.as_array(), box, width, height),
                          polygon=tuple((float(x), float(y)) for x, y in poly))
    return inst, src[vis]


def compose_image(background: RasterImage, templates: Sequence[NutsedgeTemplate], cfg: ComposeConfig,
                  rng: np.random.Generator, image_path: str = "") -> ComposedImage:
    if not templates:
        raise ComposeError("template library is empty")
    width, height = background.width, background.height
    for tpl in templates:
        h, w = tpl.mask.shape
        if w > width or h > height:
            raise ComposeError(f"template {tpl.name!r} ({w}x{h}) larger than background {width}x{height}")
    lo, hi = cfg.count_range(width * height)
    n = int(rng.integers(lo, hi + 1))
    canvas = np.array(background.pixels)
    prov = np.full((height, width, 2), -1, dtype=np.int32)
    placed: list[PlacedInstance] = []
    for k in range(n):
        tid = int(rng.integers(len(templates)))
        tpl = templates[tid]
        need = cfg.min_visible_fraction * int(tpl.mask.sum())
        for _ in range(cfg.max_placement_attempts):
            theta = float(rng.uniform(0.0, 2 * math.pi))
            tx = float(rng.uniform(0.0, width))
            ty = float(rng.uniform(0.0, height))
            res = place_template(tpl, tid, theta, tx, ty, width, height)
            if res is not None and res[0].support.shape[0] >= need:
                break
        else:
            raise ComposeError(f"could not place template {tpl.name!r} with enough visible area")
        inst, src = res
        su, sv = inst.support[:, 0], inst.support[:, 1]
        canvas[sv, su] = tpl.patch.reshape(-1, 3)[src]
        prov[sv, su, 0] = k
        prov[sv, su, 1] = src
        placed.append(inst)

    factor = float(rng.uniform(cfg.brightness_min, cfg.brightness_max))
    image = RasterImage(scale_value(canvas, factor))
    ann = AnnotationSet(image_path, width, height,
                        tuple(Instance(box=p.box, skeleton=p.skeleton,
                                       polygon=p.polygon if len(p.polygon) >= 3 else None)
                              for p in placed))
    return ComposedImage(image, ann, placed, prov, factor)


# --------------------------------------------------------------------------- datasets

_WORKER_STATE: dict = {}


def _init_worker(backgrounds, templates, cfg):
    _WORKER_STATE.update(backgrounds=backgrounds, templates=templates, cfg=cfg)


def _compose_index(index: int) -> ComposedImage:
    st = _WORKER_STATE
    rng = stage_rng(st["cfg"].seed, "compose", index)
    bg = st["backgrounds"][int(rng.integers(len(st["backgrounds"])))]
    return compose_image(bg, st["templates"], st["cfg"], rng, image_path=image_name(index))


def image_name(index: int) -> str:
    return f"synth_{index:05d}.png"


def generate_dataset(backgrounds: Sequence[RasterImage], templates: Sequence[NutsedgeTemplate],
                     cfg: ComposeConfig, jobs: int = 1) -> list[ComposedImage]:
    """Compose ``cfg.images_to_generate`` images.

    Image ``i`` draws from its own stream keyed on ``(seed, "compose", i)``,
    so the result does not depend on ``jobs``.
    """
    if not backgrounds:
        raise ComposeError("no background images")
    indices = range(cfg.images_to_generate)
    if jobs <= 1:
        _init_worker(backgrounds, templates, cfg)
        return [_compose_index(i) for i in indices]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                             initargs=(list(backgrounds), list(templates), cfg)) as pool:
        return list(pool.map(_compose_index, indices))


def export_coco(entries: Sequence[tuple[str, AnnotationSet]],
                areas: Sequence[Sequence[int]] | None = None) -> dict:
    """COCO-style dataset dict with one ``nutsedge`` category.

    Boxes use the inclusive-pixel convention, so ``w = u_right - u_left + 1``.
    Each annotation also carries a nonstandard ``skeleton`` list of
    ``[u, v, p, q]`` segments.  ``areas`` optionally gives per-instance mask
    pixel counts; otherwise the box area is used.
    """
    images, annotations = [], []
    seen = set()
    ann_id = 1
    for img_id, (file_name, ann) in enumerate(entries, start=1):
        if file_name in seen:
            raise ComposeError(f"duplicate image id {file_name!r}")
        seen.add(file_name)
        images.append({"id": img_id, "file_name": file_name, "width": ann.width, "height": ann.height})
        for k, inst in enumerate(ann.instances):
            b = inst.box
            seg = [[c for pt in inst.polygon for c in pt]] if inst.polygon else []
            annotations.append({
                "id": ann_id,
                "image_id": img_id,
                "category_id": 1,
                "bbox": [b.u_left, b.v_bottom, b.width, b.height],
                "area": int(areas[img_id - 1][k]) if areas is not None else b.area,
                "segmentation": seg,
                "iscrowd": 0,
                "skeleton": inst.skeleton.as_array().tolist() if inst.skeleton is not None else [],
            })
            ann_id += 1
    return {"images": images, "annotations": annotations,
            "categories": [{"id": 1, "name": "nutsedge", "supercategory": "plant"}]}


def dump_json(data, path) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1)
        fh.write("\n")
