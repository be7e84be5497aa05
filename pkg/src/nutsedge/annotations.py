"""Human labels: labelme ingestion, template/background libraries, sampling."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .imaging import (BoundingBox, PathLike, RasterImage, bbox_of_pixels, load_png,
                      save_png)

BACKGROUND_LABEL = "background"
NUTSEDGE_LABEL = "nutsedge"
SHAPE_TYPES = ("rectangle", "polygon", "line", "linestrip")


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True)
class LineSegment:
    """Segment between endpoints (u, v) and (p, q), in pixel coordinates."""

    u: float
    v: float
    p: float
    q: float

    @property
    def length(self) -> float:
        return math.hypot(self.p - self.u, self.q - self.v)

    def endpoints(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return (self.u, self.v), (self.p, self.q)


@dataclass(frozen=True)
class Skeleton:
    """A plant as a cluster of leaf-midrib line segments."""

    segments: tuple[LineSegment, ...]

    def __post_init__(self):
        segs = tuple(self.segments)
        if len(segs) < 1:
            raise AnnotationError("a skeleton needs at least one segment")
        object.__setattr__(self, "segments", segs)

    @classmethod
    def from_array(cls, arr) -> "Skeleton":
        arr = np.asarray(arr, dtype=np.float64).reshape(-1, 4)
        return cls(tuple(LineSegment(*map(float, row)) for row in arr))

    def as_array(self) -> np.ndarray:
        """(K, 4) array of ``[u, v, p, q]`` rows."""
        return np.array([[s.u, s.v, s.p, s.q] for s in self.segments], dtype=np.float64)

    def endpoints(self) -> np.ndarray:
        """(2K, 2) array of all endpoints."""
        return self.as_array().reshape(-1, 2)

    def translated(self, du: float, dv: float) -> "Skeleton":
        return Skeleton.from_array(self.as_array() + np.array([du, dv, du, dv]))

    def to_json(self) -> list:
        return [[[s.u, s.v], [s.p, s.q]] for s in self.segments]

    @classmethod
    def from_json(cls, data) -> "Skeleton":
        return cls(tuple(LineSegment(float(a[0]), float(a[1]), float(b[0]), float(b[1])) for a, b in data))


@dataclass(frozen=True)
class Instance:
    """One labeled plant: a box, optionally its skeleton and outline polygon."""

    box: BoundingBox
    skeleton: Skeleton | None = None
    polygon: tuple[tuple[float, float], ...] | None = None
    label: str = NUTSEDGE_LABEL


@dataclass(frozen=True)
class AnnotationSet:
    image_path: str
    width: int
    height: int
    instances: tuple[Instance, ...] = ()
    background: tuple[BoundingBox, ...] = ()

    @property
    def boxes(self) -> list[BoundingBox]:
        return [inst.box for inst in self.instances]

    @property
    def skeletons(self) -> list[Skeleton | None]:
        return [inst.skeleton for inst in self.instances]

    def skeleton_pairs(self) -> list[tuple[BoundingBox, Skeleton]]:
        return [(i.box, i.skeleton) for i in self.instances if i.skeleton is not None]


@dataclass(frozen=True)
class BackgroundPatch:
    patch: RasterImage
    source: str = ""


# --------------------------------------------------------------------------- labelme

def _check_point(x: float, y: float, width: int, height: int, what: str) -> tuple[float, float]:
    # labelme points live on the canvas [0, W] x [0, H]; the far edge maps to the last pixel.
    if not (math.isfinite(x) and math.isfinite(y)):
        raise AnnotationError(f"{what}: non-finite coordinate")
    if x < 0 or y < 0 or x > width or y > height:
        raise AnnotationError(f"{what}: point ({x}, {y}) outside {width}x{height} image")
    return min(x, width - 1.0), min(y, height - 1.0)


def _box_from_points(pts: Sequence[tuple[float, float]]) -> BoundingBox:
    us = [p[0] for p in pts]
    vs = [p[1] for p in pts]
    return BoundingBox(round_half_up(min(us)), round_half_up(min(vs)),
                       round_half_up(max(us)), round_half_up(max(vs)))


def parse_labelme(doc) -> AnnotationSet:
    """Build an :class:`AnnotationSet` from a labelme document.

    ``doc`` may be a parsed dict, a JSON string, or a path to a JSON file.
    Rectangles become boxes (label ``background`` marks turf patches),
    polygons become template outlines, and line/linestrip shapes become
    skeleton segments attached to the smallest box that contains them.
    """
    if isinstance(doc, Path) or (isinstance(doc, str) and not doc.lstrip().startswith("{")):
        doc = Path(doc).read_text()
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise AnnotationError(f"malformed JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise AnnotationError("labelme document must be a JSON object")
    try:
        width = int(doc["imageWidth"])
        height = int(doc["imageHeight"])
        image_path = str(doc.get("imagePath", ""))
        shapes = doc["shapes"]
    except (KeyError, TypeError, ValueError) as exc:
        raise AnnotationError(f"missing or invalid labelme field: {exc}") from exc
    if width < 1 or height < 1:
        raise AnnotationError("image dimensions must be positive")

    boxes: list[tuple[BoundingBox, str, object]] = []
    polygons: list[tuple[tuple[tuple[float, float], ...], str, object]] = []
    strokes: list[tuple[list[LineSegment], object]] = []
    background: list[BoundingBox] = []
    for idx, shape in enumerate(shapes):
        try:
            kind = shape.get("shape_type") or "polygon"
            label = str(shape.get("label", NUTSEDGE_LABEL))
            group = shape.get("group_id")
            raw = [(float(x), float(y)) for x, y in shape["points"]]
        except (AttributeError, KeyError, TypeError, ValueError) as exc:
            raise AnnotationError(f"shape {idx}: malformed ({exc})") from exc
        if kind not in SHAPE_TYPES:
            raise AnnotationError(f"shape {idx}: unsupported shape_type {kind!r}")
        pts = [_check_point(x, y, width, height, f"shape {idx}") for x, y in raw]
        if kind == "rectangle":
            if len(pts) != 2:
                raise AnnotationError(f"shape {idx}: rectangle needs 2 points")
            box = _box_from_points(pts)
            if label.lower() == BACKGROUND_LABEL:
                background.append(box)
            else:
                boxes.append((box, label, group))
        elif kind == "polygon":
            if len(pts) < 3:
                raise AnnotationError(f"shape {idx}: polygon needs at least 3 points")
            polygons.append((tuple(pts), label, group))
        else:
            if len(pts) < 2 or (kind == "line" and len(pts) != 2):
                raise AnnotationError(f"shape {idx}: bad point count for {kind}")
            strokes.append(([LineSegment(a[0], a[1], b[0], b[1]) for a, b in zip(pts, pts[1:])], group))

    # Polygons without a grouped rectangle get their vertex hull as box.
    slots: list[dict] = [{"box": b, "label": lab, "group": g, "segments": [], "polygon": None}
                         for b, lab, g in boxes]
    for poly, lab, g in polygons:
        # A rectangle sharing the polygon's group_id supplies the box.
        twin = next((slot for slot in slots if g is not None and slot["group"] == g
                     and slot["polygon"] is None), None)
        if twin is not None:
            twin["polygon"] = poly
            continue
        slots.append({"box": _box_from_points(poly), "label": lab, "group": g, "segments": [],
                      "polygon": poly})

    for segs, group in strokes:
        ends = [pt for s in segs for pt in s.endpoints()]
        owners = [i for i, slot in enumerate(slots)
                  if all(slot["box"].contains_point(u, v, margin=0.5) for u, v in ends)]
        if not owners:
            raise AnnotationError("skeleton stroke has no enclosing box")
        # An explicit labelme group_id wins over the smallest-box rule.
        grouped = [i for i in owners if group is not None and slots[i]["group"] == group]
        if grouped:
            owners = grouped
        best = min(owners, key=lambda i: (slots[i]["box"].area, i))
        slots[best]["segments"].extend(segs)

    instances = tuple(
        Instance(box=slot["box"],
                 skeleton=Skeleton(tuple(slot["segments"])) if slot["segments"] else None,
                 polygon=slot["polygon"], label=slot["label"])
        for slot in slots)
    return AnnotationSet(image_path, width, height, instances, tuple(background))


def to_labelme(ann: AnnotationSet) -> dict:
    """Serialize to a labelme document that :func:`parse_labelme` reads back identically."""
    shapes = []
    for gid, inst in enumerate(ann.instances):
        b = inst.box
        shapes.append({"label": inst.label,
                       "points": [[b.u_left, b.v_bottom], [b.u_right, b.v_top]],
                       "group_id": gid, "shape_type": "rectangle"})
        if inst.polygon is not None:
            shapes.append({"label": inst.label, "points": [list(p) for p in inst.polygon],
                           "group_id": gid, "shape_type": "polygon"})
        if inst.skeleton is not None:
            for seg in inst.skeleton.segments:
                shapes.append({"label": inst.label, "points": [[seg.u, seg.v], [seg.p, seg.q]],
                               "group_id": gid, "shape_type": "line"})
    for b in ann.background:
        shapes.append({"label": BACKGROUND_LABEL, "points": [[b.u_left, b.v_bottom], [b.u_right, b.v_top]],
                       "shape_type": "rectangle"})
    return {"version": "5.0.1", "flags": {}, "shapes": shapes, "imagePath": ann.image_path,
            "imageData": None, "imageHeight": ann.height, "imageWidth": ann.width}


# --------------------------------------------------------------------------- polygons

def _segments_cross(a, b, c, d) -> bool:
    def orient(p, q, r):
        val = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
        return 0 if val == 0 else (1 if val > 0 else -1)

    def on_seg(p, q, r):
        return min(p[0], r[0]) <= q[0] <= max(p[0], r[0]) and min(p[1], r[1]) <= q[1] <= max(p[1], r[1])

    o1, o2, o3, o4 = orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b)
    if o1 != o2 and o3 != o4:
        return True
    return ((o1 == 0 and on_seg(a, c, b)) or (o2 == 0 and on_seg(a, d, b))
            or (o3 == 0 and on_seg(c, a, d)) or (o4 == 0 and on_seg(c, b, d)))


def polygon_is_simple(polygon: Sequence[tuple[float, float]]) -> bool:
    """True when no two non-adjacent edges touch."""
    pts = [tuple(map(float, p)) for p in polygon]
    n = len(pts)
    if n < 3:
        return False
    edges = [(pts[i], pts[(i + 1) % n]) for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(*edges[i], *edges[j]):
                return False
    return True


def rasterize_polygon(polygon: Sequence[tuple[float, float]], width: int, height: int) -> np.ndarray:
    """Even-odd fill of pixel centers, as a boolean (H, W) mask.

    Scanline algorithm: each row's edge crossings are sorted and the pixel
    centers between alternate pairs are set.
    """
    pts = np.asarray(polygon, dtype=np.float64)
    xs, ys = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(xs, -1), np.roll(ys, -1)
    mask = np.zeros((height, width), dtype=bool)
    v_lo = max(0, int(math.floor(ys.min())))
    v_hi = min(height - 1, int(math.ceil(ys.max())))
    for v in range(v_lo, v_hi + 1):
        crosses = (ys > v) != (yn > v)
        if not crosses.any():
            continue
        xi, yi, xj, yj = xs[crosses], ys[crosses], xn[crosses], yn[crosses]
        x_int = np.sort(xi + (v - yi) * (xj - xi) / (yj - yi))
        for a, b in zip(x_int[0::2], x_int[1::2]):
            # centers u with a <= u < b
            u0 = max(0, int(math.ceil(a)))
            u1 = min(width - 1, int(math.ceil(b)) - 1)
            if u1 >= u0:
                mask[v, u0:u1 + 1] ^= True
    return mask


# --------------------------------------------------------------------------- templates

@dataclass(frozen=True, eq=False)
class NutsedgeTemplate:
    """A plant cutout.

    ``patch`` and ``mask`` cover exactly the template box; ``polygon`` and
    ``skeleton`` are in the same crop-local frame, whose (0, 0) sits at
    ``origin`` in the source image.
    """

    patch: np.ndarray            # (h, w, 3) uint8, zero outside the mask
    mask: np.ndarray             # (h, w) bool
    polygon: tuple[tuple[float, float], ...]
    skeleton: Skeleton
    origin: tuple[int, int] = (0, 0)
    name: str = ""

    @property
    def box(self) -> BoundingBox:
        """Template box in source-image coordinates."""
        h, w = self.mask.shape
        return BoundingBox(self.origin[0], self.origin[1], self.origin[0] + w - 1, self.origin[1] + h - 1)

    @property
    def local_box(self) -> BoundingBox:
        h, w = self.mask.shape
        return BoundingBox(0, 0, w - 1, h - 1)

    def support(self) -> np.ndarray:
        """(N, 2) array of mask pixels as (u, v) in the local frame."""
        vs, us = np.nonzero(self.mask)
        return np.stack([us, vs], axis=1)


def extract_template(image: RasterImage, polygon, skeleton: Skeleton, name: str = "") -> NutsedgeTemplate:
    poly = tuple((float(x), float(y)) for x, y in polygon)
    if len(poly) < 3:
        raise AnnotationError("template polygon needs at least 3 vertices")
    if not polygon_is_simple(poly):
        raise AnnotationError("template polygon is self-intersecting")
    full = rasterize_polygon(poly, image.width, image.height)
    vs, us = np.nonzero(full)
    if us.size == 0:
        raise AnnotationError("template polygon covers no pixel centers")
    box = bbox_of_pixels(np.stack([us, vs], axis=1))
    for u, v in skeleton.endpoints():
        if not box.contains_point(u, v, margin=0.5):
            raise AnnotationError(f"skeleton endpoint ({u}, {v}) outside template box {box.as_tuple()}")
    mask = full[box.slices()].copy()
    patch = image.pixels[box.slices()].copy()
    patch[~mask] = 0
    du, dv = -box.u_left, -box.v_bottom
    local_poly = tuple((x + du, y + dv) for x, y in poly)
    return NutsedgeTemplate(patch=patch, mask=mask, polygon=local_poly,
                            skeleton=skeleton.translated(du, dv),
                            origin=(box.u_left, box.v_bottom), name=name)


def mask_to_rle(mask: np.ndarray) -> list[int]:
    """Row-major run lengths, alternating 0-runs and 1-runs, starting with 0s."""
    flat = mask.astype(np.uint8).ravel()
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], change, [flat.size]])
    runs = np.diff(bounds).tolist()
    if flat.size and flat[0] == 1:
        runs = [0] + runs
    return [int(r) for r in runs]


def rle_to_mask(counts: Sequence[int], height: int, width: int) -> np.ndarray:
    if sum(counts) != height * width:
        raise AnnotationError("RLE length does not match mask size")
    vals = np.zeros(len(counts), dtype=bool)
    vals[1::2] = True
    return np.repeat(vals, counts).reshape(height, width)


def save_template(tpl: NutsedgeTemplate, directory: PathLike) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_png(RasterImage(tpl.patch), directory / f"{tpl.name}.png")
    h, w = tpl.mask.shape
    sidecar = {
        "name": tpl.name,
        "origin": list(tpl.origin),
        "box": list(tpl.box.as_tuple()),
        "size": [w, h],
        "polygon": [list(p) for p in tpl.polygon],
        "skeleton": tpl.skeleton.to_json(),
        "mask_rle": mask_to_rle(tpl.mask),
    }
    out = directory / f"{tpl.name}.json"
    out.write_text(json.dumps(sidecar, indent=1, sort_keys=True))
    return out


def load_template(json_path: PathLike) -> NutsedgeTemplate:
    json_path = Path(json_path)
    meta = json.loads(json_path.read_text())
    w, h = meta["size"]
    patch = load_png(json_path.with_suffix(".png")).pixels
    if patch.shape[:2] != (h, w):
        raise AnnotationError(f"{json_path}: patch size does not match sidecar")
    mask = rle_to_mask(meta["mask_rle"], h, w)
    return NutsedgeTemplate(patch=np.array(patch), mask=mask,
                            polygon=tuple(tuple(p) for p in meta["polygon"]),
                            skeleton=Skeleton.from_json(meta["skeleton"]),
                            origin=tuple(meta["origin"]), name=meta["name"])


def load_template_library(directory: PathLike) -> list[NutsedgeTemplate]:
    paths = sorted(Path(directory).glob("*.json"))
    if not paths:
        raise AnnotationError(f"no templates found in {directory}")
    return [load_template(p) for p in paths]


def extract_background(image: RasterImage, box: BoundingBox, source: str = "") -> BackgroundPatch:
    if not box.inside(image.width, image.height):
        raise AnnotationError(f"background box {box.as_tuple()} outside image")
    return BackgroundPatch(RasterImage(image.pixels[box.slices()].copy()), source)


def load_background_library(directory: PathLike) -> list[BackgroundPatch]:
    paths = sorted(Path(directory).glob("*.png"))
    if not paths:
        raise AnnotationError(f"no background patches found in {directory}")
    return [BackgroundPatch(load_png(p), str(p.name)) for p in paths]


def build_libraries(annotation_files: Iterable[PathLike], template_dir: PathLike,
                    background_dir: PathLike) -> tuple[int, int]:
    """Cut templates and background patches out of labelme-annotated images.

    Polygons lacking a skeleton are skipped.  Returns the number of templates
    and background patches written.
    """
    template_dir, background_dir = Path(template_dir), Path(background_dir)
    template_dir.mkdir(parents=True, exist_ok=True)
    background_dir.mkdir(parents=True, exist_ok=True)
    n_tpl = n_bg = 0
    for ann_path in sorted(Path(p) for p in annotation_files):
        ann = parse_labelme(ann_path)
        image = load_png(ann_path.parent / ann.image_path)
        if image.dims != (ann.width, ann.height):
            raise AnnotationError(f"{ann_path}: image size does not match annotation")
        stem = ann_path.stem
        for i, inst in enumerate(ann.instances):
            if inst.polygon is None or inst.skeleton is None:
                continue
            tpl = extract_template(image, inst.polygon, inst.skeleton, name=f"{stem}_t{i:02d}")
            save_template(tpl, template_dir)
            n_tpl += 1
        for j, box in enumerate(ann.background):
            bg = extract_background(image, box, source=ann.image_path)
            save_png(bg.patch, background_dir / f"{stem}_b{j:02d}.png")
            n_bg += 1
    return n_tpl, n_bg


# --------------------------------------------------------------------------- skeleton pixels

def skeleton_pixels(skeleton: Skeleton | Iterable[Skeleton], width: int, height: int) -> np.ndarray:
    """Rasterize skeleton segments into unique (u, v) pixels inside the image.

    Each segment is sampled once per step along its major axis and rounded
    (a DDA line), which yields a minimal 8-connected digital line.
    """
    skels = [skeleton] if isinstance(skeleton, Skeleton) else list(skeleton)
    chunks = []
    for sk in skels:
        for s in sk.segments:
            n = max(2, int(math.ceil(max(abs(s.p - s.u), abs(s.q - s.v)))) + 1)
            t = np.linspace(0.0, 1.0, n)
            us = np.rint(s.u + t * (s.p - s.u))
            vs = np.rint(s.v + t * (s.q - s.v))
            chunks.append(np.stack([us, vs], axis=1))
    if not chunks:
        return np.zeros((0, 2), dtype=np.int64)
    pts = np.concatenate(chunks).astype(np.int64)
    keep = (pts[:, 0] >= 0) & (pts[:, 0] < width) & (pts[:, 1] >= 0) & (pts[:, 1] < height)
    return np.unique(pts[keep], axis=0)


# --------------------------------------------------------------------------- sampling

def mean_brightness(image: RasterImage) -> float:
    """Mean of the HSV value channel (max of R, G, B), in [0, 255]."""
    return float(image.pixels.max(axis=2).mean())


def assign_strata(values: Sequence[float], strata_count: int) -> np.ndarray:
    """Equal-width binning of ``values`` over their observed range."""
    vals = np.asarray(values, dtype=np.float64)
    lo, hi = vals.min(), vals.max()
    if hi == lo:
        return np.zeros(vals.size, dtype=np.int64)
    idx = np.floor((vals - lo) / (hi - lo) * strata_count).astype(np.int64)
    return np.clip(idx, 0, strata_count - 1)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_sample(images: Sequence, strata_count: int, fraction: float, seed: int,
                      brightness=None) -> list:
    """Lighting-stratified random subset of ``images``.

    ``images`` holds :class:`RasterImage` objects or PNG paths (override
    ``brightness`` for anything else).  Each stratum contributes
    ``round(fraction * size)`` items drawn without replacement; the result
    keeps input order.
    """
    if not images:
        raise ValueError("cannot sample from an empty image list")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    if strata_count < 1:
        raise ValueError("strata_count must be >= 1")
    if brightness is None:
        def brightness(item):
            img = item if isinstance(item, RasterImage) else load_png(item)
            return mean_brightness(img)
    strata = assign_strata([brightness(it) for it in images], strata_count)
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for s in range(strata_count):
        members = np.flatnonzero(strata == s)
        k = min(members.size, round_half_up(fraction * members.size))
        if k:
            chosen.extend(rng.choice(members, size=k, replace=False).tolist())
    return [images[i] for i in sorted(chosen)]
