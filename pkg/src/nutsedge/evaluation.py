"""Semi-supervised evaluation against human labels.

Consistent detections are scored with region IoU and skeleton similarity;
inconsistent boxes go to a human review queue whose verdicts close out the
final rates.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .annotations import AnnotationSet, rasterize_polygon, skeleton_pixels
from .imaging import BoundingBox, FloatMap, RasterImage, box_mask, save_png
from .nspm import DEFAULT_SIGMA, box_response, rasterize_nspm
from .skeldecode import DecodeParams, decode

VERDICTS = ("model_fp", "model_fn", "human_fn", "undetermined")
SOURCES = ("human-only", "model-only")
# Reviewer shorthand accepted on ingest.
VERDICT_ALIASES = {"no_nutsedge": "model_fp"}
MANIFEST_FIELDS = ("case_id", "image", "box", "source", "verdict")


class EvalError(ValueError):
    pass


# --------------------------------------------------------------------------- metrics

def _arr(m) -> np.ndarray:
    return m.values if isinstance(m, FloatMap) else np.asarray(m, dtype=np.float64)


def region_iou(p_s, p_o, t: float = 0.5, region: BoundingBox | None = None) -> float:
    """IoU of the sets ``p_s > t`` and ``p_o > t``, optionally inside ``region``.

    Two empty sets give 1; exactly one empty set gives 0.
    """
    a, b = _arr(p_s), _arr(p_o)
    if a.shape != b.shape:
        raise EvalError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not 0 < t < 1:
        raise EvalError("threshold must be in (0, 1)")
    if region is not None:
        a, b = a[region.slices()], b[region.slices()]
    sa, sb = a > t, b > t
    union = int(np.count_nonzero(sa | sb))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(sa & sb)) / union


def _as_points(pixels) -> np.ndarray:
    arr = np.asarray(pixels)
    if arr.dtype == bool:
        vs, us = np.nonzero(arr)
        return np.stack([us, vs], axis=1).astype(np.float64)
    return arr.reshape(-1, 2).astype(np.float64)


def skeleton_similarity(s_o, s_h, d: float = 12.0) -> float:
    """Count of ``s_o`` pixels within ``d`` of ``s_h``, divided by ``|s_h|``.

    Either argument may be an (N, 2) array of (u, v) pixels or a boolean mask.
    The value can exceed 1 when ``s_o`` is denser than ``s_h``.
    """
    if not d > 0:
        raise EvalError("correspondence distance must be positive")
    so, sh = _as_points(s_o), _as_points(s_h)
    if sh.shape[0] == 0:
        raise EvalError("human skeleton is empty")
    if so.shape[0] == 0:
        return 0.0
    dist, _ = cKDTree(sh).query(so, k=1)
    return int(np.count_nonzero(dist <= d)) / sh.shape[0]


@dataclass(frozen=True)
class BoxMetric:
    r_iou: float
    c_s: float
    skeleton_size: int


@dataclass(frozen=True)
class Aggregates:
    per_image_iou: tuple[float, ...]
    per_image_cs: tuple[float, ...]
    mean_iou: float
    mean_cs: float
    excluded: tuple[int, ...]


def image_scores(boxes: Sequence[BoxMetric], normalized: bool = False) -> tuple[float, float]:
    """Skeleton-size weighted (r_S-IoU, C_Ss) for one image.

    The default applies ``(1/n_b) * (|S_h| / c)`` per box.  Those weights only
    sum to one for a single box; ``normalized=True`` drops the ``1/n_b``.
    """
    n_b = len(boxes)
    c = sum(b.skeleton_size for b in boxes)
    if n_b == 0 or c == 0:
        raise EvalError("image has no labeled skeleton pixels")
    scale = 1.0 if normalized else 1.0 / n_b
    iou = scale * sum(b.skeleton_size / c * b.r_iou for b in boxes)
    cs = scale * sum(b.skeleton_size / c * b.c_s for b in boxes)
    return iou, cs


def weighted_aggregates(images: Sequence[Sequence[BoxMetric]], normalized: bool = False) -> Aggregates:
    """Per-image weighted scores and their means; skeleton-free images are excluded."""
    ious, css, excluded = [], [], []
    for k, boxes in enumerate(images):
        if not boxes or sum(b.skeleton_size for b in boxes) == 0:
            excluded.append(k)
            continue
        i, c = image_scores(boxes, normalized)
        ious.append(i)
        css.append(c)
    mean_iou = float(np.mean(ious)) if ious else float("nan")
    mean_cs = float(np.mean(css)) if css else float("nan")
    return Aggregates(tuple(ious), tuple(css), mean_iou, mean_cs, tuple(excluded))


# --------------------------------------------------------------------------- matching

@dataclass(frozen=True)
class MatchPartition:
    """Consistent pairs ``(human, output, r_iou, c_s)`` plus unmatched indices on each side."""

    consistent: tuple[tuple[int, int, float, float], ...]
    human_only: tuple[int, ...]
    model_only: tuple[int, ...]

    @property
    def inconsistent_count(self) -> int:
        return len(self.human_only) + len(self.model_only)


def passes_rule(r_iou: float, c_s: float, iou_min: float = 0.5, cs_min: float = 0.7) -> bool:
    return r_iou >= iou_min or c_s >= cs_min


def partition_matches(n_human: int, n_output: int, pair_metrics: dict,
                      iou_min: float = 0.5, cs_min: float = 0.7) -> MatchPartition:
    """Greedy one-to-one matching by descending r_IoU (then C_s, then indices).

    ``pair_metrics`` maps ``(i, j)`` to ``(r_iou, c_s)``; pairs not listed are
    never matched.  Only pairs meeting the consistency rule are eligible.
    """
    eligible = [(-r, -c, i, j) for (i, j), (r, c) in pair_metrics.items()
                if passes_rule(r, c, iou_min, cs_min)]
    eligible.sort()
    used_h, used_o = set(), set()
    pairs = []
    for neg_r, neg_c, i, j in eligible:
        if i in used_h or j in used_o:
            continue
        used_h.add(i)
        used_o.add(j)
        pairs.append((i, j, -neg_r, -neg_c))
    pairs.sort(key=lambda p: (p[0], p[1]))
    return MatchPartition(tuple(pairs),
                          tuple(i for i in range(n_human) if i not in used_h),
                          tuple(j for j in range(n_output) if j not in used_o))


# --------------------------------------------------------------------------- review

@dataclass(frozen=True)
class ReviewCase:
    case_id: str
    image: str
    box: BoundingBox
    source: str
    verdict: str = ""

    def row(self) -> dict:
        b = self.box
        return {"case_id": self.case_id, "image": self.image,
                "box": f"{b.u_left} {b.v_bottom} {b.u_right} {b.v_top}",
                "source": self.source, "verdict": self.verdict}


def padded_box(box: BoundingBox, width: int, height: int, fraction: float = 0.2) -> BoundingBox:
    """``box`` grown by ``fraction`` of its size on every side, clipped to the image."""
    pu = int(math.ceil(fraction * box.width))
    pv = int(math.ceil(fraction * box.height))
    return BoundingBox(max(0, box.u_left - pu), max(0, box.v_bottom - pv),
                       min(width - 1, box.u_right + pu), min(height - 1, box.v_top + pv))


def review_cases(partition: MatchPartition, image_name: str, human_boxes: Sequence[BoundingBox],
                 output_boxes: Sequence[BoundingBox]) -> list[ReviewCase]:
    stem = Path(image_name).stem
    cases = []
    for i in partition.human_only:
        cases.append(ReviewCase(f"{stem}-h{i:03d}", image_name, human_boxes[i], "human-only"))
    for j in partition.model_only:
        cases.append(ReviewCase(f"{stem}-o{j:03d}", image_name, output_boxes[j], "model-only"))
    return cases


def export_review_queue(cases: Sequence[ReviewCase], image: RasterImage | None,
                        directory) -> list[Path]:
    """Write one padded PNG crop per case into ``directory``; returns the crop paths."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    if image is None:
        return paths
    for case in cases:
        crop_box = padded_box(case.box, image.width, image.height)
        crop = RasterImage(np.ascontiguousarray(image.pixels[crop_box.slices()]))
        path = out / f"{case.case_id}.png"
        save_png(crop, path)
        paths.append(path)
    return paths


def write_manifest(cases: Sequence[ReviewCase], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        writer.writeheader()
        for case in cases:
            writer.writerow(case.row())


def _normalize_verdict(verdict: str, source: str, case_id: str) -> str:
    v = verdict.strip().lower()
    v = VERDICT_ALIASES.get(v, v)
    if v not in VERDICTS:
        raise EvalError(f"case {case_id}: unknown verdict {verdict!r}")
    allowed = {"human-only": ("model_fn", "undetermined"),
               "model-only": ("model_fp", "human_fn", "undetermined")}[source]
    if v not in allowed:
        raise EvalError(f"case {case_id}: verdict {v!r} does not apply to a {source} box")
    return v


def read_manifest(path, require_verdicts: bool = True) -> list[ReviewCase]:
    cases = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or list(reader.fieldnames) != list(MANIFEST_FIELDS):
            raise EvalError(f"manifest header must be {','.join(MANIFEST_FIELDS)}")
        for row in reader:
            source = row["source"].strip()
            if source not in SOURCES:
                raise EvalError(f"case {row['case_id']}: unknown source {source!r}")
            coords = [int(x) for x in row["box"].split()]
            if len(coords) != 4:
                raise EvalError(f"case {row['case_id']}: box needs 4 integers")
            verdict = (row["verdict"] or "").strip()
            if verdict:
                verdict = _normalize_verdict(verdict, source, row["case_id"])
            elif require_verdicts:
                raise EvalError(f"case {row['case_id']}: missing verdict")
            cases.append(ReviewCase(row["case_id"], row["image"], BoundingBox(*coords), source, verdict))
    return cases


def ingest_verdicts(path) -> dict[str, str]:
    """Case id to normalized verdict, from a filled-in manifest."""
    return {c.case_id: c.verdict for c in read_manifest(path)}


# --------------------------------------------------------------------------- rates

@dataclass(frozen=True)
class FinalRates:
    r_a: float
    r_fp: float
    r_fn: float
    consistent: int
    model_fp: int
    model_fn: int
    human_fn: int
    undetermined: int

    @property
    def n_d(self) -> int:
        return self.consistent + self.model_fn + self.human_fn

    def to_json(self) -> dict:
        return {"r_a": self.r_a, "r_fp": self.r_fp, "r_fn": self.r_fn, "n_d": self.n_d,
                "consistent": self.consistent, "model_fp": self.model_fp,
                "model_fn": self.model_fn, "human_fn": self.human_fn,
                "undetermined": self.undetermined}


def final_rates(consistent: int, model_fp: int, model_fn: int, human_fn: int,
                undetermined: int = 0) -> FinalRates:
    """Accuracy, false-positive and false-negative rates over the detection set.

    The detection set ``N_d`` is the consistent boxes plus both false-negative
    classes; undetermined cases enter no count.  An empty ``N_d`` gives
    ``r_a = 1`` and ``r_fn = 0``.
    """
    for name, val in (("consistent", consistent), ("model_fp", model_fp), ("model_fn", model_fn),
                      ("human_fn", human_fn), ("undetermined", undetermined)):
        if val < 0:
            raise EvalError(f"{name} count must be >= 0")
    n_d = consistent + model_fn + human_fn
    r_a = consistent / n_d if n_d else 1.0
    r_fn = model_fn / n_d if n_d else 0.0
    r_fp = model_fp / (n_d + model_fp) if n_d + model_fp else 0.0
    return FinalRates(r_a, r_fp, r_fn, consistent, model_fp, model_fn, human_fn, undetermined)


def rates_from_cases(consistent: int, cases: Sequence[ReviewCase]) -> FinalRates:
    counts = dict.fromkeys(VERDICTS, 0)
    for c in cases:
        if not c.verdict:
            raise EvalError(f"case {c.case_id}: missing verdict")
        counts[_normalize_verdict(c.verdict, c.source, c.case_id)] += 1
    return final_rates(consistent, counts["model_fp"], counts["model_fn"], counts["human_fn"],
                       counts["undetermined"])


def density_ratio(output_boxes: Sequence[BoundingBox], human_mask: np.ndarray) -> float:
    """Nutsedge density inside the union of output boxes over the whole-image density."""
    mask = np.asarray(human_mask, dtype=bool)
    h, w = mask.shape
    if not output_boxes:
        raise EvalError("no output boxes")
    c_s = int(np.count_nonzero(mask))
    if c_s == 0:
        raise EvalError("image has no nutsedge pixels")
    inside = box_mask(output_boxes, w, h)
    c_o = int(np.count_nonzero(inside))
    c_a = int(np.count_nonzero(mask & inside))
    return (c_a / c_o) / (c_s / (h * w))


# --------------------------------------------------------------------------- per image

@dataclass(frozen=True, eq=False)
class ModelOutput:
    boxes: tuple[BoundingBox, ...]
    prob_map: FloatMap
    scores: tuple[float, ...] = ()
    skeleton_mask: np.ndarray | None = None

    def __post_init__(self):
        w, h = self.prob_map.dims
        for b in self.boxes:
            if not b.inside(w, h):
                raise EvalError(f"output box {b.as_tuple()} outside {w}x{h} map")
        if self.scores and len(self.scores) != len(self.boxes):
            raise EvalError("one score per box required")
        if self.skeleton_mask is not None and self.skeleton_mask.shape != (h, w):
            raise EvalError("skeleton mask shape differs from the map")


@dataclass(frozen=True)
class EvalConfig:
    threshold_t: float = 0.5
    corr_dist_d: float = 12.0
    sigma: float = DEFAULT_SIGMA
    iou_min: float = 0.5
    cs_min: float = 0.7
    normalized: bool = False
    decode: DecodeParams = field(default_factory=DecodeParams)

    def __post_init__(self):
        if not 0 < self.threshold_t < 1:
            raise EvalError("threshold_t must be in (0, 1)")
        if not self.corr_dist_d > 0:
            raise EvalError("corr_dist_d must be positive")


@dataclass(frozen=True)
class ImageEval:
    image: str
    box_metrics: tuple[BoxMetric, ...]
    partition: MatchPartition
    cases: tuple[ReviewCase, ...]
    density_ratio: float | None

    def to_json(self) -> dict:
        return {"image": self.image,
                "boxes": [{"r_iou": m.r_iou, "c_s": m.c_s, "skeleton_size": m.skeleton_size}
                          for m in self.box_metrics],
                "consistent": [list(p) for p in self.partition.consistent],
                "human_only": list(self.partition.human_only),
                "model_only": list(self.partition.model_only),
                "density_ratio": self.density_ratio}


def human_pixel_mask(ann: AnnotationSet, sigma: float = DEFAULT_SIGMA, t: float = 0.5) -> np.ndarray:
    """Nutsedge pixels from polygons; boxes without one fall back to the thresholded label map."""
    mask = np.zeros((ann.height, ann.width), dtype=bool)
    for inst in ann.instances:
        if inst.polygon:
            mask |= rasterize_polygon(inst.polygon, ann.width, ann.height)
        elif inst.skeleton is not None:
            sl = inst.box.slices()
            mask[sl] |= np.minimum(box_response(inst.box, inst.skeleton, sigma), 1.0) > t
    return mask


def _pixels_in(points: np.ndarray, box: BoundingBox) -> np.ndarray:
    if points.shape[0] == 0:
        return points
    keep = ((points[:, 0] >= box.u_left) & (points[:, 0] <= box.u_right)
            & (points[:, 1] >= box.v_bottom) & (points[:, 1] <= box.v_top))
    return points[keep]


def evaluate_image(name: str, ann: AnnotationSet, model: ModelOutput,
                   cfg: EvalConfig = EvalConfig()) -> ImageEval:
    """Per-box metrics, the consistent/inconsistent partition and the density ratio."""
    w, h = ann.width, ann.height
    if model.prob_map.dims != (w, h):
        raise EvalError(f"model map {model.prob_map.dims} differs from image {(w, h)}")
    p_s = rasterize_nspm(ann.skeleton_pairs(), w, h, cfg.sigma).values
    p_o = model.prob_map.values
    s_mask = model.skeleton_mask if model.skeleton_mask is not None else decode(model.prob_map, cfg.decode).pixels
    vs, us = np.nonzero(s_mask)
    s_o = np.stack([us, vs], axis=1)

    human = ann.instances
    sh = [skeleton_pixels(i.skeleton, w, h) if i.skeleton is not None else np.zeros((0, 2), np.int64)
          for i in human]

    metrics = []
    for inst, pts in zip(human, sh):
        if pts.shape[0] == 0:
            continue
        r = region_iou(p_s, p_o, cfg.threshold_t, inst.box)
        c = skeleton_similarity(_pixels_in(s_o, inst.box), pts, cfg.corr_dist_d)
        metrics.append(BoxMetric(r, c, int(pts.shape[0])))

    pair_metrics = {}
    for i, inst in enumerate(human):
        for j, ob in enumerate(model.boxes):
            if inst.box.intersection(ob) is None:
                continue
            hull = inst.box.union_hull(ob)
            r = region_iou(p_s, p_o, cfg.threshold_t, hull)
            c = skeleton_similarity(_pixels_in(s_o, hull), sh[i], cfg.corr_dist_d) if sh[i].shape[0] else 0.0
            pair_metrics[(i, j)] = (r, c)
    part = partition_matches(len(human), len(model.boxes), pair_metrics, cfg.iou_min, cfg.cs_min)
    cases = review_cases(part, name, [i.box for i in human], list(model.boxes))

    hmask = human_pixel_mask(ann, cfg.sigma, cfg.threshold_t)
    r_d = density_ratio(model.boxes, hmask) if model.boxes and hmask.any() else None
    return ImageEval(name, tuple(metrics), part, tuple(cases), r_d)


# --------------------------------------------------------------------------- report

@dataclass(frozen=True)
class EvalReport:
    images: tuple[ImageEval, ...]
    aggregates: Aggregates
    mean_density_ratio: float | None
    rates: FinalRates | None = None

    @property
    def cases(self) -> list[ReviewCase]:
        return [c for im in self.images for c in im.cases]

    @property
    def consistent(self) -> int:
        return sum(len(im.partition.consistent) for im in self.images)

    def _scored(self) -> list[int]:
        return [k for k in range(len(self.images)) if k not in self.aggregates.excluded]

    def to_json(self) -> dict:
        ag = self.aggregates
        return {
            "images": [im.to_json() for im in self.images],
            "per_image": [{"image": self.images[k].image, "r_s_iou": i, "c_ss": c}
                          for k, i, c in zip(self._scored(), ag.per_image_iou, ag.per_image_cs)],
            "mean_iou": _finite_or_none(ag.mean_iou),
            "mean_cs": _finite_or_none(ag.mean_cs),
            "excluded_images": [self.images[k].image for k in ag.excluded],
            "r_d": self.mean_density_ratio,
            "consistent": self.consistent,
            "review_cases": len(self.cases),
            "rates": self.rates.to_json() if self.rates is not None else None,
        }


def _finite_or_none(x: float):
    return None if x is None or not math.isfinite(x) else x


def evaluate_dataset(items: Sequence[tuple[str, AnnotationSet, ModelOutput]],
                     cfg: EvalConfig = EvalConfig()) -> EvalReport:
    """Evaluate images in order; a report with no review cases already carries its rates."""
    images = tuple(evaluate_image(name, ann, model, cfg) for name, ann, model in items)
    return assemble_report(images, cfg)


def assemble_report(images: Sequence[ImageEval], cfg: EvalConfig = EvalConfig()) -> EvalReport:
    agg = weighted_aggregates([im.box_metrics for im in images], cfg.normalized)
    ratios = [im.density_ratio for im in images if im.density_ratio is not None]
    r_d = float(np.mean(ratios)) if ratios else None
    report = EvalReport(tuple(images), agg, r_d)
    if not report.cases:
        report = EvalReport(report.images, agg, r_d, final_rates(report.consistent, 0, 0, 0))
    return report


def finalize_report(report: dict, cases: Sequence[ReviewCase]) -> dict:
    """Fill the rates of a serialized report from reviewed cases.

    Every case listed in the report must carry a verdict.
    """
    expected = set()
    for im in report["images"]:
        stem = Path(im["image"]).stem
        expected.update(f"{stem}-h{i:03d}" for i in im["human_only"])
        expected.update(f"{stem}-o{j:03d}" for j in im["model_only"])
    given = {c.case_id: c for c in cases}
    missing = sorted(expected - set(given))
    if missing:
        raise EvalError(f"missing verdicts for {len(missing)} case(s): {', '.join(missing[:5])}")
    extra = sorted(set(given) - expected)
    if extra:
        raise EvalError(f"unknown case ids: {', '.join(extra[:5])}")
    rates = rates_from_cases(int(report["consistent"]), [given[k] for k in sorted(expected)])
    out = dict(report)
    out["rates"] = rates.to_json()
    return out


def load_report(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
