"""File-level pipeline stages shared by the command line and the demo.

Every stage reads declared inputs, writes declared outputs and returns a
small summary dict for logging.  Randomness comes only from
:func:`nutsedge.seeding.stage_rng` streams keyed on the master seed.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from .annotations import (AnnotationSet, build_libraries, load_background_library,
                          load_template_library, parse_labelme, stratified_sample, to_labelme)
from .compose import dump_json, export_coco, generate_dataset
from .config import PipelineConfig
from .evaluation import (EvalConfig, ModelOutput, assemble_report, evaluate_image, export_review_queue,
                         finalize_report, read_manifest, write_manifest)
from .imaging import BoundingBox, FloatMap, RasterImage, load_pfm, load_png, save_pfm, save_png
from .losses import loss
from .nspm import estimate_sigma, rasterize_nspm
from .seeding import stage_seed
from .skeldecode import DecodeParams, decode
from .texsynth import synthesize_background


class PipelineError(ValueError):
    pass


def _require_dir(path: Path, what: str) -> Path:
    if not path.is_dir():
        raise PipelineError(f"{what} directory not found: {path}")
    return path


def _require_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise PipelineError(f"{what} file not found: {path}")
    return path


def write_json(data, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    dump_json(data, path)


# --------------------------------------------------------------------------- sampling / libraries

def sample_strata(images_dir: Path, cfg: PipelineConfig, out: Path) -> dict:
    paths = sorted(_require_dir(images_dir, "images").glob("*.png"))
    if not paths:
        raise PipelineError(f"no PNG images in {images_dir}")
    chosen = stratified_sample(paths, cfg.strata_count, cfg.sample_fraction,
                               stage_seed(cfg.seed, "sample-strata"))
    result = {"strata_count": cfg.strata_count, "fraction": cfg.sample_fraction,
              "total": len(paths), "selected": [p.name for p in chosen]}
    write_json(result, out)
    return result


def extract_templates(annotations_dir: Path, templates_dir: Path, backgrounds_dir: Path,
                      selection: Path | None = None) -> dict:
    files = sorted(_require_dir(annotations_dir, "annotations").glob("*.json"))
    if selection is not None:
        keep = set(json.loads(_require_file(selection, "selection").read_text())["selected"])
        files = [f for f in files if json.loads(f.read_text()).get("imagePath") in keep]
    if not files:
        raise PipelineError("no annotation files to extract from")
    n_tpl, n_bg = build_libraries(files, templates_dir, backgrounds_dir)
    return {"annotations": len(files), "templates": n_tpl, "backgrounds": n_bg}


# --------------------------------------------------------------------------- synthesis

def _synth_one(args) -> np.ndarray:
    patches, params = args
    return synthesize_background(patches, params).pixels


def synth_backgrounds(patches_dir: Path, width: int, height: int, count: int, cfg: PipelineConfig,
                      out_dir: Path, jobs: int = 1) -> dict:
    patches = [b.patch for b in load_background_library(_require_dir(patches_dir, "patches"))]
    tasks = [(patches, cfg.synth(width, height, stage_seed(cfg.seed, "synth-background", i)))
             for i in range(count)]
    if jobs > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_synth_one, tasks))
    else:
        outputs = [_synth_one(t) for t in tasks]
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, px in enumerate(outputs):
        save_png(RasterImage(px), out_dir / f"background_{i:03d}.png")
    return {"count": count, "width": width, "height": height, "patches": len(patches)}


# --------------------------------------------------------------------------- composition

def compose_dataset(backgrounds_dir: Path, templates_dir: Path, cfg: PipelineConfig, out_dir: Path,
                    jobs: int = 1) -> dict:
    bgs = [load_png(p) for p in sorted(_require_dir(backgrounds_dir, "backgrounds").glob("*.png"))]
    if not bgs:
        raise PipelineError(f"no background PNGs in {backgrounds_dir}")
    templates = load_template_library(_require_dir(templates_dir, "templates"))
    composed = generate_dataset(bgs, templates, cfg.compose(), jobs=jobs)
    img_dir, lab_dir = out_dir / "images", out_dir / "labels"
    img_dir.mkdir(parents=True, exist_ok=True)
    lab_dir.mkdir(parents=True, exist_ok=True)
    entries, areas = [], []
    for c in composed:
        name = c.annotations.image_path
        save_png(c.image, img_dir / name)
        doc = to_labelme(c.annotations)
        doc["imagePath"] = f"../images/{name}"
        write_json(doc, lab_dir / f"{Path(name).stem}.json")
        entries.append((name, c.annotations))
        areas.append([int(p.support.shape[0]) for p in c.instances])
    write_json(export_coco(entries, areas), out_dir / "coco.json")
    return {"images": len(composed), "instances": sum(len(a) for a in areas)}


# --------------------------------------------------------------------------- label maps / losses

def nspm_file(annotation: Path, sigma: float, out: Path) -> dict:
    ann = parse_labelme(_require_file(annotation, "annotation"))
    fmap = rasterize_nspm(ann.skeleton_pairs(), ann.width, ann.height, sigma)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_pfm(fmap, out)
    return {"width": ann.width, "height": ann.height, "boxes": len(ann.skeleton_pairs())}


def estimate_sigma_dir(templates_dir: Path) -> dict:
    templates = load_template_library(_require_dir(templates_dir, "templates"))
    return {"sigma": estimate_sigma(templates), "templates": len(templates)}


def read_boxes(path: Path) -> list[BoundingBox]:
    """Boxes from a JSON list of ``[u_left, v_bottom, u_right, v_top]`` or a labelme file."""
    data = json.loads(_require_file(path, "boxes").read_text())
    if isinstance(data, dict) and "shapes" in data:
        return parse_labelme(data).boxes
    if isinstance(data, dict) and "boxes" in data:
        data = [b["box"] if isinstance(b, dict) else b for b in data["boxes"]]
    return [BoundingBox(*[int(x) for x in b]) for b in data]


def loss_files(mode: str, label: Path, pred: Path, boxes: Path) -> dict:
    rep = loss(mode, load_pfm(_require_file(label, "label map")),
               load_pfm(_require_file(pred, "prediction map")), read_boxes(boxes))
    return {"mode": mode, **rep.to_json()}


# --------------------------------------------------------------------------- decoding

def decode_file(map_path: Path, params: DecodeParams, out: Path) -> dict:
    res = decode(load_pfm(_require_file(map_path, "map")), params)
    doc = {"skeleton": res.skeleton.to_json() if res.skeleton is not None else [],
           "pixels": res.pixel_list().tolist(), "components": res.components}
    write_json(doc, out)
    return {"segments": len(doc["skeleton"]), "pixels": len(doc["pixels"])}


# --------------------------------------------------------------------------- model outputs

def write_model_output(stem: str, out_dir: Path, fmap: FloatMap, boxes: Sequence[BoundingBox],
                       scores: Sequence[float]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_pfm(fmap, out_dir / f"{stem}.pfm")
    write_json({"boxes": [{"box": list(b.as_tuple()), "score": float(s)} for b, s in zip(boxes, scores)]},
               out_dir / f"{stem}.json")


def load_model_output(stem: str, model_dir: Path) -> ModelOutput:
    fmap = load_pfm(_require_file(model_dir / f"{stem}.pfm", "model map"))
    meta = json.loads(_require_file(model_dir / f"{stem}.json", "model boxes").read_text())
    boxes = tuple(BoundingBox(*[int(x) for x in b["box"]]) for b in meta.get("boxes", []))
    scores = tuple(float(b.get("score", 1.0)) for b in meta.get("boxes", []))
    mask = None
    if "skeleton_pixels" in meta:
        mask = np.zeros((fmap.height, fmap.width), dtype=bool)
        px = np.asarray(meta["skeleton_pixels"], dtype=np.int64).reshape(-1, 2)
        mask[px[:, 1], px[:, 0]] = True
    return ModelOutput(boxes, fmap, scores, mask)


# --------------------------------------------------------------------------- evaluation

def _eval_one(args):
    name, ann, model, cfg = args
    return evaluate_image(name, ann, model, cfg)


def evaluate_dirs(annotations_dir: Path, model_dir: Path, cfg: EvalConfig, report: Path,
                  review_dir: Path, jobs: int = 1) -> dict:
    files = sorted(_require_dir(annotations_dir, "annotations").glob("*.json"))
    if not files:
        raise PipelineError(f"no annotation files in {annotations_dir}")
    _require_dir(model_dir, "model output")
    items, images = [], []
    for f in files:
        ann: AnnotationSet = parse_labelme(f)
        name = Path(ann.image_path).name or f"{f.stem}.png"
        items.append((name, ann, load_model_output(f.stem, model_dir), cfg))
        img_path = f.parent / ann.image_path
        images.append(load_png(img_path) if ann.image_path and img_path.is_file() else None)
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            evals = list(pool.map(_eval_one, items))
    else:
        evals = [_eval_one(it) for it in items]
    rep = assemble_report(evals, cfg)
    review_dir.mkdir(parents=True, exist_ok=True)
    for ev, img in zip(evals, images):
        export_review_queue(ev.cases, img, review_dir)
    write_manifest(rep.cases, review_dir / "manifest.csv")
    doc = rep.to_json()
    write_json(doc, report)
    return {"images": len(evals), "consistent": rep.consistent, "review_cases": len(rep.cases)}


def finalize(report: Path, verdicts: Path, out: Path) -> dict:
    doc = json.loads(_require_file(report, "report").read_text())
    final = finalize_report(doc, read_manifest(_require_file(verdicts, "verdicts")))
    write_json(final, out)
    return final["rates"]

