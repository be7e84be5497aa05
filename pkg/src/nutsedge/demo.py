"""End-to-end run on the bundled toy field images.

The chain is: stratified sampling, template and background extraction,
background synthesis, recombination, label maps, a mock model output
(label maps with one plant dropped and one spurious box added), skeleton
decoding, evaluation, scripted review verdicts and the final rates.  Every
output is a pure function of the seed.
"""

from __future__ import annotations

import csv
import json
import shutil
from importlib import resources
from pathlib import Path
from typing import Callable

import numpy as np

from .annotations import parse_labelme
from .config import PipelineConfig
from .evaluation import MANIFEST_FIELDS, read_manifest
from .imaging import BoundingBox, FloatMap, load_pfm
from .nspm import rasterize_nspm
from .pipeline import (compose_dataset, decode_file, estimate_sigma_dir, evaluate_dirs, extract_templates,
                       finalize, nspm_file, sample_strata, synth_backgrounds, write_json, write_model_output)
from .seeding import stage_rng

DEMO_CONFIG = dict(
    density_min=300.0, density_max=500.0,   # 3 to 5 plants on a 96 x 96 image
    count=4, strata_count=3, sample_fraction=0.5,
    neighborhood=9, epsilon=0.1,
)
BACKGROUND_SIZE = 96
BACKGROUND_COUNT = 2


def toy_data_dir() -> Path:
    return Path(str(resources.files("nutsedge") / "data" / "toy"))


def _mock_model(stem: str, ann, cfg: PipelineConfig, rng: np.random.Generator, drop: bool, spurious: bool):
    """Label map and boxes as a model might return them, plus the truth for each box."""
    pairs = ann.skeleton_pairs()
    keep = pairs[1:] if drop and len(pairs) > 1 else list(pairs)
    boxes = [b for b, _ in keep]
    truth = ["real"] * len(boxes)
    fmap = rasterize_nspm(keep, ann.width, ann.height, cfg.sigma).values
    if spurious:
        w, h = ann.width, ann.height
        u0 = int(rng.integers(0, w - 24))
        v0 = int(rng.integers(0, h - 24))
        fake = BoundingBox(u0, v0, u0 + 23, v0 + 23)
        blob = np.zeros_like(fmap)
        vv, uu = np.mgrid[v0:v0 + 24, u0:u0 + 24]
        blob[v0:v0 + 24, u0:u0 + 24] = 0.8 * np.exp(-((uu - u0 - 12) ** 2 + (vv - v0 - 12) ** 2) / 50.0)
        fmap = np.maximum(fmap, blob)
        boxes.append(fake)
        truth.append("spurious")
    noise = rng.uniform(0.9, 1.0, fmap.shape)
    fmap = np.clip(fmap * noise, 0.0, 1.0)
    scores = [round(float(s), 4) for s in rng.uniform(0.5, 1.0, len(boxes))]
    return FloatMap(fmap), boxes, scores, truth


def _script_verdicts(manifest: Path, out: Path, truth: dict) -> None:
    """Fill verdicts from the known synthetic truth, as a reviewer would."""
    cases = read_manifest(manifest, require_verdicts=False)
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        writer.writeheader()
        for c in cases:
            if c.source == "human-only":
                verdict = "model_fn"
            else:
                verdict = "model_fp" if truth.get((c.image, c.box.as_tuple())) == "spurious" else "undetermined"
            writer.writerow({**c.row(), "verdict": verdict})


def run_demo(out: Path, seed: int = 0, jobs: int = 1, log: Callable[..., None] | None = None) -> dict:
    log = log or (lambda event, **kw: None)
    out = Path(out)
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)
    cfg = PipelineConfig(seed=seed, **DEMO_CONFIG)
    (out / "config.txt").write_text(cfg.to_text())

    raw = out / "raw"
    shutil.copytree(toy_data_dir(), raw)
    log("sample-strata", **sample_strata(raw, cfg, out / "selection.json"))
    log("extract-templates", **extract_templates(raw, out / "templates", out / "patches",
                                                 selection=out / "selection.json"))
    log("estimate-sigma", **estimate_sigma_dir(out / "templates"))
    log("synth-background", **synth_backgrounds(out / "patches", BACKGROUND_SIZE, BACKGROUND_SIZE,
                                                BACKGROUND_COUNT, cfg, out / "backgrounds", jobs))
    log("compose", **compose_dataset(out / "backgrounds", out / "templates", cfg, out / "dataset", jobs))

    labels = sorted((out / "dataset" / "labels").glob("*.json"))
    truth = {}
    for k, lab in enumerate(labels):
        stem = lab.stem
        nspm_file(lab, cfg.sigma, out / "nspm" / f"{stem}.pfm")
        ann = parse_labelme(lab)
        rng = stage_rng(seed, "demo-model", k)
        fmap, boxes, scores, kinds = _mock_model(stem, ann, cfg, rng, drop=(k % 2 == 0), spurious=(k % 2 == 1))
        write_model_output(stem, out / "model", fmap, boxes, scores)
        for b, kind in zip(boxes, kinds):
            truth[(f"{stem}.png", b.as_tuple())] = kind
        decode_file(out / "model" / f"{stem}.pfm", cfg.decode(), out / "decoded" / f"{stem}.json")
    log("nspm", maps=len(labels))
    log("decode", maps=len(labels))

    log("evaluate", **evaluate_dirs(out / "dataset" / "labels", out / "model", cfg.evaluation(),
                                    out / "report.json", out / "review", jobs))
    _script_verdicts(out / "review" / "manifest.csv", out / "review" / "verdicts.csv", truth)
    rates = finalize(out / "report.json", out / "review" / "verdicts.csv", out / "final_report.json")
    log("finalize", **rates)
    # Sanity: every written label map reads back.
    for p in sorted((out / "nspm").glob("*.pfm")):
        load_pfm(p)
    return json.loads((out / "final_report.json").read_text())

