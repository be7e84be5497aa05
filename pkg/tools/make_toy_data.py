"""Regenerate the bundled toy field images and their labelme annotations.

Run from the repository root:  python3 tools/make_toy_data.py
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from nutsedge.annotations import rasterize_polygon
from nutsedge.imaging import RasterImage, save_png

OUT = Path(__file__).resolve().parents[1] / "src" / "nutsedge" / "data" / "toy"
SIZE = 96
LIGHT = [0.62, 0.7, 0.9, 1.0, 1.25, 1.35]


def turf(rng: np.random.Generator, light: float) -> np.ndarray:
    base = np.array([52.0, 110.0, 38.0])
    noise = rng.normal(0.0, 1.0, (SIZE, SIZE, 1)) * np.array([10.0, 22.0, 8.0])
    blades = (rng.random((SIZE, SIZE)) < 0.08)[..., None] * np.array([20.0, 35.0, 10.0])
    return np.clip((base + noise + blades) * light, 0, 255)


def star(rng: np.random.Generator, cu: float, cv: float):
    k = int(rng.integers(3, 5))
    angles = rng.uniform(0, 2 * np.pi) + np.arange(k) * 2 * np.pi / k + rng.uniform(-0.3, 0.3, k)
    lengths = rng.uniform(11, 15, k)
    poly, tips = [], []
    for i, (a, r) in enumerate(zip(angles, lengths)):
        nxt = angles[(i + 1) % k] + (2 * np.pi if i == k - 1 else 0.0)
        tip = (round(cu + r * np.cos(a), 1), round(cv + r * np.sin(a), 1))
        mid = 0.5 * (a + nxt)
        poly.append(tip)
        poly.append((round(cu + 5.0 * np.cos(mid), 1), round(cv + 5.0 * np.sin(mid), 1)))
        # The midrib stops short of the sharp tip, which the pixel mask may not reach.
        tips.append((round(cu + 0.7 * r * np.cos(a), 1), round(cv + 0.7 * r * np.sin(a), 1)))
    return poly, tips


def main() -> None:
    rng = np.random.default_rng(2024)
    OUT.mkdir(parents=True, exist_ok=True)
    centers = [(24.0, 30.0), (66.0, 62.0)]
    for idx, light in enumerate(LIGHT):
        img = turf(rng, light)
        shapes = []
        for gid, (cu, cv) in enumerate(centers):
            cu += float(rng.uniform(-4, 4))
            cv += float(rng.uniform(-4, 4))
            poly, tips = star(rng, cu, cv)
            mask = rasterize_polygon(poly, SIZE, SIZE)
            leaf = np.array([150.0, 170.0, 60.0]) * light
            img[mask] = np.clip(leaf + rng.normal(0, 6, (int(mask.sum()), 3)), 0, 255)
            shapes.append({"label": "nutsedge", "points": [list(p) for p in poly],
                           "group_id": gid, "shape_type": "polygon"})
            for tip in tips:
                shapes.append({"label": "nutsedge", "points": [[round(cu, 1), round(cv, 1)], list(tip)],
                               "group_id": gid, "shape_type": "linestrip"})
        shapes.append({"label": "background", "points": [[70, 4], [91, 25]],
                       "group_id": None, "shape_type": "rectangle"})
        shapes.append({"label": "background", "points": [[4, 70], [25, 91]],
                       "group_id": None, "shape_type": "rectangle"})
        name = f"field_{idx:02d}.png"
        save_png(RasterImage(img.astype(np.uint8)), OUT / name)
        doc = {"version": "5.0.1", "flags": {}, "shapes": shapes, "imagePath": name,
               "imageData": None, "imageHeight": SIZE, "imageWidth": SIZE}
        (OUT / f"field_{idx:02d}.json").write_text(json.dumps(doc, indent=1) + "\n")


if __name__ == "__main__":
    main()
