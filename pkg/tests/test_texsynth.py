import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nutsedge.imaging import RasterImage
from nutsedge.texsynth import (SynthesisError, SynthParams, fill_order, gaussian_window, seed_block_origin,
                               synthesize_background, verify_synthesis)


def random_patch(seed, size=12, levels=256):
    rng = np.random.default_rng(seed)
    return rng.integers(0, levels, (size, size, 3), dtype=np.uint8)


def test_uniform_patch_gives_uniform_output():
    patch = np.full((10, 10, 3), (40, 120, 60), np.uint8)
    out = synthesize_background([patch], SynthParams(5, 0.1, 20, 16, 3))
    assert out.pixels.shape == (16, 20, 3)
    assert (out.pixels == (40, 120, 60)).all()


def test_vertical_stripes_continue_exactly():
    # with epsilon 0 every new pixel continues the column of its neighborhood
    patch = np.zeros((12, 12, 3), np.uint8)
    patch[:, ::2] = 200
    params = SynthParams(5, 0.0, 24, 24, 7)
    out = synthesize_background([patch], params).pixels
    assert verify_synthesis([patch], RasterImage(out), params).ok
    cols = out[:, :, 0]
    assert (cols == cols[:1]).all()
    assert set(np.unique(cols).tolist()) == {0, 200}


@pytest.mark.parametrize("eps", [0.0, 0.1, math.inf])
def test_verifier_accepts_output(eps):
    patch = random_patch(1, 10, levels=4) * 60
    params = SynthParams(5, eps, 18, 18, 2)
    out = synthesize_background([patch], params)
    report = verify_synthesis([patch], out, params)
    assert report.ok and report.checked == 18 * 18 - 25


def test_verifier_detects_tampering():
    patch = random_patch(4, 10, levels=4) * 60
    params = SynthParams(5, 0.0, 18, 18, 2)
    px = synthesize_background([patch], params).pixels.copy()
    px[0, 0] = (1, 2, 3)
    assert verify_synthesis([patch], RasterImage(px), params).foreign_colors == 1
    px = synthesize_background([patch], params).pixels.copy()
    px[1, 1] = patch[0, 0] if tuple(px[1, 1]) != tuple(patch[0, 0]) else patch[0, 1]
    rep = verify_synthesis([patch], RasterImage(px), params)
    assert not rep.ok


def test_deterministic_and_seed_sensitive():
    patch = random_patch(9)
    a = synthesize_background([patch], SynthParams(7, 0.1, 20, 20, 5)).pixels
    b = synthesize_background([patch], SynthParams(7, 0.1, 20, 20, 5)).pixels
    c = synthesize_background([patch], SynthParams(7, 0.1, 20, 20, 6)).pixels
    assert np.array_equal(a, b) and not np.array_equal(a, c)


@settings(max_examples=10)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_no_foreign_colors(seed, n_patches):
    patches = [random_patch(seed + k, 8) for k in range(n_patches)]
    out = synthesize_background(patches, SynthParams(5, 0.2, 12, 12, seed)).pixels
    palette = {tuple(c) for p in patches for c in p.reshape(-1, 3).tolist()}
    assert all(tuple(c) in palette for c in out.reshape(-1, 3).tolist())


def test_fill_order_covers_everything_once():
    order = fill_order(15, 11, 5)
    assert len(order) == 15 * 11 - 25
    assert len({tuple(x) for x in order.tolist()}) == len(order)
    top, left = seed_block_origin(15, 11, 5)
    ring = np.maximum(np.maximum(top - order[:, 0], order[:, 0] - top - 4).clip(0),
                      np.maximum(left - order[:, 1], order[:, 1] - left - 4).clip(0))
    assert np.all(np.diff(ring) >= 0)


def test_gaussian_window():
    g = gaussian_window(25)
    assert g.shape == (25, 25) and g[12, 12] == 1.0 and np.allclose(g, g.T)


def test_bad_params():
    for kw in ({"neighborhood": 4}, {"neighborhood": 1}, {"epsilon": -1.0}, {"width": 3}):
        with pytest.raises(SynthesisError):
            SynthParams(**{"neighborhood": 5, "width": 10, "height": 10, **kw})
    with pytest.raises(SynthesisError):
        synthesize_background([random_patch(0, 2)], SynthParams(5, 0.1, 10, 10, 0))
    with pytest.raises(SynthesisError):
        synthesize_background([], SynthParams(5, 0.1, 10, 10, 0))
