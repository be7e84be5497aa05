import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from nutsedge.imaging import (BoundingBox, FloatMap, ImageFormatError, PixelPoint, RasterImage,
                              bbox_of_pixels, box_mask, load_pfm, load_png, read_pfm_array,
                              save_pfm, save_png, write_pfm_array)


def test_png_known_bytes(tmp_path):
    px = np.array([[[0, 0, 0], [255, 0, 0]], [[0, 255, 0], [1, 2, 3]]], dtype=np.uint8)
    from PIL import Image
    Image.fromarray(px).save(tmp_path / "a.png")
    img = load_png(tmp_path / "a.png")
    assert img.dims == (2, 2)
    assert np.array_equal(img.pixels, px)


@given(arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9), st.just(3))))
def test_png_round_trip(tmp_path_factory, px):
    path = tmp_path_factory.mktemp("png") / "x.png"
    save_png(RasterImage(px), path)
    assert load_png(path) == RasterImage(px)


def test_png_truncated(tmp_path):
    save_png(RasterImage(np.full((20, 20, 3), 7, np.uint8)), tmp_path / "a.png")
    data = (tmp_path / "a.png").read_bytes()
    (tmp_path / "b.png").write_bytes(data[: len(data) // 2])
    with pytest.raises(ImageFormatError):
        load_png(tmp_path / "b.png")


def test_png_rejects_other_formats(tmp_path):
    from PIL import Image
    Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(tmp_path / "a.bmp")
    with pytest.raises(ImageFormatError):
        load_png(tmp_path / "a.bmp")


def test_raster_validation():
    with pytest.raises(ValueError):
        RasterImage(np.zeros((4, 4), np.uint8))
    with pytest.raises(ValueError):
        RasterImage(np.zeros((4, 4, 3), np.float32))


def test_pfm_constant_and_unit(tmp_path):
    m = FloatMap(np.full((5, 7), 0.5))
    save_pfm(m, tmp_path / "a.pfm")
    assert load_pfm(tmp_path / "a.pfm") == m
    save_pfm(FloatMap(np.ones((1, 1))), tmp_path / "b.pfm")
    assert load_pfm(tmp_path / "b.pfm").values[0, 0] == 1.0


def test_pfm_rejects_nan(tmp_path):
    with pytest.raises(ValueError):
        save_pfm(np.array([[np.nan]]), tmp_path / "a.pfm")
    with pytest.raises(ValueError):
        FloatMap(np.array([[np.nan]]))


def test_pfm_row_order_and_header(tmp_path):
    vals = np.array([[0.0, 0.25], [0.5, 1.0]], dtype=np.float32)
    write_pfm_array(vals, tmp_path / "a.pfm")
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"Pf\n2 2\n-1.0\n")
    body = np.frombuffer(raw[len(b"Pf\n2 2\n-1.0\n"):], dtype="<f4")
    # bottom image row first
    assert body.tolist() == [0.5, 1.0, 0.0, 0.25]
    assert np.array_equal(read_pfm_array(tmp_path / "a.pfm"), vals)


def test_pfm_big_endian_and_bad_length(tmp_path):
    vals = np.array([[0.125, 0.75]], dtype=">f4")
    (tmp_path / "be.pfm").write_bytes(b"Pf\n2 1\n1.0\n" + vals.tobytes())
    assert read_pfm_array(tmp_path / "be.pfm").tolist() == [[0.125, 0.75]]
    (tmp_path / "short.pfm").write_bytes(b"Pf\n2 1\n-1.0\n" + b"\0" * 5)
    with pytest.raises(ImageFormatError):
        read_pfm_array(tmp_path / "short.pfm")
    (tmp_path / "color.pfm").write_bytes(b"PF\n1 1\n-1.0\n" + b"\0" * 12)
    with pytest.raises(ImageFormatError):
        read_pfm_array(tmp_path / "color.pfm")


@given(arrays(np.float32, st.tuples(st.integers(1, 8), st.integers(1, 8)),
              elements=st.floats(0, 1, width=32)))
def test_pfm_round_trip_bit_exact(tmp_path_factory, vals):
    path = tmp_path_factory.mktemp("pfm") / "m.pfm"
    save_pfm(FloatMap(vals.astype(np.float64)), path)
    back = load_pfm(path).values
    assert back.tobytes() == vals.astype(np.float64).tobytes()


def test_bbox_examples():
    assert bbox_of_pixels({PixelPoint(1, 2), PixelPoint(3, 5)}) == BoundingBox(1, 2, 3, 5)
    assert bbox_of_pixels([(4, 4)]) == BoundingBox(4, 4, 4, 4)
    with pytest.raises(ValueError):
        bbox_of_pixels([])


def test_bbox_random_against_scan():
    rng = np.random.default_rng(3)
    pts = rng.integers(0, 500, size=(100, 2))
    lo_u = lo_v = 10 ** 9
    hi_u = hi_v = -1
    for u, v in pts.tolist():
        lo_u, lo_v, hi_u, hi_v = min(lo_u, u), min(lo_v, v), max(hi_u, u), max(hi_v, v)
    assert bbox_of_pixels(pts) == BoundingBox(lo_u, lo_v, hi_u, hi_v)


pts_strategy = st.lists(st.tuples(st.integers(0, 50), st.integers(0, 50)), min_size=1, max_size=20)


@given(pts_strategy, pts_strategy)
def test_bbox_union_contains_parts(a, b):
    whole = bbox_of_pixels(a + b)
    assert whole.contains_box(bbox_of_pixels(a))
    assert whole.contains_box(bbox_of_pixels(b))


def test_box_geometry():
    b = BoundingBox(2, 3, 5, 4)
    assert (b.width, b.height, b.area) == (4, 2, 8)
    with pytest.raises(ValueError):
        BoundingBox(5, 0, 2, 1)
    assert b.intersection(BoundingBox(6, 0, 9, 9)) is None
    assert b.intersection(BoundingBox(4, 4, 9, 9)) == BoundingBox(4, 4, 5, 4)
    m = box_mask([b, BoundingBox(0, 0, 0, 0)], 6, 6)
    assert m.sum() == 9 and m[3, 2] and m[0, 0]
    assert b.inside(6, 5) and not b.inside(5, 5)
