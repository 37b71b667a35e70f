import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from PIL import Image

from leishscan.annotations import AnnotationSet
from leishscan.raster import (
    LINK_COLOR,
    MACROPHAGE_COLOR,
    ChannelMappingError,
    ChannelSet,
    CoordinateError,
    GeometryError,
    ImageFormatError,
    as_plane,
    load_image,
    render_overlay,
    save_png,
    split_rgb,
)

from oracles import bresenham


def test_single_pixel_channel_mapping():
    cs = split_rgb(np.array([[[10, 20, 30]]], dtype=np.uint8))
    assert cs.cytoplasm.tolist() == [[10]]
    assert cs.parasite.tolist() == [[20]]
    assert cs.macrophage.tolist() == [[30]]


def test_planes_are_read_only():
    cs = split_rgb(np.zeros((2, 2, 3), dtype=np.uint8))
    with pytest.raises(ValueError):
        cs.macrophage[0, 0] = 1


def test_as_plane_rejects_bad_input():
    with pytest.raises(GeometryError):
        as_plane(np.zeros((0, 3)))
    with pytest.raises(GeometryError):
        as_plane(np.zeros(5))
    with pytest.raises(GeometryError):
        ChannelSet(np.zeros((2, 2), np.uint8), np.zeros((2, 3), np.uint8), np.zeros((2, 2), np.uint8))


def test_png_roundtrip_is_lossless(tmp_path, rng):
    rgb = rng.integers(0, 256, size=(17, 23, 3), dtype=np.uint8)
    Image.fromarray(rgb).save(tmp_path / "x.png")
    cs = load_image(tmp_path / "x.png")
    assert np.array_equal(cs.to_rgb(), rgb)
    assert not cs.lossy


def test_alpha_is_ignored(tmp_path, rng):
    rgba = rng.integers(0, 256, size=(5, 6, 4), dtype=np.uint8)
    Image.fromarray(rgba, "RGBA").save(tmp_path / "a.png")
    assert np.array_equal(load_image(tmp_path / "a.png").to_rgb(), rgba[..., :3])


def test_jpeg_is_flagged_lossy(tmp_path):
    Image.fromarray(np.full((8, 8, 3), 100, np.uint8)).save(tmp_path / "x.jpg")
    assert load_image(tmp_path / "x.jpg").lossy


def test_grayscale_without_manifest(tmp_path):
    Image.fromarray(np.zeros((4, 4), np.uint8)).save(tmp_path / "g.png")
    with pytest.raises(ChannelMappingError):
        load_image(tmp_path / "g.png")


def test_unreadable_file(tmp_path):
    (tmp_path / "bad.png").write_text("not an image")
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "bad.png")
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "missing.png")


def _manifest(tmp_path, shapes):
    names = {}
    for i, (role, shape) in enumerate(zip(("macrophage", "parasite", "cytoplasm"), shapes)):
        save_png(tmp_path / f"{role}.png", np.full(shape, 10 * (i + 1), np.uint8))
        names[role] = f"{role}.png"
    path = tmp_path / "m.json"
    path.write_text(json.dumps(names))
    return path


def test_manifest_roles(tmp_path):
    cs = load_image(_manifest(tmp_path, [(100, 100)] * 3))
    assert (cs.macrophage == 10).all() and (cs.parasite == 20).all() and (cs.cytoplasm == 30).all()


def test_manifest_geometry_mismatch(tmp_path):
    with pytest.raises(GeometryError):
        load_image(_manifest(tmp_path, [(100, 100), (100, 100), (99, 100)]))


def test_manifest_missing_role(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"macrophage": "a.png"}))
    with pytest.raises(ChannelMappingError):
        load_image(p)


def _blank(h=20, w=20):
    z = np.zeros((h, w), np.uint8)
    return ChannelSet(z, z, z)


def test_empty_overlay_is_plain_merge(rng):
    rgb = rng.integers(0, 256, size=(9, 9, 3), dtype=np.uint8)
    cs = split_rgb(rgb)
    assert np.array_equal(render_overlay(cs, AnnotationSet()), rgb)


def test_single_marker():
    out = render_overlay(_blank(), AnnotationSet(macrophages=[(5, 5)]))
    assert tuple(out[5, 5]) == MACROPHAGE_COLOR


def test_out_of_bounds_marker():
    with pytest.raises(CoordinateError):
        render_overlay(_blank(), AnnotationSet(macrophages=[(20, 3)]))


@given(st.integers(0, 39), st.integers(0, 29), st.integers(0, 39), st.integers(0, 29))
def test_link_matches_bresenham(x0, y0, x1, y1):
    ann = AnnotationSet(macrophages=[(x1, y1)], parasites=[(x0, y0)], links=[(0, 0)])
    out = render_overlay(_blank(30, 40), ann)
    # marker pixels overwrite the line ends; compare everything else
    drawn = {(x, y) for y, x in zip(*np.nonzero((out == LINK_COLOR).all(axis=2)))}
    expected = bresenham(x0, y0, x1, y1)
    near_ends = {(x + dx, y + dy) for x, y in ((x0, y0), (x1, y1))
                 for dx, dy in ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1))}
    assert drawn == expected - near_ends
