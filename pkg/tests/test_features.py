import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leishscan.features import (
    DIRECTIONS,
    Shape,
    circularity,
    extract_features,
    feature_rows,
    features_csv,
    freeman_chain,
    min_bbox,
    shape_descriptor,
    centroid,
)
from leishscan.segment import Region, label_regions


def region(pixels, rid=1):
    return Region(rid, np.array(sorted(pixels, key=lambda p: (p[1], p[0])), dtype=np.int64).reshape(-1, 2))


def block(x0, y0, w, h):
    return region([(x, y) for y in range(y0, y0 + h) for x in range(x0, x0 + w)])


def disc(r, cx=20, cy=20):
    return region([(x, y) for y in range(cy - r, cy + r + 1) for x in range(cx - r, cx + r + 1)
                   if (x - cx) ** 2 + (y - cy) ** 2 <= r * r])


pixel_sets = st.sets(st.tuples(st.integers(0, 15), st.integers(0, 15)), min_size=1, max_size=80)


def test_square_features():
    f = extract_features(block(0, 0, 2, 2))
    assert f.area == 4 and f.centroid == (0.5, 0.5) and f.bbox == (0, 0, 1, 1)
    assert f.shape is Shape.CIRCULAR_OR_ELLIPTICAL


def test_single_pixel_features():
    f = extract_features(region([(7, 3)]))
    assert f.area == 1 and f.centroid == (7.0, 3.0) and f.bbox == (7, 3, 7, 3)
    assert f.shape is Shape.CIRCULAR_OR_ELLIPTICAL
    assert freeman_chain(region([(7, 3)])).codes == ()


def test_centroid_examples():
    assert centroid(region([(0, 0), (2, 0)])) == (1.0, 0.0)
    assert centroid(block(10, 10, 3, 3)) == (11.0, 11.0)


@given(pixel_sets)
def test_centroid_and_bbox_match_scan(pixels):
    r = region(pixels)
    sx = sum(p[0] for p in pixels) / len(pixels)
    sy = sum(p[1] for p in pixels) / len(pixels)
    cx, cy = centroid(r)
    assert abs(cx - sx) < 1e-9 and abs(cy - sy) < 1e-9
    xs = [p[0] for p in pixels]
    ys = [p[1] for p in pixels]
    assert min_bbox(r) == (min(xs), min(ys), max(xs), max(ys))


def test_bbox_examples():
    assert min_bbox(region([(1, 2), (4, 7)])) == (1, 2, 4, 7)
    assert min_bbox(region([(3, 3)])) == (3, 3, 3, 3)


def test_chain_of_square():
    chain = freeman_chain(block(0, 0, 2, 2))
    assert chain.start == (0, 0) and chain.codes == (0, 6, 4, 2)
    assert set(chain.walk()) == {(0, 0), (1, 0), (1, 1), (0, 1)}


def test_chain_of_bar():
    chain = freeman_chain(block(4, 4, 3, 1))
    assert chain.codes == (0, 0, 4, 4)
    assert chain.walk()[-1] == chain.start


@given(pixel_sets)
def test_chain_walks_the_outer_boundary(pixels):
    # trace the component containing the top-left pixel
    mask = np.zeros((16, 16), bool)
    for x, y in pixels:
        mask[y, x] = True
    comp = label_regions(mask, 8)[0]
    pts = comp.pixel_set()
    chain = freeman_chain(comp)
    path = chain.walk()
    assert path[-1] == path[0] == chain.start
    assert all(p in pts for p in path)
    for x, y in path:  # every visited pixel has a background 4-neighbour or image edge
        nbrs = [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)]
        assert any(n not in pts for n in nbrs)
    if len(pts) > 1:
        for (x0, y0), (x1, y1) in zip(path, path[1:]):
            assert (x1 - x0, y1 - y0) in DIRECTIONS


def test_line_is_other():
    assert extract_features(block(0, 0, 10, 1)).shape is Shape.OTHER
    line20 = block(0, 0, 20, 1)
    chain = freeman_chain(line20)
    assert circularity(chain, 20) == pytest.approx(4 * math.pi * 20 / 38**2)
    assert shape_descriptor(chain, 20) is Shape.OTHER


def test_disc_is_circular():
    d = disc(10)
    chain = freeman_chain(d)
    assert circularity(chain, d.area) > 0.85
    assert shape_descriptor(chain, d.area) is Shape.CIRCULAR_OR_ELLIPTICAL


def test_two_pixels_are_circular():
    r = region([(0, 0), (1, 0)])
    assert shape_descriptor(freeman_chain(r), 2) is Shape.CIRCULAR_OR_ELLIPTICAL


def test_feature_csv():
    regs = [block(0, 0, 2, 2), disc(3)]
    regs[1].id = 2
    rows = feature_rows(regs, [extract_features(r) for r in regs], channel="macrophage")
    text = features_csv(rows)
    lines = text.splitlines()
    assert lines[0].startswith("channel,id,kind,area,cx,cy")
    assert lines[1].startswith("macrophage,1,unset,4,0.5000,0.5000,0,0,1,1,1,0")
    assert len(lines) == 3
