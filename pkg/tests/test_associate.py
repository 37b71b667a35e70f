import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leishscan.associate import AssociationMode, AssociationResult, CytoplasmLookup, Nucleus, associate
from leishscan.segment import Region


def rect_region(rid, x0, y0, x1, y1):
    pts = [(x, y) for y in range(y0, y1 + 1) for x in range(x0, x1 + 1)]
    return Region(rid, np.array(pts, dtype=np.int64))


def test_single_candidate_in_range():
    res = associate([Nucleus(1, 10, 10)], [Nucleus(1, 13, 10)], mode="radius", radius=10)
    assert res.pairs == [(1, 1)] and res.infected_macrophages == {1}


def test_tie_goes_to_lower_id():
    macs = [Nucleus(7, 0, 0), Nucleus(3, 10, 0)]
    res = associate(macs, [Nucleus(1, 5, 0)], mode="radius", radius=10)
    assert res.pairs == [(1, 3)]


def test_far_parasite_unassociated():
    res = associate([Nucleus(1, 0, 0), Nucleus(2, 50, 50)], [Nucleus(1, 150, 150)], mode="radius", radius=10)
    assert res.pairs == [] and res.unassociated == [1]


def test_both_mode_prefers_shared_cytoplasm():
    cyto = [rect_region(1, 0, 0, 19, 19)]
    a = Nucleus(1, 5, 10)  # inside the cytoplasm region
    b = Nucleus(2, 24, 10)  # closer to the parasite, outside the region
    par = Nucleus(1, 18, 10)
    assert associate([a, b], [par], cyto, mode="both", radius=15).pairs == [(1, 1)]
    assert associate([a, b], [par], cyto, mode="both", radius=10).unassociated == [1]
    assert associate([a, b], [par], mode="radius", radius=15).pairs == [(1, 2)]
    assert associate([a, b], [par], cyto, mode="cytoplasm").pairs == [(1, 1)]


def test_parasite_outside_cytoplasm():
    cyto = [rect_region(1, 0, 0, 9, 9)]
    res = associate([Nucleus(1, 5, 5)], [Nucleus(1, 12, 5)], cyto, mode="cytoplasm")
    assert res.unassociated == [1]


def test_mode_requirements():
    with pytest.raises(ValueError):
        associate([], [], mode="radius")
    with pytest.raises(ValueError):
        associate([], [], mode="radius", radius=0)
    with pytest.raises(ValueError):
        associate([], [], mode="cytoplasm")
    with pytest.raises(ValueError):
        associate([], [], mode="nearest")


def test_duplicate_pairs_rejected():
    with pytest.raises(ValueError):
        AssociationResult([(1, 1), (1, 2)], [], AssociationMode.RADIUS)


def test_lookup_rounds_half_up():
    look = CytoplasmLookup([rect_region(4, 2, 2, 3, 3)], (6, 6))
    assert look(1.5, 1.5) == 4 and look(1.49, 2) == 0 and look(-3, 2) == 0


points = st.lists(st.tuples(st.integers(0, 30), st.integers(0, 30)), min_size=0, max_size=6)


@given(points, points, st.floats(1, 20), st.sampled_from(list(AssociationMode)))
def test_matches_brute_force(mac_xy, par_xy, radius, mode):
    cyto = [rect_region(1, 0, 0, 14, 30), rect_region(2, 16, 0, 30, 30)]
    look = CytoplasmLookup(cyto, (31, 31))
    macs = [Nucleus(i + 1, x, y) for i, (x, y) in enumerate(mac_xy)]
    pars = [Nucleus(i + 1, x, y) for i, (x, y) in enumerate(par_xy)]
    res = associate(macs, pars, cyto, mode=mode, radius=radius)
    expected = {}
    for p in pars:
        cands = []
        for m in macs:
            d = math.hypot(m.x - p.x, m.y - p.y)
            if mode != AssociationMode.CYTOPLASM and d > radius:
                continue
            if mode != AssociationMode.RADIUS and not (look(p.x, p.y) and look(p.x, p.y) == look(m.x, m.y)):
                continue
            cands.append((d, m.id))
        if cands:
            expected[p.id] = min(cands)[1]
    assert dict(res.pairs) == expected
    assert sorted(res.unassociated) == sorted(set(p.id for p in pars) - set(expected))
