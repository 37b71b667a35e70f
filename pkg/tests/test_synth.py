import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from leishscan.pipeline import PipelineConfig, analyze_channels
from leishscan.raster import load_image
from leishscan.synth import (
    IntensityModel,
    PlacementError,
    SceneSpec,
    generate,
    grow_cluster,
    lens_area,
    write_scene,
)


def quiet(**kw):
    return IntensityModel(noise_sigma=0.0, **kw)


def test_empty_scene():
    channels, truth = generate(SceneSpec(width=32, height=32, macrophages=0, parasites=0, intensity=quiet()))
    for role in ("macrophage", "parasite", "cytoplasm"):
        assert (channels.plane(role) == 20).all()
    assert truth.macrophage_nuclei == [] and truth.parasites == [] and truth.infection_ratio == 0


def test_single_macrophage_segments_to_one_region():
    # Otsu drifts towards the background class once foreground falls below ~5%
    spec = SceneSpec(width=64, height=64, macrophages=1, parasites=0, intensity=quiet(), seed=4)
    channels, truth = generate(spec)
    analysis = analyze_channels(channels, PipelineConfig(use_svm=False))
    regions = analysis.segmentations["macrophage"].regions
    assert len(regions) == 1
    assert 300 - 3 * 48 <= regions[0].area <= 300 + 3 * 48
    assert abs(regions[0].area - truth.macrophage_nuclei[0].area) < 0.1 * truth.macrophage_nuclei[0].area


def test_fixed_seed_is_reproducible():
    spec = SceneSpec(width=128, height=128, macrophages=6, parasites=4, seed=9)
    a, ta = generate(spec)
    b, tb = generate(spec)
    assert np.array_equal(a.to_rgb(), b.to_rgb()) and ta.to_json() == tb.to_json()
    c, _ = generate(SceneSpec(width=128, height=128, macrophages=6, parasites=4, seed=10))
    assert not np.array_equal(a.to_rgb(), c.to_rgb())


def test_over_dense_scene():
    with pytest.raises(PlacementError):
        generate(SceneSpec(width=64, height=64, macrophages=40, parasites=0))


def test_truth_bookkeeping():
    _, truth = generate(SceneSpec(macrophages=20, parasites=12, infected_fraction=0.25, seed=3))
    assert len(truth.parasites) == 12 and truth.infected == 5
    assert truth.infection_ratio == 5 / 20
    for p, h in zip(truth.parasites, truth.hosts):
        if h is not None:
            host = truth.macrophage_nuclei[h]
            assert math.hypot(p.x - host.x, p.y - host.y) <= 0.5 * math.sqrt(300 / math.pi) + 1e-9
        else:
            assert all(math.hypot(p.x - n.x, p.y - n.y) >= 1.6 * n.radius + 3 for n in truth.macrophage_nuclei)
    ann = truth.annotation_obj()
    assert len(ann["points"]) == 32 and len(ann["links"]) == 5


def lens_numeric(r1, r2, d, n=1500):
    # midpoint rule over the smaller disc's bounding box
    xs = np.linspace(-r1, r1, n, endpoint=False) + r1 / n
    xx, yy = np.meshgrid(xs, xs)
    inside = (xx**2 + yy**2 <= r1 * r1) & ((xx - d) ** 2 + yy**2 <= r2 * r2)
    return inside.sum() * (2 * r1 / n) ** 2


@pytest.mark.parametrize("r1,r2,d", [(5, 5, 3), (4, 7, 6), (6, 6, 12), (3, 9, 2), (8, 5, 0)])
def test_lens_area_matches_numeric(r1, r2, d):
    assert lens_area(r1, r2, d) == pytest.approx(lens_numeric(r1, r2, d), rel=0.01, abs=0.05)


@settings(max_examples=25)
@given(st.integers(0, 10**6), st.integers(2, 6))
def test_cluster_respects_overlap_budget(seed, size):
    rng = np.random.default_rng(seed)
    discs = grow_cluster(rng, size, 300.0, 48.0, budget=0.15)
    assert len(discs) == size
    for i, (x, y, r) in enumerate(discs):
        lost = sum(lens_area(r, r2, math.hypot(x - x2, y - y2)) for j, (x2, y2, r2) in enumerate(discs) if j != i)
        assert lost <= 0.15 * math.pi * r * r + 1e-6
    # connected: every disc overlaps some other
    for i, (x, y, r) in enumerate(discs):
        assert any(math.hypot(x - x2, y - y2) < r + r2 for j, (x2, y2, r2) in enumerate(discs) if j != i)


def test_write_scene_roundtrip(tmp_path):
    channels, truth = generate(SceneSpec(width=128, height=128, macrophages=3, parasites=2, seed=1))
    manifest = write_scene(channels, truth, tmp_path, "s")
    loaded = load_image(manifest)
    assert np.array_equal(loaded.to_rgb(), channels.to_rgb())
    obj = json.loads((tmp_path / "s_truth.json").read_text())
    assert obj["infected_macrophages"] == truth.infected and len(obj["macrophage_nuclei"]) == 3


def test_spec_json_roundtrip():
    spec = SceneSpec(macrophages=7, intensity=IntensityModel(trimodal=True), seed=5)
    assert SceneSpec.from_json(spec.to_json()) == spec


def test_trimodal_scene_has_three_classes():
    channels, _ = generate(SceneSpec(width=192, height=192, macrophages=12, parasites=0,
                                     intensity=IntensityModel(trimodal=True), seed=2))
    analysis = analyze_channels(channels, PipelineConfig(use_svm=False))
    assert analysis.segmentations["macrophage"].thresholds.modality == 3
    assert len(analysis.segmentations["macrophage"].regions) == 12
