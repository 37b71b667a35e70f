import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from leishscan.preprocess import (
    HistogramData,
    PreprocessOptions,
    StretchError,
    contrast_stretch,
    gaussian_blur,
    gaussian_kernel_1d,
    histogram,
    histogram_equalize,
    nearest_rank,
    preprocess,
)

import oracles

planes = arrays(np.uint8, st.tuples(st.integers(1, 24), st.integers(1, 24)))


def test_histogram_small_cases():
    h = histogram(np.array([[0], [255]], np.uint8))
    assert h.bins[0] == 1 and h.bins[255] == 1 and h.total == 2
    assert histogram(np.full((10, 10), 7, np.uint8)).bins[7] == 100


def test_histogram_matches_naive_count(rng):
    plane = rng.integers(0, 256, (64, 64), dtype=np.uint8)
    naive = [0] * 256
    for v in plane.ravel().tolist():
        naive[v] += 1
    h = histogram(plane)
    assert h.bins.tolist() == naive and h.total == 4096


def test_histogram_data_validation():
    with pytest.raises(ValueError):
        HistogramData(np.zeros(10, np.int64), 0)
    with pytest.raises(ValueError):
        HistogramData(np.zeros(256, np.int64), 0)


@given(planes, st.floats(0.0, 1.0))
def test_nearest_rank_matches_sort(plane, q):
    assert nearest_rank(histogram(plane), q) == oracles.nearest_rank(plane.ravel().tolist(), q)


def test_stretch_midpoint_rounds_up():
    values = [50] * 5 + [100] * 89 + [150] * 6
    plane = np.array(values, np.uint8).reshape(10, 10)
    out = contrast_stretch(plane)
    assert out[plane == 100].tolist() == [128] * 89
    assert out[plane == 50].max() == 0 and out[plane == 150].min() == 255


def test_stretch_identity_on_full_range():
    plane = np.tile(np.arange(256, dtype=np.uint8), (4, 1))
    plane[0, :20] = 0
    plane[3, -20:] = 255
    assert np.array_equal(contrast_stretch(plane, 0.0, 1.0), plane)


def test_stretch_ramp_against_oracle():
    ramp = np.arange(100, dtype=np.uint8).reshape(10, 10)
    c = oracles.nearest_rank(range(100), 0.05)
    d = oracles.nearest_rank(range(100), 0.95)
    expected = [min(255, max(0, int(np.floor((r - c) * 255 / (d - c) + 0.5)))) for r in range(100)]
    assert contrast_stretch(ramp).ravel().tolist() == expected
    assert (c, d) == (4, 94)


def test_stretch_degenerate():
    with pytest.raises(StretchError):
        contrast_stretch(np.full((5, 5), 9, np.uint8))
    out, warnings = preprocess(np.full((5, 5), 9, np.uint8))
    assert warnings == ["degenerate-stretch"] and (out == 9).all()


@given(planes)
def test_stretch_is_monotone(plane):
    try:
        out = contrast_stretch(plane)
    except StretchError:
        return
    order = np.argsort(plane.ravel(), kind="stable")
    assert (np.diff(out.ravel()[order].astype(int)) >= 0).all()


def test_equalize_examples():
    assert (histogram_equalize(np.full((3, 3), 40, np.uint8)) == 255).all()
    two = np.array([[0, 255], [0, 255]], np.uint8)
    out = histogram_equalize(two)
    assert out[0, 0] in (127, 128) and out[0, 1] == 255
    ramp = np.arange(256, dtype=np.uint8).reshape(16, 16)
    assert np.abs(histogram_equalize(ramp).astype(int) - ramp).max() <= 1


def test_blur_constant_plane():
    plane = np.full((7, 9), 77, np.uint8)
    assert np.array_equal(gaussian_blur(plane, 1.3, 5), plane)


def test_blur_single_pixel_stamp():
    plane = np.zeros((5, 5), np.uint8)
    plane[2, 2] = 255
    sigma = 0.8
    x = np.array([-1.0, 0.0, 1.0])
    k = np.exp(-x**2 / (2 * sigma**2))
    k /= k.sum()
    stamp = np.floor(255 * np.outer(k, k) + 0.5)
    out = gaussian_blur(plane, sigma, 3)
    assert np.abs(out[1:4, 1:4] - stamp).max() <= 1
    assert out[0].sum() == 0 and out[:, 0].sum() == 0


def test_large_sigma_approaches_box():
    assert np.allclose(gaussian_kernel_1d(1e4, 3), 1 / 3, atol=1e-6)
    assert np.allclose(gaussian_kernel_1d(1e4, 5), 1 / 5, atol=1e-6)


def test_even_kernel_rejected():
    with pytest.raises(ValueError):
        gaussian_blur(np.zeros((4, 4), np.uint8), 1.0, 4)


def test_preprocess_equalize_replaces_stretch(rng):
    plane = rng.integers(0, 256, (16, 16), dtype=np.uint8)
    out, _ = preprocess(plane, PreprocessOptions(equalize=True))
    assert np.array_equal(out, histogram_equalize(plane))
