"""Per-channel intensity normalisation.

The default pipeline only applies :func:`contrast_stretch`; equalisation and
Gaussian smoothing are available as opt-in steps.  All rounding is half-up
and is done in integer arithmetic where the formula allows it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .raster import as_plane


class StretchError(ValueError):
    """Raised when the stretch percentiles collapse onto one intensity."""


@dataclass(frozen=True)
class HistogramData:
    bins: np.ndarray  # 256 counts
    total: int

    def __post_init__(self):
        if self.bins.shape != (256,):
            raise ValueError("histogram needs exactly 256 bins")
        if self.total <= 0 or int(self.bins.sum()) != self.total:
            raise ValueError("histogram bins must sum to a positive total")

    @classmethod
    def from_counts(cls, counts) -> "HistogramData":
        bins = np.zeros(256, dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        bins[: len(counts)] = counts
        return cls(bins, int(bins.sum()))


def histogram(plane: np.ndarray) -> HistogramData:
    bins = np.bincount(np.asarray(plane, dtype=np.uint8).ravel(), minlength=256).astype(np.int64)
    return HistogramData(bins, int(bins.sum()))


def nearest_rank(hist: HistogramData, fraction: float) -> int:
    """Intensity at the nearest-rank ``fraction`` percentile of ``hist``."""
    rank = max(1, math.ceil(fraction * hist.total))
    cum = np.cumsum(hist.bins)
    return int(np.searchsorted(cum, rank, side="left"))


def _round_div(num: np.ndarray, den: int) -> np.ndarray:
    # floor(num / den + 1/2) for den > 0
    return (2 * num + den) // (2 * den)


def contrast_stretch(plane: np.ndarray, low_percentile: float = 0.05,
                     high_percentile: float = 0.95) -> np.ndarray:
    """Linearly map the ``[c, d]`` percentile band onto ``[0, 255]``.

    Raises :class:`StretchError` when ``c == d``; callers are expected to fall
    back to the unmodified plane in that case.
    """
    if not 0.0 <= low_percentile < high_percentile <= 1.0:
        raise ValueError("need 0 <= low_percentile < high_percentile <= 1")
    hist = histogram(plane)
    c = nearest_rank(hist, low_percentile)
    d = nearest_rank(hist, high_percentile)
    if c == d:
        raise StretchError(f"degenerate histogram: both percentiles at intensity {c}")
    r = np.asarray(plane, dtype=np.int64)
    s = _round_div((r - c) * 255, d - c)
    return as_plane(np.clip(s, 0, 255))


def histogram_equalize(plane: np.ndarray) -> np.ndarray:
    hist = histogram(plane)
    cum = np.cumsum(hist.bins)
    lut = np.clip(_round_div(255 * cum, hist.total), 0, 255)
    return as_plane(lut[np.asarray(plane, dtype=np.intp)])


def gaussian_kernel_1d(sigma: float, kernel_size: int) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if kernel_size < 3 or kernel_size % 2 == 0:
        raise ValueError(f"kernel_size must be an odd integer >= 3, got {kernel_size}")
    half = kernel_size // 2
    x = np.arange(-half, half + 1, dtype=float)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def gaussian_blur(plane: np.ndarray, sigma: float, kernel_size: int = 3) -> np.ndarray:
    """Separable Gaussian smoothing with edge replication."""
    k = gaussian_kernel_1d(sigma, kernel_size)
    half = kernel_size // 2
    img = np.pad(np.asarray(plane, dtype=float), half, mode="edge")
    h, w = np.asarray(plane).shape
    rows = sum(k[i] * img[:, i : i + w] for i in range(kernel_size))
    out = sum(k[i] * rows[i : i + h, :] for i in range(kernel_size))
    return as_plane(np.clip(np.floor(out + 0.5), 0, 255))


@dataclass
class PreprocessOptions:
    stretch_low: float = 0.05
    stretch_high: float = 0.95
    equalize: bool = False
    blur: tuple[float, int] | None = None


def preprocess(plane: np.ndarray, options: PreprocessOptions | None = None) -> tuple[np.ndarray, list[str]]:
    """Apply the configured chain; returns the plane and any warning flags."""
    options = options or PreprocessOptions()
    warnings = []
    if options.blur is not None:
        plane = gaussian_blur(plane, *options.blur)
    if options.equalize:
        plane = histogram_equalize(plane)
    else:
        try:
            plane = contrast_stretch(plane, options.stretch_low, options.stretch_high)
        except StretchError:
            warnings.append("degenerate-stretch")
            plane = as_plane(plane)
    return plane, warnings
