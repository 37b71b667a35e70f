"""Thresholding and connected-component labelling.

Histogram monotony analysis decides how many intensity classes a channel
holds; Otsu (or valley-constrained multi-Otsu) picks the cut(s); the top
class is binarised and split into 4-connected regions with a two-pass
union-find labeller.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction

import numba
import numpy as np

from .preprocess import HistogramData, histogram


class SegmentationError(ValueError):
    pass


class DegenerateHistogramError(SegmentationError):
    pass


class ConstraintError(SegmentationError):
    pass


class UnsupportedModalityError(SegmentationError):
    pass


class RegionKind(str, enum.Enum):
    MACROPHAGE = "macrophage-nuclear"
    PARASITE = "parasite-nuclear"
    CYTOPLASM = "cytoplasm"
    NOISE = "noise"
    UNSET = "unset"


@dataclass(eq=False)
class Region:
    id: int
    pixels: np.ndarray  # (n, 2) integer (x, y), raster order
    touches_border: bool = False
    kind: RegionKind = RegionKind.UNSET
    parasite_count: int = 0
    contour: object = None

    @property
    def area(self) -> int:
        return len(self.pixels)

    @property
    def color_code(self) -> tuple[int, int, int]:
        # stable pseudo-random display colour; avoids near-black
        h = (self.id * 2654435761) & 0xFFFFFF
        return (64 + (h & 0xFF) % 192, 64 + ((h >> 8) & 0xFF) % 192, 64 + ((h >> 16) & 0xFF) % 192)

    def pixel_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(map(tuple, self.pixels.tolist()))


@dataclass(frozen=True)
class ThresholdSet:
    levels: tuple[int, ...]
    modality: int
    # the optimum sat on a constraint-interval edge
    constrained_suboptimal: bool = False

    def __post_init__(self):
        lv = self.levels
        if any(not 1 <= t <= 255 for t in lv) or any(a >= b for a, b in zip(lv, lv[1:])):
            raise ValueError(f"threshold levels must be strictly ascending in [1, 255]: {lv}")
        if len(lv) != self.modality - 1:
            raise ValueError("number of levels must equal modality - 1")


@dataclass(frozen=True)
class PeakAnalysis:
    count: int
    peaks: tuple[int, ...]
    valleys: tuple[int, ...]


def count_peaks(hist: HistogramData, window: int = 31, min_prominence: float = 0.005,
                passes: int = 2) -> PeakAnalysis:
    """Count histogram modes after moving-window smoothing.

    Smoothing applies ``passes`` integer window sums with symmetric edge
    reflection, so a flat histogram stays flat.  Two passes (a triangular
    kernel) flatten the comb left behind by a contrast stretch.  Extrema are sign changes of the smoothed first
    difference (zero runs skipped, position at the run midpoint); a rise into
    the last bin or a fall out of the first bin counts as a boundary peak.

    Adjacent peak/valley pairs whose height difference is below
    ``min_prominence`` times the pixel count are cancelled, smallest first,
    which removes counting-noise wiggles.  With ``min_prominence=0`` every
    sign change counts.
    """
    if window % 2 == 0 or not 3 <= window <= 255:
        raise ValueError("window must be odd and in [3, 255]")
    if min_prominence < 0:
        raise ValueError("min_prominence must be >= 0")
    if passes < 1:
        raise ValueError("passes must be >= 1")
    half = window // 2
    smooth = hist.bins.astype(np.int64)
    for _ in range(passes):
        cs = np.concatenate([[0], np.cumsum(np.pad(smooth, half, mode="symmetric"))])
        smooth = cs[window:] - cs[:-window]  # length 256
    diff = np.diff(smooth)
    nz = np.flatnonzero(diff)
    if not len(nz):
        return PeakAnalysis(0, (), ())
    # alternating extrema as [position, smoothed value, is_peak]
    ext: list[tuple[int, int, bool]] = []
    signs = np.sign(diff[nz])
    if signs[0] < 0:
        ext.append((int(nz[0]) // 2, int(smooth[0]), True))
    else:
        ext.append((0, int(smooth[0]), False))
    for a, b, sa, sb in zip(nz[:-1], nz[1:], signs[:-1], signs[1:]):
        if sa != sb:
            pos = int(a + 1 + b) // 2
            ext.append((pos, int(smooth[pos]), bool(sa > 0)))
    if signs[-1] > 0:
        ext.append(((int(nz[-1]) + 1 + 255) // 2, int(smooth[255]), True))
    else:
        ext.append((255, int(smooth[255]), False))

    limit = min_prominence * hist.total * window ** (passes - 1)
    while len(ext) > 1:
        gaps = [abs(ext[i][1] - ext[i + 1][1]) for i in range(len(ext) - 1)]
        i = int(np.argmin(gaps))
        if limit == 0 or gaps[i] >= limit:
            break
        del ext[i:i + 2]
    peaks = [e[0] for e in ext if e[2]]
    valleys = [ext[i][0] for i in range(1, len(ext) - 1) if not ext[i][2]]
    return PeakAnalysis(len(peaks), tuple(peaks), tuple(valleys))


def _class_sums(hist: HistogramData):
    n = np.concatenate([[0], np.cumsum(hist.bins)])
    s = np.concatenate([[0], np.cumsum(hist.bins * np.arange(256, dtype=np.int64))])
    return n, s


def _exact_score(n, s, cuts) -> Fraction:
    # sum over classes of S_k^2 / n_k; between-class variance up to constants
    edges = (0, *cuts, 256)
    total = Fraction(0)
    for lo, hi in zip(edges[:-1], edges[1:]):
        nk = int(n[hi] - n[lo])
        if nk:
            total += Fraction(int(s[hi] - s[lo]) ** 2, nk)
    return total


def _best_cuts(hist: HistogramData, ranges: list[range]) -> tuple[tuple[int, ...], bool]:
    """Exhaustive search over the cartesian product of ``ranges``.

    A float pass finds near-optimal candidates; exact rational scores settle
    them, with the lexicographically smallest cut tuple winning ties.
    """
    n, s = _class_sums(hist)
    grids = np.meshgrid(*[np.asarray(r, dtype=np.int64) for r in ranges], indexing="ij")
    cuts = [g.ravel() for g in grids]
    valid = np.ones(len(cuts[0]), dtype=bool)
    for a, b in zip(cuts[:-1], cuts[1:]):
        valid &= a < b
    if not valid.any():
        raise ConstraintError("no admissible threshold combination")
    edges = [np.zeros_like(cuts[0])] + cuts + [np.full_like(cuts[0], 256)]
    score = np.zeros(len(cuts[0]))
    for lo, hi in zip(edges[:-1], edges[1:]):
        nk = (n[hi] - n[lo]).astype(float)
        sk = (s[hi] - s[lo]).astype(float)
        with np.errstate(divide="ignore", invalid="ignore"):
            score += np.where(nk > 0, sk * sk / np.where(nk > 0, nk, 1), 0.0)
    score[~valid] = -np.inf
    best = score.max()
    near = np.flatnonzero(score >= best - abs(best) * 1e-9 - 1e-9)
    winner, win_score = None, None
    for idx in near:
        c = tuple(int(col[idx]) for col in cuts)
        sc = _exact_score(n, s, c)
        if win_score is None or sc > win_score or (sc == win_score and c < winner):
            winner, win_score = c, sc
    on_edge = any(len(r) > 1 and t in (r[0], r[-1]) for t, r in zip(winner, ranges))
    return winner, on_edge


def otsu_threshold(hist: HistogramData) -> int:
    """Smallest t in [1, 255] maximising between-class variance (x < t vs x >= t)."""
    if np.count_nonzero(hist.bins) < 2:
        raise DegenerateHistogramError("Otsu needs at least two occupied intensity bins")
    (t,), _ = _best_cuts(hist, [range(1, 256)])
    return t


def valley_constraints(valleys, half_width: int = 20) -> list[tuple[int, int]]:
    return [(max(1, v - half_width), min(255, v + half_width)) for v in valleys]


def multi_otsu(hist: HistogramData, classes: int,
               constraints: list[tuple[int, int]]) -> ThresholdSet:
    """Multi-class Otsu with each threshold confined to its own intensity interval."""
    if classes < 2:
        raise ValueError("need at least two classes")
    if classes > 3:
        raise UnsupportedModalityError(f"{classes}-modal histograms are not supported")
    if len(constraints) != classes - 1:
        raise ConstraintError(f"expected {classes - 1} constraint intervals, got {len(constraints)}")
    ranges = []
    for lo, hi in constraints:
        lo, hi = max(1, int(lo)), min(255, int(hi))
        if lo > hi:
            raise ConstraintError(f"empty constraint interval [{lo}, {hi}]")
        ranges.append(range(lo, hi + 1))
    for a, b in zip(ranges, ranges[1:]):
        if a[-1] >= b[0]:
            raise ConstraintError("constraint intervals must be disjoint and ascending")
    if np.count_nonzero(hist.bins) < 2:
        raise DegenerateHistogramError("thresholding needs at least two occupied intensity bins")
    cuts, on_edge = _best_cuts(hist, ranges)
    return ThresholdSet(cuts, classes, constrained_suboptimal=on_edge)


def binarize(plane: np.ndarray, thresholds: ThresholdSet, foreground_class: int | None = None) -> np.ndarray:
    """Boolean mask of pixels falling in ``foreground_class`` (default: top class)."""
    lv = thresholds.levels
    if foreground_class is None:
        foreground_class = len(lv)
    if not 0 <= foreground_class <= len(lv):
        raise ValueError(f"foreground_class {foreground_class} out of range")
    p = np.asarray(plane)
    lo = lv[foreground_class - 1] if foreground_class > 0 else 0
    hi = lv[foreground_class] if foreground_class < len(lv) else 256
    return (p >= lo) & (p < hi)


@numba.njit(cache=True)
def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


@numba.njit(cache=True)
def _two_pass(mask, eight):
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    parent = np.zeros(h * w + 1, dtype=np.int32)
    nxt = 1
    nb = np.empty(4, dtype=np.int32)
    for y in range(h):
        for x in range(w):
            if not mask[y, x]:
                continue
            k = 0
            if x > 0 and labels[y, x - 1]:
                nb[k] = labels[y, x - 1]
                k += 1
            if y > 0:
                if labels[y - 1, x]:
                    nb[k] = labels[y - 1, x]
                    k += 1
                if eight:
                    if x > 0 and labels[y - 1, x - 1]:
                        nb[k] = labels[y - 1, x - 1]
                        k += 1
                    if x < w - 1 and labels[y - 1, x + 1]:
                        nb[k] = labels[y - 1, x + 1]
                        k += 1
            if k == 0:
                parent[nxt] = nxt
                labels[y, x] = nxt
                nxt += 1
                continue
            root = _find(parent, nb[0])
            for j in range(1, k):
                r = _find(parent, nb[j])
                if r < root:
                    parent[root] = r
                    root = r
                elif r > root:
                    parent[r] = root
            labels[y, x] = root
    # roots are the smallest provisional label of each component, which is
    # the label of its first pixel in raster order
    final = np.zeros(nxt, dtype=np.int32)
    count = 0
    for i in range(1, nxt):
        r = _find(parent, i)
        if r == i:
            count += 1
            final[i] = count
        else:
            final[i] = final[r]
    for y in range(h):
        for x in range(w):
            if labels[y, x]:
                labels[y, x] = final[labels[y, x]]
    return labels, count


def label_image(mask: np.ndarray, connectivity: int = 4) -> tuple[np.ndarray, int]:
    """Label map (0 = background, ids from 1 in raster order) and region count."""
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    m = np.ascontiguousarray(np.asarray(mask, dtype=np.bool_))
    if m.ndim != 2:
        raise ValueError("mask must be 2-D")
    return _two_pass(m, connectivity == 8)


def regions_from_labels(labels: np.ndarray, count: int) -> list[Region]:
    h, w = labels.shape
    ys, xs = np.nonzero(labels)
    lab = labels[ys, xs]
    order = np.argsort(lab, kind="stable")
    pts = np.stack([xs[order], ys[order]], axis=1)
    border = (xs == 0) | (ys == 0) | (xs == w - 1) | (ys == h - 1)
    touches = np.zeros(count + 1, dtype=bool)
    touches[lab[border]] = True
    sizes = np.bincount(lab, minlength=count + 1)[1:]
    chunks = np.split(pts, np.cumsum(sizes)[:-1]) if count else []
    return [Region(i + 1, chunk, bool(touches[i + 1])) for i, chunk in enumerate(chunks)]


def label_regions(mask: np.ndarray, connectivity: int = 4) -> list[Region]:
    labels, count = label_image(mask, connectivity)
    return regions_from_labels(labels, count)


@dataclass
class SegmentOptions:
    peak_window: int = 31
    peak_prominence: float = 0.005
    peak_passes: int = 2
    valley_halfwidth: int = 20
    connectivity: int = 4


@dataclass
class Segmentation:
    mask: np.ndarray
    thresholds: ThresholdSet
    peaks: PeakAnalysis
    regions: list[Region] = field(default_factory=list)
    labels: np.ndarray | None = None


def choose_thresholds(hist: HistogramData, options: SegmentOptions, bimodal: bool = False) -> tuple[ThresholdSet, PeakAnalysis]:
    peaks = count_peaks(hist, options.peak_window, options.peak_prominence, options.peak_passes)
    if peaks.count > 3 and not bimodal:
        raise UnsupportedModalityError(f"{peaks.count} histogram peaks detected (at most 3 supported)")
    if bimodal or peaks.count < 3 or len(peaks.valleys) != 2:
        return multi_otsu(hist, 2, [(1, 255)]), peaks
    return multi_otsu(hist, 3, valley_constraints(peaks.valleys, options.valley_halfwidth)), peaks


def segment_plane(plane: np.ndarray, options: SegmentOptions | None = None,
                  bimodal: bool = False, kind: RegionKind = RegionKind.UNSET) -> Segmentation:
    """Threshold ``plane``, keep the top intensity class and label it."""
    options = options or SegmentOptions()
    thresholds, peaks = choose_thresholds(histogram(plane), options, bimodal)
    mask = binarize(plane, thresholds)
    labels, count = label_image(mask, options.connectivity)
    regions = regions_from_labels(labels, count)
    for r in regions:
        r.kind = kind
    return Segmentation(mask, thresholds, peaks, regions, labels)


def render_label_map(labels: np.ndarray, regions: list[Region]) -> np.ndarray:
    lut = np.zeros((len(regions) + 1, 3), dtype=np.uint8)
    for r in regions:
        lut[r.id] = r.color_code
    return lut[labels]


__all__ = [
    "RegionKind", "Region", "ThresholdSet", "PeakAnalysis", "count_peaks", "otsu_threshold",
    "multi_otsu", "valley_constraints", "binarize", "label_image", "label_regions",
    "segment_plane", "SegmentOptions", "Segmentation", "render_label_map",
]
