"""2-D Gaussian mixtures fitted by EM on region pixel coordinates.

Means are seeded by k-means run on several random 90% subsets of the
points; the centroid sets are matched greedily, averaged and polished with
a final Lloyd pass on the full cloud.  Every random draw comes from the
``seed`` argument, so fits are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .segment import Region

LOG_2PI = math.log(2.0 * math.pi)


class MixtureError(ValueError):
    pass


class DeclusterError(MixtureError):
    pass


@dataclass(frozen=True)
class GaussianComponent:
    weight: float
    mean: tuple[float, float]
    covariance: tuple[tuple[float, float], tuple[float, float]]


@dataclass
class MixtureModel:
    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, 2)
    covariances: np.ndarray  # (k, 2, 2)
    log_likelihood: float = float("nan")
    iterations_used: int = 0
    converged: bool = False
    history: list[float] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.weights)

    @property
    def components(self) -> list[GaussianComponent]:
        return [
            GaussianComponent(float(w), tuple(m.tolist()), tuple(map(tuple, c.tolist())))
            for w, m, c in zip(self.weights, self.means, self.covariances)
        ]


def _as_points(points) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    if x.ndim != 2 or x.shape[1] != 2:
        raise MixtureError("points must have shape (n, 2)")
    if len(x) == 0:
        raise MixtureError("empty point cloud")
    return x


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def _plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(len(x))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, len(x) - 1)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


@numba.njit(cache=True)
def _lloyd_kernel(x, centers, max_iter):
    n, k = x.shape[0], centers.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    best = np.empty(n)
    for _ in range(max_iter):
        changed = False
        for i in range(n):
            bj, bd = 0, np.inf
            for j in range(k):
                dx = x[i, 0] - centers[j, 0]
                dy = x[i, 1] - centers[j, 1]
                d = dx * dx + dy * dy
                if d < bd:
                    bd, bj = d, j
            best[i] = bd
            if labels[i] != bj:
                labels[i] = bj
                changed = True
        if not changed:
            break
        counts = np.zeros(k, dtype=np.int64)
        for i in range(n):
            counts[labels[i]] += 1
        for j in range(k):
            if counts[j] == 0:
                # move an empty centre onto the worst-served point
                far = np.argmax(best)
                counts[labels[far]] -= 1
                labels[far] = j
                counts[j] = 1
                best[far] = 0.0
        sums = np.zeros((k, 2))
        for i in range(n):
            sums[labels[i], 0] += x[i, 0]
            sums[labels[i], 1] += x[i, 1]
        for j in range(k):
            centers[j, 0] = sums[j, 0] / counts[j]
            centers[j, 1] = sums[j, 1] / counts[j]
    return centers, labels


def lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations until the assignment stops changing."""
    return _lloyd_kernel(np.ascontiguousarray(x, dtype=float),
                         np.array(centers, dtype=float), max_iter)


def _match_greedy(ref: np.ndarray, other: np.ndarray) -> np.ndarray:
    """Reorder ``other`` so row i pairs with ``ref[i]`` (greedy nearest pairs)."""
    d = _sq_dists(ref, other)
    out = np.empty_like(other)
    used_r, used_o = set(), set()
    for flat in np.argsort(d, axis=None, kind="stable"):
        i, j = divmod(int(flat), d.shape[1])
        if i in used_r or j in used_o:
            continue
        out[i] = other[j]
        used_r.add(i)
        used_o.add(j)
        if len(used_r) == len(ref):
            break
    return out


def kmeans(points, k: int, restarts: int = 10, seed=0, subset_fraction: float = 0.9) -> np.ndarray:
    """Averaged k-means centroids, shape ``(k, 2)``."""
    x = _as_points(points)
    n = len(x)
    if not 1 <= k <= n:
        raise MixtureError(f"k={k} must be between 1 and the number of points ({n})")
    if k == n:
        return x.copy()
    if k == 1:
        return x.mean(axis=0, keepdims=True)
    rng = _rng(seed)
    m = max(k, int(round(subset_fraction * n)))
    runs = []
    for _ in range(max(1, restarts)):
        idx = rng.choice(n, size=m, replace=False) if m < n else np.arange(n)
        sub = x[idx]
        centers, _ = lloyd(sub, _plusplus(sub, k, rng))
        runs.append(centers)
    ref = runs[0]
    avg = np.mean([ref] + [_match_greedy(ref, c) for c in runs[1:]], axis=0)
    centers, _ = lloyd(x, avg)
    return centers


def _log_densities(x, weights, means, covs) -> np.ndarray:
    """(n, k) matrix of log(pi_k) + log N(x | mean_k, cov_k)."""
    a = covs[:, 0, 0]
    b = covs[:, 0, 1]
    c = covs[:, 1, 1]
    det = a * c - b * b
    dx = x[:, 0:1] - means[None, :, 0]
    dy = x[:, 1:2] - means[None, :, 1]
    maha = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    return logw - LOG_2PI - 0.5 * np.log(det) - 0.5 * maha


def _logsumexp_rows(v: np.ndarray) -> np.ndarray:
    m = v.max(axis=1)
    return m + np.log(np.exp(v - m[:, None]).sum(axis=1))


def log_likelihood(model: MixtureModel, points) -> float:
    x = _as_points(points)
    return float(_logsumexp_rows(_log_densities(x, model.weights, model.means, model.covariances)).sum())


def responsibilities(model: MixtureModel, points) -> np.ndarray:
    x = _as_points(points)
    v = _log_densities(x, model.weights, model.means, model.covariances)
    return np.exp(v - _logsumexp_rows(v)[:, None])


# Inside the EM loop each covariance is held in eigen form (cos, sin, l1, l2):
# principal axis (cos, sin), variance l1 along it and l2 across it.  Rebuilding
# the matrix and inverting it loses the small eigenvalue to cancellation once a
# component collapses onto a line, which breaks likelihood monotonicity.

@numba.njit(cache=True)
def _e_step(x, weights, means, eig, resp):
    """Fill ``resp`` with responsibilities; return the log-likelihood."""
    n, k = x.shape[0], weights.shape[0]
    const = np.empty(k)
    for j in range(k):
        lw = np.log(weights[j]) if weights[j] > 0 else -np.inf
        const[j] = lw - LOG_2PI - 0.5 * (np.log(eig[j, 2]) + np.log(eig[j, 3]))
    total = 0.0
    v = np.empty(k)
    for i in range(n):
        m = -np.inf
        for j in range(k):
            dx = x[i, 0] - means[j, 0]
            dy = x[i, 1] - means[j, 1]
            p = eig[j, 0] * dx + eig[j, 1] * dy
            q = eig[j, 0] * dy - eig[j, 1] * dx
            v[j] = const[j] - 0.5 * (p * p / eig[j, 2] + q * q / eig[j, 3])
            if v[j] > m:
                m = v[j]
        s = 0.0
        for j in range(k):
            e = np.exp(v[j] - m)
            resp[i, j] = e
            s += e
        total += m + np.log(s)
        for j in range(k):
            resp[i, j] /= s
    return total


@numba.njit(cache=True)
def _m_step(x, resp, means, eig, floor):
    """Weighted counts and means; principal-axis variances clamped to ``floor``.

    Components with zero weight keep their previous mean and shape.
    """
    n, k = resp.shape
    nk = np.zeros(k)
    sx = np.zeros((k, 2))
    for i in range(n):
        for j in range(k):
            r = resp[i, j]
            nk[j] += r
            sx[j, 0] += r * x[i, 0]
            sx[j, 1] += r * x[i, 1]
    new_means = means.copy()
    for j in range(k):
        if nk[j] > 0:
            new_means[j, 0] = sx[j, 0] / nk[j]
            new_means[j, 1] = sx[j, 1] / nk[j]
    sc = np.zeros((k, 3))
    for i in range(n):
        for j in range(k):
            r = resp[i, j]
            dx = x[i, 0] - new_means[j, 0]
            dy = x[i, 1] - new_means[j, 1]
            sc[j, 0] += r * dx * dx
            sc[j, 1] += r * dx * dy
            sc[j, 2] += r * dy * dy
    new_eig = eig.copy()
    for j in range(k):
        if nk[j] > 0:
            theta = 0.5 * math.atan2(2.0 * sc[j, 1], sc[j, 0] - sc[j, 2])
            new_eig[j, 0] = math.cos(theta)
            new_eig[j, 1] = math.sin(theta)
    # variances measured along the axes keep the small one accurate
    var = np.zeros((k, 2))
    for i in range(n):
        for j in range(k):
            r = resp[i, j]
            dx = x[i, 0] - new_means[j, 0]
            dy = x[i, 1] - new_means[j, 1]
            p = new_eig[j, 0] * dx + new_eig[j, 1] * dy
            q = new_eig[j, 0] * dy - new_eig[j, 1] * dx
            var[j, 0] += r * p * p
            var[j, 1] += r * q * q
    for j in range(k):
        if nk[j] > 0:
            new_eig[j, 2] = max(var[j, 0] / nk[j], floor)
            new_eig[j, 3] = max(var[j, 1] / nk[j], floor)
    return nk, new_means, new_eig


@numba.njit(cache=True)
def _em_loop(x, weights, means, eig, floor, max_iter, tol, history):
    n = x.shape[0]
    resp = np.empty((n, weights.shape[0]))
    ll = _e_step(x, weights, means, eig, resp)
    history[0] = ll
    it = 0
    converged = False
    while it < max_iter:
        it += 1
        nk, means, eig = _m_step(x, resp, means, eig, floor)
        weights = nk / n
        new_ll = _e_step(x, weights, means, eig, resp)
        history[it] = new_ll
        if not np.isfinite(new_ll):
            break
        gain = new_ll - ll
        ll = new_ll
        if gain < tol:
            converged = True
            break
    return weights, means, eig, it, converged


def _eig_to_cov(eig: np.ndarray) -> np.ndarray:
    c, s, l1, l2 = eig[:, 0], eig[:, 1], eig[:, 2], eig[:, 3]
    covs = np.empty((len(eig), 2, 2))
    covs[:, 0, 0] = l1 * c * c + l2 * s * s
    covs[:, 0, 1] = covs[:, 1, 0] = (l1 - l2) * c * s
    covs[:, 1, 1] = l1 * s * s + l2 * c * c
    return covs


def em_fit(points, k: int, min_std: float = 1e-6, max_iter: int = 200, seeds=None,
           tol: float = 1e-6, seed=0) -> MixtureModel:
    """Maximum-likelihood mixture of ``k`` 2-D Gaussians.

    Stops when the log-likelihood gains less than ``tol`` or after
    ``max_iter`` M-steps.  ``model.history`` holds the log-likelihood of the
    initial parameters followed by one value per iteration.  When a
    component collapses towards a line, ``model.log_likelihood`` is the exact
    fit value; recomputing it from ``model.covariances`` loses the small
    variance to rounding.
    """
    x = np.ascontiguousarray(_as_points(points))
    n = len(x)
    if not 1 <= k <= n:
        raise MixtureError(f"k={k} must be between 1 and the number of points ({n})")
    floor = float(min_std) ** 2
    means = np.array(seeds, dtype=float).reshape(k, 2) if seeds is not None else kmeans(x, k, seed=seed)
    spread = max(float(x.var(axis=0).mean()), floor)
    eig = np.tile([1.0, 0.0, spread, spread], (k, 1))
    weights = np.full(k, 1.0 / k)

    hist = np.empty(max_iter + 1)
    weights, means, eig, it, converged = _em_loop(x, weights, means, eig, floor, max_iter, tol, hist)
    covs = _eig_to_cov(eig)
    history = hist[: it + 1].tolist()
    ll = history[-1]
    if not math.isfinite(ll):
        raise MixtureError("log-likelihood became non-finite")
    return MixtureModel(weights, means, covs, ll, it, converged, history)


def _assign(model: MixtureModel, x: np.ndarray) -> np.ndarray:
    return np.argmax(_log_densities(x, model.weights, model.means, model.covariances), axis=1)


def decluster(region: Region, k: int, id_start: int = 1, seed=0, min_std: float = 1e-6,
              max_iter: int = 200) -> tuple[list[Region], MixtureModel]:
    """Split ``region`` into ``k`` nuclei by maximum responsibility.

    Components that end up owning no pixel trigger a refit with one fewer
    component.  Sub-regions are numbered from ``id_start`` in raster order of
    their first pixel.
    """
    pts = np.asarray(region.pixels)
    if k < 1 or len(pts) < k:
        raise DeclusterError(f"cannot split {len(pts)} pixels into {k} components")
    x = pts.astype(float)
    while True:
        try:
            model = em_fit(x, k, min_std=min_std, max_iter=max_iter, seed=seed)
        except (MixtureError, np.linalg.LinAlgError) as exc:
            raise DeclusterError(f"EM failed on region {region.id}: {exc}") from exc
        labels = _assign(model, x)
        used = np.unique(labels)
        if len(used) == k or k == 1:
            break
        k -= 1
    # pixels are in raster order, so the first index of each label orders parts
    first = [int(np.flatnonzero(labels == j)[0]) for j in range(k)]
    parts = []
    for new_id, j in enumerate(sorted(range(k), key=lambda j: first[j]), start=id_start):
        parts.append(Region(new_id, pts[labels == j], region.touches_border, region.kind))
    return parts, model
