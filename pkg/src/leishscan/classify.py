"""Nuclei-count estimation per region.

Three estimators cooperate: a zoom-level vote picks the area statistics, a
rule-based classifier maps area to the nearest multiple of the uni-nucleic
mean, and an SVM reads the shape of the log-likelihood curve of EM fits
with 1..10 components.  :func:`vote` reconciles the two counts.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .mixture import MixtureError, em_fit
from .segment import Region
from .svm import ClassifierModel, ModelError

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

ZOOM5 = "zoom5"
ZOOM10 = "zoom10"
LL_MAX_K = 10


class EstimationError(ValueError):
    pass


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class ParameterSet:
    zoom_label: str
    u: float
    sigma: float
    max_class: int = 9
    noise_floor: float | None = None  # None: u - 3 sigma

    def __post_init__(self):
        if self.noise_floor is None:
            object.__setattr__(self, "noise_floor", self.u - 3.0 * self.sigma)
        if not (self.u > 0 and 0 < self.sigma < self.u):
            raise ValueError(f"invalid area statistics u={self.u}, sigma={self.sigma}")
        if not self.noise_floor < self.u - 2.0 * self.sigma:
            raise ValueError("noise_floor must lie below u - 2 sigma")
        if self.max_class < 1:
            raise ValueError("max_class must be >= 1")

    @property
    def max_area(self) -> float:
        """Upper area bound of a uni-nucleic region, ``u + 2 sigma``."""
        return self.u + 2.0 * self.sigma

    @property
    def cell_radius(self) -> float:
        """Radius of a disc of area ``u``."""
        return math.sqrt(self.u / math.pi)

    def scaled(self, factor: float) -> "ParameterSet":
        return replace(self, u=self.u * factor, sigma=self.sigma * factor,
                       noise_floor=self.noise_floor * factor)


DEFAULT_PARAMETERS = {
    ZOOM5: ParameterSet(ZOOM5, 300.0, 48.0),
    # area scales with the square of the 2x linear magnification
    ZOOM10: ParameterSet(ZOOM10, 1200.0, 192.0),
}


def load_parameter_sets(path: str | Path) -> dict[str, ParameterSet]:
    """Read ``{"zoom5": {...}, "zoom10": {...}}`` from JSON or TOML."""
    path = Path(path)
    if path.suffix.lower() == ".toml":
        obj = tomllib.loads(path.read_text())
    else:
        obj = json.loads(path.read_text())
    sets = dict(DEFAULT_PARAMETERS)
    for label in (ZOOM5, ZOOM10):
        if label in obj:
            sets[label] = ParameterSet(zoom_label=label, **obj[label])
    return sets


def parameter_sets_to_json(sets: dict[str, ParameterSet]) -> str:
    obj = {k: {f: v for f, v in asdict(p).items() if f != "zoom_label"} for k, p in sets.items()}
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def estimate_zoom_from_areas(areas, touches_border, sets: dict[str, ParameterSet]) -> str:
    areas = list(areas)
    if not areas:
        raise EstimationError("zoom estimation needs at least one region")
    max5, max10 = sets[ZOOM5].max_area, sets[ZOOM10].max_area
    inner = [a for a, b in zip(areas, touches_border) if not b]
    votes5 = sum(1 for a in inner if a < max5)
    votes10 = sum(1 for a in inner if max5 <= a < max10)
    gap = 0.1 * len(areas)
    if votes10 - votes5 > gap:
        return ZOOM10
    if votes5 - votes10 > gap:
        return ZOOM5
    return ZOOM10 if sum(1 for a in inner if a > max10) > 4 else ZOOM5


def estimate_zoom(macrophage_regions: list[Region], sets: dict[str, ParameterSet] | None = None) -> str:
    """Vote on the magnification from macrophage nucleus areas."""
    sets = sets or DEFAULT_PARAMETERS
    return estimate_zoom_from_areas(
        [r.area for r in macrophage_regions], [r.touches_border for r in macrophage_regions], sets
    )


def rule_classify(area: float, params: ParameterSet) -> int | None:
    """Nuclei count by nearest area multiple; 0 is noise, ``None`` is unclassified."""
    if area <= 0:
        raise ValueError("area must be positive")
    if area <= params.noise_floor:
        return 0
    if area > (params.max_class + 0.5) * params.u:
        return None
    k = math.floor(area / params.u + 0.5)
    return min(max(k, 1), params.max_class)


@dataclass(frozen=True)
class LLFeatures:
    ll: tuple[float, ...]
    fod: tuple[float, ...]
    sod: tuple[float, ...]
    area: int

    @classmethod
    def from_ll(cls, ll, area: int) -> "LLFeatures":
        ll = np.asarray(ll, dtype=float)
        fod = np.diff(ll)
        sod = np.diff(fod)
        return cls(tuple(ll.tolist()), tuple(fod.tolist()), tuple(sod.tolist()), int(area))

    def as_array(self) -> np.ndarray:
        return np.array([*self.ll, *self.fod, *self.sod, self.area], dtype=float)


def ll_curve(points, max_k: int = LL_MAX_K, seed=0, min_std: float = 1e-6, max_iter: int = 200) -> list[float]:
    """Final EM log-likelihoods for k = 1..max_k.

    A (k+1)-mixture can always reproduce a k-mixture, so a fit that lands in
    a worse local optimum is replaced by the previous value.
    """
    x = np.asarray(points, dtype=float)
    ss = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    lls: list[float] = []
    for k, child in zip(range(1, max_k + 1), ss.spawn(max_k)):
        model = em_fit(x, k, min_std=min_std, max_iter=max_iter, seed=np.random.default_rng(child))
        value = model.log_likelihood
        if lls and value < lls[-1]:
            value = lls[-1]
        lls.append(value)
    return lls


def ll_feature_vector(region: Region, seed=0, min_std: float = 1e-6, max_iter: int = 200) -> LLFeatures:
    """28-coefficient vector: 10 log-likelihoods, 9 first and 8 second differences, area."""
    if region.area < LL_MAX_K:
        raise FeatureError(f"region {region.id} has {region.area} pixels; need >= {LL_MAX_K}")
    try:
        lls = ll_curve(region.pixels, LL_MAX_K, seed, min_std, max_iter)
    except (MixtureError, np.linalg.LinAlgError) as exc:
        raise FeatureError(f"EM failed on region {region.id}: {exc}") from exc
    return LLFeatures.from_ll(lls, region.area)


def classify_ml(features: LLFeatures | np.ndarray, model: ClassifierModel) -> int:
    vec = features.as_array() if isinstance(features, LLFeatures) else np.asarray(features, dtype=float)
    if vec.ndim != 1:
        raise ModelError("classify_ml takes a single feature vector")
    return int(model.predict(vec)[0])


@dataclass(frozen=True)
class NucleiEstimate:
    rule_vote: int
    svm_vote: int | None
    final: int
    agreed: bool


def vote(rule_vote: int, svm_vote: int | None) -> NucleiEstimate:
    """Trust the SVM only when it stays within 2 of the rule-based count."""
    if svm_vote is None or svm_vote == rule_vote:
        return NucleiEstimate(rule_vote, svm_vote, rule_vote, True)
    if abs(svm_vote - rule_vote) <= 2:
        return NucleiEstimate(rule_vote, svm_vote, svm_vote, False)
    return NucleiEstimate(rule_vote, svm_vote, rule_vote, False)
