"""Single-image analysis: channels in, report and per-region results out."""

from __future__ import annotations

import datetime as _dt
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .annotations import AnnotationSet
from .associate import AssociationMode, AssociationResult, CytoplasmLookup, Nucleus, associate
from .classify import (
    DEFAULT_PARAMETERS,
    ZOOM5,
    ZOOM10,
    EstimationError,
    FeatureError,
    ParameterSet,
    classify_ml,
    estimate_zoom,
    ll_feature_vector,
    rule_classify,
    vote,
)
from .features import extract_features
from .mixture import DeclusterError, decluster
from .preprocess import PreprocessOptions, preprocess
from .raster import ChannelSet
from .report import InfectionReport, RegionResult, compute_stats
from .segment import (
    DegenerateHistogramError,
    Region,
    RegionKind,
    SegmentOptions,
    Segmentation,
    UnsupportedModalityError,
    segment_plane,
)
from .svm import ClassifierModel

log = logging.getLogger(__name__)

CHANNELS = ("macrophage", "parasite", "cytoplasm")
_KINDS = {
    "macrophage": RegionKind.MACROPHAGE,
    "parasite": RegionKind.PARASITE,
    "cytoplasm": RegionKind.CYTOPLASM,
}


def default_model_path() -> Path:
    return Path(str(resources.files("leishscan") / "data" / "default_model.json"))


@dataclass
class PipelineConfig:
    preprocess: PreprocessOptions = field(default_factory=PreprocessOptions)
    segment: SegmentOptions = field(default_factory=SegmentOptions)
    parameter_sets: dict[str, ParameterSet] = field(default_factory=lambda: dict(DEFAULT_PARAMETERS))
    zoom: str = "auto"  # auto, zoom5 or zoom10
    model_path: str | None = None  # None: bundled model
    use_svm: bool = True
    assoc_mode: str = "both"
    assoc_radius: float | None = None  # None: radius of a disc of area u
    seed: int = 0
    em_min_std: float = 1e-6
    em_max_iter: int = 200

    def __post_init__(self):
        if self.zoom not in ("auto", ZOOM5, ZOOM10):
            raise ValueError(f"zoom must be auto, {ZOOM5} or {ZOOM10}")
        AssociationMode(self.assoc_mode)
        if self.assoc_radius is not None and self.assoc_radius <= 0:
            raise ValueError("association radius must be > 0")

    def load_model(self) -> ClassifierModel | None:
        if not self.use_svm:
            return None
        return ClassifierModel.load(self.model_path or default_model_path())


@dataclass
class ImageAnalysis:
    report: InfectionReport
    zoom_label: str
    segmentations: dict[str, Segmentation]
    results: dict[str, list[RegionResult]]
    association: AssociationResult
    macrophage_nuclei: list[Nucleus]
    parasite_nuclei: list[Nucleus]
    warnings: list[str]

    def overlay_annotations(self) -> AnnotationSet:
        mac_index = {n.id: i for i, n in enumerate(self.macrophage_nuclei)}
        par_index = {n.id: i for i, n in enumerate(self.parasite_nuclei)}
        subs = [c for r in self.results["macrophage"] if r.final and r.final > 1 for c in r.subcentroids]
        return AnnotationSet(
            macrophages=[(n.x, n.y) for n in self.macrophage_nuclei],
            parasites=[(n.x, n.y) for n in self.parasite_nuclei],
            links=[(par_index[p], mac_index[m]) for p, m in self.association.pairs],
            subcentroids=subs,
        )


def region_seed(seed: int, channel: str, region_id: int) -> np.random.SeedSequence:
    """Per-region entropy so results do not depend on processing order."""
    return np.random.SeedSequence([seed, CHANNELS.index(channel), region_id])


def segment_channel(channels: ChannelSet, role: str, config: PipelineConfig, warnings: list[str]) -> Segmentation:
    """Preprocess and segment one channel; problems become entries in ``warnings``."""
    plane, w = preprocess(channels.plane(role), config.preprocess)
    warnings += [f"{role}:{x}" for x in w]
    try:
        try:
            return segment_plane(plane, config.segment, bimodal=(role == "cytoplasm"), kind=_KINDS[role])
        except UnsupportedModalityError:
            # usually a stretched noise floor; two classes keep the image usable
            warnings.append(f"{role}:modality-fallback")
            return segment_plane(plane, config.segment, bimodal=True, kind=_KINDS[role])
    except DegenerateHistogramError:
        warnings.append(f"{role}:uniform-plane")
        empty = np.zeros(plane.shape, dtype=bool)
        return Segmentation(empty, None, None, [], np.zeros(plane.shape, dtype=np.int64))


def classify_region(region: Region, role: str, params: ParameterSet, model: ClassifierModel | None,
                    config: PipelineConfig) -> RegionResult:
    feats = extract_features(region)
    result = RegionResult(region.id, region.area, feats.centroid, region.touches_border,
                          rule_vote=rule_classify(region.area, params), shape=int(feats.shape))
    if result.rule_vote is None:
        result.agreed = False
        return result
    svm_vote = None
    if model is not None and result.rule_vote >= 2 and not region.touches_border:
        ss = region_seed(config.seed, role, region.id)
        try:
            llf = ll_feature_vector(region, ss, config.em_min_std, config.em_max_iter)
            svm_vote = classify_ml(llf, model)
        except FeatureError as exc:
            log.debug("region %s: %s", region.id, exc)
    est = vote(result.rule_vote, svm_vote)
    result.svm_vote, result.final, result.agreed = est.svm_vote, est.final, est.agreed
    if est.final == 0:
        region.kind = RegionKind.NOISE
    return result


def nuclei_of(region: Region, result: RegionResult, role: str, config: PipelineConfig) -> list[tuple[float, float]]:
    """Nucleus centres of a counted region; multi-nucleic regions are declustered."""
    k = result.final
    if k == 1:
        return [result.centroid]
    ss = region_seed(config.seed, role, region.id).spawn(1)[0]
    try:
        parts, _ = decluster(region, k, seed=np.random.default_rng(ss),
                             min_std=config.em_min_std, max_iter=config.em_max_iter)
    except DeclusterError:
        return [result.centroid] * k
    cents = [tuple(map(float, p.pixels.mean(axis=0))) for p in parts]
    # a dropped component still counts as a nucleus; place it at the region centre
    return cents + [result.centroid] * (k - len(cents))


def analyze_channels(channels: ChannelSet, config: PipelineConfig | None = None,
                     model: ClassifierModel | None = None, image_path: str = "",
                     generated_at: _dt.datetime | None = None) -> ImageAnalysis:
    config = config or PipelineConfig()
    warnings: list[str] = []
    segs = {role: segment_channel(channels, role, config, warnings) for role in CHANNELS}

    if config.zoom == "auto":
        try:
            zoom = estimate_zoom(segs["macrophage"].regions, config.parameter_sets)
        except EstimationError:
            zoom = ZOOM5
            warnings.append("zoom-defaulted")
    else:
        zoom = config.zoom
    params = config.parameter_sets[zoom]

    results: dict[str, list[RegionResult]] = {}
    nuclei: dict[str, list[Nucleus]] = {}
    for role in ("macrophage", "parasite"):
        rs, ns = [], []
        for region in segs[role].regions:
            res = classify_region(region, role, params, model, config)
            if res.counted:
                res.subcentroids = nuclei_of(region, res, role, config)
                for x, y in res.subcentroids:
                    ns.append(Nucleus(len(ns) + 1, x, y, region.id))
            rs.append(res)
        results[role], nuclei[role] = rs, ns

    radius = config.assoc_radius if config.assoc_radius is not None else params.cell_radius
    lookup = CytoplasmLookup(segs["cytoplasm"].regions, channels.shape)
    assoc = associate(nuclei["macrophage"], nuclei["parasite"], lookup, config.assoc_mode, radius)
    owner = {n.id: n.region_id for n in nuclei["macrophage"]}
    by_id = {r.id: r for r in segs["macrophage"].regions}
    for _, m in assoc.pairs:
        by_id[owner[m]].parasite_count += 1
    report = compute_stats(results["macrophage"], results["parasite"], assoc, image_path, generated_at)
    report.warnings = warnings + report.warnings
    return ImageAnalysis(report, zoom, segs, results, assoc, nuclei["macrophage"], nuclei["parasite"], report.warnings)
