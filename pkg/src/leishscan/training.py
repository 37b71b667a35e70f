"""Labeled cluster corpora from synthetic scenes, and model training runs."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .classify import FeatureError, ll_feature_vector
from .pipeline import PipelineConfig, region_seed, segment_channel
from .segment import Region
from .svm import ClassifierModel, Kernel, train_model
from .synth import GroundTruth, IntensityModel, PlacementError, SceneSpec, generate

HOLDOUT_SPLIT = 0.66


@dataclass
class LabeledRegion:
    region: Region
    size: int  # true nuclei count
    group: int  # ground-truth group index
    truth: GroundTruth


def cluster_scene(group_sizes: list[int], seed: int, width: int = 384, height: int = 384,
                  noise_sigma: float = 5.0, singles: int = 0, overlap_budget: float = 0.15):
    """Render a scene with the given cluster sizes plus ``singles`` isolated nuclei."""
    spec = SceneSpec(width=width, height=height, macrophages=len(group_sizes) + singles,
                     parasites=0, infected_fraction=0.0, overlap_budget=overlap_budget,
                     intensity=IntensityModel(noise_sigma=noise_sigma), seed=seed)
    return generate(spec, list(group_sizes) + [1] * singles)


def match_regions(regions: list[Region], truth: GroundTruth) -> list[LabeledRegion]:
    """Regions that contain every nucleus centre of exactly one truth group and nothing else."""
    owner = {}
    for r in regions:
        for x, y in r.pixels.tolist():
            owner[(x, y)] = r.id
    hits: dict[int, set[int]] = {}
    for gi, members in enumerate(truth.groups):
        for i in members:
            n = truth.macrophage_nuclei[i]
            rid = owner.get((math.floor(n.x + 0.5), math.floor(n.y + 0.5)))
            if rid is not None:
                hits.setdefault(rid, set()).add(gi)
    by_id = {r.id: r for r in regions}
    out = []
    for rid, gs in sorted(hits.items()):
        if len(gs) != 1 or by_id[rid].touches_border:
            continue
        gi = next(iter(gs))
        members = truth.groups[gi]
        inside = sum(
            owner.get((math.floor(truth.macrophage_nuclei[i].x + 0.5),
                       math.floor(truth.macrophage_nuclei[i].y + 0.5))) == rid
            for i in members
        )
        if inside == len(members):
            out.append(LabeledRegion(by_id[rid], len(members), gi, truth))
    return out


def scene_regions(channels, config: PipelineConfig) -> list[Region]:
    return segment_channel(channels, "macrophage", config, []).regions


def cluster_corpus(sizes, per_size: int, seed: int = 0, groups_per_scene: int = 8,
                   singles: int = 6, noise_sigma: float = 5.0,
                   config: PipelineConfig | None = None) -> list[LabeledRegion]:
    """Segmented clusters, ``per_size`` of each size, in generation order.

    Each scene mixes the sizes round-robin so a sequential split sees every
    class on both sides.
    """
    config = config or PipelineConfig()
    sizes = list(sizes)
    need = {s: per_size for s in sizes}
    out: list[LabeledRegion] = []
    scene = 0
    ss = np.random.SeedSequence(seed)
    while any(need.values()):
        scene += 1
        if scene > 50 * (1 + sum(need.values())):
            raise RuntimeError("corpus generation is not converging")
        pending = [s for s in sizes for _ in range(need[s])]
        rng = np.random.default_rng(ss.spawn(1)[0])
        order = rng.permutation(len(pending))
        wanted = [pending[i] for i in order[:groups_per_scene]]
        # keep the foreground dense enough for the percentile stretch
        wanted += [int(rng.choice(sizes)) for _ in range(groups_per_scene - len(wanted))]
        wanted.sort(reverse=True)
        scene_seed = int(ss.spawn(1)[0].generate_state(1)[0])
        try:
            channels, truth = cluster_scene(wanted, scene_seed, noise_sigma=noise_sigma, singles=singles)
        except PlacementError:
            continue
        for lr in match_regions(scene_regions(channels, config), truth):
            if lr.size in need and need[lr.size] > 0:
                need[lr.size] -= 1
                out.append(lr)
    return out


def corpus_features(corpus: list[LabeledRegion], config: PipelineConfig | None = None):
    """LL feature matrix and labels; regions whose EM fails are dropped."""
    config = config or PipelineConfig()
    rows, labels = [], []
    for lr in corpus:
        try:
            f = ll_feature_vector(lr.region, region_seed(config.seed, "macrophage", lr.region.id),
                                  config.em_min_std, config.em_max_iter)
        except FeatureError:
            continue
        rows.append(f.as_array())
        labels.append(lr.size)
    return np.array(rows), np.array(labels, dtype=np.int64)


@dataclass
class TrainingRun:
    model: ClassifierModel
    holdout_accuracy: float | None
    class_counts: dict[int, int]


def train_with_holdout(features: np.ndarray, labels: np.ndarray, kernel: Kernel | None = None,
                       C: float = 10.0, split: float = HOLDOUT_SPLIT) -> TrainingRun:
    """Report accuracy on a sequential split, then refit on everything."""
    n_train = int(math.floor(split * len(labels)))
    acc = None
    head, tail = labels[:n_train], labels[n_train:]
    if len(tail) and len(np.unique(head)) >= 2 and min(np.bincount(head)[np.unique(head)]) >= 2:
        m = train_model(features[:n_train], head, kernel, C)
        acc = float(np.mean(m.predict(features[n_train:]) == tail))
    model = train_model(features, labels, kernel, C)
    counts = {int(c): int(n) for c, n in zip(*np.unique(labels, return_counts=True))}
    model.summary.update({"class_counts": {str(k): v for k, v in counts.items()},
                          "holdout_split": split, "holdout_accuracy": acc})
    return TrainingRun(model, acc, counts)


def truth_labels(lr: LabeledRegion) -> np.ndarray:
    """Generating nucleus (index into the group) of each region pixel.

    Pixels covered by several discs go to the one they are deepest inside,
    measured as distance over radius.
    """
    px = lr.region.pixels.astype(float)
    members = [lr.truth.macrophage_nuclei[i] for i in lr.truth.groups[lr.group]]
    depth = np.stack([np.hypot(px[:, 0] - n.x, px[:, 1] - n.y) / n.radius for n in members], axis=1)
    return np.argmin(depth, axis=1)


def matched_pixels(pred: np.ndarray, truth: np.ndarray, k: int) -> int:
    """Pixels on which ``pred`` agrees with ``truth`` under the best relabeling."""
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (pred, truth), 1)
    if k <= 6:
        return max(int(conf[np.arange(k), list(p)].sum()) for p in itertools.permutations(range(k)))
    total, used_r, used_c = 0, set(), set()
    for flat in np.argsort(-conf, axis=None):
        r, c = divmod(int(flat), k)
        if r not in used_r and c not in used_c:
            used_r.add(r)
            used_c.add(c)
            total += int(conf[r, c])
    return total


@dataclass
class DeclusterScore:
    regions: int
    count_correct: int
    pixels: int  # pixels in regions whose count was correct
    pixels_matched: int

    @property
    def count_accuracy(self) -> float:
        return self.count_correct / self.regions if self.regions else 0.0

    @property
    def pixel_accuracy(self) -> float:
        return self.pixels_matched / self.pixels if self.pixels else 0.0


def score_declustering(corpus: list[LabeledRegion], model: ClassifierModel | None,
                       config: PipelineConfig | None = None) -> DeclusterScore:
    """Run rule + SVM + vote and EM declustering on labeled clusters."""
    from .classify import DEFAULT_PARAMETERS
    from .mixture import DeclusterError, decluster
    from .pipeline import classify_region

    config = config or PipelineConfig()
    params = config.parameter_sets.get("zoom5", DEFAULT_PARAMETERS["zoom5"])
    correct = pixels = matched = 0
    for lr in corpus:
        res = classify_region(lr.region, "macrophage", params, model, config)
        if res.final != lr.size:
            continue
        correct += 1
        seed = np.random.default_rng(region_seed(config.seed, "macrophage", lr.region.id).spawn(1)[0])
        truth = truth_labels(lr)
        pixels += len(truth)
        try:
            parts, _ = decluster(lr.region, lr.size, seed=seed, min_std=config.em_min_std,
                                 max_iter=config.em_max_iter)
        except DeclusterError:
            continue
        index = {xy: j for j, p in enumerate(parts) for xy in map(tuple, p.pixels.tolist())}
        pred = np.array([index[xy] for xy in map(tuple, lr.region.pixels.tolist())])
        matched += matched_pixels(pred, truth, lr.size)
    return DeclusterScore(len(corpus), correct, pixels, matched)
