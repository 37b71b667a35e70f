"""Synthetic benchmarks: end-to-end counting and cluster declustering.

    python scripts/run_benchmark.py [--images 20] [--clusters 200] [--seed 0]
"""

import argparse
import time

import numpy as np

from leishscan.pipeline import PipelineConfig, analyze_channels
from leishscan.synth import SceneSpec, generate
from leishscan.training import cluster_corpus, score_declustering


def benchmark_scenes(n_images: int, seed: int):
    """Isolated-nuclei scenes: 50 macrophages, 30 parasites, half the cells infected."""
    for i in range(n_images):
        yield generate(SceneSpec(width=384, height=384, macrophages=50, parasites=30,
                                 infected_fraction=0.5, seed=seed * 1000 + i))


def end_to_end(n_images: int, seed: int, config: PipelineConfig | None = None) -> dict:
    config = config or PipelineConfig(seed=seed)
    model = config.load_model()
    det = {"macrophages": 0, "parasites": 0}
    truth = {"macrophages": 0, "parasites": 0}
    ratio_err = []
    for channels, gt in benchmark_scenes(n_images, seed):
        rep = analyze_channels(channels, config, model).report
        det["macrophages"] += rep.total_macrophages
        det["parasites"] += rep.total_parasites
        truth["macrophages"] += len(gt.macrophage_nuclei)
        truth["parasites"] += len(gt.parasites)
        ratio_err.append(abs(rep.infection_ratio - gt.infection_ratio))
    return {
        "detected": det,
        "truth": truth,
        "relative_error": {k: abs(det[k] - truth[k]) / truth[k] for k in det},
        "max_ratio_error": float(np.max(ratio_err)),
        "mean_ratio_error": float(np.mean(ratio_err)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--images", type=int, default=20)
    ap.add_argument("--clusters", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    t = time.time()
    r = end_to_end(args.images, args.seed)
    print(f"end-to-end ({args.images} images, {time.time() - t:.1f}s)")
    for k in r["detected"]:
        print(f"  {k}: detected {r['detected'][k]} / truth {r['truth'][k]}"
              f"  (error {100 * r['relative_error'][k]:.2f}%)")
    print(f"  infection ratio error: max {r['max_ratio_error']:.4f}, mean {r['mean_ratio_error']:.4f}")

    t = time.time()
    per_size = args.clusters // 4
    corpus = cluster_corpus(range(2, 6), per_size, seed=args.seed + 7)
    config = PipelineConfig(seed=args.seed)
    score = score_declustering(corpus, config.load_model(), config)
    rule = score_declustering(corpus, None, config)
    print(f"declustering ({score.regions} clusters of 2-5 nuclei, {time.time() - t:.1f}s)")
    print(f"  count accuracy, rule+SVM+vote: {score.count_accuracy:.3f}")
    print(f"  count accuracy, rule only:     {rule.count_accuracy:.3f}")
    print(f"  pixel accuracy when k correct: {score.pixel_accuracy:.3f}")


if __name__ == "__main__":
    main()
