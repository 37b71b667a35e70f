"""Command-line entry point: ``leishscan {analyze,train,synth,eval,features}``."""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .annotations import METRICS, load_annotation_file
from .classify import DEFAULT_PARAMETERS, LL_MAX_K, ZOOM5, ZOOM10, FeatureError, ll_feature_vector, load_parameter_sets
from .features import CSV_FIELDS, extract_features, feature_rows, features_csv
from .pipeline import PipelineConfig, analyze_channels, region_seed, segment_channel
from .preprocess import PreprocessOptions
from .raster import RasterError, load_image, render_overlay, save_png
from .report import evaluate, evaluation_table, regions_csv, render_report, sidecar_json
from .segment import SegmentOptions, SegmentationError, render_label_map
from .svm import Kernel, ModelError, TrainingError
from .synth import PlacementError, SceneSpec, generate, write_scene

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("leishscan")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


class ConfigError(Exception):
    pass


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        if p.suffix.lower() == ".toml":
            return tomllib.loads(p.read_text())
        return json.loads(p.read_text())
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse config {p}: {exc}") from exc


def _pick(args, conf: dict, name: str, default=None):
    """Flag value if given, else config-file value, else default."""
    v = getattr(args, name, None)
    if v is not None:
        return v
    return conf.get(name, default)


def _zoom_label(v: str) -> str:
    return {"auto": "auto", "5": ZOOM5, "10": ZOOM10, ZOOM5: ZOOM5, ZOOM10: ZOOM10}[str(v)]


def build_config(args, conf: dict) -> PipelineConfig:
    blur = _pick(args, conf, "blur")
    if isinstance(blur, str):
        parts = blur.split(",")
        blur = (float(parts[0]), int(parts[1]) if len(parts) > 1 else 3)
    elif isinstance(blur, (list, tuple)):
        blur = (float(blur[0]), int(blur[1]) if len(blur) > 1 else 3)
    pre = PreprocessOptions(
        stretch_low=float(_pick(args, conf, "stretch_low", 0.05)),
        stretch_high=float(_pick(args, conf, "stretch_high", 0.95)),
        equalize=bool(_pick(args, conf, "equalize", False)),
        blur=blur,
    )
    seg = SegmentOptions(
        peak_window=int(_pick(args, conf, "peak_window", 31)),
        peak_prominence=float(_pick(args, conf, "peak_prominence", 0.005)),
        valley_halfwidth=int(_pick(args, conf, "valley_halfwidth", 20)),
        connectivity=int(_pick(args, conf, "connectivity", 4)),
    )
    if seg.connectivity not in (4, 8):
        raise ConfigError("connectivity must be 4 or 8")
    params_file = _pick(args, conf, "params")
    if params_file:
        if not Path(params_file).is_file():
            raise ConfigError(f"parameter file not found: {params_file}")
        sets = load_parameter_sets(params_file)
    else:
        sets = dict(DEFAULT_PARAMETERS)
    model = _pick(args, conf, "model")
    if model and not Path(model).is_file():
        raise ConfigError(f"model file not found: {model}")
    radius = _pick(args, conf, "assoc_radius", "auto")
    radius = None if str(radius) == "auto" else float(radius)
    return PipelineConfig(
        preprocess=pre,
        segment=seg,
        parameter_sets=sets,
        zoom=_zoom_label(_pick(args, conf, "zoom", "auto")),
        model_path=model,
        use_svm=not bool(_pick(args, conf, "no_svm", False)),
        assoc_mode=str(_pick(args, conf, "assoc_mode", "both")),
        assoc_radius=radius,
        seed=int(_pick(args, conf, "seed", 0)),
        em_min_std=float(_pick(args, conf, "em_min_std", 1e-6)),
        em_max_iter=int(_pick(args, conf, "em_max_iter", 200)),
    )


@dataclass
class Job:
    path: str
    config: PipelineConfig
    timestamp: bool
    verbose_report: bool
    want_json: bool
    want_overlay: bool
    want_labels: bool


def _stem(path: str) -> str:
    p = Path(path)
    return p.stem


def run_job(job: Job) -> dict:
    """Analyze one image; returns the outputs to write (never raises)."""
    try:
        channels = load_image(job.path)
        model = job.config.load_model()
        now = _dt.datetime.now().replace(second=0, microsecond=0) if job.timestamp else None
        res = analyze_channels(channels, job.config, model, image_path=job.path, generated_at=now)
    except (RasterError, SegmentationError, ModelError, OSError, ValueError) as exc:
        return {"path": job.path, "error": f"{type(exc).__name__}: {exc}"}
    text = render_report(res.report, timestamp=job.timestamp)
    if job.verbose_report:
        text += "\n" + regions_csv(res.results)
    out = {"path": job.path, "report": text, "warnings": res.warnings}
    if job.want_json:
        extra = {
            "zoom_label": res.zoom_label,
            "thresholds": {ch: (list(s.thresholds.levels) if s.thresholds else []) for ch, s in res.segmentations.items()},
            "association": {"mode": res.association.mode.value,
                            "pairs": [list(p) for p in res.association.pairs],
                            "unassociated": res.association.unassociated},
        }
        out["json"] = sidecar_json(res.report, res.results, extra)
    if job.want_overlay:
        out["overlay"] = render_overlay(channels, res.overlay_annotations())
    if job.want_labels:
        out["labels"] = {ch: render_label_map(s.labels, s.regions) for ch, s in res.segmentations.items()}
    return out


def _write_outputs(result: dict, out_dir: Path | None) -> None:
    src = Path(result["path"])
    base = (out_dir or src.parent) / _stem(result["path"])
    base.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{base}_report.txt").write_text(result["report"])
    if "json" in result:
        Path(f"{base}_report.json").write_text(result["json"])
    if "overlay" in result:
        save_png(f"{base}_overlay.png", result["overlay"])
    for ch, img in result.get("labels", {}).items():
        save_png(f"{base}_{ch}_labels.png", img)


def cmd_analyze(args) -> int:
    conf = _load_config_file(args.config)
    config = build_config(args, conf)
    if config.use_svm:
        try:
            config.load_model()
        except (ModelError, OSError, ValueError) as exc:
            raise ConfigError(f"cannot load model: {exc}") from exc
    jobs_n = int(_pick(args, conf, "jobs", 1))
    out_dir = _pick(args, conf, "out")
    out_dir = Path(out_dir) if out_dir else None
    jobs = [
        Job(str(p), config, not args.no_timestamp, args.verbose > 0,
            bool(_pick(args, conf, "json", False)), bool(_pick(args, conf, "overlay", False)),
            bool(_pick(args, conf, "label_maps", False)))
        for p in args.inputs
    ]
    if jobs_n > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=jobs_n) as pool:
            results = list(pool.map(run_job, jobs))
    else:
        results = [run_job(j) for j in jobs]
    failures = 0
    for r in results:
        if "error" in r:
            failures += 1
            log.error("failed: %s: %s", r["path"], r["error"])
            continue
        _write_outputs(r, out_dir)
        for w in r["warnings"]:
            log.warning("%s: %s", r["path"], w)
        log.info("analyzed %s", r["path"])
    return EXIT_PARTIAL if failures else EXIT_OK


def _read_corpus(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """Labeled LL features from JSON ``{"features": [...], "labels": [...]}`` or CSV."""
    if path.suffix.lower() == ".json":
        obj = json.loads(path.read_text())
        return np.asarray(obj["features"], dtype=float), np.asarray(obj["labels"], dtype=np.int64)
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    cols = [f"f{i}" for i in range(3 * LL_MAX_K - 2)]
    try:
        X = np.array([[float(r[c]) for c in cols] for r in rows])
        y = np.array([int(r["label"]) for r in rows], dtype=np.int64)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"corpus CSV needs columns label, f0..f27: {exc}") from exc
    return X, y


def cmd_train(args) -> int:
    from .training import cluster_corpus, corpus_features, train_with_holdout

    if args.corpus:
        path = Path(args.corpus)
        if not path.is_file():
            raise ConfigError(f"corpus not found: {path}")
        X, y = _read_corpus(path)
    else:
        lo, _, hi = args.classes.partition("-")
        sizes = range(int(lo), int(hi or lo) + 1)
        corpus = cluster_corpus(sizes, args.per_class, seed=args.seed)
        X, y = corpus_features(corpus)
    kernel = Kernel(args.kernel, gamma=args.gamma, degree=args.degree, coef0=args.coef0)
    try:
        run = train_with_holdout(X, y, kernel, args.C)
    except TrainingError as exc:
        log.error("training failed: %s", exc)
        return EXIT_CONFIG
    run.model.save(args.out)
    print(f"classes: {run.class_counts}")
    acc = "n/a" if run.holdout_accuracy is None else f"{run.holdout_accuracy:.4f}"
    print(f"holdout accuracy (sequential 66% split): {acc}")
    print(f"model written to {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    path = Path(args.spec) if args.spec else None
    if path and not path.is_file():
        raise ConfigError(f"spec not found: {path}")
    try:
        spec = SceneSpec.from_json(path.read_text()) if path else SceneSpec()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scene spec: {exc}") from exc
    if args.seed is not None:
        spec.seed = args.seed
    try:
        channels, truth = generate(spec)
    except PlacementError as exc:
        log.error("%s", exc)
        return EXIT_PARTIAL
    out = Path(args.out)
    manifest = write_scene(channels, truth, out, args.stem)
    image_key = manifest.name
    ann = {"images": {image_key: {"truth": truth.annotation_obj()}}}
    (out / f"{args.stem}_annotations.json").write_text(json.dumps(ann, indent=1, sort_keys=True) + "\n")
    print(manifest)
    return EXIT_OK


def _alg_totals(sidecar: dict) -> dict[str, float]:
    rep = sidecar["report"]
    return {"macrophages": rep["total_macrophages"], "parasites": rep["total_parasites"],
            "infected": rep["infected_macrophages"]}


def cmd_eval(args) -> int:
    annotations: dict[str, dict[str, dict[str, int]]] = {}
    for a in args.annotations:
        p = Path(a)
        if not p.is_file():
            raise ConfigError(f"annotation file not found: {p}")
        loaded = load_annotation_file(p)
        if not loaded:
            log.warning("annotation file %s is empty", p)
        annotations.update(loaded)
    per_image = {}
    for s in args.reports:
        side = json.loads(Path(s).read_text())
        image = side["report"]["image_path"]
        key = image if image in annotations else Path(image).name
        if key not in annotations:
            log.warning("no annotation for %s; skipped", image)
            continue
        per_image[key] = (_alg_totals(side), annotations[key])
    blocks = []
    agg_alg = {m: 0.0 for m in METRICS}
    agg_ann: dict[str, dict[str, float]] = {}
    for key in sorted(per_image):
        alg, anns = per_image[key]
        if len(anns) < 2:
            log.warning("%s has fewer than two annotators; skipped", key)
            continue
        table = {m: evaluate(alg[m], [anns[n][m] for n in sorted(anns)]) for m in METRICS}
        blocks.append(f"# {key}\n" + evaluation_table(table))
        for m in METRICS:
            agg_alg[m] += alg[m]
        for n in anns:
            for m in METRICS:
                agg_ann.setdefault(n, {mm: 0.0 for mm in METRICS})[m] += anns[n][m]
    if len(blocks) > 1 and len(agg_ann) >= 2:
        table = {m: evaluate(agg_alg[m], [agg_ann[n][m] for n in sorted(agg_ann)]) for m in METRICS}
        blocks.append("# aggregate\n" + evaluation_table(table))
    text = "\n".join(blocks)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_features(args) -> int:
    conf = _load_config_file(args.config)
    config = build_config(args, conf)
    rows = []
    failures = 0
    for path in args.inputs:
        try:
            channels = load_image(path)
        except (RasterError, OSError) as exc:
            log.error("failed: %s: %s", path, exc)
            failures += 1
            continue
        warnings: list[str] = []
        for role in ("macrophage", "parasite", "cytoplasm"):
            try:
                seg = segment_channel(channels, role, config, warnings)
            except SegmentationError as exc:
                log.error("failed: %s (%s): %s", path, role, exc)
                failures += 1
                continue
            feats = [extract_features(r) for r in seg.regions]
            block = feature_rows(seg.regions, feats, channel=role)
            for row, region in zip(block, seg.regions):
                row = {"image": path, **row}
                if args.ll and role != "cytoplasm":
                    try:
                        llf = ll_feature_vector(region, region_seed(config.seed, role, region.id),
                                              config.em_min_std, config.em_max_iter)
                        row.update({f"f{i}": repr(float(v)) for i, v in enumerate(llf.as_array())})
                    except FeatureError:
                        row.update({f"f{i}": "" for i in range(3 * LL_MAX_K - 2)})
                    row["label"] = ""
                rows.append(row)
    if args.ll and rows:
        # cytoplasm rows carry no LL columns; pad them to a common header
        fields = ["image", "channel", *CSV_FIELDS, *(f"f{i}" for i in range(3 * LL_MAX_K - 2)), "label"]
        rows = [{k: r.get(k, "") for k in fields} for r in rows]
    text = features_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_PARTIAL if failures else EXIT_OK


def _add_pipeline_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline")
    g.add_argument("--config", help="TOML/JSON config file; flags override it")
    g.add_argument("--params", help="parameter-set file (TOML/JSON)")
    g.add_argument("--zoom", choices=["auto", "5", "10"])
    g.add_argument("--model", help="classifier model file (default: bundled)")
    g.add_argument("--no-svm", action="store_const", const=True, dest="no_svm",
                   help="rule-based classification only")
    g.add_argument("--assoc-mode", choices=["cytoplasm", "radius", "both"], dest="assoc_mode")
    g.add_argument("--assoc-radius", dest="assoc_radius", help="pixels or 'auto'")
    g.add_argument("--equalize", action="store_const", const=True, help="histogram equalization instead of stretch")
    g.add_argument("--blur", help="Gaussian pre-blur SIGMA[,KSIZE]")
    g.add_argument("--stretch-low", type=float, dest="stretch_low")
    g.add_argument("--stretch-high", type=float, dest="stretch_high")
    g.add_argument("--peak-window", type=int, dest="peak_window")
    g.add_argument("--peak-prominence", type=float, dest="peak_prominence")
    g.add_argument("--valley-halfwidth", type=int, dest="valley_halfwidth")
    g.add_argument("--connectivity", type=int, choices=[4, 8])
    g.add_argument("--em-max-iter", type=int, dest="em_max_iter")
    g.add_argument("--em-min-std", type=float, dest="em_min_std")
    g.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="leishscan", description="Macrophage infection analysis for fluorescence images.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("-q", "--quiet", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="analyze images and write reports")
    a.add_argument("inputs", nargs="+", help="RGB images or channel manifests (.json)")
    _add_pipeline_flags(a)
    a.add_argument("--out", help="output directory (default: next to each image)")
    a.add_argument("--jobs", type=int, help="worker processes")
    a.add_argument("--json", action="store_const", const=True, help="write JSON sidecars")
    a.add_argument("--overlay", action="store_const", const=True, help="write annotated overlay PNGs")
    a.add_argument("--label-maps", action="store_const", const=True, dest="label_maps",
                   help="write per-channel label map PNGs")
    a.add_argument("--no-timestamp", action="store_true", dest="no_timestamp")
    a.set_defaults(func=cmd_analyze)

    t = sub.add_parser("train", help="train the nuclei-count classifier")
    t.add_argument("--corpus", help="labeled features (CSV with label,f0..f27 or JSON)")
    t.add_argument("--classes", default="2-9", help="synthetic class range, e.g. 2-9")
    t.add_argument("--per-class", type=int, default=40, dest="per_class")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--kernel", choices=["linear", "polynomial", "rbf", "tanh"], default="rbf")
    t.add_argument("--gamma", type=float)
    t.add_argument("--degree", type=int, default=3)
    t.add_argument("--coef0", type=float, default=0.0)
    t.add_argument("-C", type=float, default=10.0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", help="generate a synthetic scene with ground truth")
    s.add_argument("--spec", help="JSON scene spec (default spec if omitted)")
    s.add_argument("--out", default=".")
    s.add_argument("--stem", default="scene")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="compare report sidecars with manual annotations")
    e.add_argument("--reports", nargs="+", required=True, help="JSON sidecars from analyze --json")
    e.add_argument("--annotations", nargs="+", required=True, help="annotation JSON or totals CSV")
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("features", help="dump per-region features as CSV")
    f.add_argument("inputs", nargs="+")
    _add_pipeline_flags(f)
    f.add_argument("--ll", action="store_true", help="append the 28 log-likelihood features")
    f.add_argument("--out")
    f.set_defaults(func=cmd_features)
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1 else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (ValueError, KeyError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
