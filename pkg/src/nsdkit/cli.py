"""Command-line interface and experiment orchestration.

Subcommands: stats, build, train, detect, eval, analyze, run. The `run`
command executes a full grid (proportions/unknown sets x strategies x
detectors x seeds), averages over seeds, and writes report.json plus a
flat report.csv. Identical configs produce byte-identical report.json.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, crf, features as feat_mod
from .benchmark import (
    BenchmarkError,
    NsdBenchmark,
    NsdConfig,
    benchmark_stats,
    build_benchmark,
    load_benchmark,
    write_benchmark,
)
from .corpus import CorpusError, CorpusSplit, compute_stats, derive_schema, load_split
from .crf import TaggerModel, TrainConfig, load_model, save_model, train
from .detect import (
    BINARY_MSP_FLOOR,
    DetectError,
    DetectorConfig,
    GdaModel,
    calibrate_combined_msp,
    calibrate_threshold,
    detector_scores,
    gda_fit,
    ns_mask_from_scores,
    read_predictions,
    run_detection,
    score_orientation,
    stack_features,
    write_predictions,
)
from .features import (
    FeatureError,
    FeatureSource,
    TokenFeatureMatrix,
    featurize,
    parse_feature_source,
)
from .metrics import MetricsReport, build_report, format_report, span_f1


class AllSeedsFailed(Exception):
    pass


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _dump_json(payload, path: Path) -> None:
    path.write_text(
        json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _load_corpus(args) -> tuple[CorpusSplit, CorpusSplit, CorpusSplit]:
    lower = not args.no_lowercase
    return (
        load_split(args.train, "train", lowercase=lower),
        load_split(args.val, "val", lowercase=lower),
        load_split(args.test, "test", lowercase=lower),
    )


# ---------------------------------------------------------------- commands


def cmd_stats(args) -> int:
    train_s, val_s, test_s = _load_corpus(args)
    stats = compute_stats(train_s, val_s, test_s, fold_digits=not args.no_digit_fold)
    payload = dataclasses.asdict(stats)
    payload["policy"] = {
        "lowercase": not args.no_lowercase,
        "fold_digits": not args.no_digit_fold,
    }
    print(json.dumps(_jsonable(payload), indent=2, sort_keys=True))
    return 0


def cmd_build(args) -> int:
    train_s, val_s, test_s = _load_corpus(args)
    schema = derive_schema(train_s)
    config = NsdConfig(
        strategy=args.strategy.lower(),
        seed=args.seed,
        proportion=args.proportion,
        explicit_unknown=tuple(args.unknown_types.split(",")) if args.unknown_types else None,
        weighting=args.weighting,
    )
    b = build_benchmark(train_s, val_s, test_s, schema, config)
    write_benchmark(b, args.out, force=args.force)
    stats = benchmark_stats(b)
    print(json.dumps(_jsonable({
        "unknown_types": list(b.unknown_types),
        "stats": stats.to_dict(),
    }), indent=2, sort_keys=True))
    return 0


def _featurize_benchmark(
    b: NsdBenchmark, source: FeatureSource, cache: dict | None = None
) -> dict[str, list[TokenFeatureMatrix]]:
    if source.kind == "hashed":
        return {
            name: featurize(split.utterances, source, cache=cache)
            for name, split in (("train", b.train), ("val", b.val), ("test", b.test))
        }
    base = Path(source.path)
    out = {}
    for name, split in (("train", b.train), ("val", b.val), ("test", b.test)):
        out[name] = feat_mod.load_embeddings(base / f"{name}.nsde", split.utterances)
    return out


def _default_lr(source: FeatureSource) -> float:
    return 0.1 if source.kind == "hashed" else 0.01


def cmd_train(args) -> int:
    b = load_benchmark(args.benchmark)
    source = parse_feature_source(args.features)
    feats = _featurize_benchmark(b, source)
    cfg = TrainConfig(
        learning_rate=args.learning_rate if args.learning_rate is not None else _default_lr(source),
        batch_size=args.batch_size,
        max_epochs=args.max_epochs,
        patience=args.patience,
        l2=args.l2,
        seed=args.seed,
    )
    model = train(
        args.objective, b.in_domain_schema, b.train, feats["train"],
        b.val, feats["val"], cfg, feature_desc=source.describe(),
    )
    save_model(model, args.out)
    val_f1 = crf.in_domain_span_f1(model, b.val, feats["val"])
    print(json.dumps({"objective": args.objective, "val_in_domain_span_f1": val_f1,
                      "model": str(args.out)}, indent=2, sort_keys=True))
    return 0


def _gold_ns_mask(split: CorpusSplit) -> np.ndarray:
    return np.array([t == "NS" for u in split.utterances for t in u.tags], dtype=bool)


def _fit_gda_for(
    cfg: DetectorConfig,
    b: NsdBenchmark,
    train_feats: Sequence[TokenFeatureMatrix],
    lam: float | None,
) -> GdaModel:
    X = stack_features(train_feats)
    if cfg.objective == "binary":
        labels = [crf.to_binary_tag(t) for u in b.train.utterances for t in u.tags]
        vocab = crf.BINARY_TAGS
    else:
        labels = [t for u in b.train.utterances for t in u.tags]
        vocab = b.in_domain_schema.tag_vocab
    # a cluster needs at least one support token; tag-vocab entries that
    # never occur in train (I- tags of single-token-only types) are skipped
    seen = set(labels)
    classes = tuple(c for c in vocab if c in seen)
    return gda_fit(X, labels, classes=classes, lam=lam, metric=cfg.metric)


def _calibrate(
    cfg: DetectorConfig,
    val_scores: dict[str, np.ndarray],
    gold_ns: np.ndarray,
) -> tuple[DetectorConfig, dict]:
    """Fill thresholds by maximizing NS token F1 on validation."""
    info: dict = {"calibrated": True}
    if cfg.method == "msp" and cfg.objective == "binary+multiple":
        tb, tm, f1 = calibrate_combined_msp(val_scores["binary"], val_scores["multiple"], gold_ns)
        cfg = dataclasses.replace(cfg, threshold_binary=tb, threshold_multiple=tm)
        info.update({"threshold_binary": tb, "threshold_multiple": tm, "val_token_f1": f1})
        return cfg, info
    key = "gda" if cfg.method == "gda" else cfg.objective
    floor = BINARY_MSP_FLOOR if (cfg.method == "msp" and cfg.objective == "binary") else None
    res = calibrate_threshold(val_scores[key], gold_ns, score_orientation(cfg), floor=floor)
    cfg = dataclasses.replace(cfg, threshold=res.threshold)
    info.update({"threshold": res.threshold, "val_token_f1": res.f1, "val_flagged": res.flagged})
    return cfg, info


def _threshold_curves(
    cfg: DetectorConfig,
    val_scores: dict[str, np.ndarray],
    val_split: CorpusSplit,
    val_feats: Sequence[TokenFeatureMatrix],
    multiple_tagger: TaggerModel,
    max_points: int = 41,
) -> list[dict]:
    """Token- and span-F1 over a downsampled threshold grid (single-threshold
    detectors only), for inspection of the calibration objective choice."""
    if cfg.method == "msp" and cfg.objective == "binary+multiple":
        return []
    key = "gda" if cfg.method == "gda" else cfg.objective
    scores = val_scores[key]
    qs = np.linspace(0.0, 1.0, max_points)
    grid = np.unique(np.quantile(scores, qs))
    gold = [list(u.tags) for u in val_split.utterances]
    ind = [crf.viterbi_decode(multiple_tagger, f) for f in val_feats]
    curves = []
    from .metrics import token_f1

    for theta in grid:
        probe = dataclasses.replace(
            cfg, threshold=float(theta), threshold_binary=None, threshold_multiple=None
        )
        mask = ns_mask_from_scores(probe, val_scores)
        pos = 0
        final = []
        for tags in ind:
            m = mask[pos : pos + len(tags)]
            pos += len(tags)
            final.append(["NS" if f else t for t, f in zip(tags, m)])
        curves.append({
            "threshold": float(theta),
            "token_f1": token_f1(final, gold, "NS").f1,
            "span_f1": span_f1(final, gold, classes=["NS"]).f1,
        })
    return curves


def cmd_detect(args) -> int:
    b = load_benchmark(args.benchmark)
    source = parse_feature_source(args.features)
    feats = _featurize_benchmark(b, source)
    multiple_tagger = load_model(args.multiple_model)
    binary_tagger = load_model(args.binary_model) if args.binary_model else None

    cfg = DetectorConfig(
        method=args.method,
        objective=args.objective,
        distance_strategy=args.distance,
        metric=args.metric,
        threshold=args.threshold,
        threshold_binary=args.threshold_binary,
        threshold_multiple=args.threshold_multiple,
    )
    gda = None
    if cfg.method == "gda":
        gda = _fit_gda_for(cfg, b, feats["train"], args.lam)

    info: dict = {"detector": cfg.describe(), "calibrated": False}
    if args.calibrate:
        val_scores = detector_scores(cfg, feats["val"], multiple_tagger, binary_tagger, gda)
        cfg, info = _calibrate(cfg, val_scores, _gold_ns_mask(b.val))
        info["detector"] = cfg.describe()
        info["curves"] = _threshold_curves(
            cfg, val_scores, b.val, feats["val"], multiple_tagger
        )

    split = b.test if args.split == "test" else b.val
    preds = run_detection(
        multiple_tagger, split, feats[args.split], cfg, binary_tagger, gda
    )
    out_dir = Path(args.out_dir)
    target = out_dir / "predictions.conll"
    if target.exists() and not args.force:
        raise FileExistsError(f"{target} exists; pass --force to overwrite")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_predictions(target, split, preds)
    _dump_json(info, out_dir / "detector.json")
    print(json.dumps(_jsonable({k: v for k, v in info.items() if k != "curves"}),
                     indent=2, sort_keys=True))
    return 0


def _load_eval_pair(args) -> tuple[list[list[str]], list[list[str]]]:
    gold, pred = read_predictions(args.pred)
    if args.gold:
        gold = [list(u.tags) for u in load_split(args.gold, "test").utterances]
    return pred, gold


def cmd_eval(args) -> int:
    pred, gold = _load_eval_pair(args)
    open_vocab = args.open_vocab.split(",") if args.open_vocab else []
    report = build_report(pred, gold, open_vocab)
    print(json.dumps(_jsonable(report.to_dict()), indent=2, sort_keys=True))
    print()
    print(format_report(report))
    return 0


def cmd_analyze(args) -> int:
    pred, gold = _load_eval_pair(args)
    open_vocab = args.open_vocab.split(",") if args.open_vocab else []
    from .metrics import error_analysis

    table = error_analysis(pred, gold, open_vocab)
    print(json.dumps(_jsonable({
        "percentages": table.percentages,
        "counts": table.counts,
        "total_errors": table.total_errors,
        "no_errors": table.no_errors,
    }), indent=2, sort_keys=True))
    return 0


# ---------------------------------------------------------------- run grid


SCALAR_METRICS = (
    "ind_span_f1", "nsd_span_f1", "nsd_span_precision", "nsd_span_recall",
    "nsd_token_f1", "nsd_token_precision", "nsd_token_recall",
    "rose_25", "rose_50", "rose_75", "rose_100", "rose_mean",
)


def _scalar_metrics(report: MetricsReport) -> dict[str, float]:
    return {
        "ind_span_f1": report.ind_span_f1.f1,
        "nsd_span_f1": report.nsd_span_f1.f1,
        "nsd_span_precision": report.nsd_span_f1.precision,
        "nsd_span_recall": report.nsd_span_f1.recall,
        "nsd_token_f1": report.nsd_token_f1.f1,
        "nsd_token_precision": report.nsd_token_f1.precision,
        "nsd_token_recall": report.nsd_token_f1.recall,
        "rose_25": report.rose[0.25].reported,
        "rose_50": report.rose[0.5].reported,
        "rose_75": report.rose[0.75].reported,
        "rose_100": report.rose[1.0].reported,
        "rose_mean": report.rose_mean,
    }


def aggregate(per_seed: Sequence[dict[str, float]]) -> tuple[dict, dict]:
    """Arithmetic mean and population standard deviation per metric."""
    if not per_seed:
        raise AllSeedsFailed("no completed seeds to aggregate")
    keys = per_seed[0].keys()
    mean = {k: float(np.mean([r[k] for r in per_seed])) for k in keys}
    std = {k: float(np.std([r[k] for r in per_seed])) for k in keys}
    return mean, std


@dataclasses.dataclass
class ExperimentConfig:
    corpus: dict[str, str]
    strategies: list[str]
    detectors: list[dict]
    proportions: list[float] = dataclasses.field(default_factory=list)
    unknown_sets: list[list[str]] = dataclasses.field(default_factory=list)
    seeds: list[int] = dataclasses.field(default_factory=lambda: list(range(10)))
    features: str = "hashed:d=4096"
    training: dict = dataclasses.field(default_factory=dict)
    open_vocab_types: list[str] = dataclasses.field(default_factory=list)
    lowercase: bool = True
    gda_lam: float | None = None
    weighting: str = "uniform"

    def __post_init__(self):
        if not self.seeds:
            raise ValueError("need at least one seed")
        if not self.detectors or not self.strategies:
            raise ValueError("detector and strategy grids must be nonempty")
        if not self.proportions and not self.unknown_sets:
            raise ValueError("need proportions or unknown_sets")
        if parse_feature_source(self.features).kind != "hashed":
            raise ValueError(
                "grid runs require hashed features: each (seed, strategy) cell "
                "transforms the train split, so precomputed embedding files "
                "cannot stay aligned; build a single benchmark, export its "
                "splits, then use `train`/`detect` with --features file:DIR"
            )
        for name, path in self.corpus.items():
            if not Path(path).exists():
                raise FileNotFoundError(f"{name} corpus file {path} does not exist")

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        seeds = raw.get("seeds", 10)
        if isinstance(seeds, int):
            base = raw.get("base_seed", 0)
            seeds = [base + i for i in range(seeds)]
        return cls(
            corpus=raw["corpus"],
            strategies=[s.lower() for s in raw["strategies"]],
            detectors=raw["detectors"],
            proportions=raw.get("proportions", []),
            unknown_sets=raw.get("unknown_sets", []),
            seeds=seeds,
            features=raw.get("features", "hashed:d=4096"),
            training=raw.get("training", {}),
            open_vocab_types=raw.get("open_vocab_types", []),
            lowercase=raw.get("lowercase", True),
            gda_lam=raw.get("gda_lam"),
            weighting=raw.get("weighting", "uniform"),
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _detector_cfg(spec: dict) -> DetectorConfig:
    return DetectorConfig(
        method=spec["method"],
        objective=spec["objective"],
        distance_strategy=spec.get("distance"),
        metric=spec.get("metric", "mahalanobis"),
    )


def _points(cfg: ExperimentConfig):
    for prop in cfg.proportions:
        for strategy in cfg.strategies:
            yield {"proportion": prop, "unknown_types": None, "strategy": strategy}
    for unk in cfg.unknown_sets:
        for strategy in cfg.strategies:
            yield {"proportion": None, "unknown_types": list(unk), "strategy": strategy}


def run_experiment(cfg: ExperimentConfig, progress=None) -> dict:
    """Execute the full grid and aggregate across seeds.

    A failing (point, detector, seed) cell is recorded with its error and
    excluded from the aggregates; it never aborts the sweep."""
    source = parse_feature_source(cfg.features)
    train_s = load_split(cfg.corpus["train"], "train", lowercase=cfg.lowercase)
    val_s = load_split(cfg.corpus["val"], "val", lowercase=cfg.lowercase)
    test_s = load_split(cfg.corpus["test"], "test", lowercase=cfg.lowercase)
    schema = derive_schema(train_s)
    detector_cfgs = [_detector_cfg(d) for d in cfg.detectors]
    need_binary = any(d.objective in ("binary", "binary+multiple") for d in detector_cfgs)

    tcfg_defaults = dict(
        learning_rate=cfg.training.get("learning_rate", _default_lr(source)),
        batch_size=cfg.training.get("batch_size", 64),
        max_epochs=cfg.training.get("max_epochs", 100),
        patience=cfg.training.get("patience", 10),
        l2=cfg.training.get("l2", 1e-4),
    )

    feature_cache: dict = {}
    cells: list[dict] = []
    aggregates: list[dict] = []

    for point in _points(cfg):
        per_detector: dict[str, list[dict[str, float]]] = {
            d.describe(): [] for d in detector_cfgs
        }
        failures: list[dict] = []
        for seed in cfg.seeds:
            if progress:
                progress(f"{point} seed={seed}")
            try:
                ns_config = NsdConfig(
                    strategy=point["strategy"],
                    seed=seed,
                    proportion=point["proportion"],
                    explicit_unknown=tuple(point["unknown_types"])
                    if point["unknown_types"]
                    else None,
                    weighting=cfg.weighting,
                )
                b = build_benchmark(train_s, val_s, test_s, schema, ns_config)
                feats = _featurize_benchmark(b, source, cache=feature_cache)
                bstats = benchmark_stats(b)
                tcfg = TrainConfig(seed=seed, **tcfg_defaults)
                multiple_tagger = train(
                    "multiple", b.in_domain_schema, b.train, feats["train"],
                    b.val, feats["val"], tcfg, feature_desc=source.describe(),
                )
                binary_tagger = (
                    train(
                        "binary", b.in_domain_schema, b.train, feats["train"],
                        b.val, feats["val"], tcfg, feature_desc=source.describe(),
                    )
                    if need_binary
                    else None
                )
            except Exception as e:  # noqa: BLE001 - cell failure policy
                for d in detector_cfgs:
                    failures.append({"seed": seed, "detector": d.describe(),
                                     "stage": "build/train", "error": f"{type(e).__name__}: {e}"})
                cells.append({"point": point, "seed": seed, "status": "error",
                              "error": f"{type(e).__name__}: {e}"})
                continue

            gda_cache: dict[tuple[str, str], GdaModel] = {}
            gold_ns_val = _gold_ns_mask(b.val)
            for dcfg in detector_cfgs:
                try:
                    gda = None
                    if dcfg.method == "gda":
                        key = (dcfg.objective, dcfg.metric)
                        if key not in gda_cache:
                            gda_cache[key] = _fit_gda_for(dcfg, b, feats["train"], cfg.gda_lam)
                        gda = gda_cache[key]
                    val_scores = detector_scores(
                        dcfg, feats["val"], multiple_tagger, binary_tagger, gda
                    )
                    calibrated, cal_info = _calibrate(dcfg, val_scores, gold_ns_val)
                    preds = run_detection(
                        multiple_tagger, b.test, feats["test"], calibrated,
                        binary_tagger, gda,
                    )
                    report = build_report(
                        [list(t) for t in preds.final_tags],
                        [list(u.tags) for u in b.test.utterances],
                        cfg.open_vocab_types,
                    )
                    scalars = _scalar_metrics(report)
                    per_detector[dcfg.describe()].append(scalars)
                    cells.append({
                        "point": point,
                        "seed": seed,
                        "detector": dcfg.describe(),
                        "status": "ok",
                        "unknown_types": list(b.unknown_types),
                        "benchmark_stats": bstats.to_dict(),
                        "calibration": cal_info,
                        "metrics": scalars,
                    })
                except Exception as e:  # noqa: BLE001
                    failures.append({"seed": seed, "detector": dcfg.describe(),
                                     "stage": "detect", "error": f"{type(e).__name__}: {e}"})
                    cells.append({"point": point, "seed": seed,
                                  "detector": dcfg.describe(), "status": "error",
                                  "error": f"{type(e).__name__}: {e}"})

        for dcfg in detector_cfgs:
            runs = per_detector[dcfg.describe()]
            agg: dict = {
                "point": point,
                "detector": dcfg.describe(),
                "n_seeds": len(runs),
                "failures": [f for f in failures if f["detector"] == dcfg.describe()],
            }
            if runs:
                mean, std = aggregate(runs)
                agg["mean"] = mean
                agg["std"] = std
            aggregates.append(agg)

    return {
        "toolkit_version": __version__,
        "config": cfg.to_dict(),
        "cells": cells,
        "aggregates": aggregates,
    }


def _write_csv(report: dict, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "proportion", "unknown_types", "strategy", "detector",
            "metric", "mean", "std", "n_seeds",
        ])
        for agg in report["aggregates"]:
            point = agg["point"]
            unk = ";".join(point["unknown_types"]) if point["unknown_types"] else ""
            for metric in SCALAR_METRICS:
                if "mean" not in agg:
                    continue
                writer.writerow([
                    point["proportion"], unk, point["strategy"], agg["detector"],
                    metric, repr(agg["mean"][metric]), repr(agg["std"][metric]),
                    agg["n_seeds"],
                ])


def cmd_run(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    if args.seeds is not None:
        cfg.seeds = [int(s) for s in args.seeds.split(",")]
    if args.features:
        cfg.features = args.features
    if args.proportions:
        cfg.proportions = [float(x) for x in args.proportions.split(",")]
    if args.strategies:
        cfg.strategies = [s.lower() for s in args.strategies.split(",")]
    if args.open_vocab:
        cfg.open_vocab_types = args.open_vocab.split(",")
    if args.weighting:
        cfg.weighting = args.weighting
    if args.gda_lam is not None:
        cfg.gda_lam = args.gda_lam
    for field in ("train", "val", "test"):
        value = getattr(args, field)
        if value:
            cfg.corpus[field] = value
    for field in ("learning_rate", "batch_size", "max_epochs", "patience", "l2"):
        value = getattr(args, field)
        if value is not None:
            cfg.training[field] = value
    cfg.__post_init__()  # re-validate after overrides
    out = Path(args.out)
    report_path = out / "report.json"
    if report_path.exists() and not args.force:
        print(f"{report_path} exists; use --force to overwrite", file=sys.stderr)
        return 1
    out.mkdir(parents=True, exist_ok=True)

    progress = (lambda msg: print(msg, file=sys.stderr)) if args.verbose else None
    report = run_experiment(cfg, progress=progress)
    _dump_json(report, report_path)
    _write_csv(report, out / "report.csv")
    ok = sum(1 for c in report["cells"] if c["status"] == "ok")
    err = sum(1 for c in report["cells"] if c["status"] == "error")
    print(f"wrote {report_path} ({ok} cells ok, {err} failed)")
    return 0


# ---------------------------------------------------------------- parser


def _add_corpus_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--no-lowercase", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nsdkit",
        description="novel-slot-detection benchmarks, taggers, detectors, metrics",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"nsdkit {__version__} (formats: NSDE v{feat_mod.NSDE_VERSION}, NSDM v{crf.NSDM_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="corpus statistics as JSON")
    _add_corpus_args(p)
    p.add_argument("--no-digit-fold", action="store_true",
                   help="count all-digit tokens verbatim instead of folding to '0'")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("build", help="construct an NSD benchmark")
    _add_corpus_args(p)
    p.add_argument("--proportion", type=float)
    p.add_argument("--unknown-types", help="comma-separated explicit unknown types")
    p.add_argument("--strategy", required=True, choices=["replace", "mask", "remove"],
                   type=str.lower)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--weighting", default="uniform", choices=["uniform", "spans"],
                   help="unknown-type sampling: equiprobable or span-count weighted")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("train", help="train a CRF tagger on a benchmark")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--objective", required=True, choices=["binary", "multiple"])
    p.add_argument("--features", default="hashed:d=4096")
    p.add_argument("--out", required=True)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--max-epochs", type=int, default=100)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("detect", help="flag novel-slot tokens on a benchmark split")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--method", required=True, choices=["msp", "gda"])
    p.add_argument("--objective", required=True,
                   choices=["binary", "multiple", "binary+multiple"])
    p.add_argument("--distance", choices=["minimum", "difference"])
    p.add_argument("--metric", default="mahalanobis", choices=["mahalanobis", "euclidean"])
    p.add_argument("--features", default="hashed:d=4096")
    p.add_argument("--multiple-model", required=True)
    p.add_argument("--binary-model")
    p.add_argument("--threshold", type=float)
    p.add_argument("--threshold-binary", type=float)
    p.add_argument("--threshold-multiple", type=float)
    p.add_argument("--calibrate", action="store_true",
                   help="pick thresholds by best NS token F1 on the val split")
    p.add_argument("--lam", type=float, help="GDA covariance regularizer")
    p.add_argument("--split", default="test", choices=["val", "test"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("eval", help="score a prediction file")
    p.add_argument("--pred", required=True, help="3-column token/gold/pred file")
    p.add_argument("--gold", help="optional 2-column gold file overriding column 2")
    p.add_argument("--open-vocab", help="comma-separated open-vocabulary slot types")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="NS error-category table")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold")
    p.add_argument("--open-vocab", help="comma-separated open-vocabulary slot types")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("run", help="full experiment grid from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", help="override: comma-separated seed list")
    p.add_argument("--features", help="override the feature source")
    p.add_argument("--proportions", help="override: comma-separated fractions")
    p.add_argument("--strategies", help="override: comma-separated strategies")
    p.add_argument("--open-vocab", help="override the open-vocabulary type list")
    p.add_argument("--weighting", choices=["uniform", "spans"])
    p.add_argument("--gda-lam", type=float)
    p.add_argument("--train", help="override the train corpus path")
    p.add_argument("--val", help="override the val corpus path")
    p.add_argument("--test", help="override the test corpus path")
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--l2", type=float)
    p.add_argument("--force", action="store_true")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_run)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (
        BenchmarkError,
        CorpusError,
        DetectError,
        FeatureError,
        FileNotFoundError,
        FileExistsError,
        ValueError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
