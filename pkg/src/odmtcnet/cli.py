"""Command-line front end: ``odmtcnet {train,eval,sweep-filters,extract,inspect-model}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import classify, network
from .config import ConfigError, ExperimentConfig, build_dataset, build_splits, load_config
from .dataset import export_splits
from .encoding import write_features

logger = logging.getLogger("odmtcnet")


def _setup(args) -> tuple[ExperimentConfig, Path, Path]:
    cfg = load_config(args.config).with_seed(args.seed)
    base = Path(args.config).resolve().parent
    out = Path(args.out or cfg.output)
    if not out.is_absolute() and not args.out:
        out = base / out
    out.mkdir(parents=True, exist_ok=True)
    return cfg, base, out


def _threads(args) -> int:
    return args.threads or os.cpu_count() or 1


def _train_log(model: network.TrainedModel, elapsed: float) -> dict:
    layers = []
    for i, layer in enumerate(model.layers):
        layers.append({
            "layer": i + 1,
            "filters": layer.bank.n_filters,
            "eigenvalues": layer.bank.eigenvalues.tolist(),
            "spectrum": layer.bank.spectrum.tolist(),
            "effective_rank": layer.effective_rank,
            "classes": layer.n_classes,
            "seconds": round(model.timings[i], 3) if i < len(model.timings) else None,
        })
    return {"layers": layers, "seconds_total": round(elapsed, 3)}


def cmd_train(args) -> int:
    cfg, base, out = _setup(args)
    dataset = build_dataset(cfg, base)
    splits = build_splits(cfg, dataset.labels, base)
    train, _ = splits[0]
    t0 = time.perf_counter()
    model = network.fit(dataset, train, cfg.network)
    if args.classifier:
        feats = network.extract_features(model, dataset, train, _threads(args))
        model.classifier = classify.train_classifier(feats, dataset.labels[train], cfg.classifier)
    elapsed = time.perf_counter() - t0
    model_path = Path(args.model) if args.model else out / "model.odmt"
    network.save_model(model_path, model)
    (out / "config.yaml").write_text(cfg.dumps())
    (out / "train_log.json").write_text(json.dumps(_train_log(model, elapsed), indent=2) + "\n")
    for entry in _train_log(model, elapsed)["layers"]:
        print(f"layer {entry['layer']}: {entry['filters']} filters, effective rank "
              f"{entry['effective_rank']} (classes {entry['classes']})")
    print(f"model written to {model_path}")
    return 0


def cmd_eval(args) -> int:
    cfg, base, out = _setup(args)
    dataset = build_dataset(cfg, base)
    splits = build_splits(cfg, dataset.labels, base)
    export_splits(out / "splits.csv", splits)
    threads = _threads(args)
    if args.model:
        model = network.load_model(args.model)
        results = []
        for i, (train, test) in enumerate(splits):
            clf = classify.train_classifier(network.extract_features(model, dataset, train, threads),
                                            dataset.labels[train], cfg.classifier)
            pred = classify.predict(clf, network.extract_features(model, dataset, test, threads))
            results.append(classify.SplitResult(i, classify.accuracy(pred, dataset.labels[test]),
                                                len(train), len(test)))
        result = classify.EvaluationResult(results)
    else:
        result = classify.evaluate(dataset, splits, cfg.network, cfg.classifier, threads, keep_models=False)
    classify.write_results_csv(out / "results.csv", result, cfg.name)
    n_train = len(splits[0][0])
    table = classify.summary_table([{
        "method": cfg.name, "patch": cfg.network.patch, "filters": cfg.network.layer_filters,
        "blocks": cfg.network.n_blocks, "overlap": cfg.network.overlap,
        "results": {n_train: result}}])
    (out / "summary.txt").write_text(table)
    print(table, end="")
    return 0


def _parse_sweep(values: str | None, per_layer: str | None, n_layers: int) -> list[tuple[int, ...]]:
    if per_layer:
        return [tuple(int(v) for v in group.split(",")) for group in per_layer.split(";") if group]
    if not values:
        raise ConfigError("sweep-filters needs --values or --per-layer")
    return [(int(v),) * n_layers for v in values.split(",") if v]


def cmd_sweep_filters(args) -> int:
    cfg, base, out = _setup(args)
    dataset = build_dataset(cfg, base)
    splits = build_splits(cfg, dataset.labels, base)
    settings = _parse_sweep(args.values, args.per_layer, len(cfg.network.layer_filters))
    configs = [cfg.with_filters(f) for f in settings]  # validates every setting up front
    rows = []
    for sub in configs:
        result = classify.evaluate(dataset, splits, sub.network, sub.classifier, _threads(args))
        ranks = [max(s.effective_ranks[i] for s in result.splits) for i in range(len(sub.network.layer_filters))]
        rows.append((sub.network.layer_filters, result.mean, result.std, ranks))
        logger.info("filters %s: %.2f +- %.2f", sub.network.layer_filters, result.mean, result.std)
    best = int(np.argmax([r[1] for r in rows]))
    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["filters", "accuracy_mean", "accuracy_std", "effective_ranks", "best",
                         "max_filters_le_classes"])
        for i, (filters, mean, std, ranks) in enumerate(rows):
            writer.writerow([";".join(map(str, filters)), f"{mean:.4f}", f"{std:.4f}",
                             ";".join(map(str, ranks)), int(i == best),
                             int(max(filters) <= dataset.n_classes)])
    best_filters = rows[best][0]
    print(f"best filters {best_filters}: {rows[best][1]:.2f} +- {rows[best][2]:.2f}; "
          f"max L = {max(best_filters)} {'<=' if max(best_filters) <= dataset.n_classes else '>'} "
          f"c = {dataset.n_classes}")
    return 0


def _parse_indices(spec: str, splits, m: int) -> np.ndarray:
    if spec == "all":
        return np.arange(m)
    if spec in ("train", "test"):
        return splits[0][0 if spec == "train" else 1]
    idx = []
    for part in spec.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-")
            idx.extend(range(int(lo), int(hi) + 1))
        else:
            idx.append(int(part))
    return np.asarray(idx, dtype=np.int64)


def cmd_extract(args) -> int:
    if not args.model:
        raise ConfigError("extract needs --model")
    cfg, base, out = _setup(args)
    dataset = build_dataset(cfg, base)
    splits = build_splits(cfg, dataset.labels, base)
    model = network.load_model(args.model)
    idx = _parse_indices(args.indices, splits, len(dataset))
    if idx.size == 0:
        raise ConfigError("empty index set")
    feats = network.extract_features(model, dataset, idx, _threads(args))
    path = out / f"features.{args.format}"
    write_features(path, feats, {"config_digest": cfg.digest, "model": model.metadata,
                                 "indices": idx.tolist(),
                                 "per_view_length": model.config.descriptor_length // 2})
    print(f"wrote {feats.shape[0]} x {feats.shape[1]} descriptors to {path}")
    return 0


def cmd_inspect_model(args) -> int:
    if not args.model:
        raise ConfigError("inspect-model needs --model")
    model = network.load_model(args.model)
    print(json.dumps(model.metadata, sort_keys=True))
    from .dca import constraint_residuals
    for i, layer in enumerate(model.layers):
        res = constraint_residuals(layer.bank, layer.auto1, layer.auto2).max()
        print(f"layer {i + 1}: rho = {np.array2string(layer.bank.eigenvalues, precision=5)}")
        print(f"  effective rank {layer.effective_rank} / {layer.n_classes} classes, "
              f"max constraint residual {res:.2e}")
    if model.classifier is not None:
        print(f"classifier: {model.classifier.kind}, {model.classifier.classes.size} classes")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="odmtcnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=name != "inspect-model")
        p.add_argument("--model")
        p.add_argument("--out")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.set_defaults(func=func)
        return p

    p = add("train", cmd_train, "fit filter banks on the first split's training set")
    p.add_argument("--classifier", action="store_true", help="also fit and store the classifier")
    add("eval", cmd_eval, "evaluate over all splits")
    p = add("sweep-filters", cmd_sweep_filters, "accuracy as a function of filter counts")
    p.add_argument("--values", help="comma-separated L values applied to every layer")
    p.add_argument("--per-layer", help="semicolon-separated per-layer lists, e.g. '8,8;4,4'")
    p = add("extract", cmd_extract, "write fused descriptors")
    p.add_argument("--indices", default="all", help="'all', 'train', 'test' or e.g. '0-9,15'")
    p.add_argument("--format", choices=("npy", "csv"), default="npy")
    add("inspect-model", cmd_inspect_model, "print filter spectra and constraint checks")
    return parser


def _provenance(exc: BaseException) -> str:
    module = "odmtcnet"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        name = frame.f_globals.get("__name__", "")
        if name.startswith("odmtcnet."):
            module = name
    return module


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error [{_provenance(exc)}]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
