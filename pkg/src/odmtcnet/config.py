"""Experiment configuration files (YAML).

Schema (unknown keys anywhere are errors)::

    name: orl-3layer                 # label used in result files
    dataset:
      path: /data/orl                # root/<class>/<image> layout
      resize: [56, 46]               # optional (height, width)
      color: gray                    # gray | rgb
    views:
      kind: lbp                      # lbp | wavelet | channels | features
      levels: 2                      # wavelet only
      channels: [0, 1]               # channels only
      view1: v1.csv                  # features only: one sample per row
      view2: v2.csv
      labels: labels.csv
      map_shape: [64, 64]
    network:
      patch: [3, 3]
      filters: [8, 8, 8]
      blocks: 8
      overlap: 0.5
    classifier: nn-cosine            # nn-cosine | ridge
    split:                           # either random repetitions ...
      train_count: 280
      repetitions: 10
      seed: 0
      stratified: false
    # split:                         # ... or explicit lists / a split CSV
    #   train_indices: [0, 3, 6]
    #   test_indices: [1, 4, 7]
    #   file: splits.csv
    output: results/orl
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .classify import KINDS
from .dataset import (MultiViewDataset, SplitSpec, index_split, ingest_feature_maps, load_dataset,
                      make_splits, make_views, read_labels, read_splits)
from .network import NetworkConfig


class ConfigError(ValueError):
    pass


_TOP = {"name", "dataset", "views", "network", "classifier", "split", "output"}
_DATASET = {"path", "resize", "color"}
_VIEWS = {"kind", "levels", "channels", "view1", "view2", "labels", "map_shape"}
_NETWORK = {"patch", "filters", "blocks", "overlap"}
_SPLIT = {"train_count", "repetitions", "seed", "stratified", "train_indices", "test_indices", "file"}
VIEW_KINDS = ("lbp", "wavelet", "channels", "features")


def _check_keys(section: str, d, allowed: set) -> dict:
    if d is None:
        return {}
    if not isinstance(d, dict):
        raise ConfigError(f"{section}: expected a mapping")
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{section}: unknown key(s) {sorted(unknown)}")
    return d


def _pair(v, what) -> tuple[int, int] | None:
    if v is None:
        return None
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(f"{what} must be a pair of integers")
    return int(v[0]), int(v[1])


@dataclass
class ExperimentConfig:
    network: NetworkConfig
    dataset: dict = field(default_factory=dict)
    views: dict = field(default_factory=lambda: {"kind": "lbp"})
    split: dict = field(default_factory=dict)
    classifier: str = "nn-cosine"
    output: str = "results"
    name: str = "odmtcnet"

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = _check_keys("config", raw, _TOP)
        dataset = dict(_check_keys("dataset", raw.get("dataset"), _DATASET))
        views = dict(_check_keys("views", raw.get("views", {"kind": "lbp"}), _VIEWS))
        net = _check_keys("network", raw.get("network"), _NETWORK)
        split = dict(_check_keys("split", raw.get("split"), _SPLIT))

        kind = views.setdefault("kind", "lbp")
        if kind not in VIEW_KINDS:
            raise ConfigError(f"views.kind must be one of {VIEW_KINDS}, got {kind!r}")
        if kind == "features":
            for key in ("view1", "view2", "labels", "map_shape"):
                if key not in views:
                    raise ConfigError(f"views.{key} is required for feature-map views")
            views["map_shape"] = list(_pair(views["map_shape"], "views.map_shape"))
        elif "path" not in dataset:
            raise ConfigError("dataset.path is required")
        if "resize" in dataset and dataset["resize"] is not None:
            dataset["resize"] = list(_pair(dataset["resize"], "dataset.resize"))
        dataset.setdefault("color", "rgb" if kind == "channels" else "gray")
        if dataset["color"] not in ("gray", "rgb"):
            raise ConfigError("dataset.color must be gray or rgb")
        if kind == "wavelet":
            views["levels"] = int(views.get("levels", 2))
        if kind == "channels":
            views["channels"] = list(_pair(views.get("channels", [0, 1]), "views.channels"))

        try:
            network = NetworkConfig(tuple(net.get("patch", (3, 3))), tuple(net.get("filters", (8, 8))),
                                    int(net.get("blocks", 8)), float(net.get("overlap", 0.5)))
        except ValueError as exc:
            raise ConfigError(f"network: {exc}") from exc

        explicit = {"train_indices", "test_indices", "file"} & set(split)
        if explicit:
            if {"train_count", "repetitions"} & set(split):
                raise ConfigError("split: give either train_count/repetitions or explicit indices")
            if "file" not in split and not {"train_indices", "test_indices"} <= set(split):
                raise ConfigError("split: explicit splits need both train_indices and test_indices")
        else:
            if "train_count" not in split:
                raise ConfigError("split.train_count is required")
            split = {"train_count": int(split["train_count"]),
                     "repetitions": int(split.get("repetitions", 10)),
                     "seed": int(split.get("seed", 0)),
                     "stratified": bool(split.get("stratified", False))}
            try:
                SplitSpec(split["train_count"], split["repetitions"], split["seed"], split["stratified"])
            except ValueError as exc:
                raise ConfigError(f"split: {exc}") from exc

        classifier = raw.get("classifier", "nn-cosine")
        if classifier not in KINDS:
            raise ConfigError(f"classifier must be one of {KINDS}")
        return cls(network, dataset, views, split, classifier,
                   str(raw.get("output", "results")), str(raw.get("name", "odmtcnet")))

    def to_dict(self) -> dict:
        return {"name": self.name, "dataset": dict(self.dataset), "views": dict(self.views),
                "network": self.network.to_dict(), "classifier": self.classifier,
                "split": dict(self.split), "output": self.output}

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @property
    def digest(self) -> str:
        from .encoding import config_digest
        return config_digest(self.to_dict())

    def with_seed(self, seed: int | None) -> "ExperimentConfig":
        if seed is None or "train_count" not in self.split:
            return self
        return ExperimentConfig.from_dict(dict(self.to_dict(), split=dict(self.split, seed=seed)))

    def with_filters(self, filters) -> "ExperimentConfig":
        d = self.to_dict()
        d["network"] = dict(d["network"], filters=list(filters))
        return ExperimentConfig.from_dict(d)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if raw is None:
        raise ConfigError(f"{path} is empty")
    return ExperimentConfig.from_dict(raw)


def build_dataset(cfg: ExperimentConfig, base: Path | None = None) -> MultiViewDataset:
    base = base or Path.cwd()

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    v = cfg.views
    if v["kind"] == "features":
        shape = tuple(v["map_shape"])
        m1 = ingest_feature_maps(resolve(v["view1"]), shape)
        m2 = ingest_feature_maps(resolve(v["view2"]), shape)
        labels = read_labels(resolve(v["labels"]))
        return MultiViewDataset(m1, m2, labels, int(labels.max()) + 1,
                                f"feature maps {shape[0]}x{shape[1]}")
    resize = cfg.dataset.get("resize")
    stack = load_dataset(resolve(cfg.dataset["path"]), tuple(resize) if resize else None,
                         cfg.dataset["color"])
    return make_views(stack, v["kind"], levels=v.get("levels", 2),
                      channels=tuple(v.get("channels", (0, 1))))


def build_splits(cfg: ExperimentConfig, labels, base: Path | None = None) -> list:
    s = cfg.split
    m = len(labels)
    if "file" in s:
        path = Path(s["file"])
        if not path.is_absolute() and base is not None:
            path = base / path
        return [index_split(tr, te, m) for tr, te in read_splits(path)]
    if "train_indices" in s:
        return [index_split(s["train_indices"], s["test_indices"], m)]
    return make_splits(labels, SplitSpec(s["train_count"], s["repetitions"], s["seed"], s["stratified"]))


def config_json(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)
