"""Classifiers on fused descriptors and the repeated-split evaluation harness."""

from __future__ import annotations

import csv
import io
import logging
import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from . import network
from .dataset import MultiViewDataset

logger = logging.getLogger(__name__)

KINDS = ("nn-cosine", "ridge")
RIDGE_REG = 1.0


@dataclass(frozen=True)
class ClassifierState:
    kind: str
    classes: np.ndarray
    features: np.ndarray | None = None   # nn-cosine: training descriptors, verbatim
    labels: np.ndarray | None = None
    weights: np.ndarray | None = None    # ridge: (D, c)
    bias: np.ndarray | None = None       # ridge: (c,)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms > 0, norms, 1.0)


def train_classifier(features, labels, kind: str = "nn-cosine") -> ClassifierState:
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if kind not in KINDS:
        raise ValueError(f"unknown classifier {kind!r}; choose from {KINDS}")
    if features.ndim != 2 or features.shape[0] != labels.size or labels.size == 0:
        raise ValueError("need a non-empty (n, D) feature matrix with one label per row")
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("need at least 2 classes to train a classifier")
    if np.all(features == features[0]):
        warnings.warn("all training descriptors are identical", RuntimeWarning, stacklevel=2)
    if kind == "nn-cosine":
        return ClassifierState(kind, classes, features.copy(), labels.copy())
    x = _unit_rows(features)
    y = np.where(labels[:, None] == classes[None, :], 1.0, -1.0)
    x_mean, y_mean = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - x_mean, y - y_mean
    # dual form: D is far larger than the number of training samples
    gram = xc @ xc.T + RIDGE_REG * np.eye(len(x))
    weights = xc.T @ linalg.solve(gram, yc, assume_a="pos")
    return ClassifierState(kind, classes, weights=weights, bias=y_mean - x_mean @ weights)


def class_scores(state: ClassifierState, features) -> np.ndarray:
    """(n, c) scores; the predicted class is the first maximum."""
    features = np.asarray(features, dtype=np.float64)
    if state.kind == "nn-cosine":
        sims = _unit_rows(features) @ _unit_rows(state.features).T
        scores = np.full((features.shape[0], state.classes.size), -np.inf)
        for j, c in enumerate(state.classes):
            scores[:, j] = sims[:, state.labels == c].max(axis=1)
        return scores
    return _unit_rows(features) @ state.weights + state.bias


def predict(state: ClassifierState, features) -> np.ndarray:
    # argmax returns the first maximum, i.e. ties go to the lowest class index
    return state.classes[np.argmax(class_scores(state, features), axis=1)]


def accuracy(predicted, truth) -> float:
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    return 100.0 * float(np.mean(predicted == truth))


def mean_std(values) -> tuple[float, float]:
    """Mean and sample standard deviation (0 for a single value)."""
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if v.size > 1 else 0.0


@dataclass
class SplitResult:
    split: int
    accuracy: float
    n_train: int
    n_test: int
    model: network.TrainedModel | None = field(default=None, repr=False)

    @property
    def effective_ranks(self) -> list[int]:
        return [layer.effective_rank for layer in self.model.layers] if self.model else []


@dataclass
class EvaluationResult:
    splits: list[SplitResult]

    @property
    def accuracies(self) -> list[float]:
        return [s.accuracy for s in self.splits]

    @property
    def mean(self) -> float:
        return mean_std(self.accuracies)[0]

    @property
    def std(self) -> float:
        return mean_std(self.accuracies)[1]


def run_split(dataset: MultiViewDataset, train, test, config: network.NetworkConfig,
              kind: str = "nn-cosine", threads: int = 1) -> tuple[float, network.TrainedModel]:
    model = network.fit(dataset, train, config)
    f_train = network.extract_features(model, dataset, train, threads)
    clf = train_classifier(f_train, dataset.labels[train], kind)
    del f_train
    f_test = network.extract_features(model, dataset, test, threads)
    acc = accuracy(predict(clf, f_test), dataset.labels[test])
    return acc, model


def evaluate(dataset: MultiViewDataset, splits, config: network.NetworkConfig,
             kind: str = "nn-cosine", threads: int = 1, keep_models: bool = True) -> EvaluationResult:
    """Fit, describe and classify every split independently; nothing is fitted on test data."""
    results = []
    for i, (train, test) in enumerate(splits):
        acc, model = run_split(dataset, train, test, config, kind, threads)
        logger.info("split %d: accuracy %.2f%% (%d train / %d test)", i, acc, len(train), len(test))
        results.append(SplitResult(i, acc, len(train), len(test), model if keep_models else None))
    return EvaluationResult(results)


def write_results_csv(path, result: EvaluationResult, config_name: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["config", "split", "accuracy"])
        for s in result.splits:
            writer.writerow([config_name, s.split, f"{s.accuracy:.4f}"])


def summary_table(rows: list[dict]) -> str:
    """Plain-text table: one row per (method, settings) with mean +- std per training size.

    Each row dict holds method, patch, filters, blocks, overlap and ``results``
    mapping a training count to an EvaluationResult.
    """
    counts = sorted({n for r in rows for n in r["results"]})
    header = ["Method", "Patch Size", "Layers", "Filters", "A Blocks", "eta"] + \
             [f"{n} (Training)" for n in counts]
    body = []
    for r in rows:
        filters = ", ".join(f"L{i + 1}={L}" for i, L in enumerate(r["filters"]))
        cells = [r["method"], f"{r['patch'][0]}x{r['patch'][1]}", str(len(r["filters"])), filters,
                 str(r["blocks"]), f"{r['overlap']:g}"]
        for n in counts:
            res = r["results"].get(n)
            cells.append(f"{res.mean:.2f} +- {res.std:.2f}" if res else "-")
        body.append(cells)
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    fmt = lambda cells: " | ".join(c.ljust(w) for c, w in zip(cells, widths))  # noqa: E731
    lines = [fmt(header), "-+-".join("-" * w for w in widths)] + [fmt(b) for b in body]
    return "\n".join(lines) + "\n"


# -- classifier container (appended to model files) ------------------------
#
#   <4s magic b"CLSF"> <u2 version 1> <u2 kind: 0 nn-cosine, 1 ridge>
#   <u4 c> <i8 x c classes>
#   nn-cosine: <u4 n> <u4 D> <i8 x n labels> <f8 x n*D features>
#   ridge:     <u4 D> <f8 x D*c weights> <f8 x c bias>

_CLF_MAGIC = b"CLSF"


def classifier_to_bytes(state: ClassifierState) -> bytes:
    out = io.BytesIO()
    out.write(struct.pack("<4sHHI", _CLF_MAGIC, 1, KINDS.index(state.kind), state.classes.size))
    out.write(state.classes.astype("<i8").tobytes())
    if state.kind == "nn-cosine":
        n, d = state.features.shape
        out.write(struct.pack("<II", n, d))
        out.write(state.labels.astype("<i8").tobytes())
        out.write(np.ascontiguousarray(state.features, dtype="<f8").tobytes())
    else:
        out.write(struct.pack("<I", state.weights.shape[0]))
        out.write(np.ascontiguousarray(state.weights, dtype="<f8").tobytes())
        out.write(state.bias.astype("<f8").tobytes())
    return out.getvalue()


def classifier_from_bytes(buf: bytes) -> ClassifierState:
    magic, version, kind_id, c = struct.unpack_from("<4sHHI", buf, 0)
    if magic != _CLF_MAGIC or version != 1:
        raise ValueError("not a classifier container")
    pos = 12
    classes = np.frombuffer(buf, "<i8", c, pos).astype(np.int64)
    pos += 8 * c
    kind = KINDS[kind_id]
    if kind == "nn-cosine":
        n, d = struct.unpack_from("<II", buf, pos)
        pos += 8
        labels = np.frombuffer(buf, "<i8", n, pos).astype(np.int64)
        pos += 8 * n
        feats = np.frombuffer(buf, "<f8", n * d, pos).reshape(n, d).astype(np.float64)
        return ClassifierState(kind, classes, feats, labels)
    (d,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    w = np.frombuffer(buf, "<f8", d * c, pos).reshape(d, c).astype(np.float64)
    pos += 8 * d * c
    b = np.frombuffer(buf, "<f8", c, pos).astype(np.float64)
    return ClassifierState(kind, classes, weights=w, bias=b)
