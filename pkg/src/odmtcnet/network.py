"""The cascaded two-view convolutional network.

Each layer's filter pair bank is learned from the previous layer's maps
(raw images for layer 1) by DCA; the same bank is applied to every map of the
previous layer, so layer i carries L_1 * ... * L_i maps per view and sample,
ordered lexicographically by lineage (parent index major).

Training statistics are streamed one sample at a time, so the full patch
matrices of deep layers never exist in memory.
"""

from __future__ import annotations

import io
import json
import logging
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from typing import Sequence

import numpy as np

from . import dca
from .dataset import MultiViewDataset
from .encoding import BlockSpec, HashedImageSet, descriptor_length, fuse_views, hash_pool, iq_descriptor
from .patches import PatchGeometry, patch_rows, vectorize_patch

logger = logging.getLogger(__name__)

MAX_HASH_BITS = 16


@dataclass(frozen=True)
class NetworkConfig:
    patch: tuple[int, int] = (3, 3)
    layer_filters: tuple[int, ...] = (8, 8)
    n_blocks: int = 8
    overlap: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "patch", tuple(int(v) for v in self.patch))
        object.__setattr__(self, "layer_filters", tuple(int(v) for v in self.layer_filters))
        geom = self.geometry
        if len(self.layer_filters) < 2:
            raise ValueError("need at least two layers (one convolutional, one hashing)")
        for i, L in enumerate(self.layer_filters, start=1):
            if not 1 <= L <= geom.dim:
                raise ValueError(f"L_{i} = {L} outside [1, {geom.dim}] for "
                                 f"{geom.l1}x{geom.l2} patches")
        if self.layer_filters[-1] > MAX_HASH_BITS:
            raise ValueError(f"last layer hashes {self.layer_filters[-1]} bits; at most "
                             f"{MAX_HASH_BITS} are supported")
        BlockSpec(self.n_blocks, self.overlap)

    @property
    def geometry(self) -> PatchGeometry:
        return PatchGeometry(*self.patch)

    @property
    def blocks(self) -> BlockSpec:
        return BlockSpec(self.n_blocks, self.overlap)

    @property
    def descriptor_length(self) -> int:
        return descriptor_length(self.layer_filters, self.n_blocks)

    def to_dict(self) -> dict:
        return {"patch": list(self.patch), "filters": list(self.layer_filters),
                "blocks": self.n_blocks, "overlap": self.overlap}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(tuple(d["patch"]), tuple(d["filters"]), int(d["blocks"]), float(d["overlap"]))


@dataclass(frozen=True)
class LayerState:
    bank: dca.DcaFilterBank
    mean1: np.ndarray
    mean2: np.ndarray
    auto1: np.ndarray           # regularised auto-correlations the bank was solved against
    auto2: np.ndarray
    n_classes: int

    @property
    def effective_rank(self) -> int:
        return dca.rank_of_spectrum(self.bank.spectrum)


@dataclass
class TrainedModel:
    config: NetworkConfig
    image_shape: tuple[int, int]
    layers: list[LayerState]
    classifier: object | None = None
    timings: list[float] = field(default_factory=list, compare=False)

    @property
    def banks(self) -> list[dca.DcaFilterBank]:
        return [layer.bank for layer in self.layers]

    @property
    def metadata(self) -> dict:
        return {"config": self.config.to_dict(), "image_shape": list(self.image_shape),
                "descriptor_length": self.config.descriptor_length,
                "effective_ranks": [layer.effective_rank for layer in self.layers]}


@dataclass(frozen=True)
class FeatureMapStack:
    maps1: np.ndarray           # (K, n_maps, p, q)
    maps2: np.ndarray
    lineage: list[tuple[int, ...]]


def convolve_stack(maps, filters) -> np.ndarray:
    """Correlate (n, p, q) maps with (L, l1, l2) kernels -> (n, L, p, q).

    No kernel flip and zero padding of half a kernel: output pixel j is the
    inner product of the vectorised kernel with pixel j's patch column.
    """
    maps = np.asarray(maps, dtype=np.float64)
    filters = np.asarray(filters, dtype=np.float64)
    if maps.ndim == 2:
        maps = maps[None]
    n, p, q = maps.shape
    L, l1, l2 = filters.shape
    geom = PatchGeometry(l1, l2)
    omega = np.stack([vectorize_patch(f) for f in filters], axis=1)
    out = patch_rows(maps, geom) @ omega
    return np.ascontiguousarray(out.reshape(n, p, q, L).transpose(0, 3, 1, 2))


def convolve_map(image, kernel) -> np.ndarray:
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2 or kernel.shape[0] % 2 == 0 or kernel.shape[1] % 2 == 0:
        raise ValueError("kernel must be 2D with odd sides")
    return convolve_stack(np.asarray(image)[None], kernel[None])[0, 0]


def _propagate(image: np.ndarray, layers: Sequence[LayerState], view: int) -> np.ndarray:
    """Maps after the given layers, flattened to (n_maps, p, q)."""
    maps = image[None]
    p, q = image.shape
    for layer in layers:
        filters = layer.bank.filters1 if view == 1 else layer.bank.filters2
        maps = convolve_stack(maps, filters).reshape(-1, p, q)
    return maps


def fit(dataset: MultiViewDataset, train_indices, config: NetworkConfig) -> TrainedModel:
    """Learn one DCA filter bank per layer from the training samples only."""
    train = np.asarray(train_indices, dtype=np.int64)
    if train.size == 0:
        raise ValueError("empty training index set")
    labels = dataset.labels[train]
    if np.unique(labels).size < 2:
        raise ValueError("training split covers fewer than 2 classes")
    geom = config.geometry
    layers: list[LayerState] = []
    timings = []
    for i, n_filters in enumerate(config.layer_filters):
        t0 = time.perf_counter()
        acc = dca.CorrelationAccumulator(geom.dim)
        for k, label in zip(train, labels):
            maps1 = _propagate(dataset.view1[k], layers, 1)
            maps2 = _propagate(dataset.view2[k], layers, 2)
            acc.add(patch_rows(maps1, geom), patch_rows(maps2, geom), label)
        corr = acc.finalize()
        bank = dca.solve_dca(corr, n_filters, geom, layer_index=i)
        layers.append(LayerState(bank, acc.mean[0].copy(), acc.mean[1].copy(),
                                 corr.auto1, corr.auto2, corr.n_classes))
        timings.append(time.perf_counter() - t0)
        logger.info("layer %d: %d filters, rho = %s, effective rank %d / %d classes (%.1fs)",
                    i + 1, n_filters, np.array2string(bank.eigenvalues, precision=4),
                    layers[-1].effective_rank, corr.n_classes, timings[-1])
    return TrainedModel(config, dataset.image_shape, layers, timings=timings)


def _check_shape(model: TrainedModel, dataset: MultiViewDataset) -> None:
    if tuple(dataset.image_shape) != tuple(model.image_shape):
        raise ValueError(f"images are {dataset.image_shape}, model was trained on {model.image_shape}")


def lineages(layer_filters) -> list[tuple[int, ...]]:
    return list(product(*(range(L) for L in layer_filters)))


def forward(model: TrainedModel, dataset: MultiViewDataset, indices) -> FeatureMapStack:
    """All final-layer maps for the given samples; memory grows as K * prod(L) * p * q."""
    _check_shape(model, dataset)
    idx = np.asarray(indices, dtype=np.int64)
    m1 = np.stack([_propagate(dataset.view1[k], model.layers, 1) for k in idx])
    m2 = np.stack([_propagate(dataset.view2[k], model.layers, 2) for k in idx])
    return FeatureMapStack(m1, m2, lineages(model.config.layer_filters))


def _hashed_sample(model: TrainedModel, image: np.ndarray, view: int) -> np.ndarray:
    p, q = image.shape
    parents = _propagate(image, model.layers[:-1], view)
    last = model.layers[-1].bank
    final = convolve_stack(parents, last.filters1 if view == 1 else last.filters2)
    return hash_pool(final)


def hashed_images(model: TrainedModel, dataset: MultiViewDataset, indices) -> HashedImageSet:
    _check_shape(model, dataset)
    maps = np.stack([np.stack([_hashed_sample(model, dataset.view1[k], 1),
                               _hashed_sample(model, dataset.view2[k], 2)])
                     for k in np.asarray(indices, dtype=np.int64)])
    return HashedImageSet(maps, model.config.layer_filters[-1])


def sample_descriptor(model: TrainedModel, image1: np.ndarray, image2: np.ndarray) -> np.ndarray:
    spec, bits = model.config.blocks, model.config.layer_filters[-1]
    o1 = iq_descriptor(_hashed_sample(model, image1, 1), spec, bits)
    o2 = iq_descriptor(_hashed_sample(model, image2, 2), spec, bits)
    return fuse_views(o1, o2)


def extract_features(model: TrainedModel, dataset: MultiViewDataset, indices,
                     threads: int = 1) -> np.ndarray:
    """Fused IQ descriptors, one row per requested sample, in request order."""
    _check_shape(model, dataset)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        raise ValueError("empty index set")
    out = np.empty((idx.size, model.config.descriptor_length))

    def work(row):
        k = idx[row]
        out[row] = sample_descriptor(model, dataset.view1[k], dataset.view2[k])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(idx.size)))
    else:
        for row in range(idx.size):
            work(row)
    return out


# -- model container ---------------------------------------------------------
#
#   offset  type        field
#   0       4 bytes     magic b"ODMT"
#   4       <u2         format version (1)
#   6       <u2         flags: bit 0 set when a classifier section follows
#   8       <u4         length J of the metadata JSON
#   12      J bytes     UTF-8 JSON (sorted keys): config, image_shape,
#                       descriptor_length, effective_ranks
#           <u4         number of layers n
#           n times:    filter bank container (see odmtcnet.dca), then
#                       <u4 n_classes, <f8 mean1[dim], mean2[dim],
#                       auto1[dim*dim], auto2[dim*dim] (C order)
#           optional    classifier container (see odmtcnet.classify)

MODEL_MAGIC = b"ODMT"
MODEL_VERSION = 1


def model_to_bytes(model: TrainedModel) -> bytes:
    from .classify import classifier_to_bytes

    meta = json.dumps(model.metadata, sort_keys=True, separators=(",", ":")).encode()
    out = io.BytesIO()
    flags = 1 if model.classifier is not None else 0
    out.write(struct.pack("<4sHHI", MODEL_MAGIC, MODEL_VERSION, flags, len(meta)))
    out.write(meta)
    out.write(struct.pack("<I", len(model.layers)))
    for layer in model.layers:
        out.write(dca.bank_to_bytes(layer.bank))
        out.write(struct.pack("<I", layer.n_classes))
        for arr in (layer.mean1, layer.mean2, layer.auto1, layer.auto2):
            out.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    if model.classifier is not None:
        out.write(classifier_to_bytes(model.classifier))
    return out.getvalue()


def model_from_bytes(buf: bytes) -> TrainedModel:
    from .classify import classifier_from_bytes

    magic, version, flags, jlen = struct.unpack_from("<4sHHI", buf, 0)
    if magic != MODEL_MAGIC:
        raise ValueError("not an ODMTCNet model container")
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model version {version}")
    pos = 12
    meta = json.loads(buf[pos:pos + jlen].decode())
    pos += jlen
    (n_layers,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    config = NetworkConfig.from_dict(meta["config"])
    dim = config.geometry.dim
    layers = []
    for _ in range(n_layers):
        bank, used = dca.bank_from_bytes(buf[pos:])
        pos += used
        (n_classes,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        arrays = []
        for n in (dim, dim, dim * dim, dim * dim):
            arrays.append(np.frombuffer(buf, dtype="<f8", count=n, offset=pos).astype(np.float64))
            pos += 8 * n
        m1, m2, a1, a2 = arrays
        layers.append(LayerState(bank, m1, m2, a1.reshape(dim, dim), a2.reshape(dim, dim), n_classes))
    classifier = classifier_from_bytes(buf[pos:]) if flags & 1 else None
    return TrainedModel(config, tuple(meta["image_shape"]), layers, classifier)


def save_model(path, model: TrainedModel) -> None:
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def load_model(path) -> TrainedModel:
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())
