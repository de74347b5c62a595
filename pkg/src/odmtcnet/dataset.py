"""Image loading, second-view generation and train/test splits.

Every stack handled here is a float64 array of shape (M, p, q) with pixel
values in [0, 1]; RGB stacks carry a trailing channel axis (M, p, q, 3).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm")


class DatasetError(ValueError):
    """Raised for unreadable, inconsistent or under-specified image data."""


@dataclass(frozen=True)
class ImageStack:
    images: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...] = ()

    @property
    def n_classes(self) -> int:
        return int(np.unique(self.labels).size)


@dataclass(frozen=True)
class MultiViewDataset:
    """Two paired image stacks sharing one label vector."""

    view1: np.ndarray
    view2: np.ndarray
    labels: np.ndarray
    n_classes: int
    view_provenance: str = "unspecified"
    class_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        v1 = np.asarray(self.view1, dtype=np.float64)
        v2 = np.asarray(self.view2, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if v1.ndim != 3 or v2.ndim != 3:
            raise DatasetError("views must be stacks of 2D images (M, p, q)")
        if v1.shape != v2.shape:
            raise DatasetError(f"view shapes differ: {v1.shape} vs {v2.shape}")
        if labels.shape != (v1.shape[0],):
            raise DatasetError("need exactly one label per paired image")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            raise DatasetError(f"labels must lie in [0, {self.n_classes})")
        for arr in (v1, v2, labels):
            arr.setflags(write=False)
        object.__setattr__(self, "view1", v1)
        object.__setattr__(self, "view2", v2)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.view1.shape[0]

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.view1.shape[1], self.view1.shape[2]

    def subset(self, indices) -> "MultiViewDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return MultiViewDataset(self.view1[idx], self.view2[idx], self.labels[idx],
                                self.n_classes, self.view_provenance, self.class_names)


@dataclass(frozen=True)
class SplitSpec:
    train_count: int
    repetitions: int = 10
    rng_seed: int = 0
    stratified: bool = False

    def __post_init__(self):
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if self.train_count < 1:
            raise ValueError("train_count must be positive")


def _read_image(path: Path, color: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            if color == "gray":
                im = im.convert("L") if im.mode not in ("L", "I;16", "I") else im
            else:
                im = im.convert("RGB")
            arr = np.asarray(im)
    except (OSError, UnidentifiedImageError) as exc:
        raise DatasetError(f"cannot decode {path}: {exc}") from exc
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    # 16-bit PGM/PNG
    return arr.astype(np.float64) / 65535.0


def load_dataset(root, resize: tuple[int, int] | None = None, color: str = "gray") -> ImageStack:
    """Load ``root/<class_name>/<image>`` into a single-view stack.

    Classes are numbered by lexicographic order of their subdirectory names.
    ``resize`` is (height, width); without it all images must already agree in
    size.
    """
    if color not in ("gray", "rgb"):
        raise ValueError("color must be 'gray' or 'rgb'")
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"{root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    images, labels, names = [], [], []
    for cls in class_dirs:
        files = sorted(f for f in cls.iterdir() if f.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            continue
        label = len(names)
        names.append(cls.name)
        for f in files:
            arr = _read_image(f, color)
            if resize is not None and arr.shape[:2] != tuple(resize):
                arr = _resize(arr, resize)
            images.append(arr)
            labels.append(label)
    if len(names) < 2:
        raise DatasetError(f"{root}: need at least 2 class subdirectories with images, found {len(names)}")
    shapes = {a.shape for a in images}
    if len(shapes) > 1:
        raise DatasetError(f"heterogeneous image sizes {sorted(shapes)}; configure a resize")
    logger.info("loaded %d images in %d classes from %s", len(images), len(names), root)
    return ImageStack(np.stack(images), np.asarray(labels, dtype=np.int64), tuple(names))


def _resize(arr: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    h, w = size
    if arr.ndim == 2:
        im = Image.fromarray(arr.astype(np.float32), mode="F")
        return np.asarray(im.resize((w, h), Image.BILINEAR), dtype=np.float64).clip(0.0, 1.0)
    chans = [_resize(arr[..., c], size) for c in range(arr.shape[-1])]
    return np.stack(chans, axis=-1)


def _as_gray_stack(images) -> np.ndarray:
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DatasetError(f"expected a grayscale stack (M, p, q), got shape {arr.shape}")
    return arr


# neighbour offsets, clockwise from top-left; bit b is set when neighbour b > centre
LBP_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


def lbp_codes(images) -> np.ndarray:
    """Integer 8-neighbour LBP codes (0..255) with zero-padded borders."""
    stack = _as_gray_stack(images)
    _, p, q = stack.shape
    padded = np.pad(stack, ((0, 0), (1, 1), (1, 1)))
    codes = np.zeros(stack.shape, dtype=np.int64)
    for bit, (dr, dc) in enumerate(LBP_OFFSETS):
        neighbour = padded[:, 1 + dr:1 + dr + p, 1 + dc:1 + dc + q]
        codes |= (neighbour > stack).astype(np.int64) << bit
    return codes


def lbp_view(images) -> np.ndarray:
    """LBP code image rescaled to [0, 1], same shape as the input stack."""
    return lbp_codes(images) / 255.0


def haar_approximation(image: np.ndarray, levels: int) -> np.ndarray:
    """Low-low subband after ``levels`` orthonormal separable Haar steps."""
    approx = np.asarray(image, dtype=np.float64)
    s = 1.0 / np.sqrt(2.0)
    for _ in range(levels):
        approx = (approx[..., 0::2, :] + approx[..., 1::2, :]) * s
        approx = (approx[..., :, 0::2] + approx[..., :, 1::2]) * s
    return approx


def wavelet_view(images, levels: int = 2) -> np.ndarray:
    """Level-``levels`` Haar approximation, renormalised and upsampled back.

    The orthonormal transform scales the approximation by 2**levels; dividing
    that out gives block means, which are then repeated (nearest neighbour)
    so the output has the input's p x q shape.
    """
    stack = _as_gray_stack(images)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    factor = 2 ** levels
    _, p, q = stack.shape
    if p % factor or q % factor:
        raise DatasetError(f"image size {p}x{q} not divisible by 2**{levels}")
    approx = haar_approximation(stack, levels) / factor
    return np.repeat(np.repeat(approx, factor, axis=1), factor, axis=2)


def channel_views(images, channels: tuple[int, int] = (0, 1)) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[-1] == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise DatasetError(f"channel_views needs RGB stacks (M, p, q, 3), got shape {arr.shape}")
    a, b = channels
    if not (0 <= a < 3 and 0 <= b < 3):
        raise ValueError(f"channel indices must be in 0..2, got {channels}")
    return arr[..., a].copy(), arr[..., b].copy()


def ingest_feature_maps(path, map_shape: tuple[int, int]) -> np.ndarray:
    """Read a header-free CSV (one sample per row) into (M, h, w) maps, row-major."""
    h, w = map_shape
    rows = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    if rows.shape[1] != h * w:
        raise DatasetError(f"{path}: rows have {rows.shape[1]} values, map shape {h}x{w} needs {h * w}")
    return rows.reshape(-1, h, w)


def read_labels(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=1, dtype=np.int64).ravel()


def make_views(stack: ImageStack, kind: str, *, levels: int = 2,
               channels: tuple[int, int] = (0, 1)) -> MultiViewDataset:
    """Pair a loaded stack with a generated second view."""
    images = stack.images
    if kind == "lbp":
        v1 = _as_gray_stack(images)
        v2, prov = lbp_view(v1), "lbp(8-neighbour, radius 1)"
    elif kind == "wavelet":
        v1 = _as_gray_stack(images)
        v2, prov = wavelet_view(v1, levels), f"haar approximation, levels={levels}"
    elif kind == "channels":
        v1, v2 = channel_views(images, channels)
        prov = f"channels {channels[0]} and {channels[1]}"
    else:
        raise ValueError(f"unknown view kind {kind!r}")
    return MultiViewDataset(v1, v2, stack.labels, int(stack.labels.max()) + 1, prov, stack.class_names)


def _stratified_counts(class_sizes: np.ndarray, train_count: int) -> np.ndarray:
    # largest-remainder allocation; ties go to the lower class index
    exact = class_sizes * train_count / class_sizes.sum()
    counts = np.floor(exact).astype(np.int64)
    remainder = exact - counts
    order = np.lexsort((np.arange(len(exact)), -remainder))
    counts[order[: train_count - counts.sum()]] += 1
    return counts


def make_splits(labels, spec: SplitSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """Random (train, test) index pairs, reproducible from ``spec.rng_seed``.

    Indices within each returned array are sorted ascending.
    """
    labels = np.asarray(labels)
    m = labels.size
    if spec.train_count >= m:
        raise ValueError(f"train_count {spec.train_count} must be < number of samples {m}")
    rng = np.random.default_rng(spec.rng_seed)
    classes = np.unique(labels)
    splits = []
    for _ in range(spec.repetitions):
        if spec.stratified:
            sizes = np.array([(labels == c).sum() for c in classes])
            counts = _stratified_counts(sizes, spec.train_count)
            chosen = [rng.permutation(np.flatnonzero(labels == c))[:k] for c, k in zip(classes, counts)]
            train = np.sort(np.concatenate(chosen))
        else:
            train = np.sort(rng.permutation(m)[: spec.train_count])
        test = np.setdiff1d(np.arange(m), train)
        splits.append((train, test))
    return splits


def index_split(train: Sequence[int], test: Sequence[int], m: int) -> tuple[np.ndarray, np.ndarray]:
    """Explicit split, e.g. frontal faces for training and profiles for testing."""
    tr = np.asarray(sorted(train), dtype=np.int64)
    te = np.asarray(sorted(test), dtype=np.int64)
    if tr.size == 0 or te.size == 0:
        raise ValueError("explicit split needs non-empty train and test sets")
    if np.intersect1d(tr, te).size:
        raise ValueError("train and test index lists overlap")
    if min(tr.min(), te.min()) < 0 or max(tr.max(), te.max()) >= m:
        raise ValueError(f"split indices must lie in [0, {m})")
    return tr, te


def export_splits(path, splits) -> None:
    """Write splits as CSV rows of (repetition, index, role)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["repetition", "index", "role"])
        for rep, (train, test) in enumerate(splits):
            rows = [(int(i), "train") for i in train] + [(int(i), "test") for i in test]
            for idx, role in sorted(rows):
                writer.writerow([rep, idx, role])


def read_splits(path) -> list[tuple[np.ndarray, np.ndarray]]:
    reps: dict[int, tuple[list, list]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            tr, te = reps.setdefault(int(row["repetition"]), ([], []))
            role = row["role"]
            if role == "train":
                tr.append(int(row["index"]))
            elif role == "test":
                te.append(int(row["index"]))
            else:
                raise DatasetError(f"{path}: unknown role {role!r}")
    return [(np.asarray(sorted(tr), dtype=np.int64), np.asarray(sorted(te), dtype=np.int64))
            for _, (tr, te) in sorted(reps.items())]
