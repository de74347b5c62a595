"""Hashing pooling and the block-wise information-quality (IQ) descriptor.

The last convolutional layer's maps are grouped by parent lineage; each group
of L maps is binarised and packed into one integer image in [0, 2**L - 1].
Each integer image is cut into A (possibly overlapping) blocks, and for each
block and each value t the descriptor holds the self-information -ln p(t) of
the block's empirical distribution, or 0 when t does not occur.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def binarize(maps) -> np.ndarray:
    """Pixelwise step: 1 where x > 0, else 0 (so S(0) = 0)."""
    return (np.asarray(maps) > 0).astype(np.uint8)


def hash_group(bits, bit_width: int | None = None) -> np.ndarray:
    """Pack L bit maps (axis 0) into integers: sum of 2**(l-1) * b_l, l = 1..L."""
    bits = np.asarray(bits)
    if bits.ndim < 1 or bits.shape[0] == 0:
        raise ValueError("need at least one bit map")
    if bit_width is not None and bits.shape[0] != bit_width:
        raise ValueError(f"expected {bit_width} bit maps, got {bits.shape[0]}")
    if bits.shape[0] > 62:
        raise ValueError("bit width above 62 does not fit an int64 code")
    weights = (np.int64(1) << np.arange(bits.shape[0], dtype=np.int64))
    return np.tensordot(weights, bits.astype(np.int64), axes=(0, 0))


def hash_pool(final_maps) -> np.ndarray:
    """(G, L, p, q) real maps grouped by parent -> (G, p, q) integer images."""
    final_maps = np.asarray(final_maps)
    if final_maps.ndim != 4:
        raise ValueError("expected maps grouped as (groups, L, p, q)")
    return hash_group(np.moveaxis(binarize(final_maps), 1, 0))


@dataclass(frozen=True)
class HashedImageSet:
    """Integer images per sample, view and lineage group: shape (K, 2, G, p, q)."""

    maps: np.ndarray
    bit_width: int

    def __post_init__(self):
        if self.maps.size and (self.maps.min() < 0 or self.maps.max() > 2 ** self.bit_width - 1):
            raise ValueError(f"hashed values outside [0, 2**{self.bit_width} - 1]")

    @property
    def n_groups(self) -> int:
        return self.maps.shape[2]


def block_grid(n_blocks: int) -> tuple[int, int]:
    """Factor A = a_r * a_c with the sides as close as possible and a_r <= a_c."""
    if n_blocks < 1:
        raise ValueError("block count must be >= 1")
    a_r = max(d for d in range(1, int(np.sqrt(n_blocks)) + 1) if n_blocks % d == 0)
    return a_r, n_blocks // a_r


@dataclass(frozen=True)
class BlockSpec:
    n_blocks: int = 8
    overlap: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.overlap < 1.0:
            raise ValueError(f"overlap ratio must be in [0, 1), got {self.overlap}")
        block_grid(self.n_blocks)

    @property
    def grid(self) -> tuple[int, int]:
        return block_grid(self.n_blocks)


def _edges(n: int, parts: int) -> list[int]:
    return [(i * n) // parts for i in range(parts + 1)]


def block_windows(p: int, q: int, spec: BlockSpec) -> list[tuple[slice, slice]]:
    """A windows in row-major grid order, each a (row slice, col slice).

    Base blocks tile the image; each is then grown on every side by
    floor(overlap * side / 2) pixels and clipped to the image.
    """
    if spec.n_blocks > p * q:
        raise ValueError(f"{spec.n_blocks} blocks do not fit a {p}x{q} image")
    a_r, a_c = spec.grid
    if a_r > p or a_c > q:
        raise ValueError(f"a {a_r}x{a_c} block grid does not fit a {p}x{q} image")
    rows, cols = _edges(p, a_r), _edges(q, a_c)
    windows = []
    for i in range(a_r):
        h = rows[i + 1] - rows[i]
        gr = int(spec.overlap * h / 2)
        for j in range(a_c):
            w = cols[j + 1] - cols[j]
            gc = int(spec.overlap * w / 2)
            windows.append((slice(max(rows[i] - gr, 0), min(rows[i + 1] + gr, p)),
                            slice(max(cols[j] - gc, 0), min(cols[j + 1] + gc, q))))
    return windows


def iq_descriptor(hashed, spec: BlockSpec, bit_width: int) -> np.ndarray:
    """IQ vector of one sample-view: (G, p, q) integer images -> G * A * 2**L values.

    Ordering is (lineage group, window, value).
    """
    hashed = np.asarray(hashed, dtype=np.int64)
    if hashed.ndim == 2:
        hashed = hashed[None]
    g, p, q = hashed.shape
    n_bins = 2 ** bit_width
    if hashed.size and (hashed.min() < 0 or hashed.max() >= n_bins):
        raise ValueError(f"hashed values outside [0, {n_bins - 1}]")
    windows = block_windows(p, q, spec)
    out = np.empty((g, len(windows), n_bins))
    offsets = (np.arange(g, dtype=np.int64) * n_bins)[:, None]
    for w, (rs, cs) in enumerate(windows):
        block = hashed[:, rs, cs].reshape(g, -1)
        counts = np.bincount((block + offsets).ravel(), minlength=g * n_bins).reshape(g, n_bins)
        with np.errstate(divide="ignore"):
            info = -np.log(counts / block.shape[1])
        out[:, w, :] = np.where(counts > 0, info, 0.0)
    # -log(1) is -0.0; keep the zero sign canonical
    out += 0.0
    return out.ravel()


def fuse_views(o1, o2) -> np.ndarray:
    o1, o2 = np.asarray(o1), np.asarray(o2)
    if o1.shape != o2.shape:
        raise ValueError(f"view descriptors differ in length: {o1.shape} vs {o2.shape}")
    return np.concatenate([o1, o2])


def descriptor_length(layer_filters, n_blocks: int, fused: bool = True) -> int:
    """2**L_n * (L_1 * ... * L_{n-1}) * A per view, doubled when fused."""
    *head, last = layer_filters
    per_view = 2 ** last * int(np.prod(head, dtype=np.int64)) * n_blocks
    return 2 * per_view if fused else per_view


# -- feature export ----------------------------------------------------------

def config_digest(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def write_features(path, features: np.ndarray, metadata: dict) -> Path:
    """Write one descriptor row per sample (.npy, or .csv by suffix) plus a JSON sidecar."""
    path = Path(path)
    features = np.asarray(features, dtype=np.float64)
    if path.suffix == ".csv":
        np.savetxt(path, features, delimiter=",", fmt="%.17g")
    else:
        with open(path, "wb") as fh:
            np.save(fh, features, allow_pickle=False)
    sidecar = path.with_name(path.name + ".json")
    meta = dict(metadata, rows=int(features.shape[0]), columns=int(features.shape[1]),
                ordering="view, lineage group, block, hashed value")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return sidecar
