"""Patch matrices: one column per pixel, holding its vectorised neighbourhood.

Vectorisation convention: a patch P of shape (l1, l2) becomes the vector
``P.ravel(order="F")`` (column-major), so entry ``a + b * l1`` is ``P[a, b]``.
Filter reshaping in :mod:`odmtcnet.dca` is the exact inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class PatchGeometry:
    l1: int = 3
    l2: int = 3

    def __post_init__(self):
        for v in (self.l1, self.l2):
            if int(v) != v or v < 3 or v % 2 == 0:
                raise ValueError(f"patch sides must be odd integers >= 3, got {self.l1}x{self.l2}")

    @property
    def dim(self) -> int:
        return self.l1 * self.l2

    @property
    def pad(self) -> tuple[int, int]:
        return self.l1 // 2, self.l2 // 2

    @property
    def stride(self) -> int:
        return 1


@dataclass(frozen=True)
class CenteredPatchMatrix:
    data: np.ndarray            # (l1*l2, N), zero row means
    mean: np.ndarray            # (l1*l2,)
    patch_labels: np.ndarray | None = None    # (N,)
    source_index: np.ndarray | None = None    # (N, 3): sample, row, col

    @property
    def n_columns(self) -> int:
        return self.data.shape[1]


def vectorize_patch(patch: np.ndarray) -> np.ndarray:
    return np.asarray(patch).ravel(order="F")


def unvectorize_patch(vec: np.ndarray, geom: PatchGeometry) -> np.ndarray:
    vec = np.asarray(vec)
    if vec.shape != (geom.dim,):
        raise ValueError(f"expected a vector of length {geom.dim}, got shape {vec.shape}")
    return vec.reshape(geom.l1, geom.l2, order="F")


def patch_rows(maps: np.ndarray, geom: PatchGeometry) -> np.ndarray:
    """Patches of a (n, p, q) map stack as an (n*p*q, l1*l2) row matrix.

    Rows are ordered map-major then raster order; this is the transpose of
    the column layout used by :func:`extract_patches` and is what the
    convolution and the streaming statistics consume.
    """
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim == 2:
        maps = maps[None]
    n, p, q = maps.shape
    a, b = geom.pad
    padded = np.pad(maps, ((0, 0), (a, a), (b, b)))
    win = sliding_window_view(padded, (geom.l1, geom.l2), axis=(1, 2))  # (n, p, q, l1, l2)
    # swap window axes so a C-order reshape yields the column-major patch vector
    return win.swapaxes(-1, -2).reshape(n * p * q, geom.dim)


def extract_patches(stack, geom: PatchGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Raw patch matrix of shape (l1*l2, M*p*q) plus (sample, row, col) per column.

    Zero padding of half a patch keeps one column per pixel; columns run
    sample-major, then in raster order.
    """
    stack = np.asarray(stack, dtype=np.float64)
    if stack.ndim == 2:
        stack = stack[None]
    if stack.ndim != 3:
        raise ValueError(f"expected an image stack (M, p, q), got shape {stack.shape}")
    m, p, q = stack.shape
    if p == 0 or q == 0:
        raise ValueError("images must be non-empty")
    data = np.ascontiguousarray(patch_rows(stack, geom).T)
    k, r, s = np.meshgrid(np.arange(m), np.arange(p), np.arange(q), indexing="ij")
    source = np.stack([k.ravel(), r.ravel(), s.ravel()], axis=1)
    return data, source


def center(raw, patch_labels=None, source_index=None) -> CenteredPatchMatrix:
    """Subtract the across-column mean from every column."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] == 0:
        raise ValueError("center needs a non-empty 2D patch matrix")
    mean = raw.mean(axis=1)
    data = raw - mean[:, None]
    labels = None if patch_labels is None else np.asarray(patch_labels, dtype=np.int64)
    if labels is not None and labels.shape != (raw.shape[1],):
        raise ValueError("need one patch label per column")
    return CenteredPatchMatrix(data, mean, labels, source_index)


def patch_matrix(stack, labels, geom: PatchGeometry) -> CenteredPatchMatrix:
    """Extract and centre patches of a labelled stack; each patch inherits its image label."""
    stack = np.asarray(stack, dtype=np.float64)
    raw, source = extract_patches(stack, geom)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (stack.shape[0],):
        raise ValueError("need one label per image")
    return center(raw, labels[source[:, 0]], source)
