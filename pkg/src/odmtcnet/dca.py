"""Discriminant correlation analysis between two patch sets.

The discriminant cross-correlation is ``C = Cw - Cb = 2 * x1 D x2^T`` where D
is the N x N class co-membership matrix. D is never formed: ``x1 D x2^T``
equals the sum over classes of (class column sum of x1)(class column sum of
x2)^T, which costs O(N * dim) instead of O(N^2 * dim).

The constrained maximisation of w1^T C w2 with w_d^T A_d w_d = 1 is solved by
whitening: with A_d = R_d^T R_d (Cholesky), take the SVD of
R1^{-T} C R2^{-1} = U S V^T and map back, w1 = R1^{-1} U, w2 = R2^{-1} V.
"""

from __future__ import annotations

import io
import struct
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import linalg

from .patches import CenteredPatchMatrix, PatchGeometry

REG_SCALE = 1e-8
CONSTRAINT_TOL = 1e-6


class DcaError(RuntimeError):
    pass


@dataclass(frozen=True)
class CorrelationSet:
    cross: np.ndarray           # (dim, dim) discriminant cross-correlation
    auto1: np.ndarray           # (dim, dim) x1 x1^T + eps1 I
    auto2: np.ndarray
    class_sums1: np.ndarray     # (c, dim) per-class column sums of centred x1
    class_sums2: np.ndarray
    classes: np.ndarray         # label of each class_sums row
    reg_epsilon: tuple[float, float]

    @property
    def dim(self) -> int:
        return self.cross.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.classes)


@dataclass(frozen=True)
class DcaFilterBank:
    omega1: np.ndarray          # (dim, L)
    omega2: np.ndarray
    eigenvalues: np.ndarray     # (L,), descending
    spectrum: np.ndarray        # all singular values of the whitened cross matrix
    filters1: np.ndarray | None = None  # (L, l1, l2)
    filters2: np.ndarray | None = None
    layer_index: int = 0

    @property
    def n_filters(self) -> int:
        return self.omega1.shape[1]


def _regularize(auto: np.ndarray, reg_scale: float) -> tuple[np.ndarray, float]:
    eps = reg_scale * float(np.trace(auto)) / auto.shape[0]
    return auto + eps * np.eye(auto.shape[0]), eps


def _finish(auto1, auto2, sums1, sums2, classes, reg_scale) -> CorrelationSet:
    if len(classes) < 2:
        warnings.warn("single-class input: the discriminant cross-correlation has rank <= 1",
                      RuntimeWarning, stacklevel=3)
    cross = 2.0 * (sums1.T @ sums2)
    a1, e1 = _regularize((auto1 + auto1.T) / 2, reg_scale)
    a2, e2 = _regularize((auto2 + auto2.T) / 2, reg_scale)
    return CorrelationSet(cross, a1, a2, sums1, sums2, np.asarray(classes), (e1, e2))


def _class_sums(data: np.ndarray, labels: np.ndarray, classes: np.ndarray) -> np.ndarray:
    inverse = np.searchsorted(classes, labels)
    sums = np.zeros((len(classes), data.shape[0]))
    np.add.at(sums, inverse, data.T)
    return sums


def build_correlations(x1: CenteredPatchMatrix, x2: CenteredPatchMatrix,
                       reg_scale: float = REG_SCALE) -> CorrelationSet:
    if x1.n_columns != x2.n_columns:
        raise ValueError(f"column counts differ: {x1.n_columns} vs {x2.n_columns}")
    if x1.patch_labels is None or x2.patch_labels is None:
        raise ValueError("both patch matrices need patch labels")
    if not np.array_equal(x1.patch_labels, x2.patch_labels):
        raise ValueError("patch labels differ between the two views")
    labels = x1.patch_labels
    classes = np.unique(labels)
    s1 = _class_sums(x1.data, labels, classes)
    s2 = _class_sums(x2.data, labels, classes)
    return _finish(x1.data @ x1.data.T, x2.data @ x2.data.T, s1, s2, classes, reg_scale)


class CorrelationAccumulator:
    """Streaming version of :func:`build_correlations`.

    Batches of paired patch rows are merged with the pairwise (Chan et al.)
    update for means and centred Gram matrices; class sums are kept raw and
    centred with the final mean, so the result matches centring the full
    concatenated patch matrices up to rounding.
    """

    def __init__(self, dim: int):
        self.dim = dim
        self.count = 0
        self.mean = [np.zeros(dim), np.zeros(dim)]
        self.gram = [np.zeros((dim, dim)), np.zeros((dim, dim))]
        self._sums: dict[int, list] = {}

    def add(self, rows1: np.ndarray, rows2: np.ndarray, label: int) -> None:
        """Add (n, dim) patch rows of both views, all carrying class ``label``."""
        n = rows1.shape[0]
        if rows2.shape != rows1.shape or rows1.shape[1] != self.dim:
            raise ValueError("paired patch rows must share shape (n, dim)")
        if n == 0:
            return
        entry = self._sums.setdefault(int(label), [0, np.zeros(self.dim), np.zeros(self.dim)])
        entry[0] += n
        total = self.count + n
        for d, rows in enumerate((rows1, rows2)):
            batch_sum = rows.sum(axis=0)
            entry[d + 1] += batch_sum
            batch_mean = batch_sum / n
            centred = rows - batch_mean
            delta = batch_mean - self.mean[d]
            self.gram[d] += centred.T @ centred + np.outer(delta, delta) * (self.count * n / total)
            self.mean[d] = self.mean[d] + delta * (n / total)
        self.count = total

    @property
    def classes(self) -> np.ndarray:
        return np.array(sorted(self._sums), dtype=np.int64)

    def finalize(self, reg_scale: float = REG_SCALE) -> CorrelationSet:
        if self.count == 0:
            raise ValueError("no patches accumulated")
        classes = self.classes
        counts = np.array([self._sums[c][0] for c in classes], dtype=np.float64)
        s1 = np.stack([self._sums[c][1] for c in classes]) - counts[:, None] * self.mean[0]
        s2 = np.stack([self._sums[c][2] for c in classes]) - counts[:, None] * self.mean[1]
        return _finish(self.gram[0], self.gram[1], s1, s2, classes, reg_scale)


def _cholesky(a: np.ndarray, which: str) -> np.ndarray:
    try:
        return linalg.cholesky(a, lower=False)
    except linalg.LinAlgError as exc:
        raise DcaError(f"auto-correlation of view {which} is not positive definite "
                       "after regularisation") from exc


def whitened_cross(corr: CorrelationSet):
    """Return (R1, R2, R1^{-T} C R2^{-1}) formed densely (diagnostics; solving uses whitened_svd)."""
    r1 = _cholesky(corr.auto1, "1")
    r2 = _cholesky(corr.auto2, "2")
    m = linalg.solve_triangular(r1, corr.cross, trans="T")
    m = linalg.solve_triangular(r2, m.T, trans="T").T
    return r1, r2, m


def whitened_svd(corr: CorrelationSet):
    """Full SVD of the whitened cross-correlation, computed through its rank-c factors.

    C = 2 S1^T S2, so R1^{-T} C R2^{-1} = W1 W2^T with W_d = sqrt(2) R_d^{-T} S_d^T.
    A complete QR of each factor reduces the problem to a k x k core (k = min(dim, c));
    the remaining singular values are exactly zero and their vectors span the QR
    complements. Working on the factors keeps rounding noise from the whitening out of
    the null space, which matters when the auto-correlations are nearly singular.
    Returns (R1, R2, U, s, V) with s descending.
    """
    r1 = _cholesky(corr.auto1, "1")
    r2 = _cholesky(corr.auto2, "2")
    dim = corr.dim
    w1 = np.sqrt(2.0) * linalg.solve_triangular(r1, corr.class_sums1.T, trans="T")
    w2 = np.sqrt(2.0) * linalg.solve_triangular(r2, corr.class_sums2.T, trans="T")
    q1, t1 = linalg.qr(w1)
    q2, t2 = linalg.qr(w2)
    k = min(dim, w1.shape[1])
    a, core_s, bt = linalg.svd(t1[:k] @ t2[:k].T, lapack_driver="gesdd")
    u = np.concatenate([q1[:, :k] @ a, q1[:, k:]], axis=1)
    v = np.concatenate([q2[:, :k] @ bt.T, q2[:, k:]], axis=1)
    s = np.concatenate([core_s, np.zeros(dim - k)])
    order = np.argsort(-s, kind="stable")
    return r1, r2, u[:, order], s[order], v[:, order]


def _fix_signs(omega: np.ndarray) -> np.ndarray:
    # largest-magnitude entry of every column made positive; argmax takes the lowest index on ties
    idx = np.argmax(np.abs(omega), axis=0)
    signs = np.where(omega[idx, np.arange(omega.shape[1])] < 0, -1.0, 1.0)
    return omega * signs


def solve_dca(corr: CorrelationSet, n_filters: int, geom: PatchGeometry | None = None,
              layer_index: int = 0) -> DcaFilterBank:
    """Top ``n_filters`` paired projections, sorted by descending correlation."""
    dim = corr.dim
    if not 1 <= n_filters <= dim:
        raise ValueError(f"number of filters must be in [1, {dim}], got {n_filters}")
    r1, r2, u, s, v = whitened_svd(corr)
    keep = slice(0, n_filters)
    omega1 = _fix_signs(linalg.solve_triangular(r1, u[:, keep]))
    omega2 = _fix_signs(linalg.solve_triangular(r2, v[:, keep]))
    for d, (om, auto) in enumerate(((omega1, corr.auto1), (omega2, corr.auto2)), start=1):
        residual = np.abs(np.einsum("ig,ij,jg->g", om, auto, om) - 1.0).max()
        if residual > CONSTRAINT_TOL:
            raise DcaError(f"view {d}: unit auto-correlation violated by {residual:.3g}; "
                           "increase regularisation")
    bank = DcaFilterBank(omega1, omega2, s[keep].copy(), s, layer_index=layer_index)
    return reshape_filters(bank, geom) if geom is not None else bank


def constraint_residuals(bank: DcaFilterBank, auto1: np.ndarray, auto2: np.ndarray) -> np.ndarray:
    """|w^T A w - 1| for every kept column of both views, shape (2, L)."""
    return np.stack([
        np.abs(np.einsum("ig,ij,jg->g", bank.omega1, auto1, bank.omega1) - 1.0),
        np.abs(np.einsum("ig,ij,jg->g", bank.omega2, auto2, bank.omega2) - 1.0),
    ])


def reshape_filters(bank: DcaFilterBank, geom: PatchGeometry) -> DcaFilterBank:
    """Attach (L, l1, l2) kernels per view; inverse of the patch vectorisation."""
    if bank.omega1.shape[0] != geom.dim or bank.omega2.shape[0] != geom.dim:
        raise ValueError(f"projection length {bank.omega1.shape[0]} does not match "
                         f"{geom.l1}x{geom.l2} patches")

    def kernels(omega):
        return np.ascontiguousarray(omega.T.reshape(-1, geom.l2, geom.l1).transpose(0, 2, 1))

    return replace(bank, filters1=kernels(bank.omega1), filters2=kernels(bank.omega2))


def singular_spectrum(corr: CorrelationSet) -> np.ndarray:
    return whitened_svd(corr)[3]


def effective_rank(corr: CorrelationSet, tol: float = 1e-8) -> int:
    """Whitened singular values above ``tol`` times the largest one."""
    return rank_of_spectrum(singular_spectrum(corr), tol)


def rank_of_spectrum(s: np.ndarray, tol: float = 1e-8) -> int:
    s = np.asarray(s)
    if s.size == 0 or s.max() <= 0:
        return 0
    return int((s > tol * s.max()).sum())


# -- binary container --------------------------------------------------------
#
#   offset  type        field
#   0       4 bytes     magic b"DCAB"
#   4       <u2         format version (1)
#   6       <u2         reserved (0)
#   8       <u4 x 5     layer_index, l1, l2, L, n_spectrum
#   28      <f8 x L     eigenvalues
#           <f8 x S     full singular spectrum
#           <f8 x L*l1*l2   view-1 filters, C order over (L, l1, l2)
#           <f8 x L*l1*l2   view-2 filters

BANK_MAGIC = b"DCAB"
BANK_VERSION = 1
_BANK_HEADER = struct.Struct("<4sHH5I")


def bank_to_bytes(bank: DcaFilterBank) -> bytes:
    if bank.filters1 is None:
        raise ValueError("reshape the filters before serialising a bank")
    L, l1, l2 = bank.filters1.shape
    out = io.BytesIO()
    out.write(_BANK_HEADER.pack(BANK_MAGIC, BANK_VERSION, 0, bank.layer_index, l1, l2, L,
                                bank.spectrum.size))
    for arr in (bank.eigenvalues, bank.spectrum, bank.filters1, bank.filters2):
        out.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return out.getvalue()


def bank_from_bytes(buf: bytes) -> tuple[DcaFilterBank, int]:
    """Parse one bank; returns it with the number of bytes consumed."""
    magic, version, _, layer, l1, l2, L, ns = _BANK_HEADER.unpack_from(buf, 0)
    if magic != BANK_MAGIC:
        raise ValueError("not a filter bank container")
    if version != BANK_VERSION:
        raise ValueError(f"unsupported filter bank version {version}")
    pos = _BANK_HEADER.size

    def take(n):
        nonlocal pos
        arr = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).astype(np.float64)
        pos += 8 * n
        return arr

    eig, spec = take(L), take(ns)
    f1 = take(L * l1 * l2).reshape(L, l1, l2)
    f2 = take(L * l1 * l2).reshape(L, l1, l2)
    geom_dim = l1 * l2
    omega1 = f1.transpose(0, 2, 1).reshape(L, geom_dim).T.copy()
    omega2 = f2.transpose(0, 2, 1).reshape(L, geom_dim).T.copy()
    return DcaFilterBank(omega1, omega2, eig, spec, f1, f2, layer), pos


def save_bank(path, bank: DcaFilterBank) -> None:
    with open(path, "wb") as fh:
        fh.write(bank_to_bytes(bank))


def load_bank(path) -> DcaFilterBank:
    with open(path, "rb") as fh:
        return bank_from_bytes(fh.read())[0]
