"""Independent brute-force references used by the DCA tests."""

import numpy as np
from scipy import linalg


def explicit_d_matrix(labels):
    """The N x N block matrix of all-ones class blocks, for columns in the given order."""
    labels = np.asarray(labels)
    order = np.argsort(labels, kind="stable")
    blocks = [np.ones((n, n)) for n in np.unique(labels[order], return_counts=True)[1]]
    d_sorted = linalg.block_diag(*blocks)
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    return d_sorted[np.ix_(inv, inv)]


def cross_by_d_matrix(x1, x2, labels):
    return 2.0 * x1 @ explicit_d_matrix(labels) @ x2.T


def stacked_generalized_eig(cross, auto1, auto2):
    """Solve [[0, C], [C^T, 0]] w = lam blockdiag(A1, A2) w densely.

    Eigenvalues come in +-rho pairs; returns the positive half in descending
    order with the matching view-1 and view-2 blocks of the eigenvectors.
    """
    d1, d2 = auto1.shape[0], auto2.shape[0]
    a = np.zeros((d1 + d2, d1 + d2))
    a[:d1, d1:] = cross
    a[d1:, :d1] = cross.T
    b = linalg.block_diag(auto1, auto2)
    vals, vecs = linalg.eigh(a, b)
    order = np.argsort(-vals)
    vals, vecs = vals[order], vecs[:, order]
    k = min(d1, d2)
    return vals[:k], vecs[:d1, :k], vecs[d1:, :k]
