"""Dense linear algebra primitives for small matrices (dims <= ~12).

Eigensolves use the cyclic Jacobi method: at these sizes robustness and
determinism matter more than speed, and the rotations keep symmetric
structure exact.
"""

from __future__ import annotations

import math

import numpy as np

SYM_TOL = 1e-9


class NonSymmetricError(ValueError):
    pass


class SingularMatrixError(ValueError):
    pass


def require_symmetric(a, tol=SYM_TOL):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NonSymmetricError(f"expected square matrix, got shape {a.shape}")
    skew = np.max(np.abs(a - a.T)) if a.size else 0.0
    if skew > tol:
        raise NonSymmetricError(f"matrix not symmetric: max |A - A^T| = {skew:g}")
    return 0.5 * (a + a.T)


def sym_eig(a, tol=SYM_TOL):
    """Eigendecomposition of a symmetric matrix via cyclic Jacobi.

    Returns (eigenvalues ascending, eigenvectors as columns).
    """
    a = require_symmetric(a, tol)
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    a = a.copy()
    scale = np.max(np.abs(a)) or 1.0
    for _ in range(100):
        off = math.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= 1e-15 * scale * n:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-18 * scale:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (
                    abs(theta) + math.sqrt(theta * theta + 1.0)
                )
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                a[p, q] = a[q, p] = 0.0
                v = v @ rot
    w = a.diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def inverse(a, pivot_tol=1e-13):
    """Matrix inverse by Gauss-Jordan with partial pivoting."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected square matrix, got shape {a.shape}")
    n = a.shape[0]
    scale = np.max(np.abs(a)) or 1.0
    aug = np.hstack([a.astype(float), np.eye(n)])
    for col in range(n):
        pivot_row = col + int(np.argmax(np.abs(aug[col:, col])))
        pivot = aug[pivot_row, col]
        if abs(pivot) < pivot_tol * scale:
            raise SingularMatrixError(
                f"matrix singular to working precision (pivot {pivot:g})"
            )
        if pivot_row != col:
            aug[[col, pivot_row]] = aug[[pivot_row, col]]
        aug[col] /= aug[col, col]
        for row in range(n):
            if row != col and aug[row, col] != 0.0:
                aug[row] -= aug[row, col] * aug[col]
    return aug[:, n:]


def null_space_basis(a, tol=1e-10):
    """Orthonormal basis of the null space of a (m x n, m <= n).

    Right singular vectors with singular value below tol * scale span
    the numerical null space; rank is decided entirely by tol.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    _, sv, vt = np.linalg.svd(a)
    scale = max(float(sv[0]) if sv.size else 0.0, 1.0)
    rank = int(np.sum(sv > tol * scale))
    return vt[rank:].T.copy()


def spectral_norm(a):
    """Largest singular value, via sym_eig of A^T A."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return 0.0
    scale = np.max(np.abs(a))
    if scale == 0.0:
        return 0.0
    b = a / scale
    w, _ = sym_eig(b.T @ b)
    return scale * math.sqrt(max(float(w[-1]), 0.0))


def generalized_sym_eig(a, b):
    """Eigenvalues/vectors of A v = mu B v with A symmetric, B SPD.

    Solved by Cholesky of B followed by a plain symmetric eigensolve.
    """
    a = require_symmetric(a)
    b = require_symmetric(b)
    try:
        chol = np.linalg.cholesky(b)
    except np.linalg.LinAlgError:
        raise SingularMatrixError("B block not positive definite")
    inv_l = inverse(chol)
    w, y = sym_eig(inv_l @ a @ inv_l.T)
    return w, inv_l.T @ y
