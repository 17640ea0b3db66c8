"""Small dense symmetric eigendecomposition and SVD.

Matrices here never exceed a few dozen rows (batch-size x hidden-width or
parameter-space Hessians), so a cyclic Jacobi sweep is fast, deterministic,
and accurate to near machine precision.  The SVD is derived from the Jacobi
eigendecomposition of the smaller Gram matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolationError

Array = np.ndarray

_SYMMETRY_TOL = 1e-10
_MAX_SWEEPS = 64


@dataclass
class EigenPair:
    """Eigenvalues in descending order; eigenvectors as orthonormal columns."""

    eigenvalues: Array
    eigenvectors: Array


@dataclass
class SvdResult:
    """Thin SVD: A = u @ diag(s) @ v.T with s >= 0 descending."""

    u: Array
    s: Array
    v: Array


def sym_eig(a: Array) -> EigenPair:
    """Eigendecomposition of a real symmetric matrix via cyclic Jacobi.

    Rejects non-square or asymmetric input (max |A - A^T| >= 1e-10).
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractViolationError(f"sym_eig expects a square matrix, got {a.shape}")
    if a.size and np.max(np.abs(a - a.T)) >= _SYMMETRY_TOL:
        raise ContractViolationError("sym_eig input is not symmetric")

    n = a.shape[0]
    work = 0.5 * (a + a.T)  # exact symmetrization of representable noise
    vecs = np.eye(n)
    scale = max(np.max(np.abs(work)) if n else 0.0, 1.0)
    thresh = 1e-15 * scale

    for _ in range(_MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = work[p, q]
                if abs(apq) <= thresh:
                    continue
                rotated = True
                app, aqq = work[p, p], work[q, q]
                tau = (aqq - app) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c

                row_p, row_q = work[p].copy(), work[q].copy()
                work[p] = c * row_p - s * row_q
                work[q] = s * row_p + c * row_q
                col_p, col_q = work[:, p].copy(), work[:, q].copy()
                work[:, p] = c * col_p - s * col_q
                work[:, q] = s * col_p + c * col_q
                work[p, q] = 0.0
                work[q, p] = 0.0

                vec_p, vec_q = vecs[:, p].copy(), vecs[:, q].copy()
                vecs[:, p] = c * vec_p - s * vec_q
                vecs[:, q] = s * vec_p + c * vec_q
        if not rotated:
            break

    values = np.diag(work).copy()
    order = np.argsort(values, kind="stable")[::-1]
    return EigenPair(eigenvalues=values[order], eigenvectors=vecs[:, order])


def svd(a: Array) -> SvdResult:
    """Thin SVD via the Gram matrix of the smaller side.

    For m >= n the eigenvectors of A^T A give V and sigma^2; left vectors
    follow as A v / sigma.  Columns belonging to (near-)zero singular values
    are completed deterministically to an orthonormal set, so downstream
    subgradients are reproducible.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ContractViolationError(f"svd expects a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractViolationError("svd input has non-finite entries")

    m, n = a.shape
    if m >= n:
        pair = sym_eig(a.T @ a)
        s = np.sqrt(np.clip(pair.eigenvalues, 0.0, None))
        v = pair.eigenvectors
        u = _left_factors(a, v, s)
        return SvdResult(u=u, s=s, v=v)
    pair = sym_eig(a @ a.T)
    s = np.sqrt(np.clip(pair.eigenvalues, 0.0, None))
    u = pair.eigenvectors
    v = _left_factors(a.T, u, s)
    return SvdResult(u=u, s=s, v=v)


def _left_factors(a: Array, right: Array, s: Array) -> Array:
    """Columns a @ right[:, i] / s[i], with zero modes filled orthonormally."""
    m = a.shape[0]
    r = right.shape[1]
    cutoff = max(a.shape) * 1e-13 * (s[0] if r else 0.0)
    out = np.zeros((m, r))
    fill: list[int] = []
    for i in range(r):
        if s[i] > cutoff:
            out[:, i] = a @ right[:, i] / s[i]
        else:
            fill.append(i)
    for i in fill:
        out[:, i] = _orthonormal_completion(out, i, m)
    return out


def _orthonormal_completion(cols: Array, target: int, dim: int) -> Array:
    # Gram-Schmidt of successive standard basis vectors against existing columns.
    for k in range(dim):
        cand = np.zeros(dim)
        cand[k] = 1.0
        for j in range(cols.shape[1]):
            if j == target:
                continue
            col = cols[:, j]
            cand -= (cand @ col) * col
        norm = np.linalg.norm(cand)
        if norm > 0.5:
            return cand / norm
    raise ContractViolationError("svd: failed to complete an orthonormal basis")
