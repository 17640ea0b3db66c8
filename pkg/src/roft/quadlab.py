"""Verification lab for the weight-regularized quadratic minimizer.

On a quadratic loss, the closed form for the penalized optimum is an
eigenbasis-wise convex combination of the unregularized minimizer and the
reference point.  This module evaluates that closed form and cross-checks it
against a direct gradient-descent minimization of the same objective, over
randomized instances spanning a range of conditioning.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConvergenceError, DomainError, ValidationError
from .linalg import sym_eig
from .rng import stream

_GRAD_TOL = 1e-10
_MAX_ITERS = 10**6


@dataclass
class QuadProblem:
    """Quadratic loss around theta_star with curvature H, pulled toward theta_pre."""

    h: np.ndarray
    theta_star: np.ndarray
    theta_pre: np.ndarray
    delta: float
    base: float = 0.0

    def loss(self, theta: np.ndarray) -> float:
        d = theta - self.theta_star
        r = theta - self.theta_pre
        return float(self.base + 0.5 * d @ self.h @ d + 0.5 * self.delta * r @ r)

    def grad(self, theta: np.ndarray) -> np.ndarray:
        return self.h @ (theta - self.theta_star) + self.delta * (theta - self.theta_pre)


def closed_form(problem: QuadProblem) -> np.ndarray:
    """Eigenbasis solution: coordinates mix theta_star and theta_pre with
    weights lambda_i / (lambda_i + delta) and delta / (lambda_i + delta)."""
    pair = sym_eig(problem.h)
    lam = pair.eigenvalues
    q = pair.eigenvectors
    denom = lam + problem.delta
    if np.any(denom <= 0.0) or np.any(np.abs(denom) < 1e-300):
        raise DomainError(
            f"closed form singular: min(lambda + delta) = {denom.min():.3e}"
        )
    star_coords = q.T @ problem.theta_star
    pre_coords = q.T @ problem.theta_pre
    mixed = (lam / denom) * star_coords + (problem.delta / denom) * pre_coords
    return q @ mixed


def numeric(problem: QuadProblem) -> np.ndarray:
    """Gradient descent with the contraction step 1 / (lambda_max + delta).

    Stops at gradient norm 1e-10, relaxed to the float64 round-off floor of
    the gradient itself when the curvature scale (lambda_max + delta) makes
    1e-10 unrepresentable; on moderate deltas the absolute tolerance governs.
    """
    pair = sym_eig(problem.h)
    lam_max = float(pair.eigenvalues[0])
    if lam_max + problem.delta <= 0.0:
        raise DomainError("objective is not strongly convex along every direction")
    scale = max(
        1.0,
        float(np.max(np.abs(problem.theta_star))),
        float(np.max(np.abs(problem.theta_pre))),
    )
    tol = max(_GRAD_TOL, 64.0 * np.finfo(np.float64).eps * (lam_max + problem.delta) * scale)
    step = 1.0 / (lam_max + problem.delta)
    theta = problem.theta_star.astype(np.float64).copy()
    for _ in range(_MAX_ITERS):
        g = problem.grad(theta)
        if np.linalg.norm(g) < tol:
            return theta
        theta = theta - step * g
    raise ConvergenceError(
        f"gradient norm {np.linalg.norm(problem.grad(theta)):.3e} after {_MAX_ITERS} iterations"
    )


def random_problem(dim: int, seed: int, delta: float) -> QuadProblem:
    """Seeded instance: H from a random rotation with log-uniform spectrum."""
    rng = stream("quad", dim, seed)
    gauss = rng.normal(size=(dim, dim))
    q, r = np.linalg.qr(gauss)
    q = q * np.sign(np.diag(r))  # fix the sign convention for determinism
    lam = 10.0 ** rng.uniform(-2.0, 1.0, size=dim)
    h = q @ np.diag(lam) @ q.T
    h = 0.5 * (h + h.T)
    theta_star = rng.normal(size=dim)
    theta_pre = rng.normal(size=dim)
    return QuadProblem(h=h, theta_star=theta_star, theta_pre=theta_pre, delta=delta)


def verify(
    dim: int,
    seed: int,
    delta_grid: Sequence[float],
    instances: int = 20,
) -> tuple[float, list[dict]]:
    """Max closed-form vs numeric discrepancy over seeded instances x deltas.

    Returns the maximum infinity-norm discrepancy and one record per
    (instance, delta) evaluation.
    """
    if dim > 32 or dim < 1:
        raise ValidationError(f"verify supports dim in [1, 32], got {dim}")
    records: list[dict] = []
    worst = 0.0
    for i in range(instances):
        inst_seed = seed * 1000 + i
        for delta in delta_grid:
            problem = random_problem(dim, inst_seed, float(delta))
            error = float(
                np.max(np.abs(closed_form(problem) - numeric(problem)))
            )
            worst = max(worst, error)
            records.append(
                {"dim": dim, "seed": inst_seed, "delta": float(delta), "error": error}
            )
    return worst, records
