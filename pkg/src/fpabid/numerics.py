"""Regularized Gram matrices, ridge / weighted least squares and the
elliptical potential audit."""
from __future__ import annotations

import numpy as np

REFACTOR_EVERY = 256
INVERSE_TOL = 1e-8


class GramMatrix:
    """``A = reg * I + sum_i w_i x_i x_i^T`` with a maintained inverse.

    The inverse follows Sherman-Morrison rank-one updates and is recomputed
    from scratch every ``REFACTOR_EVERY`` updates, at which point the drift
    ``max|A A^{-1} - I|`` is checked against ``INVERSE_TOL``.
    """

    def __init__(self, dim: int, reg: float = 1.0):
        if dim < 1:
            raise ValueError("dim must be positive")
        if reg <= 0:
            raise ValueError("reg must be positive so that A stays invertible")
        self.dim = int(dim)
        self.reg = float(reg)
        self.matrix = reg * np.eye(dim)
        self.inverse = np.eye(dim) / reg
        self.n_updates = 0
        self.max_drift = 0.0

    def copy(self) -> "GramMatrix":
        g = GramMatrix.__new__(GramMatrix)
        g.dim, g.reg, g.n_updates, g.max_drift = self.dim, self.reg, self.n_updates, self.max_drift
        g.matrix = self.matrix.copy()
        g.inverse = self.inverse.copy()
        return g

    def update(self, x, weight: float = 1.0) -> "GramMatrix":
        weight = float(weight)
        if not np.isfinite(weight) or weight < 0:
            raise ValueError("weight must be finite and nonnegative")
        if weight == 0.0:
            return self
        x = np.asarray(x, dtype=float)
        self.matrix += weight * np.outer(x, x)
        Ainv_x = self.inverse @ x
        self.inverse -= (weight / (1.0 + weight * (x @ Ainv_x))) * np.outer(Ainv_x, Ainv_x)
        self.n_updates += 1
        if self.n_updates % REFACTOR_EVERY == 0:
            self.refactor()
        return self

    def refactor(self) -> float:
        """Recompute the inverse from the matrix; returns the drift found."""
        self.matrix = 0.5 * (self.matrix + self.matrix.T)
        drift = float(np.max(np.abs(self.matrix @ self.inverse - np.eye(self.dim))))
        self.max_drift = max(self.max_drift, drift)
        if drift > INVERSE_TOL:
            raise FloatingPointError(f"Gram inverse drifted by {drift:.3e}")
        self.inverse = np.linalg.inv(self.matrix)
        self.inverse = 0.5 * (self.inverse + self.inverse.T)
        return drift


def gram_update(g: GramMatrix, x, weight: float = 1.0) -> GramMatrix:
    """In-place rank-one update ``A += weight * x x^T``; returns ``g``."""
    return g.update(x, weight)


def ridge_solve(g: GramMatrix, z) -> np.ndarray:
    """``theta = A^{-1} z``."""
    return g.inverse @ np.asarray(z, dtype=float)


def mahalanobis(g: GramMatrix, x) -> float:
    """``||x||_{A^{-1}} = sqrt(x^T A^{-1} x)``."""
    x = np.asarray(x, dtype=float)
    return float(np.sqrt(max(x @ g.inverse @ x, 0.0)))


def elliptical_potential_audit(vectors, weights=None, reg: float = 1.0):
    """Sum of ``||z_tau||^2`` in the inverse of the Gram matrix built from
    the vectors *before* ``tau``, and its logarithmic upper bound.

    With ``A_tau = c I + sum_{s < tau} z_s z_s^T`` and ``||z_tau|| <= 1``::

        sum_tau ||z_tau||^2_{A_tau^{-1}} <= 2 d log(c + (t - 1) / d) + 2 log c

    Here ``t - 1`` counts the vectors. ``weights`` (if given) scale the
    vectors by their square roots first. The bound as stated needs
    ``c >= 1`` (for ``c < 1`` a single unit vector already breaks it), so
    smaller ``c`` is rejected.

    Returns ``(total, bound)`` and raises ``AssertionError`` if
    ``total > bound``.
    """
    Z = np.atleast_2d(np.asarray(vectors, dtype=float))
    if Z.size == 0:
        return 0.0, 0.0
    if reg < 1.0:
        raise ValueError("the potential bound requires reg >= 1")
    if weights is not None:
        Z = Z * np.sqrt(np.asarray(weights, dtype=float))[:, None]
    n, d = Z.shape
    if np.any(np.linalg.norm(Z, axis=1) > 1.0 + 1e-12):
        raise ValueError("all vectors must have norm at most 1")
    g = GramMatrix(d, reg)
    total = 0.0
    for z in Z:
        total += z @ g.inverse @ z
        g.update(z)
    bound = 2 * d * np.log(reg + n / d) + 2 * np.log(reg)
    if total > bound:
        raise AssertionError(f"elliptical potential {total} exceeds bound {bound}")
    return float(total), float(bound)
