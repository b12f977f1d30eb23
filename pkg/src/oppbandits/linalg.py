"""Small dense positive-definite linear algebra shared by the LinUCB family.

Every linear policy keeps a design matrix ``A = reg * I + sum x x^T`` together
with an incrementally maintained inverse, and a response vector ``b``.  The
ridge estimate is ``theta = A^{-1} b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_REFACTOR_PERIOD = 1024


@dataclass
class PdState:
    """Symmetric positive-definite matrix ``A`` and its running inverse."""

    dim: int
    a_matrix: np.ndarray
    a_inverse: np.ndarray
    update_count: int = 0
    refactor_period: int = DEFAULT_REFACTOR_PERIOD

    def copy(self) -> "PdState":
        return PdState(self.dim, self.a_matrix.copy(), self.a_inverse.copy(),
                       self.update_count, self.refactor_period)


@dataclass
class RidgeState:
    b_vector: np.ndarray
    theta_hat: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.theta_hat is None:
            self.theta_hat = np.zeros_like(self.b_vector)

    def copy(self) -> "RidgeState":
        return RidgeState(self.b_vector.copy(), self.theta_hat.copy())


def _as_vector(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (dim,):
        raise ValueError(f"expected a vector of length {dim}, got shape {x.shape}")
    return x


def pd_init(dim: int, regularizer: float = 1.0,
            refactor_period: int = DEFAULT_REFACTOR_PERIOD) -> PdState:
    """Return ``A_0 = regularizer * I_dim`` with its exact inverse."""
    if int(dim) != dim or dim < 1:
        raise ValueError(f"dim must be a positive integer, got {dim!r}")
    if not regularizer > 0:
        raise ValueError(f"regularizer must be positive, got {regularizer!r}")
    if refactor_period < 1:
        raise ValueError("refactor_period must be >= 1")
    dim = int(dim)
    eye = np.eye(dim)
    return PdState(dim, regularizer * eye, eye / regularizer, 0, refactor_period)


def ridge_init(dim: int) -> RidgeState:
    return RidgeState(np.zeros(dim), np.zeros(dim))


def refactor(state: PdState) -> PdState:
    """Recompute ``a_inverse`` from ``a_matrix`` by Cholesky factorization."""
    chol = np.linalg.cholesky(state.a_matrix)
    inv_chol = np.linalg.solve(chol, np.eye(state.dim))
    inv = inv_chol.T @ inv_chol
    state.a_inverse = 0.5 * (inv + inv.T)
    return state


def rank_one_update(state: PdState, x) -> PdState:
    """Add ``x x^T`` to ``A`` and update the inverse by Sherman-Morrison.

    The state is modified in place and returned.  Every ``refactor_period``
    updates the inverse is rebuilt from ``A`` to bound floating-point drift.
    """
    x = _as_vector(x, state.dim)
    u = state.a_inverse @ x
    denom = 1.0 + x @ u
    state.a_matrix += np.outer(x, x)
    state.a_inverse -= np.outer(u, u) / denom
    state.update_count += 1
    if state.update_count % state.refactor_period == 0:
        refactor(state)
    return state


def weighted_norm(state: PdState, x) -> float:
    """``||x||_{A^{-1}} = sqrt(x^T A^{-1} x)``."""
    x = _as_vector(x, state.dim)
    return float(np.sqrt(max(x @ state.a_inverse @ x, 0.0)))


def ridge_observe(pd: PdState, ridge: RidgeState, x, reward: float) -> None:
    """One online ridge step: update ``A``, ``b`` and the estimate together."""
    x = _as_vector(x, pd.dim)
    rank_one_update(pd, x)
    ridge.b_vector += reward * x
    ridge.theta_hat = ridge_solve(pd, ridge)


def ridge_solve(pd: PdState, ridge: RidgeState) -> np.ndarray:
    """Return the ridge estimate ``theta = A^{-1} b``."""
    b = np.asarray(ridge.b_vector, dtype=np.float64)
    if b.shape != (pd.dim,):
        raise ValueError(f"b has shape {b.shape}, expected ({pd.dim},)")
    return pd.a_inverse @ b


def inverse_error(state: PdState) -> float:
    """Max-abs entry of ``A A^{-1} - I``."""
    return float(np.max(np.abs(state.a_matrix @ state.a_inverse - np.eye(state.dim))))
