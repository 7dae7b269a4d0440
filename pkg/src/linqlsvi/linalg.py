"""Regularized covariance bookkeeping for per-step ridge regressions.

The covariance starts at the identity (ridge weight 1) and only ever receives
rank-one additions, so its inverse is maintained with Sherman-Morrison updates
and periodically rebuilt from the matrix itself to stop rounding drift.
"""
from __future__ import annotations

import numpy as np

DEFAULT_REFACTOR_PERIOD = 256


class NumericalIntegrityError(ArithmeticError):
    """Raised when the covariance stops being positive definite."""


class CovarianceState:
    """Lambda = I + sum(phi phi^T) together with its inverse.

    Instances are mutated in place by :func:`rank_one_update`; use
    :meth:`copy` to keep a snapshot.
    """

    __slots__ = ("dim", "lambda_mat", "lambda_inv", "update_count", "refactor_period")

    def __init__(self, dim: int, refactor_period: int = DEFAULT_REFACTOR_PERIOD):
        if dim < 1:
            raise ValueError(f"dimension must be positive, got {dim}")
        if refactor_period < 1:
            raise ValueError(f"refactor_period must be positive, got {refactor_period}")
        self.dim = int(dim)
        self.lambda_mat = np.eye(dim)
        self.lambda_inv = np.eye(dim)
        self.update_count = 0
        self.refactor_period = int(refactor_period)

    def copy(self) -> "CovarianceState":
        other = CovarianceState(self.dim, self.refactor_period)
        other.lambda_mat = self.lambda_mat.copy()
        other.lambda_inv = self.lambda_inv.copy()
        other.update_count = self.update_count
        return other

    def refactor(self) -> None:
        """Recompute the inverse from ``lambda_mat`` via Cholesky."""
        try:
            chol = np.linalg.cholesky(self.lambda_mat)
        except np.linalg.LinAlgError as exc:
            raise NumericalIntegrityError(
                f"covariance lost positive definiteness after {self.update_count} updates"
            ) from exc
        chol_inv = np.linalg.inv(chol)
        self.lambda_inv = chol_inv.T @ chol_inv

    def inverse_error(self) -> float:
        """max |Lambda Lambda^-1 - I|."""
        return float(np.max(np.abs(self.lambda_mat @ self.lambda_inv - np.eye(self.dim))))

    def __repr__(self) -> str:
        return f"CovarianceState(dim={self.dim}, update_count={self.update_count})"


def _check_dim(state: CovarianceState, vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    if vec.shape != (state.dim,):
        raise ValueError(f"expected a vector of shape ({state.dim},), got {vec.shape}")
    return vec


def rank_one_update(state: CovarianceState, phi) -> CovarianceState:
    """Add ``phi phi^T`` to the covariance and update the inverse in O(d^2).

    Every ``refactor_period`` updates the inverse is rebuilt from scratch.
    A zero vector leaves both matrices untouched but still counts as an update,
    so ``update_count`` always equals the number of regression samples.
    """
    phi = _check_dim(state, phi)
    state.update_count += 1
    if phi.any():
        state.lambda_mat += np.outer(phi, phi)
        inv_phi = state.lambda_inv @ phi
        state.lambda_inv -= np.outer(inv_phi, inv_phi) / (1.0 + phi @ inv_phi)
    if state.update_count % state.refactor_period == 0:
        state.refactor()
    return state


def quad_form(state: CovarianceState, phi) -> float:
    """phi^T Lambda^-1 phi, clamped to the interval [0, |phi|^2]."""
    phi = _check_dim(state, phi)
    value = float(phi @ state.lambda_inv @ phi)
    return min(max(value, 0.0), float(phi @ phi))


def solve_apply(state: CovarianceState, rhs) -> np.ndarray:
    """Lambda^-1 rhs."""
    rhs = _check_dim(state, rhs)
    return state.lambda_inv @ rhs


def elliptical_potential_bound(dim: int, num_updates: int) -> float:
    """2 d log(k/d + 1), the cap on the running sum of pre-update quadratic forms."""
    return 2.0 * dim * np.log(num_updates / dim + 1.0)
