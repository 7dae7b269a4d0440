"""Tabular finite-horizon MDPs, exact dynamic programming and a Q* fitter.

Steps are stored 0-based in arrays (array index ``h`` is step ``h + 1``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np

TIE_TOLERANCE = 1e-9
ROW_SUM_TOLERANCE = 1e-12
NORM_TOLERANCE = 1e-12


class MdpValidationError(ValueError):
    """An MDP, feature map or policy violates its invariants."""


@dataclass(frozen=True)
class FiniteMdp:
    transition: np.ndarray  # (H, S, A, S)
    reward: np.ndarray  # (H, S, A)

    def __post_init__(self):
        transition = np.ascontiguousarray(self.transition, dtype=float)
        reward = np.ascontiguousarray(self.reward, dtype=float)
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "reward", reward)
        if transition.ndim != 4 or transition.shape[1] != transition.shape[3]:
            raise MdpValidationError(f"transition must have shape (H, S, A, S), got {transition.shape}")
        if reward.shape != transition.shape[:3]:
            raise MdpValidationError(
                f"reward shape {reward.shape} does not match transition shape {transition.shape}"
            )
        if min(transition.shape) < 1:
            raise MdpValidationError("H, S and A must all be positive")
        if not np.all(np.isfinite(transition)) or not np.all(np.isfinite(reward)):
            raise MdpValidationError("transition and reward entries must be finite")
        if np.any(transition < 0):
            h, s, a, _ = np.argwhere(transition < 0)[0]
            raise MdpValidationError(f"negative transition probability at step {h + 1}, state {s}, action {a}")
        sums = transition.sum(axis=-1)
        bad = np.abs(sums - 1.0) > ROW_SUM_TOLERANCE
        if np.any(bad):
            h, s, a = np.argwhere(bad)[0]
            raise MdpValidationError(
                f"transition row at step {h + 1}, state {s}, action {a} sums to {sums[h, s, a]!r}"
            )
        if np.any(reward < 0) or np.any(reward > 1):
            h, s, a = np.argwhere((reward < 0) | (reward > 1))[0]
            raise MdpValidationError(f"reward {reward[h, s, a]!r} at step {h + 1}, state {s}, action {a} outside [0, 1]")
        transition.setflags(write=False)
        reward.setflags(write=False)

    @property
    def horizon(self) -> int:
        return self.transition.shape[0]

    @property
    def num_states(self) -> int:
        return self.transition.shape[1]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[2]


@dataclass(frozen=True)
class FeatureMap:
    phi: np.ndarray  # (H, S, A, d)

    def __post_init__(self):
        phi = np.ascontiguousarray(self.phi, dtype=float)
        object.__setattr__(self, "phi", phi)
        if phi.ndim != 4 or phi.shape[-1] < 1:
            raise MdpValidationError(f"features must have shape (H, S, A, d), got {phi.shape}")
        if not np.all(np.isfinite(phi)):
            raise MdpValidationError("feature entries must be finite")
        norms = np.linalg.norm(phi, axis=-1)
        if np.any(norms > 1.0 + NORM_TOLERANCE):
            h, s, a = np.argwhere(norms > 1.0 + NORM_TOLERANCE)[0]
            raise MdpValidationError(
                f"feature norm {norms[h, s, a]!r} > 1 at step {h + 1}, state {s}, action {a}"
            )
        phi.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.phi.shape[-1]

    def check_matches(self, mdp: FiniteMdp) -> None:
        if self.phi.shape[:3] != mdp.reward.shape:
            raise MdpValidationError(
                f"feature map shape {self.phi.shape[:3]} does not match MDP shape {mdp.reward.shape}"
            )


@dataclass(frozen=True)
class DeterministicPolicy:
    action: np.ndarray  # (H, S) action indices

    def __post_init__(self):
        action = np.ascontiguousarray(self.action, dtype=np.int64)
        object.__setattr__(self, "action", action)
        if action.ndim != 2:
            raise MdpValidationError(f"policy must have shape (H, S), got {action.shape}")


@dataclass(frozen=True)
class DpSolution:
    q_star: np.ndarray  # (H, S, A)
    v_star: np.ndarray  # (H, S)
    optimal_mask: np.ndarray  # (H, S, A) bool, membership in the optimal action set
    gap_hs: np.ndarray  # (H, S), +inf where every action is optimal
    gap_global: float
    greedy_policy: np.ndarray  # (H, S)
    tie_tolerance: float = field(default=TIE_TOLERANCE)

    def optimal_actions(self, h: int, s: int) -> frozenset:
        """Optimal action set at 0-based step ``h`` and state ``s``."""
        return frozenset(np.flatnonzero(self.optimal_mask[h, s]).tolist())

    def bellman_residual(self, mdp: FiniteMdp) -> float:
        next_v = np.vstack([self.v_star[1:], np.zeros((1, mdp.num_states))])
        backup = mdp.reward + np.einsum("hsat,ht->hsa", mdp.transition, next_v)
        return float(np.max(np.abs(backup - self.q_star)))


def dp_solve(mdp: FiniteMdp, tie_tolerance: float = TIE_TOLERANCE) -> DpSolution:
    """Backward induction for Q*, V*, optimal action sets and sub-optimality gaps."""
    H, S, A = mdp.reward.shape
    q_star = np.empty((H, S, A))
    v_star = np.empty((H, S))
    next_v = np.zeros(S)
    for h in range(H - 1, -1, -1):
        q_star[h] = mdp.reward[h] + mdp.transition[h] @ next_v
        v_star[h] = q_star[h].max(axis=1)
        next_v = v_star[h]

    deficit = v_star[:, :, None] - q_star
    optimal_mask = deficit <= tie_tolerance
    gap_hs = np.where(optimal_mask, np.inf, deficit).min(axis=2)
    greedy_policy = np.argmax(optimal_mask, axis=2)
    for arr in (q_star, v_star, optimal_mask, gap_hs, greedy_policy):
        arr.setflags(write=False)
    return DpSolution(
        q_star=q_star,
        v_star=v_star,
        optimal_mask=optimal_mask,
        gap_hs=gap_hs,
        gap_global=float(gap_hs.min()),
        greedy_policy=greedy_policy,
        tie_tolerance=tie_tolerance,
    )


def policy_evaluate(mdp: FiniteMdp, policy: Union[DeterministicPolicy, np.ndarray]) -> np.ndarray:
    """Exact V^pi of shape (H, S) by backward induction."""
    action = policy.action if isinstance(policy, DeterministicPolicy) else np.asarray(policy)
    H, S, A = mdp.reward.shape
    if action.shape != (H, S):
        raise MdpValidationError(f"policy shape {action.shape} does not match (H, S) = {(H, S)}")
    if np.any(action < 0) or np.any(action >= A):
        raise MdpValidationError("policy action index out of range")
    states = np.arange(S)
    value = np.empty((H, S))
    next_v = np.zeros(S)
    for h in range(H - 1, -1, -1):
        a = action[h]
        value[h] = mdp.reward[h, states, a] + mdp.transition[h, states, a] @ next_v
        next_v = value[h]
    return value


def uniform_policy_value(mdp: FiniteMdp) -> np.ndarray:
    """V of the policy that picks every action with equal probability."""
    H, S, _ = mdp.reward.shape
    value = np.empty((H, S))
    next_v = np.zeros(S)
    for h in range(H - 1, -1, -1):
        value[h] = (mdp.reward[h] + mdp.transition[h] @ next_v).mean(axis=1)
        next_v = value[h]
    return value


class LinearFit(NamedTuple):
    theta: np.ndarray  # (H, d)
    max_residual: float
    theta_norms: np.ndarray  # (H,)
    rank_deficient: np.ndarray  # (H,) bool; minimum-norm solution used where True


def fit_linear_q(mdp: FiniteMdp, features: FeatureMap, dp: DpSolution) -> LinearFit:
    """Per-step least squares of Q* on the features over every (s, a)."""
    features.check_matches(mdp)
    H, S, A = mdp.reward.shape
    d = features.dim
    theta = np.zeros((H, d))
    deficient = np.zeros(H, dtype=bool)
    max_residual = 0.0
    for h in range(H):
        design = features.phi[h].reshape(S * A, d)
        target = dp.q_star[h].reshape(S * A)
        theta[h], _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
        deficient[h] = rank < d
        max_residual = max(max_residual, float(np.max(np.abs(design @ theta[h] - target))))
    return LinearFit(theta, max_residual, np.linalg.norm(theta, axis=1), deficient)
