"""LinQ-LSVI-UCB with state revisiting, and the LSVI-UCB baseline.

Public methods take 1-based step numbers ``h`` in ``[1, H]`` (``H + 1`` is the
virtual terminal step with zero features, zero parameter and zero bonus);
arrays are indexed from 0.

Each step keeps a ridge regression whose design matrix only grows, so the
regression state is a :class:`~linqlsvi.linalg.CovarianceState` plus two
running sums.  Q estimates, bonuses and the greedy policy are cached as
(H, S, A) tables and refreshed only for steps that were just updated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .linalg import DEFAULT_REFACTOR_PERIOD, CovarianceState, quad_form, rank_one_update, solve_apply


def compute_beta(d: int, H: int, k_budget: float, delta: float, c_beta: float) -> float:
    """c_beta * sqrt(d H^4 log(K H / delta))."""
    if d < 1 or H < 1 or k_budget <= 0 or c_beta <= 0:
        raise ValueError("d, H, k_budget and c_beta must be positive")
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    ratio = k_budget * H / delta
    if ratio <= 1:
        raise ValueError(f"log argument K*H/delta = {ratio} must exceed 1")
    return c_beta * math.sqrt(d * H**4 * math.log(ratio))


def revisit_bound(K: float, d: int, H: int, delta: float, c_beta: float, gap: float) -> float:
    """4 c^2 d^2 H^5 log^2(K H / delta) / gap^2, the cap on K - N."""
    if math.isinf(gap):
        return 0.0
    return 4 * c_beta**2 * d**2 * H**5 * math.log(K * H / delta) ** 2 / gap**2


def default_k_budget(n_episodes: int, d: int, H: int, delta: float, c_beta: float, gap: float) -> int:
    """Path budget used to size beta before the run: N * (1 + ceil(revisit bound at K = N H))."""
    return n_episodes * (1 + math.ceil(revisit_bound(n_episodes * H, d, H, delta, c_beta, gap)))


class StepRegressor:
    """Ridge regression state for one step."""

    __slots__ = ("covariance", "reward_sum", "cross_sum", "theta", "index_set", "potential_sum")

    def __init__(self, d: int, refactor_period: int = DEFAULT_REFACTOR_PERIOD):
        self.covariance = CovarianceState(d, refactor_period)
        self.reward_sum = np.zeros(d)
        self.cross_sum = np.zeros((d, d))
        self.theta = np.zeros(d)
        self.index_set: list = []
        # running sum of pre-update quadratic forms (elliptical potential)
        self.potential_sum = 0.0

    def regression_residual(self, theta_next: np.ndarray) -> float:
        lhs = self.covariance.lambda_mat @ self.theta
        rhs = self.reward_sum + self.cross_sum @ theta_next
        return float(np.max(np.abs(lhs - rhs)))


@dataclass
class PathBuffer:
    index: int  # path counter k, from 1
    start_step: int  # 1-based step the path was sampled from
    states: np.ndarray  # (H + 1,) s_1 .. s_{H+1}; s_{H+1} = -1 (terminal)
    actions: np.ndarray  # (H,)
    rewards: np.ndarray  # (H,)
    policy_version: int  # counter of the greedy policy the path was sampled with
    policy: np.ndarray  # (H, S) that policy, read-only

    @property
    def num_samples(self) -> int:
        return len(self.actions) - self.start_step + 1


class _TransitionSampler:
    """Inverse-CDF sampling of next states from precomputed row CDFs."""

    def __init__(self, transition: np.ndarray):
        self.cdf = np.cumsum(transition, axis=-1)
        positive = transition > 0
        S = transition.shape[-1]
        self.last_support = S - 1 - np.argmax(positive[..., ::-1], axis=-1)

    def __call__(self, h: int, s: int, a: int, u: float) -> int:
        nxt = int(np.searchsorted(self.cdf[h, s, a], u, side="right"))
        return min(nxt, int(self.last_support[h, s, a]))


class _GreedyTables:
    """Cached bonus, clipped Q estimate and greedy policy for every (h, s, a)."""

    def __init__(self, phi: np.ndarray, beta: float):
        H, S, A, d = phi.shape
        self.H = H
        self.beta = beta
        self.flat_phi = phi.reshape(H, S * A, d)
        self.bonus = np.empty((H, S, A))
        self.q = np.empty((H, S, A))
        self.policy = np.zeros((H, S), dtype=np.int64)
        self.version = 0
        self._frozen = (-1, None)

    def refresh(self, h: int, lambda_inv: np.ndarray, theta: np.ndarray) -> None:
        """Recompute row ``h`` (0-based)."""
        rows = self.flat_phi[h]
        quad = np.einsum("nd,de,ne->n", rows, lambda_inv, rows)
        bonus = self.beta * np.sqrt(np.maximum(quad, 0.0))
        shape = self.bonus.shape[1:]
        self.bonus[h] = bonus.reshape(shape)
        self.q[h] = np.minimum(rows @ theta + bonus, self.H).reshape(shape)
        greedy = np.argmax(self.q[h], axis=1)
        if not np.array_equal(greedy, self.policy[h]):
            self.policy[h] = greedy
            self.version += 1

    def snapshot(self):
        """(version, read-only copy) of the current greedy policy."""
        if self._frozen[0] != self.version:
            frozen = self.policy.copy()
            frozen.setflags(write=False)
            self._frozen = (self.version, frozen)
        return self._frozen


class LinQAgent:
    """LinQ-LSVI-UCB state machine.

    ``gap_input`` sets the revisit threshold ``gap_input / 2``; pass
    ``math.inf`` to disable revisiting altogether.
    """

    def __init__(self, phi: np.ndarray, beta: float, gap_input: float,
                 refactor_period: int = DEFAULT_REFACTOR_PERIOD):
        phi = np.asarray(phi, dtype=float)
        if phi.ndim != 4:
            raise ValueError(f"features must have shape (H, S, A, d), got {phi.shape}")
        if not beta >= 0:
            raise ValueError("beta must be non-negative")
        if not gap_input > 0:
            raise ValueError("gap_input must be positive")
        self.phi = phi
        self.H, self.S, self.A, self.d = phi.shape
        self.beta = float(beta)
        self.gap_input = float(gap_input)
        self.threshold = self.gap_input / 2
        self.regressors = [StepRegressor(self.d, refactor_period) for _ in range(self.H)]
        self.tables = _GreedyTables(phi, self.beta)
        for h in range(self.H):
            self.tables.refresh(h, self.regressors[h].covariance.lambda_inv, self.regressors[h].theta)
        self._bonus_prev = self.tables.bonus.copy()
        self.resume_step = 1
        self.n_episodes = 0
        self.k_paths = 0
        self.last_path: Optional[PathBuffer] = None
        self.last_updated_steps: range = range(0)
        self.last_prev_quads = np.zeros(self.H)
        self.episode_policies: list = []  # pi^(n): policy of each episode's final path
        self.episode_initial_states: list = []

    # ------------------------------------------------------------- estimates

    def _phi(self, h: int, s: int, a: int) -> np.ndarray:
        if h == self.H + 1:
            return np.zeros(self.d)
        return self.phi[h - 1, s, a]

    def bonus(self, h: int, s: int, a: int, which: str = "current") -> float:
        """beta * ||phi_h(s, a)|| in the inverse-covariance norm.

        ``which="previous"`` reads the covariance as it was at the end of the
        previous path (the value the revisit test compares to the threshold).
        """
        if h == self.H + 1:
            return 0.0
        if not 1 <= h <= self.H:
            raise ValueError(f"step {h} outside [1, {self.H + 1}]")
        if which == "current":
            return self.beta * math.sqrt(quad_form(self.regressors[h - 1].covariance, self.phi[h - 1, s, a]))
        if which == "previous":
            return float(self._bonus_prev[h - 1, s, a])
        raise ValueError(f"which must be 'current' or 'previous', got {which!r}")

    def q_estimate(self, h: int, s: int, a: int) -> float:
        theta = self.regressors[h - 1].theta
        return min(float(self.phi[h - 1, s, a] @ theta) + self.bonus(h, s, a), float(self.H))

    def greedy_action(self, h: int, s: int) -> int:
        return int(self.tables.policy[h - 1, s])

    def greedy_policy(self) -> np.ndarray:
        return self.tables.policy.copy()

    @property
    def index_sets(self) -> list:
        return [reg.index_set for reg in self.regressors]

    # ------------------------------------------------------------- one path

    def sample_path(self, env, rng, initial_state: Optional[int] = None,
                    sampler: Optional[_TransitionSampler] = None) -> PathBuffer:
        """Sample steps ``resume_step .. H`` greedily, copying the earlier prefix."""
        H = self.H
        start = self.resume_step
        if sampler is None:
            sampler = _TransitionSampler(env.mdp.transition)
        states = np.full(H + 1, -1, dtype=np.int64)
        actions = np.zeros(H, dtype=np.int64)
        rewards = np.zeros(H)
        if start == 1:
            if initial_state is None:
                raise ValueError("a new episode needs an initial state")
            states[0] = initial_state
        else:
            prev = self.last_path
            states[:start] = prev.states[:start]
            actions[: start - 1] = prev.actions[: start - 1]
            rewards[: start - 1] = prev.rewards[: start - 1]
        self.k_paths += 1
        version, policy = self.tables.snapshot()
        reward = env.mdp.reward
        s = int(states[start - 1])
        for j in range(start - 1, H):
            a = int(policy[j, s])
            actions[j] = a
            rewards[j] = reward[j, s, a]
            if j < H - 1:
                s = sampler(j, s, a, rng.random())
                states[j + 1] = s
        path = PathBuffer(self.k_paths, start, states, actions, rewards, version, policy)
        self.last_path = path
        return path

    def backward_pass(self, path: PathBuffer) -> int:
        """Update steps H, H-1, ... while the previous-path bonus one step ahead is below threshold.

        Returns the step at which the pass stopped (0 when it ran through
        step 1, which completes the episode).
        """
        H = self.H
        k = path.index
        np.copyto(self._bonus_prev, self.tables.bonus)
        prev_quads = np.zeros(H)
        theta_next = np.zeros(self.d)
        h = H
        while h > 0:
            # b_{h+1}^{k-1} at this path's sample, cached just before step h+1 was updated
            if h < H and not self.beta * math.sqrt(prev_quads[h]) < self.threshold:
                break
            reg = self.regressors[h - 1]
            s, a = path.states[h - 1], path.actions[h - 1]
            phi = self.phi[h - 1, s, a]
            quad = quad_form(reg.covariance, phi)
            prev_quads[h - 1] = quad
            reg.potential_sum += quad
            reg.index_set.append(k)
            rank_one_update(reg.covariance, phi)
            reg.reward_sum += phi * path.rewards[h - 1]
            if h < H:
                reg.cross_sum += np.outer(phi, self.phi[h, path.states[h], path.actions[h]])
            reg.theta = solve_apply(reg.covariance, reg.reward_sum + reg.cross_sum @ theta_next)
            self.tables.refresh(h - 1, reg.covariance.lambda_inv, reg.theta)
            theta_next = reg.theta
            h -= 1
        self.last_updated_steps = range(h + 1, H + 1)
        self.last_prev_quads = prev_quads
        self.resume_step = h + 1
        if h == 0:
            self.n_episodes += 1
            self.episode_policies.append(path.policy)
            self.episode_initial_states.append(int(path.states[0]))
        return h

    def run(self, env, n_episodes: int, rng, initial_state: Callable[[int], int] = lambda n: 0,
            observer: Optional[Callable] = None):
        """Alternate sampling and backward passes until ``n_episodes`` episodes finish.

        ``initial_state(n)`` supplies the start state of episode ``n`` (0-based)
        and ``observer(agent, path, stop_step)`` is called after every pass.
        Returns the :class:`~linqlsvi.harness.RegretLog` when ``observer`` is
        omitted, otherwise ``None``.
        """
        recorder = None
        if observer is None:
            from .harness import LinQRecorder

            recorder = observer = LinQRecorder(env, self)
        sampler = _TransitionSampler(env.mdp.transition)
        while self.n_episodes < n_episodes:
            s1 = initial_state(self.n_episodes) if self.resume_step == 1 else None
            path = self.sample_path(env, rng, s1, sampler)
            stop = self.backward_pass(path)
            observer(self, path, stop)
        if recorder is not None:
            return recorder.finish()
        return None


class BaselineAgent:
    """LSVI-UCB: full-trajectory episodes, every step refit on all data each episode.

    Unlike :class:`LinQAgent` the regression target carries the bonus of the
    next step through ``max_a Q_{h+1}``.
    """

    def __init__(self, phi: np.ndarray, beta: float, capacity: int = 1024):
        phi = np.asarray(phi, dtype=float)
        self.phi = phi
        self.H, self.S, self.A, self.d = phi.shape
        self.beta = float(beta)
        self.covariances = [CovarianceState(self.d) for _ in range(self.H)]
        self.theta = np.zeros((self.H, self.d))
        self.tables = _GreedyTables(phi, self.beta)
        for h in range(self.H):
            self.tables.refresh(h, self.covariances[h].lambda_inv, self.theta[h])
        self.n_episodes = 0
        self._capacity = capacity
        self._feat = np.zeros((self.H, capacity, self.d))
        self._reward = np.zeros((self.H, capacity))
        self._next_state = np.zeros((self.H, capacity), dtype=np.int64)

    def _grow(self) -> None:
        self._capacity *= 2
        for name in ("_feat", "_reward", "_next_state"):
            old = getattr(self, name)
            new = np.zeros((old.shape[0], self._capacity) + old.shape[2:], dtype=old.dtype)
            new[:, : old.shape[1]] = old
            setattr(self, name, new)

    def episode(self, env, rng, initial_state: int = 0,
                sampler: Optional[_TransitionSampler] = None) -> PathBuffer:
        """Play one greedy episode, then refit every step backwards."""
        H = self.H
        if sampler is None:
            sampler = _TransitionSampler(env.mdp.transition)
        version, policy = self.tables.snapshot()
        states = np.full(H + 1, -1, dtype=np.int64)
        actions = np.zeros(H, dtype=np.int64)
        rewards = np.zeros(H)
        s = states[0] = initial_state
        for j in range(H):
            a = int(policy[j, s])
            actions[j] = a
            rewards[j] = env.mdp.reward[j, s, a]
            if j < H - 1:
                s = sampler(j, s, a, rng.random())
                states[j + 1] = s

        n = self.n_episodes
        if n == self._capacity:
            self._grow()
        for j in range(H):
            self._feat[j, n] = self.phi[j, states[j], actions[j]]
            self._reward[j, n] = rewards[j]
            self._next_state[j, n] = states[j + 1]
        self.n_episodes = n + 1
        count = n + 1

        for j in range(H - 1, -1, -1):
            rank_one_update(self.covariances[j], self._feat[j, n])
            targets = self._reward[j, :count].copy()
            if j < H - 1:
                targets += self.tables.q[j + 1].max(axis=1)[self._next_state[j, :count]]
            rhs = self._feat[j, :count].T @ targets
            self.theta[j] = solve_apply(self.covariances[j], rhs)
            self.tables.refresh(j, self.covariances[j].lambda_inv, self.theta[j])
        return PathBuffer(count, 1, states, actions, rewards, version, policy)
