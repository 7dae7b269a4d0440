"""Verification suites: deterministic lemma checks and seed-sweep regret checks.

Each suite returns :class:`CheckResult` rows; the CLI prints them as a table
and the acceptance tests assert on them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from .envgen import EnvSpec, Environment
from .harness import DETERMINISTIC_MONITORS, ExperimentConfig, run_experiment

# environments on which the c_beta = 8 runs finish in seconds on one core
LEMMA_SPECS = (
    EnvSpec("deterministic_chain", 2, 4, 2, 1, gap_min=0.3, seed=1),
    EnvSpec("linear_mdp", 1, 20, 5, 4, gap_min=0.05, seed=0),
    EnvSpec("linear_mdp", 1, 50, 5, 8, gap_min=0.05, seed=1),
    EnvSpec("tabular_onehot", 1, 2, 3, 6, gap_min=0.05, seed=2),
)
OPTIMISM_SPECS = (
    EnvSpec("linear_mdp", 1, 20, 5, 4, gap_min=0.05, seed=0),
    EnvSpec("linear_mdp", 1, 50, 5, 8, gap_min=0.05, seed=1),
)
ENVELOPE_SPECS = (
    EnvSpec("linear_mdp", 1, 5, 3, 2, gap_min=0.5, seed=0),
    EnvSpec("linear_mdp", 1, 10, 5, 2, gap_min=0.5, seed=1),
    EnvSpec("tabular_onehot", 1, 1, 2, 2, gap_min=0.5, seed=5),
)


@dataclass
class CheckResult:
    name: str
    env: str
    passed: bool
    measured: str
    threshold: str

    def row(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark:4}  {self.name:32} {self.env:34} {self.measured:>24}  {self.threshold}"


def env_label(env: Environment) -> str:
    return f"{env.kind}(H={env.H},S={env.S},A={env.A},d={env.d},seed={env.seed})"


def _as_env(env) -> Environment:
    if isinstance(env, Environment):
        return env
    return ExperimentConfig(env).load_env()


def lemma_suite(envs: Sequence, seeds: int = 1, episodes: int = 200, c_beta: float = 8.0,
                delta: float = 0.1) -> list:
    """Deterministic monitors and revisit bounds, one row per (check, env)."""
    results = []
    for env in map(_as_env, envs):
        label = env_label(env)
        counts = {}
        for seed in range(seeds):
            log = run_experiment(
                ExperimentConfig(env, episodes=episodes, c_beta=c_beta, delta=delta, seed=seed,
                                 initial_state_mode="random"),
                env,
            )
            for name in DETERMINISTIC_MONITORS:
                counts.setdefault(name, []).append(log.monitors[name]["pass"])
            for name in ("revisit_bound", "per_step_revisit_bound"):
                counts.setdefault(name, []).append(log.bounds[name]["pass"])
        for name, passes in counts.items():
            results.append(CheckResult(name, label, all(passes), f"{sum(passes)}/{len(passes)} runs", "all runs"))
    return results


def optimism_frequency(env: Environment, seeds: int, episodes: int = 500, delta: float = 0.2,
                       c_beta: float = 8.0) -> float:
    hits = 0
    for seed in range(seeds):
        log = run_experiment(
            ExperimentConfig(env, episodes=episodes, c_beta=c_beta, delta=delta, seed=seed,
                             monitors=("optimism",), initial_state_mode="random"),
            env,
        )
        hits += log.monitors["optimism"]["pass"]
    return hits / seeds


def precondition_episodes(d: int, H: int, gap: float, c_beta: float, delta: float, margin: float = 1.25) -> int:
    """Smallest N (times ``margin``) with N >= 4c^2 d^2 H^5 log^2(H T / delta) / gap^2 at T = N H.

    T >= N H always, so the returned N is a lower estimate; runs re-check the
    precondition with their measured T.
    """
    n = 1.0
    for _ in range(200):
        nxt = 4 * c_beta**2 * d**2 * H**5 * math.log(H * n * H / delta) ** 2 / gap**2
        if abs(nxt - n) < 1:
            break
        n = max(nxt, 1.0)
    return int(math.ceil(n * margin))


def envelope_runs(env: Environment, seeds: int, episodes: Optional[int] = None, c_beta: float = 1.0,
                  delta: float = 0.1):
    """Average regret vs the regret envelope over seeds. Returns (eligible, passing, episodes)."""
    if episodes is None:
        episodes = precondition_episodes(env.d, env.H, env.certified_gap, c_beta, delta)
    eligible = passing = 0
    for seed in range(seeds):
        log = run_experiment(
            ExperimentConfig(env, episodes=episodes, c_beta=c_beta, delta=delta, seed=seed,
                             initial_state_mode="random"),
            env,
        )
        report = log.bounds["regret_envelope"]
        if report["precondition_met"]:
            eligible += 1
            passing += report["pass"]
    return eligible, passing, episodes


def sublinearity_ratio(env: Environment, seed: int = 0, short: int = 200, long: int = 2000,
                       c_beta: float = 1.0, delta: float = 0.1) -> tuple:
    """(average regret at ``short``, average regret at ``long``) on one env and seed."""
    out = []
    for n in (short, long):
        log = run_experiment(
            ExperimentConfig(env, episodes=n, c_beta=c_beta, delta=delta, seed=seed,
                             initial_state_mode="random"),
            env,
        )
        out.append(log.average_episode_regret)
    return tuple(out)


def regret_suite(optimism_envs: Sequence, envelope_envs: Sequence, seeds: int = 50,
                 delta: float = 0.2) -> list:
    results = []
    for env in map(_as_env, optimism_envs):
        freq = optimism_frequency(env, seeds, delta=delta)
        need = 1 - delta - 0.10
        results.append(CheckResult("optimism_frequency", env_label(env), freq >= need,
                                   f"{freq:.3f} over {seeds} seeds", f">= {need:.2f}"))
    for env in map(_as_env, envelope_envs):
        label = env_label(env)
        eligible, passing, episodes = envelope_runs(env, seeds)
        frac = passing / eligible if eligible else math.nan
        results.append(CheckResult("regret_envelope", label, eligible > 0 and frac >= 0.95,
                                   f"{passing}/{eligible} at N={episodes}", ">= 0.95 of eligible runs"))
        short, long = sublinearity_ratio(env)
        ok = long <= 0.5 * short * 1.10
        results.append(CheckResult("sublinearity", label, ok,
                                   f"{long:.4g} vs {short:.4g}", "avg(2000) <= 0.55 avg(200)"))
    return results


def format_table(results) -> str:
    lines = [f"{'':4}  {'check':32} {'environment':34} {'measured':>24}  threshold"]
    lines += [r.row() for r in results]
    return "\n".join(lines)


def all_passed(results) -> bool:
    return all(r.passed for r in results) and bool(results)
