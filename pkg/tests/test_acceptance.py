"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` or directly as a script.
"""
from __future__ import annotations

import math
import sys

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, hand_mdp
from linqlsvi.envgen import EnvSpec, GenerationError, generate
from linqlsvi.harness import ExperimentConfig, run_experiment
from linqlsvi.linalg import CovarianceState, rank_one_update
from linqlsvi.mdp import dp_solve
from linqlsvi.verify import (
    ENVELOPE_SPECS,
    OPTIMISM_SPECS,
    envelope_runs,
    env_label,
    optimism_frequency,
    sublinearity_ratio,
)

# 20 environments inside d <= 8, H <= 6, |S| <= 50, |A| <= 5, gap >= 0.05
REVISIT_SPECS = (
    EnvSpec("linear_mdp", 1, 10, 3, 2, 0.05, 0),
    EnvSpec("linear_mdp", 1, 20, 5, 4, 0.05, 0),
    EnvSpec("linear_mdp", 1, 50, 5, 8, 0.05, 1),
    EnvSpec("linear_mdp", 1, 30, 4, 6, 0.05, 2),
    EnvSpec("linear_mdp", 1, 15, 2, 3, 0.05, 3),
    EnvSpec("linear_mdp", 1, 40, 5, 5, 0.05, 4),
    EnvSpec("linear_mdp", 1, 12, 3, 3, 0.05, 7),
    EnvSpec("linear_mdp", 1, 25, 4, 7, 0.05, 6),
    EnvSpec("tabular_onehot", 1, 2, 3, 6, 0.05, 2),
    EnvSpec("tabular_onehot", 1, 1, 5, 5, 0.05, 0),
    EnvSpec("tabular_onehot", 1, 4, 2, 8, 0.05, 1),
    EnvSpec("tabular_onehot", 1, 2, 4, 8, 0.05, 3),
    EnvSpec("tabular_onehot", 1, 3, 2, 6, 0.05, 4),
    EnvSpec("deterministic_chain", 1, 5, 3, 3, 0.05, 0),
    EnvSpec("deterministic_chain", 1, 10, 4, 1, 0.05, 1),
    EnvSpec("deterministic_chain", 1, 50, 5, 5, 0.05, 2),
    EnvSpec("deterministic_chain", 1, 20, 2, 2, 0.05, 3),
    EnvSpec("deterministic_chain", 2, 3, 2, 1, 0.5, 0),
    EnvSpec("deterministic_chain", 2, 4, 2, 1, 0.5, 1),
    EnvSpec("deterministic_chain", 2, 6, 2, 1, 0.5, 2),
)


def record(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d} {title:34} {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture(scope="module")
def revisit_runs():
    """(env, log) for one linq run per environment at c_beta = 8, delta = 0.1, N = 200."""
    runs = []
    for spec in REVISIT_SPECS:
        env = generate(spec)
        config = ExperimentConfig(env, episodes=200, c_beta=8.0, delta=0.1, seed=0, initial_state_mode="random")
        runs.append((env, run_experiment(config, env)))
    return runs


def test_criterion_01_revisit_bound(revisit_runs):
    envs_ok = all(
        env.d <= 8 and env.H <= 6 and env.S <= 50 and env.A <= 5 and env.certified_gap >= 0.05
        for env, _ in revisit_runs
    )
    failures = []
    worst = 0.0
    for env, log in revisit_runs:
        c, delta, H, d, gap = 8.0, 0.1, env.H, env.d, env.certified_gap
        log_kh = math.log(log.K * H / delta)
        inv_gap2 = 0.0 if math.isinf(gap) else 1.0 / gap**2
        total_bound = 4 * c**2 * d**2 * H**5 * log_kh**2 * inv_gap2
        step_bound = 4 * c**2 * d**2 * H**4 * log_kh**2 * inv_gap2
        sizes = log.index_set_sizes
        per_step = [sizes[h + 1] - sizes[h] for h in range(H - 1)]
        ok = log.revisits <= total_bound and all(x <= step_bound for x in per_step)
        ok = ok and log.bounds["revisit_bound"]["pass"] and log.bounds["per_step_revisit_bound"]["pass"]
        if total_bound > 0:
            worst = max(worst, log.revisits / total_bound)
        if not ok:
            failures.append(env_label(env))
    passed = envs_ok and len(revisit_runs) >= 20 and not failures
    record(1, "deterministic revisit bound", passed,
           f"{len(revisit_runs) - len(failures)}/{len(revisit_runs)} runs within bound, "
           f"max (K-N)/bound = {worst:.3g}")
    assert passed, failures


def test_criterion_02_index_sets(revisit_runs):
    bad = []
    for env, log in revisit_runs:
        sizes = log.index_set_sizes
        ok = log.monitors["index_sets"]["pass"] and sizes[0] == log.N and sizes[-1] == log.K
        ok = ok and all(sizes[h] <= sizes[h + 1] for h in range(len(sizes) - 1))
        if not ok:
            bad.append(env_label(env))
    record(2, "index-set nesting and sizes", not bad,
           f"{len(revisit_runs) - len(bad)}/{len(revisit_runs)} runs nested with |I_1| = N, |I_H| = K")
    assert not bad, bad


@pytest.mark.parametrize("spec", OPTIMISM_SPECS, ids=lambda s: f"{s.kind}-S{s.S}-d{s.d}")
def test_criterion_03_optimism_sandwich(spec):
    env = generate(spec)
    seeds, delta = 50, 0.2
    freq = optimism_frequency(env, seeds, episodes=500, delta=delta, c_beta=8.0)
    need = 1 - delta - 0.10
    record(3, "optimism sandwich frequency", freq >= need,
           f"{env_label(env)}: {freq:.2f} over {seeds} seeds (need >= {need:.2f})")
    assert freq >= need


def test_criterion_04_elliptical_potential(revisit_runs):
    bad = [env_label(env) for env, log in revisit_runs if not log.monitors["elliptical_potential"]["pass"]]
    worst = max(log.monitors["elliptical_potential"]["max_ratio_to_bound"] for _, log in revisit_runs)
    record(4, "elliptical potential", not bad,
           f"{len(revisit_runs) - len(bad)}/{len(revisit_runs)} runs, max sum/bound = {worst:.3g}")
    assert not bad, bad


@pytest.mark.parametrize("spec", ENVELOPE_SPECS, ids=lambda s: f"{s.kind}-S{s.S}-A{s.A}")
def test_criterion_05_regret_envelope(spec):
    env = generate(spec)
    assert env.certified_gap >= 0.5 and env.d <= 2 and env.H <= 3
    eligible, passing, episodes = envelope_runs(env, 50, c_beta=1.0, delta=0.1)
    frac = passing / eligible if eligible else 0.0
    short, long = sublinearity_ratio(env, seed=0, short=200, long=2000, c_beta=1.0, delta=0.1)
    sublinear = long <= 0.5 * short * 1.10
    passed = eligible > 0 and frac >= 0.95 and sublinear
    record(5, "regret envelope and sublinearity", passed,
           f"{env_label(env)}: {passing}/{eligible} eligible seeds under envelope at N={episodes}; "
           f"avg regret {short:.4g} at N=200, {long:.4g} at N=2000")
    assert eligible > 0 and frac >= 0.95
    assert sublinear


def test_criterion_06_episode_path_consistency(revisit_runs):
    worst = 0.0
    bad = []
    for env, log in revisit_runs:
        final = log.path_regret[log.path_completes]
        diff = max(float(np.max(np.abs(final - log.episode_regret))),
                   abs(float(final.sum() - log.episode_regret.sum())))
        worst = max(worst, diff)
        if diff > 1e-10 or not log.monitors["episode_path_consistency"]["pass"]:
            bad.append(env_label(env))
    record(6, "episode/path regret consistency", not bad, f"max difference {worst:.3g} (tolerance 1e-10)")
    assert not bad, bad


def test_criterion_07_incremental_inverse():
    worst = 0.0
    for d in (1, 2, 4, 8):
        rng = np.random.default_rng(1000 + d)
        state = CovarianceState(d)
        phis = rng.normal(size=(10_000, d))
        phis /= np.maximum(np.linalg.norm(phis, axis=1, keepdims=True), 1.0)
        for i, phi in enumerate(phis):
            rank_one_update(state, phi)
            if i % 50 == 0 or i == len(phis) - 1:
                worst = max(worst, float(np.max(np.abs(state.lambda_inv - np.linalg.inv(state.lambda_mat)))))
    record(7, "incremental inverse vs direct", worst <= 1e-8,
           f"max-norm error {worst:.3g} over 10000 updates, d in 1,2,4,8")
    assert worst <= 1e-8


def test_criterion_08_realizability():
    rng = np.random.default_rng(8)
    kinds = ("linear_mdp", "tabular_onehot", "deterministic_chain")
    accepted = bad = 0
    attempt = 0
    while accepted < 100:
        kind = kinds[attempt % 3]
        H, S, A = int(rng.integers(1, 5)), int(rng.integers(1, 11)), int(rng.integers(2, 5))
        if kind == "tabular_onehot":
            S = min(S, 3)
            d = S * A
        elif kind == "deterministic_chain":
            d = 1 if rng.random() < 0.5 else A
        else:
            d = min(int(rng.integers(1, 6)), S * A)
        attempt += 1
        try:
            env = generate(EnvSpec(kind, H, S, A, d, 0.02, int(rng.integers(0, 2**31))))
        except GenerationError:
            continue
        accepted += 1
        if env.fit.max_residual > 1e-9 or np.any(env.fit.theta_norms > 2 * env.H * math.sqrt(env.d)):
            bad += 1
    record(8, "realizability of generated envs", bad == 0,
           f"{accepted - bad}/{accepted} accepted environments realizable ({attempt} drawn)")
    assert bad == 0


def test_criterion_09_hand_example():
    dp = dp_solve(hand_mdp())
    checks = {
        "Q*_1(s0,a0)": (dp.q_star[0, 0, 0], 0.3),
        "Q*_1(s0,a1)": (dp.q_star[0, 0, 1], 1.1),
        "V*_1(s0)": (dp.v_star[0, 0], 1.1),
        "gap_1(s0)": (dp.gap_hs[0, 0], 0.8),
        "gap_2(s0)": (dp.gap_hs[1, 0], 0.2),
        "gap_2(s1)": (dp.gap_hs[1, 1], 0.5),
        "gap": (dp.gap_global, 0.2),
    }
    worst = max(abs(float(got) - want) for got, want in checks.values())
    record(9, "hand-example oracle", worst <= 1e-12, f"max abs error {worst:.3g} over {len(checks)} values")
    assert worst <= 1e-12, checks


def test_criterion_10_reproducibility():
    chain = generate(EnvSpec("deterministic_chain", 3, 4, 2, 2, 0.1, 0))
    linear = generate(EnvSpec("linear_mdp", 2, 6, 3, 2, 0.05, 3))
    single = generate(EnvSpec("linear_mdp", 1, 20, 5, 4, 0.05, 0))
    configs = [
        ExperimentConfig(single, episodes=200, seed=4, initial_state_mode="random", monitors=("optimism",)),
        ExperimentConfig(linear, episodes=60, c_beta=1.0, gap_override=1.0, seed=2,
                         initial_state_mode="random", monitors=("optimism", "martingale")),
        ExperimentConfig(chain, episodes=40, c_beta=1.0, gap_override=1.0, seed=9, initial_state_mode="cycle"),
    ] + [ExperimentConfig(linear, agent=a, episodes=80, seed=5, initial_state_mode="random")
         for a in ("baseline_lsvi", "oracle_greedy", "uniform_random")]
    same = 0
    revisits = 0
    for config in configs:
        a, b = run_experiment(config), run_experiment(config)
        revisits += a.revisits
        same += a.summary_json() == b.summary_json() and a.series_csv() == b.series_csv()
    passed = same == len(configs) and revisits > 0
    record(10, "byte-identical reruns", passed, f"{same}/{len(configs)} configs identical on rerun")
    assert passed


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
