from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import single_action_env
from linqlsvi.agent import BaselineAgent, LinQAgent, compute_beta, default_k_budget, revisit_bound
from linqlsvi.envgen import EnvSpec, generate, make_environment, onehot_features
from linqlsvi.mdp import FiniteMdp
from linqlsvi.rng import Xoshiro256


class Trace:
    def __init__(self):
        self.stops = []
        self.paths = []

    def __call__(self, agent, path, stop):
        self.stops.append(stop)
        self.paths.append(path)


# ----------------------------------------------------------------- beta


def test_beta_unit_log():
    assert compute_beta(1, 1, math.e * 0.5, 0.5, 1.0) == pytest.approx(1.0, abs=1e-15)


def test_beta_reference_value():
    # 8 sqrt(2 * 81 * ln 300), evaluated at 30 digits
    assert compute_beta(2, 3, 10, 0.1, 8) == pytest.approx(243.18062566174035, rel=1e-14)


def test_beta_h4_scaling_with_pinned_log():
    # K H / delta held at 50 for both horizons
    b1 = compute_beta(3, 1, 5.0, 0.1, 8)
    b2 = compute_beta(3, 2, 2.5, 0.1, 8)
    assert b2 / b1 == pytest.approx(4.0, rel=1e-14)


@pytest.mark.parametrize("args", [(1, 1, 0.05, 0.1, 8), (1, 1, 10, 1.0, 8), (0, 1, 10, 0.1, 8), (1, 1, 10, 0.1, 0)])
def test_beta_errors(args):
    with pytest.raises(ValueError):
        compute_beta(*args)


def test_default_k_budget_formula():
    R = revisit_bound(100 * 3, 2, 3, 0.1, 8, 0.25)
    assert default_k_budget(100, 2, 3, 0.1, 8, 0.25) == 100 * (1 + math.ceil(R))
    assert default_k_budget(100, 2, 3, 0.1, 8, math.inf) == 100


# ----------------------------------------------------------------- estimates


def scalar_agent(H=2, beta=1.0, gap=1.0):
    return LinQAgent(np.ones((H, 1, 1, 1)), beta, gap)


def test_bonus_examples():
    agent = scalar_agent(beta=3.0)
    assert agent.bonus(1, 0, 0) == 3.0
    assert agent.bonus(3, 0, 0) == 0.0  # virtual terminal step
    zero = LinQAgent(np.zeros((1, 1, 1, 2)), 3.0, 1.0)
    assert zero.bonus(1, 0, 0) == 0.0
    path = agent.sample_path(single_action_env(2), Xoshiro256(0), 0)
    agent.backward_pass(path)
    assert agent.bonus(2, 0, 0) == pytest.approx(3.0 * math.sqrt(0.5), rel=1e-15)
    assert agent.bonus(2, 0, 0, "previous") == 3.0
    with pytest.raises(ValueError):
        agent.bonus(0, 0, 0)
    with pytest.raises(ValueError):
        agent.bonus(1, 0, 0, "later")


def test_q_estimate_examples():
    assert scalar_agent(H=2, beta=5.0).q_estimate(1, 0, 0) == 2.0
    assert scalar_agent(H=2, beta=0.0).q_estimate(1, 0, 0) == 0.0
    agent = scalar_agent(H=2, beta=0.1)
    agent.regressors[0].theta = np.array([0.3])
    assert agent.q_estimate(1, 0, 0) == pytest.approx(0.4, abs=1e-15)


def test_greedy_ties_and_single_action():
    agent = LinQAgent(onehot_features(2, 2, 3).phi, 1.0, 0.5)
    assert agent.greedy_action(1, 0) == 0
    assert scalar_agent().greedy_action(1, 0) == 0


def test_greedy_after_learning_hand_example(hand_env):
    agent = LinQAgent(hand_env.features.phi, 0.5, hand_env.certified_gap)
    agent.run(hand_env, 300, Xoshiro256(0), observer=lambda *a: None)
    assert agent.greedy_action(1, 0) == 1


def test_tables_match_direct_formula():
    env = generate(EnvSpec("linear_mdp", 3, 6, 3, 3, gap_min=0.05, seed=4))
    agent = LinQAgent(env.features.phi, 0.7, env.certified_gap)
    agent.run(env, 40, Xoshiro256(5), initial_state=lambda n: n % env.S, observer=lambda *a: None)
    for h in range(1, env.H + 1):
        for s in range(env.S):
            q = [agent.q_estimate(h, s, a) for a in range(env.A)]
            assert agent.tables.q[h - 1, s] == pytest.approx(q, abs=1e-12)
            assert agent.greedy_action(h, s) == int(np.argmax(agent.tables.q[h - 1, s]))


# ----------------------------------------------------------------- sampling


def test_chain_paths_follow_actions():
    env = generate(EnvSpec("deterministic_chain", 4, 5, 3, 3, gap_min=0.1, seed=0))
    agent = LinQAgent(env.features.phi, 2.0, env.certified_gap)
    rng = Xoshiro256(0)
    for _ in range(20):
        path = agent.sample_path(env, rng, 2)
        for h in range(env.H - 1):
            nxt = np.flatnonzero(env.mdp.transition[h, path.states[h], path.actions[h]])
            assert path.states[h + 1] == nxt[0]
        assert path.states[env.H] == -1
        agent.backward_pass(path)


def test_resume_copies_prefix():
    env = generate(EnvSpec("tabular_onehot", 4, 3, 2, 6, gap_min=0.01, seed=1))
    agent = LinQAgent(env.features.phi, 1.0, env.certified_gap)
    rng = Xoshiro256(3)
    first = agent.sample_path(env, rng, 0)
    assert first.start_step == 1
    agent.resume_step = 3
    second = agent.sample_path(env, rng, None)
    assert second.start_step == 3
    assert np.array_equal(second.states[:3], first.states[:3])
    assert np.array_equal(second.actions[:2], first.actions[:2])
    assert second.actions[2] == agent.greedy_action(3, second.states[2])
    assert second.num_samples == 2


def test_first_pass_stops_below_last_step():
    env = generate(EnvSpec("linear_mdp", 3, 8, 3, 3, gap_min=0.05, seed=0))
    beta = compute_beta(env.d, env.H, 1000, 0.1, 8)
    agent = LinQAgent(env.features.phi, beta, env.certified_gap)
    path = agent.sample_path(env, Xoshiro256(0), 0)
    stop = agent.backward_pass(path)
    assert stop == env.H - 1
    assert [len(s) for s in agent.index_sets] == [0, 0, 1]
    assert agent.resume_step == env.H


def test_infinite_gap_means_no_revisits():
    env = generate(EnvSpec("linear_mdp", 3, 8, 3, 3, gap_min=0.05, seed=0))
    agent = LinQAgent(env.features.phi, 50.0, math.inf)
    trace = Trace()
    agent.run(env, 25, Xoshiro256(0), observer=trace)
    assert agent.k_paths == agent.n_episodes == 25
    assert set(trace.stops) == {0}


def test_index_set_scenario():
    env = single_action_env(H=3)
    agent = LinQAgent(env.features.phi, 1.0, 1.0)
    rng = Xoshiro256(0)
    stops = []
    for threshold in (0.0, 0.0, 0.9, math.inf):
        agent.threshold = threshold
        path = agent.sample_path(env, rng, 0 if agent.resume_step == 1 else None)
        stops.append(agent.backward_pass(path))
    assert stops == [2, 2, 1, 0]
    assert agent.index_sets == [[4], [3, 4], [1, 2, 3, 4]]
    assert agent.n_episodes == 1 and agent.k_paths == 4


def test_single_episode_counts_failures():
    env = single_action_env(H=3)
    agent = LinQAgent(env.features.phi, 1.0, 1.0)
    trace = Trace()
    agent.run(env, 1, Xoshiro256(0), observer=trace)
    assert agent.n_episodes == 1
    assert agent.k_paths == 1 + sum(s > 0 for s in trace.stops)
    assert trace.stops[-1] == 0


def test_run_zero_episodes_gives_empty_log():
    env = single_action_env(H=2)
    log = LinQAgent(env.features.phi, 1.0, 1.0).run(env, 0, Xoshiro256(0))
    assert log.N == 0 and log.K == 0 and log.T == 0


def test_run_is_deterministic():
    env = generate(EnvSpec("tabular_onehot", 2, 2, 2, 4, gap_min=0.05, seed=3))
    logs = [LinQAgent(env.features.phi, 0.8, env.certified_gap).run(env, 60, Xoshiro256(9)) for _ in range(2)]
    assert logs[0].summary_json() == logs[1].summary_json()
    assert logs[0].series_csv() == logs[1].series_csv()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.05, 1.5), st.integers(1, 4))
def test_agent_invariants(seed, beta, H):
    env = generate(EnvSpec("linear_mdp", H, 5, 3, 2, gap_min=0.02, seed=seed))
    # a generous gap input keeps the number of revisits small
    agent = LinQAgent(env.features.phi, beta, 1.0)
    rng = Xoshiro256(seed)
    prev_bonus = agent.tables.bonus.copy()
    while agent.n_episodes < 15:
        path = agent.sample_path(env, rng, seed % env.S if agent.resume_step == 1 else None)
        stop = agent.backward_pass(path)
        sets = agent.index_sets
        for h in range(H - 1):
            assert set(sets[h]) <= set(sets[h + 1])
        theta_next = np.zeros(agent.d)
        for h in range(H, 0, -1):
            reg = agent.regressors[h - 1]
            assert len(reg.index_set) == reg.covariance.update_count
            if h > stop:
                assert reg.regression_residual(theta_next) <= 1e-8
            theta_next = reg.theta
        assert np.all(agent.tables.bonus <= prev_bonus + 1e-12)
        assert np.all(agent.tables.q <= H)
        prev_bonus = agent.tables.bonus.copy()
    assert len(agent.index_sets[0]) == agent.n_episodes
    assert len(agent.index_sets[-1]) == agent.k_paths


# ----------------------------------------------------------------- baseline


def test_baseline_onehot_is_tabular():
    env = generate(EnvSpec("tabular_onehot", 2, 2, 2, 4, gap_min=0.01, seed=6))
    beta = 0.7
    agent = BaselineAgent(env.features.phi, beta, capacity=4)
    rng = Xoshiro256(1)
    episodes = [agent.episode(env, rng, n % 2) for n in range(30)]
    H, S, A = 2, 2, 2
    # independent tabular recomputation of the final regression
    counts = np.zeros((H, S, A))
    for p in episodes:
        for h in range(H):
            counts[h, p.states[h], p.actions[h]] += 1
    q_next = np.zeros((S, A))
    for h in range(H - 1, -1, -1):
        sums = np.zeros((S, A))
        for p in episodes:
            s, a = p.states[h], p.actions[h]
            target = p.rewards[h] + (q_next[p.states[h + 1]].max() if h < H - 1 else 0.0)
            sums[s, a] += target
        theta = sums / (counts[h] + 1)
        bonus = beta / np.sqrt(counts[h] + 1)
        np.testing.assert_allclose(agent.tables.bonus[h], bonus, atol=1e-12)
        np.testing.assert_allclose(agent.tables.q[h], np.minimum(theta + bonus, H), atol=1e-12)
        q_next = agent.tables.q[h]


def test_baseline_zero_beta_bellman_targets(hand_env):
    agent = BaselineAgent(hand_env.features.phi, 0.0)
    path = agent.episode(hand_env, Xoshiro256(0), 0)
    # one sample per step, one-hot features: theta entry = target / 2
    s2, a2 = path.states[1], path.actions[1]
    q2 = hand_env.mdp.reward[1, s2, a2] / 2
    assert agent.tables.q[1, s2, a2] == pytest.approx(q2)
    s1, a1 = path.states[0], path.actions[0]
    target = hand_env.mdp.reward[0, s1, a1] + agent.tables.q[1, s2].max()
    assert agent.tables.q[0, s1, a1] == pytest.approx(target / 2)


def test_baseline_determinism_and_growth():
    env = generate(EnvSpec("linear_mdp", 3, 6, 3, 3, gap_min=0.05, seed=2))
    runs = []
    for _ in range(2):
        agent = BaselineAgent(env.features.phi, 1.0, capacity=1)
        rng = Xoshiro256(4)
        runs.append([agent.episode(env, rng, 0).states.tolist() for _ in range(20)])
        for cov in agent.covariances:
            assert np.linalg.eigvalsh(cov.lambda_mat).min() >= 1 - 1e-12
    assert runs[0] == runs[1]
