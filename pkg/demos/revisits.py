"""How the gap fed to the revisit rule drives the number of state revisits.

A two-step deterministic chain is learned with c_beta = 1.  A small gap input
means a strict threshold, so the learner keeps resuming from step 2 until the
bonus there drops below half the gap.  Each row reports K - N next to the
worst-case revisit bound for that gap input.

    python3 demos/revisits.py
"""
from __future__ import annotations

import math

from linqlsvi.envgen import EnvSpec, generate
from linqlsvi.harness import ExperimentConfig, run_experiment


def main() -> None:
    env = generate(EnvSpec("deterministic_chain", 2, 4, 2, 1, gap_min=0.5, seed=1))
    print(f"chain H={env.H} S={env.S} A={env.A} d={env.d}, certified gap {env.certified_gap:.3f}")
    print(f"{'gap input':>10} {'K-N':>8} {'bound':>12} {'avg regret':>11}")
    for gap in (math.inf, 4.0, 2.0, 1.0, env.certified_gap):
        log = run_experiment(ExperimentConfig(env, episodes=200, c_beta=1.0, gap_override=gap, seed=0,
                                              initial_state_mode="random"))
        bound = log.bounds["revisit_bound"]["bound"]
        print(f"{gap:10.3g} {log.revisits:8d} {bound:12.4g} {log.average_episode_regret:11.4f}")


if __name__ == "__main__":
    main()
