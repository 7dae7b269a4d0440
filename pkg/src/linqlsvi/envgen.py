"""Benchmark environments with linearly realizable Q* and a certified gap.

Three families are available:

``linear_mdp``
    Features are convex combinations over ``d`` anchors and every transition
    row is ``phi^T mu`` for probability vectors ``mu``; rewards are
    ``<phi, w>``.  Q* is then linear in the features by construction.
``tabular_onehot``
    Indicator features over (s, a), arbitrary random dynamics.
``deterministic_chain``
    A chain where the best action steps right and every other action resets
    one state left; rewards are a per-step permutation of ``a / |A|``.

Every draw is solved exactly and redrawn until its gap reaches ``gap_min``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .mdp import (
    DpSolution,
    FeatureMap,
    FiniteMdp,
    LinearFit,
    MdpValidationError,
    dp_solve,
    fit_linear_q,
)

KINDS = ("linear_mdp", "tabular_onehot", "deterministic_chain")
REALIZABILITY_TOLERANCE = 1e-9


class GenerationError(RuntimeError):
    """Rejection sampling ran out of attempts."""

    def __init__(self, message: str, best_gap: float):
        super().__init__(message)
        self.best_gap = best_gap


class EnvFileError(ValueError):
    """Malformed or invalid environment file."""


@dataclass(frozen=True)
class EnvSpec:
    kind: str
    H: int
    S: int
    A: int
    d: int
    gap_min: float = 0.05
    seed: int = 0
    max_rejections: int = 500

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}; expected one of {KINDS}")
        for name in ("H", "S", "A", "d", "max_rejections"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not self.gap_min > 0:
            raise ValueError("gap_min must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        if self.kind == "linear_mdp" and self.d > self.S * self.A:
            raise ValueError("linear_mdp requires d <= S * A")
        if self.kind == "tabular_onehot" and self.d != self.S * self.A:
            raise ValueError("tabular_onehot requires d == S * A")
        if self.kind == "deterministic_chain" and self.d not in (1, self.A):
            raise ValueError("deterministic_chain supports d == 1 (value-scaled) or d == A (action indicators)")


@dataclass(frozen=True)
class Environment:
    mdp: FiniteMdp
    features: FeatureMap
    dp: DpSolution
    fit: LinearFit
    certified_gap: float
    kind: str = "custom"
    seed: int = 0

    @property
    def H(self) -> int:
        return self.mdp.horizon

    @property
    def S(self) -> int:
        return self.mdp.num_states

    @property
    def A(self) -> int:
        return self.mdp.num_actions

    @property
    def d(self) -> int:
        return self.features.dim

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "H": self.H,
            "S": self.S,
            "A": self.A,
            "d": self.d,
            "seed": self.seed,
            "certified_gap": self.certified_gap,
            "fit_residual": self.fit.max_residual,
            "theta_norms": self.fit.theta_norms.tolist(),
            "theta_norm_bound": 2 * self.H * math.sqrt(self.d),
        }


def check_environment(mdp: FiniteMdp, features: FeatureMap, dp: DpSolution, fit: LinearFit) -> list:
    """Return the list of violated environment invariants (empty when valid)."""
    problems = []
    if fit.max_residual > REALIZABILITY_TOLERANCE:
        problems.append(f"Q* not linearly realizable: residual {fit.max_residual:.3e}")
    bound = 2 * mdp.horizon * math.sqrt(features.dim)
    if np.any(fit.theta_norms > bound):
        problems.append(f"fitted parameter norm {fit.theta_norms.max():.4g} exceeds 2H*sqrt(d) = {bound:.4g}")
    if not dp.gap_global > 0:
        problems.append("sub-optimality gap is not positive")
    return problems


def make_environment(mdp: FiniteMdp, features: Optional[FeatureMap] = None, kind: str = "custom", seed: int = 0) -> Environment:
    """Solve and certify a given MDP; one-hot features are used when none are given."""
    if features is None:
        features = onehot_features(mdp.horizon, mdp.num_states, mdp.num_actions)
    features.check_matches(mdp)
    dp = dp_solve(mdp)
    fit = fit_linear_q(mdp, features, dp)
    problems = check_environment(mdp, features, dp, fit)
    if problems:
        raise MdpValidationError("; ".join(problems))
    return Environment(mdp, features, dp, fit, dp.gap_global, kind, seed)


def onehot_features(H: int, S: int, A: int) -> FeatureMap:
    phi = np.zeros((H, S, A, S * A))
    idx = np.arange(S * A)
    phi.reshape(H, S * A, S * A)[:, idx, idx] = 1.0
    return FeatureMap(phi)


MIXTURE_TRIES = 20


def _draw_linear_mdp(spec: EnvSpec, rng: np.random.Generator):
    H, S, A, d = spec.H, spec.S, spec.A, spec.d
    phi = np.empty((H, S, A, d))
    transition = np.empty((H, S, A, S))
    reward = np.empty((H, S, A))
    next_v = np.zeros(S)
    # drawn backwards so the step's linear Q* parameter is known while features are picked
    for h in range(H - 1, -1, -1):
        mu = rng.dirichlet(np.full(S, 3.0), size=d)
        w = (rng.permutation(d) + rng.uniform(0.25, 0.75, size=d)) / d
        theta = w + mu @ next_v
        palette = list(np.eye(d))
        values = list(theta)
        for _ in range(max(1, d // 2)):
            for _ in range(MIXTURE_TRIES):
                mix = rng.dirichlet(np.full(d, 0.5))
                if np.min(np.abs(np.asarray(values) - mix @ theta)) >= spec.gap_min:
                    palette.append(mix)
                    values.append(mix @ theta)
                    break
        palette = np.asarray(palette)
        choice = rng.integers(len(palette), size=S * A)
        anchors = rng.choice(S * A, size=d, replace=False)
        choice[anchors] = np.arange(d)
        step_phi = palette[choice]
        rows = step_phi @ mu
        rows /= rows.sum(axis=1, keepdims=True)
        phi[h] = step_phi.reshape(S, A, d)
        transition[h] = rows.reshape(S, A, S)
        reward[h] = np.clip(step_phi @ w, 0.0, 1.0).reshape(S, A)
        next_v = (reward[h] + transition[h] @ next_v).max(axis=1)
    return FiniteMdp(transition, reward), FeatureMap(phi)


def _draw_tabular(spec: EnvSpec, rng: np.random.Generator):
    H, S, A = spec.H, spec.S, spec.A
    transition = rng.dirichlet(np.ones(S), size=(H, S, A))
    transition /= transition.sum(axis=-1, keepdims=True)
    reward = rng.uniform(0.0, 1.0, size=(H, S, A))
    return FiniteMdp(transition, reward), onehot_features(H, S, A)


def _draw_chain(spec: EnvSpec, rng: np.random.Generator):
    H, S, A, d = spec.H, spec.S, spec.A, spec.d
    levels = np.arange(A) / A
    reward = np.empty((H, S, A))
    transition = np.zeros((H, S, A, S))
    for h in range(H):
        perm = rng.permutation(A)
        reward[h] = levels[perm][None, :]
        best = int(np.argmax(levels[perm]))
        for s in range(S):
            for a in range(A):
                nxt = min(s + 1, S - 1) if a == best else max(s - 1, 0)
                transition[h, s, a, nxt] = 1.0
    mdp = FiniteMdp(transition, reward)
    if d == A:
        phi = np.broadcast_to(np.eye(A), (H, S, A, A)).copy()
    else:
        # Q*_h scaled by the remaining horizon so every feature has norm <= 1
        q_star = dp_solve(mdp).q_star
        remaining = (H - np.arange(H)).astype(float)
        phi = (q_star / remaining[:, None, None])[..., None]
    return mdp, FeatureMap(phi)


_DRAWERS = {
    "linear_mdp": _draw_linear_mdp,
    "tabular_onehot": _draw_tabular,
    "deterministic_chain": _draw_chain,
}


def generate(spec: EnvSpec) -> Environment:
    """Draw environments from ``spec`` until one passes every certification check.

    Attempt ``i`` uses the generator seeded with ``(spec.seed, i)``, so the
    result is a pure function of the ``EnvSpec``.
    """
    best_gap = -math.inf
    reasons = []
    for attempt in range(spec.max_rejections):
        rng = np.random.default_rng([int(spec.seed), attempt])
        mdp, features = _DRAWERS[spec.kind](spec, rng)
        dp = dp_solve(mdp)
        fit = fit_linear_q(mdp, features, dp)
        best_gap = max(best_gap, dp.gap_global)
        problems = check_environment(mdp, features, dp, fit)
        if dp.gap_global < spec.gap_min:
            problems.append(f"gap {dp.gap_global:.4g} < gap_min {spec.gap_min}")
        if not problems:
            return Environment(mdp, features, dp, fit, dp.gap_global, spec.kind, int(spec.seed))
        reasons = problems
    raise GenerationError(
        f"no {spec.kind} environment met the requirements after {spec.max_rejections} attempts "
        f"(best gap {best_gap:.4g}; last rejection: {'; '.join(reasons)})",
        best_gap,
    )


# ---------------------------------------------------------------- file format


def _gap_to_json(gap: float):
    return "inf" if math.isinf(gap) else gap


def environment_to_dict(env: Environment) -> dict:
    return {
        "meta": {
            "kind": env.kind,
            "H": env.H,
            "S": env.S,
            "A": env.A,
            "d": env.d,
            "seed": env.seed,
            "gap": _gap_to_json(env.certified_gap),
        },
        "transition": env.mdp.transition.tolist(),
        "reward": env.mdp.reward.tolist(),
        "phi": env.features.phi.tolist(),
    }


def save(env: Environment, path) -> None:
    """Write the environment as one JSON document (floats in shortest round-trip form)."""
    text = json.dumps(environment_to_dict(env), allow_nan=False, separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")


def _field(doc: dict, name: str, where: str):
    if not isinstance(doc, dict) or name not in doc:
        raise EnvFileError(f"{where}: missing field {name!r}")
    return doc[name]


def _array(doc: dict, name: str, shape: tuple, where: str) -> np.ndarray:
    raw = _field(doc, name, where)
    try:
        arr = np.array(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise EnvFileError(f"{where}: field {name!r} is not a rectangular numeric array ({exc})") from None
    if arr.shape != shape:
        raise EnvFileError(f"{where}: field {name!r} has shape {arr.shape}, expected {shape}")
    return arr


def environment_from_dict(doc: dict, where: str = "<document>") -> Environment:
    meta = _field(doc, "meta", where)
    dims = {}
    for key in ("H", "S", "A", "d"):
        value = _field(meta, key, f"{where}: meta")
        if not isinstance(value, int) or isinstance(value, bool) or value < 1:
            raise EnvFileError(f"{where}: meta.{key} must be a positive integer, got {value!r}")
        dims[key] = value
    H, S, A, d = dims["H"], dims["S"], dims["A"], dims["d"]
    kind = meta.get("kind", "custom")
    seed = meta.get("seed", 0)
    transition = _array(doc, "transition", (H, S, A, S), where)
    reward = _array(doc, "reward", (H, S, A), where)
    phi = _array(doc, "phi", (H, S, A, d), where)
    try:
        env = make_environment(FiniteMdp(transition, reward), FeatureMap(phi), kind=kind, seed=seed)
    except MdpValidationError as exc:
        raise EnvFileError(f"{where}: invalid environment: {exc}") from None
    stated_gap = meta.get("gap")
    if stated_gap is not None:
        stated = math.inf if stated_gap == "inf" else float(stated_gap)
        if stated != env.certified_gap:
            raise EnvFileError(
                f"{where}: meta.gap {stated!r} does not match recomputed gap {env.certified_gap!r}"
            )
    return env


def load(path) -> Environment:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise EnvFileError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return environment_from_dict(doc, str(path))
