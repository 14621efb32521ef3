"""Finite episodic linear MDPs with exact value oracles.

A :class:`LinearMdpSpec` stores the feature map ``phi(s, a)``, the per-stage
measures ``mu_h`` and reward parameters ``theta_h``.  Transition kernels and
rewards are recovered as inner products::

    P_h(. | s, a) = phi(s, a) @ mu_h
    r_h(s, a)     = phi(s, a) @ theta_h

Stages are zero-based in code (``h = 0 .. H-1``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np

PROB_TOL = 1e-9
CLAMP_TOL = 1e-12


class SpecValidationError(ValueError):
    """Raised when a linear MDP violates one of its structural assumptions."""


class Violation(NamedTuple):
    kind: str
    index: tuple
    detail: str

    def __str__(self):
        return f"{self.kind} at {self.index}: {self.detail}"


@dataclass(frozen=True, eq=False)
class LinearMdpSpec:
    """Exact finite linear MDP.

    Parameters
    ----------
    features : ndarray of shape (num_states, num_actions, d)
    mu : ndarray of shape (H, d, num_states)
    theta : ndarray of shape (H, d)
    initial_state : int
    """

    features: np.ndarray
    mu: np.ndarray
    theta: np.ndarray
    initial_state: int = 0
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        for attr in ("features", "mu", "theta"):
            arr = np.array(getattr(self, attr), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, attr, arr)
        if self.features.ndim != 3:
            raise ValueError("features must have shape (num_states, num_actions, d)")
        S, A, d = self.features.shape
        if self.mu.ndim != 3 or self.mu.shape[1:] != (d, S):
            raise ValueError(f"mu must have shape (H, {d}, {S}), got {self.mu.shape}")
        if self.theta.shape != (self.mu.shape[0], d):
            raise ValueError(f"theta must have shape ({self.mu.shape[0]}, {d}), got {self.theta.shape}")
        if not 0 <= self.initial_state < S:
            raise ValueError(f"initial_state {self.initial_state} out of range for {S} states")
        object.__setattr__(self, "initial_state", int(self.initial_state))

    @property
    def d(self) -> int:
        return self.features.shape[2]

    @property
    def H(self) -> int:
        return self.mu.shape[0]

    @property
    def num_states(self) -> int:
        return self.features.shape[0]

    @property
    def num_actions(self) -> int:
        return self.features.shape[1]

    @cached_property
    def raw_transitions(self) -> np.ndarray:
        """Unclamped ``phi @ mu_h`` of shape (H, S, A, S)."""
        return np.einsum("sai,hij->hsaj", self.features, self.mu)

    @cached_property
    def raw_rewards(self) -> np.ndarray:
        return np.einsum("sai,hi->hsa", self.features, self.theta)

    @cached_property
    def transitions(self) -> np.ndarray:
        """Clamped, renormalised transition tensor of shape (H, S, A, S)."""
        P = self.raw_transitions.copy()
        bad = np.argwhere((P < -CLAMP_TOL).any(axis=-1) | (np.abs(P.sum(axis=-1) - 1.0) > PROB_TOL))
        if len(bad):
            h, s, a = (int(i) for i in bad[0])
            raise SpecValidationError(
                f"transition row (h={h}, s={s}, a={a}) is not a probability vector "
                f"(min={P[h, s, a].min():.3g}, sum={P[h, s, a].sum():.17g})")
        np.clip(P, 0.0, None, out=P)
        P /= P.sum(axis=-1, keepdims=True)
        P.setflags(write=False)
        return P

    @cached_property
    def rewards(self) -> np.ndarray:
        """Reward table of shape (H, S, A)."""
        R = self.raw_rewards.copy()
        bad = np.argwhere((R < -CLAMP_TOL) | (R > 1.0 + CLAMP_TOL))
        if len(bad):
            h, s, a = (int(i) for i in bad[0])
            raise SpecValidationError(f"reward (h={h}, s={s}, a={a}) = {R[h, s, a]!r} outside [0, 1]")
        np.clip(R, 0.0, 1.0, out=R)
        R.setflags(write=False)
        return R

    @cached_property
    def optimal(self) -> tuple[np.ndarray, np.ndarray]:
        return exact_optimal_values(self)


def _check_stage(spec, h, s, a):
    if not (0 <= h < spec.H and 0 <= s < spec.num_states and 0 <= a < spec.num_actions):
        raise IndexError(f"(h={h}, s={s}, a={a}) out of range for H={spec.H}, "
                         f"S={spec.num_states}, A={spec.num_actions}")


def transition_distribution(spec: LinearMdpSpec, h: int, s: int, a: int) -> np.ndarray:
    """Next-state distribution ``phi(s, a) @ mu_h``."""
    _check_stage(spec, h, s, a)
    p = spec.features[s, a] @ spec.mu[h]
    if (p < -CLAMP_TOL).any() or abs(p.sum() - 1.0) > PROB_TOL:
        raise SpecValidationError(
            f"transition row (h={h}, s={s}, a={a}) is not a probability vector "
            f"(min={p.min():.3g}, sum={p.sum():.17g})")
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def reward(spec: LinearMdpSpec, h: int, s: int, a: int) -> float:
    _check_stage(spec, h, s, a)
    r = float(spec.features[s, a] @ spec.theta[h])
    if r < -CLAMP_TOL or r > 1.0 + CLAMP_TOL:
        raise SpecValidationError(f"reward (h={h}, s={s}, a={a}) = {r!r} outside [0, 1]")
    return min(max(r, 0.0), 1.0)


def validate_spec(spec: LinearMdpSpec) -> list[Violation]:
    """Return every violated linear-MDP assumption (empty when valid)."""
    out = []
    d = spec.d
    norms = np.linalg.norm(spec.features, axis=-1)
    for s, a in np.argwhere(norms > 1.0 + CLAMP_TOL):
        out.append(Violation("feature_norm", (int(s), int(a)), f"||phi|| = {norms[s, a]:.17g} > 1"))

    P = spec.raw_transitions
    for h, s, a in np.argwhere((P < -CLAMP_TOL).any(axis=-1)):
        out.append(Violation("probability_negative", (int(h), int(s), int(a)),
                             f"min entry {P[h, s, a].min():.3g}"))
    sums = P.sum(axis=-1)
    for h, s, a in np.argwhere(np.abs(sums - 1.0) > PROB_TOL):
        out.append(Violation("probability_sum", (int(h), int(s), int(a)),
                             f"row sums to {sums[h, s, a]:.17g}"))

    R = spec.raw_rewards
    for h, s, a in np.argwhere((R < -CLAMP_TOL) | (R > 1.0 + CLAMP_TOL)):
        out.append(Violation("reward_range", (int(h), int(s), int(a)), f"r = {R[h, s, a]:.17g}"))

    bound = np.sqrt(d) * (1.0 + CLAMP_TOL)
    for h in range(spec.H):
        m = np.linalg.norm(spec.mu[h].sum(axis=1))
        if m > bound:
            out.append(Violation("mu_norm", (h,), f"||mu_h(S)|| = {m:.17g} > sqrt(d)"))
        t = np.linalg.norm(spec.theta[h])
        if t > bound:
            out.append(Violation("theta_norm", (h,), f"||theta_h|| = {t:.17g} > sqrt(d)"))
    return out


def make_tabular_instance(num_states: int, num_actions: int, H: int, rng=None) -> LinearMdpSpec:
    """Tabular MDP written as a linear MDP with one-hot features.

    Transition rows are Dirichlet(1, ..., 1) draws and rewards are uniform on
    [0, 1]; feature index of ``(s, a)`` is ``s * num_actions + a``.
    """
    if num_states * num_actions < 1 or H < 1:
        raise ValueError("need at least one state-action pair and H >= 1")
    rng = np.random.default_rng(rng)
    S, A = num_states, num_actions
    d = S * A
    features = np.eye(d).reshape(S, A, d)
    rows = rng.dirichlet(np.ones(S), size=(H, d))  # (H, d, S)
    theta = rng.random((H, d))
    return LinearMdpSpec(features, rows, theta, 0, name=f"tabular-{S}x{A}-H{H}")


def make_lowrank_instance(num_states: int, num_actions: int, H: int, d: int, rng=None) -> LinearMdpSpec:
    """Low-rank linear MDP: simplex features mixing ``d`` anchor distributions."""
    if d < 1 or num_states < 1 or num_actions < 1 or H < 1:
        raise ValueError("all sizes must be positive")
    rng = np.random.default_rng(rng)
    features = rng.dirichlet(np.ones(d), size=(num_states, num_actions))
    anchors = rng.dirichlet(np.full(num_states, 0.5), size=(H, d))
    theta = rng.random((H, d))
    return LinearMdpSpec(features, anchors, theta, 0,
                         name=f"lowrank-{num_states}x{num_actions}-d{d}-H{H}")


def sample_episode(spec: LinearMdpSpec, policy, rng) -> list[tuple[int, int, float, int]]:
    """Roll out one episode; one uniform draw per step, inverse-CDF sampling.

    Returns ``H`` records ``(state, action, reward, next_state)``.
    """
    policy = np.asarray(policy)
    P = spec.transitions
    R = spec.rewards
    u = rng.random(spec.H)
    s = spec.initial_state
    traj = []
    for h in range(spec.H):
        a = int(policy[h, s])
        cdf = np.cumsum(P[h, s, a])
        nxt = min(int(np.searchsorted(cdf, u[h], side="right")), spec.num_states - 1)
        traj.append((s, a, float(R[h, s, a]), nxt))
        s = nxt
    return traj


def exact_optimal_values(spec: LinearMdpSpec) -> tuple[np.ndarray, np.ndarray]:
    """Backward induction. Returns ``Q*`` of shape (H, S, A) and ``V*`` of shape (H+1, S)."""
    P, R = spec.transitions, spec.rewards
    Q = np.zeros((spec.H, spec.num_states, spec.num_actions))
    V = np.zeros((spec.H + 1, spec.num_states))
    for h in reversed(range(spec.H)):
        Q[h] = R[h] + P[h] @ V[h + 1]
        V[h] = Q[h].max(axis=1)
    return Q, V


def policy_values(spec: LinearMdpSpec, policy) -> np.ndarray:
    """State values ``V^pi_h`` of shape (H+1, S) for a deterministic policy."""
    policy = np.asarray(policy)
    P, R = spec.transitions, spec.rewards
    states = np.arange(spec.num_states)
    V = np.zeros((spec.H + 1, spec.num_states))
    for h in reversed(range(spec.H)):
        a = policy[h]
        V[h] = R[h, states, a] + P[h, states, a] @ V[h + 1]
    return V


def exact_policy_value(spec: LinearMdpSpec, policy) -> float:
    return float(policy_values(spec, policy)[0, spec.initial_state])


def greedy_policy(q_table) -> np.ndarray:
    """Argmax over actions; ties go to the lowest action index."""
    return np.argmax(q_table, axis=-1)


def per_episode_regret(spec: LinearMdpSpec, policy) -> float:
    _, V = spec.optimal
    return float(V[0, spec.initial_state]) - exact_policy_value(spec, policy)


def uniform_policy_value(spec: LinearMdpSpec) -> float:
    """Exact value of the uniformly random policy from the initial state."""
    P, R = spec.transitions, spec.rewards
    V = np.zeros(spec.num_states)
    for h in reversed(range(spec.H)):
        V = (R[h] + P[h] @ V).mean(axis=1)
    return float(V[spec.initial_state])


# -- flat text serialisation --------------------------------------------------

def dumps_spec(spec: LinearMdpSpec) -> str:
    """Serialise as text: header ``d H S A s0`` then features, mu_h and theta rows."""
    fmt = lambda row: " ".join(format(float(x), ".17g") for x in row)
    lines = [f"{spec.d} {spec.H} {spec.num_states} {spec.num_actions} {spec.initial_state}"]
    lines += [fmt(row) for row in spec.features.reshape(-1, spec.d)]
    for h in range(spec.H):
        lines += [fmt(row) for row in spec.mu[h]]
    lines += [fmt(row) for row in spec.theta]
    return "\n".join(lines) + "\n"


def loads_spec(text: str, name: str = "custom") -> LinearMdpSpec:
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    try:
        d, H, S, A, s0 = (int(x) for x in rows[0])
    except (IndexError, ValueError) as exc:
        raise ValueError("bad header; expected 'd H S A s0'") from exc
    body = rows[1:]
    expected = S * A + H * d + H
    if len(body) != expected:
        raise ValueError(f"expected {expected} data rows, found {len(body)}")
    vals = [np.array([float(x) for x in r]) for r in body]
    features = np.array(vals[: S * A]).reshape(S, A, d)
    mu = np.array(vals[S * A: S * A + H * d]).reshape(H, d, S)
    theta = np.array(vals[S * A + H * d:]).reshape(H, d)
    return LinearMdpSpec(features, mu, theta, s0, name=name)


def save_spec(spec: LinearMdpSpec, path) -> None:
    Path(path).write_text(dumps_spec(spec))


def load_spec(path) -> LinearMdpSpec:
    path = Path(path)
    return loads_spec(path.read_text(), name=path.stem)
