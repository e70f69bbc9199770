"""Exact dynamic programming on tiny enumerable MDPs.

These routines are the machine-precision counterparts of the learned
updates: the Bellman optimality backup, the conservatively penalized
iterate, and the cross-agent iterate whose fixed point demonstrates that
borrowing another agent's data without correction underestimates Q.

Only MDPs with at most 16 states and 4 actions are accepted; everything
stays exact and sub-second at that size.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CapabilityError, ParameterError, ShapeError, SupportError

Array = np.ndarray

MAX_STATES = 16
MAX_ACTIONS = 4
CONVERGENCE_TOL = 1e-12
MAX_ITERATIONS = 100_000


@dataclass
class TabularMDP:
    """Row-stochastic transition tensor T(s'|s,a), rewards r(s,a), discount."""

    transitions: Array  # (S, A, S)
    rewards: Array  # (S, A)
    gamma: float

    def __post_init__(self) -> None:
        t = np.asarray(self.transitions, dtype=np.float64)
        r = np.asarray(self.rewards, dtype=np.float64)
        if t.ndim != 3 or t.shape[0] != t.shape[2] or r.shape != t.shape[:2]:
            raise ShapeError(f"transition shape {t.shape} / reward shape {r.shape} mismatch")
        if t.shape[0] > MAX_STATES or t.shape[1] > MAX_ACTIONS:
            raise CapabilityError(
                f"exact oracle limited to {MAX_STATES} states / {MAX_ACTIONS} actions"
            )
        if not (0.0 < self.gamma < 1.0):
            raise ParameterError(f"gamma must be in (0, 1), got {self.gamma}")
        if not np.all(np.isfinite(r)):
            raise ParameterError("rewards must be finite")
        row_sums = t.sum(axis=2)
        if np.any(np.abs(row_sums - 1.0) > 1e-12) or np.any(t < 0.0):
            raise ParameterError("each T(.|s,a) must be a probability vector")
        self.transitions = t
        self.rewards = r

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]


def _check_q(mdp: TabularMDP, q: Array) -> Array:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (mdp.num_states, mdp.num_actions):
        raise ShapeError(f"Q shape {q.shape} != {(mdp.num_states, mdp.num_actions)}")
    return q


def _check_policy(mdp: TabularMDP, policy: Array, name: str) -> Array:
    p = np.asarray(policy, dtype=np.float64)
    if p.shape != (mdp.num_states, mdp.num_actions):
        raise ShapeError(f"{name} shape {p.shape} != {(mdp.num_states, mdp.num_actions)}")
    if np.any(p <= 0.0):
        raise SupportError(f"{name} must be strictly positive everywhere")
    return p


def bellman_optimality_backup(mdp: TabularMDP, q: Array) -> Array:
    """(B*Q)(s,a) = r(s,a) + gamma * sum_s' T(s'|s,a) max_a' Q(s',a')."""
    q = _check_q(mdp, q)
    best_next = q.max(axis=1)  # (S,)
    return mdp.rewards + mdp.gamma * (mdp.transitions @ best_next)


def penalized_iterate(
    mdp: TabularMDP,
    q: Array,
    policy: Array,
    alpha: float,
    behavior: Array | None = None,
) -> Array:
    """Stationary-point iterate of the conservatively penalized objective.

    With the data distribution equal to the policy itself the ratio is 1
    and the result is a uniform downward shift: B*Q - alpha.
    """
    q = _check_q(mdp, q)
    pi = _check_policy(mdp, policy, "policy")
    beh = pi if behavior is None else _check_policy(mdp, behavior, "behavior")
    return bellman_optimality_backup(mdp, q) - alpha * (pi / beh)


def cross_agent_iterate(
    mdp: TabularMDP,
    q_learner: Array,
    policy_learner: Array,
    policy_donor: Array,
    alpha: float,
) -> Array:
    """B*Q - alpha * pi_learner / pi_donor, elementwise.

    With alpha > 0 and strictly positive policies every entry lands strictly
    below the plain backup, which is the underestimation being verified.
    """
    if alpha <= 0:
        raise ParameterError(f"alpha must be > 0, got {alpha}")
    return penalized_iterate(mdp, q_learner, policy_learner, alpha, behavior=policy_donor)


def value_iteration(
    mdp: TabularMDP,
    q0: Array | None = None,
    tol: float = CONVERGENCE_TOL,
    max_iterations: int = MAX_ITERATIONS,
) -> Array:
    """Iterate the optimality backup until the sup-norm change drops below tol."""
    q = np.zeros((mdp.num_states, mdp.num_actions)) if q0 is None else _check_q(mdp, q0).copy()
    for _ in range(max_iterations):
        nxt = bellman_optimality_backup(mdp, q)
        if np.max(np.abs(nxt - q)) < tol:
            return nxt
        q = nxt
    return q


def iterate_to_fixed_point(
    mdp: TabularMDP,
    policy_learner: Array,
    policy_donor: Array,
    alpha: float,
    tol: float = CONVERGENCE_TOL,
    max_iterations: int = MAX_ITERATIONS,
) -> Array:
    """Fixed point of the cross-agent iterate from a zero initialization."""
    q = np.zeros((mdp.num_states, mdp.num_actions))
    for _ in range(max_iterations):
        nxt = cross_agent_iterate(mdp, q, policy_learner, policy_donor, alpha)
        if np.max(np.abs(nxt - q)) < tol:
            return nxt
        q = nxt
    return q


def random_mdp(
    rng: np.random.Generator,
    num_states: int,
    num_actions: int,
    gamma: float = 0.9,
    reward_scale: float = 1.0,
) -> TabularMDP:
    """Dense random MDP with Dirichlet transition rows."""
    t = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    r = rng.uniform(-reward_scale, reward_scale, size=(num_states, num_actions))
    return TabularMDP(t, r, gamma)


def random_positive_policy(
    rng: np.random.Generator, num_states: int, num_actions: int, floor: float = 0.05
) -> Array:
    """Random strictly positive policy; a floor keeps ratios bounded."""
    p = rng.dirichlet(np.ones(num_actions), size=num_states)
    p = p + floor
    return p / p.sum(axis=1, keepdims=True)


def dump_mdp_text(mdp: TabularMDP) -> str:
    """Plain-text table: header line, then one line per (s,a): reward + T row."""
    lines = [f"{mdp.num_states} {mdp.num_actions} {float(mdp.gamma)!r}"]
    for s in range(mdp.num_states):
        for a in range(mdp.num_actions):
            row = " ".join(repr(float(x)) for x in mdp.transitions[s, a])
            lines.append(f"{float(mdp.rewards[s, a])!r} {row}")
    return "\n".join(lines) + "\n"


def load_mdp_text(text: str) -> TabularMDP:
    lines = [ln for ln in text.strip().splitlines() if ln.strip()]
    head = lines[0].split()
    num_states, num_actions, gamma = int(head[0]), int(head[1]), float(head[2])
    if len(lines) != 1 + num_states * num_actions:
        raise ShapeError(
            f"expected {num_states * num_actions} (s,a) lines, got {len(lines) - 1}"
        )
    rewards = np.zeros((num_states, num_actions))
    transitions = np.zeros((num_states, num_actions, num_states))
    idx = 1
    for s in range(num_states):
        for a in range(num_actions):
            parts = [float(x) for x in lines[idx].split()]
            if len(parts) != 1 + num_states:
                raise ShapeError(f"line {idx}: expected reward + {num_states} entries")
            rewards[s, a] = parts[0]
            transitions[s, a] = parts[1:]
            idx += 1
    return TabularMDP(transitions, rewards, gamma)


def load_mdp_file(path: str | Path) -> TabularMDP:
    return load_mdp_text(Path(path).read_text())
