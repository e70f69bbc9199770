"""Self-contained oracle and property checks, runnable from the CLI.

Each check returns (name, passed, detail). These are condensed versions of
the test-suite oracles: exact tabular iterates, full-loss gradient checks,
information-theoretic identities, replay recounts, and the quantile-loss
brute force.
"""

from __future__ import annotations

import numpy as np

from . import distq, numkit, replay, tabular
from .regularizers import (
    RegularizerConfig,
    build_loss_context,
    entropy,
    kl_divergence,
    loss_and_grad,
)

CheckResult = tuple[str, bool, str]


def check_cross_agent_iterate(n_mdps: int = 20, seed: int = 0) -> CheckResult:
    """Formula exactness and fixed-point underestimation on random MDPs."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_mdps):
        s = int(rng.integers(2, 9))
        a = int(rng.integers(2, 5))
        mdp = tabular.random_mdp(rng, s, a, gamma=float(rng.uniform(0.5, 0.95)))
        pi_l = tabular.random_positive_policy(rng, s, a)
        pi_d = tabular.random_positive_policy(rng, s, a)
        alpha = float(rng.choice([0.1, 1.0]))
        q = rng.normal(size=(s, a))
        got = tabular.cross_agent_iterate(mdp, q, pi_l, pi_d, alpha)
        expected = tabular.bellman_optimality_backup(mdp, q) - alpha * pi_l / pi_d
        worst = max(worst, float(np.max(np.abs(got - expected))))
        q_fix = tabular.iterate_to_fixed_point(mdp, pi_l, pi_d, alpha)
        q_star = tabular.value_iteration(mdp)
        if not np.all(q_fix < q_star):
            return (
                "cross_agent_iterate",
                False,
                "fixed point failed to lower-bound the donor's optimal Q",
            )
    ok = worst < 1e-10
    return ("cross_agent_iterate", ok, f"worst formula deviation {worst:.2e}")


def _toy_loss_setup(rng: np.random.Generator, variant: str, sign_mode: str):
    num_actions = int(rng.integers(2, 4))
    num_quantiles = int(rng.integers(2, 4))
    obs_width = int(rng.integers(2, 5))
    hidden = (int(rng.integers(3, 6)),)
    learner = distq.make_qnet(obs_width, num_actions, num_quantiles, hidden, rng)
    target = distq.TargetNet(
        distq.make_qnet(obs_width, num_actions, num_quantiles, hidden, rng), tau=0.005
    )
    batch = int(rng.integers(2, 5))
    obs = rng.normal(size=(batch, obs_width))
    actions = rng.integers(0, num_actions, size=batch)
    rewards = rng.normal(size=batch)
    next_obs = rng.normal(size=(batch, obs_width))
    dones = (rng.random(batch) < 0.3).astype(np.float64)
    behavior = rng.dirichlet(np.ones(num_actions), size=batch) + 0.05
    behavior /= behavior.sum(axis=1, keepdims=True)
    config = RegularizerConfig(
        alpha=0.7,
        lam=0.0 if variant == "none" else 0.9,
        variant=variant,
        sign_mode=sign_mode,
        cql_mode="expectation" if rng.random() < 0.5 else "logsumexp",
    )
    donor_log_probs = None
    peers = None
    if variant == "shared_experience":
        donor_log_probs = np.log(rng.uniform(0.1, 0.9, size=batch))
    if variant == "cross_entropy":
        raw = rng.dirichlet(np.ones(num_actions), size=(2, batch)) + 0.02
        peers = [row / row.sum(axis=1, keepdims=True) for row in raw]
    ctx = build_loss_context(
        learner,
        target,
        obs,
        actions,
        rewards,
        next_obs,
        dones,
        config,
        gamma=0.9,
        behavior_probs=behavior,
        donor_log_probs=donor_log_probs,
        peer_policy_probs=peers,
    )
    return learner, ctx


def check_loss_gradients(n_configs: int = 4, seed: int = 1) -> CheckResult:
    """Central-difference check of the combined loss for every variant."""
    rng = np.random.default_rng(seed)
    cases = [
        ("none", "as_written"),
        ("shared_experience", "as_written"),
        ("cross_entropy", "as_written"),
        ("cross_entropy", "prose"),
    ]
    worst = 0.0
    for _ in range(n_configs):
        for variant, sign_mode in cases:
            learner, ctx = _toy_loss_setup(rng, variant, sign_mode)

            def loss_fn(net):
                probe = distq.QuantileQNet(net, learner.num_actions, learner.num_quantiles)
                value, grads, _ = loss_and_grad(probe, ctx)
                return value, grads

            report = numkit.finite_diff_check(loss_fn, learner.net, tolerance=1e-4)
            worst = max(worst, report.worst_rel_error)
    ok = worst < 1e-4
    return ("loss_gradients", ok, f"worst relative error {worst:.2e}")


def check_information_identities(n_pairs: int = 2000, seed: int = 2) -> CheckResult:
    """KL >= 0, KL(p||p) ~ 0, and H(p,q) = H(p) + KL(p||q)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_pairs):
        n = int(rng.integers(2, 6))
        p = rng.dirichlet(np.ones(n)) + 1e-6
        p /= p.sum()
        q = rng.dirichlet(np.ones(n)) + 1e-6
        q /= q.sum()
        kl = kl_divergence(p, q)
        if kl < 0 or kl_divergence(p, p) > 1e-12:
            return ("information_identities", False, "KL sign or self-divergence failed")
        cross = -float(np.sum(p * np.log(q)))
        worst = max(worst, abs(cross - (entropy(p) + kl)))
    ok = worst < 1e-12
    return ("information_identities", ok, f"worst identity gap {worst:.2e}")


def check_replay_recount(n_ops: int = 2000, seed: int = 3) -> CheckResult:
    """Behavior counts equal a from-scratch recount after random pushes."""
    rng = np.random.default_rng(seed)
    buf = replay.AgentBuffer(capacity=64, agent_id=0, obs_width=2, num_actions=3)
    for _ in range(n_ops):
        obs = rng.integers(0, 4, size=2).astype(np.float64)
        buf.push(
            replay.Transition(
                0, obs, int(rng.integers(0, 3)), float(rng.normal()), obs, False
            )
        )
    fresh = buf.recount_behavior()
    live = buf.behavior.counts
    same = set(live) == set(fresh.counts) and all(
        np.array_equal(live[k], fresh.counts[k]) for k in live
    )
    return ("replay_recount", same, f"{len(live)} state keys compared")


def check_quantile_loss_oracle(n_pairs: int = 200, seed: int = 4) -> CheckResult:
    """Vectorized quantile Huber loss equals the elementwise double sum."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_pairs):
        k = int(rng.integers(1, 8))
        kappa = float(rng.uniform(0.5, 2.0))
        taus = distq.quantile_midpoints(k)
        pred = rng.normal(size=k)
        targ = rng.normal(size=k)
        loss, _ = distq.quantile_huber_loss(pred, targ, taus, kappa)
        brute = 0.0
        for i in range(k):
            for j in range(k):
                u = targ[j] - pred[i]
                weight = abs(taus[i] - (1.0 if u < 0 else 0.0))
                huber = 0.5 * u * u if abs(u) <= kappa else kappa * (abs(u) - 0.5 * kappa)
                brute += weight * huber / kappa
        brute /= k
        worst = max(worst, abs(loss - brute))
    ok = worst < 1e-12
    return ("quantile_loss_oracle", ok, f"worst deviation {worst:.2e}")


def check_polyak_decay() -> CheckResult:
    """Dyadic Polyak updates match the closed-form geometric decay exactly."""
    rng = np.random.default_rng(5)
    online = distq.make_qnet(2, 2, 2, (3,), rng)
    for arr in online.net.param_arrays():
        arr[...] = 2.0
    target = distq.TargetNet(online.copy(), tau=0.25)
    for arr in target.qnet.net.param_arrays():
        arr[...] = 0.0
    for step in range(1, 11):
        distq.polyak_update(online, target)
        expected = 2.0 - 2.0 * (0.75**step)
        for arr in target.qnet.net.param_arrays():
            if not np.all(arr == expected):
                return ("polyak_decay", False, f"mismatch at step {step}")
    return ("polyak_decay", True, "10 dyadic steps exact")


ALL_CHECKS = (
    check_cross_agent_iterate,
    check_loss_gradients,
    check_information_identities,
    check_replay_recount,
    check_quantile_loss_oracle,
    check_polyak_decay,
)


def run_all(quick: bool = False) -> list[CheckResult]:
    results = []
    if quick:
        results.append(check_cross_agent_iterate(n_mdps=5))
        results.append(check_loss_gradients(n_configs=1))
        results.append(check_information_identities(n_pairs=300))
        results.append(check_replay_recount(n_ops=300))
        results.append(check_quantile_loss_oracle(n_pairs=50))
        results.append(check_polyak_decay())
    else:
        for check in ALL_CHECKS:
            results.append(check())
    return results
