"""Loss layers: TD quantile term, conservative penalty, shared-experience
penalty, and the pairwise adaptive cross-entropy penalty.

Every stop-gradient quantity (Bellman targets, value targets, importance
ratios, behavior distributions, peer policies, adaptive entropy
coefficients) is captured once per update into a LossContext. The combined
objective is then a deterministic function of the learner's parameters
alone, which is what makes central-difference gradient verification of the
full loss possible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .distq import (
    QuantileQNet,
    TargetNet,
    bellman_targets_batch,
    mean_q_batch,
    quantile_huber_loss_batch,
    quantiles_batch,
)
from .errors import ConfigError, EmptySourceError, ParameterError, SupportError
from .numkit import GradBundle, backward_batch, log_softmax_batch, softmax_batch, zero_grads
from .replay import EmpiricalBehavior, Transition, quantize_key

Array = np.ndarray

RATIO_MIN = 1e-2
RATIO_MAX = 1e2

VARIANTS = ("none", "shared_experience", "cross_entropy")
CQL_MODES = ("expectation", "logsumexp")
SIGN_MODES = ("as_written", "prose")


@dataclass
class RegularizerConfig:
    """Weights and switches for the penalty stack."""

    alpha: float = 1.0
    lam: float = 1.0
    variant: str = "none"
    # Floor on the 1/H adaptive scaling; small floors let the entropy term
    # amplify itself once a policy sharpens, which destabilizes Q scales.
    entropy_floor: float = 0.1
    cql_mode: str = "expectation"
    sign_mode: str = "as_written"
    include_self: bool = True

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.lam < 0:
            raise ConfigError(f"lambda weight must be >= 0, got {self.lam}")
        if self.entropy_floor <= 0:
            raise ConfigError(f"entropy_floor must be > 0, got {self.entropy_floor}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.cql_mode not in CQL_MODES:
            raise ConfigError(f"cql_mode must be one of {CQL_MODES}, got {self.cql_mode!r}")
        if self.sign_mode not in SIGN_MODES:
            raise ConfigError(f"sign_mode must be one of {SIGN_MODES}, got {self.sign_mode!r}")


def _probs(p) -> Array:
    arr = p.probs if hasattr(p, "probs") else np.asarray(p, dtype=np.float64)
    return np.asarray(arr, dtype=np.float64)


def entropy(p) -> float:
    """H(p) = -sum p log p with 0 log 0 := 0."""
    arr = _probs(p)
    terms = np.where(arr > 0.0, arr * np.log(np.where(arr > 0.0, arr, 1.0)), 0.0)
    return float(-terms.sum())


def entropy_rows(p: Array) -> Array:
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    return -terms.sum(axis=1)


def kl_divergence(p, q) -> float:
    """D_KL(p || q); raises if q vanishes anywhere p has mass."""
    pa, qa = _probs(p), _probs(q)
    mask = pa > 0.0
    if np.any(qa[mask] <= 0.0):
        raise SupportError("q has zero mass where p is positive")
    ratio = np.log(pa[mask] / qa[mask])
    return float((pa[mask] * ratio).sum())


def importance_ratio(learner_policy, donor_policy, action: int, clip: bool = True) -> float:
    """pi_learner(a|s) / pi_donor(a|s), clipped to [1e-2, 1e2] by default."""
    pi = _probs(learner_policy)[action]
    pj = _probs(donor_policy)[action]
    if pj <= 0.0:
        raise SupportError(f"donor probability is zero for action {action}")
    ratio = pi / pj
    if clip:
        ratio = min(max(ratio, RATIO_MIN), RATIO_MAX)
    return float(ratio)


def adaptive_entropy_grad(p, alpha: float, entropy_floor: float) -> Array:
    """-alpha * (log p + 1) / max(H(p), floor), elementwise.

    Injected in place of the plain entropy gradient so the push toward
    exploration grows as the policy collapses, capped by the floor.
    """
    arr = _probs(p)
    h = max(entropy(arr), entropy_floor)
    return -alpha * (np.log(arr) + 1.0) / h


# ---------------------------------------------------------------------------
# Combined loss with frozen context


@dataclass
class LossContext:
    """Frozen per-update quantities; the loss is a pure function given this."""

    config: RegularizerConfig
    gamma: float
    kappa: float
    temperature: float
    obs: Array  # (B, W) network-ready learner inputs
    actions: Array  # (B,)
    target_quantiles: Array  # (B, K) frozen distributional Bellman targets
    behavior_probs: Array | None = None  # (B, A) data distribution of the batch source
    pi_weights: Array | None = None  # (B, A) frozen learner policy at snapshot
    ratios: Array | None = None  # (B,) clipped importance ratios
    value_targets: Array | None = None  # (B,) frozen r + gamma * (1 - done) * V(s')
    peer_log_probs: Array | None = None  # (J, B, A) frozen peer policies, log domain
    adapt_coef: Array | None = None  # (B,) 1 / max(H(pi_i(s)), floor)


def value_estimate_rows(q_bar: Array, weights: Array) -> Array:
    """V(s) = sum_a w(a|s) * Qbar(s,a) per batch row."""
    return (weights * q_bar).sum(axis=1)


def build_loss_context(
    learner: QuantileQNet,
    target: TargetNet,
    obs: Array,
    actions: Array,
    rewards: Array,
    next_obs: Array,
    dones: Array,
    config: RegularizerConfig,
    gamma: float,
    kappa: float = 1.0,
    temperature: float = 1.0,
    behavior_probs: Array | None = None,
    donor_log_probs: Array | None = None,
    peer_policy_probs: Sequence[Array] | None = None,
) -> LossContext:
    """Capture every stop-gradient quantity for one update.

    ``donor_log_probs`` are log pi_donor(a_b | s_b) for shared-experience
    batches; ``peer_policy_probs`` are the (B, A) policies entering the
    cross-entropy sum (self included or not, per the caller).
    """
    if len(obs) == 0:
        raise EmptySourceError("loss context requires a non-empty batch")
    target_q = bellman_targets_batch(target, next_obs, rewards, dones, gamma)
    q_bar = mean_q_batch(learner, obs)
    pi_weights = softmax_batch(q_bar, temperature)
    ctx = LossContext(
        config=config,
        gamma=gamma,
        kappa=kappa,
        temperature=temperature,
        obs=np.asarray(obs, dtype=np.float64),
        actions=np.asarray(actions, dtype=np.int64),
        target_quantiles=target_q,
        behavior_probs=behavior_probs,
        pi_weights=pi_weights,
    )
    active_lam = config.lam
    if config.variant == "shared_experience" and active_lam != 0.0:
        if donor_log_probs is None:
            raise ParameterError("shared_experience context requires donor log-probs")
        log_pi = log_softmax_batch(q_bar, temperature)
        lp_data = log_pi[np.arange(len(actions)), actions]
        ctx.ratios = np.clip(
            np.exp(np.clip(lp_data - donor_log_probs, np.log(RATIO_MIN), np.log(RATIO_MAX))),
            RATIO_MIN,
            RATIO_MAX,
        )
        q_bar_next = mean_q_batch(learner, next_obs)
        w_next = softmax_batch(q_bar_next, temperature)
        v_next = value_estimate_rows(q_bar_next, w_next)
        ctx.value_targets = rewards + gamma * (1.0 - dones.astype(np.float64)) * v_next
    if config.variant == "cross_entropy" and active_lam != 0.0:
        if peer_policy_probs is None:
            raise ParameterError("cross_entropy context requires peer policies")
        peers = np.stack([np.asarray(p, dtype=np.float64) for p in peer_policy_probs])
        if np.any(peers <= 0.0):
            raise SupportError("peer policies must be strictly positive")
        ctx.peer_log_probs = np.log(peers)
        h = entropy_rows(pi_weights)
        ctx.adapt_coef = 1.0 / np.maximum(h, config.entropy_floor)
    return ctx


def loss_and_grad(
    learner: QuantileQNet, ctx: LossContext
) -> tuple[float, GradBundle, dict[str, float]]:
    """Evaluate the combined objective and its exact gradient.

    Returns the scalar objective (the function the gradient differentiates;
    cross-entropy terms enter it with their frozen adaptive coefficients),
    the parameter gradients, and reported components: ``td``, ``cql`` and
    ``reg`` (the plain penalty value as printed, without adaptive scaling).
    """
    cfg = ctx.config
    batch = len(ctx.actions)
    rows = np.arange(batch)
    theta, cache = quantiles_batch(learner, ctx.obs, keep_cache=True)
    k = learner.num_quantiles
    q_bar = theta.mean(axis=2)

    d_qbar = np.zeros_like(q_bar)
    # TD quantile-Huber term with the 1/2 factor of the squared-error slot.
    pred = theta[rows, ctx.actions]
    losses, d_pred = quantile_huber_loss_batch(pred, ctx.target_quantiles, learner.taus, ctx.kappa)
    td = 0.5 * float(losses.mean())
    d_theta_action = (0.5 / batch) * d_pred

    cql = 0.0
    if cfg.alpha != 0.0:
        if ctx.behavior_probs is None:
            raise ParameterError("CQL penalty requires behavior probabilities")
        if cfg.cql_mode == "expectation":
            diff = ctx.pi_weights - ctx.behavior_probs
            cql = cfg.alpha * float((diff * q_bar).sum(axis=1).mean())
            d_qbar += (cfg.alpha / batch) * diff
        else:
            m = q_bar.max(axis=1, keepdims=True)
            lse = (m[:, 0] + np.log(np.exp(q_bar - m).sum(axis=1)))
            picked = q_bar[rows, ctx.actions]
            cql = cfg.alpha * float((lse - picked).mean())
            sm = softmax_batch(q_bar, 1.0)
            d_qbar += (cfg.alpha / batch) * sm
            d_qbar[rows, ctx.actions] -= cfg.alpha / batch

    reg_objective = 0.0
    reg_reported = 0.0
    if cfg.lam != 0.0 and cfg.variant == "shared_experience":
        v = value_estimate_rows(q_bar, ctx.pi_weights)
        resid = v - ctx.value_targets
        weighted = ctx.ratios * np.abs(resid)
        reg_objective = cfg.lam * float(weighted.mean())
        reg_reported = reg_objective
        coeff = (cfg.lam / batch) * ctx.ratios * np.sign(resid)
        d_qbar += coeff[:, None] * ctx.pi_weights
    elif cfg.lam != 0.0 and cfg.variant == "cross_entropy":
        log_p = log_softmax_batch(q_bar, ctx.temperature)
        p = np.exp(log_p)
        h = -(p * log_p).sum(axis=1)
        n_peers = ctx.peer_log_probs.shape[0]
        sign_h = 1.0 if cfg.sign_mode == "as_written" else -1.0
        kl_rows = (p[None, :, :] * (log_p[None, :, :] - ctx.peer_log_probs)).sum(axis=2)
        kl_total = kl_rows.sum(axis=0)  # (B,)
        reg_reported = cfg.lam * float((n_peers * sign_h * h + kl_total).mean())
        reg_objective = cfg.lam * float(
            (n_peers * sign_h * ctx.adapt_coef * h + kl_total).mean()
        )
        # d/dp of [J * s * c * H + sum_j KL]; the entropy part carries the
        # frozen adaptive coefficient, the KL part keeps its exact gradient.
        g_p = n_peers * sign_h * ctx.adapt_coef[:, None] * (-(log_p + 1.0))
        g_p += (log_p + 1.0) * n_peers - ctx.peer_log_probs.sum(axis=0)
        g_p *= cfg.lam / batch
        inner = (g_p * p).sum(axis=1, keepdims=True)
        d_qbar += (p * (g_p - inner)) / ctx.temperature

    d_theta = np.repeat(d_qbar[:, :, None] / k, k, axis=2)
    d_theta[rows, ctx.actions] += d_theta_action
    bundle, _ = backward_batch(learner.net, cache, d_theta.reshape(batch, -1))
    objective = td + cql + reg_objective
    components = {"td": td, "cql": cql, "reg": reg_reported}
    return objective, bundle, components


def total_loss(
    learner: QuantileQNet,
    target: TargetNet,
    obs: Array,
    actions: Array,
    rewards: Array,
    next_obs: Array,
    dones: Array,
    config: RegularizerConfig,
    gamma: float,
    kappa: float = 1.0,
    temperature: float = 1.0,
    behavior_probs: Array | None = None,
    donor_log_probs: Array | None = None,
    peer_policy_probs: Sequence[Array] | None = None,
) -> tuple[float, GradBundle, dict[str, float]]:
    """Build the frozen context and evaluate the combined loss once."""
    ctx = build_loss_context(
        learner,
        target,
        obs,
        actions,
        rewards,
        next_obs,
        dones,
        config,
        gamma,
        kappa,
        temperature,
        behavior_probs=behavior_probs,
        donor_log_probs=donor_log_probs,
        peer_policy_probs=peer_policy_probs,
    )
    return loss_and_grad(learner, ctx)


# ---------------------------------------------------------------------------
# Standalone penalty surfaces (value + gradient through the network)


def _batch_obs(batch: Sequence[Transition]) -> Array:
    if len(batch) == 0:
        raise EmptySourceError("empty batch")
    return np.stack([t.obs for t in batch]).astype(np.float64)


def _grads_from_dqbar(learner: QuantileQNet, obs: Array, d_qbar: Array) -> GradBundle:
    theta, cache = quantiles_batch(learner, obs, keep_cache=True)
    k = learner.num_quantiles
    d_theta = np.repeat(d_qbar[:, :, None] / k, k, axis=2)
    bundle, _ = backward_batch(learner.net, cache, d_theta.reshape(len(obs), -1))
    return bundle


def cql_penalty(
    learner: QuantileQNet,
    batch: Sequence[Transition],
    behavior: EmpiricalBehavior,
    alpha: float,
    mode: str = "expectation",
    policy_probs: Array | None = None,
    temperature: float = 1.0,
    key_resolution: float = 1e-3,
) -> tuple[float, GradBundle]:
    """Conservative penalty over a batch.

    Expectation mode: alpha * E_s[ sum_a pi(a|s) Q(s,a) - sum_a pi_D(a|s) Q(s,a) ]
    with the policy treated as frozen expectation weights. Logsumexp mode:
    alpha * E_s[ logsumexp_a Q(s,a) - Q(s, a_data) ], fully differentiable.
    Unseen states fall back to a uniform data distribution.
    """
    if mode not in CQL_MODES:
        raise ConfigError(f"mode must be one of {CQL_MODES}, got {mode!r}")
    obs = _batch_obs(batch)
    actions = np.array([t.action for t in batch], dtype=np.int64)
    q_bar = mean_q_batch(learner, obs)
    rows = np.arange(len(batch))
    beh = np.stack(
        [behavior.distribution_or_uniform(quantize_key(t.obs, key_resolution)) for t in batch]
    )
    if mode == "expectation":
        pi = softmax_batch(q_bar, temperature) if policy_probs is None else policy_probs
        diff = pi - beh
        value = alpha * float((diff * q_bar).sum(axis=1).mean())
        d_qbar = (alpha / len(batch)) * diff
    else:
        m = q_bar.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(q_bar - m).sum(axis=1))
        value = alpha * float((lse - q_bar[rows, actions]).mean())
        d_qbar = (alpha / len(batch)) * softmax_batch(q_bar, 1.0)
        d_qbar[rows, actions] -= alpha / len(batch)
    return value, _grads_from_dqbar(learner, obs, d_qbar)


def shared_experience_penalty(
    learner: QuantileQNet,
    donor: QuantileQNet,
    batch: Sequence[Transition],
    lam: float,
    gamma: float,
    temperature: float = 1.0,
) -> tuple[float, GradBundle]:
    """Importance-weighted value-error penalty on a donor-drawn batch.

    lam * E[ (pi_i(a|s)/pi_j(a|s)) * |V_i(s) - y| ] with the target
    y = r + gamma * (1 - done) * V_i(s') frozen, ratios clipped, and V's
    policy weights frozen at the snapshot.
    """
    obs = _batch_obs(batch)
    if lam == 0.0:
        return 0.0, zero_grads(learner.net)
    actions = np.array([t.action for t in batch], dtype=np.int64)
    rewards = np.array([t.reward for t in batch])
    next_obs = np.stack([t.next_obs for t in batch]).astype(np.float64)
    dones = np.array([t.done for t in batch], dtype=np.float64)
    rows = np.arange(len(batch))

    q_bar = mean_q_batch(learner, obs)
    w = softmax_batch(q_bar, temperature)
    lp_learner = log_softmax_batch(q_bar, temperature)[rows, actions]
    lp_donor = log_softmax_batch(mean_q_batch(donor, obs), temperature)[rows, actions]
    ratios = np.clip(
        np.exp(np.clip(lp_learner - lp_donor, np.log(RATIO_MIN), np.log(RATIO_MAX))),
        RATIO_MIN,
        RATIO_MAX,
    )
    q_bar_next = mean_q_batch(learner, next_obs)
    v_next = value_estimate_rows(q_bar_next, softmax_batch(q_bar_next, temperature))
    y = rewards + gamma * (1.0 - dones) * v_next

    v = value_estimate_rows(q_bar, w)
    resid = v - y
    value = lam * float((ratios * np.abs(resid)).mean())
    coeff = (lam / len(batch)) * ratios * np.sign(resid)
    return value, _grads_from_dqbar(learner, obs, coeff[:, None] * w)


def cross_entropy_penalty(
    learner: QuantileQNet,
    peer_policy_probs: Sequence[Array],
    obs: Array,
    lam: float,
    sign_mode: str = "as_written",
    entropy_floor: float = 1e-3,
    temperature: float = 1.0,
) -> tuple[float, GradBundle]:
    """Pairwise cross-entropy penalty on the learner's own states.

    Value is the printed objective lam * E_s[ sum_j (H(pi_i) + KL(pi_i||pi_j)) ]
    (entropy sign flipped under ``prose``); the gradient replaces each plain
    entropy gradient with its adaptive, inverse-entropy-scaled version while
    KL terms keep exact gradients. Peers are gradient-isolated.
    """
    if sign_mode not in SIGN_MODES:
        raise ConfigError(f"sign_mode must be one of {SIGN_MODES}, got {sign_mode!r}")
    obs = np.asarray(obs, dtype=np.float64)
    if len(obs) == 0:
        raise EmptySourceError("empty batch")
    if lam == 0.0:
        return 0.0, zero_grads(learner.net)
    peers = np.stack([np.asarray(p, dtype=np.float64) for p in peer_policy_probs])
    if np.any(peers <= 0.0):
        raise SupportError("peer policies must be strictly positive")
    peer_logs = np.log(peers)

    q_bar = mean_q_batch(learner, obs)
    log_p = log_softmax_batch(q_bar, temperature)
    p = np.exp(log_p)
    h = -(p * log_p).sum(axis=1)
    n_peers = peers.shape[0]
    sign_h = 1.0 if sign_mode == "as_written" else -1.0
    kl_total = (p[None, :, :] * (log_p[None, :, :] - peer_logs)).sum(axis=2).sum(axis=0)
    value = lam * float((n_peers * sign_h * h + kl_total).mean())

    coef = 1.0 / np.maximum(h, entropy_floor)
    g_p = n_peers * sign_h * coef[:, None] * (-(log_p + 1.0))
    g_p += (log_p + 1.0) * n_peers - peer_logs.sum(axis=0)
    g_p *= lam / len(obs)
    inner = (g_p * p).sum(axis=1, keepdims=True)
    d_qbar = (p * (g_p - inner)) / temperature
    return value, _grads_from_dqbar(learner, obs, d_qbar)
