"""Quantile-regression Q-networks, derived policies, and target machinery.

A quantile Q-network maps an observation to num_actions * num_quantiles
outputs laid out action-major; the mean over quantiles is the scalar
Q-value. Targets are held in a frozen copy updated by Polyak averaging.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import numkit
from .errors import CheckpointError, ParameterError, ShapeError
from .numkit import AdamState, DenseNet, forward_batch, softmax_batch
from .replay import Transition

Array = np.ndarray


def quantile_midpoints(num_quantiles: int) -> Array:
    """tau_hat_k = (2k + 1) / (2K), strictly increasing in (0, 1)."""
    k = np.arange(num_quantiles, dtype=np.float64)
    return (2.0 * k + 1.0) / (2.0 * num_quantiles)


@dataclass
class QuantileQNet:
    """Per-agent quantile network: observation -> (num_actions, num_quantiles)."""

    net: DenseNet
    num_actions: int
    num_quantiles: int

    def __post_init__(self) -> None:
        expected = self.num_actions * self.num_quantiles
        if self.net.output_width != expected:
            raise ShapeError(
                f"network output width {self.net.output_width} != "
                f"num_actions * num_quantiles = {expected}"
            )
        self.taus = quantile_midpoints(self.num_quantiles)

    @property
    def obs_width(self) -> int:
        return self.net.input_width

    def copy(self) -> "QuantileQNet":
        return QuantileQNet(self.net.copy(), self.num_actions, self.num_quantiles)


@dataclass
class TargetNet:
    """Frozen copy of an online network plus its Polyak coefficient."""

    qnet: QuantileQNet
    tau: float

    def __post_init__(self) -> None:
        if not (0.0 < self.tau <= 1.0):
            raise ParameterError(f"tau must be in (0, 1], got {self.tau}")


@dataclass
class PolicyDistribution:
    """Probabilities over discrete actions for one observation."""

    probs: Array
    temperature: float | None


def make_qnet(
    obs_width: int,
    num_actions: int,
    num_quantiles: int,
    hidden_sizes: tuple[int, ...],
    rng: np.random.Generator,
) -> QuantileQNet:
    sizes = [obs_width, *hidden_sizes, num_actions * num_quantiles]
    return QuantileQNet(numkit.init_dense(sizes, rng), num_actions, num_quantiles)


def quantiles_batch(qnet: QuantileQNet, obs: Array, keep_cache: bool = False):
    """Forward pass returning (batch, num_actions, num_quantiles) quantiles."""
    out, cache = forward_batch(qnet.net, obs, keep_cache=keep_cache)
    theta = out.reshape(out.shape[0], qnet.num_actions, qnet.num_quantiles)
    return theta, cache


def mean_q_batch(qnet: QuantileQNet, obs: Array) -> Array:
    """(batch, num_actions) scalar Q-values: mean over quantiles."""
    theta, _ = quantiles_batch(qnet, obs)
    return theta.mean(axis=2)


def mean_q(qnet: QuantileQNet, obs: Array) -> Array:
    """Scalar Q-values for a single observation."""
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim != 1:
        raise ShapeError(f"expected 1-d observation, got shape {obs.shape}")
    return mean_q_batch(qnet, obs[None, :])[0]


def policy_from_q(
    qnet: QuantileQNet,
    obs: Array,
    temperature: float | None = 1.0,
    epsilon: float | None = None,
) -> PolicyDistribution:
    """Policy over actions derived from mean Q-values.

    Softmax mode (``temperature`` set): softmax(Q / temperature), strictly
    positive. Epsilon-greedy mode (``epsilon`` set): (1 - eps) on the argmax
    plus eps / num_actions everywhere, so min prob >= eps / num_actions.
    """
    q = mean_q(qnet, obs)
    if epsilon is not None:
        if not (0.0 <= epsilon <= 1.0):
            raise ParameterError(f"epsilon must be in [0, 1], got {epsilon}")
        probs = np.full(qnet.num_actions, epsilon / qnet.num_actions)
        probs[int(np.argmax(q))] += 1.0 - epsilon
        return PolicyDistribution(probs=probs, temperature=None)
    if temperature is None:
        raise ParameterError("either temperature or epsilon must be provided")
    probs, _ = numkit.softmax_logsumexp(q, temperature)
    return PolicyDistribution(probs=probs, temperature=temperature)


def policy_probs_batch(qnet: QuantileQNet, obs: Array, temperature: float = 1.0) -> Array:
    """(batch, num_actions) softmax policies over mean Q-values."""
    return softmax_batch(mean_q_batch(qnet, obs), temperature)


def bellman_target_quantiles(target: TargetNet, t: Transition, gamma: float) -> Array:
    """K target values r + gamma * (1 - done) * theta_target(s', a*).

    a* is the greedy action under the target network's mean Q at s'; no
    gradient ever flows through the result.
    """
    if not (0.0 <= gamma < 1.0):
        raise ParameterError(f"gamma must be in [0, 1), got {gamma}")
    return bellman_targets_batch(
        target,
        np.asarray(t.next_obs, dtype=np.float64)[None, :],
        np.array([t.reward]),
        np.array([t.done]),
        gamma,
    )[0]


def bellman_targets_batch(
    target: TargetNet, next_obs: Array, rewards: Array, dones: Array, gamma: float
) -> Array:
    """(batch, num_quantiles) distributional Bellman targets."""
    theta, _ = quantiles_batch(target.qnet, next_obs)
    best = np.argmax(theta.mean(axis=2), axis=1)
    chosen = theta[np.arange(theta.shape[0]), best]  # (batch, K)
    cont = gamma * (1.0 - dones.astype(np.float64))
    return rewards[:, None] + cont[:, None] * chosen


def quantile_huber_loss(
    predicted: Array, targets: Array, taus: Array, kappa: float = 1.0
) -> tuple[float, Array]:
    """Quantile Huber loss over one K x K' residual grid and its gradient.

    loss = (1/K) * sum_k sum_k' |tau_k - 1{y_k' < theta_k}| * Huber_kappa(y_k' - theta_k) / kappa
    Gradient is with respect to the predicted quantiles.
    """
    value, grad = quantile_huber_loss_batch(
        np.asarray(predicted)[None, :], np.asarray(targets)[None, :], taus, kappa
    )
    return float(value[0]), grad[0]


def quantile_huber_loss_batch(
    predicted: Array, targets: Array, taus: Array, kappa: float = 1.0
) -> tuple[Array, Array]:
    """Vectorized quantile Huber loss per batch row.

    ``predicted`` is (batch, K), ``targets`` (batch, K'). Returns per-row
    losses (batch,) and gradients w.r.t. predictions (batch, K).
    """
    if kappa <= 0:
        raise ParameterError(f"kappa must be > 0, got {kappa}")
    theta = predicted[:, :, None]  # (B, K, 1)
    y = targets[:, None, :]  # (B, 1, K')
    u = y - theta  # (B, K, K')
    weight = np.abs(taus[None, :, None] - (u < 0.0))
    abs_u = np.abs(u)
    quadratic = abs_u <= kappa
    huber = np.where(quadratic, 0.5 * u * u, kappa * (abs_u - 0.5 * kappa))
    k = predicted.shape[1]
    losses = (weight * huber).sum(axis=(1, 2)) / (kappa * k)
    dhuber = np.where(quadratic, u, kappa * np.sign(u))
    grads = -(weight * dhuber).sum(axis=2) / (kappa * k)
    return losses, grads


def polyak_update(online: QuantileQNet, target: TargetNet, tau: float | None = None) -> TargetNet:
    """theta_target <- (1 - tau) * theta_target + tau * theta_online, elementwise."""
    t = target.tau if tau is None else tau
    if not (0.0 < t <= 1.0):
        raise ParameterError(f"tau must be in (0, 1], got {t}")
    for p_t, p_o in zip(target.qnet.net.param_arrays(), online.net.param_arrays()):
        if p_t.shape != p_o.shape:
            raise ShapeError("online/target parameter shapes diverged")
        p_t *= 1.0 - t
        p_t += t * p_o
    return target


_BLOB_MAGIC = b"MQN1"
_BLOB_VERSION = 1


def save_qnet_blob(qnet: QuantileQNet, adam: AdamState | None = None) -> bytes:
    """Versioned binary blob: layout ints, flat f64 parameters, Adam state."""
    sizes = qnet.net.layer_sizes
    chunks = [
        _BLOB_MAGIC,
        struct.pack("<IIII", _BLOB_VERSION, qnet.num_actions, qnet.num_quantiles, len(sizes)),
        struct.pack(f"<{len(sizes)}I", *sizes),
    ]
    for arr in qnet.net.param_arrays():
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    chunks.append(struct.pack("<B", 1 if adam is not None else 0))
    if adam is not None:
        chunks.append(
            struct.pack(
                "<Qdddd", adam.step_count, adam.learning_rate, adam.beta1, adam.beta2, adam.epsilon
            )
        )
        for arr in adam.m_weights + adam.m_biases + adam.v_weights + adam.v_biases:
            chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(chunks)


def load_qnet_blob(data: bytes) -> tuple[QuantileQNet, AdamState | None]:
    if data[:4] != _BLOB_MAGIC:
        raise CheckpointError("bad network blob magic")
    version, num_actions, num_quantiles, n_sizes = struct.unpack_from("<IIII", data, 4)
    if version != _BLOB_VERSION:
        raise CheckpointError(f"unsupported network blob version {version}")
    offset = 4 + 16
    sizes = list(struct.unpack_from(f"<{n_sizes}I", data, offset))
    offset += 4 * n_sizes

    def read_arrays(shapes):
        nonlocal offset
        out = []
        for shape in shapes:
            n = int(np.prod(shape))
            if offset + 8 * n > len(data):
                raise CheckpointError("truncated network blob")
            out.append(np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(shape).copy())
            offset += 8 * n
        return out

    w_shapes = [(o, i) for i, o in zip(sizes[:-1], sizes[1:])]
    b_shapes = [(o,) for o in sizes[1:]]
    weights = read_arrays(w_shapes)
    biases = read_arrays(b_shapes)
    net = DenseNet(sizes, weights, biases)
    qnet = QuantileQNet(net, num_actions, num_quantiles)
    (has_adam,) = struct.unpack_from("<B", data, offset)
    offset += 1
    adam = None
    if has_adam:
        step_count, lr, b1, b2, eps = struct.unpack_from("<Qdddd", data, offset)
        offset += struct.calcsize("<Qdddd")
        m_w = read_arrays(w_shapes)
        m_b = read_arrays(b_shapes)
        v_w = read_arrays(w_shapes)
        v_b = read_arrays(b_shapes)
        adam = AdamState(lr, b1, b2, eps, int(step_count), m_w, v_w, m_b, v_b)
    if offset != len(data):
        raise CheckpointError("trailing bytes in network blob")
    return qnet, adam
