"""Training orchestration: rollouts, per-agent updates, evaluation, sweeps.

A Trainer owns the environment, per-agent replay buffers, the online and
target quantile networks (one shared network with an agent one-hot appended
to observations when parameter sharing is on), and independent RNG streams
for environment seeding, exploration, batch sampling, and evaluation.
Runs are fully deterministic given (config, seed) and can be checkpointed
and resumed without perturbing the parameter trajectory.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml

from . import distq, numkit, replay
from .envs import make_env, write_trajectory_jsonl
from .errors import CheckpointError, ConfigError, LifecycleError, NumericError
from .regularizers import RegularizerConfig, build_loss_context, loss_and_grad

Array = np.ndarray

VARIANTS = ("iql_plain", "cql_only", "marq_shared", "marq_xent")

METRICS_FIELDS = (
    "iteration",
    "env_steps",
    "eval_mean",
    "eval_std",
    "wall_clock_s",
    "loss_td",
    "loss_cql",
    "loss_reg",
)
METRICS_HEADER = ",".join(METRICS_FIELDS)


@dataclass
class TrainerConfig:
    """Full run specification; defaults follow the experiment table where it
    speaks (lr 3e-4, batch 256, tau 0.005, gamma 0.99, 1000 pretraining
    steps, 1000 steps per iteration, 64x64x64 hidden layers, reward scale 1)
    with the replay capacity and evaluation episode count capped for desk
    scale."""

    env: str = "matrix_coordination"
    env_params: dict = field(default_factory=dict)
    variant: str = "marq_xent"
    alpha: float = 1.0
    lam: float = 1.0
    gamma: float = 0.99
    batch_size: int = 256
    learning_rate: float = 3e-4
    tau: float = 0.005
    buffer_capacity: int = 100_000
    pretraining_steps: int = 1000
    steps_per_iteration: int = 1000
    total_env_steps: int = 20_000
    hidden_sizes: tuple[int, ...] = (64, 64, 64)
    num_quantiles: int = 32
    kappa: float = 1.0
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_anneal_frac: float = 0.2
    temperature: float = 1.0
    cql_mode: str = "expectation"
    sign_mode: str = "as_written"
    include_self: bool = True
    entropy_floor: float = 0.1
    eval_episodes: int = 100
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    parameter_sharing: bool = True
    reward_scale: float = 1.0
    behavior_resolution: float = 1e-3

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not (0.0 < self.gamma < 1.0):
            raise ConfigError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.alpha < 0 or self.lam < 0:
            raise ConfigError("alpha and lam must be >= 0")
        if self.learning_rate <= 0 or self.tau <= 0 or self.tau > 1:
            raise ConfigError("learning_rate must be > 0 and tau in (0, 1]")
        for name in (
            "batch_size",
            "buffer_capacity",
            "steps_per_iteration",
            "total_env_steps",
            "num_quantiles",
            "eval_episodes",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.pretraining_steps < 0:
            raise ConfigError("pretraining_steps must be >= 0")
        if not (0.0 <= self.epsilon_end <= self.epsilon_start <= 1.0):
            raise ConfigError("need 0 <= epsilon_end <= epsilon_start <= 1")
        if not (0.0 < self.epsilon_anneal_frac <= 1.0):
            raise ConfigError("epsilon_anneal_frac must be in (0, 1]")
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        self.seeds = tuple(int(s) for s in self.seeds)

    def effective_alpha(self) -> float:
        return 0.0 if self.variant == "iql_plain" else self.alpha

    def effective_lam(self) -> float:
        return self.lam if self.variant in ("marq_shared", "marq_xent") else 0.0

    def reg_variant(self) -> str:
        return {"marq_shared": "shared_experience", "marq_xent": "cross_entropy"}.get(
            self.variant, "none"
        )

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["hidden_sizes"] = list(self.hidden_sizes)
        out["seeds"] = list(self.seeds)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainerConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def save_config(config: TrainerConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True))


def load_config(path: str | Path) -> TrainerConfig:
    data = yaml.safe_load(Path(path).read_text())
    return TrainerConfig.from_dict(data or {})


@dataclass
class MetricsRow:
    iteration: int
    env_steps: int
    eval_mean: float
    eval_std: float
    wall_clock_s: float
    loss_td: float
    loss_cql: float
    loss_reg: float

    def to_csv_line(self) -> str:
        return ",".join(
            [
                str(self.iteration),
                str(self.env_steps),
                repr(self.eval_mean),
                repr(self.eval_std),
                repr(self.wall_clock_s),
                repr(self.loss_td),
                repr(self.loss_cql),
                repr(self.loss_reg),
            ]
        )


def write_metrics_csv(path: str | Path, rows: Sequence[MetricsRow]) -> None:
    lines = [METRICS_HEADER] + [r.to_csv_line() for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics_csv(path: str | Path) -> list[MetricsRow]:
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise ConfigError(f"unexpected metrics header in {path}")
    out = []
    for line in lines[1:]:
        parts = line.split(",")
        out.append(
            MetricsRow(
                iteration=int(parts[0]),
                env_steps=int(parts[1]),
                eval_mean=float(parts[2]),
                eval_std=float(parts[3]),
                wall_clock_s=float(parts[4]),
                loss_td=float(parts[5]),
                loss_cql=float(parts[6]),
                loss_reg=float(parts[7]),
            )
        )
    return out


PolicyFn = Callable[[int, Array, np.random.Generator], int]


def evaluate(
    policy_fn: PolicyFn,
    env,
    episodes: int,
    seed: int,
    dump_path: str | Path | None = None,
) -> tuple[float, float]:
    """Mean and standard deviation of the team return over fresh episodes.

    The evaluation RNG stream is derived only from ``seed``; training
    buffers and generators are never touched.
    """
    rng = np.random.default_rng(seed)
    returns = []
    records = []
    for episode in range(episodes):
        obs = env.reset(seed=int(rng.integers(2**31 - 1)))
        done = False
        total = 0.0
        step = 0
        while not done:
            actions = [policy_fn(i, obs[i], rng) for i in range(env.spec.num_agents)]
            result = env.step(actions)
            total += float(np.mean(result.rewards))
            if dump_path is not None:
                records.append(
                    {
                        "episode": episode,
                        "step": step,
                        "actions": [int(a) for a in actions],
                        "rewards": [float(r) for r in result.rewards],
                        "done": bool(result.done),
                    }
                )
            obs = result.observations
            done = result.done
            step += 1
        returns.append(total)
    if dump_path is not None:
        write_trajectory_jsonl(dump_path, records)
    return float(np.mean(returns)), float(np.std(returns))


class Trainer:
    """Single-run trainer; mutate-in-place, one thread."""

    def __init__(self, config: TrainerConfig, seed: int):
        self.config = config
        self.seed = int(seed)
        self.env = make_env(config.env, **config.env_params)
        self.eval_env = make_env(config.env, **config.env_params)
        spec = self.env.spec
        self.num_agents = spec.num_agents
        self.num_actions = spec.num_actions
        self.obs_width = spec.obs_width
        self.sharing = config.parameter_sharing
        self.input_width = spec.obs_width + (self.num_agents if self.sharing else 0)

        seq = np.random.SeedSequence([self.seed, 0x5EED])
        children = seq.spawn(5)
        rng_init = np.random.default_rng(children[0])
        self.rng_env = np.random.default_rng(children[1])
        self.rng_action = np.random.default_rng(children[2])
        self.rng_sample = np.random.default_rng(children[3])
        self.rng_evalseed = np.random.default_rng(children[4])

        def build_net() -> distq.QuantileQNet:
            return distq.make_qnet(
                self.input_width,
                self.num_actions,
                config.num_quantiles,
                config.hidden_sizes,
                rng_init,
            )

        n_nets = 1 if self.sharing else self.num_agents
        self._online = [build_net() for _ in range(n_nets)]
        self._targets = [distq.TargetNet(net.copy(), config.tau) for net in self._online]
        self._adam = [
            numkit.init_adam(net.net, learning_rate=config.learning_rate)
            for net in self._online
        ]
        self.buffers = [
            replay.AgentBuffer(
                config.buffer_capacity,
                agent_id=i,
                obs_width=spec.obs_width,
                num_actions=self.num_actions,
                key_resolution=config.behavior_resolution,
            )
            for i in range(self.num_agents)
        ]
        self.env_steps = 0
        self.iteration = 0
        self._obs: list[Array] | None = None
        self._reg_own = RegularizerConfig(
            alpha=config.effective_alpha(),
            lam=config.effective_lam() if config.variant == "marq_xent" else 0.0,
            variant="cross_entropy" if config.variant == "marq_xent" else "none",
            entropy_floor=config.entropy_floor,
            cql_mode=config.cql_mode,
            sign_mode=config.sign_mode,
            include_self=config.include_self,
        )
        self._reg_cross = RegularizerConfig(
            alpha=config.effective_alpha(),
            lam=config.effective_lam(),
            variant="shared_experience",
            entropy_floor=config.entropy_floor,
            cql_mode=config.cql_mode,
            sign_mode=config.sign_mode,
            include_self=config.include_self,
        )

    # -- network plumbing ---------------------------------------------------

    def net_for(self, agent: int) -> distq.QuantileQNet:
        return self._online[0 if self.sharing else agent]

    def target_for(self, agent: int) -> distq.TargetNet:
        return self._targets[0 if self.sharing else agent]

    def adam_for(self, agent: int) -> numkit.AdamState:
        return self._adam[0 if self.sharing else agent]

    def net_input(self, agent: int, obs: Array) -> Array:
        if not self.sharing:
            return np.asarray(obs, dtype=np.float64)
        onehot = np.zeros(self.num_agents)
        onehot[agent] = 1.0
        return np.concatenate([np.asarray(obs, dtype=np.float64), onehot])

    def net_inputs(self, agent: int, obs_batch: Array) -> Array:
        if not self.sharing:
            return obs_batch
        onehot = np.zeros((len(obs_batch), self.num_agents))
        onehot[:, agent] = 1.0
        return np.concatenate([obs_batch, onehot], axis=1)

    def greedy_action(self, agent: int, obs: Array) -> int:
        q = distq.mean_q(self.net_for(agent), self.net_input(agent, obs))
        return int(np.argmax(q))

    def greedy_policy_fn(self) -> PolicyFn:
        def policy(agent: int, obs: Array, rng: np.random.Generator) -> int:
            return self.greedy_action(agent, obs)

        return policy

    # -- rollouts -------------------------------------------------------------

    def epsilon(self) -> float:
        cfg = self.config
        anneal = cfg.epsilon_anneal_frac * cfg.total_env_steps
        if self.env_steps >= anneal:
            return cfg.epsilon_end
        frac = self.env_steps / anneal
        return cfg.epsilon_start + (cfg.epsilon_end - cfg.epsilon_start) * frac

    def _select_action(self, agent: int, obs: Array, eps: float) -> int:
        if self.env_steps < self.config.pretraining_steps:
            return int(self.rng_action.integers(0, self.num_actions))
        if self.rng_action.random() < eps:
            return int(self.rng_action.integers(0, self.num_actions))
        return self.greedy_action(agent, obs)

    def env_step(self) -> None:
        if self._obs is None:
            self._obs = self.env.reset(seed=int(self.rng_env.integers(2**31 - 1)))
        eps = self.epsilon()
        obs = self._obs
        actions = [self._select_action(i, obs[i], eps) for i in range(self.num_agents)]
        result = self.env.step(actions)
        scale = self.config.reward_scale
        for i in range(self.num_agents):
            self.buffers[i].push(
                replay.Transition(
                    agent_id=i,
                    obs=obs[i],
                    action=actions[i],
                    reward=scale * result.rewards[i],
                    next_obs=result.observations[i],
                    done=result.done,
                )
            )
        self._obs = None if result.done else result.observations
        self.env_steps += 1

    # -- gradient updates -----------------------------------------------------

    def _gather(self, buffer: replay.AgentBuffer, idx: Array):
        return (
            buffer.obs[idx],
            buffer.actions[idx],
            buffer.rewards[idx],
            buffer.next_obs[idx],
            buffer.dones[idx].astype(np.float64),
        )

    def _behavior_rows(self, buffer: replay.AgentBuffer, raw_obs: Array) -> Array:
        res = self.config.behavior_resolution
        quant = np.round(raw_obs / res).astype(np.int64)
        return np.stack(
            [buffer.behavior.distribution_or_uniform(row.tobytes()) for row in quant]
        )

    def _policy_rows(self, agent: int, raw_obs: Array) -> Array:
        inputs = self.net_inputs(agent, raw_obs)
        return distq.policy_probs_batch(
            self.net_for(agent), inputs, self.config.temperature
        )

    def _apply_update(self, agent: int, ctx) -> dict[str, float]:
        net = self.net_for(agent)
        loss, grads, comps = loss_and_grad(net, ctx)
        if not np.isfinite(loss):
            raise NumericError(
                f"non-finite loss for agent {agent} at env step {self.env_steps}: {comps}"
            )
        numkit.adam_step(net.net, grads, self.adam_for(agent))
        return comps

    def update_own_batch(self, agent: int) -> dict[str, float]:
        cfg = self.config
        buffer = self.buffers[agent]
        idx = replay.sample_indices(buffer, cfg.batch_size, self.rng_sample)
        raw_obs, actions, rewards, raw_next, dones = self._gather(buffer, idx)
        reg = self._reg_own
        behavior = (
            self._behavior_rows(buffer, raw_obs) if reg.alpha != 0.0 else None
        )
        peers = None
        if reg.variant == "cross_entropy" and reg.lam != 0.0:
            peer_ids = [
                j for j in range(self.num_agents) if reg.include_self or j != agent
            ]
            peers = [self._policy_rows(j, raw_obs) for j in peer_ids]
        ctx = build_loss_context(
            self.net_for(agent),
            self.target_for(agent),
            self.net_inputs(agent, raw_obs),
            actions,
            rewards,
            self.net_inputs(agent, raw_next),
            dones,
            reg,
            gamma=cfg.gamma,
            kappa=cfg.kappa,
            temperature=cfg.temperature,
            behavior_probs=behavior,
            peer_policy_probs=peers,
        )
        return self._apply_update(agent, ctx)

    def update_cross_batch(self, agent: int, donor: int) -> dict[str, float]:
        cfg = self.config
        buffer = self.buffers[donor]
        idx = replay.sample_indices(buffer, cfg.batch_size, self.rng_sample)
        raw_obs, actions, rewards, raw_next, dones = self._gather(buffer, idx)
        reg = self._reg_cross
        behavior = (
            self._behavior_rows(buffer, raw_obs) if reg.alpha != 0.0 else None
        )
        donor_inputs = self.net_inputs(donor, raw_obs)
        donor_logits = distq.mean_q_batch(self.net_for(donor), donor_inputs)
        donor_log_probs = numkit.log_softmax_batch(donor_logits, cfg.temperature)[
            np.arange(len(actions)), actions
        ]
        ctx = build_loss_context(
            self.net_for(agent),
            self.target_for(agent),
            self.net_inputs(agent, raw_obs),
            actions,
            rewards,
            self.net_inputs(agent, raw_next),
            dones,
            reg,
            gamma=cfg.gamma,
            kappa=cfg.kappa,
            temperature=cfg.temperature,
            behavior_probs=behavior,
            donor_log_probs=donor_log_probs,
        )
        return self._apply_update(agent, ctx)

    def _agent_updates(self, agent: int, totals: dict[str, float]) -> None:
        comps = self.update_own_batch(agent)
        for key, value in comps.items():
            totals[key] += value
        totals["count"] += 1
        if self.config.variant == "marq_shared" and self.config.effective_lam() != 0.0:
            for donor in range(self.num_agents):
                if donor == agent:
                    continue
                comps = self.update_cross_batch(agent, donor)
                for key, value in comps.items():
                    totals[key] += value
                totals["count"] += 1
        distq.polyak_update(self.net_for(agent), self.target_for(agent))

    # -- driver ---------------------------------------------------------------

    def pretraining_fill(self) -> None:
        while self.env_steps < self.config.pretraining_steps:
            self.env_step()

    def train_iteration(self) -> MetricsRow:
        cfg = self.config
        if self.env_steps < cfg.pretraining_steps:
            raise LifecycleError("run pretraining_fill() before training iterations")
        start = time.perf_counter()
        totals = {"td": 0.0, "cql": 0.0, "reg": 0.0, "count": 0}
        steps = min(cfg.steps_per_iteration, cfg.total_env_steps - self.env_steps)
        for _ in range(steps):
            self.env_step()
            for agent in range(self.num_agents):
                self._agent_updates(agent, totals)
        self.iteration += 1
        mean, std = self.evaluate_policy()
        denom = max(totals["count"], 1)
        return MetricsRow(
            iteration=self.iteration,
            env_steps=self.env_steps,
            eval_mean=mean,
            eval_std=std,
            wall_clock_s=time.perf_counter() - start,
            loss_td=totals["td"] / denom,
            loss_cql=totals["cql"] / denom,
            loss_reg=totals["reg"] / denom,
        )

    def evaluate_policy(self, episodes: int | None = None) -> tuple[float, float]:
        n = self.config.eval_episodes if episodes is None else episodes
        eval_seed = int(self.rng_evalseed.integers(2**31 - 1))
        return evaluate(self.greedy_policy_fn(), self.eval_env, n, eval_seed)

    def run(
        self,
        out_dir: str | Path | None = None,
        stop_threshold: float | None = None,
    ) -> list[MetricsRow]:
        """Pretraining fill, then iterations until the step budget.

        ``stop_threshold`` ends the run early once the evaluation mean
        reaches it (used by verification suites to keep runtimes short).
        """
        out = Path(out_dir) if out_dir is not None else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
        self.pretraining_fill()
        rows: list[MetricsRow] = []
        stopped_early = False
        while self.env_steps < self.config.total_env_steps:
            row = self.train_iteration()
            rows.append(row)
            if stop_threshold is not None and row.eval_mean >= stop_threshold:
                stopped_early = True
                break
        if out is not None:
            write_metrics_csv(out / "metrics.csv", rows)
            summary = {
                "env": self.config.env,
                "variant": self.config.variant,
                "lam": self.config.lam,
                "seed": self.seed,
                "env_steps": self.env_steps,
                "iterations": self.iteration,
                "final_mean": rows[-1].eval_mean if rows else None,
                "final_std": rows[-1].eval_std if rows else None,
                "stopped_early": stopped_early,
            }
            (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2))
            checkpoint_save(self, out / "final.ckpt")
        return rows


# ---------------------------------------------------------------------------
# Checkpointing

_CKPT_MAGIC = b"MARQCKP1"
_CKPT_VERSION = 1


def _rng_state(gen: np.random.Generator) -> dict:
    return gen.bit_generator.state


def _restore_rng(state: dict) -> np.random.Generator:
    gen = np.random.default_rng()
    gen.bit_generator.state = state
    return gen


def _buffer_blob(buf: replay.AgentBuffer) -> bytes:
    head = struct.pack(
        "<qqqqqd",
        buf.capacity,
        buf.size,
        buf.cursor,
        buf.obs_width,
        buf.num_actions,
        buf.key_resolution,
    )
    n = buf.size
    parts = [
        head,
        np.ascontiguousarray(buf.obs[:n], dtype="<f8").tobytes(),
        np.ascontiguousarray(buf.next_obs[:n], dtype="<f8").tobytes(),
        np.ascontiguousarray(buf.actions[:n], dtype="<i8").tobytes(),
        np.ascontiguousarray(buf.rewards[:n], dtype="<f8").tobytes(),
        np.ascontiguousarray(buf.dones[:n], dtype="<i1").tobytes(),
    ]
    return b"".join(parts)


def _buffer_from_blob(data: bytes, agent_id: int) -> replay.AgentBuffer:
    capacity, size, cursor, obs_width, num_actions, resolution = struct.unpack_from(
        "<qqqqqd", data, 0
    )
    offset = struct.calcsize("<qqqqqd")
    buf = replay.AgentBuffer(capacity, agent_id, obs_width, num_actions, resolution)

    def take(count, dtype, itemsize):
        nonlocal offset
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=offset).copy()
        offset += count * itemsize
        return arr

    buf.obs[:size] = take(size * obs_width, "<f8", 8).reshape(size, obs_width)
    buf.next_obs[:size] = take(size * obs_width, "<f8", 8).reshape(size, obs_width)
    buf.actions[:size] = take(size, "<i8", 8)
    buf.rewards[:size] = take(size, "<f8", 8)
    buf.dones[:size] = take(size, "<i1", 1).astype(bool)
    buf.size = size
    buf.cursor = cursor
    buf.behavior = buf.recount_behavior()
    return buf


def checkpoint_save(trainer: Trainer, path: str | Path) -> None:
    """Versioned binary checkpoint with a trailing CRC32.

    Contains the config echo, counters, RNG states, environment state, all
    network parameters with Adam moments, targets, and buffers. Saving,
    loading, and saving again produces byte-identical files.
    """
    meta = {
        "version": _CKPT_VERSION,
        "config": trainer.config.to_dict(),
        "seed": trainer.seed,
        "env_steps": trainer.env_steps,
        "iteration": trainer.iteration,
        "sharing": trainer.sharing,
        "num_agents": trainer.num_agents,
        "rng": {
            "env": _rng_state(trainer.rng_env),
            "action": _rng_state(trainer.rng_action),
            "sample": _rng_state(trainer.rng_sample),
            "evalseed": _rng_state(trainer.rng_evalseed),
        },
        "env_state": trainer.env.get_state(),
        "current_obs": None
        if trainer._obs is None
        else [list(map(float, o)) for o in trainer._obs],
    }
    blobs: list[bytes] = []
    for net, target, adam in zip(trainer._online, trainer._targets, trainer._adam):
        blobs.append(distq.save_qnet_blob(net, adam))
        blobs.append(distq.save_qnet_blob(target.qnet))
    for buf in trainer.buffers:
        blobs.append(_buffer_blob(buf))
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    payload = [_CKPT_MAGIC, struct.pack("<II", len(meta_bytes), len(blobs)), meta_bytes]
    for blob in blobs:
        payload.append(struct.pack("<Q", len(blob)))
        payload.append(blob)
    body = b"".join(payload)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def checkpoint_load(path: str | Path) -> Trainer:
    data = Path(path).read_bytes()
    if len(data) < len(_CKPT_MAGIC) + 12 or data[: len(_CKPT_MAGIC)] != _CKPT_MAGIC:
        raise CheckpointError(f"not a trainer checkpoint: {path}")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"checkpoint CRC mismatch: {path}")
    offset = len(_CKPT_MAGIC)
    meta_len, n_blobs = struct.unpack_from("<II", body, offset)
    offset += 8
    meta = json.loads(body[offset : offset + meta_len].decode("utf-8"))
    offset += meta_len
    if meta["version"] != _CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta['version']}")
    blobs = []
    for _ in range(n_blobs):
        (blob_len,) = struct.unpack_from("<Q", body, offset)
        offset += 8
        blobs.append(body[offset : offset + blob_len])
        offset += blob_len
    if offset != len(body):
        raise CheckpointError("trailing bytes in checkpoint")

    config = TrainerConfig.from_dict(meta["config"])
    trainer = Trainer(config, meta["seed"])
    trainer.env_steps = meta["env_steps"]
    trainer.iteration = meta["iteration"]
    trainer.rng_env = _restore_rng(meta["rng"]["env"])
    trainer.rng_action = _restore_rng(meta["rng"]["action"])
    trainer.rng_sample = _restore_rng(meta["rng"]["sample"])
    trainer.rng_evalseed = _restore_rng(meta["rng"]["evalseed"])
    trainer.env.set_state(meta["env_state"])
    trainer._obs = (
        None
        if meta["current_obs"] is None
        else [np.array(o, dtype=np.float64) for o in meta["current_obs"]]
    )
    n_nets = len(trainer._online)
    idx = 0
    for i in range(n_nets):
        qnet, adam = distq.load_qnet_blob(blobs[idx])
        target_qnet, _ = distq.load_qnet_blob(blobs[idx + 1])
        idx += 2
        trainer._online[i] = qnet
        trainer._adam[i] = adam
        trainer._targets[i] = distq.TargetNet(target_qnet, config.tau)
    for agent in range(trainer.num_agents):
        trainer.buffers[agent] = _buffer_from_blob(blobs[idx], agent)
        idx += 1
    return trainer


# ---------------------------------------------------------------------------
# Lambda sweep


def run_sweep(
    base_config: TrainerConfig,
    lambda_values: Sequence[float],
    out_dir: str | Path,
    seeds: Sequence[int] | None = None,
    stop_threshold: float | None = None,
) -> dict:
    """One full run per (lambda, seed); failures are recorded, not fatal.

    Each run writes an aligned metrics.csv and summary.json under
    ``out_dir/lambda_<value>/seed_<seed>/``; the returned manifest is also
    written to ``out_dir/sweep_manifest.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    use_seeds = list(base_config.seeds if seeds is None else seeds)
    manifest: dict = {"lambda_values": [float(v) for v in lambda_values], "runs": []}
    for lam in lambda_values:
        if lam < 0:
            raise ConfigError(f"lambda values must be >= 0, got {lam}")
        for seed in use_seeds:
            run_dir = out / f"lambda_{lam:g}" / f"seed_{seed}"
            record = {"lam": float(lam), "seed": int(seed), "dir": str(run_dir)}
            try:
                config = dataclasses.replace(base_config, lam=float(lam))
                trainer = Trainer(config, seed)
                rows = trainer.run(out_dir=run_dir, stop_threshold=stop_threshold)
                record["status"] = "ok"
                record["final_mean"] = rows[-1].eval_mean if rows else None
            except Exception as exc:  # keep sweeping past individual failures
                record["status"] = f"error: {type(exc).__name__}: {exc}"
            manifest["runs"].append(record)
    (out / "sweep_manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2))
    return manifest
