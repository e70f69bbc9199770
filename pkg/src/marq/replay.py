"""Per-agent experience buffers with FIFO eviction and behavior tracking.

Each agent owns a bounded ring of transitions. The buffer also maintains the
empirical action distribution per (quantized) state of its *current*
contents: counts are incremented on insert and decremented on evict, so the
distribution always matches a from-scratch recount.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptySourceError, OwnershipError, ParameterError, UnseenStateError

Array = np.ndarray


@dataclass
class Transition:
    """One experience tuple tagged with the agent that produced it."""

    agent_id: int
    obs: Array
    action: int
    reward: float
    next_obs: Array
    done: bool


def quantize_key(obs: Array, resolution: float = 1e-3) -> bytes:
    """Hashable state key: observations snapped to a fixed grid."""
    q = np.round(np.asarray(obs, dtype=np.float64) / resolution).astype(np.int64)
    return q.tobytes()


class EmpiricalBehavior:
    """Action counts per state key for the current buffer contents."""

    def __init__(self, num_actions: int):
        self.num_actions = int(num_actions)
        self.counts: dict[bytes, Array] = {}

    def add(self, key: bytes, action: int) -> None:
        row = self.counts.get(key)
        if row is None:
            row = np.zeros(self.num_actions, dtype=np.int64)
            self.counts[key] = row
        row[action] += 1

    def remove(self, key: bytes, action: int) -> None:
        row = self.counts[key]
        row[action] -= 1
        if row.sum() == 0:
            del self.counts[key]

    def state_total(self, key: bytes) -> int:
        row = self.counts.get(key)
        return 0 if row is None else int(row.sum())

    def prob(self, key: bytes, action: int) -> float:
        row = self.counts.get(key)
        if row is None:
            raise UnseenStateError(f"state key never stored: {key!r}")
        return float(row[action]) / float(row.sum())

    def distribution(self, key: bytes) -> Array:
        """Probability vector over actions; raises for unseen states."""
        row = self.counts.get(key)
        if row is None:
            raise UnseenStateError(f"state key never stored: {key!r}")
        return row.astype(np.float64) / float(row.sum())

    def distribution_or_uniform(self, key: bytes) -> Array:
        """Uniform fallback keeps downstream penalties defined early on."""
        row = self.counts.get(key)
        if row is None:
            return np.full(self.num_actions, 1.0 / self.num_actions)
        return row.astype(np.float64) / float(row.sum())


def behavior_prob(eb: EmpiricalBehavior, state_key: bytes, action: int) -> float:
    """Exact count ratio counts(s, a) / total(s) for an observed state."""
    return eb.prob(state_key, action)


class AgentBuffer:
    """Bounded FIFO transition store for a single agent.

    Storage is structure-of-arrays over a ring; ``cursor`` is the next write
    slot. Physical slot order matters for deterministic sampling, so dumps
    preserve it.
    """

    def __init__(
        self,
        capacity: int,
        agent_id: int,
        obs_width: int,
        num_actions: int,
        key_resolution: float = 1e-3,
    ):
        if capacity <= 0:
            raise ParameterError(f"capacity must be positive, got {capacity}")
        self.capacity = int(capacity)
        self.agent_id = int(agent_id)
        self.obs_width = int(obs_width)
        self.num_actions = int(num_actions)
        self.key_resolution = float(key_resolution)
        self.obs = np.zeros((capacity, obs_width))
        self.next_obs = np.zeros((capacity, obs_width))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.cursor = 0
        self.size = 0
        self.behavior = EmpiricalBehavior(num_actions)

    def __len__(self) -> int:
        return self.size

    def state_key(self, obs: Array) -> bytes:
        return quantize_key(obs, self.key_resolution)

    def push(self, t: Transition) -> None:
        if t.agent_id != self.agent_id:
            raise OwnershipError(
                f"transition for agent {t.agent_id} pushed to buffer of agent {self.agent_id}"
            )
        if not (0 <= t.action < self.num_actions):
            raise ParameterError(f"action {t.action} outside [0, {self.num_actions})")
        if not np.isfinite(t.reward):
            raise ParameterError("reward must be finite")
        slot = self.cursor
        if self.size == self.capacity:  # evict the oldest occupant of this slot
            self.behavior.remove(self.state_key(self.obs[slot]), int(self.actions[slot]))
        self.obs[slot] = t.obs
        self.next_obs[slot] = t.next_obs
        self.actions[slot] = t.action
        self.rewards[slot] = t.reward
        self.dones[slot] = t.done
        self.behavior.add(self.state_key(t.obs), t.action)
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def get(self, index: int) -> Transition:
        if not (0 <= index < self.size):
            raise IndexError(f"index {index} outside stored range [0, {self.size})")
        return Transition(
            agent_id=self.agent_id,
            obs=self.obs[index].copy(),
            action=int(self.actions[index]),
            reward=float(self.rewards[index]),
            next_obs=self.next_obs[index].copy(),
            done=bool(self.dones[index]),
        )

    def transitions(self) -> list[Transition]:
        return [self.get(i) for i in range(self.size)]

    def recount_behavior(self) -> EmpiricalBehavior:
        """From-scratch recount over current contents (oracle for the live counts)."""
        eb = EmpiricalBehavior(self.num_actions)
        for i in range(self.size):
            eb.add(self.state_key(self.obs[i]), int(self.actions[i]))
        return eb


def sample_indices(buffer: AgentBuffer, n: int, rng: np.random.Generator) -> Array:
    """Uniform-with-replacement slot indices; deterministic for a fixed rng state."""
    if buffer.size == 0:
        raise EmptySourceError(f"buffer of agent {buffer.agent_id} is empty")
    return rng.integers(0, buffer.size, size=n)


def sample_batch(buffer: AgentBuffer, n: int, rng: np.random.Generator) -> list[Transition]:
    return [buffer.get(int(i)) for i in sample_indices(buffer, n, rng)]


@dataclass
class CrossBatch:
    """Donor-drawn transitions earmarked for a different learning agent."""

    learner_id: int
    donor_id: int
    transitions: list[Transition]


def sample_cross(
    buffers: Sequence[AgentBuffer],
    learner: int,
    donor: int,
    n: int,
    rng: np.random.Generator,
) -> CrossBatch:
    """Draw from the donor's buffer, tagged for the learner's update."""
    batch = sample_batch(buffers[donor], n, rng)
    return CrossBatch(learner_id=learner, donor_id=donor, transitions=batch)


_HEADER = struct.Struct("<i")
_RECORD_FIXED = struct.Struct("<iiiid")  # agent_id, action, done, obs_len, reward


def dump_transitions(transitions: Iterable[Transition]) -> bytes:
    """Length-prefixed little-endian binary stream (f64 floats, i32 ints)."""
    items = list(transitions)
    chunks = [_HEADER.pack(len(items))]
    for t in items:
        obs = np.asarray(t.obs, dtype="<f8")
        nxt = np.asarray(t.next_obs, dtype="<f8")
        chunks.append(
            _RECORD_FIXED.pack(t.agent_id, t.action, int(t.done), obs.size, t.reward)
        )
        chunks.append(obs.tobytes())
        chunks.append(nxt.tobytes())
    return b"".join(chunks)


def load_transitions(data: bytes) -> list[Transition]:
    count = _HEADER.unpack_from(data, 0)[0]
    offset = _HEADER.size
    out = []
    for _ in range(count):
        agent_id, action, done, obs_len, reward = _RECORD_FIXED.unpack_from(data, offset)
        offset += _RECORD_FIXED.size
        obs = np.frombuffer(data, dtype="<f8", count=obs_len, offset=offset).copy()
        offset += 8 * obs_len
        nxt = np.frombuffer(data, dtype="<f8", count=obs_len, offset=offset).copy()
        offset += 8 * obs_len
        out.append(Transition(agent_id, obs, action, reward, nxt, bool(done)))
    return out
