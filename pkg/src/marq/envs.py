"""Desk-scale cooperative environments with partial observations.

Three kinds are provided. ``matrix_coordination`` is a one-shot matrix game
with a single optimal joint action, a deceptive near-optimal pair, and a
miscoordination penalty. ``grid_spread`` places agents and landmarks on a
small grid with a shared coverage reward and collision penalties.
``corridor_keepup`` is a two-paddle rally in a discretized corridor that
ends on the first miss.

All three are fully deterministic given (seed, action sequence), deliver the
same team reward to every agent, and expose exact best-return enumeration
for the small cases used in verification.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ActionError, CapabilityError, ConfigError, LifecycleError

Array = np.ndarray


@dataclass(frozen=True)
class EnvSpec:
    """Static shape information for one environment instance."""

    num_agents: int
    obs_width: int
    num_actions: int
    horizon: int
    reward_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.num_agents <= 0 or self.obs_width <= 0 or self.horizon <= 0:
            raise ConfigError("num_agents, obs_width and horizon must be positive")
        if self.num_actions < 2:
            raise ConfigError(f"action count must be >= 2, got {self.num_actions}")


@dataclass
class StepResult:
    observations: list[Array]
    rewards: list[float]
    done: bool
    info: dict = field(default_factory=dict)


class MatrixCoordination:
    """Single-step coordination game.

    The joint action where everyone plays 0 pays +1 per agent; everyone
    playing 1 pays +0.8 (the deceptive near-optimum); any other combination
    pays -0.5. Observations are a constant vector, so the whole difficulty
    is coordinated action selection.
    """

    OPTIMAL_REWARD = 1.0
    DECEPTIVE_REWARD = 0.8
    MISCOORDINATION_REWARD = -0.5
    NUM_ACTIONS = 3

    def __init__(self, num_agents: int = 2):
        self.spec = EnvSpec(
            num_agents=num_agents, obs_width=1, num_actions=self.NUM_ACTIONS, horizon=1
        )
        self._done = True

    def reward_bounds(self) -> tuple[float, float]:
        return (self.MISCOORDINATION_REWARD, self.OPTIMAL_REWARD)

    def payoff(self, joint_action: Sequence[int]) -> float:
        acts = list(joint_action)
        if all(a == 0 for a in acts):
            return self.OPTIMAL_REWARD
        if all(a == 1 for a in acts):
            return self.DECEPTIVE_REWARD
        return self.MISCOORDINATION_REWARD

    def _observations(self) -> list[Array]:
        return [np.ones(1) for _ in range(self.spec.num_agents)]

    def reset(self, seed: int | None = None) -> list[Array]:
        self._done = False
        return self._observations()

    def step(self, joint_action: Sequence[int]) -> StepResult:
        if self._done:
            raise LifecycleError("step() after episode end; call reset()")
        _check_actions(joint_action, self.spec)
        reward = self.payoff(joint_action)
        self._done = True
        return StepResult(
            observations=self._observations(),
            rewards=[reward] * self.spec.num_agents,
            done=True,
            info={"joint_action": list(joint_action)},
        )

    def get_state(self) -> dict:
        return {"done": self._done}

    def set_state(self, state: dict) -> None:
        self._done = bool(state["done"])


def grid_observation(
    positions: Sequence[tuple[int, int]],
    landmarks: Sequence[tuple[int, int]],
    agent: int,
    size: int,
    view_radius: int,
) -> Array:
    """Observation for one agent given explicit state.

    Own position, landmark offsets (landmarks are static and always
    visible), then per other agent either its offset plus a visibility flag
    or zeros when it sits outside the view radius. Exposed as a pure
    function so the partial-observability contract is directly testable.
    """
    scale = float(size - 1)
    r, c = positions[agent]
    parts = [r / scale, c / scale]
    for lr, lc in landmarks:
        parts.extend([(lr - r) / scale, (lc - c) / scale])
    for j, (jr, jc) in enumerate(positions):
        if j == agent:
            continue
        if abs(jr - r) + abs(jc - c) <= view_radius:
            parts.extend([(jr - r) / scale, (jc - c) / scale, 1.0])
        else:
            parts.extend([0.0, 0.0, 0.0])
    return np.array(parts)


class GridSpread:
    """Agents cover landmarks on a small grid under a shared team reward.

    Actions: 0 stay, 1 up, 2 down, 3 left, 4 right (moves clamp at walls).
    Per step every agent receives -sum over landmarks of the Manhattan
    distance to the nearest agent, minus 1 per colliding agent pair.
    """

    NUM_ACTIONS = 5
    MOVES = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))

    def __init__(
        self,
        num_agents: int = 2,
        size: int = 5,
        num_landmarks: int | None = None,
        horizon: int = 12,
        view_radius: int = 2,
        init_positions: Sequence[tuple[int, int]] | None = None,
        init_landmarks: Sequence[tuple[int, int]] | None = None,
    ):
        self.size = size
        self.view_radius = view_radius
        self.num_landmarks = num_agents if num_landmarks is None else num_landmarks
        obs_width = 2 + 2 * self.num_landmarks + 3 * (num_agents - 1)
        self.spec = EnvSpec(
            num_agents=num_agents,
            obs_width=obs_width,
            num_actions=self.NUM_ACTIONS,
            horizon=horizon,
        )
        self._fixed_positions = list(init_positions) if init_positions is not None else None
        self._fixed_landmarks = list(init_landmarks) if init_landmarks is not None else None
        self._done = True
        self.positions: list[tuple[int, int]] = []
        self.landmarks: list[tuple[int, int]] = []
        self._steps = 0

    def reward_bounds(self) -> tuple[float, float]:
        max_dist = 2 * (self.size - 1)
        n = self.spec.num_agents
        return (-self.num_landmarks * max_dist - n * (n - 1) / 2.0, 0.0)

    def _observations(self) -> list[Array]:
        return [
            grid_observation(self.positions, self.landmarks, i, self.size, self.view_radius)
            for i in range(self.spec.num_agents)
        ]

    def reset(self, seed: int | None = None) -> list[Array]:
        if self._fixed_positions is not None and self._fixed_landmarks is not None:
            self.positions = list(self._fixed_positions)
            self.landmarks = list(self._fixed_landmarks)
        else:
            rng = np.random.default_rng(seed)
            cells = [(r, c) for r in range(self.size) for c in range(self.size)]
            picked = rng.choice(len(cells), size=self.spec.num_agents, replace=False)
            self.positions = [cells[i] for i in picked]
            picked = rng.choice(len(cells), size=self.num_landmarks, replace=False)
            self.landmarks = [cells[i] for i in picked]
        self._steps = 0
        self._done = False
        return self._observations()

    def team_reward(self, positions: Sequence[tuple[int, int]]) -> float:
        total = 0.0
        for lr, lc in self.landmarks:
            total -= min(abs(lr - r) + abs(lc - c) for r, c in positions)
        for i in range(len(positions)):
            for j in range(i + 1, len(positions)):
                if positions[i] == positions[j]:
                    total -= 1.0
        return total

    def _move(self, pos: tuple[int, int], action: int) -> tuple[int, int]:
        dr, dc = self.MOVES[action]
        return (
            min(max(pos[0] + dr, 0), self.size - 1),
            min(max(pos[1] + dc, 0), self.size - 1),
        )

    def step(self, joint_action: Sequence[int]) -> StepResult:
        if self._done:
            raise LifecycleError("step() after episode end; call reset()")
        _check_actions(joint_action, self.spec)
        self.positions = [self._move(p, a) for p, a in zip(self.positions, joint_action)]
        reward = self.team_reward(self.positions)
        lo, hi = self.reward_bounds()
        assert lo <= reward <= hi
        self._steps += 1
        self._done = self._steps >= self.spec.horizon
        collisions = sum(
            1
            for i in range(len(self.positions))
            for j in range(i + 1, len(self.positions))
            if self.positions[i] == self.positions[j]
        )
        return StepResult(
            observations=self._observations(),
            rewards=[reward] * self.spec.num_agents,
            done=self._done,
            info={"collisions": collisions},
        )

    def get_state(self) -> dict:
        return {
            "done": self._done,
            "steps": self._steps,
            "positions": [list(p) for p in self.positions],
            "landmarks": [list(p) for p in self.landmarks],
        }

    def set_state(self, state: dict) -> None:
        self._done = bool(state["done"])
        self._steps = int(state["steps"])
        self.positions = [tuple(p) for p in state["positions"]]
        self.landmarks = [tuple(p) for p in state["landmarks"]]


class CorridorKeepup:
    """Two paddles rally a ball along a discretized corridor.

    The ball moves one cell per step between the ends; each agent guards one
    end with a paddle that can stay/up/down across ``lanes`` lanes. When the
    ball reaches an end it bounces if that agent's paddle is on the ball's
    lane, otherwise the episode ends. Every surviving step pays +0.1 to both
    agents; the miss step pays 0.

    RNG protocol (mirrored by replay fixtures): ``reset`` seeds a dedicated
    generator, draws the initial direction (left if the first uniform is
    < 0.5) then the initial lane via ``integers(0, lanes)``; every bounce
    draws one new lane the same way. Paddles move before the ball.
    """

    NUM_ACTIONS = 3
    STEP_REWARD = 0.1

    def __init__(self, length: int = 7, lanes: int = 3, horizon: int = 200):
        if length < 3:
            raise ConfigError(f"corridor length must be >= 3, got {length}")
        self.length = length
        self.lanes = lanes
        obs_width = 2 + lanes + lanes  # ball position, direction, ball lane, own paddle
        self.spec = EnvSpec(num_agents=2, obs_width=obs_width, num_actions=3, horizon=horizon)
        self._done = True
        self._rng = np.random.default_rng()
        self.ball_pos = length // 2
        self.direction = -1
        self.ball_lane = 0
        self.paddles = [lanes // 2, lanes // 2]
        self._steps = 0

    def reward_bounds(self) -> tuple[float, float]:
        return (0.0, self.STEP_REWARD)

    def _observations(self) -> list[Array]:
        obs = []
        for agent in range(2):
            ball_lane = np.zeros(self.lanes)
            ball_lane[self.ball_lane] = 1.0
            paddle = np.zeros(self.lanes)
            paddle[self.paddles[agent]] = 1.0
            obs.append(
                np.concatenate(
                    [
                        [self.ball_pos / (self.length - 1), float(self.direction)],
                        ball_lane,
                        paddle,
                    ]
                )
            )
        return obs

    def reset(self, seed: int | None = None) -> list[Array]:
        self._rng = np.random.default_rng(seed)
        self.ball_pos = self.length // 2
        self.direction = -1 if self._rng.random() < 0.5 else 1
        self.ball_lane = int(self._rng.integers(0, self.lanes))
        self.paddles = [self.lanes // 2, self.lanes // 2]
        self._steps = 0
        self._done = False
        return self._observations()

    def step(self, joint_action: Sequence[int]) -> StepResult:
        if self._done:
            raise LifecycleError("step() after episode end; call reset()")
        _check_actions(joint_action, self.spec)
        for agent, action in enumerate(joint_action):
            if action == 1:
                self.paddles[agent] = min(self.paddles[agent] + 1, self.lanes - 1)
            elif action == 2:
                self.paddles[agent] = max(self.paddles[agent] - 1, 0)
        self.ball_pos += self.direction
        missed = False
        bounced = False
        if self.ball_pos == 0:
            if self.paddles[0] == self.ball_lane:
                self.direction = 1
                self.ball_lane = int(self._rng.integers(0, self.lanes))
                bounced = True
            else:
                missed = True
        elif self.ball_pos == self.length - 1:
            if self.paddles[1] == self.ball_lane:
                self.direction = -1
                self.ball_lane = int(self._rng.integers(0, self.lanes))
                bounced = True
            else:
                missed = True
        self._steps += 1
        self._done = missed or self._steps >= self.spec.horizon
        reward = 0.0 if missed else self.STEP_REWARD
        return StepResult(
            observations=self._observations(),
            rewards=[reward, reward],
            done=self._done,
            info={"missed": missed, "bounced": bounced},
        )

    def get_state(self) -> dict:
        return {
            "done": self._done,
            "steps": self._steps,
            "ball_pos": self.ball_pos,
            "direction": self.direction,
            "ball_lane": self.ball_lane,
            "paddles": list(self.paddles),
            "rng": self._rng.bit_generator.state,
        }

    def set_state(self, state: dict) -> None:
        self._done = bool(state["done"])
        self._steps = int(state["steps"])
        self.ball_pos = int(state["ball_pos"])
        self.direction = int(state["direction"])
        self.ball_lane = int(state["ball_lane"])
        self.paddles = [int(p) for p in state["paddles"]]
        self._rng = np.random.default_rng()
        self._rng.bit_generator.state = state["rng"]


def _check_actions(joint_action: Sequence[int], spec: EnvSpec) -> None:
    if len(joint_action) != spec.num_agents:
        raise ActionError(
            f"expected {spec.num_agents} actions, got {len(joint_action)}"
        )
    for agent, a in enumerate(joint_action):
        if not (0 <= int(a) < spec.num_actions):
            raise ActionError(
                f"agent {agent}: action {a} outside [0, {spec.num_actions})"
            )


ENV_KINDS = {
    "matrix_coordination": MatrixCoordination,
    "grid_spread": GridSpread,
    "corridor_keepup": CorridorKeepup,
}


def make_env(kind: str, **params):
    if kind not in ENV_KINDS:
        raise ConfigError(f"unknown environment kind {kind!r}; known: {sorted(ENV_KINDS)}")
    return ENV_KINDS[kind](**params)


def optimal_return(env) -> float:
    """Exact best achievable team return by exhaustive enumeration.

    Supported for matrix_coordination, and for grid_spread with at most 3
    agents and horizon at most 6 (deterministic dynamics let the search run
    over joint positions instead of raw action sequences).
    """
    if isinstance(env, MatrixCoordination):
        joint = product(range(env.spec.num_actions), repeat=env.spec.num_agents)
        return max(env.payoff(j) for j in joint)
    if isinstance(env, GridSpread):
        if env.spec.num_agents > 3 or env.spec.horizon > 6:
            raise CapabilityError(
                "exact enumeration supports grid_spread with <= 3 agents and horizon <= 6"
            )
        if env._done:
            raise LifecycleError("reset the environment before asking for its optimal return")
        joint_actions = list(product(range(env.NUM_ACTIONS), repeat=env.spec.num_agents))
        horizon = env.spec.horizon

        @lru_cache(maxsize=None)
        def best(positions: tuple[tuple[int, int], ...], steps_left: int) -> float:
            if steps_left == 0:
                return 0.0
            out = -np.inf
            for acts in joint_actions:
                moved = tuple(env._move(p, a) for p, a in zip(positions, acts))
                value = env.team_reward(moved) + best(moved, steps_left - 1)
                if value > out:
                    out = value
            return out

        result = best(tuple(env.positions), horizon)
        best.cache_clear()
        return float(result)
    raise CapabilityError(f"exact enumeration not supported for {type(env).__name__}")


def write_trajectory_jsonl(path: str | Path, records: Sequence[dict]) -> None:
    """Debug dump: one JSON object per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
