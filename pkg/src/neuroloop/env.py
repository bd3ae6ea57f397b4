"""Barrier-enclosed odor gridworld.

The outer ring of cells is wall; the agent and the food live in the
interior. The agent observes a single tri-state odor sensor and acts with
forward / turn-left / turn-right. Food is relocated from a seeded stream
that only advances on acquisition, so the food sequence for a given seed
does not depend on the policy.
"""
from __future__ import annotations

import copy
import enum
import functools
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

FOOD_REWARD = 2.0
COLLISION_PENALTY = -0.2


class ConfigError(ValueError):
    """Invalid environment configuration."""


class Heading(enum.IntEnum):
    N = 0
    E = 1
    S = 2
    W = 3


class Action(enum.IntEnum):
    FORWARD = 0
    LEFT = 1
    RIGHT = 2


class Event(str, enum.Enum):
    NONE = "none"
    FOOD_ACQUIRED = "food_acquired"
    COLLISION = "collision"


# y grows northwards
_DELTAS = {Heading.N: (0, 1), Heading.E: (1, 0), Heading.S: (0, -1), Heading.W: (-1, 0)}


@dataclass(frozen=True)
class EnvConfig:
    width: int = 6
    height: int = 6
    lam: float = 0.5
    seed: int = 0
    shaping_scale: float = 1.0

    def __post_init__(self):
        if self.width < 3 or self.height < 3:
            raise ConfigError(f"grid must be at least 3x3, got {self.width}x{self.height}")
        if not self.lam > 0:
            raise ConfigError(f"lam must be positive, got {self.lam}")
        if self.shaping_scale < 0:
            raise ConfigError(f"shaping_scale must be >= 0, got {self.shaping_scale}")

    @property
    def interior(self) -> list[tuple[int, int]]:
        return [(x, y) for y in range(1, self.height - 1) for x in range(1, self.width - 1)]

    def is_barrier(self, x: int, y: int) -> bool:
        return x <= 0 or y <= 0 or x >= self.width - 1 or y >= self.height - 1

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "lam": self.lam,
                "seed": self.seed, "shaping_scale": self.shaping_scale}


@dataclass(frozen=True)
class AgentPose:
    x: int
    y: int
    heading: Heading


@dataclass(frozen=True)
class EnvState:
    config: EnvConfig
    pose: AgentPose
    food: tuple[int, int]
    step_count: int = 0
    food_count: int = 0
    cumulative_reward: float = 0.0
    rng: np.random.Generator = field(default=None, repr=False, compare=False)

    def key(self) -> tuple:
        """Hashable summary used for equality checks in tests and traces."""
        return (self.pose, self.food, self.step_count, self.food_count,
                self.cumulative_reward, json.dumps(self.rng.bit_generator.state, sort_keys=True))


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    sensor: int
    event: Event


def _relocate(rng: np.random.Generator, config: EnvConfig, exclude: tuple[int, int]) -> tuple[int, int]:
    cells = [c for c in config.interior if c != exclude]
    return cells[int(rng.integers(len(cells)))]


def reset(config: EnvConfig, seed: int | None = None) -> EnvState:
    """Place agent and food from the seeded stream.

    ``seed`` overrides ``config.seed`` when given.
    """
    cells = config.interior
    if len(cells) < 2:
        raise ConfigError("interior must hold at least two cells to place agent and food")
    rng = np.random.default_rng(config.seed if seed is None else seed)
    ax, ay = cells[int(rng.integers(len(cells)))]
    heading = Heading(int(rng.integers(4)))
    food = _relocate(rng, config, (ax, ay))
    return EnvState(config=config, pose=AgentPose(ax, ay, heading), food=food, rng=rng)


def odor_intensity(pos: Sequence[float], food: Sequence[float], lam: float) -> float:
    d = math.hypot(pos[0] - food[0], pos[1] - food[1])
    return math.exp(-lam * d)


def _bearing_components(pose: AgentPose, food: tuple[int, int]) -> tuple[int, int]:
    """(ahead, leftward) components of the food offset in the agent frame."""
    hx, hy = _DELTAS[pose.heading]
    vx, vy = food[0] - pose.x, food[1] - pose.y
    ahead = hx * vx + hy * vy
    leftward = hx * vy - hy * vx
    return ahead, leftward


def sense(state: EnvState) -> int:
    """-1 if the odor peak is to the left, 0 if in front, +1 if right or behind.

    Front covers bearings within 45 degrees of the heading (edges included);
    left covers the open interval (45, 135) degrees counter-clockwise.
    Evaluated on integer offsets so bucket edges are exact.
    """
    ahead, leftward = _bearing_components(state.pose, state.food)
    if ahead == 0 and leftward == 0:
        return 0
    if ahead >= abs(leftward):
        return 0
    if leftward > abs(ahead):
        return -1
    return 1


def bearing_degrees(state: EnvState) -> float:
    """Signed bearing of the food, negative to the left, in (-180, 180]."""
    ahead, leftward = _bearing_components(state.pose, state.food)
    theta = -math.degrees(math.atan2(leftward, ahead))
    return 180.0 if theta == -180.0 else theta


def step(state: EnvState, action: Action | int) -> tuple[EnvState, StepOutcome]:
    action = Action(action)
    cfg = state.config
    pose = state.pose
    rng = state.rng
    food = state.food
    food_count = state.food_count

    if action is Action.LEFT:
        new_pose = AgentPose(pose.x, pose.y, Heading((pose.heading - 1) % 4))
        event = Event.NONE
    elif action is Action.RIGHT:
        new_pose = AgentPose(pose.x, pose.y, Heading((pose.heading + 1) % 4))
        event = Event.NONE
    else:
        dx, dy = _DELTAS[pose.heading]
        tx, ty = pose.x + dx, pose.y + dy
        if cfg.is_barrier(tx, ty):
            new_pose = pose
            event = Event.COLLISION
        else:
            new_pose = AgentPose(tx, ty, pose.heading)
            event = Event.FOOD_ACQUIRED if (tx, ty) == food else Event.NONE

    if event is Event.COLLISION:
        reward = COLLISION_PENALTY
    elif event is Event.FOOD_ACQUIRED:
        reward = FOOD_REWARD
        rng = copy.deepcopy(rng)  # keep earlier states replayable
        food = _relocate(rng, cfg, (new_pose.x, new_pose.y))
        food_count += 1
    else:
        i_old = odor_intensity((pose.x, pose.y), state.food, cfg.lam)
        i_new = odor_intensity((new_pose.x, new_pose.y), state.food, cfg.lam)
        reward = cfg.shaping_scale * (i_new - i_old)

    new_state = EnvState(
        config=cfg,
        pose=new_pose,
        food=food,
        step_count=state.step_count + 1,
        food_count=food_count,
        cumulative_reward=state.cumulative_reward + reward,
        rng=rng,
    )
    return new_state, StepOutcome(reward=reward, sensor=sense(new_state), event=event)


def food_sequence(config: EnvConfig, seed: int, n: int) -> list[tuple[int, int]]:
    """First ``n`` food positions presented for ``seed``, policy-independent."""
    state = reset(config, seed)
    rng = copy.deepcopy(state.rng)
    foods = [state.food]
    while len(foods) < n:
        foods.append(_relocate(rng, config, foods[-1]))
    return foods


def _shortest_turn_paths(config: EnvConfig, start: AgentPose, goal: tuple[int, int]) -> dict[Heading, int]:
    """Fewest actions from ``start`` to first entering ``goal``, per arrival heading."""
    seen = {start: 0}
    arrivals: dict[Heading, int] = {}
    queue = deque([start])
    while queue:
        pose = queue.popleft()
        d = seen[pose]
        if len(arrivals) == 4 and d >= max(arrivals.values()):
            break
        dx, dy = _DELTAS[pose.heading]
        tx, ty = pose.x + dx, pose.y + dy
        successors = [AgentPose(pose.x, pose.y, Heading((pose.heading - 1) % 4)),
                      AgentPose(pose.x, pose.y, Heading((pose.heading + 1) % 4))]
        if not config.is_barrier(tx, ty):
            if (tx, ty) == goal:
                arrivals.setdefault(pose.heading, d + 1)
            else:
                successors.append(AgentPose(tx, ty, pose.heading))
        for nxt in successors:
            if nxt not in seen:
                seen[nxt] = d + 1
                queue.append(nxt)
    return arrivals


@functools.lru_cache(maxsize=4096)
def _oracle_food_count(config: EnvConfig, seed: int, steps: int) -> int:
    state = reset(config, seed)
    rng = copy.deepcopy(state.rng)
    food = state.food
    # earliest time at which the k-th food can have been eaten, per arrival heading
    frontier = {state.pose: 0}
    eaten = 0
    while True:
        best: dict[Heading, int] = {}
        for pose, t0 in frontier.items():
            for heading, cost in _shortest_turn_paths(config, pose, food).items():
                t = t0 + cost
                if t <= steps and t < best.get(heading, steps + 1):
                    best[heading] = t
        if not best:
            return eaten
        eaten += 1
        frontier = {AgentPose(food[0], food[1], h): t for h, t in best.items()}
        food = _relocate(rng, config, food)


def oracle_max_reward(config: EnvConfig, seed: int | None = None, steps: int = 30) -> float:
    """Food-only reward of an optimal planner over the seeded food sequence.

    Dynamic programme over the arrival heading at each successive food;
    shaping and collision terms are excluded by construction.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if steps == 0:
        return 0.0
    return FOOD_REWARD * _oracle_food_count(config, config.seed if seed is None else seed, steps)


def trace_record(step_index: int, state: EnvState, action: Action | None,
                 outcome: StepOutcome | None) -> dict:
    return {
        "step": step_index,
        "pose": [state.pose.x, state.pose.y],
        "heading": state.pose.heading.name,
        "action": None if action is None else Action(action).name.lower(),
        "reward": None if outcome is None else outcome.reward,
        "sensor": sense(state) if outcome is None else outcome.sensor,
        "event": None if outcome is None else outcome.event.value,
        "food": list(state.food),
    }


def replay_actions(config: EnvConfig, actions: Iterable[Action | int], seed: int | None = None) -> list[dict]:
    """Run an action sequence and return one trace record per step."""
    state = reset(config, seed)
    records = []
    for i, a in enumerate(actions):
        state, outcome = step(state, a)
        records.append(trace_record(i, state, a, outcome))
    return records


def write_trace(records: Iterable[dict], fh: IO[str]) -> None:
    for rec in records:
        fh.write(json.dumps(rec) + "\n")
