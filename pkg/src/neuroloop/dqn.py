"""Online deep-Q baseline in plain numpy.

One-hot sensor (3) -> 8 ReLU units -> 3 Q-values, trained by SGD on the
one-step TD error against a periodically copied target network. There is
no replay buffer: every transition is used once, in order.
"""
from __future__ import annotations

import functools
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import env as gridenv
from .codec import BaselineRates
from .looprunner import EpisodeResult, TrialResult, score

log = logging.getLogger(__name__)

N_IN, N_HIDDEN, N_OUT = 3, 8, 3
DIVERGED_SCORE = -1.0


class DqnTrainingError(RuntimeError):
    pass


@dataclass
class QNet:
    w1: np.ndarray   # (hidden, in)
    b1: np.ndarray
    w2: np.ndarray   # (out, hidden)
    b2: np.ndarray

    @classmethod
    def init(cls, rng: np.random.Generator, hidden: int = N_HIDDEN) -> "QNet":
        return cls(rng.normal(0, math.sqrt(2.0 / N_IN), (hidden, N_IN)), np.zeros(hidden),
                   rng.normal(0, math.sqrt(1.0 / hidden), (N_OUT, hidden)), np.zeros(N_OUT))

    @classmethod
    def zeros(cls, hidden: int = N_HIDDEN) -> "QNet":
        return cls(np.zeros((hidden, N_IN)), np.zeros(hidden), np.zeros((N_OUT, hidden)), np.zeros(N_OUT))

    def copy(self) -> "QNet":
        return QNet(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    def finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.params())

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("w1", "b1", "w2", "b2")}

    @classmethod
    def from_dict(cls, d: dict) -> "QNet":
        return cls(*(np.asarray(d[k], dtype=float) for k in ("w1", "b1", "w2", "b2")))


@dataclass(frozen=True)
class DqnHyperParams:
    learning_rate: float = 0.01
    target_update_freq: int = 50
    train_freq: int = 1
    final_epsilon: float = 0.05
    exploration_horizon: float = 0.5
    gamma: float = 0.99

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.final_epsilon <= 1:
            raise ValueError("final_epsilon must lie in [0, 1]")
        if not 0 < self.exploration_horizon <= 1:
            raise ValueError("exploration_horizon must lie in (0, 1]")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if self.target_update_freq < 1 or self.train_freq < 1:
            raise ValueError("update frequencies must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "DqnHyperParams":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        for k in ("target_update_freq", "train_freq"):
            if k in known:
                known[k] = int(known[k])
        return cls(**known)


# best of a 60-configuration random search (seed 0, quorum 4, 2,000 steps)
TUNED_HP = DqnHyperParams(learning_rate=0.0164, target_update_freq=25, train_freq=2,
                          final_epsilon=0.008, exploration_horizon=0.066, gamma=0.99)


def one_hot(sensor: int) -> np.ndarray:
    x = np.zeros(N_IN)
    x[int(sensor) + 1] = 1.0
    return x


def qnet_forward(net: QNet, x: np.ndarray) -> np.ndarray:
    return net.w2 @ np.maximum(net.w1 @ x + net.b1, 0.0) + net.b2


def act(q: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy; greedy ties go to the lowest index."""
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(N_OUT))
    return int(np.argmax(q))


def epsilon_at(step: int, total_steps: int, hp: DqnHyperParams) -> float:
    """Linear from 1 to final_epsilon over the exploration horizon, then flat."""
    horizon = hp.exploration_horizon * total_steps
    if step >= horizon:
        return hp.final_epsilon
    return 1.0 + (hp.final_epsilon - 1.0) * step / horizon


def td_target(target: QNet, r: float, s_next: np.ndarray, gamma: float) -> float:
    return float(r + gamma * np.max(qnet_forward(target, s_next)))


def loss_and_grads(net: QNet, batch: list[tuple[np.ndarray, int, float]]) -> tuple[float, list[np.ndarray]]:
    """Mean squared TD error over (x, action, target) triples and its gradient."""
    grads = [np.zeros_like(p) for p in net.params()]
    total = 0.0
    for x, a, y in batch:
        pre = net.w1 @ x + net.b1
        h = np.maximum(pre, 0.0)
        q = net.w2 @ h + net.b2
        err = q[a] - y
        total += err * err
        d = 2.0 * err
        dh = d * net.w2[a] * (pre > 0)
        grads[0] += np.outer(dh, x)
        grads[1] += dh
        grads[2][a] += d * h
        grads[3][a] += d
    n = len(batch)
    return total / n, [g / n for g in grads]


def learn_step(net: QNet, target: QNet, transitions: list[tuple[np.ndarray, int, float, np.ndarray]],
               hp: DqnHyperParams) -> float:
    """One SGD step on the mean squared TD error of ``transitions``; updates ``net`` in place."""
    batch = [(s, a, td_target(target, r, s2, hp.gamma)) for s, a, r, s2 in transitions]
    with np.errstate(invalid="ignore", over="ignore"):
        loss, grads = loss_and_grads(net, batch)
    if not math.isfinite(loss):
        raise DqnTrainingError(f"non-finite loss {loss}; targets {[b[2] for b in batch]}, "
                               f"weights finite: {net.finite()}")
    for p, g in zip(net.params(), grads):
        p -= hp.learning_rate * g
    return loss


@dataclass
class DqnAgent:
    hp: DqnHyperParams
    total_steps: int
    seed: int = 0
    net: QNet = field(init=False)
    target: QNet = field(init=False)

    def __post_init__(self):
        self.rng = np.random.default_rng(self.seed)
        self.net = QNet.init(self.rng)
        self.target = self.net.copy()
        self.t = 0
        self.pending: list = []
        self.losses: list[float] = []

    def choose(self, sensor: int) -> tuple[int, np.ndarray, float]:
        q = qnet_forward(self.net, one_hot(sensor))
        eps = epsilon_at(self.t, self.total_steps, self.hp)
        return act(q, eps, self.rng), q, eps

    def observe(self, sensor: int, action: int, reward: float, next_sensor: int) -> None:
        self.pending.append((one_hot(sensor), action, reward, one_hot(next_sensor)))
        self.t += 1
        if self.t % self.hp.train_freq == 0:
            self.losses.append(learn_step(self.net, self.target, self.pending, self.hp))
            self.pending = []
        if self.t % self.hp.target_update_freq == 0:
            self.target = self.net.copy()


@functools.lru_cache(maxsize=256)
def _oracle(config: gridenv.EnvConfig, seed: int, steps: int) -> float:
    return gridenv.oracle_max_reward(config, seed, steps)


def _episode_lengths(total_steps: int, episode_steps: int | None) -> list[int]:
    if episode_steps is None or episode_steps >= total_steps:
        return [total_steps]
    full, rest = divmod(total_steps, episode_steps)
    return [episode_steps] * full + ([rest] if rest else [])


def _result(config: dict, episodes: list[EpisodeResult]) -> TrialResult:
    blob = json.dumps(config, sort_keys=True).encode()
    return TrialResult(config, hashlib.sha256(blob).hexdigest()[:16], episodes,
                       score([e.reward for e in episodes], [e.oracle for e in episodes]), 0)


def run_policy(env_cfg: gridenv.EnvConfig, total_steps: int, seed: int, policy, observe=None,
               episode_steps: int | None = None, config: dict | None = None) -> TrialResult:
    """Drive the gridworld with ``policy(sensor) -> (action, extra_record)``.

    Episodes reset to the same env seed, like the closed-loop trial modes.
    """
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    env_cfg = gridenv.EnvConfig(env_cfg.width, env_cfg.height, env_cfg.lam, seed, env_cfg.shaping_scale)
    episodes = []
    t = 0
    for ep, n in enumerate(_episode_lengths(total_steps, episode_steps)):
        state = gridenv.reset(env_cfg)
        steps = []
        total = 0.0
        for _ in range(n):
            sensor = gridenv.sense(state)
            action, extra = policy(sensor)
            state, out = gridenv.step(state, action)
            if observe:
                observe(sensor, action, out.reward, gridenv.sense(state))
            total += out.reward
            steps.append({"step": t, "sensor": sensor, "frequency_used": None,
                          "action": gridenv.Action(action).name.lower(), "reward": out.reward,
                          "event": out.event.value, "region_counts": None, "feedback": None, **extra})
            t += 1
        episodes.append(EpisodeResult(ep, steps, total, _oracle(env_cfg, seed, n),
                                      BaselineRates((0.0, 0.0, 0.0), 0), [], 0))
    return _result(config or {"agent": "policy", "total_steps": total_steps, "seed": seed}, episodes)


def train_dqn(env_cfg: gridenv.EnvConfig, hp: DqnHyperParams, total_steps: int, seed: int = 0,
              episode_steps: int | None = None, agent_seed: int | None = None,
              return_agent: bool = False):
    """Train online for ``total_steps`` interactions; returns a TrialResult-shaped record."""
    agent = DqnAgent(hp, total_steps, seed if agent_seed is None else agent_seed)

    def policy(sensor):
        a, q, eps = agent.choose(sensor)
        return a, {"q": [round(float(v), 6) for v in q], "epsilon": eps}

    config = {"agent": "dqn", "hp": asdict(hp), "env": env_cfg.to_dict(), "total_steps": total_steps,
              "seed": seed, "agent_seed": agent.seed, "episode_steps": episode_steps}
    res = run_policy(env_cfg, total_steps, seed, policy, agent.observe, episode_steps, config)
    return (res, agent) if return_agent else res


def random_policy(env_cfg: gridenv.EnvConfig, total_steps: int, seed: int,
                  episode_steps: int | None = None) -> TrialResult:
    rng = np.random.default_rng([seed, 7])
    return run_policy(env_cfg, total_steps, seed, lambda s: (int(rng.integers(N_OUT)), {}),
                      episode_steps=episode_steps,
                      config={"agent": "random", "total_steps": total_steps, "seed": seed})


def save_checkpoint(path: str | Path, net: QNet, hp: DqnHyperParams, target: QNet | None = None) -> None:
    doc = {"hp": asdict(hp), "net": net.to_dict()}
    if target is not None:
        doc["target"] = target.to_dict()
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> tuple[QNet, DqnHyperParams]:
    doc = json.loads(Path(path).read_text())
    return QNet.from_dict(doc["net"]), DqnHyperParams.from_dict(doc["hp"])


# -- hyperparameter search through the optimizer's local mode ---------------

SEARCH_SPACE = {
    "learning_rate": (1e-4, 0.3),          # log-uniform
    "target_update_freq": [1, 5, 10, 25, 50, 100, 250],
    "train_freq": [1, 2, 4, 8],
    "final_epsilon": (0.0, 0.2),
    "exploration_horizon": (0.05, 1.0),
}


def sample_hyperparams(rng: np.random.Generator, n: int, gamma: float = 0.99) -> list[dict]:
    out = []
    lo, hi = SEARCH_SPACE["learning_rate"]
    for _ in range(n):
        out.append({
            "learning_rate": float(np.exp(rng.uniform(np.log(lo), np.log(hi)))),
            "target_update_freq": int(rng.choice(SEARCH_SPACE["target_update_freq"])),
            "train_freq": int(rng.choice(SEARCH_SPACE["train_freq"])),
            "final_epsilon": float(rng.uniform(*SEARCH_SPACE["final_epsilon"])),
            "exploration_horizon": float(rng.uniform(*SEARCH_SPACE["exploration_horizon"])),
            "gamma": gamma,
        })
    return out


def dqn_runner(base: dict, assignment: dict) -> tuple[float, str, str]:
    """Optimizer runner: one DQN training run per assignment."""
    env_cfg = gridenv.EnvConfig(**base.get("env", {}))
    try:
        res = train_dqn(env_cfg, DqnHyperParams.from_dict(assignment["params"]), int(base["total_steps"]),
                        seed=int(assignment["seeds"]["env"]), episode_steps=base.get("episode_steps"),
                        agent_seed=int(assignment["seeds"]["substrate"]))
    except (DqnTrainingError, FloatingPointError) as exc:
        log.warning("dqn trial %s diverged: %s", assignment["trial_id"], exc)
        return DIVERGED_SCORE, "", "ok"
    return res.score, res.digest(), "ok"


def hpo(env_cfg: gridenv.EnvConfig, n_configs: int, total_steps: int, seed: int = 0, quorum: int = 4,
        workers: int = 1, log_path: str | Path | None = None, episode_steps: int | None = None,
        gamma: float = 0.99):
    """Random search; each configuration is scored as a quorum of independent seeds."""
    from .optimizer import ScheduleEntry, Study, run_local
    configs = sample_hyperparams(np.random.default_rng(seed), n_configs, gamma)
    entries = [ScheduleEntry(i, i, 0, p) for i, p in enumerate(configs)]
    study = Study(entries, quorum=quorum, timeout_s=3600, log_path=log_path, mode="dqn", study_seed=seed)
    base = {"env": env_cfg.to_dict(), "total_steps": total_steps, "episode_steps": episode_steps}
    aggs = run_local(study, base, workers=workers, runner=dqn_runner)
    return sorted(aggs, key=lambda a: a.mean, reverse=True)
