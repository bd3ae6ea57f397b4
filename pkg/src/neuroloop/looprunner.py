"""Closed-loop trials: encode -> stimulate/record -> decode -> env.step -> feedback.

Everything runs on the substrate's virtual clock. One step costs one
interaction period of encoding plus two periods of feedback; each episode
is preceded by 60 interaction-period windows of spontaneous activity that
set the decoding baseline.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from typing import IO, Any, Sequence

import numpy as np

from . import env as gridenv
from .codec import (
    BASELINE_WINDOWS, BaselineRates, EncodingParams, RegionLayout, SpikeMatrix, count_decode,
    detect_spikes, encode_step, rate_frequency, stage2_layout, update_baseline, LAYOUTS,
)
from .feedback import FeedbackKind, FeedbackParams, feedback_matrix, select_feedback
from .substrate import Substrate, SubstrateKind, make_substrate

log = logging.getLogger(__name__)

# steps per episode, episodes
MODES = {"A": (30, 1), "B": (150, 1), "C": (30, 5)}
REST_MS = 120_000


@dataclass(frozen=True)
class Seeds:
    env: int = 0
    substrate: int = 0
    decode_tiebreak: int = 0
    feedback: int = 0

    @classmethod
    def from_seed(cls, seed: int) -> "Seeds":
        """Independent child seeds; the env seed is the root seed itself."""
        children = np.random.SeedSequence(seed).generate_state(3)
        return cls(env=int(seed), substrate=int(children[0]), decode_tiebreak=int(children[1]),
                   feedback=int(children[2]))

    def to_dict(self) -> dict:
        return {"env": self.env, "substrate": self.substrate,
                "decode_tiebreak": self.decode_tiebreak, "feedback": self.feedback}


@dataclass
class TrialConfig:
    mode: str = "A"
    encoding: EncodingParams = field(default_factory=EncodingParams)
    feedback: FeedbackParams | None = None      # None: default regimen inheriting the encoder's pulses
    layout: RegionLayout = field(default_factory=stage2_layout)
    env: gridenv.EnvConfig = field(default_factory=gridenv.EnvConfig)
    substrate: SubstrateKind = field(default_factory=SubstrateKind)
    seeds: Seeds = field(default_factory=Seeds)
    baseline_policy: str = "overlap"   # "overlap": calibrate inside the inter-episode rest
    decode_eps: float = 1.0
    spike_threshold: float = -50.0     # uV
    spike_refractory: float = 2.0      # ms
    realtime: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {sorted(MODES)}, got {self.mode!r}")
        if self.baseline_policy not in ("overlap", "separate"):
            raise ValueError("baseline_policy must be 'overlap' or 'separate'")
        if self.layout.n_channels <= max(self.layout.active):
            raise ValueError("layout references channels beyond its channel count")

    @property
    def feedback_params(self) -> FeedbackParams:
        return self.feedback or FeedbackParams.inherit(self.encoding)

    @property
    def steps(self) -> int:
        return MODES[self.mode][0]

    @property
    def episodes(self) -> int:
        return MODES[self.mode][1]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "encoding": self.encoding.to_dict(),
            "feedback": self.feedback_params.to_dict(),
            "layout": self.layout.to_dict(),
            "env": self.env.to_dict(),
            "substrate": self.substrate.to_dict(),
            "seeds": self.seeds.to_dict(),
            "baseline_policy": self.baseline_policy,
            "decode_eps": self.decode_eps,
            "spike_threshold": self.spike_threshold,
            "spike_refractory": self.spike_refractory,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "TrialConfig":
        layout = d.get("layout", "stage2")
        if isinstance(layout, str):
            layout = LAYOUTS[layout]()
        else:
            layout = RegionLayout.from_dict(layout)
        return cls(
            mode=d.get("mode", "A"),
            encoding=EncodingParams.from_dict(d.get("encoding", {})),
            feedback=FeedbackParams.from_dict(d["feedback"]) if d.get("feedback") else None,
            layout=layout,
            env=gridenv.EnvConfig(**d.get("env", {})),
            substrate=SubstrateKind.from_dict(d.get("substrate", {})),
            seeds=Seeds(**d["seeds"]) if "seeds" in d else Seeds(),
            baseline_policy=d.get("baseline_policy", "overlap"),
            decode_eps=d.get("decode_eps", 1.0),
            spike_threshold=d.get("spike_threshold", -50.0),
            spike_refractory=d.get("spike_refractory", 2.0),
        )

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EpisodeResult:
    index: int
    steps: list[dict]
    reward: float
    oracle: float
    baseline: BaselineRates
    baseline_channels: list[float]     # per-channel mean count per calibration window
    start_ms: int

    @property
    def normalized(self) -> float:
        return self.reward / self.oracle if self.oracle > 0 else float("nan")


@dataclass
class TrialResult:
    config: dict
    config_hash: str
    episodes: list[EpisodeResult]
    score: float
    virtual_ms: int
    wall_seconds: float = 0.0
    events: list[str] = field(default_factory=list)

    @property
    def oracle(self) -> float:
        return self.episodes[0].oracle if self.episodes else 0.0

    def step_records(self):
        for ep in self.episodes:
            for rec in ep.steps:
                yield {"episode": ep.index, **rec}

    def summary(self) -> dict:
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "score": self.score,
            "episode_rewards": [ep.reward for ep in self.episodes],
            "episode_oracles": [ep.oracle for ep in self.episodes],
            "episode_scores": [ep.normalized for ep in self.episodes],
            "baselines": [ep.baseline.to_dict() for ep in self.episodes],
            "baseline_channels": [ep.baseline_channels for ep in self.episodes],
            "virtual_ms": self.virtual_ms,
            "wall_seconds": self.wall_seconds,
            "events": self.events,
            "digest": self.digest(),
        }

    def digest(self) -> str:
        """Hash over everything except wall-clock time."""
        h = hashlib.sha256()
        h.update(self.config_hash.encode())
        for rec in self.step_records():
            h.update(json.dumps(rec, sort_keys=True).encode())
        h.update(json.dumps([self.score, self.virtual_ms, self.events]).encode())
        return h.hexdigest()

    def write_jsonl(self, fh: IO[str]) -> None:
        for rec in self.step_records():
            fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def save(self, steps_path, summary_path) -> None:
        with open(steps_path, "w") as fh:
            self.write_jsonl(fh)
        with open(summary_path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)

    def heatmap(self, episode: int = 0) -> np.ndarray:
        """Rows: evoked count per window, calibration count per window, and their ratio.

        Channels silent in both read 0; channels with activity but no
        calibration activity read NaN.
        """
        ep = self.episodes[episode]
        rows = [rec["channel_counts"] for rec in ep.steps if rec.get("channel_counts") is not None]
        base = np.asarray(ep.baseline_channels, dtype=float)
        evoked = np.asarray(rows, dtype=float).mean(axis=0) if rows else np.full(base.shape, np.nan)
        with np.errstate(divide="ignore", invalid="ignore"):
            rel = np.where(base > 0, evoked / np.where(base > 0, base, 1.0),
                           np.where(evoked == 0, 0.0, np.nan))
        return np.stack([evoked, base, rel])

    def write_heatmap(self, fh: IO[str], side: int = 8) -> None:
        """CSV rows: episode, channel, row, col, evoked, baseline, relative."""
        writer = csv.writer(fh)
        writer.writerow(["episode", "channel", "row", "col", "evoked", "baseline", "relative"])
        for ep in self.episodes:
            evoked, base, rel = self.heatmap(ep.index)
            for ch in range(len(evoked)):
                writer.writerow([ep.index, ch, ch // side, ch % side,
                                 f"{evoked[ch]:.6g}", f"{base[ch]:.6g}", f"{rel[ch]:.6g}"])

    @classmethod
    def from_files(cls, steps_path, summary_path) -> "TrialResult":
        with open(summary_path) as fh:
            summary = json.load(fh)
        by_episode: dict[int, list[dict]] = {}
        with open(steps_path) as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    if rec.get("type") == "config":
                        continue
                    by_episode.setdefault(rec.pop("episode"), []).append(rec)
        episodes = []
        for i, (reward, oracle) in enumerate(zip(summary["episode_rewards"], summary["episode_oracles"])):
            b = summary["baselines"][i]
            episodes.append(EpisodeResult(i, by_episode.get(i, []), reward, oracle,
                                          BaselineRates(tuple(b["rates"]), b["windows"]),
                                          summary["baseline_channels"][i], 0))
        return cls(summary["config"], summary["config_hash"], episodes, summary["score"],
                   summary["virtual_ms"], summary.get("wall_seconds", 0.0), summary.get("events", []))


def score(episode_rewards: "Sequence[float] | TrialResult",
          oracles: float | Sequence[float] | None = None) -> float:
    """Mean over episodes of reward / maximum achievable reward.

    Accepts either raw per-episode rewards or a TrialResult; a TrialResult
    supplies its own oracle values when ``oracles`` is omitted.
    """
    if isinstance(episode_rewards, TrialResult):
        res = episode_rewards
        rewards = [ep.reward for ep in res.episodes]
        if oracles is None:
            oracles = [ep.oracle for ep in res.episodes]
    else:
        rewards = list(episode_rewards)
    if oracles is None:
        raise ValueError("oracle reward required")
    if np.isscalar(oracles):
        oracles = [float(oracles)] * len(rewards)
    oracles = list(oracles)
    if len(oracles) != len(rewards):
        raise ValueError("need one oracle value per episode")
    if any(o <= 0 for o in oracles):
        raise ValueError("oracle reward must be positive")
    if not rewards:
        raise ValueError("no episodes to score")
    return float(np.mean([r / o for r, o in zip(rewards, oracles)]))


def expected_virtual_ms(cfg: TrialConfig) -> int:
    """Virtual duration implied by the mode and timing parameters."""
    period = cfg.encoding.interaction_ms
    calib = BASELINE_WINDOWS * period
    total = calib + cfg.episodes * cfg.steps * 3 * period
    for _ in range(cfg.episodes - 1):
        if cfg.baseline_policy == "overlap" and calib <= REST_MS:
            total += REST_MS
        else:
            total += REST_MS + calib
    return total


class _Pacer:
    """Sleeps so that virtual time does not run ahead of wall time."""

    def __init__(self, enabled: bool):
        self.enabled = enabled
        self.start = time.monotonic()

    def __call__(self, virtual_ms: int) -> None:
        if self.enabled:
            lag = virtual_ms / 1000.0 - (time.monotonic() - self.start)
            if lag > 0:
                time.sleep(lag)


def _spikes(out, cfg: TrialConfig) -> SpikeMatrix:
    return detect_spikes(out, cfg.spike_threshold, cfg.spike_refractory)


def _calibrate(substrate: Substrate, cfg: TrialConfig) -> tuple[BaselineRates, list[float]]:
    period = cfg.encoding.interaction_ms
    windows = []
    per_channel = np.zeros(cfg.layout.n_channels)
    for _ in range(BASELINE_WINDOWS):
        counts = _spikes(substrate.spontaneous(period), cfg).counts()
        per_channel += counts
        windows.append(cfg.layout.region_counts(counts).tolist())
    return update_baseline(windows), (per_channel / BASELINE_WINDOWS).tolist()


def run_trial(cfg: TrialConfig, substrate: Substrate | None = None) -> TrialResult:
    wall0 = time.perf_counter()
    enc = cfg.encoding
    layout = cfg.layout
    if substrate is None:
        substrate = make_substrate(cfg.substrate, layout, cfg.seeds.substrate, encoding=enc)
    if substrate.n_channels != layout.n_channels:
        raise ValueError(f"substrate has {substrate.n_channels} channels, layout {layout.n_channels}")
    fb_params = cfg.feedback_params
    decode_rng = np.random.default_rng(cfg.seeds.decode_tiebreak)
    fb_rng = np.random.default_rng(cfg.seeds.feedback)
    env_cfg = gridenv.EnvConfig(cfg.env.width, cfg.env.height, cfg.env.lam, cfg.seeds.env,
                                cfg.env.shaping_scale)
    oracle = gridenv.oracle_max_reward(env_cfg, cfg.seeds.env, cfg.steps)
    period_ms = enc.interaction_ms
    period_s = period_ms / 1000.0
    calib_ms = BASELINE_WINDOWS * period_ms
    pace = _Pacer(cfg.realtime)
    clock0 = substrate.clock_ms
    events: list[str] = []
    # one encoding matrix per sensor value, reused every step
    stim_cache = {}

    baseline, baseline_channels = _calibrate(substrate, cfg)
    episodes = []
    for ep in range(cfg.episodes):
        if ep > 0:
            if cfg.baseline_policy == "overlap" and calib_ms <= REST_MS:
                substrate.rest(REST_MS - calib_ms)
            else:
                substrate.rest(REST_MS)
                if cfg.baseline_policy == "overlap":
                    events.append(f"episode {ep}: calibration of {calib_ms} ms extends the "
                                  f"{REST_MS} ms rest")
                    log.info(events[-1])
            baseline, baseline_channels = _calibrate(substrate, cfg)
        start_ms = substrate.clock_ms - clock0
        state = gridenv.reset(env_cfg)
        steps = []
        ep_reward = 0.0
        for t in range(cfg.steps):
            sensor = gridenv.sense(state)
            if sensor not in stim_cache:
                stim_cache[sensor] = encode_step(float(sensor), enc, layout)
            spikes = _spikes(substrate.stimulate(stim_cache[sensor], period_ms), cfg)
            channel_counts = spikes.counts()
            region = layout.region_counts(channel_counts)
            action = count_decode(region, layout, baseline, decode_rng, eps=cfg.decode_eps)
            state, outcome = gridenv.step(state, action)
            kind = select_feedback(outcome.reward)
            fb = feedback_matrix(kind, period_s, layout, fb_params, fb_rng)
            fb_spikes = _spikes(substrate.stimulate(fb, fb.bins), cfg)
            ep_reward += outcome.reward
            steps.append({
                "step": t,
                "sensor": sensor,
                "frequency_used": rate_frequency(float(sensor), enc),
                "action": gridenv.Action(action).name.lower(),
                "reward": outcome.reward,
                "event": outcome.event.value,
                "region_counts": region.tolist(),
                "channel_counts": channel_counts.tolist(),
                "feedback": kind.value,
                "feedback_spikes": int(fb_spikes.spikes.sum()),
                "pose": [state.pose.x, state.pose.y, state.pose.heading.name],
                "food": list(state.food),
            })
            pace(substrate.clock_ms - clock0)
        episodes.append(EpisodeResult(ep, steps, ep_reward, oracle, baseline, baseline_channels, start_ms))

    virtual_ms = substrate.clock_ms - clock0
    return TrialResult(
        config=cfg.to_dict(),
        config_hash=cfg.config_hash(),
        episodes=episodes,
        score=score([e.reward for e in episodes], [e.oracle for e in episodes]),
        virtual_ms=virtual_ms,
        wall_seconds=time.perf_counter() - wall0,
        events=events,
    )
