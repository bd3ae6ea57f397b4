"""Simulated neural substrates behind one stimulate / record contract.

Every substrate owns its RNG and a virtual clock in milliseconds, and is
deterministic given its seed and the sequence of calls made on it.

``spiking``
    Leaky integrate-and-fire network on the 8x8 electrode grid with
    distance-dependent connectivity and pair-based STDP. Adaptive.
``random``
    Poisson spikes that ignore stimulation.
``replay``
    Plays back a recorded spike stream, ignoring stimulation.
``oracle``
    Emits activity in the decode region of a planted sensor->action policy
    with a reliability that peaks at a planted encoding configuration. Used
    to check that the screening machinery can find a known optimum.
"""
from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import IO, Any, Mapping

import numpy as np

from .codec import (
    EncodingParams, RegionLayout, ResponseMatrix, SpikeMatrix, StimulationMatrix,
    detect_spikes, rate_frequency,
)
from .env import Action


class ContractError(ValueError):
    """A call violated the substrate contract (shapes, durations, config)."""


# parameter ranges used to normalise encoding configs for the oracle quality
PARAM_BOUNDS = {
    "f_min": (2.0, 5.0),
    "f_max": (40.0, 100.0),
    "amplitude": (1.0, 2.5),
    "pulse_width": (40.0, 160.0),
    "tick_rate": (1.0, 4.0),
    "ticks_per_step": (2.0, 8.0),
}


class Substrate(ABC):
    emits_spikes_directly = True
    adaptive = False
    kind = "abstract"

    def __init__(self, n_channels: int, seed: int):
        self.n_channels = n_channels
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.clock_ms = 0

    @property
    def capabilities(self) -> dict:
        return {"emits_spikes_directly": self.emits_spikes_directly, "adaptive": self.adaptive}

    def _check(self, stim: StimulationMatrix, record_ms: int | None) -> int:
        if stim.channels != self.n_channels:
            raise ContractError(f"stimulation has {stim.channels} channels, substrate has {self.n_channels}")
        record_ms = stim.bins if record_ms is None else int(record_ms)
        if record_ms < stim.bins:
            raise ContractError("recording window shorter than stimulation")
        return record_ms

    def stimulate(self, stim: StimulationMatrix, record_ms: int | None = None) -> SpikeMatrix | ResponseMatrix:
        """Deliver ``stim`` from the current clock and record ``record_ms`` ms."""
        record_ms = self._check(stim, record_ms)
        out = self._run(stim, record_ms)
        self.clock_ms += record_ms
        return out

    def spontaneous(self, duration_ms: int) -> SpikeMatrix | ResponseMatrix:
        if duration_ms <= 0:
            raise ContractError("duration must be positive")
        return self.stimulate(StimulationMatrix.zeros(self.n_channels, int(duration_ms)), duration_ms)

    def rest(self, duration_ms: int) -> None:
        """Advance without recording."""
        if duration_ms < 0:
            raise ContractError("duration must be >= 0")
        if duration_ms:
            self._advance(int(duration_ms))
            self.clock_ms += int(duration_ms)

    def _advance(self, duration_ms: int) -> None:
        self._run(StimulationMatrix.zeros(self.n_channels, duration_ms), duration_ms)

    @abstractmethod
    def _run(self, stim: StimulationMatrix, record_ms: int) -> SpikeMatrix | ResponseMatrix:
        ...


def poisson_raster(rng: np.random.Generator, rates_hz: np.ndarray, duration_ms: int) -> np.ndarray:
    """Binary raster with Poisson-distributed counts per channel and uniform times."""
    rates_hz = np.asarray(rates_hz, dtype=float)
    out = np.zeros((len(rates_hz), duration_ms), dtype=np.uint8)
    counts = rng.poisson(rates_hz * duration_ms / 1000.0)
    total = int(counts.sum())
    if total:
        ch = np.repeat(np.arange(len(rates_hz)), counts)
        t = rng.integers(0, duration_ms, size=total)
        out[ch, t] = 1
    return out


class RandomSubstrate(Substrate):
    kind = "random"

    def __init__(self, n_channels: int = 64, seed: int = 0, rate_hz: float = 2.0):
        super().__init__(n_channels, seed)
        if rate_hz < 0:
            raise ContractError("rate must be >= 0")
        self.rate_hz = rate_hz

    def _run(self, stim, record_ms):
        return SpikeMatrix(poisson_raster(self.rng, np.full(self.n_channels, self.rate_hz), record_ms))


@dataclass
class Recording:
    """Spike stream stored as consecutive segments."""

    channels: int
    segments: list[dict] = field(default_factory=list)

    @property
    def duration_ms(self) -> int:
        return sum(int(s["duration_ms"]) for s in self.segments)

    def to_raster(self) -> np.ndarray:
        out = np.zeros((self.channels, self.duration_ms), dtype=np.uint8)
        offset = 0
        for seg in self.segments:
            for ch, t in seg["spikes"]:
                out[ch, offset + t] = 1
            offset += int(seg["duration_ms"])
        return out

    def write(self, fh: IO[str], meta: Mapping[str, Any] | None = None) -> None:
        fh.write(json.dumps({"type": "header", "channels": self.channels, **(meta or {})}) + "\n")
        for seg in self.segments:
            fh.write(json.dumps({"duration_ms": seg["duration_ms"], "spikes": seg["spikes"]}) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "Recording":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"replay file not found: {path}")
        channels = None
        segments = []
        with path.open() as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise OSError(f"{path}:{lineno}: malformed JSON") from exc
                if rec.get("type") == "header":
                    channels = int(rec["channels"])
                    continue
                if "duration_ms" not in rec or "spikes" not in rec:
                    raise OSError(f"{path}:{lineno}: segment needs duration_ms and spikes")
                dur = int(rec["duration_ms"])
                spikes = [(int(c), int(t)) for c, t in rec["spikes"]]
                if any(not 0 <= t < dur for _, t in spikes):
                    raise OSError(f"{path}:{lineno}: spike time outside segment")
                segments.append({"duration_ms": dur, "spikes": spikes})
        if not segments:
            raise OSError(f"{path}: no segments")
        if channels is None:
            channels = 1 + max((c for s in segments for c, _ in s["spikes"]), default=-1)
        if any(not 0 <= c < channels for s in segments for c, _ in s["spikes"]):
            raise OSError(f"{path}: spike channel outside declared channel count")
        return cls(channels, segments)


def record_spontaneous(substrate: Substrate, n_segments: int, segment_ms: int) -> Recording:
    """Capture spontaneous activity as a replayable recording."""
    rec = Recording(substrate.n_channels)
    for _ in range(n_segments):
        out = substrate.spontaneous(segment_ms)
        spikes = detect_spikes(out)
        rec.segments.append({"duration_ms": segment_ms, "spikes": [list(e) for e in spikes.events()]})
    return rec


class ReplaySubstrate(Substrate):
    """Plays a recording from a cursor, wrapping at the end."""

    kind = "replay"

    def __init__(self, recording: Recording, seed: int = 0, n_channels: int | None = None):
        n = recording.channels if n_channels is None else n_channels
        if recording.channels != n:
            raise ContractError(f"recording has {recording.channels} channels, layout needs {n}")
        super().__init__(n, seed)
        self.recording = recording
        self._raster = recording.to_raster()
        if self._raster.shape[1] == 0:
            raise ContractError("empty recording")
        self.cursor = 0

    def _take(self, duration_ms: int) -> np.ndarray:
        total = self._raster.shape[1]
        idx = (self.cursor + np.arange(duration_ms)) % total
        self.cursor = (self.cursor + duration_ms) % total
        return self._raster[:, idx]

    def _run(self, stim, record_ms):
        return SpikeMatrix(self._take(record_ms))

    def _advance(self, duration_ms):
        self.cursor = (self.cursor + duration_ms) % self._raster.shape[1]


def normalise_params(params: Mapping[str, float], bounds: Mapping[str, tuple[float, float]] = PARAM_BOUNDS) -> dict:
    out = {}
    for k, v in params.items():
        lo, hi = bounds[k]
        out[k] = (float(v) - lo) / (hi - lo)
    return out


def oracle_quality(encoding: Mapping[str, float] | EncodingParams, planted: Mapping[str, float],
                   bounds: Mapping[str, tuple[float, float]] = PARAM_BOUNDS, sharpness: float = 1.0) -> float:
    """exp(-sharpness * squared distance) between normalised configs, over the planted keys."""
    enc = encoding.to_dict() if isinstance(encoding, EncodingParams) else dict(encoding)
    a = normalise_params({k: enc[k] for k in planted}, bounds)
    b = normalise_params(planted, bounds)
    d2 = sum((a[k] - b[k]) ** 2 for k in planted)
    return math.exp(-sharpness * d2)


def planted_policy(sensor: int) -> int:
    """Turn toward the odor: front -> forward, left -> left, right/behind -> right."""
    return int({0: Action.FORWARD, -1: Action.LEFT, 1: Action.RIGHT}[sensor])


class OracleSubstrate(Substrate):
    kind = "oracle"

    def __init__(self, layout: RegionLayout, encoding: EncodingParams, planted: Mapping[str, float],
                 seed: int = 0, background_hz: float = 2.0, response_hz: float = 40.0,
                 sharpness: float = 1.0, quality: float | None = None):
        super().__init__(layout.n_channels, seed)
        if not planted and quality is None:
            raise ContractError("oracle substrate needs planted parameter values")
        self.layout = layout
        self.encoding = encoding
        self.planted = dict(planted)
        self.background_hz = background_hz
        self.response_hz = response_hz
        self.quality = oracle_quality(encoding, planted, sharpness=sharpness) if quality is None else quality
        self._enc = list(layout.encoding)
        self._levels = np.array([rate_frequency(x, encoding) for x in (-1.0, 0.0, 1.0)])

    def read_sensor(self, stim: StimulationMatrix) -> int | None:
        """Recover the encoded sensor value from the pulse rate on the encoding block."""
        n = stim.onsets[self._enc].sum(axis=1).mean()
        if n == 0:
            return None
        rate = n / (stim.bins / 1000.0)
        return int(np.argmin(np.abs(self._levels - rate))) - 1

    def _run(self, stim, record_ms):
        rates = np.full(self.n_channels, self.background_hz)
        sensor = self.read_sensor(stim)
        if sensor is not None:
            if self.rng.random() < self.quality:
                target = planted_policy(sensor)
            else:
                target = int(self.rng.integers(3))
            rates[list(self.layout.decode[target])] += self.response_hz
        return SpikeMatrix(poisson_raster(self.rng, rates, record_ms))


@dataclass
class SpikingConfig:
    neurons_per_channel: int = 8
    excitatory_fraction: float = 0.8
    v_rest: float = -65.0          # mV
    v_reset: float = -65.0
    v_threshold: float = -50.0
    tau_m: float = 20.0            # ms
    refractory: int = 2            # ms
    p0: float = 0.3                # connection probability at distance 0
    sigma: float = 1.5             # grid units
    w_init: float = 2.0            # mV, excitatory weights drawn U(0, w_init)
    w_max: float = 6.0             # mV
    w_inh: float = 4.0             # mV, fixed inhibitory magnitude
    a_plus: float = 0.01
    a_minus: float = 0.012
    tau_plus: float = 20.0         # ms
    tau_minus: float = 20.0
    noise_hz: float = 10.0         # background Poisson input per neuron
    noise_weight: float = 8.0      # mV per background event
    stim_gain: float = 0.1         # mV per pC of delivered charge
    voltage_output: bool = False   # emit synthetic uV traces instead of spikes

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SpikingConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ContractError(f"unknown spiking options: {sorted(unknown)}")
        return cls(**d)


class SpikingSubstrate(Substrate):
    """LIF network, 1 ms Euler steps, one neuron cluster per electrode.

    Weights are stored as magnitudes in ``[0, w_max]``; the sign comes from
    the presynaptic cell type. Only excitatory synapses are plastic. A
    stimulation onset kicks every neuron of its channel's cluster by
    ``stim_gain * amplitude * pulse_width`` mV for that millisecond.
    """

    kind = "spiking"
    adaptive = True

    def __init__(self, n_channels: int = 64, seed: int = 0, config: SpikingConfig | None = None):
        super().__init__(n_channels, seed)
        self.config = cfg = config or SpikingConfig()
        self.emits_spikes_directly = not cfg.voltage_output
        k = cfg.neurons_per_channel
        n = n_channels * k
        self.n_neurons = n
        self.channel_of = np.repeat(np.arange(n_channels), k)
        self.excitatory = self.rng.random(n) < cfg.excitatory_fraction
        side = int(round(math.sqrt(n_channels)))
        rows, cols = np.divmod(self.channel_of, side)
        d = np.hypot(rows[:, None] - rows[None, :], cols[:, None] - cols[None, :])
        prob = cfg.p0 * np.exp(-d / cfg.sigma)
        conn = self.rng.random((n, n)) < prob
        np.fill_diagonal(conn, False)
        self.connected = conn                      # [post, pre]
        w = np.where(self.excitatory[None, :], self.rng.uniform(0, cfg.w_init, (n, n)), cfg.w_inh)
        self.weights = np.where(conn, np.clip(w, 0, cfg.w_max), 0.0)
        self.plastic = conn & self.excitatory[None, :]
        self.sign = np.where(self.excitatory, 1.0, -1.0)
        self.v = np.full(n, cfg.v_rest)
        self.refractory_left = np.zeros(n, dtype=np.int64)
        self.pre_trace = np.zeros(n)
        self.post_trace = np.zeros(n)
        self.pending = np.zeros(n)                 # synaptic input arriving next step
        self._decay_m = math.exp(-1.0 / cfg.tau_m)
        self._decay_plus = math.exp(-1.0 / cfg.tau_plus)
        self._decay_minus = math.exp(-1.0 / cfg.tau_minus)

    def _run(self, stim, record_ms):
        cfg = self.config
        kick = cfg.stim_gain * stim.amplitude * stim.pulse_width
        drive = np.zeros((self.n_channels, record_ms))
        drive[:, :stim.bins] = stim.onsets * kick
        out = np.zeros((self.n_channels, record_ms), dtype=np.uint8)
        chunk = 1000
        for start in range(0, record_ms, chunk):
            stop = min(start + chunk, record_ms)
            ext = drive[self.channel_of, start:stop].T
            if cfg.noise_hz > 0:
                ext = ext + self.rng.poisson(cfg.noise_hz / 1000.0, size=ext.shape) * cfg.noise_weight
            for i, t in enumerate(range(start, stop)):
                fired = self._step(ext[i])
                if fired.size:
                    out[self.channel_of[fired], t] = 1
        if cfg.voltage_output:
            # 2 kHz trace: a -100 uV trough then recovery to 0 within each ms
            trace = np.zeros((self.n_channels, 2 * record_ms))
            trace[:, 0::2] = np.where(out == 1, -100.0, 0.0)
            return ResponseMatrix(trace, sample_rate=2000.0)
        return SpikeMatrix(out)

    def _step(self, external: np.ndarray) -> np.ndarray:
        cfg = self.config
        v = cfg.v_rest + (self.v - cfg.v_rest) * self._decay_m + self.pending + external
        active = self.refractory_left > 0
        v[active] = cfg.v_reset
        self.refractory_left[active] -= 1
        fired = np.flatnonzero(v >= cfg.v_threshold)
        self.pre_trace *= self._decay_plus
        self.post_trace *= self._decay_minus
        if fired.size:
            v[fired] = cfg.v_reset
            self.refractory_left[fired] = cfg.refractory
            w = self.weights
            # depression: presynaptic spike after recent postsynaptic activity
            cols = fired[self.excitatory[fired]]
            if cols.size:
                dep = cfg.a_minus * cfg.w_max * self.post_trace[:, None] * self.plastic[:, cols]
                w[:, cols] = np.clip(w[:, cols] - dep, 0.0, cfg.w_max)
            # potentiation: postsynaptic spike after recent presynaptic activity
            pot = cfg.a_plus * cfg.w_max * self.pre_trace[None, :] * self.plastic[fired, :]
            w[fired, :] = np.clip(w[fired, :] + pot, 0.0, cfg.w_max)
            self.pre_trace[fired] += 1.0
            self.post_trace[fired] += 1.0
            self.pending = (w[:, fired] * self.sign[fired]).sum(axis=1)
        else:
            self.pending = np.zeros(self.n_neurons)
        self.v = v
        return fired


@dataclass
class SubstrateKind:
    """Which substrate to build plus kind-specific options."""

    kind: str = "random"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("spiking", "random", "replay", "oracle"):
            raise ContractError(f"unknown substrate kind {self.kind!r}")
        if self.kind == "replay" and "path" not in self.options and "recording" not in self.options:
            raise ContractError("replay substrate needs a recording path")
        if self.kind == "oracle" and not self.options.get("planted") and "quality" not in self.options:
            raise ContractError("oracle substrate needs planted parameter values")
        q = self.options.get("quality")
        if q is not None and not 0.0 <= float(q) <= 1.0:
            raise ContractError(f"oracle quality must lie in [0, 1], got {q}")

    def to_dict(self) -> dict:
        opts = {k: v for k, v in self.options.items() if k != "recording"}
        return {"kind": self.kind, "options": opts}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SubstrateKind":
        return cls(d.get("kind", "random"), dict(d.get("options", {})))


def make_substrate(kind: SubstrateKind, layout: RegionLayout, seed: int,
                   encoding: EncodingParams | None = None) -> Substrate:
    opts = dict(kind.options)
    if kind.kind == "random":
        return RandomSubstrate(layout.n_channels, seed, rate_hz=float(opts.get("rate_hz", 2.0)))
    if kind.kind == "replay":
        rec = opts.get("recording") or Recording.read(opts["path"])
        return ReplaySubstrate(rec, seed, n_channels=layout.n_channels)
    if kind.kind == "oracle":
        if encoding is None:
            raise ContractError("oracle substrate needs the trial's encoding parameters")
        return OracleSubstrate(layout, encoding, opts.get("planted", {}), seed,
                               background_hz=float(opts.get("background_hz", 2.0)),
                               response_hz=float(opts.get("response_hz", 40.0)),
                               sharpness=float(opts.get("sharpness", 1.0)),
                               quality=opts.get("quality"))
    cfg = SpikingConfig.from_dict(opts.get("config", {}))
    return SpikingSubstrate(layout.n_channels, seed, cfg)
