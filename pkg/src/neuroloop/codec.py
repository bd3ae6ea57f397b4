"""Rate encoding of sensor values and baseline-normalised count decoding.

Stimulation and spike data are dense binary ``channels x bins`` arrays at
1 ms resolution. Pulse width and amplitude ride along as metadata; the
biphasic waveform itself is never sampled.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import IO, Iterable, Sequence

import numpy as np

GRID_SIDE = 8
N_CHANNELS = GRID_SIDE * GRID_SIDE
MAX_RATE_HZ = 500.0
BASELINE_WINDOWS = 60
PHASE = "biphasic_negative_leading"


class ParameterError(ValueError):
    pass


class DataError(ValueError):
    pass


class SensorClampWarning(UserWarning):
    """Sensor value outside [x_min, x_max] was clamped before encoding."""


@dataclass(frozen=True)
class EncodingParams:
    f_min: float = 4.0
    f_max: float = 40.0
    amplitude: float = 2.5        # uA
    pulse_width: float = 80.0     # us
    tick_rate: float = 2.0        # Hz
    ticks_per_step: int = 4
    x_min: float = -1.0
    x_max: float = 1.0

    def __post_init__(self):
        if not 0 < self.f_min < self.f_max:
            raise ParameterError(f"need 0 < f_min < f_max, got {self.f_min}, {self.f_max}")
        if self.amplitude <= 0 or self.pulse_width <= 0:
            raise ParameterError("amplitude and pulse_width must be positive")
        if self.tick_rate <= 0:
            raise ParameterError("tick_rate must be positive")
        if int(self.ticks_per_step) != self.ticks_per_step or self.ticks_per_step < 1:
            raise ParameterError("ticks_per_step must be a positive integer")
        if not self.x_min < self.x_max:
            raise ParameterError("x_min must be below x_max")

    @property
    def tick_ms(self) -> int:
        return int(round(1000.0 / self.tick_rate))

    @property
    def interaction_period(self) -> float:
        """Seconds of encoding per environment step."""
        return self.ticks_per_step / self.tick_rate

    @property
    def interaction_ms(self) -> int:
        return self.tick_ms * int(self.ticks_per_step)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("f_min", "f_max", "amplitude", "pulse_width", "tick_rate",
                 "ticks_per_step", "x_min", "x_max")}

    @classmethod
    def from_dict(cls, d: dict) -> "EncodingParams":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        if "ticks_per_step" in known:
            known["ticks_per_step"] = int(known["ticks_per_step"])
        return cls(**known)


def _rle(row: np.ndarray) -> list[int]:
    """Alternating run lengths, starting with a (possibly empty) run of zeros."""
    runs = []
    current, n = 0, 0
    for v in row.tolist():
        if v == current:
            n += 1
        else:
            runs.append(n)
            current, n = v, 1
    runs.append(n)
    return runs


def _unrle(runs: Sequence[int], bins: int) -> np.ndarray:
    row = np.zeros(bins, dtype=np.uint8)
    pos, val = 0, 0
    for n in runs:
        if val:
            row[pos:pos + n] = 1
        pos += n
        val ^= 1
    if pos != bins:
        raise DataError(f"run lengths sum to {pos}, expected {bins}")
    return row


@dataclass
class StimulationMatrix:
    """Binary pulse-onset grid, one row per channel, 1 ms bins."""

    onsets: np.ndarray
    amplitude: float
    pulse_width: float
    phase: str = PHASE

    def __post_init__(self):
        self.onsets = np.asarray(self.onsets, dtype=np.uint8)
        if self.onsets.ndim != 2:
            raise DataError("onsets must be 2-D (channels x bins)")
        if self.onsets.max(initial=0) > 1:
            raise DataError("onsets must be binary")

    @property
    def channels(self) -> int:
        return self.onsets.shape[0]

    @property
    def bins(self) -> int:
        return self.onsets.shape[1]

    @property
    def duration_ms(self) -> int:
        return self.bins

    def onset_times(self, channel: int) -> np.ndarray:
        return np.flatnonzero(self.onsets[channel])

    def charge_per_pulse(self) -> float:
        """Phase charge in pC (uA x us)."""
        return self.amplitude * self.pulse_width

    @classmethod
    def zeros(cls, channels: int, bins: int, amplitude: float = 0.0, pulse_width: float = 0.0):
        return cls(np.zeros((channels, bins), dtype=np.uint8), amplitude, pulse_width)

    @classmethod
    def concatenate(cls, parts: Sequence["StimulationMatrix"]) -> "StimulationMatrix":
        first = parts[0]
        return cls(np.concatenate([p.onsets for p in parts], axis=1), first.amplitude, first.pulse_width)

    def to_json(self) -> dict:
        return {"channels": self.channels, "bins": self.bins,
                "onsets": [_rle(r) for r in self.onsets],
                "amplitude": self.amplitude, "pulse_width": self.pulse_width, "phase": self.phase}

    @classmethod
    def from_json(cls, d: dict) -> "StimulationMatrix":
        rows = [_unrle(r, d["bins"]) for r in d["onsets"]]
        if len(rows) != d["channels"]:
            raise DataError("channel count does not match onsets")
        return cls(np.stack(rows), d["amplitude"], d["pulse_width"], d.get("phase", PHASE))

    def write_raster(self, fh: IO[str], t0_ms: int = 0) -> None:
        write_raster(self.onsets, fh, t0_ms)


@dataclass
class ResponseMatrix:
    """Continuous per-channel potentials in uV."""

    values: np.ndarray
    sample_rate: float = 1000.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def samples(self) -> int:
        return self.values.shape[1]


@dataclass
class SpikeMatrix:
    spikes: np.ndarray
    bin_ms: float = 1.0

    def __post_init__(self):
        self.spikes = np.asarray(self.spikes, dtype=np.uint8)

    @property
    def channels(self) -> int:
        return self.spikes.shape[0]

    @property
    def bins(self) -> int:
        return self.spikes.shape[1]

    def counts(self) -> np.ndarray:
        return self.spikes.sum(axis=1, dtype=np.int64)

    @classmethod
    def from_events(cls, channels: int, bins: int, events: Iterable[tuple[int, int]]) -> "SpikeMatrix":
        m = np.zeros((channels, bins), dtype=np.uint8)
        for ch, t in events:
            m[ch, t] = 1
        return cls(m)

    def events(self) -> list[tuple[int, int]]:
        ch, t = np.nonzero(self.spikes)
        return list(zip(ch.tolist(), t.tolist()))

    def to_json(self) -> dict:
        return {"channels": self.channels, "bins": self.bins,
                "onsets": [_rle(r) for r in self.spikes]}

    @classmethod
    def from_json(cls, d: dict) -> "SpikeMatrix":
        return cls(np.stack([_unrle(r, d["bins"]) for r in d["onsets"]]))


def write_raster(grid: np.ndarray, fh: IO[str], t0_ms: int = 0) -> None:
    """CSV of ``channel,time_ms`` for every set bin."""
    w = csv.writer(fh)
    w.writerow(["channel", "time_ms"])
    ch, t = np.nonzero(grid)
    order = np.lexsort((ch, t))
    for c, tt in zip(ch[order].tolist(), t[order].tolist()):
        w.writerow([c, tt + t0_ms])


@dataclass(frozen=True)
class RegionLayout:
    """Electrode roles on the 8x8 virtual array.

    ``decode`` holds one channel tuple per action, indexed like
    :class:`neuroloop.env.Action` (forward, left, right).
    """

    encoding: tuple[int, ...]
    decode: tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]
    n_channels: int = N_CHANNELS
    name: str = "custom"

    def __post_init__(self):
        if not self.encoding:
            raise ParameterError("encoding region is empty")
        if len(self.decode) != 3:
            raise ParameterError("need exactly three decode regions")
        sets = [set(self.encoding)] + [set(r) for r in self.decode]
        if sum(len(s) for s in sets) != len(set().union(*sets)):
            raise ParameterError("regions must be pairwise disjoint")
        if len({len(r) for r in self.decode}) != 1:
            raise ParameterError("decode regions must have equal size")
        if any(not 0 <= c < self.n_channels for s in sets for c in s):
            raise ParameterError("channel index out of range")

    @property
    def active(self) -> tuple[int, ...]:
        """Encoding plus decoding channels (feedback targets)."""
        return tuple(sorted(set(self.encoding).union(*self.decode)))

    def region_counts(self, per_channel: np.ndarray) -> np.ndarray:
        return np.array([int(per_channel[list(r)].sum()) for r in self.decode], dtype=np.int64)

    def to_dict(self) -> dict:
        return {"name": self.name, "n_channels": self.n_channels,
                "encoding": list(self.encoding), "decode": [list(r) for r in self.decode]}

    @classmethod
    def from_dict(cls, d: dict) -> "RegionLayout":
        return cls(tuple(d["encoding"]), tuple(tuple(r) for r in d["decode"]),
                   d.get("n_channels", N_CHANNELS), d.get("name", "custom"))


def _ch(row: int, col: int) -> int:
    return row * GRID_SIDE + col


def stage2_layout() -> RegionLayout:
    """Central 4x4 encoding block; three 12-channel decode arms of a pinwheel.

    The arms are 90-degree rotations of one another around the array centre,
    so each is equidistant from the encoding block.
    """
    encoding = tuple(_ch(r, c) for r in range(2, 6) for c in range(2, 6))
    top = tuple(_ch(r, c) for r in range(0, 2) for c in range(0, 6))
    right = tuple(_ch(r, c) for r in range(0, 6) for c in range(6, 8))
    left = tuple(_ch(r, c) for r in range(2, 8) for c in range(0, 2))
    return RegionLayout(encoding, (top, left, right), name="stage2")


def stage1_layout() -> RegionLayout:
    """Encoding along one edge, decoding regions on the opposite side."""
    encoding = tuple(_ch(r, c) for r in range(0, 2) for c in range(0, 8))
    left = tuple(_ch(r, c) for r in range(4, 8) for c in range(0, 3))
    mid = tuple(_ch(r, c) for r in range(4, 8) for c in range(3, 6))
    right = tuple(_ch(r, c) for r in range(2, 8) for c in range(6, 8))
    return RegionLayout(encoding, (mid, left, right), name="stage1")


LAYOUTS = {"stage1": stage1_layout, "stage2": stage2_layout}


def rate_frequency(x: float, p: EncodingParams) -> float:
    """Linear map of ``x`` from [x_min, x_max] onto [f_min, f_max] Hz.

    Out-of-range values are clamped and a :class:`SensorClampWarning` is issued.
    """
    if x < p.x_min or x > p.x_max:
        warnings.warn(f"sensor value {x} clamped to [{p.x_min}, {p.x_max}]", SensorClampWarning,
                      stacklevel=2)
        x = min(max(x, p.x_min), p.x_max)
    if x == p.x_min:
        return float(p.f_min)
    if x == p.x_max:
        return float(p.f_max)
    return p.f_min + (p.f_max - p.f_min) * (x - p.x_min) / (p.x_max - p.x_min)


def pulse_onsets_ms(freq: float, duration_ms: int) -> list[int]:
    """1 ms bins of pulses at k/F seconds for every k with k/F < duration."""
    if freq <= 0:
        return []
    period = Fraction(1000) / Fraction(freq)   # exact for float inputs
    n = math.ceil(Fraction(duration_ms) / period)
    return [math.floor(k * period) for k in range(n)]


def encode_tick(x: float, p: EncodingParams, layout: RegionLayout) -> StimulationMatrix:
    freq = rate_frequency(x, p)
    if freq > MAX_RATE_HZ:
        raise ParameterError(f"{freq} Hz exceeds {MAX_RATE_HZ} Hz at 1 ms bins")
    bins = p.tick_ms
    onsets = np.zeros((layout.n_channels, bins), dtype=np.uint8)
    times = pulse_onsets_ms(freq, bins)
    onsets[np.ix_(list(layout.encoding), times)] = 1
    return StimulationMatrix(onsets, p.amplitude, p.pulse_width)


def encode_step(x: float, p: EncodingParams, layout: RegionLayout) -> StimulationMatrix:
    """``ticks_per_step`` ticks delivered back to back."""
    tick = encode_tick(x, p, layout)
    return StimulationMatrix(np.tile(tick.onsets, (1, int(p.ticks_per_step))), tick.amplitude,
                             tick.pulse_width)


def detect_spikes(v: ResponseMatrix | SpikeMatrix, threshold: float = -50.0,
                  refractory: float = 2.0) -> SpikeMatrix:
    """Negative threshold crossings with refractory suppression.

    A spike is marked at the first sample below ``-|threshold|`` after the
    trace was at or above it. Crossings less than ``refractory`` ms after the
    previous accepted spike are dropped. Spike matrices pass through as-is.
    """
    if isinstance(v, SpikeMatrix):
        return v
    if refractory < 0:
        raise ParameterError("refractory must be >= 0")
    vals = v.values
    if not np.all(np.isfinite(vals)):
        raise DataError("response matrix contains non-finite samples")
    thr = -abs(threshold)
    dt_ms = 1000.0 / v.sample_rate
    below = vals < thr
    prev = np.concatenate([np.zeros((vals.shape[0], 1), dtype=bool), below[:, :-1]], axis=1)
    crossings = below & ~prev
    out = np.zeros(vals.shape, dtype=np.uint8)
    for ch in range(vals.shape[0]):
        last = None
        for i in np.flatnonzero(crossings[ch]):
            if last is None or (i - last) * dt_ms >= refractory:
                out[ch, i] = 1
                last = i
    return SpikeMatrix(out, bin_ms=dt_ms)


@dataclass(frozen=True)
class BaselineRates:
    rates: tuple[float, float, float]
    windows: int

    def to_dict(self) -> dict:
        return {"rates": list(self.rates), "windows": self.windows}


def update_baseline(windows: Sequence[Sequence[float]]) -> BaselineRates:
    """Per-region mean spike count over the latest (at most 60) windows."""
    if len(windows) == 0:
        raise ValueError("baseline needs at least one window")
    recent = np.asarray(windows[-BASELINE_WINDOWS:], dtype=float)
    if recent.ndim != 2 or recent.shape[1] != 3:
        raise ValueError("each window must hold three region counts")
    return BaselineRates(tuple(float(m) for m in recent.mean(axis=0)), len(recent))


def region_densities(counts: Sequence[float], baseline: BaselineRates, eps: float = 1.0) -> np.ndarray:
    return np.asarray(counts, dtype=float) / (np.asarray(baseline.rates, dtype=float) + eps)


def count_decode(spikes: SpikeMatrix | Sequence[int], layout: RegionLayout, baseline: BaselineRates,
                 rng: np.random.Generator, eps: float = 1.0) -> int:
    """Index of the decode region with the highest baseline-relative density.

    Ties are broken uniformly with ``rng``. ``spikes`` may also be the
    three region counts directly.
    """
    if isinstance(spikes, SpikeMatrix):
        counts = layout.region_counts(spikes.counts())
    else:
        counts = np.asarray(spikes)
    dens = region_densities(counts, baseline, eps)
    best = np.flatnonzero(dens == dens.max())
    if len(best) == 1:
        return int(best[0])
    return int(best[rng.integers(len(best))])
