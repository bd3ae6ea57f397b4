"""Post-step feedback stimulation.

Positive reward earns a fixed pattern of high-frequency bursts; anything
else earns sparse random stimulation meant to perturb the network. Both
last twice the interaction period and target encoding plus decoding
electrodes, with amplitude and pulse width taken from the encoder.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .codec import EncodingParams, ParameterError, RegionLayout, StimulationMatrix


class FeedbackKind(str, enum.Enum):
    REINFORCING = "reinforcing"
    PLASTICITY = "plasticity"


@dataclass(frozen=True)
class FeedbackParams:
    burst_count: int = 5
    burst_rate: float = 100.0           # Hz
    burst_duration: float = 80.0        # ms
    random_rate_range: tuple[float, float] = (3.0, 25.0)   # Hz
    activation_prob: float = 1.0 / 3.0
    duration_multiplier: float = 2.0
    amplitude: float = 2.5              # uA
    pulse_width: float = 80.0           # us

    def __post_init__(self):
        lo, hi = self.random_rate_range
        if min(self.burst_count, self.burst_rate, self.burst_duration, self.duration_multiplier,
               self.amplitude, self.pulse_width, lo) <= 0:
            raise ParameterError("feedback parameters must be positive")
        if not 0 < self.activation_prob <= 1:
            raise ParameterError("activation_prob must lie in (0, 1]")
        if not lo < hi:
            raise ParameterError("random_rate_range must be increasing")

    @classmethod
    def inherit(cls, encoding: EncodingParams, **overrides) -> "FeedbackParams":
        """Default regimen carrying the encoder's amplitude and pulse width."""
        return cls(amplitude=encoding.amplitude, pulse_width=encoding.pulse_width, **overrides)

    def to_dict(self) -> dict:
        return {"burst_count": self.burst_count, "burst_rate": self.burst_rate,
                "burst_duration": self.burst_duration,
                "random_rate_range": list(self.random_rate_range),
                "activation_prob": self.activation_prob,
                "duration_multiplier": self.duration_multiplier,
                "amplitude": self.amplitude, "pulse_width": self.pulse_width}

    @classmethod
    def from_dict(cls, d: dict) -> "FeedbackParams":
        d = dict(d)
        if "random_rate_range" in d:
            d["random_rate_range"] = tuple(d["random_rate_range"])
        return cls(**d)


def select_feedback(reward: float) -> FeedbackKind:
    return FeedbackKind.REINFORCING if reward > 0 else FeedbackKind.PLASTICITY


def _duration_ms(interaction_period: float, p: FeedbackParams) -> int:
    if interaction_period <= 0:
        raise ParameterError("interaction_period must be positive")
    return int(round(p.duration_multiplier * interaction_period * 1000.0))


def burst_onsets_ms(duration_ms: int, p: FeedbackParams) -> list[int]:
    """Onset bins of ``burst_count`` evenly spaced bursts.

    Burst k is centred at (k + 1/2) * duration / burst_count.
    """
    if duration_ms < p.burst_count * p.burst_duration:
        raise ParameterError(
            f"{p.burst_count} bursts of {p.burst_duration} ms do not fit in {duration_ms} ms")
    spacing = 1000.0 / p.burst_rate
    per_burst = math.ceil(p.burst_duration / spacing - 1e-9)
    slot = duration_ms / p.burst_count
    times = []
    for k in range(p.burst_count):
        start = (k + 0.5) * slot - p.burst_duration / 2.0
        times.extend(int(math.floor(start + j * spacing + 1e-9)) for j in range(per_burst))
    return times


def reinforcing_feedback(interaction_period: float, layout: RegionLayout,
                         p: FeedbackParams) -> StimulationMatrix:
    bins = _duration_ms(interaction_period, p)
    onsets = np.zeros((layout.n_channels, bins), dtype=np.uint8)
    onsets[np.ix_(list(layout.active), burst_onsets_ms(bins, p))] = 1
    return StimulationMatrix(onsets, p.amplitude, p.pulse_width)


def random_train_ms(duration_ms: int, p: FeedbackParams, rng: np.random.Generator) -> list[int]:
    """Onsets with intervals 1/f (rounded to the 1 ms grid), f ~ U(lo, hi) per interval.

    The train starts at a uniform phase within its first interval.
    """
    lo, hi = p.random_rate_range
    def isi() -> int:
        return int(round(1000.0 / rng.uniform(lo, hi)))
    t = int(rng.integers(isi()))
    times = []
    while t < duration_ms:
        times.append(t)
        t += isi()
    return times


def plasticity_feedback(interaction_period: float, layout: RegionLayout, p: FeedbackParams,
                        rng: np.random.Generator) -> StimulationMatrix:
    bins = _duration_ms(interaction_period, p)
    onsets = np.zeros((layout.n_channels, bins), dtype=np.uint8)
    for ch in layout.active:
        if rng.random() < p.activation_prob:
            onsets[ch, random_train_ms(bins, p, rng)] = 1
    return StimulationMatrix(onsets, p.amplitude, p.pulse_width)


def feedback_matrix(kind: FeedbackKind, interaction_period: float, layout: RegionLayout,
                    p: FeedbackParams, rng: np.random.Generator) -> StimulationMatrix:
    if kind is FeedbackKind.REINFORCING:
        return reinforcing_feedback(interaction_period, layout, p)
    return plasticity_feedback(interaction_period, layout, p, rng)
