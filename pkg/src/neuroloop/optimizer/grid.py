"""Parameter grids and the non-monotonic dispatch schedule."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

PARAM_NAMES = ("f_min", "f_max", "amplitude", "pulse_width", "tick_rate", "ticks_per_step")

STAGE_VALUES: dict[str, dict[str, list[float]]] = {
    "stage1": {
        "f_min": [2.0, 3.0, 4.0, 5.0],
        "f_max": [40.0, 60.0, 80.0, 100.0],
        "amplitude": [1.0, 2.0, 2.5],
        "pulse_width": [40.0, 80.0, 160.0],
        "tick_rate": [1.0, 2.0, 4.0],
        "ticks_per_step": [2, 4, 8],
    },
    "stage2": {
        "f_min": [4.0],
        "f_max": [40.0, 60.0, 80.0, 100.0],
        "amplitude": [2.0, 2.5],
        "pulse_width": [40.0, 80.0],
        "tick_rate": [1.0, 2.0],
        "ticks_per_step": [2, 4],
    },
}

# the consistently strong subset reported after the second stage
TOP_VALUES = {
    "f_min": [4.0],
    "f_max": [40.0, 60.0, 80.0],
    "amplitude": [2.5],
    "pulse_width": [40.0, 80.0],
    "tick_rate": [1.0, 2.0],
    "ticks_per_step": [4],
}


def params_key(params: dict) -> str:
    """Canonical hashable identity of a parameter set."""
    return json.dumps({k: params[k] for k in sorted(params)}, sort_keys=True)


@dataclass(frozen=True)
class ParameterGrid:
    stage: str
    values: dict[str, list] = field(hash=False)

    @property
    def size(self) -> int:
        return int(np.prod([len(v) for v in self.values.values()]))

    def combos(self) -> list[dict]:
        names = list(self.values)
        return [dict(zip(names, vals)) for vals in itertools.product(*self.values.values())]

    def __len__(self) -> int:
        return self.size

    def to_dict(self) -> dict:
        return {"stage": self.stage, "values": self.values}


def build_grid(stage: str = "stage1", **overrides: list) -> ParameterGrid:
    """Cartesian grid for a stage; keyword overrides replace individual value lists."""
    if stage not in STAGE_VALUES and stage != "top":
        raise ValueError(f"unknown stage {stage!r}")
    base = TOP_VALUES if stage == "top" else STAGE_VALUES[stage]
    values = {k: list(v) for k, v in base.items()}
    for name, vals in overrides.items():
        if name not in values:
            raise ValueError(f"unknown parameter {name!r}")
        if not vals:
            raise ValueError(f"empty value list for {name}")
        values[name] = list(vals)
    return ParameterGrid(stage, values)


@dataclass(frozen=True)
class ScheduleEntry:
    unit: int               # position in the schedule
    combo: int              # index into grid.combos()
    replicate: int
    params: dict = field(hash=False)

    @property
    def uid(self) -> str:
        return f"r{self.replicate}c{self.combo}"

    def to_dict(self) -> dict:
        return {"unit": self.unit, "combo": self.combo, "replicate": self.replicate,
                "params": self.params}


def schedule(grid: ParameterGrid, seed: int = 0, replicates: int = 1) -> list[ScheduleEntry]:
    """Seeded shuffle; each replicate round is a fresh permutation of the whole grid."""
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    rng = np.random.default_rng(seed)
    combos = grid.combos()
    out = []
    for rep in range(replicates):
        for idx in rng.permutation(len(combos)):
            out.append(ScheduleEntry(len(out), int(idx), rep, combos[idx]))
    return out


def order_correlations(entries: list[ScheduleEntry]) -> dict[str, float]:
    """Spearman correlation between dispatch position and each parameter's value."""
    pos = np.arange(len(entries))
    out = {}
    for name in entries[0].params:
        vals = np.array([e.params[name] for e in entries], dtype=float)
        out[name] = 0.0 if np.all(vals == vals[0]) else float(spearmanr(pos, vals)[0])
    return out
