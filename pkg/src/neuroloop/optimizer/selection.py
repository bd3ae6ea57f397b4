"""Report aggregation and the two selection stages."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .grid import params_key

log = logging.getLogger(__name__)

DEFAULT_QUORUM = 4
PERCENTILE = 99.0


class AggregationError(ValueError):
    pass


@dataclass(frozen=True)
class TrialAssignment:
    trial_id: str
    params: dict = field(hash=False)
    mode: str = "A"
    seeds: dict = field(default_factory=dict, hash=False)
    replicate: int = 0
    replicates: int = 1

    def __post_init__(self):
        if not 0 <= self.replicate < self.replicates:
            raise ValueError("replicate index out of range")

    def to_dict(self) -> dict:
        return {"trial_id": self.trial_id, "params": self.params, "mode": self.mode,
                "seeds": self.seeds, "replicate": self.replicate, "replicates": self.replicates}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrialAssignment":
        return cls(d["trial_id"], dict(d["params"]), d.get("mode", "A"), dict(d.get("seeds", {})),
                   int(d.get("replicate", 0)), int(d.get("replicates", 1)))


@dataclass(frozen=True)
class TrialReport:
    trial_id: str
    client_id: str
    score: float
    digest: str = ""
    status: str = "ok"
    params: dict | None = field(default=None, hash=False)

    def to_dict(self) -> dict:
        d = {"trial_id": self.trial_id, "client_id": self.client_id, "score": self.score,
             "digest": self.digest, "status": self.status}
        if self.params is not None:
            d["params"] = self.params
        return d


@dataclass(frozen=True)
class AggregateScore:
    params: dict = field(hash=False)
    scores: dict = field(hash=False)      # client_id -> score
    mean: float = float("nan")
    n_clients: int = 0
    valid: bool = False
    replicate: int = 0

    @property
    def key(self) -> str:
        return params_key(self.params)

    def identity(self) -> tuple:
        """Hashable value used for multiset comparisons."""
        return (self.key, self.replicate, tuple(sorted(self.scores.values())), self.mean, self.valid)

    def to_dict(self) -> dict:
        return {"params": self.params, "scores": self.scores, "mean": self.mean,
                "n_clients": self.n_clients, "valid": self.valid, "replicate": self.replicate}

    @classmethod
    def from_dict(cls, d: Mapping) -> "AggregateScore":
        return cls(dict(d["params"]), dict(d["scores"]), float(d["mean"]), int(d["n_clients"]),
                   bool(d["valid"]), int(d.get("replicate", 0)))


def aggregate(reports: Sequence[TrialReport], quorum: int = DEFAULT_QUORUM,
              params: dict | None = None, replicate: int = 0) -> AggregateScore:
    """Mean of client scores, valid once ``quorum`` distinct clients have reported."""
    ok = [r for r in reports if r.status == "ok"]
    keys = {params_key(r.params) for r in ok if r.params is not None}
    if params is not None:
        keys.add(params_key(params))
    if len(keys) > 1:
        raise AggregationError("reports for different parameter sets cannot be aggregated")
    if params is None:
        params = next((r.params for r in ok if r.params is not None), {})
    scores: dict[str, list[float]] = {}
    for r in ok:
        scores.setdefault(r.client_id, []).append(float(r.score))
    flat = sorted(s for v in scores.values() for s in v)
    mean = math.fsum(flat) / len(flat) if flat else float("nan")
    per_client = {c: math.fsum(v) / len(v) for c, v in scores.items()}
    return AggregateScore(dict(params), per_client, mean, len(scores), len(scores) >= quorum,
                          replicate)


def threshold(samples: Iterable[float], percentile: float = PERCENTILE) -> float:
    arr = np.asarray(list(samples), dtype=float)
    if arr.size == 0:
        raise ValueError("baseline sample is empty")
    return float(np.percentile(arr, percentile))


@dataclass
class Shortlist:
    params: list[dict]
    thresholds: dict[str, float]
    status: str = "ok"

    def keys(self) -> set[str]:
        return {params_key(p) for p in self.params}

    def __len__(self) -> int:
        return len(self.params)

    def __contains__(self, params: dict) -> bool:
        return params_key(params) in self.keys()


def stage1_select(aggregates: Sequence[AggregateScore] | Mapping[str, Sequence[AggregateScore]],
                  baseline_scores: Mapping[str, Sequence[float]],
                  percentile: float = PERCENTILE) -> Shortlist:
    """Combos whose valid aggregate beats the random-baseline percentile of every group.

    With a flat aggregate list the single aggregate must clear every group's
    threshold. With a mapping group -> aggregates, each group's aggregate
    must clear that group's own threshold and the combo must appear in all.
    """
    if not baseline_scores:
        raise ValueError("need at least one baseline group")
    thr = {g: threshold(s, percentile) for g, s in baseline_scores.items()}
    if isinstance(aggregates, Mapping):
        missing = set(thr) - set(aggregates)
        if missing:
            raise ValueError(f"no aggregates for groups {sorted(missing)}")
        passing = None
        params_by_key = {}
        for g, aggs in aggregates.items():
            if g not in thr:
                continue
            ok = {a.key for a in aggs if a.valid and a.mean > thr[g]}
            params_by_key.update({a.key: a.params for a in aggs})
            passing = ok if passing is None else passing & ok
        any_valid = any(a.valid for aggs in aggregates.values() for a in aggs)
        selected = [params_by_key[k] for k in sorted(passing or ())]
    else:
        any_valid = any(a.valid for a in aggregates)
        bar = max(thr.values())
        seen = set()
        selected = []
        for a in aggregates:
            if a.valid and a.mean > bar and a.key not in seen:
                seen.add(a.key)
                selected.append(a.params)
    if not any_valid:
        log.warning("stage 1 selection: no valid aggregates")
        return Shortlist([], thr, status="no_valid_aggregates")
    return Shortlist(selected, thr)


def stage2_select(replicated: Mapping[str, Sequence[float]] | Sequence[AggregateScore],
                  baselines: Sequence[float] | Mapping[str, Sequence[float]],
                  strategy: str = "all", percentile: float = PERCENTILE,
                  params: Mapping[str, dict] | None = None) -> Shortlist:
    """Combos whose replicate scores consistently beat the culture-baseline percentile.

    ``strategy``: "all" (every replicate above), "majority" (more than half)
    or "mean" (replicate mean above).
    """
    if strategy not in ("all", "majority", "mean"):
        raise ValueError(f"unknown strategy {strategy!r}")
    groups = baselines if isinstance(baselines, Mapping) else {"baseline": baselines}
    thr = {g: threshold(s, percentile) for g, s in groups.items()}
    bar = max(thr.values())
    if not isinstance(replicated, Mapping):
        by_key: dict[str, list[float]] = {}
        params = dict(params or {})
        for a in replicated:
            if a.valid:
                by_key.setdefault(a.key, []).append(a.mean)
                params.setdefault(a.key, a.params)
        replicated = by_key
    params = params or {}
    selected = []
    for key in sorted(replicated):
        scores = np.asarray(replicated[key], dtype=float)
        if scores.size == 0:
            continue
        above = scores > bar
        if strategy == "all":
            ok = bool(above.all())
        elif strategy == "majority":
            ok = above.sum() * 2 > scores.size
        else:
            ok = scores.mean() > bar
        if ok:
            selected.append(params.get(key) or _params_from_key(key))
    return Shortlist(selected, thr)


def _params_from_key(key: str) -> dict:
    return json.loads(key)
