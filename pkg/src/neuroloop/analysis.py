"""Post-hoc statistics over study logs and trial results."""
from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .optimizer.grid import PARAM_NAMES
from .optimizer.study import read_log

log = logging.getLogger(__name__)


class DegenerateVarianceError(ValueError):
    """Both rank samples have zero variance; use permutation mode."""


# -- frames ---------------------------------------------------------------

class StudyFrame:
    """One row per client score: parameter columns plus score, group, stage, replicate, client_id."""

    META = ("score", "group", "stage", "replicate", "client_id")

    def __init__(self, df: pd.DataFrame):
        missing = set(self.META) - set(df.columns)
        if missing:
            raise ValueError(f"frame lacks columns {sorted(missing)}")
        if not np.isfinite(df["score"].to_numpy(dtype=float)).all():
            raise ValueError("scores must be finite")
        self.df = df.reset_index(drop=True)

    @property
    def params(self) -> list[str]:
        return [c for c in self.df.columns if c not in self.META]

    def __len__(self) -> int:
        return len(self.df)

    @classmethod
    def from_records(cls, rows: Iterable[Mapping]) -> "StudyFrame":
        flat = []
        for r in rows:
            row = dict(r.get("params", {}))
            row.update({k: r.get(k) for k in cls.META})
            row["score"] = float(row["score"])
            flat.append(row)
        return cls(pd.DataFrame(flat))

    @classmethod
    def from_study_log(cls, path: str | Path, group: str = "", stage: str = "",
                       valid_only: bool = True) -> "StudyFrame":
        records, _ = read_log(path)
        rows = []
        for rec in records:
            if rec.get("type") != "aggregate" or (valid_only and not rec["valid"]):
                continue
            for cid, s in sorted(rec["scores"].items()):
                rows.append({"params": rec["params"], "score": s, "group": group, "stage": stage,
                             "replicate": rec.get("replicate", 0), "client_id": cid})
        return cls.from_records(rows)

    def concat(self, other: "StudyFrame") -> "StudyFrame":
        return StudyFrame(pd.concat([self.df, other.df], ignore_index=True))


def load_scores(path: str | Path) -> np.ndarray:
    """Score sample from a study log, a trial summary JSON, or JSONL lines carrying "score"."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        doc = None
    if isinstance(doc, dict):
        if "episode_scores" in doc:
            return np.asarray(doc["episode_scores"], dtype=float)
        return np.asarray([doc["score"]], dtype=float)
    if isinstance(doc, list):
        return np.asarray([d["score"] if isinstance(d, dict) else d for d in doc], dtype=float)
    records, _ = read_log(path)
    if records and records[0].get("type") == "study":
        return StudyFrame.from_study_log(path).df["score"].to_numpy(dtype=float)
    scores = [r["score"] for r in records if "score" in r]
    if not scores:
        raise ValueError(f"{path}: no scores found")
    return np.asarray(scores, dtype=float)


# -- marginals ------------------------------------------------------------

def top_percentile_marginals(frame: StudyFrame | pd.DataFrame, pct: float = 1.0,
                             params: Sequence[str] | None = None) -> pd.DataFrame:
    """Histogram of parameter values among rows scoring at or above the (100 - pct) percentile.

    Long format: param, value, count, fraction. Every value present in the
    frame is listed, including those absent from the top rows.
    """
    if not 0 < pct <= 100:
        raise ValueError("pct must lie in (0, 100]")
    df = frame.df if isinstance(frame, StudyFrame) else frame
    if df.empty:
        raise ValueError("empty frame")
    params = list(params) if params else [c for c in df.columns if c in PARAM_NAMES] or \
        [c for c in df.columns if c not in StudyFrame.META]
    thr = np.percentile(df["score"].to_numpy(dtype=float), 100.0 - pct)
    top = df[df["score"] >= thr]
    out = []
    for p in params:
        counts = top[p].value_counts()
        for v in sorted(df[p].unique()):
            c = int(counts.get(v, 0))
            out.append({"param": p, "value": v, "count": c, "fraction": c / len(top)})
    return pd.DataFrame(out)


# -- Brunner-Munzel ---------------------------------------------------------

def _betacf(a: float, b: float, x: float, max_iter: int = 500, tol: float = 1e-15) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b)."""
    if not 0.0 <= x <= 1.0:
        raise ValueError("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return math.exp(ln_front) * _betacf(a, b, x) / a
    return 1.0 - math.exp(ln_front) * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, df: float) -> float:
    """Upper tail P(T > t) of Student's t."""
    if math.isinf(t):
        return 0.0 if t > 0 else 1.0
    tail = 0.5 * betainc(df / 2.0, 0.5, df / (df + t * t))
    return tail if t >= 0 else 1.0 - tail


def t_cdf(t: float, df: float) -> float:
    return 1.0 - t_sf(t, df)


@dataclass(frozen=True)
class BMResult:
    statistic: float
    df: float
    p_two_sided: float
    p_hat: float
    method: str = "t"

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "df": self.df, "p_two_sided": self.p_two_sided,
                "p_hat": self.p_hat, "method": self.method}


def _bm_parts(a: np.ndarray, b: np.ndarray):
    n1, n2 = len(a), len(b)
    pooled = rankdata(np.concatenate([a, b]))
    r1, r2 = pooled[:n1], pooled[n1:]
    d1 = r1 - rankdata(a)
    d2 = r2 - rankdata(b)
    m1, m2 = r1.mean(), r2.mean()
    v1 = float(np.sum((d1 - d1.mean()) ** 2) / (n1 - 1))
    v2 = float(np.sum((d2 - d2.mean()) ** 2) / (n2 - 1))
    p_hat = (m2 - (n2 + 1) / 2.0) / n1
    return n1, n2, m1, m2, v1, v2, p_hat


def _bm_stat(n1, n2, m1, m2, v1, v2) -> float:
    num = n1 * n2 * (m2 - m1)
    den = (n1 + n2) * math.sqrt(n1 * v1 + n2 * v2)
    if den == 0:
        return 0.0 if num == 0 else math.copysign(math.inf, num)
    return num / den


def brunner_munzel(a: Sequence[float], b: Sequence[float], permutation: bool = False,
                   n_perm: int = 100_000, max_exhaustive: int = 200_000, seed: int = 0) -> BMResult:
    """Brunner-Munzel test of stochastic equality; p_hat = P(A < B) + P(A = B) / 2.

    With ``permutation`` the two-sided p counts relabellings whose |statistic|
    reaches the observed one: exhaustive when there are at most
    ``max_exhaustive`` splits, otherwise ``n_perm`` seeded random ones.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two observations")
    n1, n2, m1, m2, v1, v2, p_hat = _bm_parts(a, b)
    stat = _bm_stat(n1, n2, m1, m2, v1, v2)
    if permutation:
        p = _permutation_p(a, b, abs(stat), n_perm, max_exhaustive, seed)
        return BMResult(stat, float("nan"), p, p_hat, "permutation")
    if v1 == 0 and v2 == 0:
        raise DegenerateVarianceError("both rank samples have zero variance; use permutation mode")
    df = (n1 * v1 + n2 * v2) ** 2 / ((n1 * v1) ** 2 / (n1 - 1) + (n2 * v2) ** 2 / (n2 - 1))
    p = min(1.0, 2.0 * t_sf(abs(stat), df))
    return BMResult(stat, df, p, p_hat)


def _stats_for_masks(x: np.ndarray, masks: np.ndarray) -> np.ndarray:
    """|BM statistic| for each boolean row of ``masks`` (True = first sample)."""
    n = len(x)
    n1 = int(masks[0].sum())
    n2 = n - n1
    order = np.argsort(x, kind="stable")
    xs = x[order]
    m = masks[:, order]
    pooled = rankdata(xs)
    if len(np.unique(xs)) == n:
        # without ties, pooled rank minus within-sample rank is the count of the
        # other sample's members below, so both deviations come from cumsums
        # integer-valued sums stay below 2**24 for n < 256, so float32 is exact
        dtype = np.float32 if n < 256 else np.float64
        mf = m.astype(dtype)
        w1 = np.cumsum(mf, axis=1, dtype=dtype)
        w2 = np.arange(1, n + 1, dtype=dtype) - w1
        s1 = np.einsum("ij,ij->i", w2, mf)
        q1 = np.einsum("ij,ij->i", w2 * w2, mf)
        rest = 1.0 - mf
        s2 = np.einsum("ij,ij->i", w1, rest)
        q2 = np.einsum("ij,ij->i", w1 * w1, rest)
        s1, q1, s2, q2 = (v.astype(np.float64) for v in (s1, q1, s2, q2))
        v1 = (q1 - s1 * s1 / n1) / (n1 - 1)
        v2 = (q2 - s2 * s2 / n2) / (n2 - 1)
        return _vector_stat(n1, n2, (mf @ pooled.astype(dtype)).astype(np.float64), pooled.sum(), np.maximum(v1, 0.0), np.maximum(v2, 0.0))
    idx = np.argsort(~m, axis=1, kind="stable")
    i1, i2 = idx[:, :n1], idx[:, n1:]
    ra, rb = pooled[i1], pooled[i2]
    d1 = ra - rankdata(xs[i1], axis=1)
    d2 = rb - rankdata(xs[i2], axis=1)
    v1 = d1.var(axis=1, ddof=1)
    v2 = d2.var(axis=1, ddof=1)
    return _vector_stat(n1, n2, ra.sum(axis=1), pooled.sum(), v1, v2)


def _vector_stat(n1, n2, r1sum, total, v1, v2) -> np.ndarray:
    m1 = r1sum / n1
    m2 = (total - r1sum) / n2
    num = n1 * n2 * (m2 - m1)
    den = (n1 + n2) * np.sqrt(n1 * v1 + n2 * v2)
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.where(den > 0, num / np.where(den > 0, den, 1.0),
                        np.where(np.isclose(num, 0.0), 0.0, np.inf))
    return np.abs(stat)


def _permutation_p(a, b, observed: float, n_perm: int, max_exhaustive: int, seed: int,
                   chunk: int = 20_000) -> float:
    x = np.concatenate([a, b])
    n, n1 = len(x), len(a)
    tol = 1e-9 * max(1.0, observed) if math.isfinite(observed) else 0.0
    if math.comb(n, n1) <= max_exhaustive:
        hits = total = 0
        combos = itertools.combinations(range(n), n1)
        while True:
            block = list(itertools.islice(combos, chunk))
            if not block:
                break
            masks = np.zeros((len(block), n), dtype=bool)
            masks[np.repeat(np.arange(len(block)), n1), np.asarray(block).ravel()] = True
            hits += int(np.sum(_stats_for_masks(x, masks) >= observed - tol))
            total += len(block)
        return hits / total
    rng = np.random.default_rng(seed)
    hits = 0
    done = 0
    while done < n_perm:
        k = min(chunk, n_perm - done)
        # a uniform n1-subset: positions holding the n1 smallest of n iid keys
        keys = rng.random((k, n))
        kth = np.partition(keys, n1 - 1, axis=1)[:, n1 - 1:n1]
        masks = keys <= kth
        hits += int(np.sum(_stats_for_masks(x, masks) >= observed - tol))
        done += k
    return hits / n_perm


# -- score tables ---------------------------------------------------------

def score_table(frame: StudyFrame | pd.DataFrame, grouping: str | Sequence[str] = "group",
                n_boot: int = 10_000, seed: int = 0, level: float = 0.95) -> pd.DataFrame:
    """Per-group mean with a seeded percentile-bootstrap confidence interval."""
    df = frame.df if isinstance(frame, StudyFrame) else frame
    if df.empty:
        raise ValueError("empty frame")
    keys = [grouping] if isinstance(grouping, str) else list(grouping)
    rng = np.random.default_rng(seed)
    rows = []
    for name, sub in df.groupby(keys, sort=True):
        x = sub["score"].to_numpy(dtype=float)
        n = len(x)
        row = dict(zip(keys, name if isinstance(name, tuple) else (name,)))
        row.update({"mean": float(x.mean()), "n": n})
        if n < 2:
            row.update({"ci_low": float("nan"), "ci_high": float("nan"), "ci_defined": False})
        else:
            means = x[rng.integers(0, n, size=(n_boot, n))].mean(axis=1)
            lo, hi = np.percentile(means, [50 * (1 - level), 50 * (1 + level)])
            row.update({"ci_low": float(lo), "ci_high": float(hi), "ci_defined": True})
        rows.append(row)
    return pd.DataFrame(rows)


def significance_marker(p: float) -> str:
    for cut, mark in ((1e-4, "****"), (1e-3, "***"), (1e-2, "**"), (5e-2, "*")):
        if p < cut:
            return mark
    return "ns"


# -- heatmaps -------------------------------------------------------------

def heatmap_grid(result, episode: int = 0, side: int = 8) -> np.ndarray:
    """side x side grid of episode-mean counts over per-channel calibration counts."""
    ep = result.episodes[episode]
    have = sum(rec.get("channel_counts") is not None for rec in ep.steps)
    if have < len(ep.steps) or not ep.baseline_channels:
        warnings.warn(f"episode {episode}: channel data missing for {len(ep.steps) - have} of "
                      f"{len(ep.steps)} steps", RuntimeWarning, stacklevel=2)
    if not ep.baseline_channels:
        return np.full((side, side), np.nan)
    rel = result.heatmap(episode)[2]
    grid = np.full(side * side, np.nan)
    grid[:len(rel)] = rel[:side * side]
    return grid.reshape(side, side)


def export_heatmap(results, episode: int, fh: IO[str], side: int = 8) -> np.ndarray:
    """Write the relative-count grid as CSV (one MEA row per line); returns it."""
    grid = heatmap_grid(results, episode, side)
    writer = csv.writer(fh)
    for row in grid:
        writer.writerow(["" if np.isnan(v) else f"{v:.6g}" for v in row])
    return grid
