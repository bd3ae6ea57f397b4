"""Study coordinator: slot bookkeeping, quorum aggregation and the append-only log.

A schedule entry (one parameter set at one replicate) is a *unit*. Each unit
has ``quorum`` slots, each run by a different client. Slot seeds depend only
on (study seed, combo, replicate, slot), so a unit's aggregate does not depend
on which client ran which slot or on crashes in between.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..codec import EncodingParams
from ..looprunner import Seeds, TrialConfig, expected_virtual_ms
from .grid import ScheduleEntry
from .selection import DEFAULT_QUORUM, AggregateScore, TrialAssignment, TrialReport, aggregate

log = logging.getLogger(__name__)


class StudyError(RuntimeError):
    pass


def slot_seeds(study_seed: int, entry: ScheduleEntry, slot: int) -> Seeds:
    state = np.random.SeedSequence([study_seed, entry.combo, entry.replicate, slot]).generate_state(1)
    return Seeds.from_seed(int(state[0]))


def schedule_hash(entries: list[ScheduleEntry]) -> str:
    blob = json.dumps([e.to_dict() for e in entries], sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def default_timeout(params: dict, mode: str) -> float:
    """Ten times the trial's virtual duration, in seconds."""
    enc = EncodingParams.from_dict(params)
    return 10 * expected_virtual_ms(TrialConfig(mode=mode, encoding=enc)) / 1000.0


def read_log(path: str | Path) -> tuple[list[dict], int]:
    """Parse a study log; returns the records and the byte length of the intact prefix.

    A torn final line (crash mid-write) is dropped; corruption anywhere else raises.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    records = []
    good = 0
    pos = 0
    while pos < len(data):
        end = data.find(b"\n", pos)
        last = end == -1
        line = data[pos:] if last else data[pos:end]
        nxt = len(data) if last else end + 1
        if line.strip():
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError:
                if data[nxt:].strip():
                    raise StudyError(f"{path}: malformed record at byte {pos}")
                log.warning("dropping torn final line of %s", path)
                break
        good = nxt
        pos = nxt
    return records, good


@dataclass
class _Unit:
    entry: ScheduleEntry
    reports: dict[int, TrialReport] = field(default_factory=dict)
    inflight: dict[int, tuple[str, float]] = field(default_factory=dict)   # slot -> (client, deadline)
    aggregate: AggregateScore | None = None


class Study:
    def __init__(self, entries: list[ScheduleEntry], quorum: int = DEFAULT_QUORUM,
                 timeout_s: float | None = None, log_path: str | Path | None = None,
                 mode: str = "A", study_seed: int = 0, replicates: int | None = None,
                 clock: Callable[[], float] = time.monotonic):
        if not entries:
            raise StudyError("empty schedule")
        if quorum < 1:
            raise StudyError("quorum must be >= 1")
        self.entries = entries
        self.quorum = quorum
        self.timeout_s = timeout_s
        self.mode = mode
        self.study_seed = study_seed
        self.replicates = replicates or (max(e.replicate for e in entries) + 1)
        self.clock = clock
        self.units = [_Unit(e) for e in entries]
        self.lock = threading.RLock()
        self.log_path = Path(log_path) if log_path else None
        self.n_reports = 0
        self.header = {"type": "study", "schedule_hash": schedule_hash(entries), "quorum": quorum,
                       "units": len(entries), "mode": mode, "study_seed": study_seed}
        if self.log_path and self.log_path.exists() and self.log_path.stat().st_size > 0:
            self._resume()
        elif self.log_path:
            self._append(self.header)

    # -- log ---------------------------------------------------------------
    def _append(self, record: dict) -> None:
        if not self.log_path:
            return
        with open(self.log_path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _resume(self) -> None:
        records, good = read_log(self.log_path)
        with open(self.log_path, "r+b") as fh:
            if good < self.log_path.stat().st_size:
                fh.truncate(good)
            if good:
                fh.seek(good - 1)
                if fh.read(1) != b"\n":
                    fh.write(b"\n")
        if not records or records[0].get("type") != "study":
            raise StudyError("study log lacks a header")
        head = records[0]
        for k in ("schedule_hash", "quorum", "mode", "study_seed"):
            if head.get(k) != self.header[k]:
                raise StudyError(f"study log was written for a different study ({k} differs)")
        for rec in records[1:]:
            unit = self.units[rec["unit"]]
            if rec["type"] == "report" and rec["status"] == "ok":
                unit.reports[rec["slot"]] = TrialReport(rec["trial_id"], rec["client_id"], rec["score"],
                                                        rec["digest"], rec["status"], unit.entry.params)
                self.n_reports += 1
            elif rec["type"] == "aggregate":
                if unit.aggregate is not None:
                    raise StudyError(f"unit {rec['unit']} aggregated twice in log")
                unit.aggregate = AggregateScore.from_dict(rec)
        for i, unit in enumerate(self.units):
            if unit.aggregate is None and len(unit.reports) >= self.quorum:
                self._finish(i)
        log.info("resumed study: %d reports, %d aggregates", self.n_reports, len(self.aggregates()))

    # -- state ---------------------------------------------------------------
    def trial_id(self, unit: int, slot: int) -> str:
        return f"u{unit}.{slot}"

    def _parse(self, trial_id: str) -> tuple[int, int]:
        try:
            u, s = trial_id[1:].split(".")
            unit, slot = int(u), int(s)
        except (ValueError, IndexError):
            raise StudyError(f"unknown trial_id {trial_id!r}") from None
        if not (trial_id.startswith("u") and 0 <= unit < len(self.units) and 0 <= slot < self.quorum):
            raise StudyError(f"unknown trial_id {trial_id!r}")
        return unit, slot

    @property
    def complete(self) -> bool:
        with self.lock:
            return all(u.aggregate is not None for u in self.units)

    def aggregates(self) -> list[AggregateScore]:
        with self.lock:
            return [u.aggregate for u in self.units if u.aggregate is not None]

    def _expire(self, now: float) -> None:
        for i, unit in enumerate(self.units):
            for slot, (client, deadline) in list(unit.inflight.items()):
                if now >= deadline:
                    log.info("trial %s on %s timed out; reissuing", self.trial_id(i, slot), client)
                    del unit.inflight[slot]

    def next_for(self, client_id: str) -> TrialAssignment | str:
        """An assignment, or "WAIT" / "DONE"."""
        with self.lock:
            if self.complete:
                return "DONE"
            now = self.clock()
            self._expire(now)
            for i, unit in enumerate(self.units):
                if unit.aggregate is not None:
                    continue
                busy = {r.client_id for r in unit.reports.values()}
                busy |= {c for c, _ in unit.inflight.values()}
                if client_id in busy:
                    continue
                free = [s for s in range(self.quorum) if s not in unit.reports and s not in unit.inflight]
                if not free:
                    continue
                slot = free[0]
                e = unit.entry
                timeout = self.timeout_s if self.timeout_s is not None else default_timeout(e.params, self.mode)
                unit.inflight[slot] = (client_id, now + timeout)
                return TrialAssignment(self.trial_id(i, slot), dict(e.params), self.mode,
                                       slot_seeds(self.study_seed, e, slot).to_dict(),
                                       e.replicate, self.replicates)
            return "WAIT"

    def report(self, rep: TrialReport) -> bool:
        """Record a report; False when it is stale or a duplicate."""
        with self.lock:
            i, slot = self._parse(rep.trial_id)
            unit = self.units[i]
            holder = unit.inflight.get(slot)
            if unit.aggregate is not None or slot in unit.reports:
                return False
            if any(r.client_id == rep.client_id for r in unit.reports.values()):
                return False
            record = {"type": "report", "unit": i, "slot": slot, **rep.to_dict()}
            record.pop("params", None)
            if rep.status != "ok":
                if holder and holder[0] == rep.client_id:
                    del unit.inflight[slot]
                self._append(record)
                return True
            if holder is not None:
                del unit.inflight[slot]
            unit.reports[slot] = TrialReport(rep.trial_id, rep.client_id, float(rep.score), rep.digest,
                                             "ok", unit.entry.params)
            self.n_reports += 1
            self._append(record)
            if len(unit.reports) >= self.quorum:
                self._finish(i)
            return True

    def _finish(self, i: int) -> None:
        unit = self.units[i]
        reports = [unit.reports[s] for s in sorted(unit.reports)]
        agg = aggregate(reports, self.quorum, unit.entry.params, unit.entry.replicate)
        unit.aggregate = agg
        self._append({"type": "aggregate", "unit": i, **agg.to_dict()})
