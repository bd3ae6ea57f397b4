"""In-process sweeps: the same Study coordinator fed by a worker pool."""
from __future__ import annotations

import concurrent.futures as cf
import logging
from typing import Callable

from ..looprunner import TrialConfig
from .selection import AggregateScore, TrialAssignment, TrialReport
from .server import execute
from .study import Study

log = logging.getLogger(__name__)


def _run(base: dict, assignment: dict) -> tuple[float, str, str]:
    return execute(TrialConfig.from_dict(base), TrialAssignment.from_dict(assignment))


def run_local(study: Study, base: TrialConfig | dict, n_clients: int | None = None,
              workers: int = 1, runner: Callable[[dict, dict], tuple[float, str, str]] | None = None
              ) -> list[AggregateScore]:
    """Drive a study to completion with ``n_clients`` simulated clients.

    ``workers`` > 1 runs trials in separate processes. Each simulated client
    has at most one trial in flight, so quorum still means distinct clients.
    ``runner(base, assignment) -> (score, digest, status)`` replaces the
    closed-loop trial, e.g. for other agents; it must be a module-level function.
    """
    runner = runner or _run
    n_clients = max(study.quorum, n_clients or study.quorum)
    clients = [f"local-{i}" for i in range(n_clients)]
    base_dict = base.to_dict() if isinstance(base, TrialConfig) else dict(base)
    pool = cf.ProcessPoolExecutor(workers) if workers > 1 else cf.ThreadPoolExecutor(1)
    running: dict[cf.Future, tuple[str, TrialAssignment]] = {}
    with pool:
        while not study.complete:
            busy = {c for c, _ in running.values()}
            for c in clients:
                if c in busy:
                    continue
                nxt = study.next_for(c)
                if isinstance(nxt, TrialAssignment):
                    fut = pool.submit(runner, base_dict, nxt.to_dict())
                    running[fut] = (c, nxt)
            if not running:
                if study.complete:
                    break
                raise RuntimeError("study stalled: no client can take the remaining slots")
            done, _ = cf.wait(running, return_when=cf.FIRST_COMPLETED)
            for fut in done:
                c, a = running.pop(fut)
                score, digest, status = fut.result()
                study.report(TrialReport(a.trial_id, c, score, digest, status))
    return study.aggregates()
