"""Study server and client over newline-delimited JSON on TCP.

client -> server: HELLO{client_id, substrate}, NEXT{}, REPORT{trial_id, score, digest, status}
server -> client: OK{}, ASSIGN{assignment}, WAIT{retry_s}, DONE{}, ERR{code, msg}

No authentication or TLS; run it on a trusted network.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import socket
import socketserver
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Callable

from ..codec import EncodingParams
from ..looprunner import Seeds, TrialConfig, run_trial
from .grid import ScheduleEntry
from .selection import DEFAULT_QUORUM, AggregateScore, TrialAssignment, TrialReport
from .study import Study, StudyError

log = logging.getLogger(__name__)

EXIT_DONE = 0
EXIT_CONNECTION = 1
EXIT_REJECTED = 2


class ProtocolError(RuntimeError):
    pass


def send(fh: IO[str], frame_type: str, **payload) -> None:
    fh.write(json.dumps({"type": frame_type, **payload}) + "\n")
    fh.flush()


def recv(fh: IO[str]) -> dict:
    line = fh.readline()
    if not line:
        raise ConnectionError("connection closed")
    msg = json.loads(line)
    if not isinstance(msg, dict) or "type" not in msg:
        raise ProtocolError(f"bad frame {line.strip()!r}")
    return msg


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        owner: StudyServer = self.server.owner
        owner._track(self.connection, True)
        client_id = None
        wfile = self.wfile

        def reply(kind, **payload):
            wfile.write((json.dumps({"type": kind, **payload}) + "\n").encode())
            wfile.flush()

        try:
            for raw in self.rfile:
                try:
                    msg = json.loads(raw)
                    kind = msg["type"]
                except (ValueError, KeyError, TypeError):
                    reply("ERR", code="bad_frame", msg="expected a JSON object with a type")
                    return
                if kind == "HELLO":
                    cid = msg.get("client_id")
                    if client_id is not None or not isinstance(cid, str) or not cid:
                        reply("ERR", code="bad_hello", msg="HELLO needs a client_id, once per session")
                        return
                    if not owner._register(cid):
                        reply("ERR", code="duplicate_client", msg=f"client_id {cid!r} already connected")
                        return
                    client_id = cid
                    log.info("client %s connected (%s)", cid, msg.get("substrate"))
                    reply("OK")
                elif client_id is None:
                    reply("ERR", code="no_hello", msg="send HELLO first")
                    return
                elif kind == "NEXT":
                    nxt = owner.study.next_for(client_id)
                    if nxt == "DONE":
                        reply("DONE")
                    elif nxt == "WAIT":
                        reply("WAIT", retry_s=owner.poll_s)
                    else:
                        reply("ASSIGN", assignment=nxt.to_dict())
                elif kind == "REPORT":
                    try:
                        rep = TrialReport(str(msg["trial_id"]), client_id, float(msg["score"]),
                                          str(msg.get("digest", "")), str(msg.get("status", "ok")))
                    except (KeyError, TypeError, ValueError):
                        reply("ERR", code="bad_report", msg="REPORT needs trial_id and a numeric score")
                        return
                    try:
                        accepted = owner.study.report(rep)
                    except StudyError as exc:
                        reply("ERR", code="unknown_trial", msg=str(exc))
                        continue
                    reply("OK", accepted=accepted)
                    owner._changed()
                else:
                    reply("ERR", code="unknown_type", msg=f"unknown frame type {kind!r}")
                    return
        except OSError:
            pass
        finally:
            if client_id is not None:
                owner._unregister(client_id)
            owner._track(self.connection, False)


class _TCPServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class StudyServer:
    """Hosts a Study on a TCP socket; start() returns immediately."""

    def __init__(self, study: Study, bind: tuple[str, int] = ("127.0.0.1", 0), poll_s: float = 0.2):
        self.study = study
        self.poll_s = poll_s
        self._tcp = _TCPServer(bind, _Handler, bind_and_activate=True)
        self._tcp.owner = self
        self._clients: set[str] = set()
        self._conns: set[socket.socket] = set()
        self._cond = threading.Condition()
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._tcp.server_address[:2]

    def _register(self, cid: str) -> bool:
        with self._cond:
            if cid in self._clients:
                return False
            self._clients.add(cid)
            return True

    def _unregister(self, cid: str) -> None:
        with self._cond:
            self._clients.discard(cid)
            self._cond.notify_all()

    def _track(self, conn, add: bool) -> None:
        with self._cond:
            (self._conns.add if add else self._conns.discard)(conn)
            self._cond.notify_all()

    def _changed(self) -> None:
        with self._cond:
            self._cond.notify_all()

    def start(self) -> "StudyServer":
        self._thread = threading.Thread(target=self._tcp.serve_forever, kwargs={"poll_interval": 0.05},
                                        daemon=True)
        self._thread.start()
        return self

    def wait(self, timeout: float | None = None, linger_s: float = 5.0) -> bool:
        """Block until the study completes and connected clients have left (or linger expires)."""
        end = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while not self.study.complete:
                left = None if end is None else end - time.monotonic()
                if left is not None and left <= 0:
                    return False
                self._cond.wait(0.2 if left is None else min(left, 0.2))
            quit_by = time.monotonic() + linger_s
            while self._conns and time.monotonic() < quit_by:
                self._cond.wait(0.05)
        return True

    def kill(self) -> None:
        """Abrupt stop: drop the listener and every live session."""
        self._tcp.shutdown()
        with self._cond:
            conns = list(self._conns)
        for c in conns:
            try:
                c.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
        self._tcp.server_close()

    close = kill


@dataclass
class StudyRecord:
    aggregates: list[AggregateScore]
    n_reports: int
    log_path: Path | None
    complete: bool


def serve(bind: tuple[str, int], entries: list[ScheduleEntry], quorum: int = DEFAULT_QUORUM,
          timeout_s: float | None = None, log_path: str | Path | None = None, mode: str = "A",
          study_seed: int = 0, ready: Callable[[tuple[str, int]], None] | None = None,
          max_wait_s: float | None = None) -> StudyRecord:
    """Run a study server until every unit is aggregated."""
    study = Study(entries, quorum, timeout_s, log_path, mode, study_seed)
    server = StudyServer(study, bind).start()
    log.info("study server listening on %s:%d", *server.address)
    if ready:
        ready(server.address)
    try:
        server.wait(max_wait_s)
    finally:
        server.close()
    return StudyRecord(study.aggregates(), study.n_reports, study.log_path, study.complete)


def assignment_config(base: TrialConfig, a: TrialAssignment) -> TrialConfig:
    """The client's base config with the assignment's parameters, mode and seeds."""
    enc = EncodingParams.from_dict({**base.encoding.to_dict(), **a.params})
    fb = base.feedback
    if fb is not None:
        fb = dataclasses.replace(fb, amplitude=enc.amplitude, pulse_width=enc.pulse_width)
    return dataclasses.replace(base, mode=a.mode, encoding=enc, feedback=fb, seeds=Seeds(**a.seeds))


def execute(base: TrialConfig, a: TrialAssignment) -> tuple[float, str, str]:
    """Run one assignment; returns (score, digest, status)."""
    try:
        res = run_trial(assignment_config(base, a))
    except Exception as exc:       # reported back so the slot is reissued
        log.exception("trial %s failed: %s", a.trial_id, exc)
        return 0.0, "", "error"
    return res.score, res.digest(), "ok"


def client_run(address: tuple[str, int], client_id: str, base: TrialConfig, retries: int = 5,
               backoff_s: float = 0.5, io_timeout_s: float = 60.0,
               on_result: Callable[[TrialAssignment, float], None] | None = None) -> int:
    """Request, run and report trials until DONE. Returns an exit code."""
    failures = 0
    while True:
        try:
            with socket.create_connection(address, timeout=io_timeout_s) as sock:
                fh = sock.makefile("rw", encoding="utf-8", newline="\n")
                send(fh, "HELLO", client_id=client_id, substrate=base.substrate.to_dict())
                resp = recv(fh)
                if resp["type"] == "ERR":
                    log.error("server rejected %s: %s", client_id, resp.get("msg"))
                    return EXIT_REJECTED
                failures = 0
                while True:
                    send(fh, "NEXT")
                    resp = recv(fh)
                    if resp["type"] == "DONE":
                        return EXIT_DONE
                    if resp["type"] == "WAIT":
                        time.sleep(float(resp.get("retry_s", 0.2)))
                        continue
                    if resp["type"] != "ASSIGN":
                        log.error("unexpected frame %s", resp)
                        return EXIT_REJECTED
                    a = TrialAssignment.from_dict(resp["assignment"])
                    score, digest, status = execute(base, a)
                    if on_result:
                        on_result(a, score)
                    send(fh, "REPORT", trial_id=a.trial_id, score=score, digest=digest, status=status)
                    resp = recv(fh)
                    if resp["type"] == "ERR":
                        log.warning("report for %s refused: %s", a.trial_id, resp.get("msg"))
        except (OSError, ConnectionError, ProtocolError, ValueError) as exc:
            failures += 1
            if failures > retries:
                log.error("client %s giving up after %d connection failures: %s", client_id, retries, exc)
                return EXIT_CONNECTION
            time.sleep(backoff_s * failures)
