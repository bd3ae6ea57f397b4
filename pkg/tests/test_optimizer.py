import json
import socket
import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neuroloop.looprunner import Seeds, TrialConfig, run_trial
from neuroloop.optimizer import (
    AggregateScore, AggregationError, Study, StudyError, StudyServer, TrialAssignment, TrialReport,
    aggregate, assignment_config, build_grid, client_run, order_correlations, params_key, read_log,
    run_local, schedule, stage1_select, stage2_select,
)
from neuroloop.optimizer.server import recv, send
from neuroloop.substrate import SubstrateKind

PLANTED = {"f_max": 60.0, "amplitude": 2.5, "pulse_width": 40.0}
ORACLE_BASE = TrialConfig(substrate=SubstrateKind("oracle", {"planted": PLANTED}))


def tiny_grid():
    return build_grid("stage1", f_min=[4.0], f_max=[40.0, 60.0], amplitude=[2.5], pulse_width=[40.0],
                      tick_rate=[4.0], ticks_per_step=[2])


def test_grid_sizes():
    assert build_grid("stage1").size == 1296
    assert build_grid("stage2").size == 64
    assert len(schedule(build_grid("stage2"), seed=0, replicates=4)) == 256
    assert build_grid("top").size == 12
    assert len(build_grid("stage1").combos()) == 1296


def test_grid_rejects_unknown():
    with pytest.raises(ValueError):
        build_grid("stage3")
    with pytest.raises(ValueError):
        build_grid("stage1", gain=[1.0])


def test_schedule_is_seeded_permutation():
    grid = build_grid("stage2")
    a = schedule(grid, seed=3, replicates=4)
    b = schedule(grid, seed=3, replicates=4)
    assert [e.combo for e in a] == [e.combo for e in b]
    assert [e.combo for e in a] != [e.combo for e in schedule(grid, seed=4, replicates=4)]
    counts = np.bincount([e.combo for e in a])
    assert np.all(counts == 4)
    # each replicate round is a full pass
    for rep in range(4):
        assert sorted(e.combo for e in a if e.replicate == rep) == list(range(64))


def test_schedule_non_monotonic():
    corr = order_correlations(schedule(build_grid("stage1"), seed=0))
    assert all(abs(r) < 0.1 for r in corr.values())


def _rep(cid, score, params=None, status="ok"):
    return TrialReport(f"t-{cid}", cid, score, "", status, params)


def test_aggregate_examples():
    p = {"f_max": 60.0}
    agg = aggregate([_rep(f"c{i}", s, p) for i, s in enumerate([0.2, 0.4, 0.6, 0.8])])
    assert agg.mean == pytest.approx(0.5) and agg.valid and agg.n_clients == 4
    assert not aggregate([_rep(f"c{i}", 0.3, p) for i in range(3)]).valid
    same = aggregate([_rep(f"c{i}", 0.37, p) for i in range(5)])
    assert same.mean == 0.37
    with pytest.raises(AggregationError):
        aggregate([_rep("a", 0.1, {"f_max": 40.0}), _rep("b", 0.1, {"f_max": 60.0})])
    # the same client twice counts once towards quorum
    assert not aggregate([_rep("a", 0.1, p)] * 4).valid


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1, 2, allow_nan=False), min_size=1, max_size=12), st.randoms())
def test_aggregate_permutation_invariant(scores, rnd):
    reports = [_rep(f"c{i}", s) for i, s in enumerate(scores)]
    shuffled = reports[:]
    rnd.shuffle(shuffled)
    assert aggregate(reports).mean == aggregate(shuffled).mean


def _agg(params, mean, valid=True):
    return AggregateScore(params, {"c": mean}, mean, 4 if valid else 3, valid)


def test_stage1_examples():
    base = {"g1": [0.0, 0.1, 0.2], "g2": [0.0, 0.3, 0.4]}
    hi, mid, lo = {"k": 1}, {"k": 2}, {"k": 3}
    aggs = [_agg(hi, 0.5), _agg(mid, 0.25), _agg(lo, 0.01), _agg({"k": 4}, 0.9, valid=False)]
    short = stage1_select(aggs, base)
    assert short.params == [hi]
    zeros = stage1_select([_agg(hi, 1e-6)], {"g1": [0.0] * 10, "g2": [0.0] * 10})
    assert hi in zeros
    empty = stage1_select([_agg(hi, 0.9, valid=False)], base)
    assert len(empty) == 0 and empty.status == "no_valid_aggregates"


def test_stage1_per_group_aggregates():
    base = {"g1": [0.0, 0.1], "g2": [0.0, 0.5]}
    a, b = {"k": 1}, {"k": 2}
    per_group = {"g1": [_agg(a, 0.2), _agg(b, 0.2)], "g2": [_agg(a, 0.6), _agg(b, 0.4)]}
    assert stage1_select(per_group, base).params == [a]


def test_stage1_matches_brute_force_filter():
    rng = np.random.default_rng(0)
    for _ in range(20):
        base = {g: rng.normal(0, 0.1, 200) for g in ("g1", "g2")}
        aggs = [_agg({"k": i}, float(rng.normal(0.15, 0.1)), bool(rng.random() < 0.9)) for i in range(300)]
        got = stage1_select(aggs, base).keys()
        want = set()
        for a in aggs:
            if a.valid and all(a.mean > np.percentile(s, 99) for s in base.values()):
                want.add(params_key(a.params))
        assert got == want


def test_stage2_strategies():
    base = [0.0, 0.1, 0.2, 0.3]         # 99th percentile 0.297
    reps = {params_key({"k": 1}): [0.5, 0.6, 0.4, 0.9],
            params_key({"k": 2}): [0.5, 0.6, 0.4, 0.1],
            params_key({"k": 3}): [],
            params_key({"k": 4}): [0.1, 0.1, 2.0, 0.1]}
    assert stage2_select(reps, base).params == [{"k": 1}]
    assert stage2_select(reps, base, "majority").params == [{"k": 1}, {"k": 2}]
    assert stage2_select(reps, base, "mean").params == [{"k": 1}, {"k": 2}, {"k": 4}]


def _drain(study, clients):
    """Play clients round-robin against a Study without running trials."""
    n = 0
    while not study.complete:
        for c in clients:
            a = study.next_for(c)
            if isinstance(a, TrialAssignment):
                study.report(TrialReport(a.trial_id, c, float(a.seeds["env"] % 100) / 100))
                n += 1
    return n


def test_dispatch_arithmetic(tmp_path):
    entries = schedule(tiny_grid(), seed=0)
    study = Study(entries, quorum=4, timeout_s=10, log_path=tmp_path / "log.jsonl")
    assert _drain(study, [f"c{i}" for i in range(4)]) == 8
    aggs = study.aggregates()
    assert len(aggs) == 2 and all(a.valid and a.n_clients == 4 for a in aggs)
    recs, _ = read_log(tmp_path / "log.jsonl")
    assert [r["type"] for r in recs].count("report") == 8
    assert [r["type"] for r in recs].count("aggregate") == 2
    assert study.next_for("c0") == "DONE"


def test_distinct_clients_and_wait():
    study = Study(schedule(tiny_grid(), seed=0), quorum=2, timeout_s=10)
    a1 = study.next_for("x")
    a2 = study.next_for("x")
    # x already holds a slot of the first unit, so it gets the second unit
    assert a1.trial_id.split(".")[0] != a2.trial_id.split(".")[0]
    assert study.next_for("x") == "WAIT"


def test_timeout_reassignment():
    now = [0.0]
    study = Study(schedule(tiny_grid(), seed=0), quorum=1, timeout_s=5, clock=lambda: now[0])
    a = study.next_for("dead")
    b = study.next_for("alive")
    assert study.next_for("alive") == "WAIT"
    now[0] = 6.0
    c = study.next_for("alive")
    assert c.trial_id == a.trial_id
    assert study.report(TrialReport(c.trial_id, "alive", 0.5))
    assert study.report(TrialReport(b.trial_id, "alive", 0.5))
    # late report from the dead client is stale
    assert not study.report(TrialReport(a.trial_id, "dead", 0.9))
    assert study.complete and len(study.aggregates()) == 2


def test_failed_trial_is_reissued():
    study = Study(schedule(tiny_grid(), seed=0), quorum=1, timeout_s=5)
    a = study.next_for("c")
    study.report(TrialReport(a.trial_id, "c", 0.0, status="error"))
    assert study.next_for("c").trial_id == a.trial_id


def test_unknown_trial():
    study = Study(schedule(tiny_grid(), seed=0), quorum=1)
    with pytest.raises(StudyError):
        study.report(TrialReport("u99.0", "c", 0.1))
    with pytest.raises(StudyError):
        study.report(TrialReport("garbage", "c", 0.1))


def test_resume_no_double_aggregation(tmp_path):
    path = tmp_path / "log.jsonl"
    entries = schedule(build_grid("stage2"), seed=1)
    study = Study(entries, quorum=2, log_path=path)
    clients = ["a", "b"]
    for _ in range(30):
        for c in clients:
            a = study.next_for(c)
            study.report(TrialReport(a.trial_id, c, 0.25))
    partial = len(study.aggregates())
    # tear the last line as a crash would
    data = path.read_bytes()
    path.write_bytes(data[:-7])
    resumed = Study(entries, quorum=2, log_path=path)
    assert len(resumed.aggregates()) in (partial - 1, partial)
    _drain(resumed, clients)
    recs, _ = read_log(path)
    units = [r["unit"] for r in recs if r["type"] == "aggregate"]
    assert sorted(units) == list(range(64))
    # a second resume of a finished study changes nothing
    again = Study(entries, quorum=2, log_path=path)
    assert again.complete and len(read_log(path)[0]) == len(recs)


def test_resume_rejects_other_study(tmp_path):
    path = tmp_path / "log.jsonl"
    Study(schedule(tiny_grid(), seed=0), quorum=4, log_path=path)
    with pytest.raises(StudyError):
        Study(schedule(tiny_grid(), seed=0), quorum=3, log_path=path)


def _connect(addr):
    sock = socket.create_connection(addr, timeout=5)
    return sock, sock.makefile("rw", encoding="utf-8", newline="\n")


def test_server_protocol_errors():
    study = Study(schedule(tiny_grid(), seed=0), quorum=4, timeout_s=10)
    srv = StudyServer(study).start()
    try:
        s1, f1 = _connect(srv.address)
        send(f1, "HELLO", client_id="dup", substrate={})
        assert recv(f1)["type"] == "OK"
        s2, f2 = _connect(srv.address)
        send(f2, "HELLO", client_id="dup", substrate={})
        assert recv(f2) == {"type": "ERR", "code": "duplicate_client",
                            "msg": "client_id 'dup' already connected"}
        assert f2.readline() == ""          # closed by the server
        s3, f3 = _connect(srv.address)
        f3.write("{not json\n")
        f3.flush()
        assert recv(f3)["code"] == "bad_frame"
        assert f3.readline() == ""
        s4, f4 = _connect(srv.address)
        send(f4, "NEXT")
        assert recv(f4)["code"] == "no_hello"
        send(f1, "NEXT")
        assign = recv(f1)
        assert assign["type"] == "ASSIGN"
        send(f1, "REPORT", trial_id="u77.0", score=0.1)
        assert recv(f1)["code"] == "unknown_trial"
        for s in (s1, s2, s3, s4):
            s.close()
    finally:
        srv.kill()


def test_client_score_passthrough_and_done():
    entries = schedule(tiny_grid(), seed=0)
    study = Study(entries, quorum=2, timeout_s=30)
    srv = StudyServer(study).start()
    seen = {}
    codes = []

    def go(cid):
        codes.append(client_run(srv.address, cid, ORACLE_BASE,
                                on_result=lambda a, s: seen.__setitem__(a.trial_id, (a, s))))
    threads = [threading.Thread(target=go, args=(c,)) for c in ("alpha", "beta")]
    for t in threads:
        t.start()
    assert srv.wait(60)
    for t in threads:
        t.join(10)
    srv.kill()
    assert codes == [0, 0]
    agg_clients = {c for a in study.aggregates() for c in a.scores}
    assert agg_clients == {"alpha", "beta"}
    for a, s in seen.values():
        assert run_trial(assignment_config(ORACLE_BASE, a)).score == s


def test_client_connection_loss_exits_nonzero():
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    addr = sock.getsockname()
    sock.close()
    assert client_run(addr, "lonely", ORACLE_BASE, retries=2, backoff_s=0.01) == 1


def test_local_mode_matches_study_contract(tmp_path):
    entries = schedule(tiny_grid(), seed=0)
    aggs = run_local(Study(entries, quorum=4, log_path=tmp_path / "l.jsonl"), ORACLE_BASE)
    assert len(aggs) == 2 and all(a.valid for a in aggs)
    best = max(aggs, key=lambda a: a.mean)
    assert best.params["f_max"] == 60.0


def test_assignment_config_applies_params():
    a = TrialAssignment("u0.0", {"f_max": 80.0, "tick_rate": 1.0}, "B",
                        Seeds.from_seed(3).to_dict(), 0, 1)
    cfg = assignment_config(ORACLE_BASE, a)
    assert cfg.encoding.f_max == 80.0 and cfg.encoding.tick_rate == 1.0 and cfg.mode == "B"
    assert cfg.seeds == Seeds.from_seed(3)
    with pytest.raises(ValueError):
        TrialAssignment("x", {}, "A", {}, replicate=2, replicates=2)
