"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the verdict lines.
"""
import copy
import json
import math
import subprocess
import sys
import threading
import time

import numpy as np
from scipy.stats import spearmanr

from neuroloop.analysis import brunner_munzel
from neuroloop.codec import EncodingParams, encode_step, encode_tick, rate_frequency, stage2_layout
from neuroloop.dqn import (
    QNet, TUNED_HP, loss_and_grads, one_hot, random_policy, train_dqn,
)
from neuroloop.env import EnvConfig
from neuroloop.feedback import FeedbackParams, plasticity_feedback, reinforcing_feedback
from neuroloop.looprunner import Seeds, TrialConfig, run_trial
from neuroloop.optimizer import (
    AggregateScore, Study, StudyServer, build_grid, client_run, params_key, schedule,
    stage1_select, stage2_select,
)
from neuroloop.substrate import (
    RandomSubstrate, ReplaySubstrate, SpikingSubstrate, SubstrateKind, record_spontaneous,
)

LAYOUT = stage2_layout()


def verdict(n: int, ok: bool, detail: str, elapsed: float, budget_s: float) -> None:
    within = elapsed < budget_s
    print(f"\n{'PASS' if ok and within else 'FAIL'} criterion {n}: {detail} "
          f"[{elapsed:.1f} s, budget {budget_s:.0f} s]")
    assert ok, detail
    assert within, f"criterion {n} took {elapsed:.1f} s"


# 1 -------------------------------------------------------------------------

def test_c01_grid_cardinalities():
    t0 = time.perf_counter()
    s1, s2 = build_grid("stage1"), build_grid("stage2")
    reps = schedule(s2, seed=0, replicates=4)
    # planted-signal frame: replicate scores high exactly on the top combos
    rng = np.random.default_rng(0)
    top = {params_key(c) for c in build_grid("top").combos()}
    replicated = {params_key(c): list(0.8 * (params_key(c) in top) + rng.normal(0, 0.05, 4))
                  for c in s2.combos()}
    culture = rng.normal(0.1, 0.1, 200)
    shortlist = stage2_select(replicated, culture, "all")
    got = (s1.size, s2.size, len(reps), len(shortlist))
    ok = got == (1296, 64, 256, 12) and shortlist.keys() == top
    verdict(1, ok, f"grid sizes {got}, top set matches planted combos: {shortlist.keys() == top}",
            time.perf_counter() - t0, 1.0)


# 2 -------------------------------------------------------------------------

def _reference_onsets(f: float, tick_ms: int) -> list[int]:
    """Pulses at k/f s inside the tick, enumerated with integer arithmetic on 2f."""
    two_f = int(round(2 * f))
    assert two_f == 2 * f
    out, k = [], 0
    while k * 2000 < tick_ms * two_f:        # k / f < tick_ms / 1000
        out.append((k * 2000) // two_f)      # floor(k * 1000 / f)
        k += 1
    return out


def test_c02_rate_encoding_law():
    t0 = time.perf_counter()
    worst, mismatches, n = 0.0, 0, 0
    enc0 = LAYOUT.encoding[0]
    for combo in build_grid("stage1").combos():
        p = EncodingParams.from_dict(combo)
        for x in (-1.0, 0.0, 1.0):
            want = combo["f_min"] + (x + 1.0) / 2.0 * (combo["f_max"] - combo["f_min"])
            got = rate_frequency(x, p)
            worst = max(worst, abs(got - want) / want)
            m = encode_tick(x, p, LAYOUT)
            ref = _reference_onsets(want, p.tick_ms)
            rows = m.onsets[list(LAYOUT.encoding)]
            same = (m.onset_times(enc0).tolist() == ref
                    and np.all(rows.sum(axis=1) == len(ref))
                    and m.onsets.sum() == len(ref) * len(LAYOUT.encoding))
            mismatches += not same
            n += 1
    ok = worst <= 1e-12 and mismatches == 0
    verdict(2, ok, f"{n} (combo, x) cases, max rel err {worst:.1e}, onset mismatches {mismatches}",
            time.perf_counter() - t0, 5.0)


# 3 -------------------------------------------------------------------------

def test_c03_feedback_structure():
    t0 = time.perf_counter()
    problems = []
    periods = sorted({tps / tr for tr in (1.0, 2.0, 4.0) for tps in (2, 4, 8)})
    for period in periods:
        m = reinforcing_feedback(period, LAYOUT, FeedbackParams())
        if m.bins != round(2 * period * 1000):
            problems.append(f"duration at {period} s")
        for ch in LAYOUT.active:
            bursts = m.onset_times(ch).reshape(-1, 8) if m.onset_times(ch).size % 8 == 0 else None
            if bursts is None or bursts.shape != (5, 8) or np.any(np.diff(bursts, axis=1) != 10):
                problems.append(f"burst shape at {period} s, channel {ch}")
                break
    rng = np.random.default_rng(2024)
    active = list(LAYOUT.active)
    fractions, isis = [], []
    for _ in range(1000):
        m = plasticity_feedback(1.0, LAYOUT, FeedbackParams(), rng)
        on = m.onsets[active]
        fractions.append((on.sum(axis=1) > 0).mean())
        for row in on:
            isis.extend(np.diff(np.flatnonzero(row)).tolist())
    mean = float(np.mean(fractions))
    sigma = math.sqrt((1 / 3) * (2 / 3) / (1000 * len(active)))
    isis = np.array(isis)
    if abs(mean - 1 / 3) > 3 * sigma:
        problems.append(f"activation fraction {mean:.4f}")
    if isis.min() < 40 or isis.max() > 333.4:
        problems.append(f"ISI range [{isis.min()}, {isis.max()}]")
    verdict(3, not problems,
            f"{len(periods)} interaction periods checked, activation {mean:.4f} "
            f"(1/3 +- {3 * sigma:.4f}), ISI [{isis.min()}, {isis.max()}] ms; problems: {problems or 'none'}",
            time.perf_counter() - t0, 10.0)


# 4 -------------------------------------------------------------------------

GOLDEN = {
    ("random", "A"): "16be1cb860962189b4d67b9181d37c60d8bf772d564c90a196f1598b380b8766",
    ("random", "B"): "069dd9cb86325ca5fd42f45839bce6cecc3077ab12a28c2a7c2f6efd89bb9ee7",
    ("random", "C"): "5eefbf65fda2b957a127e4ce129b3a302e4fa784499365f6b14dc7c8708e77f3",
    ("replay", "A"): "240ba5613499dd2a5ad23689a8f86a143d6ab16277f1e766bbea8e9b86d02376",
    ("replay", "B"): "a24fec95592737ca48643e7f1b86062368e94d885ba9429367755fab4cbbe308",
    ("replay", "C"): "d85bb0804c7330784fa6afa696cb250923edacdc286170ed9a74d7a10c459424",
    ("oracle", "A"): "a79d0ad2ca40dca3b18e7443bdc9afb10a5e8ca099ceab0f37db2814a18059ad",
    ("oracle", "B"): "cddfcb1c5a7db7e9ba8bce9aa80ebf90f8e8fbf4d1048ca2f6d1e71678d14f28",
    ("oracle", "C"): "c6180c797e601739f1eb76b1e13728b31e2e559f4e362434f022d5142cffeedd",
}


def test_c04_end_to_end_determinism():
    t0 = time.perf_counter()
    rec = record_spontaneous(RandomSubstrate(64, 0, rate_hz=3.0), 90, 1000)
    kinds = {"random": SubstrateKind("random", {}),
             "replay": SubstrateKind("replay", {"recording": rec}),
             "oracle": SubstrateKind("oracle", {"planted": {"f_max": 60.0, "amplitude": 2.5,
                                                            "pulse_width": 40.0}})}
    bad = []
    for (kind, mode), golden in GOLDEN.items():
        cfg = TrialConfig(mode=mode, encoding=EncodingParams(), substrate=kinds[kind], seeds=Seeds.from_seed(11))
        first, second = run_trial(cfg), run_trial(cfg)
        if not (first.digest() == second.digest() == golden
                and list(first.step_records()) == list(second.step_records())):
            bad.append((kind, mode))
    verdict(4, not bad, f"{len(GOLDEN)} substrate x mode traces; mismatches: {bad or 'none'}",
            time.perf_counter() - t0, 60.0)


# 5 -------------------------------------------------------------------------

PLANTED = {"f_max": 60.0, "amplitude": 2.5, "pulse_width": 40.0}
FIXED = {"f_min": 4.0, "tick_rate": 4.0, "ticks_per_step": 2}


def _base(kind: SubstrateKind, seed: int = 0) -> TrialConfig:
    return TrialConfig(mode="A", encoding=EncodingParams(**FIXED), substrate=kind,
                       seeds=Seeds.from_seed(seed))


def test_c05_planted_optimum_recovery():
    t0 = time.perf_counter()
    grid = build_grid("stage1", f_min=[4.0], f_max=[40.0, 60.0, 80.0, 100.0], amplitude=[1.0, 2.0, 2.5],
                      pulse_width=[40.0, 80.0, 160.0], tick_rate=[4.0], ticks_per_step=[2])
    # SDK-random baseline groups at two firing rates, 100 trials each
    baselines = {f"random-{r:g}hz": [run_trial(_base(SubstrateKind("random", {"rate_hz": r}), 10_000 + s)).score
                                     for s in range(100)] for r in (2.0, 8.0)}
    oracle = _base(SubstrateKind("oracle", {"planted": PLANTED, "sharpness": 4.0}))
    theta = {**FIXED, **PLANTED}
    hits, top_hits, sizes = 0, 0, []
    for run in range(20):
        study = Study(schedule(grid, seed=run), quorum=4, timeout_s=120, study_seed=run)
        server = StudyServer(study).start()
        codes = []
        clients = [threading.Thread(target=lambda i=i: codes.append(
            client_run(server.address, f"sim-{i}", oracle, retries=2))) for i in range(4)]
        for c in clients:
            c.start()
        for c in clients:
            c.join()
        server.close()
        assert codes == [0] * 4 and study.complete
        aggs = study.aggregates()
        shortlist = stage1_select(aggs, baselines)
        hits += theta in shortlist
        top_hits += max(aggs, key=lambda a: a.mean).key == params_key(theta)
        sizes.append(len(shortlist))
    verdict(5, hits >= 19,
            f"planted combo shortlisted in {hits}/20 runs (ranked first in {top_hits}/20; "
            f"shortlist size {min(sizes)}-{max(sizes)} of {grid.size})",
            time.perf_counter() - t0, 300.0)


# 6 -------------------------------------------------------------------------

def _agg(i: int, mean: float, valid: bool) -> AggregateScore:
    return AggregateScore({"k": i}, {"c": mean}, mean, 4 if valid else 2, valid)


def test_c06_selection_rule_fidelity():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    mismatches, total_sel = 0, 0
    for _ in range(50):
        groups = {g: rng.normal(rng.uniform(-0.1, 0.1), 0.1, int(rng.integers(50, 300)))
                  for g in ("cell-a", "cell-b", "cell-c")[: int(rng.integers(1, 4))]}
        aggs = [_agg(i, float(rng.normal(0.15, 0.12)), bool(rng.random() < 0.9)) for i in range(400)]
        ref = {params_key(a.params) for a in aggs
               if a.valid and all(a.mean > np.percentile(v, 99) for v in groups.values())}
        got = stage1_select(aggs, groups).keys()
        # per-group aggregates: each group scored separately
        per_group = {g: [_agg(i, float(rng.normal(0.15, 0.12)), True) for i in range(100)] for g in groups}
        ref_g = set.intersection(*[{params_key(a.params) for a in per_group[g]
                                    if a.mean > np.percentile(groups[g], 99)} for g in groups])
        got_g = stage1_select(per_group, groups).keys()
        mismatches += (got != ref) + (got_g != ref_g)
        total_sel += len(ref)
    verdict(6, mismatches == 0, f"100 synthetic frames vs brute-force filter, {mismatches} mismatches "
            f"({total_sel} admitted combos in flat frames)", time.perf_counter() - t0, 5.0)


# 7 -------------------------------------------------------------------------

def _numeric_grads(net, batch, h=1e-6):
    out = []
    for p in net.params():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss_and_grads(net, batch)[0]
            p[idx] = old - h
            down = loss_and_grads(net, batch)[0]
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def test_c07_dqn_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        net = QNet(rng.normal(size=(8, 3)), rng.normal(size=8), rng.normal(size=(3, 8)), rng.normal(size=3))
        batch = [(one_hot(int(rng.integers(-1, 2))), int(rng.integers(3)), float(rng.normal()))
                 for _ in range(int(rng.integers(1, 5)))]
        a = np.concatenate([g.ravel() for g in loss_and_grads(net, batch)[1]])
        n = np.concatenate([g.ravel() for g in _numeric_grads(net, batch)])
        # relative error; entries that are zero analytically (dead ReLU) use an absolute floor
        worst = max(worst, float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-3))))
    env = EnvConfig()
    rand = np.array([random_policy(env, 2000, seed=s).score for s in range(30)])
    tuned = np.array([train_dqn(env, TUNED_HP, 2000, seed=s).score for s in range(30)])
    bm = brunner_munzel(rand, tuned)
    ok = worst < 1e-5 and tuned.mean() >= 3 * rand.mean()
    verdict(7, ok,
            f"max gradient rel err {worst:.1e}; tuned DQN mean {tuned.mean():.3f} vs random {rand.mean():.4f} "
            f"(3x random = {3 * rand.mean():.4f}, 3x|random| = {3 * abs(rand.mean()):.4f}, "
            f"Brunner-Munzel p = {bm.p_two_sided:.1e})", time.perf_counter() - t0, 120.0)
    assert tuned.mean() >= 3 * abs(rand.mean()) and bm.p_two_sided < 0.01


# 8 -------------------------------------------------------------------------

def test_c08_statistics():
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    diffs = []
    for i in range(200):
        n1, n2 = rng.integers(30, 61, size=2)
        a = rng.normal(0, 1, n1)
        b = rng.normal(rng.uniform(-0.8, 0.8), rng.uniform(0.5, 2.0), n2)
        t = brunner_munzel(a, b).p_two_sided
        perm = brunner_munzel(a, b, permutation=True, n_perm=100_000, seed=i).p_two_sided
        diffs.append(abs(t - perm))
    exact = brunner_munzel([1, 2, 3, 4], [10, 20, 30, 40], permutation=True)
    ok = max(diffs) <= 0.01 and exact.p_two_sided == 2 / 70
    verdict(8, ok, f"200 Gaussian pairs (n in [30, 60]), max |p_t - p_perm| = {max(diffs):.4f}, "
            f"mean {np.mean(diffs):.4f}; exhaustive example p = {exact.p_two_sided!r} (2/70 = {2 / 70!r})",
            time.perf_counter() - t0, 60.0)


# 9 -------------------------------------------------------------------------

def _trend(substrate, stim, reps=100) -> float:
    counts = [int(substrate.stimulate(stim).spikes.sum()) for _ in range(reps)]
    return float(spearmanr(np.arange(reps), counts)[0])


def test_c09_substrate_non_stationarity():
    t0 = time.perf_counter()
    enc = EncodingParams(f_min=4, f_max=40, amplitude=2.5, pulse_width=80, tick_rate=2, ticks_per_step=2)
    probe = encode_step(1.0, enc, LAYOUT)
    fb = reinforcing_feedback(enc.interaction_period, LAYOUT, FeedbackParams.inherit(enc))
    changes = []
    for seed in range(3):
        s = SpikingSubstrate(64, seed)
        before = int(copy.deepcopy(s).stimulate(probe).spikes.sum())
        for _ in range(20):                         # documented history: encode, then reinforce
            s.stimulate(probe)
            s.stimulate(fb)
        after = int(copy.deepcopy(s).stimulate(probe).spikes.sum())
        changes.append(after / before - 1.0)
    # trend test: Spearman rho of evoked count against repetition index, 100 repetitions per
    # sequence, averaged over 20 independent sequences
    rho_random = [_trend(RandomSubstrate(64, s), probe) for s in range(20)]
    rho_replay = [_trend(ReplaySubstrate(record_spontaneous(RandomSubstrate(64, 500 + s, rate_hz=3.0), 60, 1000),
                                         s, n_channels=64), probe) for s in range(20)]
    rho_spiking = _trend(SpikingSubstrate(64, 0), probe, reps=40)
    ok = (min(changes) >= 0.10 and abs(np.mean(rho_random)) < 0.1 and abs(np.mean(rho_replay)) < 0.1)
    verdict(9, ok,
            f"spiking probe change {[f'{c:+.0%}' for c in changes]}; mean rho random "
            f"{np.mean(rho_random):+.3f}, replay {np.mean(rho_replay):+.3f} "
            f"(single sequence, seed 0: random {rho_random[0]:+.3f}, replay {rho_replay[0]:+.3f}; "
            f"|rho| < 0.1 in {sum(abs(r) < 0.1 for r in rho_random + rho_replay)}/40 sequences); "
            f"spiking rho {rho_spiking:+.3f}", time.perf_counter() - t0, 120.0)


# 10 ------------------------------------------------------------------------

def _serve(log, extra=()):
    cmd = [sys.executable, "-m", "neuroloop.cli", "serve", "--stage", "stage2", "--mode", "A",
           "--quorum", "4", "--bind", "127.0.0.1:0", "--log", str(log), "--values",
           "f_max=40,60,80,100", "amplitude=2,2.5", "pulse_width=40,80", "tick_rate=4", "ticks_per_step=2",
           *extra]
    proc = subprocess.Popen(cmd, stdout=subprocess.PIPE, text=True)
    line = proc.stdout.readline()
    host, port = json.loads(line)["listening"].rsplit(":", 1)
    return proc, (host, int(port))


def _clients(address, n=4, retries=0):
    base = _base(SubstrateKind("random", {}))
    codes = []
    threads = [threading.Thread(target=lambda i=i: codes.append(
        client_run(address, f"w{i}", base, retries=retries, backoff_s=0.1))) for i in range(n)]
    for t in threads:
        t.start()
    return threads, codes


def _aggregates_from_log(log) -> list[tuple]:
    return sorted(AggregateScore.from_dict(r).identity()
                  for r in map(json.loads, open(log)) if r.get("type") == "aggregate")


def _count_reports(log) -> int:
    try:
        return sum('"type": "report"' in line for line in open(log))
    except FileNotFoundError:
        return 0


def test_c10_crash_resume(tmp_path):
    t0 = time.perf_counter()
    grid = build_grid("stage2", f_max=[40.0, 60.0, 80.0, 100.0], amplitude=[2.0, 2.5], pulse_width=[40.0, 80.0],
                      tick_rate=[4.0], ticks_per_step=[2])
    reference = Study(schedule(grid, seed=0), quorum=4, timeout_s=120, log_path=tmp_path / "ref.jsonl")
    server = StudyServer(reference).start()
    threads, _ = _clients(server.address)
    for t in threads:
        t.join()
    server.close()
    want = sorted(a.identity() for a in reference.aggregates())

    log = tmp_path / "crash.jsonl"
    proc, address = _serve(log)
    threads, _ = _clients(address)
    while _count_reports(log) < 20:
        time.sleep(0.01)
    proc.kill()                                     # SIGKILL: no chance to flush or clean up
    proc.wait()
    for t in threads:
        t.join()
    reports_at_crash = _count_reports(log)
    proc, address = _serve(log)
    threads, codes = _clients(address, retries=3)
    for t in threads:
        t.join()
    proc.wait(timeout=60)
    got = _aggregates_from_log(log)
    ok = got == want and len(want) == grid.size and proc.returncode == 0
    verdict(10, ok, f"killed after {reports_at_crash} of {4 * grid.size} reports; resumed run yields "
            f"{len(got)} aggregates, multiset equal to uninterrupted run: {got == want}",
            time.perf_counter() - t0, 120.0)
