"""Screening stimulation parameters the way a lab would, in miniature.

Stage 1 sweeps a small grid of encodings. Every combination is run by four
different clients and only counts once all four have reported. A
combination is shortlisted if its mean score beats the 99th percentile of a
noise-only baseline. The substrate here is an oracle whose decoding quality
peaks at a hidden ("planted") encoding, so we can check that the screen
finds it.

    python3 demos/two_stage_screen.py
"""
import numpy as np

from neuroloop.analysis import StudyFrame, top_percentile_marginals
from neuroloop.codec import EncodingParams
from neuroloop.looprunner import Seeds, TrialConfig, run_trial
from neuroloop.optimizer import Study, build_grid, run_local, schedule, stage1_select
from neuroloop.substrate import SubstrateKind

fixed = dict(f_min=4.0, tick_rate=4.0, ticks_per_step=2)
planted = {"f_max": 80.0, "amplitude": 2.0, "pulse_width": 80.0}


def base(kind, seed=0):
    return TrialConfig(mode="A", encoding=EncodingParams(**fixed), substrate=kind, seeds=Seeds.from_seed(seed))


grid = build_grid("stage1", f_min=[4.0], f_max=[40.0, 60.0, 80.0, 100.0], amplitude=[1.0, 2.0, 2.5],
                  pulse_width=[40.0, 80.0, 160.0], tick_rate=[4.0], ticks_per_step=[2])
print(f"grid: {grid.size} combinations x quorum 4 = {4 * grid.size} trials")

# noise-only reference distribution
baseline = [run_trial(base(SubstrateKind("random", {}), 1000 + s)).score for s in range(100)]
print(f"random-substrate 99th percentile: {np.percentile(baseline, 99):.3f}")

study = Study(schedule(grid, seed=1), quorum=4, timeout_s=60, log_path=None)
aggs = run_local(study, base(SubstrateKind("oracle", {"planted": planted, "sharpness": 4.0})))
shortlist = stage1_select(aggs, {"random": baseline})
print(f"shortlisted {len(shortlist)} of {grid.size}:")
for a in sorted(aggs, key=lambda a: -a.mean)[: len(shortlist)]:
    p = a.params
    flag = "  <- planted" if all(p[k] == v for k, v in planted.items()) else ""
    print(f"  f_max {p['f_max']:>5} Hz  amp {p['amplitude']} uA  width {p['pulse_width']:>5} us"
          f"  mean {a.mean:.3f}{flag}")

# which values dominate the top of the distribution?
rows = [{"params": a.params, "score": s, "group": "oracle", "stage": "stage1", "replicate": 0,
         "client_id": c} for a in aggs for c, s in a.scores.items()]
m = top_percentile_marginals(StudyFrame.from_records(rows), 10.0, params=["f_max", "amplitude", "pulse_width"])
print("\nvalue frequencies in the top 10% of client scores:")
print(m[m["count"] > 0].to_string(index=False))
