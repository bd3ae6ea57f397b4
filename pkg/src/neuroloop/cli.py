"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 config/validation error, 3 runtime/IO error.
Set NEUROLOOP_LOG=DEBUG|INFO|WARNING to change verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from . import analysis, dqn
from . import env as gridenv
from .codec import LAYOUTS, EncodingParams
from .looprunner import Seeds, TrialConfig, TrialResult, run_trial
from .optimizer import (
    STAGE_VALUES, Study, StudyServer, build_grid, client_run, run_local, schedule,
)
from .substrate import SubstrateKind, make_substrate, record_spontaneous

log = logging.getLogger("neuroloop")

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# -- shared flag groups -----------------------------------------------------

ENCODING_FLAGS = {
    "f_min": (float, "minimum stimulation frequency (Hz)"),
    "f_max": (float, "maximum stimulation frequency (Hz)"),
    "amplitude": (float, "pulse amplitude (uA)"),
    "pulse_width": (float, "pulse phase width (us)"),
    "tick_rate": (float, "ticks per second (Hz)"),
    "ticks_per_step": (int, "ticks per environment step (count)"),
}


def _add_config(p):
    p.add_argument("--config", type=Path, help="JSON config file; explicit flags override it")


def _add_substrate(p):
    g = p.add_argument_group("substrate")
    g.add_argument("--substrate", choices=["spiking", "random", "replay", "oracle"],
                   help="substrate kind (default random)")
    g.add_argument("--rate-hz", type=float, help="random substrate firing rate per channel (Hz)")
    g.add_argument("--replay", type=Path, help="recording to replay (JSONL from 'baseline record')")
    g.add_argument("--planted", help='oracle optimum as JSON, e.g. \'{"f_max": 60}\' (Hz, uA, us)')
    g.add_argument("--quality", type=float, help="oracle: fixed decoding reliability in [0, 1]")
    g.add_argument("--substrate-options", help="extra substrate options as JSON")


def _add_trial(p):
    g = p.add_argument_group("trial")
    g.add_argument("--mode", choices=["A", "B", "C"], help="A: 30x1, B: 150x1, C: 30x5 with 120 s rests")
    for name, (typ, text) in ENCODING_FLAGS.items():
        g.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, help=text)
    g.add_argument("--layout", choices=sorted(LAYOUTS), help="electrode layout (default stage2)")
    g.add_argument("--baseline-policy", choices=["overlap", "separate"],
                   help="calibrate inside the inter-episode rest (overlap) or after it (separate)")
    g.add_argument("--lam", type=float, help="odour decay per cell (1/cell)")
    g.add_argument("--realtime", action="store_true", default=None, help="pace to wall-clock time")


def _load_json_file(path: Path | None) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None


def _parse_json(text: str | None, what: str) -> dict:
    if not text:
        return {}
    try:
        val = json.loads(text)
    except json.JSONDecodeError:
        raise ValueError(f"{what} must be JSON") from None
    if not isinstance(val, dict):
        raise ValueError(f"{what} must be a JSON object")
    return val


def substrate_from_args(args, base: dict | None = None) -> SubstrateKind:
    d = dict(base or {})
    kind = args.substrate or d.get("kind", "random")
    opts = dict(d.get("options", {})) if kind == d.get("kind", kind) else {}
    opts.update(_parse_json(getattr(args, "substrate_options", None), "--substrate-options"))
    if args.rate_hz is not None:
        opts["rate_hz"] = args.rate_hz
    if args.replay is not None:
        opts["path"] = str(args.replay)
    if args.planted:
        opts["planted"] = _parse_json(args.planted, "--planted")
    if args.quality is not None:
        opts["quality"] = args.quality
    return SubstrateKind(kind, opts)


def trial_config_from_args(args) -> TrialConfig:
    """CLI flag > config file > default."""
    d: dict[str, Any] = _load_json_file(getattr(args, "config", None))
    if args.mode:
        d["mode"] = args.mode
    enc = dict(d.get("encoding", {}))
    for name in ENCODING_FLAGS:
        if getattr(args, name, None) is not None:
            enc[name] = getattr(args, name)
    d["encoding"] = enc
    if args.layout:
        d["layout"] = args.layout
    if args.baseline_policy:
        d["baseline_policy"] = args.baseline_policy
    if getattr(args, "lam", None) is not None:
        d.setdefault("env", {})["lam"] = args.lam
    if getattr(args, "seed", None) is not None:
        d["seeds"] = Seeds.from_seed(args.seed).to_dict()
    d["substrate"] = substrate_from_args(args, d.get("substrate")).to_dict()
    cfg = TrialConfig.from_dict(d)
    if args.realtime:
        cfg.realtime = True
    return cfg


def _grid_from_args(args, file_cfg: dict):
    stage = args.stage or file_cfg.get("stage", "stage1")
    overrides = dict(file_cfg.get("values", {}))
    for item in args.values or []:
        if "=" not in item:
            raise ValueError(f"--values expects name=v1,v2,..., got {item!r}")
        name, vals = item.split("=", 1)
        overrides[name] = [float(v) for v in vals.split(",") if v]
    if "ticks_per_step" in overrides:
        overrides["ticks_per_step"] = [int(v) for v in overrides["ticks_per_step"]]
    return build_grid(stage, **overrides)


def _add_sweep(p):
    g = p.add_argument_group("sweep")
    g.add_argument("--stage", choices=sorted(STAGE_VALUES) + ["top"], help="grid stage (default stage1)")
    g.add_argument("--values", nargs="*", metavar="NAME=V1,V2",
                   help="override a parameter's value list (units as in trial flags)")
    g.add_argument("--replicates", type=int, help="replicates per combination (count, default 1)")
    g.add_argument("--schedule-seed", type=int, help="dispatch-order seed (default 0)")
    g.add_argument("--quorum", type=int, help="distinct clients per combination (count, default 4)")
    g.add_argument("--log", type=Path, required=True, help="append-only study log (JSONL); resumed if present")


def _study_from_args(args, file_cfg: dict) -> Study:
    grid = _grid_from_args(args, file_cfg)
    reps = args.replicates or file_cfg.get("replicates", 1)
    seed = args.schedule_seed if args.schedule_seed is not None else file_cfg.get("schedule_seed", 0)
    quorum = args.quorum or file_cfg.get("quorum", 4)
    mode = args.mode or file_cfg.get("mode", "A")
    timeout = getattr(args, "timeout", None) or file_cfg.get("timeout")
    return Study(schedule(grid, seed, reps), quorum, timeout, args.log, mode, seed, reps)


def _echo_config(path: Path, cfg: dict) -> None:
    path.with_name(path.name + ".config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True))


# -- commands -----------------------------------------------------------------

def cmd_trial_run(args) -> int:
    cfg = trial_config_from_args(args)
    res = run_trial(cfg)
    out = args.out
    with open(out, "w") as fh:
        fh.write(json.dumps({"type": "config", "config": cfg.to_dict()}, sort_keys=True) + "\n")
        res.write_jsonl(fh)
    summary = args.summary or out.with_name(out.stem + ".summary.json")
    with open(summary, "w") as fh:
        json.dump(res.summary(), fh, indent=2, sort_keys=True)
    if args.heatmap:
        with open(args.heatmap, "w") as fh:
            res.write_heatmap(fh)
    print(json.dumps({"score": res.score, "episode_rewards": [e.reward for e in res.episodes],
                      "episode_oracles": [e.oracle for e in res.episodes], "virtual_ms": res.virtual_ms}))
    return EXIT_OK


def cmd_sweep_run(args) -> int:
    if not args.local:
        raise UsageError("sweep run executes in-process; pass --local, or use 'serve' plus 'client'")
    file_cfg = _load_json_file(args.config)
    base = trial_config_from_args(args)
    study = _study_from_args(args, file_cfg)
    _echo_config(args.log, {"trial": base.to_dict(), "study": study.header})
    aggs = run_local(study, base, n_clients=args.clients, workers=args.workers)
    print(json.dumps({"aggregates": len(aggs), "valid": sum(a.valid for a in aggs),
                      "best": max(aggs, key=lambda a: a.mean).to_dict() if aggs else None}))
    return EXIT_OK


def _address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise ValueError(f"address must be host:port, got {text!r}") from None


def cmd_serve(args) -> int:
    file_cfg = _load_json_file(args.config)
    study = _study_from_args(args, file_cfg)
    try:
        server = StudyServer(study, _address(args.bind)).start()
    except OSError as exc:
        raise OSError(f"cannot bind {args.bind}: {exc}") from exc
    host, port = server.address
    print(json.dumps({"listening": f"{host}:{port}"}), flush=True)
    try:
        server.wait()
    finally:
        server.close()
    print(json.dumps({"aggregates": len(study.aggregates()), "reports": study.n_reports}))
    return EXIT_OK


def cmd_client(args) -> int:
    cfg = trial_config_from_args(args)
    cid = args.client_id or f"client-{os.getpid()}"
    code = client_run(_address(args.server), cid, cfg, retries=args.retries)
    if code == 1:
        log.error("lost connection to %s", args.server)
        return EXIT_RUNTIME
    return EXIT_OK if code == 0 else EXIT_CONFIG


def _hp_from_args(args) -> dqn.DqnHyperParams:
    d = {**dqn.TUNED_HP.__dict__, **_load_json_file(args.config).get("hp", {})}
    for k in dqn.DqnHyperParams.__dataclass_fields__:
        v = getattr(args, k, None)
        if v is not None:
            d[k] = v
    return dqn.DqnHyperParams.from_dict(d)


def cmd_dqn_train(args) -> int:
    hp = _hp_from_args(args)
    env_cfg = gridenv.EnvConfig(lam=args.lam) if args.lam is not None else gridenv.EnvConfig()
    seeds = range(args.seed, args.seed + args.seeds)
    out = args.out
    with open(out, "w") as fh:
        fh.write(json.dumps({"type": "config", "config": {"hp": hp.__dict__, "env": env_cfg.to_dict(),
                                                          "steps": args.steps}}) + "\n")
        for s in seeds:
            res, agent = dqn.train_dqn(env_cfg, hp, args.steps, seed=s, episode_steps=args.episode_steps,
                                       return_agent=True)
            fh.write(json.dumps({"seed": s, "score": res.score, "digest": res.digest(),
                                 "episode_rewards": [e.reward for e in res.episodes]}) + "\n")
            if args.checkpoint and s == seeds[-1]:
                dqn.save_checkpoint(args.checkpoint, agent.net, hp, agent.target)
    scores = analysis.load_scores(out)
    print(json.dumps({"mean_score": float(np.mean(scores)), "n": len(scores)}))
    return EXIT_OK


def cmd_dqn_hpo(args) -> int:
    env_cfg = gridenv.EnvConfig(lam=args.lam) if args.lam is not None else gridenv.EnvConfig()
    aggs = dqn.hpo(env_cfg, args.configs, args.steps, seed=args.seed, quorum=args.quorum,
                   workers=args.workers, log_path=args.log, episode_steps=args.episode_steps)
    doc = {"config": {"configs": args.configs, "steps": args.steps, "seed": args.seed,
                      "quorum": args.quorum}, "ranking": [a.to_dict() for a in aggs]}
    Path(args.out).write_text(json.dumps(doc, indent=2))
    print(json.dumps({"best": aggs[0].to_dict() if aggs else None}))
    return EXIT_OK


def cmd_baseline_record(args) -> int:
    kind = substrate_from_args(args)
    if kind.kind in ("oracle",):
        raise ValueError("baseline recordings come from spiking, random or replay substrates")
    layout = LAYOUTS[args.layout or "stage2"]()
    sub = make_substrate(kind, layout, args.seed, encoding=EncodingParams())
    n_seg = int(np.ceil(args.seconds * 1000 / args.segment_ms))
    rec = record_spontaneous(sub, n_seg, args.segment_ms)
    with open(args.out, "w") as fh:
        rec.write(fh, {"substrate": kind.to_dict(), "seed": args.seed, "segment_ms": args.segment_ms})
    print(json.dumps({"segments": n_seg, "spikes": sum(len(s["spikes"]) for s in rec.segments)}))
    return EXIT_OK


def cmd_analyze_marginals(args) -> int:
    frame = None
    for spec in args.log:
        path, _, group = str(spec).partition(":")
        f = analysis.StudyFrame.from_study_log(path, group=group or Path(path).stem)
        frame = f if frame is None else frame.concat(f)
    if frame is None or len(frame) == 0:
        raise ValueError("no valid aggregates in the given logs")
    table = analysis.top_percentile_marginals(frame, args.pct)
    with open(args.out, "w") as fh:
        fh.write(f"# pct={args.pct} logs={[str(p) for p in args.log]}\n")
        table.to_csv(fh, index=False)
    print(table.to_string(index=False))
    return EXIT_OK


def _finite(obj):
    """JSON-safe copy: numpy scalars to Python, NaN and inf to null."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, (np.generic, float)):
        v = obj.item() if isinstance(obj, np.generic) else obj
        return v if not isinstance(v, float) or np.isfinite(v) else None
    return obj


def cmd_analyze_compare(args) -> int:
    a = analysis.load_scores(args.a)
    b = analysis.load_scores(args.b)
    try:
        res = analysis.brunner_munzel(a, b, permutation=args.permutation, seed=args.seed)
    except analysis.DegenerateVarianceError:
        log.warning("degenerate rank variance; falling back to permutation mode")
        res = analysis.brunner_munzel(a, b, permutation=True, seed=args.seed)
    table = analysis.score_table(
        pd.DataFrame({"score": np.concatenate([a, b]), "group": ["a"] * len(a) + ["b"] * len(b)}),
        seed=args.seed)
    doc = {"config": {"a": str(args.a), "b": str(args.b), "permutation": args.permutation,
                      "seed": args.seed},
           **res.to_dict(), "marker": analysis.significance_marker(res.p_two_sided),
           "groups": table.to_dict(orient="records")}
    if not np.isfinite(res.statistic):
        doc["note"] = "rank variance is zero in a group; statistic is unbounded (null)"
    text = json.dumps(_finite(doc), indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


def cmd_analyze_heatmap(args) -> int:
    summary = args.summary or args.steps.with_name(args.steps.stem + ".summary.json")
    res = TrialResult.from_files(args.steps, summary)
    with open(args.out, "w") as fh:
        fh.write(f"# source={args.steps} episode={args.episode}\n")
        analysis.export_heatmap(res, args.episode, fh)
    return EXIT_OK


def cmd_env_replay(args) -> int:
    cfg = gridenv.EnvConfig(width=args.width, height=args.height,
                            lam=args.lam if args.lam is not None else 0.5, seed=args.seed)
    if args.actions_file:
        text = Path(args.actions_file).read_text()
    else:
        text = args.actions or ""
    names = [t.strip().lower() for t in text.replace("\n", ",").split(",") if t.strip()]
    try:
        actions = [gridenv.Action[n.upper()] if not n.isdigit() else gridenv.Action(int(n)) for n in names]
    except (KeyError, ValueError):
        raise ValueError("actions must be forward/left/right or 0/1/2") from None
    records = gridenv.replay_actions(cfg, actions)
    with open(args.out, "w") as fh:
        gridenv.write_trace(records, fh)
    print(json.dumps({"steps": len(records), "reward": sum(r["reward"] for r in records)}))
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    top = _Parser(prog="neuroloop", description="Closed-loop stimulation experiments in simulation.")
    cmds = top.add_subparsers(dest="command", required=True, parser_class=_Parser)

    trial = cmds.add_parser("trial", help="closed-loop trials").add_subparsers(dest="sub", required=True,
                                                                               parser_class=_Parser)
    p = trial.add_parser("run", help="run one trial")
    _add_config(p); _add_trial(p); _add_substrate(p)
    p.add_argument("--seed", type=int, help="root seed for env, substrate, decoding and feedback")
    p.add_argument("--out", type=Path, required=True, help="per-step JSONL output")
    p.add_argument("--summary", type=Path, help="summary JSON (default <out>.summary.json)")
    p.add_argument("--heatmap", type=Path, help="per-channel spike-count CSV")
    p.set_defaults(func=cmd_trial_run)

    sweep = cmds.add_parser("sweep", help="parameter sweeps").add_subparsers(dest="sub", required=True,
                                                                             parser_class=_Parser)
    p = sweep.add_parser("run", help="run a sweep in-process")
    _add_config(p); _add_trial(p); _add_substrate(p); _add_sweep(p)
    p.add_argument("--local", action="store_true", help="run with a local worker pool")
    p.add_argument("--workers", type=int, default=1, help="worker processes (count)")
    p.add_argument("--clients", type=int, help="simulated clients (count, default = quorum)")
    p.set_defaults(func=cmd_sweep_run, seed=None)

    p = cmds.add_parser("serve", help="host a study for remote clients")
    _add_config(p); _add_sweep(p)
    p.add_argument("--mode", choices=["A", "B", "C"], help="task mode assigned to clients")
    p.add_argument("--bind", default="127.0.0.1:7717", help="host:port to listen on")
    p.add_argument("--timeout", type=float, help="seconds before an unanswered trial is reissued "
                                                 "(default 10x its virtual duration)")
    p.set_defaults(func=cmd_serve)

    p = cmds.add_parser("client", help="run trials for a study server")
    _add_config(p); _add_trial(p); _add_substrate(p)
    p.add_argument("--server", required=True, help="host:port of the study server")
    p.add_argument("--client-id", help="unique client name (default client-<pid>)")
    p.add_argument("--retries", type=int, default=5, help="reconnect attempts before giving up (count)")
    p.set_defaults(func=cmd_client, seed=None)

    dq = cmds.add_parser("dqn", help="deep-Q baseline").add_subparsers(dest="sub", required=True,
                                                                      parser_class=_Parser)
    p = dq.add_parser("train", help="train over one or more seeds")
    _add_config(p)
    p.add_argument("--steps", type=int, default=2000, help="environment interactions (count)")
    p.add_argument("--episode-steps", type=int, help="reset every N steps (count; default: one episode)")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds (count)")
    p.add_argument("--learning-rate", dest="learning_rate", type=float, help="SGD step size")
    p.add_argument("--target-update-freq", dest="target_update_freq", type=int,
                   help="steps between target-network copies")
    p.add_argument("--train-freq", dest="train_freq", type=int, help="steps between updates")
    p.add_argument("--final-epsilon", dest="final_epsilon", type=float, help="exploration floor in [0, 1]")
    p.add_argument("--exploration-horizon", dest="exploration_horizon", type=float,
                   help="fraction of steps over which epsilon decays")
    p.add_argument("--gamma", type=float, help="discount in [0, 1]")
    p.add_argument("--lam", type=float, help="odour decay per cell (1/cell)")
    p.add_argument("--out", type=Path, required=True, help="JSONL of per-seed scores")
    p.add_argument("--checkpoint", type=Path, help="JSON weights of the last seed's network")
    p.set_defaults(func=cmd_dqn_train)

    p = dq.add_parser("hpo", help="random hyperparameter search via the local sweep runner")
    p.add_argument("--configs", type=int, default=20, help="configurations to sample (count)")
    p.add_argument("--steps", type=int, default=2000, help="interactions per run (count)")
    p.add_argument("--episode-steps", type=int, help="reset every N steps (count)")
    p.add_argument("--quorum", type=int, default=4, help="seeds per configuration (count)")
    p.add_argument("--workers", type=int, default=1, help="worker processes (count)")
    p.add_argument("--seed", type=int, default=0, help="search seed")
    p.add_argument("--lam", type=float, help="odour decay per cell (1/cell)")
    p.add_argument("--log", type=Path, help="study log (JSONL)")
    p.add_argument("--out", type=Path, required=True, help="ranking JSON")
    p.set_defaults(func=cmd_dqn_hpo)

    bl = cmds.add_parser("baseline", help="spontaneous-activity recordings").add_subparsers(
        dest="sub", required=True, parser_class=_Parser)
    p = bl.add_parser("record", help="record spontaneous activity for replay")
    _add_substrate(p)
    p.add_argument("--layout", choices=sorted(LAYOUTS), help="electrode layout (default stage2)")
    p.add_argument("--seconds", type=float, default=60.0, help="recording length (s)")
    p.add_argument("--segment-ms", type=int, default=1000, help="segment length (ms)")
    p.add_argument("--seed", type=int, default=0, help="substrate seed")
    p.add_argument("--out", type=Path, required=True, help="recording JSONL")
    p.set_defaults(func=cmd_baseline_record)

    an = cmds.add_parser("analyze", help="statistics").add_subparsers(dest="sub", required=True,
                                                                     parser_class=_Parser)
    p = an.add_parser("marginals", help="parameter histograms among top-scoring rows")
    p.add_argument("--log", nargs="+", required=True, help="study logs, optionally PATH:GROUP")
    p.add_argument("--pct", type=float, default=1.0, help="top percentage of rows (%%)")
    p.add_argument("--out", type=Path, required=True, help="CSV output")
    p.set_defaults(func=cmd_analyze_marginals)
    p = an.add_parser("compare", help="Brunner-Munzel comparison of two score samples")
    p.add_argument("--a", type=Path, required=True, help="scores: study log, summary JSON or JSONL")
    p.add_argument("--b", type=Path, required=True, help="scores: study log, summary JSON or JSONL")
    p.add_argument("--permutation", action="store_true", help="permutation p instead of the t approximation")
    p.add_argument("--seed", type=int, default=0, help="seed for permutations and bootstrap")
    p.add_argument("--out", type=Path, help="report JSON")
    p.set_defaults(func=cmd_analyze_compare)
    p = an.add_parser("heatmap", help="8x8 relative spike-count grid")
    p.add_argument("--steps", type=Path, required=True, help="per-step JSONL from 'trial run'")
    p.add_argument("--summary", type=Path, help="summary JSON (default <steps>.summary.json)")
    p.add_argument("--episode", type=int, default=0, help="episode index")
    p.add_argument("--out", type=Path, required=True, help="CSV output")
    p.set_defaults(func=cmd_analyze_heatmap)

    ev = cmds.add_parser("env", help="gridworld utilities").add_subparsers(dest="sub", required=True,
                                                                          parser_class=_Parser)
    p = ev.add_parser("replay", help="replay an action sequence and write its trace")
    p.add_argument("--actions", help="comma-separated forward/left/right")
    p.add_argument("--actions-file", type=Path, help="file of actions, comma or newline separated")
    p.add_argument("--seed", type=int, default=0, help="environment seed")
    p.add_argument("--width", type=int, default=6, help="grid width (cells, including walls)")
    p.add_argument("--height", type=int, default=6, help="grid height (cells, including walls)")
    p.add_argument("--lam", type=float, help="odour decay per cell (1/cell)")
    p.add_argument("--out", type=Path, required=True, help="trace JSONL")
    p.set_defaults(func=cmd_env_replay)
    return top


def _setup_logging() -> None:
    level = os.environ.get("NEUROLOOP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:       # --help
        return int(exc.code or 0)
    except (OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
