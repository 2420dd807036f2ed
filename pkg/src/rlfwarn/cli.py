"""Command-line entry point wiring the whole pipeline.

Subcommands: simulate | build | balance | train | eval | sweep | hits |
stream | import-preds. Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import balance as balance_mod
from . import evaluate as eval_mod
from . import plots
from .config import ConfigError, RunConfig, load_config, resolved_text, write_resolved, write_text_atomic
from .dataset import DatasetError, load_dataset, save_dataset
from .harness import build_split, run_cell, simulate_traces, train_on_split
from .learners import LearnerError, check_spec_compatible, load_model, predict_batch, save_model
from .evaluate import EvalError, GridCell, HitPolicy, evaluate_cell, hit_analysis
from .simulator import ScenarioError, ground_truth, save_truth_csv
from .stream import StreamError, alarm_log_csv, replay
from .trace import TraceParseError, load_trace_csv, rlf_timestamps, save_trace_csv

DOMAIN_ERRORS = (
    ConfigError, DatasetError, LearnerError, EvalError, ScenarioError,
    StreamError, TraceParseError, balance_mod.BalanceError, OSError, ValueError,
)


def _ensure_dir(path: str) -> None:
    os.makedirs(path, exist_ok=True)


def _collect_traces(paths: list[str]) -> list[str]:
    out: list[str] = []
    for p in paths:
        if os.path.isdir(p):
            for name in sorted(os.listdir(p)):
                if name.endswith(".csv") and not name.endswith(".truth.csv") and not name.endswith(".norm.csv"):
                    out.append(os.path.join(p, name))
        else:
            out.append(p)
    if not out:
        raise ConfigError("no trace files found")
    return out


def cmd_simulate(cfg: RunConfig, args) -> int:
    _ensure_dir(args.out)
    base = cfg.scenario()
    traces = simulate_traces(base, cfg["n_traces"])
    for trace in traces:
        path = os.path.join(args.out, f"{trace.trace_id}.csv")
        save_trace_csv(trace, path, neighbor_capacity=base.neighbor_capacity)
        truth = ground_truth(trace, precursor_lead=base.precursor_lead)
        save_truth_csv(truth, os.path.join(args.out, f"{trace.trace_id}.truth.csv"))
    write_resolved(cfg, args.out)
    print(f"wrote {len(traces)} trace(s) to {args.out}")
    return 0


def cmd_build(cfg: RunConfig, args) -> int:
    _ensure_dir(args.out)
    spec = cfg.window_spec()
    traces = [load_trace_csv(p) for p in _collect_traces(args.trace)]
    split = build_split(traces, spec, cfg.fractions())
    for warning in split.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    save_dataset(split.train, os.path.join(args.out, "train.csv"))
    save_dataset(split.val, os.path.join(args.out, "val.csv"))
    save_dataset(split.test, os.path.join(args.out, "test.csv"))
    write_resolved(cfg, args.out)
    print(f"train/val/test = {len(split.train)}/{len(split.val)}/{len(split.test)}")
    return 0


def cmd_balance(cfg: RunConfig, args) -> int:
    spec = cfg.window_spec()
    ds = load_dataset(args.dataset, spec)
    balanced, weights = balance_mod.apply_balance(ds, cfg.balance_config())
    _ensure_dir(os.path.dirname(args.out) or ".")
    save_dataset(balanced, args.out)
    write_text_atomic(args.out + ".resolved.cfg", resolved_text(cfg))
    print(f"balanced dataset: {balanced.positive_count()} pos / {balanced.negative_count()} neg; "
          f"class weights = ({weights[0]:g}, {weights[1]:g})")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    spec = cfg.window_spec()
    ds = load_dataset(args.train, spec)
    if ds.normalization is None:
        raise ConfigError(f"training dataset {args.train} has no normalization sidecar")

    class _Split:  # train_on_split only touches .train
        train = ds

    model = train_on_split(_Split, cfg.balance_config(), cfg.train_config())
    _ensure_dir(os.path.dirname(args.out) or ".")
    save_model(model, args.out)
    write_text_atomic(args.out + ".resolved.cfg", resolved_text(cfg))
    print(f"trained {model.kind} on {len(ds)} examples -> {args.out}")
    return 0


def _write_timelines(out_dir: str, prefix: str, trace_paths: list[str], model, spec,
                     tau: float, cfg: RunConfig) -> None:
    for path in trace_paths:
        trace = load_trace_csv(path)
        from .dataset import build_examples  # local import avoids cycle at module load

        examples = build_examples(trace, spec)
        if not examples:
            continue
        scores = predict_batch(model, np.stack([e.features for e in examples]))
        now_times = [e.now_t for e in examples]
        rlf = set(rlf_timestamps(trace))
        rlf_flags = [t in rlf for t in now_times]
        alarms = scores >= tau
        name = f"{prefix}{trace.trace_id}"
        write_text_atomic(os.path.join(out_dir, f"{name}.timeline.csv"),
                          eval_mod.timeline_csv(now_times, scores, alarms, rlf_flags))
        if cfg["figures"]:
            plots.save_timeline_figure(now_times, scores, alarms, sorted(rlf), tau,
                                       os.path.join(out_dir, f"{name}.timeline.png"),
                                       title=f"{model.kind} scores on {trace.trace_id}")


def cmd_eval(cfg: RunConfig, args) -> int:
    _ensure_dir(args.out)
    model = load_model(args.model)
    spec = cfg.window_spec()
    check_spec_compatible(model, spec)
    val = load_dataset(args.val, spec)
    test = load_dataset(args.test, spec)
    report = evaluate_cell(GridCell(
        model=model.kind, ts=spec.ts, tp=spec.tp, balance=cfg["balance"],
        val_scores=predict_batch(model, val.feature_matrix()),
        val_labels=(val.labels() > 0).astype(int),
        test_scores=predict_batch(model, test.feature_matrix()),
        test_labels=(test.labels() > 0).astype(int),
    ))
    write_text_atomic(os.path.join(args.out, "report.csv"), eval_mod.report_csv([report]))
    if args.traces:
        _write_timelines(args.out, "", _collect_traces(args.traces), model, spec,
                         report.tau_star, cfg)
    write_resolved(cfg, args.out)
    print(f"tau*={report.tau_star:.1f} f1={report.f1:.4f} auc={report.auc:.4f}")
    return 0


def cmd_sweep(cfg: RunConfig, args) -> int:
    _ensure_dir(args.out)
    traces = simulate_traces(cfg.scenario(), cfg["n_traces"])
    reports = []
    for kind in cfg.model_list():
        for ts in cfg.ts_values():
            for tp in cfg.tp_values():
                spec = cfg.window_spec(ts=ts, tp=tp)
                result = run_cell(traces, spec, cfg.balance_config(),
                                  cfg.train_config(kind=kind), cfg.fractions())
                reports.append(result.report)
                cell = f"{kind}_ts{ts:g}_tp{tp:g}"
                test = result.split.test
                now_times = [e.now_t for e in test.examples]
                rlf_set = {t for trace in traces for t in rlf_timestamps(trace)}
                rlf_flags = [t in rlf_set for t in now_times]
                alarms = result.test_scores >= result.report.tau_star
                write_text_atomic(
                    os.path.join(args.out, f"{cell}.timeline.csv"),
                    eval_mod.timeline_csv(now_times, result.test_scores, alarms, rlf_flags),
                )
    write_text_atomic(os.path.join(args.out, "report.csv"), eval_mod.report_csv(
        sorted(reports, key=lambda r: (r.model, r.ts, r.tp_horizon))))
    if cfg["figures"]:
        plots.save_grid_figure(reports, os.path.join(args.out, "grid_f1.png"))
    write_resolved(cfg, args.out)
    print(f"sweep wrote {len(reports)} report rows to {args.out}")
    return 0


def _load_rlf_times(args, cfg: RunConfig) -> list[float]:
    if args.truth:
        times = []
        with open(args.truth, "r", encoding="utf-8") as fh:
            for line in fh.read().splitlines()[1:]:
                if line.startswith("RLF,"):
                    times.append(float(line.split(",")[1]))
        return sorted(times)
    if args.trace:
        return rlf_timestamps(load_trace_csv(args.trace))
    raise ConfigError("hits needs --truth or --trace for RLF event times")


def cmd_hits(cfg: RunConfig, args) -> int:
    _ensure_dir(args.out)
    rlf_times = _load_rlf_times(args, cfg)
    alarm_times = []
    with open(args.timeline, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("now_t,score,alarm"):
        raise ConfigError(f"malformed timeline header in {args.timeline}")
    for line in lines[1:]:
        if not line:
            continue
        cells = line.split(",")
        if cells[2] == "1":
            alarm_times.append(float(cells[0]))
    tp = cfg["tp"]
    i_s = cfg["sample_interval"]
    reports = [hit_analysis(alarm_times, rlf_times, tp, policy, i_s)
               for policy in eval_mod.standard_hit_policies()]
    write_text_atomic(os.path.join(args.out, "hits.csv"), eval_mod.hit_report_csv(reports))
    if cfg["figures"]:
        plots.save_hits_figure(reports, os.path.join(args.out, "hits.png"))
    write_resolved(cfg, args.out)
    for r in reports:
        print(f"{r.policy.kind} k={r.policy.k}: {r.ratio} ({r.coverage:.1%})")
    return 0


def cmd_stream(cfg: RunConfig, args) -> int:
    _ensure_dir(args.out)
    model = load_model(args.model)
    spec = cfg.window_spec()
    check_spec_compatible(model, spec)
    trace = load_trace_csv(args.trace)
    result = replay(trace, model, spec, cfg.alarm_config())
    write_text_atomic(os.path.join(args.out, "alarms.csv"), alarm_log_csv(result.alarms))
    write_text_atomic(
        os.path.join(args.out, "timeline.csv"),
        eval_mod.timeline_csv(result.now_times, result.scores, result.alarm_flags, result.rlf_flags),
    )
    if cfg["figures"]:
        plots.save_timeline_figure(result.now_times, result.scores, result.alarm_flags,
                                   rlf_timestamps(trace), cfg["tau"],
                                   os.path.join(args.out, "timeline.png"),
                                   title=f"streaming replay of {trace.trace_id}")
    write_resolved(cfg, args.out)
    print(f"replay raised {len(result.alarms)} alarm(s)")
    return 0


def cmd_import_preds(cfg: RunConfig, args) -> int:
    _ensure_dir(args.out)
    spec = cfg.window_spec()
    val = load_dataset(args.val, spec)
    test = load_dataset(args.test, spec)
    val_scores = eval_mod.import_predictions(args.val_preds, val)
    test_scores = eval_mod.import_predictions(args.preds, test)
    report = evaluate_cell(GridCell(
        model=cfg["import_name"], ts=spec.ts, tp=spec.tp, balance="external",
        val_scores=val_scores, val_labels=(val.labels() > 0).astype(int),
        test_scores=test_scores, test_labels=(test.labels() > 0).astype(int),
    ))
    write_text_atomic(os.path.join(args.out, "report.csv"), eval_mod.report_csv([report]))
    write_resolved(cfg, args.out)
    print(f"imported model {report.model}: tau*={report.tau_star:.1f} f1={report.f1:.4f} auc={report.auc:.4f}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rlfwarn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config key")

    p = sub.add_parser("simulate", help="generate synthetic traces with truth sidecars")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("build", help="build train/val/test datasets from traces")
    common(p)
    p.add_argument("--trace", action="append", required=True, help="trace CSV or directory")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_build)

    p = sub.add_parser("balance", help="apply the configured imbalance countermeasure")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_balance)

    p = sub.add_parser("train", help="train one learner on a dataset")
    common(p)
    p.add_argument("--train", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model under the threshold protocol")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--traces", action="append", default=[], help="trace files for timeline output")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="full (model x Ts x Tp) benchmark grid")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("hits", help="per-event hit-policy analysis of a timeline")
    common(p)
    p.add_argument("--timeline", required=True)
    p.add_argument("--truth", help="truth sidecar with RLF rows")
    p.add_argument("--trace", help="trace CSV to take RLF times from")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_hits)

    p = sub.add_parser("stream", help="streaming replay with confirmed alarms")
    common(p)
    p.add_argument("--trace", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_stream)

    p = sub.add_parser("import-preds", help="score external predictions under the protocol")
    common(p)
    p.add_argument("--preds", required=True, help="test-set predictions CSV")
    p.add_argument("--val-preds", required=True, help="validation-set predictions CSV")
    p.add_argument("--val", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_import_preds)

    return parser


def dispatch(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = load_config(args.config, args.overrides)
        return args.fn(cfg, args)
    except DOMAIN_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
