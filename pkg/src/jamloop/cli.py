"""Command-line entry points: simulate, eval-labeler, run-experiment, replay, deploy.

Exit codes: 0 success, 1 experiment-level failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import mlp
from .config import ConfigError, load_config
from .detector import DetectorXapp
from .experiment import (ExperimentConfig, ExperimentError, run_experiment)
from .labeler import run_labeler
from .manager import ModelRegistry
from .scenarios import (KpiSample, ScheduleError, load_schedule, schedule_from_ids,
                        synth_stream)
from .store import SchemaError, StoreError, TelemetryStore, _to_wire

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jamloop",
                                description="Adaptive uplink jamming detection loop")
    p.add_argument("--config", type=Path, default=None, help="global YAML config file")
    p.add_argument("--seed", type=int, default=1, help="master RNG seed")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="synthesize a KPI trace from a schedule")
    sp.add_argument("--schedule", type=Path, required=True)
    sp.add_argument("--with-truth", action="store_true",
                    help="include ground-truth flags in the trace")

    ep = sub.add_parser("eval-labeler", help="score labeler output per scenario")
    ep.add_argument("--trace", type=Path, required=True,
                    help="JSONL KPI trace written with --with-truth")

    sub.add_parser("run-experiment",
                   help="two-arm adaptive-vs-static accuracy comparison")

    rp = sub.add_parser("replay", help="offline inference of a trace with one model")
    rp.add_argument("--trace", type=Path, required=True)
    rp.add_argument("--model", type=Path, required=True)

    dp = sub.add_parser("deploy", help="validate and register a model file")
    dp.add_argument("--model", type=Path, required=True)
    dp.add_argument("--registry", type=Path, default=None,
                    help="registry directory (defaults to <out>/models)")
    return p


def _load_trace(path: Path) -> list[KpiSample]:
    samples: list[KpiSample] = []
    with path.open("r", encoding="utf-8") as f:
        for i, line in enumerate(f):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                samples.append(KpiSample(
                    seq=int(row["seq"]), ts_ms=int(row["ts_ms"]),
                    snr_db=float(row["snr_db"]), mcs=int(row["mcs"]),
                    bler=float(row["bler"]),
                    truth_interference=bool(row.get("truth", False))))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise SchemaError(f"{path}:{i + 1}: bad trace line: {exc}") from exc
    return samples


def cmd_simulate(args, cfg) -> int:
    schedule = load_schedule(args.schedule, args.seed)
    for warning in schedule.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    args.out.mkdir(parents=True, exist_ok=True)
    trace_path = args.out / "trace.jsonl"
    with trace_path.open("w", encoding="utf-8") as f:
        def sink(s: KpiSample) -> None:
            f.write(json.dumps(_to_wire(s, with_truth=args.with_truth)) + "\n")
        summary = synth_stream(schedule, cfg.engine, sink)
    print(f"wrote {summary.n_samples} samples to {trace_path} "
          f"(digest {summary.digest[:12]})")
    return EXIT_OK


def cmd_eval_labeler(args, cfg) -> int:
    from .experiment import labeler_accuracy_by_scenario
    from .scenarios import Segment

    samples = _load_trace(args.trace)
    if not samples:
        print("error: empty trace", file=sys.stderr)
        return EXIT_FAILURE
    with args.trace.open("r", encoding="utf-8") as f:
        first = json.loads(f.readline())
    if "truth" not in first:
        print("error: trace carries no ground truth; rerun simulate with --with-truth",
              file=sys.stderr)
        return EXIT_FAILURE

    store = TelemetryStore(max_records=max(len(samples) + 1, 1_000_000))
    for s in samples:
        store.append("kpi", s)
    run_labeler(store, cfg.labeler)
    hi = store.max_seq("labels")
    labels = {r.seq: r.label for r in store.window("labels", 0, hi)}

    # segment boundaries from truth/ordering: a segment ends where truth flips
    # or at a synthetic scenario boundary is unknown, so flip-based splitting
    segments: list[Segment] = []
    start = 0
    for i in range(1, len(samples) + 1):
        if i == len(samples) or samples[i].truth_interference != samples[start].truth_interference:
            segments.append(Segment(
                scenario_id=len(segments) + 1,
                event="ON" if samples[start].truth_interference else "OFF",
                start_seq=samples[start].seq, end_seq=samples[i - 1].seq))
            start = i
    rows = labeler_accuracy_by_scenario(samples, labels, segments,
                                        cfg.labeler.smoothing_halfwidth)
    args.out.mkdir(parents=True, exist_ok=True)
    out_path = args.out / "labeler_accuracy.csv"
    with out_path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["segment", "event", "start_seq", "end_seq", "accuracy",
                    "accuracy_transition_excluded"])
        for seg, row in zip(segments, rows):
            w.writerow([seg.scenario_id, seg.event, seg.start_seq, seg.end_seq,
                        repr(row.accuracy), repr(row.accuracy_transition_excluded)])
    print(f"wrote {len(rows)} segment rows to {out_path}")
    return EXIT_OK


def cmd_run_experiment(args, cfg) -> int:
    from .experiment import default_experiment_config

    exp = default_experiment_config(
        seed=args.seed,
        samples_per_scenario=cfg.experiment.samples_per_scenario,
        passes=cfg.experiment.passes, output_dir=args.out)
    exp.baseline_train_entries = cfg.experiment.baseline_train_entries
    exp.channel = cfg.engine
    exp.labeler = cfg.labeler
    exp.loop = cfg.loop
    report = run_experiment(exp, registry_dir=args.out / "models")
    for w in report.windows:
        loop_acc = "  n/a" if w.loop_accuracy is None else f"{w.loop_accuracy:.3f}"
        print(f"window {w.label:>3} scenarios {'+'.join(map(str, w.scenario_ids)):>5}: "
              f"loop {loop_acc}  static {w.baseline_accuracy:.3f}")
    print(f"artifacts in {args.out} ({report.n_samples} samples, "
          f"{report.runtime_s:.1f}s)")
    return EXIT_OK


def cmd_replay(args, cfg) -> int:
    if not args.model.exists():
        print(f"error: model file {args.model} not found", file=sys.stderr)
        return EXIT_USAGE
    model = mlp.load(args.model)
    samples = _load_trace(args.trace)
    detector = DetectorXapp()
    detector.swap_model(model)
    args.out.mkdir(parents=True, exist_ok=True)
    out_path = args.out / "detections.csv"
    with out_path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["seq", "prob", "verdict", "model_version", "latency_us"])
        for s in samples:
            rec = detector.infer(s.public())
            w.writerow([rec.seq, repr(rec.prob), rec.verdict, rec.model_version,
                        rec.latency_us])
    print(f"wrote {len(samples)} detections to {out_path}")
    return EXIT_OK


def cmd_deploy(args, cfg) -> int:
    if not args.model.exists():
        print(f"error: model file {args.model} not found", file=sys.stderr)
        return EXIT_USAGE
    model = mlp.load(args.model)
    registry_dir = args.registry or (args.out / "models")
    registry = ModelRegistry(registry_dir)
    deployed = registry.deployed_entry()
    if deployed is not None and model.version <= deployed.version:
        print(f"error: version {model.version} not newer than deployed "
              f"{deployed.version}", file=sys.stderr)
        return EXIT_FAILURE
    expected = registry.next_version()
    if model.version != expected:
        print(f"error: model version {model.version} does not extend the registry "
              f"(expected {expected})", file=sys.stderr)
        return EXIT_FAILURE
    import shutil
    target = Path(registry_dir) / f"v{model.version:03d}.model"
    shutil.copyfile(args.model, target)
    from .manager import RegistryEntry
    import time as _time
    registry.entries.append(RegistryEntry(
        version=model.version, path=str(target), val_accuracy=float("nan"),
        deployed=False, created_at=_time.time(),
        train_report={"source": "manual deploy"}))
    registry._rewrite_journal()
    registry.mark_deployed(model.version)
    print(f"registered and marked deployed: version {model.version} at {target}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    handlers = {
        "simulate": cmd_simulate,
        "eval-labeler": cmd_eval_labeler,
        "run-experiment": cmd_run_experiment,
        "replay": cmd_replay,
        "deploy": cmd_deploy,
    }
    try:
        return handlers[args.command](args, cfg)
    except (ScheduleError, SchemaError, ConfigError, mlp.ModelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ExperimentError, StoreError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
