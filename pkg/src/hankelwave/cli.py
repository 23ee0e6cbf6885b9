"""Command line entry point: ``hankelwave simulate|filter|train|classify|evaluate``.

Exit codes: 0 success, 2 configuration error, 3 data error, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .classifiers import crc_precompute, results_to_rows
from .config import PRESETS, PipelineConfig, preset
from .errors import ConfigError, DataError, HankelwaveError, TrainingError
from .ingest import LabeledTrace, load_trace, save_trace
from .plotting import plot_confusion, plot_dictionary, plot_labels, plot_orientation
from .signal_fusion import accel_to_angles_array, integrate_gyro
from .stream_pipeline import (FeatureExtractor, StreamClassifier, emit_plot_data, evaluate,
                              evaluate_runs, synthesize_run, train_from_config)
from .subspace_trainer import load_dictionary, save_dictionary
from .threads import thread_limit

log = logging.getLogger("hankelwave")

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3


# --------------------------------------------------------------------------
# configuration


def _parse_override(text: str) -> tuple[str, object]:
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not KEY=VALUE")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else preset(args.preset)
    overrides = dict(_parse_override(s) for s in args.set or [])
    return cfg.with_overrides(overrides) if overrides else cfg


def _dictionary_and_operator(args, cfg: PipelineConfig):
    if getattr(args, "dictionary", None):
        d = load_dictionary(args.dictionary)
    else:
        log.info("no dictionary given, training from the configuration")
        d, _ = train_from_config(cfg)
    return d, crc_precompute(d, cfg.crc_lambda)


def _out_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args, cfg: PipelineConfig) -> int:
    if args.scenario or args.script:
        if args.scenario:
            try:
                scenario = json.loads(Path(args.scenario).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read scenario {args.scenario}: {exc}") from None
            run = {"kind": "braking", "scenario": scenario, "seed": args.seed}
        else:
            script = [int(s) for s in args.script.split(",")]
            run = {"kind": "posture", "script": script, "seed": args.seed}
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_trace(synthesize_run(run, cfg.fs), out)
        print(out)
        return EXIT_OK

    out = _out_dir(args.out)
    groups = {"training": cfg.training, "evaluation": cfg.evaluation}
    selected = groups if args.which == "all" else {args.which: groups[args.which]}
    manifest = []
    for group, runs in selected.items():
        for i, run in enumerate(runs):
            if "path" in run:
                continue
            name = run.get("name", f"{group}{i}")
            path = out / f"{name}.csv"
            save_trace(synthesize_run(run, cfg.fs), path)
            manifest.append({"group": group, "name": name, "file": path.name,
                             "seed": run.get("seed", 0)})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"{len(manifest)} traces written to {out}")
    return EXIT_OK


def cmd_filter(args, cfg: PipelineConfig) -> int:
    trace = load_trace(args.trace, cfg.fs, labeled=args.labeled)
    if isinstance(trace, LabeledTrace):
        trace = trace.trace
    if not trace.is_imu:
        raise DataError("filtering needs a 6-axis IMU trace (ax..gz)")
    imu_cfg = cfg if cfg.feature_mode == "imu" else cfg.with_overrides({"feature_mode": "imu",
                                                                      "channels": ["pitch"]})
    feats = FeatureExtractor(imu_cfg).process(trace, full=True)
    roll_a, pitch_a = accel_to_angles_array(trace.accel)
    names = ["roll", "pitch", "roll_accel", "pitch_accel", "roll_rate", "pitch_rate",
             "yaw_rate", "accel_x", "accel_y", "accel_z"]
    feats.update(roll_accel=roll_a, pitch_accel=pitch_a)
    table = np.column_stack([trace.t] + [feats[n] for n in names])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *names])
        w.writerows([[repr(float(v)) for v in row] for row in table])
    if args.plot:
        gyro_pitch = integrate_gyro(trace.gyro[:, 1], cfg.fs, initial=float(pitch_a[0]))
        plot_orientation(trace.t, feats["pitch"], pitch_a, gyro_pitch, args.plot)
    print(out)
    return EXIT_OK


def cmd_train(args, cfg: PipelineConfig) -> int:
    if not cfg.training:
        raise ConfigError("configuration has no training runs")
    t0 = time.perf_counter()
    d, _ = train_from_config(cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    provenance = {"config": cfg.to_dict(),
                  "runs": [{"name": r.get("name"), "schedule": r["schedule"]}
                           for r in cfg.training]}
    save_dictionary(d, out, schedule=provenance)
    sizes = {d.class_names[c]: b - a for c, a, b in d.blocks}
    print(f"dictionary {out}: {d.A.shape[1]} atoms {sizes} "
          f"in {time.perf_counter() - t0:.1f} s")
    if args.report:
        plot_dictionary(d.A, d.blocks, d.class_names, _out_dir(args.report) / "dictionary.png")
    return EXIT_OK


def cmd_classify(args, cfg: PipelineConfig) -> int:
    d, P = _dictionary_and_operator(args, cfg)
    trace = load_trace(args.trace, cfg.fs, labeled=args.labeled)
    truth = None
    if isinstance(trace, LabeledTrace):
        trace, truth = trace.trace, trace.labels
    sc = StreamClassifier(d, P, cfg, keep_results=True)
    labels = sc.process(trace)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_end", "label", *(f"r_{i}" for i in range(d.n_classes)),
                    "margin", "converged"])
        w.writerows(results_to_rows(sc.results, sc.t_end))
    if args.plot_data:
        fused = None
        if cfg.feature_mode == "imu":
            f = FeatureExtractor(cfg).process(trace, full=True)
            fused = np.column_stack([f["roll"], f["pitch"]])
        emit_plot_data(trace, fused, labels, args.plot_data, truth)
    if truth is not None:
        rep = evaluate(labels, truth, boundary=cfg.boundary_samples,
                       n_classes=len(cfg.class_names), class_names=cfg.class_names)
        print(rep.summary())
    print(out)
    return EXIT_OK


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    d, P = _dictionary_and_operator(args, cfg)
    runs = None
    if args.traces:
        runs = [{"name": Path(p).stem, "path": p, "labeled": True} for p in args.traces]
    report, outcomes = evaluate_runs(d, P, cfg, runs)
    out = _out_dir(args.report)
    names = list(cfg.class_names)

    for fname, cm in (("confusion.csv", report.confusion),
                      ("confusion_lenient.csv", report.lenient_confusion)):
        with open(out / fname, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\predicted", *names])
            for name, row in zip(names, cm):
                w.writerow([name, *row.tolist()])
    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "decisions", "accuracy", "lenient_accuracy"])
        for o in outcomes:
            w.writerow([o.name, o.report.total, f"{o.report.accuracy:.6f}",
                        f"{o.report.lenient_accuracy:.6f}"])
    with open(out / "misclassified.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "start", "end", "true", "predicted"])
        for m in report.misclassified_runs:
            w.writerow([outcomes[m["run"]].name, m["start"], m["end"],
                        names[m["true"]], names[m["predicted"]]])
    (out / "summary.json").write_text(json.dumps(
        {"runs": [o.name for o in outcomes], **report.to_dict()}, indent=2))

    plot_confusion(report.confusion, names, out / "confusion.png", title="strict")
    plot_confusion(report.lenient_confusion, names, out / "confusion_lenient.png",
                   title="boundary-lenient")
    data_dir = _out_dir(out / "plot_data")
    for o in outcomes[: args.max_plots]:
        extractor = FeatureExtractor(cfg)
        feats = extractor.process(o.trace.trace)
        fused = None
        if cfg.feature_mode == "imu":
            full = FeatureExtractor(cfg).process(o.trace.trace, full=True)
            fused = np.column_stack([full["roll"], full["pitch"]])
        emit_plot_data(o.trace.trace, fused, o.labels, data_dir / f"{o.name}.csv", o.trace.labels)
        plot_labels(o.trace.trace.t, feats, cfg.channels, o.labels, names, o.trace.labels,
                    out / f"{o.name}_labels.png")
    print(report.summary())
    print(f"report written to {out}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "filter": cmd_filter, "train": cmd_train,
            "classify": cmd_classify, "evaluate": cmd_evaluate}


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline configuration JSON")
    common.add_argument("--preset", choices=sorted(PRESETS), default="braking",
                        help="built-in configuration used when --config is absent")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config entry (dotted keys, JSON values)")
    common.add_argument("--threads", help="linear-algebra thread cap "
                                          "(default: $HANKELWAVE_THREADS)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(prog="hankelwave", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="write synthetic labeled traces")
    p.add_argument("--out", required=True, help="output directory (or file with --scenario/--script)")
    p.add_argument("--which", choices=("training", "evaluation", "all"), default="all")
    p.add_argument("--scenario", help="braking scenario JSON: list of {state, duration_s}")
    p.add_argument("--script", help="comma-separated posture ids, e.g. 0,1,0,3")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("filter", parents=[common], help="fuse an IMU trace into features")
    p.add_argument("trace")
    p.add_argument("--out", required=True)
    p.add_argument("--labeled", action="store_true", help="trace has a trailing label column")
    p.add_argument("--plot", help="PNG of fused vs raw pitch")

    p = sub.add_parser("train", parents=[common], help="distill a dictionary")
    p.add_argument("--out", required=True, help="dictionary file (.npz)")
    p.add_argument("--report", help="directory for a dictionary image")

    p = sub.add_parser("classify", parents=[common], help="label a trace sample by sample")
    p.add_argument("trace")
    p.add_argument("--dictionary", help="trained dictionary (trains from config if absent)")
    p.add_argument("--out", required=True, help="per-window results CSV")
    p.add_argument("--labeled", action="store_true")
    p.add_argument("--plot-data", help="tidy CSV with raw channels, fused angles and labels")

    p = sub.add_parser("evaluate", parents=[common], help="score held-out runs")
    p.add_argument("--dictionary", help="trained dictionary (trains from config if absent)")
    p.add_argument("--traces", nargs="*", help="labeled trace CSVs (default: config runs)")
    p.add_argument("--report", required=True, help="report directory")
    p.add_argument("--max-plots", type=int, default=4, help="label plots to draw")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        with thread_limit(args.threads):
            return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, TrainingError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except HankelwaveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
