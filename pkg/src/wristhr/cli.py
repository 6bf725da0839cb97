"""Command-line surface for batch use.

Subcommands cover the whole pipeline: synthetic data generation, windowing,
adaptive filter training, artifact removal, training-set augmentation,
model training, inference, evaluation, leave-one-subject-out runs, and
report rendering.  Every command takes ``--seed`` and writes deterministic,
byte-stable CSV output (``.`` decimal, ``,`` separator, LF endings).
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .augment import LabeledFrame, build_adversarial_subset, is_clean_frame, make_high_hr_sample
from .frames import window_stream
from .mixfilter import AdaptHyperParams, load_mix_filter, remove_artifacts, save_mix_filter, train_mix_filter
from .model import TrainSettings, load_network, save_network
from .pipeline import (
    PipelineConfig,
    classify_trust,
    evaluate,
    format_report_table,
    loso_folds,
    predict_frames,
    clean_session_frames,
    report_to_rows,
    train_pipeline,
    variant_config,
)
from .sessions import FORMAT_VERSION, load_session, write_session
from .synth import AxisSpec, SynthSpec, gen_benchmark_suite, gen_session, write_synth_session


class StageError(RuntimeError):
    """Failure attributed to a named pipeline stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def _write_csv(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _read_kv_config(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        k, _, v = line.partition("=")
        out[k.strip()] = v.strip()
    return out


def _config_from_args(args) -> PipelineConfig:
    cfg = variant_config(args.variant)
    overrides = _read_kv_config(getattr(args, "config", None))
    fields = {}
    if "stride_s" in overrides:
        fields["stride_s"] = float(overrides["stride_s"])
    if "epochs" in overrides or "patience" in overrides or "batch_size" in overrides:
        fields["train"] = replace(
            cfg.train,
            epochs=int(overrides.get("epochs", cfg.train.epochs)),
            patience=int(overrides.get("patience", cfg.train.patience)),
            batch_size=int(overrides.get("batch_size", cfg.train.batch_size)),
        )
    if "mix_epochs" in overrides:
        fields["mix_hp"] = replace(cfg.mix_hp, epochs=int(overrides["mix_epochs"]))
    if getattr(args, "stride", None) is not None:
        fields["stride_s"] = args.stride
    fields["seed"] = args.seed
    return replace(cfg, **fields)


def _load_sessions_root(root: Path):
    dirs = sorted(p for p in root.iterdir() if (p / "manifest.txt").exists())
    if not dirs:
        raise StageError("load", f"no session directories under {root}")
    return [load_session(p) for p in dirs]


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    if args.spec:
        spec_kv = _read_kv_config(args.spec)
        spec = SynthSpec(
            duration_s=float(spec_kv.get("duration_s", 120.0)),
            fs=float(spec_kv.get("fs", 32.0)),
            hr_nodes=((0.0, float(spec_kv.get("hr_bpm", 75.0))),),
            bvp_amps=tuple(float(v) for v in spec_kv.get("bvp_amps", "15,6,3").split(",")),
            acc_axes=tuple(
                AxisSpec(tones=((float(spec_kv.get("acc_amp", 15.0)),
                                 float(spec_kv.get("motion_hz", 2.0))),),
                         noise_std=float(spec_kv.get("acc_noise", 15.0)))
                for _ in range(3)
            ),
            noise_std=float(spec_kv.get("noise_std", 1.5)),
            subject_id=spec_kv.get("subject_id", "synth01"),
            activity=spec_kv.get("activity", "main"),
        )
        result = gen_session(spec, np.random.default_rng(args.seed))
        write_synth_session(result, out)
        print(f"wrote session {result.recording.subject_id} to {out}")
    else:
        suite = gen_benchmark_suite(args.seed, segment_s=args.segment_s)
        for r in suite:
            write_synth_session(r, out / r.recording.subject_id)
        print(f"wrote {len(suite)} benchmark sessions to {out}")
    return 0


def cmd_windows(args) -> int:
    session = load_session(args.session)
    frames = window_stream(session, stride_s=args.stride)
    rows = [
        (f"{f.t_start:.6f}",
         f"{f.hr_label:.6f}" if f.hr_label is not None else "",
         f.activity or "")
        for f in frames
    ]
    _write_csv(Path(args.out), ["t_start_s", "hr_bpm", "activity"], rows)
    print(f"{len(frames)} windows -> {args.out}")
    return 0


def cmd_train_filter(args) -> int:
    session = load_session(args.session)
    frames = window_stream(session, stride_s=args.stride)
    chosen = [f for f in frames if f.activity == args.activity]
    if not chosen:
        raise StageError("train-filter", f"no windows labeled {args.activity!r}")
    step = max(1, int(round(8.0 / args.stride)))
    segments = [(f.acc, f.ppg) for f in chosen[::step]]
    hp = AdaptHyperParams(epochs=args.epochs)
    model, trace = train_mix_filter(segments, hp, init_seed=args.seed)
    save_mix_filter(model, args.out)
    _write_csv(Path(args.out) / "loss_trace.csv", ["epoch", "loss"],
               [(i, f"{v:.9e}") for i, v in enumerate(trace)])
    print(f"trained on {len(segments)} segments; final loss {trace[-1]:.4e} -> {args.out}")
    return 0


def cmd_clean(args) -> int:
    session = load_session(args.session)
    model = load_mix_filter(args.filter)
    frames = window_stream(session, stride_s=args.stride)
    if not frames:
        raise StageError("clean", "session shorter than one window")
    # reconstruct a cleaned continuous ppg from non-overlapping windows
    step = max(1, int(round(8.0 / args.stride)))
    cleaned = [remove_artifacts(model, f) for f in frames[::step]]
    ppg = np.concatenate([f.ppg for f in cleaned])
    out_session = session
    n = min(len(ppg), len(session.channels["ppg"].samples))
    new_ppg = session.channels["ppg"].samples.copy()
    new_ppg[:n] = ppg[:n]
    from .dsp import Channel

    out_session.channels["ppg"] = Channel(new_ppg, fs=session.channels["ppg"].fs)
    write_session(out_session, args.out)
    print(f"cleaned session -> {args.out}")
    return 0


def cmd_augment(args) -> int:
    session = load_session(args.in_dir)
    frames = window_stream(session, stride_s=args.stride)
    rng = np.random.default_rng(args.seed)
    originals = [
        LabeledFrame(frame=f, hr_label=float(f.hr_label))
        for f in frames
        if f.hr_label is not None
    ]
    if not originals:
        raise StageError("augment", "no labeled windows in session")
    adversarial = build_adversarial_subset(originals, args.adversarial_frac, rng)
    high_hr = []
    if args.high_hr:
        for lf in originals:
            if is_clean_frame(lf):
                s = make_high_hr_sample(lf)
                if s is not None:
                    high_hr.append(s)
    counts = {
        "original": len(originals),
        "adversarial": len(adversarial),
        "high_hr": len(high_hr),
        "seed": args.seed,
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "augmented_manifest.txt").write_text(
        "".join(f"{k} = {v}\n" for k, v in counts.items())
    )
    rows = []
    for lf in [*originals, *high_hr, *adversarial]:
        rows.append((f"{lf.frame.t_start:.6f}", f"{lf.hr_label:.6f}", lf.provenance))
    _write_csv(out / "augmented_windows.csv", ["t_start_s", "hr_bpm", "provenance"], rows)
    print(f"augmented set: {counts} -> {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    sessions = _load_sessions_root(Path(args.data))
    if len(sessions) < 2:
        raise StageError("train", "need at least 2 sessions (train + held-out)")
    test = sessions[-1]
    result = train_pipeline((sessions[:-1], test), cfg)
    save_network(result.network, Path(args.out) / "network")
    for (subject, activity), model in result.mix_filters.items():
        save_mix_filter(model, Path(args.out) / "filters" / f"{subject}__{activity}")
    _write_csv(Path(args.out) / "report.csv", ["metric", "scope", "value"],
               report_to_rows(result.report))
    (Path(args.out) / "run.json").write_text(json.dumps({
        "variant": args.variant,
        "seed": args.seed,
        "held_out": test.subject_id,
        "sample_counts": result.history["sample_counts"],
        "best_epoch": result.history["best_epoch"],
    }, indent=2) + "\n")
    print(f"trained variant {args.variant}; held-out {test.subject_id}; "
          f"report -> {args.out}/report.csv")
    return 0


def cmd_infer(args) -> int:
    net = load_network(Path(args.model) / "network")
    session = load_session(args.session)
    cfg = PipelineConfig(adaptive=False, stride_s=args.stride)
    frames = window_stream(session, stride_s=args.stride)
    filters_dir = Path(args.model) / "filters"
    if filters_dir.exists():
        # reuse matching per-activity filters when present
        by_activity = {}
        for d in filters_dir.iterdir():
            name = d.name.split("__", 1)
            if len(name) == 2 and name[0] == session.subject_id:
                by_activity[name[1]] = load_mix_filter(d)
        if by_activity:
            frames = [
                remove_artifacts(by_activity[f.activity], f) if f.activity in by_activity else f
                for f in frames
            ]
    estimates = predict_frames(net, frames, args.stride)
    rows = []
    for est in estimates:
        d = classify_trust(est, args.thr, args.cl)
        rows.append((
            f"{est.frame_time:.6f}",
            f"{est.mu_hr:.6f}",
            f"{est.sigma_hr:.6f}" if np.isfinite(est.sigma_hr) else "inf",
            f"{d.trust_prob:.9f}",
            int(d.keep),
        ))
    _write_csv(Path(args.out), ["t_s", "mu_bpm", "sigma_bpm", "trust_prob", "keep"], rows)
    print(f"{len(rows)} predictions -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    from .nn import HrEstimate

    preds = []
    with open(args.pred, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            sigma = float("inf") if row["sigma_bpm"] == "inf" else float(row["sigma_bpm"])
            preds.append(HrEstimate(mu_hr=float(row["mu_bpm"]), sigma_hr=sigma,
                                    frame_time=float(row["t_s"])))
    truth_rows = []
    with open(args.truth, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            truth_rows.append(float(row["hr_bpm"]))
    if len(truth_rows) != len(preds):
        raise StageError(
            "evaluate",
            f"{args.pred} has {len(preds)} rows but {args.truth} has {len(truth_rows)}",
        )
    report = evaluate(list(zip(preds, truth_rows)), thr=args.thr, cl=args.cl)
    _write_csv(Path(args.out), ["metric", "scope", "value"], report_to_rows(report))
    print(f"evaluated {len(preds)} predictions -> {args.out}")
    return 0


def cmd_loso(args) -> int:
    cfg = _config_from_args(args)
    sessions = _load_sessions_root(Path(args.data))
    folds = loso_folds(sessions)
    by_id = {s.subject_id: s for s in sessions}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    reports = {}

    def run_fold(test_id):
        train = [by_id[sid] for sid in by_id if sid != test_id]
        return test_id, train_pipeline((train, by_id[test_id]), cfg)

    if args.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_fold_worker, [
                (args.data, test_id, args.variant, args.seed, getattr(args, "config", None),
                 getattr(args, "stride", None))
                for _, test_id in folds
            ]))
        for test_id, rows, table_stats in results:
            _write_csv(out / f"fold_{test_id}.csv", ["metric", "scope", "value"], rows)
            reports[test_id] = table_stats
    else:
        for _, test_id in folds:
            _, result = run_fold(test_id)
            _write_csv(out / f"fold_{test_id}.csv", ["metric", "scope", "value"],
                       report_to_rows(result.report))
            reports[test_id] = result.report
    agg_rows = []
    for test_id in sorted(reports):
        r = reports[test_id]
        agg_rows.append(("mae_bpm", f"subject:{test_id}",
                         "absent" if r.mae is None else f"{r.mae:.6f}"))
        agg_rows.append(("retention_pct", f"subject:{test_id}", f"{r.retention_pct:.6f}"))
    maes = [r.mae for r in reports.values() if r.mae is not None]
    if maes:
        agg_rows.append(("mae_bpm", "average", f"{float(np.mean(maes)):.6f}"))
    _write_csv(out / "aggregate.csv", ["metric", "scope", "value"], agg_rows)
    (out / "table.txt").write_text(format_report_table(reports) + "\n")
    print(f"{len(folds)} folds -> {out}")
    return 0


def _fold_worker(packed):
    root, test_id, variant, seed, config, stride = packed
    ns = argparse.Namespace(variant=variant, seed=seed, config=config, stride=stride)
    cfg = _config_from_args(ns)
    sessions = _load_sessions_root(Path(root))
    by_id = {s.subject_id: s for s in sessions}
    train = [by_id[sid] for sid in by_id if sid != test_id]
    result = train_pipeline((train, by_id[test_id]), cfg)
    return test_id, report_to_rows(result.report), result.report


def cmd_report(args) -> int:
    from .pipeline import MetricsReport

    reports = {}
    for path in sorted(Path(args.runs).glob("fold_*.csv")):
        values = {}
        with open(path, newline="") as fh:
            for metric, scope, value in csv.reader(fh):
                if scope == "overall":
                    values[metric] = value
        test_id = path.stem.removeprefix("fold_")

        def num(key):
            v = values.get(key, "absent")
            return None if v in ("absent", "") else float(v)

        reports[test_id] = MetricsReport(
            mae=num("mae_bpm"), sd_ae=num("sd_ae_bpm"), mean_nll=num("mean_nll"),
            retention_pct=num("retention_pct") or 0.0, tpr=num("tpr"), f1=num("f1"),
            n_total=int(float(values.get("n_total", "0"))),
            n_kept=int(float(values.get("n_kept", "0"))),
        )
    if not reports:
        raise StageError("report", f"no fold_*.csv files under {args.runs}")
    table = format_report_table(reports)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(table + "\n")
    print(table)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="wristhr",
        description="Heart-rate extraction from wrist PPG + acceleration",
    )
    p.add_argument("--version", action="version",
                   version=f"wristhr {__version__} (container format v{FORMAT_VERSION})")
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, stride=True):
        sp.add_argument("--seed", type=int, default=0)
        if stride:
            sp.add_argument("--stride", type=float, default=2.0,
                            help="window stride in seconds (default 2.0)")

    sp = sub.add_parser("synth", help="generate synthetic sessions")
    sp.add_argument("--spec", help="key=value spec file for a single session")
    sp.add_argument("--out", required=True)
    sp.add_argument("--segment-s", type=float, default=120.0)
    add_common(sp, stride=False)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("windows", help="list analysis windows of a session")
    sp.add_argument("--session", required=True)
    sp.add_argument("--out", required=True)
    add_common(sp)
    sp.set_defaults(func=cmd_windows)

    sp = sub.add_parser("train-filter", help="train the adaptive artifact filter")
    sp.add_argument("--session", required=True)
    sp.add_argument("--activity", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--epochs", type=int, default=300)
    add_common(sp)
    sp.set_defaults(func=cmd_train_filter)

    sp = sub.add_parser("clean", help="subtract predicted motion artifacts")
    sp.add_argument("--session", required=True)
    sp.add_argument("--filter", required=True)
    sp.add_argument("--out", required=True)
    add_common(sp)
    sp.set_defaults(func=cmd_clean)

    sp = sub.add_parser("augment", help="build the augmented training set")
    sp.add_argument("--in", dest="in_dir", required=True)
    sp.add_argument("--adversarial-frac", type=float, default=0.5)
    sp.add_argument("--high-hr", action="store_true")
    sp.add_argument("--out", required=True)
    add_common(sp)
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("train", help="train an HR model variant")
    sp.add_argument("--variant", choices=["point", "prob", "kid-ppg"], default="kid-ppg")
    sp.add_argument("--config", help="key=value overrides")
    sp.add_argument("--data", required=True, help="root of session directories")
    sp.add_argument("--out", required=True)
    add_common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="run inference over a session")
    sp.add_argument("--model", required=True)
    sp.add_argument("--session", required=True)
    sp.add_argument("--out", required=True, help="predictions.csv path")
    sp.add_argument("--thr", type=float, default=10.0)
    sp.add_argument("--cl", type=float, default=0.5)
    add_common(sp)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("evaluate", help="score predictions against truth")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--truth", required=True, help="csv with hr_bpm column, one row per prediction")
    sp.add_argument("--thr", type=float, default=10.0)
    sp.add_argument("--cl", type=float, default=0.5)
    sp.add_argument("--out", required=True)
    add_common(sp, stride=False)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("loso", help="leave-one-subject-out evaluation")
    sp.add_argument("--data", required=True)
    sp.add_argument("--variant", choices=["point", "prob", "kid-ppg"], default="kid-ppg")
    sp.add_argument("--config")
    sp.add_argument("--out", required=True)
    sp.add_argument("--jobs", type=int, default=1)
    add_common(sp)
    sp.set_defaults(func=cmd_loso)

    sp = sub.add_parser("report", help="aggregate fold reports into a table")
    sp.add_argument("--runs", required=True, help="directory holding fold_*.csv")
    sp.add_argument("--out", required=True)
    add_common(sp, stride=False)
    sp.set_defaults(func=cmd_report)

    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
