"""Training orchestration, the trust classifier, and all reported metrics.

The trust probability of an estimate is the Gaussian mass within +/-thr of
its mean, 2*Phi(thr/sigma) - 1; windows whose trust falls below the
confidence level are dropped.  Mean absolute error and its standard
deviation are reported over kept windows, the mean negative log-likelihood
over all windows, and the drop decisions are scored as an error classifier
(TPR / F1 against the |mu - y| >= thr ground truth).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .augment import (
    LabeledFrame,
    build_adversarial_subset,
    is_clean_frame,
    make_high_hr_sample,
    merge_training_sets,
)
from .frames import SampleFrame, window_stream
from .mixfilter import AdaptHyperParams, MixFilterModel, remove_artifacts, train_mix_filter
from .model import HrNetwork, HrNetworkConfig, TrainSettings, prepare_inputs, train_network
from .nn import HrEstimate, gaussian_nll
from .sessions import SessionRecording

__all__ = [
    "TrustDecision",
    "MetricsReport",
    "PipelineConfig",
    "PipelineResult",
    "trust_probability",
    "classify_trust",
    "evaluate",
    "loso_folds",
    "train_pipeline",
    "variant_config",
    "clean_session_frames",
    "predict_frames",
    "report_to_rows",
    "format_report_table",
]

DEFAULT_THR_BPM = 10.0
DEFAULT_CL = 0.5


def trust_probability(est: HrEstimate, thr: float) -> float:
    """P(|HR - mu| < thr) under N(mu, sigma^2): 2*Phi(thr/sigma) - 1.

    Independent of mu; strictly decreasing in sigma, increasing in thr.
    """
    if thr <= 0:
        raise ValueError("thr must be positive")
    z = thr / est.sigma_hr
    return math.erf(z / math.sqrt(2.0))


@dataclass(frozen=True)
class TrustDecision:
    estimate: HrEstimate
    trust_prob: float
    keep: bool
    thr_bpm: float
    cl: float


def classify_trust(est: HrEstimate, thr: float = DEFAULT_THR_BPM,
                   cl: float = DEFAULT_CL) -> TrustDecision:
    """Keep the window iff its trust probability reaches the confidence level."""
    p = trust_probability(est, thr)
    return TrustDecision(estimate=est, trust_prob=p, keep=p >= cl, thr_bpm=thr, cl=cl)


@dataclass
class MetricsReport:
    mae: float | None
    sd_ae: float | None
    mean_nll: float | None
    retention_pct: float
    tpr: float | None
    f1: float | None
    n_total: int
    n_kept: int
    no_positives: bool = False
    per_subject: dict[str, dict] = field(default_factory=dict)
    per_activity: dict[str, dict] = field(default_factory=dict)


def _basic_stats(errors: np.ndarray) -> tuple[float | None, float | None]:
    if errors.size == 0:
        return None, None
    return float(np.mean(errors)), float(np.std(errors))


def evaluate(
    predictions: list[tuple[HrEstimate, float]],
    thr: float = DEFAULT_THR_BPM,
    cl: float = DEFAULT_CL,
    groups: list[tuple[str, str | None]] | None = None,
    probabilistic: bool = True,
) -> MetricsReport:
    """Score predictions against ground truth.

    ``groups`` optionally carries (subject, activity) per prediction for
    the per-subject / per-activity breakdowns.  With ``probabilistic``
    False there is no retention filtering and no NLL/TPR/F1 (point
    estimates carry no usable sigma).
    """
    if not predictions:
        raise ValueError("evaluate: empty prediction list")
    mu = np.array([est.mu_hr for est, _ in predictions])
    y = np.array([truth for _, truth in predictions])
    abs_err = np.abs(mu - y)

    if not probabilistic:
        mae, sd = _basic_stats(abs_err)
        report = MetricsReport(mae=mae, sd_ae=sd, mean_nll=None, retention_pct=100.0,
                               tpr=None, f1=None, n_total=len(y), n_kept=len(y))
        _fill_breakdowns(report, abs_err, np.ones(len(y), dtype=bool), groups)
        return report

    keep = np.array([classify_trust(est, thr, cl).keep for est, _ in predictions])
    nll = np.array([gaussian_nll(est, truth) for est, truth in predictions])
    mae, sd = _basic_stats(abs_err[keep])
    retention = 100.0 * float(np.mean(keep))

    actual_pos = abs_err >= thr  # untrustworthy: the estimate really is off
    pred_pos = ~keep
    tp = int(np.sum(actual_pos & pred_pos))
    fn = int(np.sum(actual_pos & ~pred_pos))
    fp = int(np.sum(~actual_pos & pred_pos))
    no_positives = not actual_pos.any()
    tpr = 1.0 if no_positives else tp / (tp + fn)
    if tp == 0:
        f1 = 0.0 if (fp + fn) > 0 else 1.0
    else:
        f1 = 2.0 * tp / (2.0 * tp + fp + fn)

    report = MetricsReport(
        mae=mae, sd_ae=sd, mean_nll=float(np.mean(nll)), retention_pct=retention,
        tpr=float(tpr), f1=float(f1), n_total=len(y), n_kept=int(np.sum(keep)),
        no_positives=no_positives,
    )
    _fill_breakdowns(report, abs_err, keep, groups)
    return report


def _fill_breakdowns(report, abs_err, keep, groups):
    if groups is None:
        return
    subjects = {}
    activities = {}
    for i, (subj, act) in enumerate(groups):
        subjects.setdefault(subj, []).append(i)
        if act is not None:
            activities.setdefault(act, []).append(i)
    for out, index in ((report.per_subject, subjects), (report.per_activity, activities)):
        for key, idx in index.items():
            idx = np.asarray(idx)
            kept = idx[keep[idx]]
            mae, sd = _basic_stats(abs_err[kept])
            out[key] = {
                "mae": mae,
                "sd_ae": sd,
                "retention_pct": 100.0 * len(kept) / len(idx),
                "n": int(len(idx)),
            }


def loso_folds(sessions: list[SessionRecording]) -> list[tuple[list[str], str]]:
    """Leave-one-subject-out folds over the subject ids."""
    ids = [s.subject_id for s in sessions]
    if len(ids) != len(set(ids)):
        raise ValueError(f"duplicate subject ids in session list: {sorted(ids)}")
    if len(ids) < 2:
        raise ValueError("need at least 2 subjects for LOSO")
    return [([sid for sid in ids if sid != test], test) for test in ids]


# ---------------------------------------------------------------------------
# Full pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    adaptive: bool = True
    probabilistic: bool = True
    temporal_attention: bool = True
    guided_adversarial: bool = True
    high_hr: bool = True
    win_s: float = 8.0
    stride_s: float = 2.0
    fs: float = 32.0
    thr_bpm: float = DEFAULT_THR_BPM
    cl: float = DEFAULT_CL
    adversarial_fraction: float = 0.5
    clean_tol_bpm: float = 5.0
    mix_hp: AdaptHyperParams = AdaptHyperParams(epochs=300)
    mix_k1: int = 21
    network: HrNetworkConfig = HrNetworkConfig()
    train: TrainSettings = TrainSettings(epochs=150, patience=40)
    seed: int = 0


def variant_config(name: str, **overrides) -> PipelineConfig:
    """Named pipeline variants as exposed on the command line."""
    presets = {
        "point": dict(probabilistic=False, guided_adversarial=False, high_hr=False),
        "prob": dict(probabilistic=True, guided_adversarial=False, high_hr=False),
        "kid-ppg": dict(probabilistic=True, guided_adversarial=True, high_hr=True),
    }
    if name not in presets:
        raise ValueError(f"unknown variant {name!r}; expected one of {sorted(presets)}")
    return PipelineConfig(**{**presets[name], **overrides})


@dataclass
class PipelineResult:
    report: MetricsReport
    network: HrNetwork
    mix_filters: dict[tuple[str, str], MixFilterModel]
    predictions: list[tuple[HrEstimate, float]]
    prediction_groups: list[tuple[str, str | None]]
    mix_traces: dict[tuple[str, str], list[float]]
    history: dict
    config: PipelineConfig


def _train_context_filters(
    frames: list[SampleFrame],
    cfg: PipelineConfig,
) -> tuple[dict[str, MixFilterModel], dict[str, list[float]]]:
    """One filter per activity, trained on that activity's non-overlapping windows."""
    by_activity: dict[str, list[SampleFrame]] = {}
    for f in frames:
        if f.activity is not None:
            by_activity.setdefault(f.activity, []).append(f)
    stride_per_win = max(1, int(round(cfg.win_s / cfg.stride_s)))
    filters, traces = {}, {}
    for activity, group in by_activity.items():
        segments = [(f.acc, f.ppg) for f in group[::stride_per_win]]
        model, trace = train_mix_filter(segments, cfg.mix_hp, init_seed=cfg.seed,
                                        k1=cfg.mix_k1)
        filters[activity] = model
        traces[activity] = trace
    return filters, traces


def clean_session_frames(
    session: SessionRecording,
    cfg: PipelineConfig,
) -> tuple[list[SampleFrame], dict[str, MixFilterModel], dict[str, list[float]]]:
    """Window a session and remove motion artifacts per activity context.

    Transition windows (no activity label) are cleaned with the filter of
    the nearest preceding labeled window; leading transitions use the
    nearest following one.
    """
    frames = window_stream(session, cfg.win_s, cfg.stride_s, cfg.fs)
    if not cfg.adaptive:
        return frames, {}, {}
    filters, traces = _train_context_filters(frames, cfg)
    if not filters:
        return frames, {}, {}
    cleaned = []
    # nearest preceding labeled activity per frame (fallback: nearest following)
    last_activity = None
    preceding: list[str | None] = []
    for f in frames:
        if f.activity in filters:
            last_activity = f.activity
        preceding.append(last_activity)
    following = None
    for i in range(len(frames) - 1, -1, -1):
        if frames[i].activity in filters:
            following = frames[i].activity
        if preceding[i] is None:
            preceding[i] = following
    for f, activity in zip(frames, preceding):
        cleaned.append(remove_artifacts(filters[activity], f) if activity else f)
    return cleaned, filters, traces


def _pairs(frames: list[SampleFrame], stride_s: float):
    """(prev, cur) window pairs; the first window of a run pairs with itself."""
    pairs = []
    for i, cur in enumerate(frames):
        prev = frames[i - 1] if i > 0 and abs(frames[i - 1].t_start + stride_s - cur.t_start) < 1e-6 else cur
        pairs.append((prev, cur))
    return pairs


def _training_samples(cleaned_by_subject, cfg: PipelineConfig, rng: np.random.Generator):
    """Assemble (prev, cur, label) training triples plus augmented self-pairs."""
    orig_pairs = []
    originals: list[LabeledFrame] = []
    for frames in cleaned_by_subject.values():
        labeled = [(p, c) for p, c in _pairs(frames, cfg.stride_s) if c.hr_label is not None]
        orig_pairs.extend((p, c, float(c.hr_label)) for p, c in labeled)
        originals.extend(LabeledFrame(frame=c, hr_label=float(c.hr_label)) for _, c in labeled)

    high_hr: list[LabeledFrame] = []
    if cfg.high_hr:
        for lf in originals:
            if is_clean_frame(lf, cfg.clean_tol_bpm):
                sample = make_high_hr_sample(lf)
                if sample is not None:
                    high_hr.append(sample)
    adversarial: list[LabeledFrame] = []
    if cfg.guided_adversarial and originals:
        adversarial = build_adversarial_subset(originals, cfg.adversarial_fraction, rng)

    merged = merge_training_sets([], high_hr, adversarial, rng)
    samples = orig_pairs + [(lf.frame, lf.frame, lf.hr_label) for lf in merged]
    order = rng.permutation(len(samples))
    counts = {
        "original": len(orig_pairs),
        "high_hr": len(high_hr),
        "adversarial": len(adversarial),
    }
    return [samples[i] for i in order], counts


def predict_frames(net: HrNetwork, frames: list[SampleFrame], stride_s: float,
                   batch_size: int = 256) -> list[HrEstimate]:
    """Batched inference over a session's cleaned frames."""
    pairs = _pairs(frames, stride_s)
    estimates: list[HrEstimate] = []
    for k0 in range(0, len(pairs), batch_size):
        chunk = pairs[k0 : k0 + batch_size]
        x_prev = prepare_inputs([p for p, _ in chunk])
        x_cur = prepare_inputs([c for _, c in chunk])
        raw, _ = net.forward_raw(x_prev, x_cur)
        mu, sigma = net.raw_to_bpm(raw)
        for i, (_, cur) in enumerate(chunk):
            s = float(sigma[i]) if sigma is not None else np.inf
            estimates.append(HrEstimate(mu_hr=float(mu[i]), sigma_hr=s,
                                        frame_time=cur.t_end))
    return estimates


def train_pipeline(
    fold: tuple[list[SessionRecording], SessionRecording],
    cfg: PipelineConfig = PipelineConfig(),
) -> PipelineResult:
    """Run one fold end to end: adapt, augment, train, evaluate.

    The adaptive filters are trained per (subject, activity) for the train
    subjects and the test subject alike — the adaptation is unsupervised
    and never sees HR labels.
    """
    train_sessions, test_session = fold
    rng = np.random.default_rng(cfg.seed)

    mix_filters: dict[tuple[str, str], MixFilterModel] = {}
    mix_traces: dict[tuple[str, str], list[float]] = {}
    cleaned_by_subject: dict[str, list[SampleFrame]] = {}
    for session in [*train_sessions, test_session]:
        frames, filters, traces = clean_session_frames(session, cfg)
        cleaned_by_subject[session.subject_id] = frames
        for activity, model in filters.items():
            mix_filters[(session.subject_id, activity)] = model
            mix_traces[(session.subject_id, activity)] = traces[activity]

    test_id = test_session.subject_id
    train_frames = {sid: fr for sid, fr in cleaned_by_subject.items() if sid != test_id}
    samples, counts = _training_samples(train_frames, cfg, rng)
    if not samples:
        raise ValueError("train_pipeline: no labeled training windows")

    net_cfg = replace(
        cfg.network,
        attention=cfg.temporal_attention,
        probabilistic=cfg.probabilistic,
        n_input=int(round(cfg.win_s * cfg.fs)),
        seed=cfg.seed,
    )
    net = HrNetwork(net_cfg)
    x_prev = prepare_inputs([p for p, _, _ in samples])
    x_cur = prepare_inputs([c for _, c, _ in samples])
    y = np.array([label for _, _, label in samples])
    history = train_network(net, x_prev, x_cur, y, replace(cfg.train, seed=cfg.seed))
    history["sample_counts"] = counts

    test_frames = cleaned_by_subject[test_id]
    estimates = predict_frames(net, test_frames, cfg.stride_s)
    predictions, groups = [], []
    for frame, est in zip(test_frames, estimates):
        if frame.hr_label is None:
            continue
        predictions.append((est, float(frame.hr_label)))
        groups.append((test_id, frame.activity))
    report = evaluate(predictions, cfg.thr_bpm, cfg.cl, groups=groups,
                      probabilistic=cfg.probabilistic)
    return PipelineResult(
        report=report,
        network=net,
        mix_filters=mix_filters,
        predictions=predictions,
        prediction_groups=groups,
        mix_traces=mix_traces,
        history=history,
        config=cfg,
    )


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return "absent"
    return f"{value:.6f}"


def report_to_rows(report: MetricsReport) -> list[tuple[str, str, str]]:
    """Flatten a report into (metric, scope, value) rows for CSV output."""
    rows = [
        ("mae_bpm", "overall", _fmt(report.mae)),
        ("sd_ae_bpm", "overall", _fmt(report.sd_ae)),
        ("mean_nll", "overall", _fmt(report.mean_nll)),
        ("retention_pct", "overall", _fmt(report.retention_pct)),
        ("tpr", "overall", _fmt(report.tpr)),
        ("f1", "overall", _fmt(report.f1)),
        ("n_total", "overall", str(report.n_total)),
        ("n_kept", "overall", str(report.n_kept)),
        ("no_positives", "overall", str(report.no_positives)),
    ]
    for scope_name, breakdown in (("subject", report.per_subject),
                                  ("activity", report.per_activity)):
        for key in sorted(breakdown):
            stats = breakdown[key]
            rows.append(("mae_bpm", f"{scope_name}:{key}", _fmt(stats["mae"])))
            rows.append(("sd_ae_bpm", f"{scope_name}:{key}", _fmt(stats["sd_ae"])))
            rows.append(("retention_pct", f"{scope_name}:{key}", _fmt(stats["retention_pct"])))
            rows.append(("n", f"{scope_name}:{key}", str(stats["n"])))
    return rows


def format_report_table(reports: dict[str, MetricsReport]) -> str:
    """Human-readable per-subject table: MAE (SD) columns plus retention."""
    subjects = sorted(reports)
    header = ["metric", *subjects, "avg"]
    mae_cells, ret_cells = [], []
    maes, rets = [], []
    for sid in subjects:
        r = reports[sid]
        mae_cells.append("absent" if r.mae is None else f"{r.mae:.2f} ({r.sd_ae:.2f})")
        ret_cells.append(f"{r.retention_pct:.2f}")
        if r.mae is not None:
            maes.append(r.mae)
        rets.append(r.retention_pct)
    mae_avg = f"{np.mean(maes):.2f}" if maes else "absent"
    rows = [
        header,
        ["mae_bpm (sd)", *mae_cells, mae_avg],
        ["retention_pct", *ret_cells, f"{np.mean(rets):.2f}"],
    ]
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in rows]
    return "\n".join(lines)
