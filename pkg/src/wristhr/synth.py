"""Ground-truth synthetic session generator.

Generates PPG as the sum of a harmonic blood-volume pulse, a planted linear
spatio-temporal mix of the acceleration channels, and Gaussian noise.  The
generator stores the exact decomposition so every downstream mechanism can
be validated against known truth.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .dsp import Channel
from .sessions import SessionRecording, write_session

__all__ = [
    "AxisSpec",
    "SynthSpec",
    "SynthResult",
    "gen_session",
    "gen_benchmark_suite",
    "write_synth_session",
    "SCENARIOS",
]

SCENARIOS = ("clean", "ma_offband", "ma_overlap", "ma_erasure", "hr_ramp")


@dataclass(frozen=True)
class AxisSpec:
    """One acceleration axis: a sum of tones plus band-limited-ish white noise."""

    tones: tuple[tuple[float, float], ...] = ()  # (amplitude, freq Hz)
    noise_std: float = 0.0


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one stationary synthetic segment."""

    duration_s: float
    fs: float = 32.0
    hr_nodes: tuple[tuple[float, float], ...] = ((0.0, 75.0),)  # (time s, BPM)
    bvp_amps: tuple[float, float, float] = (1.0, 0.4, 0.2)
    acc_axes: tuple[AxisSpec, AxisSpec, AxisSpec] = (AxisSpec(), AxisSpec(), AxisSpec())
    planted_mix: np.ndarray | None = None  # (3, K_true) taps, or None for no mixing
    noise_std: float = 0.0
    erasure_episodes: tuple[tuple[float, float], ...] = ()
    activity: str = "main"
    subject_id: str = "synth"

    def validate(self) -> None:
        hrs = [h for _, h in self.hr_nodes]
        if not hrs or min(hrs) < 40.0 or max(hrs) >= 300.0:
            raise ValueError("hr trajectory must stay within [40, 300) BPM")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.planted_mix is not None:
            mix = np.asarray(self.planted_mix)
            if mix.ndim != 2 or mix.shape[0] != 3 or mix.shape[1] < 1:
                raise ValueError("planted_mix must have shape (3, K_true) with K_true >= 1")
        if self.duration_s <= 0 or self.fs <= 0:
            raise ValueError("duration_s and fs must be positive")


class SynthResult(NamedTuple):
    recording: SessionRecording
    truth: dict


def _mix_same(acc: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Centered same-length 3->1 convolution of (N, 3) acceleration."""
    k = taps.shape[1]
    pl, pr = (k - 1) // 2, k - 1 - (k - 1) // 2
    out = np.zeros(acc.shape[0])
    for ci in range(3):
        xp = np.pad(acc[:, ci], (pl, pr))
        out += np.convolve(xp, taps[ci][::-1], mode="valid")
    return out


def _hr_at(nodes: np.ndarray, t: np.ndarray) -> np.ndarray:
    return np.interp(t, nodes[:, 0], nodes[:, 1])


def gen_session(spec: SynthSpec, rng: np.random.Generator) -> SynthResult:
    """Generate one session from a spec; deterministic given the rng state."""
    spec.validate()
    fs = spec.fs
    n = int(round(spec.duration_s * fs))
    t = np.arange(n) / fs
    nodes = np.asarray(spec.hr_nodes, dtype=np.float64).reshape(-1, 2)

    hr_inst = _hr_at(nodes, t)
    phase = 2.0 * np.pi * np.cumsum(hr_inst / 60.0) / fs
    gate = np.ones(n)
    for a, b in spec.erasure_episodes:
        gate[(t >= a) & (t < b)] = 0.0
    bvp = np.zeros(n)
    for i, amp in enumerate(spec.bvp_amps, start=1):
        bvp += amp * np.sin(i * phase + rng.uniform(0.0, 2.0 * np.pi))
    bvp *= gate

    acc = np.zeros((n, 3))
    for ci, axis in enumerate(spec.acc_axes):
        for amp, freq in axis.tones:
            acc[:, ci] += amp * np.sin(2.0 * np.pi * freq * t + rng.uniform(0.0, 2.0 * np.pi))
        if axis.noise_std > 0:
            acc[:, ci] += axis.noise_std * rng.standard_normal(n)

    artifact = np.zeros(n)
    if spec.planted_mix is not None:
        artifact = _mix_same(acc, np.asarray(spec.planted_mix, dtype=np.float64))
    noise = spec.noise_std * rng.standard_normal(n) if spec.noise_std > 0 else np.zeros(n)
    ppg = bvp + artifact + noise

    grid = np.arange(0.0, spec.duration_s + 1e-9, 0.5)
    hr_track = np.stack([grid, _hr_at(nodes, grid)], axis=1)
    channels = {
        "ppg": Channel(ppg, fs=fs),
        "acc_x": Channel(acc[:, 0], fs=fs),
        "acc_y": Channel(acc[:, 1], fs=fs),
        "acc_z": Channel(acc[:, 2], fs=fs),
    }
    rec = SessionRecording(
        subject_id=spec.subject_id,
        channels=channels,
        hr_track=hr_track,
        activity_track=[(0.0, spec.duration_s, spec.activity)],
    )
    truth = {
        "fs": fs,
        "bvp": bvp,
        "artifact": artifact,
        "noise": noise,
        "hr": hr_inst,
        "erasure_episodes": list(spec.erasure_episodes),
    }
    return SynthResult(rec, truth)


def _concat_results(subject_id: str, parts: list[SynthResult], gap_rng: np.random.Generator,
                    gap_s: float, gap_spec: SynthSpec) -> SynthResult:
    """Stitch segments (with unlabeled transition gaps) into one recording."""
    fs = parts[0].truth["fs"]
    sigs = {name: [] for name in ("ppg", "acc_x", "acc_y", "acc_z")}
    bvp, artifact, noise = [], [], []
    hr_rows, activities, erasures = [], [], []
    t_cursor = 0.0
    for idx, part in enumerate(parts):
        if idx > 0 and gap_s > 0:
            gap = gen_session(gap_spec, gap_rng)
            for name in sigs:
                sigs[name].append(gap.recording.channels[name].samples)
            bvp.append(gap.truth["bvp"])
            artifact.append(gap.truth["artifact"])
            noise.append(gap.truth["noise"])
            hr = gap.recording.hr_track
            hr_rows.append(np.stack([hr[:, 0] + t_cursor, hr[:, 1]], axis=1))
            t_cursor += gap_spec.duration_s
        rec, truth = part
        for name in sigs:
            sigs[name].append(rec.channels[name].samples)
        bvp.append(truth["bvp"])
        artifact.append(truth["artifact"])
        noise.append(truth["noise"])
        hr = rec.hr_track
        hr_rows.append(np.stack([hr[:, 0] + t_cursor, hr[:, 1]], axis=1))
        a, b, label = rec.activity_track[0]
        activities.append((a + t_cursor, b + t_cursor, label))
        erasures.extend((e0 + t_cursor, e1 + t_cursor) for e0, e1 in truth["erasure_episodes"])
        t_cursor += b - a
    channels = {name: Channel(np.concatenate(chunks), fs=fs) for name, chunks in sigs.items()}
    hr_track = np.concatenate(hr_rows, axis=0)
    keep = np.concatenate([[True], np.diff(hr_track[:, 0]) > 0])
    rec = SessionRecording(
        subject_id=subject_id,
        channels=channels,
        hr_track=hr_track[keep],
        activity_track=activities,
    )
    truth = {
        "fs": fs,
        "bvp": np.concatenate(bvp),
        "artifact": np.concatenate(artifact),
        "noise": np.concatenate(noise),
        "erasure_episodes": erasures,
    }
    return SynthResult(rec, truth)


# Sensor-unit scale of the benchmark signals.  Chosen so that the adaptive
# filter's fixed step size (1e-7) sits well inside its stable, fast-converging
# range on these segments.
_SCALE = 30.0
_BVP_AMPS = (0.5 * _SCALE, 0.2 * _SCALE, 0.1 * _SCALE)
_ACC_REL = (1.0, 0.8, 0.6)  # per-axis relative strength


def _active_axes(rng: np.random.Generator, fm: float) -> tuple[AxisSpec, AxisSpec, AxisSpec]:
    axes = []
    for ci, rel in enumerate(_ACC_REL):
        freq = fm * (2.0 if ci == 1 else 1.0)
        axes.append(
            AxisSpec(
                tones=((0.5 * rel * _SCALE, freq),),
                noise_std=0.5 * rel * _SCALE,
            )
        )
    return tuple(axes)


def _idle_axes() -> tuple[AxisSpec, AxisSpec, AxisSpec]:
    return tuple(AxisSpec(noise_std=0.03 * _SCALE) for _ in range(3))


def _planted_filter(rng: np.random.Generator, fm: float, k_true: int = 7,
                    artifact_rms: float = 40.0) -> np.ndarray:
    """Random unit mixing taps rescaled so the artifact RMS hits the target."""
    taps = rng.normal(0.0, 1.0, (3, k_true))
    taps /= np.sqrt(np.sum(taps**2))
    probe_rng = np.random.default_rng(12345)
    probe = gen_session(
        SynthSpec(
            duration_s=60.0,
            bvp_amps=(0.0, 0.0, 0.0),
            acc_axes=_active_axes(probe_rng, fm),
            planted_mix=taps,
        ),
        probe_rng,
    )
    rms = float(np.std(probe.truth["artifact"]))
    return taps * (artifact_rms / max(rms, 1e-12))


def _wander_nodes(rng: np.random.Generator, duration_s: float, base: float,
                  step_s: float = 20.0, jitter: float = 4.0) -> tuple[tuple[float, float], ...]:
    ts = np.arange(0.0, duration_s + step_s, step_s)
    hrs = base + rng.uniform(-jitter, jitter, len(ts))
    return tuple((float(t), float(h)) for t, h in zip(ts, hrs))


def gen_benchmark_suite(
    seed: int,
    segment_s: float = 120.0,
    gap_s: float = 4.0,
    n_subjects: int = 4,
) -> list[SynthResult]:
    """Fixed scenario catalog: one session per synthetic subject.

    Each session strings together five activity segments — clean BVP,
    dominant off-band motion artifact, motion artifact overlapping the HR,
    artifact plus BVP-erasure episodes, and a 60-to-180 BPM ramp — with
    short unlabeled transition gaps.  Subjects differ in base HR, motion
    cadence, and planted mixing filter.
    """
    base_hrs = (72.0, 88.0, 104.0, 96.0)
    motion_hz = (2.05, 2.25, 1.85, 2.45)
    out: list[SynthResult] = []
    for si in range(n_subjects):
        rng = np.random.default_rng([seed, si])
        subject = f"synth{si + 1:02d}"
        base = base_hrs[si % len(base_hrs)]
        fm = motion_hz[si % len(motion_hz)]
        mix = _planted_filter(rng, fm)
        common = dict(duration_s=segment_s, bvp_amps=_BVP_AMPS, subject_id=subject,
                      noise_std=0.05 * _SCALE)
        parts = [
            gen_session(SynthSpec(activity="clean", acc_axes=_idle_axes(),
                                  hr_nodes=_wander_nodes(rng, segment_s, base), **common), rng),
            gen_session(SynthSpec(activity="ma_offband", acc_axes=_active_axes(rng, fm),
                                  planted_mix=mix,
                                  hr_nodes=_wander_nodes(rng, segment_s, base), **common), rng),
            gen_session(SynthSpec(activity="ma_overlap", acc_axes=_active_axes(rng, base / 60.0),
                                  planted_mix=mix,
                                  hr_nodes=((0.0, base),), **common), rng),
            gen_session(SynthSpec(activity="ma_erasure", acc_axes=_active_axes(rng, fm),
                                  planted_mix=mix * 0.6,
                                  erasure_episodes=((25.0, 55.0), (75.0, 105.0)),
                                  hr_nodes=_wander_nodes(rng, segment_s, base + 6.0), **common), rng),
            gen_session(SynthSpec(activity="hr_ramp", acc_axes=_idle_axes(),
                                  hr_nodes=((0.0, 60.0), (segment_s, 180.0)), **common), rng),
        ]
        gap_spec = SynthSpec(duration_s=gap_s, bvp_amps=_BVP_AMPS, acc_axes=_idle_axes(),
                             hr_nodes=((0.0, base),), noise_std=0.05 * _SCALE,
                             subject_id=subject, activity="transition")
        out.append(_concat_results(subject, parts, rng, gap_s, gap_spec))
    return out


def write_synth_session(result: SynthResult, path: str | Path) -> None:
    """Write the standard container plus truth payloads under ``truth/``."""
    out = Path(path)
    write_session(result.recording, out)
    truth_dir = out / "truth"
    truth_dir.mkdir(exist_ok=True)
    np.asarray(result.truth["bvp"], dtype="<f4").tofile(truth_dir / "bvp.f32")
    np.asarray(result.truth["artifact"], dtype="<f4").tofile(truth_dir / "artifact.f32")
