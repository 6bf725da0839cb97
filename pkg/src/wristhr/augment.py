"""Knowledge-guided training-set construction.

Two augmentations extend the original labeled windows:

* adversarial examples — the PPG is sequentially band-stop filtered at the
  HR fundamental and its second and third multiples (81-tap notches, +/-2.5
  BPM) and paired with a random Uniform(40, 300) label, teaching the model
  to emit high uncertainty when no pulse content remains;
* high-HR examples — clean windows are time-compressed by two, doubling
  the dominant frequency and the label, extending coverage toward the
  physiological ceiling (samples reaching 300 BPM are discarded).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .dsp import (
    Channel,
    FirFilter,
    NoDominantPeakError,
    apply_fir,
    design_bandstop,
    dominant_frequency_bpm,
)
from .frames import SampleFrame

__all__ = [
    "LabeledFrame",
    "make_adversarial_example",
    "build_adversarial_subset",
    "is_clean_frame",
    "make_high_hr_sample",
    "merge_training_sets",
    "bvp_notch_filters",
]

NOTCH_TAPS = 81
NOTCH_HALF_WIDTH_BPM = 2.5
LABEL_LOW = 40.0
LABEL_HIGH = 300.0


@dataclass
class LabeledFrame:
    """A sample frame with its training label and provenance tag."""

    frame: SampleFrame
    hr_label: float
    provenance: str = "original"  # original | adversarial | high_hr

    def __post_init__(self):
        if not (LABEL_LOW <= self.hr_label < LABEL_HIGH):
            raise ValueError(f"hr_label {self.hr_label} outside [{LABEL_LOW}, {LABEL_HIGH})")
        if self.provenance not in ("original", "adversarial", "high_hr"):
            raise ValueError(f"unknown provenance {self.provenance!r}")


def bvp_notch_filters(hr_bpm: float, fs: float, taps: int = NOTCH_TAPS):
    """Band-stop filters at hr, 2*hr, 3*hr (+/- 2.5 BPM), skipping bands
    at or above Nyquist; low edges touching DC are clamped to 0.1 Hz."""
    filters = []
    for i in (1, 2, 3):
        lo = (i * hr_bpm - NOTCH_HALF_WIDTH_BPM) / 60.0
        hi = (i * hr_bpm + NOTCH_HALF_WIDTH_BPM) / 60.0
        if lo >= fs / 2 or hi >= fs / 2:
            continue
        if lo <= 0.0:
            warnings.warn(
                f"notch {i}*{hr_bpm:.1f} BPM touches DC; clamping low edge to 0.1 Hz",
                stacklevel=2,
            )
            lo = 0.1
            if hi <= lo:
                continue
        filters.append(design_bandstop(fs, lo, hi, taps))
    return filters


def _notch_ppg(ppg: np.ndarray, fs: float, hr_bpm: float) -> np.ndarray:
    ch = Channel(ppg, fs=fs)
    for f in bvp_notch_filters(hr_bpm, fs):
        ch = apply_fir(ch, f)
    return ch.samples


def make_adversarial_example(lf: LabeledFrame, rng: np.random.Generator) -> LabeledFrame:
    """Erase the pulse content of an original frame and relabel it randomly."""
    if lf.provenance != "original":
        raise ValueError("adversarial examples are built from original frames only")
    frame = lf.frame
    new_ppg = _notch_ppg(frame.ppg, frame.fs, lf.hr_label)
    new_frame = frame.with_ppg(new_ppg)
    new_frame.ppg_context = None
    label = float(rng.uniform(LABEL_LOW, LABEL_HIGH))
    if label >= LABEL_HIGH:  # guard against closed upper edge
        label = np.nextafter(LABEL_HIGH, 0.0)
    return LabeledFrame(frame=new_frame, hr_label=label, provenance="adversarial")


def build_adversarial_subset(
    ds: list[LabeledFrame],
    fraction: float = 0.5,
    rng: np.random.Generator | None = None,
) -> list[LabeledFrame]:
    """One adversarial example per original frame, then a random fraction kept."""
    if not ds:
        raise ValueError("build_adversarial_subset: empty dataset")
    rng = rng if rng is not None else np.random.default_rng(0)
    pool = [make_adversarial_example(lf, rng) for lf in ds if lf.provenance == "original"]
    n_keep = int(round(fraction * len(pool)))
    if n_keep <= 0:
        return []
    keep = rng.permutation(len(pool))[:n_keep]
    return [pool[i] for i in sorted(keep)]


def is_clean_frame(lf: LabeledFrame, tol_bpm: float = 5.0) -> bool:
    """True when the PPG's dominant frequency sits near the ground-truth HR."""
    try:
        peak = dominant_frequency_bpm(lf.frame.ppg, lf.frame.fs)
    except NoDominantPeakError:
        return False
    return abs(peak - lf.hr_label) <= tol_bpm


def _decimate2(x: np.ndarray, fs: float) -> np.ndarray:
    """Keep every second sample after an anti-alias low-pass at 0.45*(fs/2)."""
    taps = sps.firwin(NOTCH_TAPS, 0.45 * fs / 2.0, fs=fs)
    lp = FirFilter(taps=taps, design={"kind": "lowpass", "fs": fs})
    return apply_fir(Channel(x, fs=fs), lp).samples[::2]


def make_high_hr_sample(lf: LabeledFrame) -> LabeledFrame | None:
    """Time-compress a clean frame by two; None when the label would reach 300.

    Prefers a 16 s source context (the window plus its continuation); falls
    back to decimating the 8 s window and tiling it twice.
    """
    new_label = 2.0 * lf.hr_label
    if new_label >= LABEL_HIGH:
        return None
    frame = lf.frame
    n = frame.n
    if frame.ppg_context is not None and len(frame.ppg_context) == 2 * n:
        sped = _decimate2(frame.ppg_context, frame.fs)[:n]
    else:
        half = _decimate2(frame.ppg, frame.fs)[: n // 2]
        sped = np.concatenate([half, half])[:n]
    new_frame = frame.with_ppg(sped)
    new_frame.ppg_context = None
    return LabeledFrame(frame=new_frame, hr_label=new_label, provenance="high_hr")


def merge_training_sets(
    original: list[LabeledFrame],
    high_hr: list[LabeledFrame],
    adversarial: list[LabeledFrame],
    rng: np.random.Generator | None = None,
) -> list[LabeledFrame]:
    """Concatenate and shuffle; per-provenance counts are preserved."""
    rng = rng if rng is not None else np.random.default_rng(0)
    merged = list(original) + list(high_hr) + list(adversarial)
    order = rng.permutation(len(merged))
    return [merged[i] for i in order]
