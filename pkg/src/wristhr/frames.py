"""Fixed-length analysis windows cut from a session.

A :class:`SampleFrame` is the unit of all inference: an 8-second PPG vector
plus the time-aligned 3-axis acceleration matrix, resampled to a common
analysis rate, with the ground-truth HR interpolated at the window end.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dsp import Channel, resample
from .sessions import ACC_CHANNELS, SessionRecording

__all__ = ["SampleFrame", "window_stream", "zscore", "ANALYSIS_FS"]

# Common analysis rate: matches the accelerometer rate of the wrist datasets
# and keeps 8-second windows at N = 256 samples.
ANALYSIS_FS = 32.0


@dataclass
class SampleFrame:
    """One analysis window.

    ``ppg`` has N = win_s * fs samples; ``acc`` is (N, 3).  ``hr_label`` is
    the ground-truth HR at the window end when a track is available.
    ``ppg_context`` optionally holds 2N samples starting at t_start (the
    window plus its continuation) for time-compression augmentation.
    """

    ppg: np.ndarray
    acc: np.ndarray
    fs: float
    t_start: float
    hr_label: float | None = None
    activity: str | None = None
    subject_id: str | None = None
    ppg_context: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.ppg)

    @property
    def t_end(self) -> float:
        return self.t_start + self.n / self.fs

    def with_ppg(self, ppg: np.ndarray) -> "SampleFrame":
        return replace(self, ppg=np.asarray(ppg, dtype=np.float64))


def zscore(x: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Per-window standard score; model inputs are normalized this way."""
    x = np.asarray(x, dtype=np.float64)
    return (x - x.mean(axis=0)) / (x.std(axis=0) + eps)


def _grid_values(ch: Channel, fs: float, t_grid0: float, n: int) -> np.ndarray:
    """Channel samples on the common grid t_grid0 + k/fs, k = 0..n-1."""
    res = resample(ch, fs) if ch.fs != fs else ch
    offset = (t_grid0 - res.t0) * fs
    k = int(round(offset))
    if abs(offset - k) < 1e-9 and 0 <= k and k + n <= len(res.samples):
        return res.samples[k : k + n]
    grid = t_grid0 + np.arange(n) / fs
    return np.interp(grid, res.times(), res.samples)


def window_stream(
    s: SessionRecording,
    win_s: float = 8.0,
    stride_s: float = 2.0,
    fs: float = ANALYSIS_FS,
) -> list[SampleFrame]:
    """Cut a session into overlapping windows on a common sampling grid.

    Frame i starts at t0 + i * stride_s where t0 is the latest channel
    start; frames that would run past the earliest channel end are
    omitted.  A session shorter than one window yields an empty list.
    """
    if win_s <= 0 or stride_s <= 0:
        raise ValueError("win_s and stride_s must be positive")
    names = ["ppg", *ACC_CHANNELS]
    t0 = max(s.channels[name].t0 for name in names)
    t_end = min(s.channels[name].t_end for name in names)
    if t_end - t0 < win_s:
        return []
    n_frames = int(np.floor((t_end - t0 - win_s) / stride_s)) + 1
    n = int(round(win_s * fs))
    total = int(np.floor((t_end - t0) * fs))

    ppg_all = _grid_values(s.channels["ppg"], fs, t0, total)
    acc_all = np.stack(
        [_grid_values(s.channels[a], fs, t0, total) for a in ACC_CHANNELS], axis=1
    )

    hr = s.hr_track
    frames: list[SampleFrame] = []
    step = stride_s * fs
    for i in range(n_frames):
        k = int(round(i * step))
        if k + n > total:
            break
        t_start = t0 + k / fs
        label = None
        if hr.size:
            label = float(np.interp(t_start + win_s, hr[:, 0], hr[:, 1]))
        context = None
        if k + 2 * n <= total:
            context = ppg_all[k : k + 2 * n].copy()
        frames.append(
            SampleFrame(
                ppg=ppg_all[k : k + n].copy(),
                acc=acc_all[k : k + n].copy(),
                fs=fs,
                t_start=t_start,
                hr_label=label,
                activity=s.activity_at(t_start, t_start + win_s),
                subject_id=s.subject_id,
                ppg_context=context,
            )
        )
    return frames
