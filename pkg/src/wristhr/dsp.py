"""Deterministic DSP primitives shared by the whole pipeline.

Everything here is a pure function of its inputs: discrete Fourier transforms,
windowed-sinc band-stop design, zero-phase FIR application, polyphase
resampling, and sub-bin spectral peak localisation in BPM.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import signal as sps

__all__ = [
    "Channel",
    "Spectrum",
    "FirFilter",
    "NoDominantPeakError",
    "dft_forward",
    "dft_inverse",
    "design_bandstop",
    "apply_fir",
    "resample",
    "dominant_frequency_bpm",
]


class NoDominantPeakError(ValueError):
    """Raised when a spectrum has no usable peak inside the requested band."""


@dataclass(frozen=True)
class Channel:
    """Uniformly sampled sensor channel.

    samples are in raw sensor units; ``fs`` is the sampling rate in Hz and
    ``t0`` the absolute time of the first sample in seconds.
    """

    samples: np.ndarray
    fs: float
    t0: float = 0.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        object.__setattr__(self, "samples", samples)
        if self.fs <= 0:
            raise ValueError(f"fs must be positive, got {self.fs}")
        if samples.ndim != 1:
            raise ValueError("channel samples must be one-dimensional")
        if not np.all(np.isfinite(samples)):
            raise ValueError("channel samples must be finite")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.fs

    @property
    def t_end(self) -> float:
        return self.t0 + self.duration

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self.samples)) / self.fs


@dataclass(frozen=True)
class Spectrum:
    """Complex DFT bins with their bin width.

    ``bins`` holds the full n-point spectrum; ``df = fs / n``.
    """

    bins: np.ndarray
    df: float
    n: int


@dataclass(frozen=True)
class FirFilter:
    """Linear-phase FIR filter taps plus the descriptor they were designed from."""

    taps: np.ndarray
    design: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "taps", np.asarray(self.taps, dtype=np.float64))

    @property
    def group_delay(self) -> int:
        return (len(self.taps) - 1) // 2


def dft_forward(x: np.ndarray, fs: float = 1.0) -> Spectrum:
    """Full n-point DFT of a real or complex sequence.

    bins[k] = sum_t x[t] * exp(-2j*pi*k*t/n).  Arbitrary lengths are
    supported (FFT for any n via the underlying implementation).
    """
    x = np.asarray(x)
    if x.size == 0:
        raise ValueError("dft_forward: empty input")
    n = len(x)
    return Spectrum(bins=np.fft.fft(x), df=fs / n, n=n)


def dft_inverse(spec: Spectrum) -> np.ndarray:
    """Inverse of :func:`dft_forward`; returns a complex sequence."""
    if len(spec.bins) != spec.n:
        raise ValueError("spectrum bins/n mismatch: expected full spectrum")
    return np.fft.ifft(spec.bins)


# Kaiser shape for ~23 dB stop-band attenuation: keeps the transition narrow
# enough that a notch can reach -20 dB while a tone 0.5*f0 away stays within
# 3 dB.  The widening scales with the transition width fs/taps.
_KAISER_BETA = 0.8
_EDGE_WIDEN_FACTOR = 0.56


def design_bandstop(fs: float, f_lo: float, f_hi: float, taps: int) -> FirFilter:
    """Design a linear-phase FIR band-stop (notch) filter.

    The stop band [f_lo, f_hi] in Hz must lie inside (0, fs/2).  ``taps``
    must be odd (symmetric, type-I linear phase).  The designed stop edges
    are widened beyond [f_lo, f_hi] so that the response at the band
    centre reaches at least -20 dB even for bands much narrower than the
    achievable transition width.
    """
    if taps % 2 == 0 or taps < 3:
        raise ValueError(f"taps must be odd and >= 3, got {taps}")
    if not (0.0 < f_lo < f_hi < fs / 2):
        raise ValueError(
            f"band [{f_lo}, {f_hi}] Hz must lie strictly inside (0, {fs / 2}) Hz"
        )
    # Kaiser transition width for ~22.5 dB stop attenuation at this length
    transition = (22.5 - 7.95) / 14.36 * fs / taps
    widen = _EDGE_WIDEN_FACTOR * fs / taps
    lo = max(0.5 * f_lo, f_lo - widen)
    hi = min(0.5 * (f_hi + fs / 2), f_hi + widen)
    h = sps.firwin(
        taps,
        [lo, hi],
        window=("kaiser", _KAISER_BETA),
        pass_zero="bandstop",
        fs=fs,
        scale=True,
    )
    design = {
        "kind": "bandstop",
        "fs": fs,
        "f_lo": f_lo,
        "f_hi": f_hi,
        "taps": taps,
        "transition_hz": transition,
        "designed_edges": (lo, hi),
    }
    return FirFilter(taps=h, design=design)


def apply_fir(x: Channel, f: FirFilter) -> Channel:
    """Filter a channel, compensating the (taps-1)/2 group delay.

    The output has the same length and timestamps as the input; edges are
    implicitly zero-padded, so the first and last ``group_delay`` samples
    carry the filter's startup taper.
    """
    n = len(x.samples)
    taps = f.taps
    if n <= len(taps):
        raise ValueError(f"signal length {n} must exceed filter length {len(taps)}")
    full = np.convolve(x.samples, taps, mode="full")
    d = f.group_delay
    y = full[d : d + n]
    return Channel(samples=y, fs=x.fs, t0=x.t0)


_RESAMPLE_WINDOW = ("kaiser", 8.0)


def resample(x: Channel, fs_out: float) -> Channel:
    """Polyphase resampling to ``fs_out``; duration preserved within one sample."""
    if fs_out <= 0:
        raise ValueError(f"fs_out must be positive, got {fs_out}")
    if fs_out == x.fs:
        return Channel(samples=x.samples.copy(), fs=x.fs, t0=x.t0)
    frac = Fraction(fs_out / x.fs).limit_denominator(10_000)
    up, down = frac.numerator, frac.denominator
    # longer-than-default anti-alias/anti-image filter; scipy scales it by up
    half = 32 * max(up, down)
    h = sps.firwin(2 * half + 1, 1.0 / max(up, down), window=_RESAMPLE_WINDOW)
    # odd-reflect padding (slope-continuous) keeps the filter's startup
    # transient out of the result; pad is a multiple of down so the trim
    # lands exactly on output samples
    pad = min(len(x.samples) - 1, -(-(2 * half) // down) * down)
    padded = np.pad(x.samples, pad, mode="reflect", reflect_type="odd")
    y = sps.resample_poly(padded, up, down, window=h)
    trim = pad * up // down
    y = y[trim : len(y) - trim]
    n_out = int(round(len(x.samples) * fs_out / x.fs))
    if len(y) > n_out:
        y = y[:n_out]
    elif len(y) < n_out:
        y = np.pad(y, (0, n_out - len(y)), mode="edge")
    return Channel(samples=y, fs=fs_out, t0=x.t0)


def dominant_frequency_bpm(
    x: np.ndarray,
    fs: float,
    band_bpm: tuple[float, float] = (40.0, 300.0),
    pad_factor: int = 4,
) -> float:
    """Frequency (in BPM) of the largest magnitude bin inside ``band_bpm``.

    The spectrum is zero-padded by ``pad_factor`` (>= 4) for sub-bin peak
    localisation.  Raises :class:`NoDominantPeakError` when the band holds
    no energy (e.g. an all-zero signal).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("dominant_frequency_bpm: empty input")
    lo_bpm, hi_bpm = band_bpm
    if not (0.0 < lo_bpm < hi_bpm) or hi_bpm / 60.0 >= fs / 2:
        raise ValueError(f"band {band_bpm} BPM must lie inside (0, {fs * 30}) BPM")
    pad_factor = max(4, int(pad_factor))
    n_fft = pad_factor * len(x)
    mag = np.abs(np.fft.rfft(x - x.mean(), n_fft))
    freqs = np.fft.rfftfreq(n_fft, 1.0 / fs)
    in_band = (freqs >= lo_bpm / 60.0) & (freqs <= hi_bpm / 60.0)
    if not np.any(in_band):
        raise NoDominantPeakError(f"band {band_bpm} BPM holds no spectral bins")
    band_mag = mag[in_band]
    peak = float(np.max(band_mag))
    if peak <= 0.0 or not np.isfinite(peak):
        raise NoDominantPeakError("no dominant peak: band is empty of signal energy")
    f_star = freqs[in_band][int(np.argmax(band_mag))]
    return 60.0 * float(f_star)
