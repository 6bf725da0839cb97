"""Adaptive linear motion-artifact separation.

A bias-free two-layer 1-D convolutional filter maps the 3-axis acceleration
to a motion-artifact estimate.  It is trained unsupervised, per stationary
(subject, activity) context, by gradient descent on the distance between the
half-spectra of the predicted artifact and the observed PPG; the estimate is
then subtracted from the PPG to leave the blood-volume pulse.
"""
from __future__ import annotations

from dataclasses import dataclass, replace as dc_replace
from pathlib import Path

import numpy as np

from .frames import SampleFrame

__all__ = [
    "MixFilterModel",
    "AdaptHyperParams",
    "DivergenceError",
    "predict_artifact",
    "adapt_loss",
    "train_mix_filter",
    "remove_artifacts",
    "save_mix_filter",
    "load_mix_filter",
]


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class MixFilterModel:
    """Weights of the bias-free two-layer artifact filter.

    layer1: (3, 3, K1) out-channel x in-channel x tap spatio-temporal kernels.
    layer2: (1, 3, K2) channel-merging kernel.  No bias anywhere, so zero
    acceleration always maps to a zero artifact estimate.
    """

    layer1: np.ndarray
    layer2: np.ndarray
    loss_mode: str = "MSE_freq"
    seed: int = 0

    def __post_init__(self):
        self.layer1 = np.asarray(self.layer1, dtype=np.float64)
        self.layer2 = np.asarray(self.layer2, dtype=np.float64)
        if self.layer1.shape[:2] != (3, 3) or self.layer2.shape[:2] != (1, 3):
            raise ValueError("layer1 must be (3,3,K1), layer2 (1,3,K2)")
        if self.layer1.shape[2] % 2 == 0 or self.layer2.shape[2] % 2 == 0:
            raise ValueError("kernel lengths must be odd")

    @property
    def k1(self) -> int:
        return self.layer1.shape[2]

    @property
    def k2(self) -> int:
        return self.layer2.shape[2]


@dataclass(frozen=True)
class AdaptHyperParams:
    lr: float = 1e-7
    momentum: float = 1e-2
    epochs: int = 500
    loss_mode: str = "MSE_freq"
    rel_tol: float = 1e-6  # early stop when the relative loss change drops below this

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")
        if self.loss_mode not in ("MSE_freq", "MAE_freq"):
            raise ValueError(f"unknown loss_mode {self.loss_mode!r}")


def new_mix_filter(k1: int = 21, k2: int = 1, seed: int = 0,
                   loss_mode: str = "MSE_freq") -> MixFilterModel:
    """Fresh model with small-normal kernels (early predictions near zero)."""
    rng = np.random.default_rng(seed)
    return MixFilterModel(
        layer1=rng.normal(0.0, 1e-3, (3, 3, k1)),
        layer2=rng.normal(0.0, 1e-3, (1, 3, k2)),
        loss_mode=loss_mode,
        seed=seed,
    )


def _conv_same(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Centered same-length cross-correlation with zero padding (odd k)."""
    p = (len(k) - 1) // 2
    return np.convolve(np.pad(x, (p, p)), k[::-1], mode="valid")


def _hidden(m: MixFilterModel, acc: np.ndarray) -> np.ndarray:
    h = np.zeros_like(acc)
    for co in range(3):
        for ci in range(3):
            h[:, co] += _conv_same(acc[:, ci], m.layer1[co, ci])
    return h


def predict_artifact(m: MixFilterModel, acc: np.ndarray) -> np.ndarray:
    """Artifact estimate for an (N, 3) acceleration matrix; exactly linear."""
    acc = np.asarray(acc, dtype=np.float64)
    if acc.ndim != 2 or acc.shape[1] != 3:
        raise ValueError(f"acc must be (N, 3), got {acc.shape}")
    if acc.shape[0] < m.k1 + m.k2:
        raise ValueError(f"need at least K1+K2={m.k1 + m.k2} samples, got {acc.shape[0]}")
    h = _hidden(m, acc)
    out = np.zeros(acc.shape[0])
    for ci in range(3):
        out += _conv_same(h[:, ci], m.layer2[0, ci])
    return out


def _freq_residual(pred: np.ndarray, ppg: np.ndarray) -> np.ndarray:
    return np.fft.rfft(pred - ppg)


def adapt_loss(m: MixFilterModel, acc: np.ndarray, ppg: np.ndarray,
               mode: str | None = None) -> float:
    """Half-spectrum distance between the artifact estimate and the PPG.

    MSE_freq: mean squared modulus of the complex bin difference;
    MAE_freq: mean modulus.
    """
    ppg = np.asarray(ppg, dtype=np.float64)
    if len(ppg) != np.asarray(acc).shape[0]:
        raise ValueError("acc and ppg must have the same length")
    mode = mode or m.loss_mode
    e = _freq_residual(predict_artifact(m, acc), ppg)
    if mode == "MSE_freq":
        return float(np.mean(np.abs(e) ** 2))
    if mode == "MAE_freq":
        return float(np.mean(np.abs(e)))
    raise ValueError(f"unknown loss mode {mode!r}")


def _loss_and_grads(m: MixFilterModel, acc: np.ndarray, ppg: np.ndarray, mode: str):
    n = len(ppg)
    h = _hidden(m, acc)
    pred = np.zeros(n)
    for ci in range(3):
        pred += _conv_same(h[:, ci], m.layer2[0, ci])
    e = np.fft.rfft(pred - ppg)
    b = len(e)
    if mode == "MSE_freq":
        loss = float(np.mean(np.abs(e) ** 2))
        de = 2.0 * e / b
    else:
        mag = np.abs(e)
        loss = float(np.mean(mag))
        de = np.where(mag > 0, e / np.maximum(mag, 1e-300), 0.0) / b
    # adjoint of the half-spectrum DFT: dL/dr[t] = Re sum_k de[k] exp(+2i pi k t / n)
    pad = np.zeros(n, dtype=complex)
    pad[:b] = de
    dr = np.real(np.fft.ifft(pad)) * n

    k2h = (m.k2 - 1) // 2
    g2 = np.zeros_like(m.layer2)
    dh = np.zeros_like(h)
    for ci in range(3):
        xp = np.pad(h[:, ci], (k2h, k2h))
        g2[0, ci] = np.correlate(xp, dr, mode="valid")
        dh[:, ci] = _conv_same(dr, m.layer2[0, ci][::-1])
    k1h = (m.k1 - 1) // 2
    g1 = np.zeros_like(m.layer1)
    for co in range(3):
        for ci in range(3):
            xp = np.pad(acc[:, ci], (k1h, k1h))
            g1[co, ci] = np.correlate(xp, dh[:, co], mode="valid")
    return loss, g1, g2


def train_mix_filter(
    segments: list[tuple[np.ndarray, np.ndarray]],
    hp: AdaptHyperParams = AdaptHyperParams(),
    init_seed: int = 0,
    k1: int = 21,
    k2: int = 1,
) -> tuple[MixFilterModel, list[float]]:
    """SGD with momentum on the adaptive loss over (acc, ppg) segment pairs.

    One full-segment gradient step per segment per epoch; deterministic for
    a fixed seed and segment order.  Returns the model and the per-epoch
    loss trace (mean over segments).
    """
    if not segments:
        raise ValueError("train_mix_filter: need at least one segment")
    segs = []
    for acc, ppg in segments:
        acc = np.asarray(acc, dtype=np.float64)
        ppg = np.asarray(ppg, dtype=np.float64)
        if acc.shape[0] != len(ppg):
            raise ValueError("segment acc/ppg length mismatch")
        segs.append((acc, ppg))
    m = new_mix_filter(k1=k1, k2=k2, seed=init_seed, loss_mode=hp.loss_mode)
    v1 = np.zeros_like(m.layer1)
    v2 = np.zeros_like(m.layer2)
    trace: list[float] = []
    for epoch in range(hp.epochs):
        total = 0.0
        for acc, ppg in segs:
            loss, g1, g2 = _loss_and_grads(m, acc, ppg, hp.loss_mode)
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite adaptive loss at epoch {epoch} (lr={hp.lr:g}); "
                    "reduce lr or the signal scale"
                )
            v1 = hp.momentum * v1 - hp.lr * g1
            v2 = hp.momentum * v2 - hp.lr * g2
            m.layer1 = m.layer1 + v1
            m.layer2 = m.layer2 + v2
            total += loss
        trace.append(total / len(segs))
        if epoch >= 1 and abs(trace[-2] - trace[-1]) < hp.rel_tol * max(trace[-2], 1e-300):
            break
    return m, trace


def remove_artifacts(m: MixFilterModel, frame: SampleFrame) -> SampleFrame:
    """Subtract the predicted artifact from the frame's PPG.

    ACC channels, timestamps and labels pass through unchanged.
    """
    cleaned = frame.ppg - predict_artifact(m, frame.acc)
    out = dc_replace(frame, ppg=cleaned)
    if frame.ppg_context is not None and len(frame.ppg_context) == 2 * frame.n:
        # context cleaning only covers the first half (the window itself);
        # the continuation keeps its raw value and is cleaned by the next frame
        out.ppg_context = frame.ppg_context.copy()
        out.ppg_context[: frame.n] = cleaned
    return out


def save_mix_filter(m: MixFilterModel, path: str | Path) -> None:
    """Text header plus raw f32le weight payloads, one file per layer."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    header = [
        f"k1 = {m.k1}",
        f"k2 = {m.k2}",
        f"seed = {m.seed}",
        f"loss_mode = {m.loss_mode}",
    ]
    (out / "header.txt").write_text("\n".join(header) + "\n")
    np.asarray(m.layer1, dtype="<f4").tofile(out / "layer1.f32")
    np.asarray(m.layer2, dtype="<f4").tofile(out / "layer2.f32")


def load_mix_filter(path: str | Path) -> MixFilterModel:
    root = Path(path)
    fields: dict[str, str] = {}
    for line in (root / "header.txt").read_text().splitlines():
        if "=" in line:
            k, _, v = line.partition("=")
            fields[k.strip()] = v.strip()
    k1, k2 = int(fields["k1"]), int(fields["k2"])
    layer1 = np.fromfile(root / "layer1.f32", dtype="<f4").astype(np.float64).reshape(3, 3, k1)
    layer2 = np.fromfile(root / "layer2.f32", dtype="<f4").astype(np.float64).reshape(1, 3, k2)
    return MixFilterModel(layer1=layer1, layer2=layer2,
                          loss_mode=fields.get("loss_mode", "MSE_freq"),
                          seed=int(fields.get("seed", "0")))
