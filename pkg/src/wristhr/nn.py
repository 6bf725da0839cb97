"""Minimal neural toolkit for the HR estimator.

1-D convolution blocks, multi-head temporal attention with a residual
connection, the two-unit Gaussian output head, the Gaussian negative
log-likelihood, and SGD/Adam update rules.  Forward passes return explicit
caches; backward passes consume them and return exact reverse-mode
gradients, which the tests pin against central finite differences.

Everything is float64 numpy; layers are deliberately shape-strict.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "HrEstimate",
    "Conv1d",
    "AvgPoolTo",
    "TemporalAttention",
    "Dense",
    "softplus",
    "gaussian_head",
    "gaussian_nll",
    "nll_arrays",
    "nll_grad_arrays",
    "AdamState",
    "adam_step",
    "SIGMA_FLOOR",
]

SIGMA_FLOOR = 1e-3


@dataclass(frozen=True)
class HrEstimate:
    """Gaussian heart-rate estimate for one window, in BPM."""

    mu_hr: float
    sigma_hr: float
    frame_time: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.mu_hr):
            raise ValueError("mu_hr must be finite")
        if not (self.sigma_hr > 0):
            raise ValueError("sigma_hr must be positive")


def softplus(x):
    return np.logaddexp(0.0, x)


def gaussian_head(features: np.ndarray, frame_time: float = 0.0) -> HrEstimate:
    """Map the two raw head outputs (raw_mu, raw_sigma) to an estimate.

    sigma = softplus(raw_sigma) + floor keeps the scale strictly positive
    and smooth everywhere.
    """
    f = np.asarray(features, dtype=np.float64).reshape(-1)
    if f.size != 2:
        raise ValueError(f"gaussian_head expects 2 raw outputs, got {f.size}")
    return HrEstimate(
        mu_hr=float(f[0]),
        sigma_hr=float(softplus(f[1]) + SIGMA_FLOOR),
        frame_time=frame_time,
    )


def gaussian_nll(est: HrEstimate, y: float) -> float:
    """Negative log-likelihood of y under N(mu, sigma^2), in nats."""
    return float(
        0.5 * np.log(2.0 * np.pi * est.sigma_hr**2)
        + (y - est.mu_hr) ** 2 / (2.0 * est.sigma_hr**2)
    )


def nll_arrays(mu: np.ndarray, sigma: np.ndarray, y: np.ndarray) -> np.ndarray:
    return 0.5 * np.log(2.0 * np.pi * sigma**2) + (y - mu) ** 2 / (2.0 * sigma**2)


def nll_grad_arrays(mu, sigma, y):
    """d nll / d mu and d nll / d sigma, elementwise."""
    dmu = (mu - y) / sigma**2
    dsigma = 1.0 / sigma - (y - mu) ** 2 / sigma**3
    return dmu, dsigma


def _he(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)


class Conv1d:
    """Strided 1-D cross-correlation + bias + optional ReLU, valid padding."""

    def __init__(self, rng, c_in: int, c_out: int, kernel: int, stride: int, relu: bool = True):
        self.w = _he(rng, (c_out, c_in, kernel), c_in * kernel)
        self.b = np.zeros(c_out)
        self.stride = stride
        self.relu = relu

    def out_len(self, n: int) -> int:
        return (n - self.w.shape[2]) // self.stride + 1

    def forward(self, x: np.ndarray):
        # x: (B, C_in, N)
        if x.ndim != 3 or x.shape[1] != self.w.shape[1]:
            raise ValueError(f"conv input shape {x.shape} does not match {self.w.shape}")
        k, s = self.w.shape[2], self.stride
        n_out = self.out_len(x.shape[2])
        if n_out < 1:
            raise ValueError("conv input shorter than kernel")
        idx = np.arange(n_out)[:, None] * s + np.arange(k)[None, :]
        cols = x[:, :, idx]  # (B, C_in, n_out, k)
        pre = np.einsum("bcnk,ock->bon", cols, self.w, optimize=True) + self.b[None, :, None]
        y = np.maximum(pre, 0.0) if self.relu else pre
        return y, (cols, pre, x.shape)

    def backward(self, cache, gy: np.ndarray):
        cols, pre, x_shape = cache
        if self.relu:
            gy = gy * (pre > 0)
        gb = gy.sum(axis=(0, 2))
        gw = np.einsum("bon,bcnk->ock", gy, cols, optimize=True)
        gcols = np.einsum("bon,ock->bcnk", gy, self.w, optimize=True)
        k, s = self.w.shape[2], self.stride
        n_out = gcols.shape[2]
        gx = np.zeros(x_shape)
        for j in range(k):
            gx[:, :, j : j + n_out * s : s] += gcols[:, :, :, j]
        return gx, {"w": gw, "b": gb}

    def params(self):
        return {"w": self.w, "b": self.b}


class AvgPoolTo:
    """Average-pool the time axis down to a fixed number of steps."""

    def __init__(self, t_out: int):
        self.t_out = t_out

    def forward(self, x: np.ndarray):
        b, c, n = x.shape
        crop = (n // self.t_out) * self.t_out
        if crop < self.t_out:
            raise ValueError(f"cannot pool {n} steps down to {self.t_out}")
        win = crop // self.t_out
        y = x[:, :, :crop].reshape(b, c, self.t_out, win).mean(axis=3)
        return y, (x.shape, crop, win)

    def backward(self, cache, gy: np.ndarray):
        x_shape, crop, win = cache
        g = np.repeat(gy[:, :, :, None] / win, win, axis=3).reshape(gy.shape[0], gy.shape[1], crop)
        gx = np.zeros(x_shape)
        gx[:, :, :crop] = g
        return gx, {}

    def params(self):
        return {}


class TemporalAttention:
    """Attention of the current window's embedding over the previous one.

    Queries come from E_cur, keys and values from E_prev; per-head scaled
    dot-product attention with a residual connection (out = E_cur + A).
    ``projections="on"`` uses learned Q/K/V/O matrices with per-head scaling
    sqrt(d/H); ``projections="off"`` applies the literal single-head form
    softmax(E_cur E_prev^T / sqrt(d)) E_prev with no parameters.
    """

    def __init__(self, rng, d: int, heads: int = 2, projections: str = "on"):
        if projections not in ("on", "off"):
            raise ValueError("projections must be 'on' or 'off'")
        if projections == "off":
            heads = 1
        if d % heads != 0:
            raise ValueError(f"embedding dim {d} not divisible by {heads} heads")
        self.d, self.heads, self.projections = d, heads, projections
        if projections == "on":
            sc = 1.0 / np.sqrt(d)
            self.wq = rng.normal(0.0, sc, (d, d))
            self.wk = rng.normal(0.0, sc, (d, d))
            self.wv = rng.normal(0.0, sc, (d, d))
            self.wo = rng.normal(0.0, sc, (d, d))

    def _split(self, x):
        b, t, d = x.shape
        return x.reshape(b, t, self.heads, d // self.heads).transpose(0, 2, 1, 3)

    def forward(self, e_cur: np.ndarray, e_prev: np.ndarray):
        if e_cur.shape != e_prev.shape:
            raise ValueError("e_cur and e_prev must have matching shapes")
        b, t, d = e_cur.shape
        if d != self.d:
            raise ValueError(f"embedding dim {d} != configured {self.d}")
        if self.projections == "on":
            q = self._split(e_cur @ self.wq)
            k = self._split(e_prev @ self.wk)
            v = self._split(e_prev @ self.wv)
            scale = 1.0 / np.sqrt(d // self.heads)
        else:
            q = self._split(e_cur)
            k = self._split(e_prev)
            v = self._split(e_prev)
            scale = 1.0 / np.sqrt(d)
        logits = (q @ k.transpose(0, 1, 3, 2)) * scale
        logits = logits - logits.max(axis=-1, keepdims=True)  # log-sum-exp stabilization
        ex = np.exp(logits)
        attn = ex / ex.sum(axis=-1, keepdims=True)
        ctx = attn @ v  # (B, H, T, dh)
        cat = ctx.transpose(0, 2, 1, 3).reshape(b, t, d)
        out = cat @ self.wo if self.projections == "on" else cat
        return e_cur + out, (e_cur, e_prev, q, k, v, attn, cat, scale)

    def backward(self, cache, gy: np.ndarray):
        e_cur, e_prev, q, k, v, attn, cat, scale = cache
        b, t, d = e_cur.shape
        grads = {}
        if self.projections == "on":
            grads["wo"] = np.einsum("btd,bte->de", cat, gy, optimize=True)
            gcat = gy @ self.wo.T
        else:
            gcat = gy
        gctx = gcat.reshape(b, t, self.heads, d // self.heads).transpose(0, 2, 1, 3)
        gattn = gctx @ v.transpose(0, 1, 3, 2)
        gv = attn.transpose(0, 1, 3, 2) @ gctx
        glog = attn * (gattn - (gattn * attn).sum(axis=-1, keepdims=True))
        glog = glog * scale
        gq = glog @ k
        gk = glog.transpose(0, 1, 3, 2) @ q

        def merge(x):
            return x.transpose(0, 2, 1, 3).reshape(b, t, d)

        gq, gk, gv = merge(gq), merge(gk), merge(gv)
        if self.projections == "on":
            grads["wq"] = np.einsum("btd,bte->de", e_cur, gq, optimize=True)
            grads["wk"] = np.einsum("btd,bte->de", e_prev, gk, optimize=True)
            grads["wv"] = np.einsum("btd,bte->de", e_prev, gv, optimize=True)
            ge_cur = gy + gq @ self.wq.T
            ge_prev = gk @ self.wk.T + gv @ self.wv.T
        else:
            ge_cur = gy + gq
            ge_prev = gk + gv
        return ge_cur, ge_prev, grads

    def params(self):
        if self.projections == "on":
            return {"wq": self.wq, "wk": self.wk, "wv": self.wv, "wo": self.wo}
        return {}


class Dense:
    def __init__(self, rng, n_in: int, n_out: int, relu: bool):
        self.w = _he(rng, (n_in, n_out), n_in)
        self.b = np.zeros(n_out)
        self.relu = relu

    def forward(self, x: np.ndarray):
        pre = x @ self.w + self.b
        y = np.maximum(pre, 0.0) if self.relu else pre
        return y, (x, pre)

    def backward(self, cache, gy: np.ndarray):
        x, pre = cache
        if self.relu:
            gy = gy * (pre > 0)
        grads = {"w": x.T @ gy, "b": gy.sum(axis=0)}
        return gy @ self.w.T, grads

    def params(self):
        return {"w": self.w, "b": self.b}


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            t=0,
        )


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float = 5e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """Standard bias-corrected Adam update, applied in place to ``params``."""
    state.t += 1
    t = state.t
    for key, p in params.items():
        g = grads[key]
        state.m[key] = beta1 * state.m[key] + (1.0 - beta1) * g
        state.v[key] = beta2 * state.v[key] + (1.0 - beta2) * g * g
        m_hat = state.m[key] / (1.0 - beta1**t)
        v_hat = state.v[key] / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state
