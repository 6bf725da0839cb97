"""The pairwise HR estimation network.

A shared convolutional stack embeds the current and previous cleaned PPG
windows; temporal attention lets the current embedding attend to the
previous one; a dense head emits either a Gaussian (mu, sigma) or a point
estimate.  The head operates on centred/scaled HR so that Adam's
per-parameter steps are well-conditioned; estimates are mapped back to BPM
at the output.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .frames import SampleFrame, zscore
from .nn import (
    SIGMA_FLOOR,
    AdamState,
    AvgPoolTo,
    Conv1d,
    Dense,
    HrEstimate,
    TemporalAttention,
    adam_step,
    nll_arrays,
    nll_grad_arrays,
    softplus,
)

__all__ = ["HrNetworkConfig", "HrNetwork", "TrainSettings", "train_network",
           "save_network", "load_network", "estimate_pair"]


@dataclass(frozen=True)
class HrNetworkConfig:
    """Architecture and output-calibration settings."""

    n_input: int = 256
    in_channels: int = 1
    conv_channels: tuple[int, ...] = (8, 16, 32)
    conv_kernel: int = 7
    conv_stride: int = 2
    pool_t: int = 8
    attention: bool = True
    heads: int = 2
    projections: str = "on"
    dense_hidden: tuple[int, ...] = (16,)
    probabilistic: bool = True
    hr_center: float = 170.0
    hr_scale: float = 65.0
    seed: int = 0

    @property
    def embed_dim(self) -> int:
        return self.conv_channels[-1]


class HrNetwork:
    """Layer container with explicit forward caches and exact gradients."""

    def __init__(self, cfg: HrNetworkConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.convs: list[Conv1d] = []
        c_in, length = cfg.in_channels, cfg.n_input
        for c_out in cfg.conv_channels:
            conv = Conv1d(rng, c_in, c_out, cfg.conv_kernel, cfg.conv_stride)
            self.convs.append(conv)
            length = conv.out_len(length)
            c_in = c_out
        if length < cfg.pool_t:
            raise ValueError(
                f"conv stack output length {length} shorter than pool_t={cfg.pool_t}"
            )
        self.pool = AvgPoolTo(cfg.pool_t)
        self.att = (
            TemporalAttention(rng, cfg.embed_dim, cfg.heads, cfg.projections)
            if cfg.attention
            else None
        )
        self.dense: list[Dense] = []
        n_in = cfg.pool_t * cfg.embed_dim
        for h in cfg.dense_hidden:
            self.dense.append(Dense(rng, n_in, h, relu=True))
            n_in = h
        self.head = Dense(rng, n_in, 2 if cfg.probabilistic else 1, relu=False)
        if cfg.probabilistic:
            # start sigma near 0.7 * hr_scale: wide but not degenerate
            self.head.b[1] = 0.0

    # -- parameter bookkeeping -------------------------------------------
    def _named_layers(self):
        for i, conv in enumerate(self.convs):
            yield f"conv{i}", conv
        if self.att is not None:
            yield "att", self.att
        for i, dlayer in enumerate(self.dense):
            yield f"dense{i}", dlayer
        yield "head", self.head

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self._named_layers():
            for key, arr in layer.params().items():
                out[f"{name}.{key}"] = arr
        return out

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        for key, arr in self.params().items():
            arr[...] = values[key]

    # -- forward / backward ----------------------------------------------
    def _embed(self, x: np.ndarray):
        caches = []
        h = x
        for conv in self.convs:
            h, cache = conv.forward(h)
            caches.append(cache)
        h, pcache = self.pool.forward(h)
        caches.append(pcache)
        return h.transpose(0, 2, 1), caches  # (B, T, d)

    def forward_raw(self, x_prev: np.ndarray, x_cur: np.ndarray):
        """Raw head outputs for batches shaped (B, C, N)."""
        e_prev, caches_prev = self._embed(x_prev)
        e_cur, caches_cur = self._embed(x_cur)
        if self.att is not None:
            a, att_cache = self.att.forward(e_cur, e_prev)
        else:
            a, att_cache = e_cur, None
        b = a.shape[0]
        f = a.reshape(b, -1)
        dense_caches = []
        for dlayer in self.dense:
            f, cache = dlayer.forward(f)
            dense_caches.append(cache)
        raw, head_cache = self.head.forward(f)
        return raw, (caches_prev, caches_cur, att_cache, dense_caches, head_cache, a.shape)

    def backward(self, cache, graw: np.ndarray) -> dict[str, np.ndarray]:
        caches_prev, caches_cur, att_cache, dense_caches, head_cache, a_shape = cache
        grads: dict[str, np.ndarray] = {}
        g, head_grads = self.head.backward(head_cache, graw)
        for key, val in head_grads.items():
            grads[f"head.{key}"] = val
        for i in range(len(self.dense) - 1, -1, -1):
            g, dgr = self.dense[i].backward(dense_caches[i], g)
            for key, val in dgr.items():
                grads[f"dense{i}.{key}"] = val
        g = g.reshape(a_shape)
        if self.att is not None:
            ge_cur, ge_prev, agr = self.att.backward(att_cache, g)
            for key, val in agr.items():
                grads[f"att.{key}"] = val
        else:
            ge_cur, ge_prev = g, None

        def back_branch(ge, caches):
            g = ge.transpose(0, 2, 1)
            g, _ = self.pool.backward(caches[-1], g)
            out = {}
            for i in range(len(self.convs) - 1, -1, -1):
                g, cgr = self.convs[i].backward(caches[i], g)
                out.update({f"conv{i}.{key}": val for key, val in cgr.items()})
            return out

        gc = back_branch(ge_cur, caches_cur)
        if ge_prev is not None:
            gp = back_branch(ge_prev, caches_prev)
            for key in gc:
                gc[key] = gc[key] + gp[key]
        grads.update(gc)
        return grads

    # -- calibrated outputs ----------------------------------------------
    def raw_to_bpm(self, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
        """Map raw head outputs to (mu_bpm, sigma_bpm or None)."""
        cfg = self.cfg
        mu = cfg.hr_center + cfg.hr_scale * raw[:, 0]
        if not cfg.probabilistic:
            return mu, None
        sigma = cfg.hr_scale * (softplus(raw[:, 1]) + SIGMA_FLOOR)
        return mu, sigma


def prepare_inputs(frames: list[SampleFrame]) -> np.ndarray:
    """Stack z-scored PPG windows into a (B, 1, N) model input batch."""
    return np.stack([zscore(f.ppg) for f in frames])[:, None, :]


def estimate_pair(net: HrNetwork, frame_prev: SampleFrame, frame_cur: SampleFrame) -> HrEstimate:
    """Estimate the HR of ``frame_cur`` attending over ``frame_prev``.

    Both frames must already be artifact-cleaned; they are z-scored here.
    For the first frame of a session pass ``frame_prev = frame_cur``.
    """
    if frame_prev.n != frame_cur.n:
        raise ValueError("frame pair lengths differ")
    x_prev = prepare_inputs([frame_prev])
    x_cur = prepare_inputs([frame_cur])
    raw, _ = net.forward_raw(x_prev, x_cur)
    mu, sigma = net.raw_to_bpm(raw)
    if sigma is None:
        sigma = np.asarray([np.inf])
    return HrEstimate(mu_hr=float(mu[0]), sigma_hr=float(sigma[0]),
                      frame_time=frame_cur.t_end)


@dataclass(frozen=True)
class TrainSettings:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 50
    patience: int = 10
    val_fraction: float = 0.15
    seed: int = 0


def _point_loss_and_grad(mu_norm: np.ndarray, y_norm: np.ndarray):
    # mean absolute error in normalized HR units
    r = mu_norm - y_norm
    return float(np.mean(np.abs(r))), np.sign(r) / len(r)


def _nll_loss_and_grad(raw: np.ndarray, y_norm: np.ndarray):
    mu = raw[:, 0]
    sigma = softplus(raw[:, 1]) + SIGMA_FLOOR
    loss = float(np.mean(nll_arrays(mu, sigma, y_norm)))
    dmu, dsigma = nll_grad_arrays(mu, sigma, y_norm)
    b = len(y_norm)
    draw = np.empty_like(raw)
    draw[:, 0] = dmu / b
    draw[:, 1] = dsigma * (1.0 / (1.0 + np.exp(-raw[:, 1]))) / b
    return loss, draw


def train_network(
    net: HrNetwork,
    x_prev: np.ndarray,
    x_cur: np.ndarray,
    y_bpm: np.ndarray,
    settings: TrainSettings = TrainSettings(),
) -> dict:
    """Train with Adam on mean NLL (probabilistic) or MAE (point estimate).

    A validation split drives early stopping; the best-validation weights
    are restored before returning.  Returns the training history.
    """
    cfg = net.cfg
    n = len(y_bpm)
    if n < 4:
        raise ValueError("need at least 4 samples to train")
    y_norm = (np.asarray(y_bpm, dtype=np.float64) - cfg.hr_center) / cfg.hr_scale
    rng = np.random.default_rng(settings.seed)
    order = rng.permutation(n)
    n_val = max(1, int(round(settings.val_fraction * n)))
    val_idx, train_idx = order[:n_val], order[n_val:]

    params = net.params()
    state = AdamState.for_params(params)
    history = {"train_loss": [], "val_loss": [], "best_epoch": -1}
    best_val = np.inf
    best_weights = {k: v.copy() for k, v in params.items()}
    bad = 0

    def batch_loss_grad(idx):
        raw, cache = net.forward_raw(x_prev[idx], x_cur[idx])
        if cfg.probabilistic:
            loss, graw = _nll_loss_and_grad(raw, y_norm[idx])
        else:
            loss, gmu = _point_loss_and_grad(raw[:, 0], y_norm[idx])
            graw = gmu[:, None]
        return loss, graw, cache

    def eval_loss(idx):
        total = 0.0
        for k0 in range(0, len(idx), settings.batch_size):
            sel = idx[k0 : k0 + settings.batch_size]
            loss, _, _ = batch_loss_grad(sel)
            total += loss * len(sel)
        return total / len(idx)

    for epoch in range(settings.epochs):
        rng.shuffle(train_idx)
        total = 0.0
        for k0 in range(0, len(train_idx), settings.batch_size):
            sel = train_idx[k0 : k0 + settings.batch_size]
            loss, graw, cache = batch_loss_grad(sel)
            grads = net.backward(cache, graw)
            if any(not np.all(np.isfinite(g)) for g in grads.values()):
                raise FloatingPointError(f"non-finite gradient at epoch {epoch}")
            adam_step(params, grads, state, lr=settings.lr, beta1=settings.beta1,
                      beta2=settings.beta2, eps=settings.eps)
            total += loss * len(sel)
        history["train_loss"].append(total / len(train_idx))
        val = eval_loss(val_idx)
        history["val_loss"].append(val)
        if val < best_val - 1e-5:
            best_val = val
            best_weights = {k: v.copy() for k, v in params.items()}
            history["best_epoch"] = epoch
            bad = 0
        else:
            bad += 1
            if bad >= settings.patience:
                break
    net.set_params(best_weights)
    return history


def save_network(net: HrNetwork, path: str | Path) -> None:
    """Architecture manifest plus f32le weight payloads."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    cfg = net.cfg
    lines = []
    for key, val in asdict(cfg).items():
        if isinstance(val, tuple):
            val = ",".join(str(v) for v in val)
        lines.append(f"{key} = {val}")
    (out / "network.txt").write_text("\n".join(lines) + "\n")
    for key, arr in net.params().items():
        np.asarray(arr, dtype="<f4").tofile(out / f"{key}.f32")


def load_network(path: str | Path) -> HrNetwork:
    root = Path(path)
    fields: dict[str, str] = {}
    for line in (root / "network.txt").read_text().splitlines():
        if "=" in line:
            k, _, v = line.partition("=")
            fields[k.strip()] = v.strip()

    def tup(s):
        return tuple(int(v) for v in s.split(",") if v)

    cfg = HrNetworkConfig(
        n_input=int(fields["n_input"]),
        in_channels=int(fields["in_channels"]),
        conv_channels=tup(fields["conv_channels"]),
        conv_kernel=int(fields["conv_kernel"]),
        conv_stride=int(fields["conv_stride"]),
        pool_t=int(fields["pool_t"]),
        attention=fields["attention"] == "True",
        heads=int(fields["heads"]),
        projections=fields["projections"],
        dense_hidden=tup(fields["dense_hidden"]),
        probabilistic=fields["probabilistic"] == "True",
        hr_center=float(fields["hr_center"]),
        hr_scale=float(fields["hr_scale"]),
        seed=int(fields["seed"]),
    )
    net = HrNetwork(cfg)
    for key, arr in net.params().items():
        data = np.fromfile(root / f"{key}.f32", dtype="<f4").astype(np.float64)
        arr[...] = data.reshape(arr.shape)
    return net
