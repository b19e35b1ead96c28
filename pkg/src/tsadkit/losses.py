"""Training objectives: weighted reconstruction plus contrastive terms.

The contrastive losses treat the per-scale views of one window as positive
pairs. The interval-wise form pools each view over time and contrasts
channels within the window; the point-wise form upsamples every view to
window length and contrasts time points. Both put one matched polluted
sample per anchor into the denominator, and both are computed through a
log-sum-exp primitive so large inner products cannot overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, NumericError
from .tensor import Tensor


@dataclass
class LossConfig:
    lambda_con: float = 1.0
    lambda_rec: float = 1.0
    mode: str = "interval"          # 'interval' (prediction) or 'point' (detection)
    normalize_reps: bool = True     # unit-normalize before inner products
    reaction_weight: float = 2.0    # w_r, weight of masked positions in Eq. of MSE
    point_same_view: bool = True    # same-view other-time terms in the point denominator

    def __post_init__(self):
        if self.mode not in ("interval", "point"):
            raise ConfigError(f"unknown loss mode '{self.mode}'")
        if self.lambda_con < 0.0 or self.lambda_rec < 0.0:
            raise ConfigError("loss weights must be >= 0")
        if self.reaction_weight < 0.0:
            raise ConfigError("reaction_weight must be >= 0")


@dataclass
class LossReport:
    rec: float
    con: float
    total: float


def reconstruction_loss(target: np.ndarray, recon: Tensor,
                        weights: np.ndarray | None = None) -> Tensor:
    """Per-point squared error, masked positions up-weighted.

    `target` and `recon` are (S, h): one row per window-channel item in
    normalized space. `weights` carries w_r at masked positions and 1
    elsewhere; None means uniform weighting, which recovers the plain
    mean squared error.
    """
    target = np.asarray(target, dtype=np.float64)
    if tuple(target.shape) != tuple(recon.shape):
        raise ValueError(f"target {target.shape} vs reconstruction {recon.shape}")
    diff = T.sub(recon, T.as_tensor(target))
    sq = T.mul(diff, diff)
    if weights is not None:
        sq = T.mul(sq, T.as_tensor(np.asarray(weights, dtype=np.float64)))
    return T.tmean(sq)


def pool_interval(z: Tensor) -> Tensor:
    """Mean-pool a (..., N, d) representation over its time axis."""
    return T.tmean(z, axis=-2)


def floor_index(i, l_orig: int, l_new: int):
    """Source index for upsampling position i: floor(i * l_orig / l_new)."""
    return np.asarray(i, dtype=np.int64) * l_orig // l_new


def upsample_reps(z: Tensor, l_new: int) -> Tensor:
    """Repeat-expand a (..., N, d) representation to (..., l_new, d)."""
    n = z.shape[-2]
    if l_new < n:
        raise ValueError(f"cannot upsample length {n} down to {l_new}")
    idx = floor_index(np.arange(l_new), n, l_new)
    return T.take(z, idx, axis=z.ndim - 2)


def _maybe_normalize(z: Tensor, normalize: bool) -> Tensor:
    return T.l2_normalize(z, axis=-1) if normalize else z


def interval_contrastive(pos: Tensor, neg: Tensor | None,
                         normalize: bool = True) -> Tensor:
    """Contrast pooled views across channels within each window.

    `pos` is (B, a, c, d): B windows, a scale views, c channels. For the
    anchor at (view v, channel i) the positives are the other views of the
    same channel; the denominator collects every view of every other
    channel plus, when `neg` is given, the matched polluted view. Averaged
    over channels, then anchor views, then windows.
    """
    b, a, c, d = pos.shape
    if a < 2:
        raise NumericError("interval loss needs at least two views for positive pairs")
    if c < 2 and neg is None:
        raise NumericError("empty denominator: single channel and no negatives")
    pos = _maybe_normalize(pos, normalize)
    zf = T.reshape(pos, (b, a * c, d))
    gram = T.matmul(zf, T.transpose(zf, (0, 2, 1)))           # (B, ac, ac)
    view = np.repeat(np.arange(a), c)
    chan = np.tile(np.arange(c), a)
    same_chan = chan[:, None] == chan[None, :]
    same_view = view[:, None] == view[None, :]
    num_mask = same_chan & ~same_view
    den_mask = ~same_chan
    if neg is not None:
        neg = _maybe_normalize(neg, normalize)
        nf = T.reshape(neg, (b, a * c, d))
        matched = T.tsum(T.mul(zf, nf), axis=-1, keepdims=True)  # (B, ac, 1)
        logits = T.concat([gram, matched], axis=2)
        num_mask = np.concatenate([num_mask, np.zeros((a * c, 1), dtype=bool)], axis=1)
        den_mask = np.concatenate([den_mask, np.ones((a * c, 1), dtype=bool)], axis=1)
    else:
        logits = gram
    lse_num = T.masked_logsumexp(logits, num_mask, axis=-1)
    lse_den = T.masked_logsumexp(logits, den_mask, axis=-1)
    return T.tmean(T.sub(lse_den, lse_num))


def point_contrastive(pos: Tensor, neg: Tensor | None, normalize: bool = True,
                      include_same_view: bool = True) -> Tensor:
    """Contrast upsampled views across time points within each sample.

    `pos` is (S, a, T, d): S window-channel samples, a views upsampled to
    a common length T. The anchor at (view v, time t) takes the other
    views at the same time as positives; the denominator collects all
    views at every other time (same-view terms optional) plus the matched
    polluted view at the same time when `neg` is given. Averaged over
    time, then anchor views, then samples.
    """
    s, a, t_len, d = pos.shape
    if a < 2:
        raise NumericError("point loss needs at least two views for positive pairs")
    if t_len < 2 and neg is None:
        raise NumericError("empty denominator: single time point and no negatives")
    pos = _maybe_normalize(pos, normalize)
    flat = T.reshape(pos, (s, a * t_len, d))
    keys = T.reshape(T.transpose(flat, (0, 2, 1)), (s, 1, d, a * t_len))
    gram = T.matmul(pos, keys)                                # (S, a, T, aT)
    view = np.repeat(np.arange(a), t_len)                     # column view index
    time = np.tile(np.arange(t_len), a)                       # column time index
    anchor_view = np.arange(a)[:, None, None]
    anchor_time = np.arange(t_len)[None, :, None]
    same_time = time[None, None, :] == anchor_time
    same_view = view[None, None, :] == anchor_view
    num_mask = same_time & ~same_view
    den_mask = ~same_time if include_same_view else (~same_time & ~same_view)
    num_mask = np.broadcast_to(num_mask, (a, t_len, a * t_len))
    den_mask = np.broadcast_to(den_mask, (a, t_len, a * t_len))
    if neg is not None:
        neg = _maybe_normalize(neg, normalize)
        matched = T.tsum(T.mul(pos, neg), axis=-1, keepdims=True)  # (S, a, T, 1)
        logits = T.concat([gram, matched], axis=3)
        pad_no = np.zeros((a, t_len, 1), dtype=bool)
        pad_yes = np.ones((a, t_len, 1), dtype=bool)
        num_mask = np.concatenate([num_mask, pad_no], axis=2)
        den_mask = np.concatenate([den_mask, pad_yes], axis=2)
    else:
        logits = gram
        if not include_same_view and a < 2:
            raise NumericError("empty denominator in point loss")
    lse_num = T.masked_logsumexp(logits, num_mask, axis=-1)
    lse_den = T.masked_logsumexp(logits, den_mask, axis=-1)
    return T.tmean(T.sub(lse_den, lse_num))


def joint_loss(rec: Tensor | None, con: Tensor | None,
               cfg: LossConfig) -> tuple[Tensor, LossReport]:
    """Combine the terms: lambda_con * L_con + lambda_rec * L_rec."""
    zero = T.as_tensor(0.0)
    rec_t = rec if rec is not None else zero
    con_t = con if con is not None else zero
    total = T.add(T.mul(T.as_tensor(cfg.lambda_con), con_t),
                  T.mul(T.as_tensor(cfg.lambda_rec), rec_t))
    report = LossReport(rec=float(rec_t.data), con=float(con_t.data),
                        total=float(total.data))
    return total, report
