"""Joint training loop with early stopping on validation loss.

Each step takes a batch of windows, normalizes every channel, hides the
reaction-time tail of each channel with a drawn period-length mask, feeds
the masked patches and the polluted clean patches through the shared
backbone, and descends the weighted sum of reconstruction and contrastive
losses with Adam. Validation repeats the same objective with a fixed seed
so its loss is comparable across epochs, and the parameters returned are
those of the epoch with the lowest validation loss.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, NumericError
from .losses import (LossConfig, LossReport, interval_contrastive, joint_loss,
                     point_contrastive, pool_interval, reconstruction_loss,
                     upsample_reps)
from .model import ModelConfig, MultiScaleModel
from .multiscale import (PeriodSet, amplitude_spectrum, dominant_periods,
                         multiscale_patch_batch, top_k_periods)
from .negatives import NegativeGenConfig, generate_negatives, pick_strategy
from .optim import Adam
from .pipeline import STD_FLOOR, TimeSeries, WindowConfig, slide_windows
from .rng import make_rng, split_rng
from .tensor import Tape


@dataclass
class AblationFlags:
    multi_scale: bool = True
    adaptive_mask: bool = True
    reconstruction: bool = True
    contrastive: bool = True
    generation: bool = True


@dataclass
class TrainConfig:
    lr: float = 1e-5
    max_epochs: int = 100
    patience: int = 3
    batch_size: int = 8
    stride: int = 4                    # stride of training windows
    seed: int = 0
    valid_seed: int = 9001             # fixed stream for validation draws
    mask_top_k: int = 3
    mask_history: int = 4              # candidate history windows for periods
    mask_orientation: str = "zero_tail"
    ablations: AblationFlags = field(default_factory=AblationFlags)

    def __post_init__(self):
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ConfigError("max_epochs, patience and batch_size must be >= 1")
        if self.stride < 1:
            raise ConfigError("training stride must be >= 1")
        if self.mask_orientation not in ("zero_tail", "keep_tail"):
            raise ConfigError(f"unknown mask orientation '{self.mask_orientation}'")


@dataclass
class EpochStats:
    epoch: int
    rec: float
    con: float
    total: float
    valid: float
    seconds: float


@dataclass
class TrainState:
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_valid: float = float("inf")
    stopped_early: bool = False


def format_train_log(history: list[EpochStats]) -> str:
    lines = [f"{s.epoch}\t{s.rec:.6f}\t{s.con:.6f}\t{s.total:.6f}"
             f"\t{s.valid:.6f}\t{s.seconds:.3f}" for s in history]
    return "\n".join(lines) + ("\n" if lines else "")


def _fallback_periods(h: int, k: int) -> PeriodSet:
    return PeriodSet(periods=[max(2, h // 2)], bins=[2], amplitudes=[0.0])


def _periods_for(values_ch: np.ndarray, end: int, h: int, k: int, m: int) -> PeriodSet:
    """Dominant periods of the channel history ending at `end` (inclusive).

    Early windows without two full history windows fall back to the top-k
    of the window's own spectrum; degenerate all-zero spectra fall back to
    a single half-window period.
    """
    hist = values_ch[: end + 1]
    try:
        if hist.size >= 2 * h:
            return dominant_periods(hist, h, k=k, m=m)
        return top_k_periods(amplitude_spectrum(hist[-h:]).amplitudes, h, k)
    except NumericError:
        return _fallback_periods(h, k)


class Trainer:
    """Owns the model, optimizer, and cached window metadata for one run."""

    def __init__(self, train: TimeSeries, valid: TimeSeries, model_cfg: ModelConfig,
                 train_cfg: TrainConfig, loss_cfg: LossConfig,
                 neg_cfg: NegativeGenConfig):
        if not train_cfg.ablations.multi_scale and model_cfg.n_scales != 1:
            model_cfg = ModelConfig(**{**model_cfg.__dict__, "n_scales": 1,
                                       "ffn_dim": model_cfg.ffn_dim})
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.loss_cfg = loss_cfg
        self.neg_cfg = neg_cfg
        self.h = model_cfg.window

        wcfg = WindowConfig(lookback=self.h, lookforward=0, stride=train_cfg.stride,
                            task="detection")
        self.train_batch = slide_windows(train, wcfg)
        self.valid_batch = slide_windows(valid, wcfg)
        self.channels = train.channels

        root = make_rng(train_cfg.seed)
        init_rng, self.draw_rng, self.order_rng, self.dropout_rng = split_rng(root, 4)
        self.model = MultiScaleModel(model_cfg, init_rng)
        self.adam = Adam(self.model.parameters(), lr=train_cfg.lr)

        full = np.concatenate([train.values, valid.values], axis=0)
        self._train_periods = self._cache_periods(full, self.train_batch.end_times)
        self._valid_periods = self._cache_periods(
            full, self.valid_batch.end_times + train.length)

    def _cache_periods(self, values: np.ndarray, ends: np.ndarray) -> list[list[PeriodSet]]:
        cfg = self.train_cfg
        if not cfg.ablations.adaptive_mask:
            return []
        return [[_periods_for(values[:, ch], int(end), self.h, cfg.mask_top_k,
                              cfg.mask_history) for ch in range(self.channels)]
                for end in ends]

    # -- one batch ----------------------------------------------------------

    def _draw_mask_length(self, periods: PeriodSet | None,
                          rng: np.random.Generator) -> int:
        if periods is None:
            return int(rng.integers(2, self.h + 1))
        return periods.periods[int(rng.integers(0, len(periods.periods)))]

    def batch_loss(self, indices: np.ndarray, periods: list[list[PeriodSet]],
                   windows: np.ndarray, rng: np.random.Generator,
                   training: bool) -> tuple[T.Tensor, LossReport]:
        """Joint loss over the windows at `indices`; tensors, not floats."""
        cfg = self.train_cfg
        abl = cfg.ablations
        b = len(indices)
        c = self.channels
        h = self.h
        chunk = windows[indices]                          # (B, h, c)
        mean = chunk.mean(axis=1)
        std = np.maximum(chunk.std(axis=1), STD_FLOOR)
        normed = ((chunk - mean[:, None, :]) / std[:, None, :])
        samples = normed.transpose(0, 2, 1).reshape(b * c, h)

        masked = samples.copy()
        weights = np.ones_like(samples)
        for bi in range(b):
            for ch in range(c):
                pset = periods[indices[bi]][ch] if abl.adaptive_mask else None
                r = self._draw_mask_length(pset, rng)
                s = bi * c + ch
                if cfg.mask_orientation == "zero_tail":
                    cut = slice(h - r, h)
                else:
                    cut = slice(0, h - r)
                masked[s, cut] = 0.0
                weights[s, cut] = self.loss_cfg.reaction_weight

        mcfg = self.model_cfg
        patches_masked = multiscale_patch_batch(masked, mcfg.patch_size, mcfg.n_scales)
        drop_rng = self.dropout_rng if training else None
        reps_pos = self.model.encode_patches(patches_masked, training=training,
                                             rng=drop_rng)

        l_rec = None
        if abl.reconstruction:
            try:
                recon = self.model.decode(reps_pos)
                l_rec = reconstruction_loss(samples, recon, weights)
            except NumericError as exc:
                raise NumericError(f"reconstruction loss: {exc}") from None

        l_con = None
        if abl.contrastive and mcfg.n_scales >= 2:
            reps_neg = None
            if abl.generation:
                clean = multiscale_patch_batch(samples, mcfg.patch_size, mcfg.n_scales)
                neg_scales = [np.empty_like(p) for p in clean]
                for bi in range(b):
                    w_rng = split_rng(rng, 1)[0]
                    strategy = pick_strategy(self.neg_cfg, w_rng)
                    for ch in range(c):
                        s = bi * c + ch
                        s_rng = split_rng(w_rng, 1)[0]
                        _, polluted = generate_negatives(
                            [p[s] for p in clean], self.neg_cfg, s_rng,
                            mcfg.patch_size, strategy=strategy)
                        for k, arr in enumerate(polluted):
                            neg_scales[k][s] = arr
                reps_neg = self.model.encode_patches(neg_scales, training=training,
                                                     rng=drop_rng)
            try:
                l_con = self._contrastive(reps_pos, reps_neg, b, c)
            except NumericError as exc:
                raise NumericError(f"contrastive loss: {exc}") from None

        try:
            return joint_loss(l_rec, l_con, self.loss_cfg)
        except NumericError as exc:
            raise NumericError(f"joint loss: {exc}") from None

    def _contrastive(self, reps_pos, reps_neg, b: int, c: int) -> T.Tensor:
        a = self.model_cfg.n_scales
        d = self.model_cfg.d_model
        if self.loss_cfg.mode == "interval":
            def pack(reps):
                pooled = [T.reshape(pool_interval(r), (b * c, 1, d)) for r in reps]
                stacked = T.concat(pooled, axis=1)            # (S, a, d)
                return T.transpose(T.reshape(stacked, (b, c, a, d)), (0, 2, 1, 3))

            return interval_contrastive(
                pack(reps_pos), pack(reps_neg) if reps_neg is not None else None,
                normalize=self.loss_cfg.normalize_reps)

        def pack_point(reps):
            ups = [T.reshape(upsample_reps(r, self.h), (b * c, 1, self.h, d))
                   for r in reps]
            return T.concat(ups, axis=1)                      # (S, a, h, d)

        return point_contrastive(
            pack_point(reps_pos), pack_point(reps_neg) if reps_neg is not None else None,
            normalize=self.loss_cfg.normalize_reps,
            include_same_view=self.loss_cfg.point_same_view)

    # -- epochs --------------------------------------------------------------

    def _run_validation(self) -> float:
        rng = make_rng(self.train_cfg.valid_seed)
        n = self.valid_batch.windows.shape[0]
        total, count = 0.0, 0
        for lo in range(0, n, self.train_cfg.batch_size):
            idx = np.arange(lo, min(lo + self.train_cfg.batch_size, n))
            _, report = self.batch_loss(idx, self._valid_periods,
                                        self.valid_batch.windows, rng, training=False)
            total += report.total * idx.size
            count += idx.size
        return total / count

    def fit(self) -> TrainState:
        cfg = self.train_cfg
        state = TrainState()
        best_params = self.model.state_arrays()
        n = self.train_batch.windows.shape[0]
        since_best = 0
        for epoch in range(1, cfg.max_epochs + 1):
            started = time.perf_counter()
            order = self.order_rng.permutation(n)
            sums = np.zeros(3)
            for lo in range(0, n, cfg.batch_size):
                idx = order[lo: lo + cfg.batch_size]
                with Tape() as tape:
                    loss, report = self.batch_loss(idx, self._train_periods,
                                                   self.train_batch.windows,
                                                   self.draw_rng, training=True)
                tape.backward(loss, params=self.model.parameters())
                self.adam.step()
                self.adam.zero_grad()
                sums += np.array([report.rec, report.con, report.total]) * idx.size
            rec, con, total = sums / n
            valid = self._run_validation()
            state.history.append(EpochStats(
                epoch=epoch, rec=rec, con=con, total=total, valid=valid,
                seconds=time.perf_counter() - started))
            if valid < state.best_valid:
                state.best_valid = valid
                state.best_epoch = epoch
                best_params = self.model.state_arrays()
                since_best = 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    state.stopped_early = True
                    break
        self.model.load_state_arrays(best_params)
        return state


def fit(train: TimeSeries, valid: TimeSeries, model_cfg: ModelConfig,
        train_cfg: TrainConfig, loss_cfg: LossConfig,
        neg_cfg: NegativeGenConfig) -> tuple[MultiScaleModel, TrainState]:
    """Train a fresh model; returns it with best-validation parameters loaded."""
    trainer = Trainer(train, valid, model_cfg, train_cfg, loss_cfg, neg_cfg)
    state = trainer.fit()
    return trainer.model, state
