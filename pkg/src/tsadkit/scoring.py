"""Anomaly scores, calibration, and thresholding for a trained model.

A window's per-point score is the squared reconstruction error in the
de-normalized space plus the mean Euclidean distance between the
upsampled representations of every scale pair. Both terms are min-max
normalized against a calibration set (the validation split) before being
summed, so neither dominates by unit choice. Inference feeds the window
unmasked and records no tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .losses import floor_index
from .model import MultiScaleModel
from .multiscale import multiscale_patch_batch
from .pipeline import STD_FLOOR

_EPS_RANGE = 1e-12


@dataclass
class ThresholdPolicy:
    kind: str = "quantile"        # 'quantile' or 'fixed'
    q: float | None = None        # defaults to 1 - declared anomaly ratio
    value: float | None = None

    def __post_init__(self):
        if self.kind not in ("quantile", "fixed"):
            raise ConfigError(f"unknown threshold kind '{self.kind}'")
        if self.kind == "fixed" and self.value is None:
            raise ConfigError("fixed threshold needs a value")
        if self.q is not None and not 0.0 < self.q < 1.0:
            raise ConfigError(f"quantile {self.q} outside (0, 1)")


@dataclass
class ScoreCalibration:
    """Min-max ranges of the raw score terms on the calibration set."""

    recon_min: float
    recon_max: float
    dist_min: float
    dist_max: float
    point_threshold: float | None = None
    window_threshold: float | None = None

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for key, val in self.__dict__.items():
                fh.write(f"{key} = {'none' if val is None else repr(float(val))}\n")

    @classmethod
    def load(cls, path: str) -> "ScoreCalibration":
        fields = {}
        try:
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    key, _, val = line.partition("=")
                    fields[key.strip()] = None if val.strip() == "none" else float(val)
            return cls(**fields)
        except (TypeError, ValueError) as exc:
            raise DataError(f"{path}: not a calibration file ({exc})") from None


def nearest_rank_quantile(scores: np.ndarray, q: float) -> float:
    """The smallest score with strictly more than a q-fraction at or below it."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise DataError("quantile of empty score set")
    if not 0.0 <= q <= 1.0:
        raise ConfigError(f"quantile {q} outside [0, 1]")
    ordered = np.sort(scores)
    rank = min(scores.size, int(np.floor(q * scores.size)) + 1)
    return float(ordered[rank - 1])


def calibrate_threshold(scores: np.ndarray, policy: ThresholdPolicy,
                        declared_ratio: float | None = None) -> float:
    """Resolve the decision threshold from calibration scores."""
    if policy.kind == "fixed":
        return float(policy.value)
    q = policy.q
    if q is None:
        if declared_ratio is None:
            raise ConfigError("quantile policy needs q or a declared anomaly ratio")
        if not 0.0 <= declared_ratio <= 1.0:
            raise ConfigError(f"anomaly ratio {declared_ratio} outside [0, 1]")
        q = 1.0 - declared_ratio
    return nearest_rank_quantile(scores, q)


class Scorer:
    """Runs inference and turns model outputs into anomaly scores."""

    def __init__(self, model: MultiScaleModel, use_dist: bool = True,
                 calibration: ScoreCalibration | None = None, chunk: int = 256):
        self.model = model
        self.use_dist = use_dist and model.cfg.n_scales > 1
        self.calibration = calibration
        self.chunk = max(1, chunk)

    # -- raw terms ---------------------------------------------------------

    def raw_scores(self, windows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-point raw terms for (B, h, c) windows, channel-averaged.

        Returns (recon, dist), each (B, h). The dist term is identically
        zero for a single-scale model or when the dist term is disabled.
        """
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim != 3:
            raise DataError(f"expected (B, h, c) windows, got {windows.shape}")
        b, h, c = windows.shape
        cfg = self.model.cfg
        if h != cfg.window:
            raise DataError(f"window length {h} does not match model window {cfg.window}")
        recon = np.empty((b, h))
        dist = np.zeros((b, h))
        for lo in range(0, b, self.chunk):
            hi = min(lo + self.chunk, b)
            chunk = windows[lo:hi]                      # (n, h, c)
            n = chunk.shape[0]
            mean = chunk.mean(axis=1)                   # (n, c)
            std = np.maximum(chunk.std(axis=1), STD_FLOOR)
            normed = (chunk - mean[:, None, :]) / std[:, None, :]
            samples = normed.transpose(0, 2, 1).reshape(n * c, h)
            patches = multiscale_patch_batch(samples, cfg.patch_size, cfg.n_scales)
            reps = self.model.encode_patches(patches, training=False)
            recon_hat = self.model.decode(reps).data    # (n*c, h) normalized
            denorm = recon_hat.reshape(n, c, h) * std[:, :, None] + mean[:, :, None]
            err = (chunk.transpose(0, 2, 1) - denorm) ** 2
            recon[lo:hi] = err.mean(axis=1)
            if self.use_dist:
                dist[lo:hi] = self._pairwise_dist([r.data for r in reps], n, c, h)
        return recon, dist

    def _pairwise_dist(self, reps: list[np.ndarray], n: int, c: int,
                       h: int) -> np.ndarray:
        ups = []
        for r in reps:
            idx = floor_index(np.arange(h), r.shape[1], h)
            ups.append(r[:, idx, :])                    # (n*c, h, d)
        total = np.zeros((n * c, h))
        pairs = 0
        for i in range(len(ups)):
            for j in range(i + 1, len(ups)):
                total += np.linalg.norm(ups[i] - ups[j], axis=-1)
                pairs += 1
        return (total / pairs).reshape(n, c, h).mean(axis=1)

    # -- normalized scores ---------------------------------------------------

    def _normalize(self, recon: np.ndarray, dist: np.ndarray) -> np.ndarray:
        cal = self.calibration
        if cal is None:
            raise NumericError("uncalibrated normalizer: fit calibration first")

        def scale(v, lo, hi):
            rng = hi - lo
            if rng < _EPS_RANGE:
                return np.zeros_like(v)
            return (v - lo) / rng

        score = scale(recon, cal.recon_min, cal.recon_max)
        if self.use_dist:
            score = score + scale(dist, cal.dist_min, cal.dist_max)
        return score

    def point_scores(self, windows: np.ndarray) -> np.ndarray:
        """Calibrated per-point scores, one row per window."""
        recon, dist = self.raw_scores(windows)
        return self._normalize(recon, dist)

    def window_probs(self, windows: np.ndarray) -> np.ndarray:
        """Prediction probability per window: mean point score over the look-back."""
        return self.point_scores(windows).mean(axis=1)

    def series_scores(self, windows: np.ndarray, end_times: np.ndarray,
                      t_len: int) -> np.ndarray:
        """Assemble per-series point scores, later windows overwriting earlier.

        Windows must arrive in increasing end-time order; with stride 1
        every point of the series receives a score.
        """
        scores = self.point_scores(windows)
        h = windows.shape[1]
        out = np.full(t_len, np.nan)
        for row, end in zip(scores, end_times):
            out[end - h + 1: end + 1] = row
        if np.isnan(out).any():
            raise DataError("window set does not cover the series; use stride 1")
        return out

    def fit_calibration(self, windows: np.ndarray) -> ScoreCalibration:
        """Min-max ranges of both raw terms over a calibration window set."""
        recon, dist = self.raw_scores(windows)
        cal = ScoreCalibration(
            recon_min=float(recon.min()), recon_max=float(recon.max()),
            dist_min=float(dist.min()), dist_max=float(dist.max()))
        self.calibration = cal
        return cal
