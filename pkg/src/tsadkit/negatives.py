"""Hard negative samples via controlled pollution of clean patches.

Six strategies, each applied to the patch matrix of one scale:

  scale     multiply selected points by (sigma * s + 1), s ~ N(0,1) drawn
            once per scale
  compress  replace selected patches by their piecewise average at a
            coarser resolution, values repeated back to full length
  hmirror   reflect selected points about the window mean
  shift     move selected points forward in time by a fixed offset,
            replicating the window edge
  noise     add sigma-scaled Gaussian noise to selected points
  vmirror   reverse selected patches along the time axis

Selection is Bernoulli(noise_ratio) per point, except compress and vmirror
which select whole patches so a patch is either fully polluted or left
alone. Pollution always starts from the clean branch input; masked windows
are never polluted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .rng import split_rng

STRATEGIES = ("scale", "compress", "hmirror", "shift", "noise", "vmirror")
_PATCH_STRATEGIES = ("compress", "vmirror")


@dataclass
class NegativeGenConfig:
    strategy: str = "mixed"        # one of STRATEGIES, or "mixed" for a uniform draw
    noise_ratio: float = 0.5       # Bernoulli selection probability
    sigma: float = 0.5             # intensity of scale and noise strategies
    shift_delta: int | None = None  # points to displace; defaults to base patch
    compress_factor: int = 2

    def __post_init__(self):
        if self.strategy != "mixed" and self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown negative strategy '{self.strategy}'")
        if not 0.0 <= self.noise_ratio <= 1.0:
            raise ConfigError(f"noise_ratio {self.noise_ratio} outside [0, 1]")
        if self.sigma < 0.0:
            raise ConfigError("sigma must be >= 0")
        if self.compress_factor < 2:
            raise ConfigError("compress_factor must be >= 2")
        if self.shift_delta is not None and self.shift_delta < 1:
            raise ConfigError("shift_delta must be >= 1")


def sample_intensity(rng: np.random.Generator) -> float:
    """One standard normal draw; the per-scale intensity of 'scale'."""
    return float(rng.normal(0.0, 1.0))


def pick_strategy(cfg: NegativeGenConfig, rng: np.random.Generator) -> str:
    if cfg.strategy != "mixed":
        return cfg.strategy
    return STRATEGIES[int(rng.integers(0, len(STRATEGIES)))]


def _compress_patch(patch: np.ndarray, factor: int) -> np.ndarray:
    out = np.empty_like(patch)
    p = patch.size
    for lo in range(0, p, factor):
        hi = min(lo + factor, p)
        out[lo:hi] = patch[lo:hi].mean()
    return out


def generate_negative(patches: np.ndarray, strategy: str, cfg: NegativeGenConfig,
                      rng: np.random.Generator, base_patch: int) -> np.ndarray:
    """Pollute one (N, P) patch matrix. Draw order: selection, then values."""
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown negative strategy '{strategy}'")
    n, p = patches.shape
    out = patches.copy()
    if strategy in _PATCH_STRATEGIES:
        chosen = rng.random(n) < cfg.noise_ratio
        if strategy == "compress":
            for i in np.flatnonzero(chosen):
                out[i] = _compress_patch(out[i], cfg.compress_factor)
        else:
            out[chosen] = out[chosen, ::-1]
        return out

    flat = out.reshape(-1)
    sel = rng.random(flat.size) < cfg.noise_ratio
    if strategy == "scale":
        s = sample_intensity(rng)
        flat[sel] *= cfg.sigma * s + 1.0
    elif strategy == "hmirror":
        m = patches.mean()
        flat[sel] = 2.0 * m - flat[sel]
    elif strategy == "shift":
        delta = cfg.shift_delta if cfg.shift_delta is not None else base_patch
        src = np.maximum(np.arange(flat.size) - delta, 0)
        flat[sel] = patches.reshape(-1)[src][sel]
    elif strategy == "noise":
        flat[sel] += cfg.sigma * rng.normal(0.0, 1.0, size=int(sel.sum()))
    return out


def generate_negatives(patch_scales: list[np.ndarray], cfg: NegativeGenConfig,
                       rng: np.random.Generator, base_patch: int,
                       strategy: str | None = None) -> tuple[str, list[np.ndarray]]:
    """Pollute every scale of one window with an independent RNG stream each.

    The strategy is drawn once for the window (unless pinned) and applied
    at every scale; value draws never leak between scales.
    """
    if strategy is None:
        strategy = pick_strategy(cfg, rng)
    streams = split_rng(rng, len(patch_scales))
    polluted = [generate_negative(patch_scales[i], strategy, cfg, streams[i], base_patch)
                for i in range(len(patch_scales))]
    return strategy, polluted
