"""Frequency-driven masking and multi-scale patching of univariate windows.

The reaction-time mask length comes from the data itself: recent history
windows are compared in the amplitude-spectrum domain, the most similar
pair is merged, and the strongest frequency bins give candidate periods.
One of those periods is drawn as the mask length, hiding the most recent
points of the window so the model must reconstruct them from context.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError


@dataclass
class Spectrum:
    """One-sided amplitude spectrum of a length-h window."""

    amplitudes: np.ndarray   # (h // 2 + 1,)
    window_len: int
    source_id: int | None = None


@dataclass
class PeriodSet:
    """Candidate mask lengths, strongest frequency first."""

    periods: list[int]
    bins: list[int]
    amplitudes: list[float]


@dataclass
class MaskSpec:
    """Which positions of a window were zeroed."""

    length: int              # r, the drawn period
    masked: np.ndarray       # (h,) bool, True where the value was zeroed
    orientation: str


def amplitude_spectrum(x: np.ndarray, source_id: int | None = None) -> Spectrum:
    """Magnitudes of the real FFT of `x`, bins 0 .. floor(h/2)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 2:
        raise DataError(f"amplitude_spectrum needs a 1-d window of length >= 2, got {x.shape}")
    return Spectrum(amplitudes=np.abs(np.fft.rfft(x)), window_len=x.size,
                    source_id=source_id)


def spectrum_similarity(a: Spectrum, b: Spectrum) -> float:
    """Cosine similarity of two amplitude spectra."""
    if a.amplitudes.shape != b.amplitudes.shape:
        raise DataError("spectra of different lengths")
    na = float(np.linalg.norm(a.amplitudes))
    nb = float(np.linalg.norm(b.amplitudes))
    if na == 0.0 or nb == 0.0:
        raise NumericError("degenerate spectrum: all-zero amplitudes")
    return float(np.dot(a.amplitudes, b.amplitudes) / (na * nb))


def dominant_periods(history: np.ndarray, window_len: int, k: int = 3,
                     m: int = 4) -> PeriodSet:
    """Extract up to `k` dominant periods from recent history.

    Takes the most recent (up to `m`) non-overlapping windows of length
    `window_len` from `history`, finds the pair with the highest spectrum
    similarity, merges that pair bin-wise by maximum amplitude, and returns
    the periods of the top-k non-DC bins. Periods are round(h / bin),
    clamped into [2, h].
    """
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 1:
        raise DataError("history must be 1-d")
    h = window_len
    n_fit = min(m, history.size // h)
    if n_fit < 2:
        raise DataError(
            f"insufficient history: need >= {2 * h} points, got {history.size}")
    if k < 1 or k > h // 2:
        raise DataError(f"top-k of {k} outside [1, {h // 2}] for window {h}")
    specs = []
    for i in range(n_fit):
        stop = history.size - i * h
        specs.append(amplitude_spectrum(history[stop - h: stop], source_id=i))
    best, best_pair = -np.inf, (0, 1)
    for i in range(n_fit):
        for j in range(i + 1, n_fit):
            s = spectrum_similarity(specs[i], specs[j])
            if s > best:
                best, best_pair = s, (i, j)
    merged = np.maximum(specs[best_pair[0]].amplitudes, specs[best_pair[1]].amplitudes)
    return top_k_periods(merged, h, k)


def top_k_periods(amplitudes: np.ndarray, h: int, k: int) -> PeriodSet:
    body = amplitudes[1:]  # DC carries no period information
    # Stable order: descending amplitude, then lower bin index.
    order = np.lexsort((np.arange(1, body.size + 1), -body))[:k]
    bins = [int(b) + 1 for b in order]
    periods = [int(min(h, max(2, round(h / b)))) for b in bins]
    return PeriodSet(periods=periods, bins=bins,
                     amplitudes=[float(body[b - 1]) for b in bins])


def adaptive_mask(x: np.ndarray, periods: PeriodSet, rng: np.random.Generator,
                  orientation: str = "zero_tail") -> tuple[np.ndarray, MaskSpec]:
    """Zero a contiguous stretch of `x` whose length is a drawn period.

    The default orientation hides the final r points, the presumed
    reaction-time interval before a developing anomaly; `keep_tail` flips
    the convention and hides the history instead.
    """
    x = np.asarray(x, dtype=np.float64)
    h = x.size
    if not periods.periods:
        raise DataError("empty period set")
    if orientation not in ("zero_tail", "keep_tail"):
        raise DataError(f"unknown mask orientation '{orientation}'")
    r = periods.periods[int(rng.integers(0, len(periods.periods)))]
    if not 1 <= r <= h:
        raise DataError(f"mask length {r} outside [1, {h}]")
    masked = np.zeros(h, dtype=bool)
    if orientation == "zero_tail":
        masked[h - r:] = True
    else:
        masked[: h - r] = True
    xm = np.where(masked, 0.0, x)
    return xm, MaskSpec(length=r, masked=masked, orientation=orientation)


@dataclass
class PatchSet:
    """The same window cut into patches at every scale.

    Scale i uses patch length base_patch * 2**i, so each coarser patch is
    the concatenation of two adjacent finer ones. The window is padded at
    its end by edge replication to a multiple of the largest patch.
    """

    scales: list[np.ndarray]   # scale i: (N_i, P_i)
    base_patch: int
    window_len: int
    padded_len: int

    @property
    def n_scales(self) -> int:
        return len(self.scales)


def padded_length(h: int, base_patch: int, n_scales: int) -> int:
    unit = base_patch * (1 << (n_scales - 1))
    return ((h + unit - 1) // unit) * unit


def _validate_patching(h: int, base_patch: int, n_scales: int) -> None:
    if base_patch < 1 or n_scales < 1:
        raise DataError("base patch and scale count must be >= 1")
    largest = base_patch * (1 << (n_scales - 1))
    if h < largest:
        raise DataError(f"window {h} shorter than largest patch {largest}")


def multiscale_patch(x: np.ndarray, base_patch: int, n_scales: int) -> PatchSet:
    """Cut one window into aligned patch matrices at every scale."""
    x = np.asarray(x, dtype=np.float64)
    h = x.size
    _validate_patching(h, base_patch, n_scales)
    padded = padded_length(h, base_patch, n_scales)
    xp = np.pad(x, (0, padded - h), mode="edge")
    scales = [xp.reshape(-1, base_patch * (1 << i)) for i in range(n_scales)]
    return PatchSet(scales=scales, base_patch=base_patch, window_len=h,
                    padded_len=padded)


def multiscale_patch_batch(x: np.ndarray, base_patch: int,
                           n_scales: int) -> list[np.ndarray]:
    """Patch a whole (S, h) batch at once; returns one (S, N_i, P_i) per scale."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DataError(f"expected (batch, window) input, got shape {x.shape}")
    s, h = x.shape
    _validate_patching(h, base_patch, n_scales)
    padded = padded_length(h, base_patch, n_scales)
    xp = np.pad(x, ((0, 0), (0, padded - h)), mode="edge")
    return [xp.reshape(s, -1, base_patch * (1 << i)) for i in range(n_scales)]
