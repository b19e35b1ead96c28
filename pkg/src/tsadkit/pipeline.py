"""Data pipeline: series I/O, windowing, splits, and synthetic scenarios.

A series is a (T, c) float64 matrix with optional per-point binary labels.
Windowing follows the look-back/look-forward convention used throughout the
package: a window is the h points ending at time t, and in the prediction
task its label says whether any anomaly occurs in the next f points.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .rng import make_rng

STD_FLOOR = 1e-8

PRECURSOR_TYPES = ("drift", "variance", "frequency")


@dataclass
class TimeSeries:
    """A multivariate series with optional point labels."""

    values: np.ndarray                  # (T, c) float64
    labels: np.ndarray | None = None    # (T,) ints in {0, 1}
    channel_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"series values must be 2-d, got shape {self.values.shape}")
        t, c = self.values.shape
        if t < 1 or c < 1:
            raise DataError("empty series")
        if not np.all(np.isfinite(self.values)):
            raise DataError("series contains non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels)
            if self.labels.shape != (t,):
                raise DataError(
                    f"labels shape {self.labels.shape} does not match length {t}")
            if not np.isin(self.labels, (0, 1)).all():
                raise DataError("labels must be 0 or 1")
            self.labels = self.labels.astype(np.int64)
        if not self.channel_names:
            self.channel_names = [f"ch{i}" for i in range(c)]
        if len(self.channel_names) != c:
            raise DataError("channel name count does not match channel count")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]


@dataclass
class WindowConfig:
    """Sliding-window geometry for one task."""

    lookback: int           # h
    lookforward: int = 4    # f, ignored by the detection task
    stride: int = 1
    task: str = "detection"

    def __post_init__(self):
        if self.task not in ("detection", "prediction"):
            raise DataError(f"unknown task '{self.task}'")
        if self.lookback < 1:
            raise DataError("lookback must be >= 1")
        if self.lookforward < 0:
            raise DataError("lookforward must be >= 0")
        if self.stride < 1:
            raise DataError("stride must be >= 1")

    @property
    def horizon(self) -> int:
        """Points past the window end a task needs inside the series."""
        return self.lookforward if self.task == "prediction" else 0


@dataclass
class WindowBatch:
    """Stacked windows plus their end times and task labels."""

    windows: np.ndarray            # (B, h, c)
    end_times: np.ndarray          # (B,)
    labels: np.ndarray | None      # prediction: (B,); detection: (B, h)
    task: str


def load_csv(path: str, has_labels: bool = False) -> TimeSeries:
    """Read a series from CSV: header of channel names, one row per step.

    With `has_labels` the final column must be named 'label' and contain
    only 0/1 values.
    """
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise DataError(f"cannot read '{path}': {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: empty series")
    width = len(header)
    if has_labels:
        if width < 2 or header[-1] != "label":
            raise DataError(f"{path}: expected a final 'label' column")
        names = header[:-1]
    else:
        names = header
    values = np.empty((len(rows), len(names)), dtype=np.float64)
    labels = np.empty(len(rows), dtype=np.int64) if has_labels else None
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {i + 2} has {len(row)} fields, expected {width}")
        try:
            parsed = [float(x) for x in row]
        except ValueError as exc:
            raise DataError(f"{path}: row {i + 2}: {exc}") from None
        values[i] = parsed[: len(names)]
        if has_labels:
            lab = parsed[-1]
            if lab not in (0.0, 1.0):
                raise DataError(f"{path}: row {i + 2}: label {lab!r} is not 0 or 1")
            labels[i] = int(lab)
    return TimeSeries(values=values, labels=labels, channel_names=names)


def save_csv(series: TimeSeries, path: str) -> None:
    """Write a series with shortest-round-trip float formatting."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        header = list(series.channel_names)
        if series.labels is not None:
            header.append("label")
        writer.writerow(header)
        for i in range(series.length):
            row = [repr(float(v)) for v in series.values[i]]
            if series.labels is not None:
                row.append(str(int(series.labels[i])))
            writer.writerow(row)


def instance_normalize(window: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalize each channel of one (h, c) window to zero mean, unit std.

    Uses the population standard deviation with a small floor so constant
    channels normalize to zeros instead of dividing by zero. Returns the
    normalized window and the per-channel means and (floored) stds.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim == 1:
        window = window[:, None]
    mean = window.mean(axis=0)
    std = np.maximum(window.std(axis=0), STD_FLOOR)
    return (window - mean) / std, mean, std


def denormalize(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    return x * std + mean


def slide_windows(series: TimeSeries, cfg: WindowConfig) -> WindowBatch:
    """Extract windows ending at t = h-1, h-1+stride, ... with task labels.

    Prediction windows are labeled 1 when any anomaly falls in (t, t+f];
    detection windows carry the per-point labels of their own span. Label
    arrays are None when the series is unlabeled.
    """
    t_len = series.length
    h, f = cfg.lookback, cfg.horizon
    if t_len < h + f:
        raise DataError(
            f"series of length {t_len} shorter than one window (h={h}, horizon={f})")
    ends = np.arange(h - 1, t_len - f, cfg.stride)
    windows = np.stack([series.values[e - h + 1: e + 1] for e in ends])
    labels = None
    if series.labels is not None:
        if cfg.task == "prediction":
            labels = np.array(
                [series.labels[e + 1: e + 1 + cfg.lookforward].max(initial=0)
                 for e in ends], dtype=np.int64)
        else:
            labels = np.stack([series.labels[e - h + 1: e + 1] for e in ends])
    return WindowBatch(windows=windows, end_times=ends, labels=labels, task=cfg.task)


def split_train_valid(series: TimeSeries, ratio: float = 0.8,
                      min_len: int = 1) -> tuple[TimeSeries, TimeSeries]:
    """Contiguous temporal split: first floor(T * ratio) points train."""
    if not 0.0 < ratio < 1.0:
        raise DataError(f"split ratio {ratio} outside (0, 1)")
    n_train = int(series.length * ratio)
    n_valid = series.length - n_train
    if n_train < min_len or n_valid < min_len:
        raise DataError(
            f"split {n_train}/{n_valid} leaves a partition shorter than {min_len}")

    def piece(lo, hi):
        lab = series.labels[lo:hi] if series.labels is not None else None
        return TimeSeries(values=series.values[lo:hi].copy(),
                          labels=None if lab is None else lab.copy(),
                          channel_names=list(series.channel_names))

    return piece(0, n_train), piece(n_train, series.length)


# ---------------------------------------------------------------------------
# Synthetic scenarios


@dataclass
class PrecursorEvent:
    """One anomaly event and the precursor segment that leads into it."""

    event_start: int
    event_end: int        # exclusive
    precursor_start: int  # precursor spans [precursor_start, event_start)
    precursor_type: str


@dataclass
class SynthScenario:
    """Sinusoidal base signal with precursor-led anomaly events.

    Each event is immediately preceded by a precursor of `precursor_len`
    points that gradually departs from the base behavior; precursor points
    keep label 0 while event points are labeled 1.
    """

    length: int = 4096
    channels: int = 3
    base_periods: tuple[int, ...] = (16, 24, 32)
    amplitude: float = 1.0
    noise_level: float = 0.08
    n_events: int = 6
    event_len_min: int = 24
    event_len_max: int = 40
    precursor_len: int = 16
    precursor_types: tuple[str, ...] = PRECURSOR_TYPES
    drift: float = 2.5
    variance_factor: float = 6.0
    frequency_factor: float = 2.0
    anomaly_magnitude: float = 4.0
    anomaly_noise_factor: float = 4.0
    start_margin: int = 300
    min_gap: int = 150
    events: tuple[tuple[int, int], ...] | None = None  # explicit placement

    def __post_init__(self):
        if self.length < 1 or self.channels < 1:
            raise DataError("scenario needs positive length and channels")
        if self.n_events < 0:
            raise DataError("n_events must be >= 0")
        if self.event_len_min < 1 or self.event_len_max < self.event_len_min:
            raise DataError("invalid event length range")
        if self.precursor_len < 1:
            raise DataError("precursor_len must be >= 1")
        for p in self.precursor_types:
            if p not in PRECURSOR_TYPES:
                raise DataError(f"unknown precursor type '{p}'")
        if self.events is not None:
            prev_end = None
            for start, end in self.events:
                if not 0 <= start < end <= self.length:
                    raise DataError(f"event ({start}, {end}) outside series")
                if prev_end is not None and start < prev_end:
                    raise DataError("overlapping anomaly segments")
                prev_end = end


def _place_events(scn: SynthScenario, rng: np.random.Generator) -> list[tuple[int, int]]:
    """One event per equal slot of the usable range, at a seeded offset."""
    if scn.events is not None:
        return [tuple(e) for e in scn.events]
    if scn.n_events == 0:
        return []
    lead = scn.start_margin + scn.precursor_len
    usable = scn.length - lead - scn.min_gap
    span = usable // scn.n_events
    need = scn.event_len_max + scn.precursor_len + scn.min_gap
    if span < need:
        raise DataError(
            f"cannot place {scn.n_events} events of up to {scn.event_len_max} points "
            f"in a series of length {scn.length}")
    events = []
    for k in range(scn.n_events):
        length = int(rng.integers(scn.event_len_min, scn.event_len_max + 1))
        free = span - length - scn.precursor_len - scn.min_gap
        offset = int(rng.integers(0, free + 1))
        start = lead + k * span + offset
        events.append((start, start + length))
    return events


def synth_generate(scenario: SynthScenario, seed: int) -> tuple[TimeSeries, list[PrecursorEvent]]:
    """Generate a labeled series and its precursor metadata.

    All randomness derives from `seed`; two calls with equal arguments
    produce identical output arrays.
    """
    scn = scenario
    rng = make_rng(seed)
    t_axis = np.arange(scn.length, dtype=np.float64)
    periods = [scn.base_periods[c % len(scn.base_periods)] for c in range(scn.channels)]
    phases = rng.uniform(0.0, 2.0 * np.pi, size=scn.channels)

    phase = np.empty((scn.length, scn.channels))
    for c in range(scn.channels):
        phase[:, c] = 2.0 * np.pi * t_axis / periods[c] + phases[c]

    events = _place_events(scn, rng)
    signs = rng.choice((-1.0, 1.0), size=len(events))
    noise = rng.normal(0.0, 1.0, size=(scn.length, scn.channels))
    noise_scale = np.full(scn.length, scn.noise_level)
    offset = np.zeros(scn.length)
    labels = np.zeros(scn.length, dtype=np.int64)
    meta: list[PrecursorEvent] = []

    for k, (start, end) in enumerate(events):
        p_start = start - scn.precursor_len
        p_type = scn.precursor_types[k % len(scn.precursor_types)]
        ramp = (np.arange(scn.precursor_len) + 0.5) / scn.precursor_len
        if p_type == "drift":
            # Linear ramp whose mean over the segment equals the drift value.
            offset[p_start:start] += signs[k] * 2.0 * scn.drift * ramp
        elif p_type == "variance":
            noise_scale[p_start:start] *= 1.0 + (scn.variance_factor - 1.0) * ramp
        else:
            # Instantaneous frequency climbs toward frequency_factor * base;
            # the phase advances cumulatively so the waveform stays continuous.
            for c in range(scn.channels):
                base_inc = 2.0 * np.pi / periods[c]
                incs = base_inc * (1.0 + (scn.frequency_factor - 1.0) * ramp)
                prev = phase[p_start - 1, c] if p_start > 0 else phases[c] - base_inc
                phase[p_start:start, c] = prev + np.cumsum(incs)
        offset[start:end] += signs[k] * scn.anomaly_magnitude
        noise_scale[start:end] *= scn.anomaly_noise_factor
        labels[start:end] = 1
        meta.append(PrecursorEvent(event_start=start, event_end=end,
                                   precursor_start=p_start, precursor_type=p_type))

    values = scn.amplitude * np.sin(phase) + offset[:, None] + noise * noise_scale[:, None]
    series = TimeSeries(values=values, labels=labels,
                        channel_names=[f"ch{i}" for i in range(scn.channels)])
    return series, meta


def save_precursors(meta: list[PrecursorEvent], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["event_start", "event_end", "precursor_start", "precursor_type"])
        for ev in meta:
            writer.writerow([ev.event_start, ev.event_end, ev.precursor_start,
                             ev.precursor_type])


def load_precursors(path: str) -> list[PrecursorEvent]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:4] != ["event_start", "event_end", "precursor_start", "precursor_type"]:
            raise DataError(f"{path}: not a precursor metadata file")
        return [PrecursorEvent(int(r[0]), int(r[1]), int(r[2]), r[3]) for r in reader]
