"""Plain-text run configuration: INI sections, typed keys, strict schema.

Every command reads one config file; command-line `--set section.key=value`
overrides individual entries. Unknown sections or keys are rejected so a
typo cannot silently fall back to a default. The fully resolved
configuration is echoed next to every artifact for reproducibility.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field

from .errors import ConfigError
from .losses import LossConfig
from .model import ModelConfig
from .negatives import NegativeGenConfig
from .pipeline import SynthScenario, WindowConfig
from .scoring import ThresholdPolicy
from .trainer import AblationFlags, TrainConfig

# Schema: section -> key -> (type tag, default). 'auto' floats may be None.
_SCHEMA: dict[str, dict[str, tuple[str, object]]] = {
    "run": {
        "out_dir": ("str", "out"),
        "seed": ("int", 7),
        "anomaly_ratio": ("float", 0.05),
    },
    "data": {
        "path": ("str", "series.csv"),
        "has_labels": ("bool", True),
    },
    "window": {
        "lookback": ("int", 32),
        "lookforward": ("int", 4),
        "stride": ("int", 1),
        "task": ("str", "detection"),
    },
    "model": {
        "d_model": ("int", 32),
        "n_blocks": ("int", 3),
        "n_heads": ("int", 4),
        "patch_size": ("int", 2),
        "n_scales": ("int", 3),
        "dropout": ("float", 0.1),
        "share_scales": ("bool", False),
        "ffn_dim": ("int", 0),
    },
    "train": {
        "lr": ("float", 1e-5),
        "max_epochs": ("int", 100),
        "patience": ("int", 3),
        "batch_size": ("int", 8),
        "stride": ("int", 4),
        "valid_seed": ("int", 9001),
        "split_ratio": ("float", 0.8),
        "mask_top_k": ("int", 3),
        "mask_history": ("int", 4),
        "mask_orientation": ("str", "zero_tail"),
        "multi_scale": ("bool", True),
        "adaptive_mask": ("bool", True),
        "reconstruction": ("bool", True),
        "contrastive": ("bool", True),
        "generation": ("bool", True),
    },
    "loss": {
        "lambda_con": ("float", 1.0),
        "lambda_rec": ("float", 1.0),
        "normalize_reps": ("bool", True),
        "reaction_weight": ("float", 2.0),
        "point_same_view": ("bool", True),
    },
    "negatives": {
        "strategy": ("str", "mixed"),
        "noise_ratio": ("float", 0.5),
        "sigma": ("float", 0.5),
        "shift_delta": ("int", 0),
        "compress_factor": ("int", 2),
    },
    "threshold": {
        "kind": ("str", "quantile"),
        "q": ("optfloat", None),
        "value": ("optfloat", None),
    },
    "synth": {
        "length": ("int", 4096),
        "channels": ("int", 3),
        "base_periods": ("intlist", (16, 24, 32)),
        "amplitude": ("float", 1.0),
        "noise_level": ("float", 0.08),
        "n_events": ("int", 6),
        "event_len_min": ("int", 24),
        "event_len_max": ("int", 40),
        "precursor_len": ("int", 16),
        "precursor_types": ("strlist", ("drift", "variance", "frequency")),
        "drift": ("float", 2.5),
        "variance_factor": ("float", 6.0),
        "frequency_factor": ("float", 2.0),
        "anomaly_magnitude": ("float", 4.0),
        "anomaly_noise_factor": ("float", 4.0),
        "start_margin": ("int", 300),
        "min_gap": ("int", 150),
    },
}


def _parse_value(tag: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if tag == "int":
            return int(raw)
        if tag == "float":
            return float(raw)
        if tag == "optfloat":
            return None if raw.lower() in ("auto", "none", "") else float(raw)
        if tag == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if tag == "intlist":
            return tuple(int(x) for x in raw.split(",") if x.strip())
        if tag == "strlist":
            return tuple(x.strip() for x in raw.split(",") if x.strip())
        return raw
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _format_value(tag: str, value) -> str:
    if value is None:
        return "auto"
    if tag == "bool":
        return "true" if value else "false"
    if tag in ("intlist", "strlist"):
        return ",".join(str(x) for x in value)
    if tag == "float" or tag == "optfloat":
        return repr(float(value))
    return str(value)


@dataclass
class RunConfig:
    """All resolved settings for one run, as a flat section->key dict."""

    values: dict[str, dict[str, object]] = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict[str, object]:
        return self.values[section]

    # -- constructors for the typed sub-configs ----------------------------

    def window_config(self, task: str | None = None) -> WindowConfig:
        w = self.values["window"]
        return WindowConfig(lookback=w["lookback"], lookforward=w["lookforward"],
                            stride=w["stride"], task=task or w["task"])

    def model_config(self) -> ModelConfig:
        m = dict(self.values["model"])
        return ModelConfig(window=self.values["window"]["lookback"], **m)

    def train_config(self) -> TrainConfig:
        t = dict(self.values["train"])
        flags = AblationFlags(
            multi_scale=t.pop("multi_scale"), adaptive_mask=t.pop("adaptive_mask"),
            reconstruction=t.pop("reconstruction"), contrastive=t.pop("contrastive"),
            generation=t.pop("generation"))
        t.pop("split_ratio")
        return TrainConfig(seed=self.values["run"]["seed"], ablations=flags, **t)

    def loss_config(self) -> LossConfig:
        mode = "interval" if self.values["window"]["task"] == "prediction" else "point"
        return LossConfig(mode=mode, **self.values["loss"])

    def negatives_config(self) -> NegativeGenConfig:
        n = dict(self.values["negatives"])
        if n["shift_delta"] == 0:
            n["shift_delta"] = None
        return NegativeGenConfig(**n)

    def threshold_policy(self) -> ThresholdPolicy:
        t = self.values["threshold"]
        return ThresholdPolicy(kind=t["kind"], q=t["q"], value=t["value"])

    def synth_scenario(self) -> SynthScenario:
        return SynthScenario(**self.values["synth"])

    def dump(self) -> str:
        """Render the effective configuration in schema order."""
        lines = []
        for section, keys in _SCHEMA.items():
            lines.append(f"[{section}]")
            for key, (tag, _) in keys.items():
                lines.append(f"{key} = {_format_value(tag, self.values[section][key])}")
            lines.append("")
        return "\n".join(lines)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dump())


def load_config(path: str | None, overrides: list[str] | None = None) -> RunConfig:
    """Read a config file, apply --set overrides, validate against the schema."""
    parser = configparser.ConfigParser(interpolation=None)
    if path is not None:
        read = parser.read(path, encoding="utf-8")
        if not read:
            raise ConfigError(f"cannot read config file '{path}'")
    raw: dict[str, dict[str, str]] = {s: dict(parser.items(s)) for s in parser.sections()}
    for item in overrides or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override '{item}' is not of the form section.key=value")
        section, dot, name = key.strip().partition(".")
        if not dot:
            raise ConfigError(f"override key '{key.strip()}' needs a section prefix")
        raw.setdefault(section, {})[name.strip()] = value.strip()

    values: dict[str, dict[str, object]] = {}
    for section, keys in _SCHEMA.items():
        values[section] = {}
        for key, (tag, default) in keys.items():
            if section in raw and key in raw[section]:
                values[section][key] = _parse_value(tag, raw[section].pop(key),
                                                    f"[{section}] {key}")
            else:
                values[section][key] = default
    for section, leftover in raw.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section '[{section}]'")
        if leftover:
            name = sorted(leftover)[0]
            raise ConfigError(f"unknown config key '{name}' in section [{section}]")
    cfg = RunConfig(values=values)
    _cross_validate(cfg)
    return cfg


def _cross_validate(cfg: RunConfig) -> None:
    w = cfg.values["window"]
    if w["task"] not in ("detection", "prediction"):
        raise ConfigError(f"unknown task '{w['task']}'")
    m = cfg.values["model"]
    largest = m["patch_size"] * (1 << (m["n_scales"] - 1))
    if w["lookback"] < largest:
        raise ConfigError(
            f"lookback {w['lookback']} shorter than largest patch {largest}")
    t = cfg.values["train"]
    if not 0.0 < t["split_ratio"] < 1.0:
        raise ConfigError(f"split_ratio {t['split_ratio']} outside (0, 1)")
    th = cfg.values["threshold"]
    if th["kind"] not in ("quantile", "fixed"):
        raise ConfigError(f"unknown threshold kind '{th['kind']}'")
    if th["kind"] == "fixed" and th["value"] is None:
        raise ConfigError("fixed threshold needs threshold.value")
    ratio = cfg.values["run"]["anomaly_ratio"]
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"anomaly_ratio {ratio} outside [0, 1]")
