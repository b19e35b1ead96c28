"""tsadkit: multi-scale reconstructive-contrastive anomaly prediction and detection."""

from .errors import ConfigError, DataError, NumericError, TsadkitError
from .metrics import EvalReport, affiliation_prf1, classic_prf1, roc_auc
from .model import ModelConfig, MultiScaleModel
from .pipeline import (SynthScenario, TimeSeries, WindowConfig, load_csv,
                       save_csv, slide_windows, split_train_valid, synth_generate)
from .scoring import ScoreCalibration, Scorer, ThresholdPolicy
from .trainer import AblationFlags, TrainConfig, TrainState, fit

__version__ = "0.1.0"

__all__ = [
    "AblationFlags",
    "ConfigError",
    "DataError",
    "EvalReport",
    "ModelConfig",
    "MultiScaleModel",
    "NumericError",
    "ScoreCalibration",
    "Scorer",
    "SynthScenario",
    "ThresholdPolicy",
    "TimeSeries",
    "TrainConfig",
    "TrainState",
    "TsadkitError",
    "WindowConfig",
    "affiliation_prf1",
    "classic_prf1",
    "fit",
    "load_csv",
    "roc_auc",
    "save_csv",
    "slide_windows",
    "split_train_valid",
    "synth_generate",
    "__version__",
]
