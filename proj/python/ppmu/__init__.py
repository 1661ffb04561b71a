"""Uncertainty-aware remaining-time and outcome prediction."""

from ._core import (
    ConfigError,
    DataError,
    DimensionError,
    Model,
    NumericError,
    RngStream,
    __version__,
    auc_roc,
    calibrate,
    classification_uncertainty,
    load_model,
    mae,
    retention_auc,
    retention_mae,
    synth_1d,
    train_prefixes,
    train_xy,
    ts_baseline,
)

__all__ = [
    "ConfigError",
    "DataError",
    "DimensionError",
    "Model",
    "NumericError",
    "RngStream",
    "__version__",
    "auc_roc",
    "calibrate",
    "classification_uncertainty",
    "load_model",
    "mae",
    "retention_auc",
    "retention_mae",
    "synth_1d",
    "train_prefixes",
    "train_xy",
    "ts_baseline",
]
