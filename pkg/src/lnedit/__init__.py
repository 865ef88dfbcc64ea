"""Lifelong-normalization editing: running gradient statistics, whitening and ridge updates."""

from .config import ExperimentConfig, load_config, parse_config_text
from .diagnostics import CSV_COLUMNS, StepRecord, warmup_curve_shift
from .editor import EditBatch, EditorConfig, Mode, UpdateMatrix, solve_update
from .errors import (
    CheckpointError,
    ConfigError,
    DimensionError,
    LneditError,
    NumericalError,
    TraceError,
)
from .experiment import RunReport, edit_step, run_experiment
from .niw import DiagStats, NiwState, init_prior, niw_update, observe, posterior_estimates
from .whitening import FloorConfig, WhiteningTransform, build_transform, whiten

__all__ = [
    "CSV_COLUMNS", "CheckpointError", "ConfigError", "DiagStats", "DimensionError", "EditBatch",
    "EditorConfig", "ExperimentConfig", "FloorConfig", "LneditError", "Mode", "NiwState",
    "NumericalError", "RunReport", "StepRecord", "TraceError", "UpdateMatrix",
    "WhiteningTransform", "build_transform", "edit_step", "init_prior", "load_config",
    "niw_update", "observe", "parse_config_text", "posterior_estimates", "run_experiment",
    "solve_update", "warmup_curve_shift", "whiten",
]
