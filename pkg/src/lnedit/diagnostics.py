"""Per-step measurements and run-level aggregates."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigError, DimensionError

# mu_drift is |mu_hat_t - mu_hat_{t-1}|_2; sigma_drift uses the Frobenius norm;
# cov_spec_err uses the spectral norm.
CSV_COLUMNS = (
    "step", "phase", "mean_mse", "cov_spec_err", "mu_drift", "sigma_drift",
    "update_fro_norm", "cos_prev", "cond_number", "lambda_max", "whiten_identity_dev",
    "efficacy", "retention", "bias_norm", "spec_norm",
)


@dataclass
class StepRecord:
    step: int
    phase: str
    mean_mse: Optional[float] = None
    cov_spec_err: Optional[float] = None
    mu_drift: Optional[float] = None
    sigma_drift: Optional[float] = None
    update_fro_norm: Optional[float] = None
    cos_prev: Optional[float] = None
    cond_number: Optional[float] = None
    lambda_max: Optional[float] = None
    whiten_identity_dev: Optional[float] = None
    efficacy: Optional[float] = None
    retention: Optional[float] = None
    bias_norm: Optional[float] = None
    spec_norm: Optional[float] = None

    def as_row(self) -> dict:
        return asdict(self)


assert tuple(f.name for f in fields(StepRecord)) == CSV_COLUMNS


def mean_mse(mu_hat, mu_true) -> float:
    a = np.asarray(mu_hat, dtype=np.float64)
    b = np.asarray(mu_true, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    return float(diff @ diff)


def _symmetric(x, name):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise DimensionError(f"{name} must be square, got {x.shape}")
    if np.max(np.abs(x - x.T), initial=0.0) > 1e-8:
        raise ValueError(f"{name} is not symmetric")
    return x


def cov_spectral_error(sigma_hat, sigma_true) -> float:
    """Spectral norm of ``sigma_hat - sigma_true`` (largest absolute eigenvalue)."""
    a = _symmetric(sigma_hat, "sigma_hat")
    b = _symmetric(sigma_true, "sigma_true")
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    return float(np.max(np.abs(np.linalg.eigvalsh(0.5 * (diff + diff.T)))))


def cosine_adjacent(delta_t, delta_prev) -> Optional[float]:
    """Frobenius cosine between consecutive updates; ``None`` if either is zero."""
    if delta_t is None or delta_prev is None:
        return None
    a = np.asarray(delta_t, dtype=np.float64)
    b = np.asarray(delta_prev, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return None
    return float(np.clip(np.vdot(a, b) / (na * nb), -1.0, 1.0))


def whitened_identity_deviation(scale, sigma) -> float:
    """``|S Sigma S^T - I|_2``: how far the map ``S`` is from whitening ``Sigma``."""
    s = np.asarray(scale)
    m = s @ np.asarray(sigma) @ s.T
    m = 0.5 * (m + m.T)
    return float(np.max(np.abs(np.linalg.eigvalsh(m - np.eye(m.shape[0])))))


def batch_identity_deviation(normalized) -> Optional[float]:
    """Same deviation measured on the sample covariance of a normalized batch."""
    x = np.asarray(normalized)
    if x.shape[1] < 2:
        return None
    c = np.cov(x, ddof=1)
    return whitened_identity_deviation(np.eye(x.shape[0]), np.atleast_2d(c))


def moving_average(x, window: int = 20) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size < window:
        return np.array([x.mean()]) if x.size else x
    c = np.cumsum(np.concatenate([[0.0], x]))
    return (c[window:] - c[:-window]) / window


def column(records: Sequence[StepRecord], name: str, phase: Optional[str] = None) -> np.ndarray:
    """One CSV column as a float array (absent values become NaN)."""
    vals = [getattr(r, name) for r in records if phase is None or r.phase == phase]
    return np.array([np.nan if v is None else v for v in vals], dtype=np.float64)


class CurveShift(NamedTuple):
    fraction_le: float
    median_ratio: float
    ratios: np.ndarray
    r: int
    steps: int


def warmup_curve_shift(report_warm, report_cold) -> CurveShift:
    """Compare target-phase MSE of a warm-started run against a cold start.

    Counts the target steps where the warm run is at least as accurate at
    the same step, and the ratio of warm MSE at step ``t`` to cold MSE at
    step ``r + t`` (defined for ``t <= T - r``).
    """
    if report_warm.config.target_signature() != report_cold.config.target_signature():
        raise ConfigError("warm and cold runs differ in their target-phase configuration")
    warm = column(report_warm.records, "mean_mse", "target")
    cold = column(report_cold.records, "mean_mse", "target")
    if warm.size != cold.size or warm.size == 0:
        raise ConfigError("warm and cold runs must have the same nonzero number of target steps")
    if np.isnan(warm).any() or np.isnan(cold).any():
        raise ConfigError("curve shift needs ground-truth MSE on every target step")
    r = int(report_warm.config.r) - int(report_cold.config.r)
    if r < 0:
        raise ConfigError("the warm run must have at least as many warm-up steps as the cold run")
    fraction = float(np.mean(warm <= cold))
    k = warm.size - r
    ratios = warm[:k] / cold[r:] if k > 0 else np.array([])
    median = float(np.median(ratios)) if ratios.size else math.nan
    return CurveShift(fraction, median, ratios, r, int(warm.size))


def summarize(records: Sequence[StepRecord], warmup_updates: int) -> dict:
    """Run-level aggregates written to ``summary.json``."""
    target = [r for r in records if r.phase == "target"]
    norms = column(target, "update_fro_norm")
    norms = norms[~np.isnan(norms)]
    cos = column(target, "cos_prev")
    half = cos[len(cos) // 2:]
    half = half[~np.isnan(half)]
    mse = column(target, "mean_mse")

    def _f(x):
        return None if x is None or not np.isfinite(x) else float(x)

    return {
        "steps_total": len(records),
        "steps_target": len(target),
        "warmup_updates_applied": int(warmup_updates),
        "final_mean_mse": _f(mse[-1]) if mse.size else None,
        "mean_abs_cos_second_half": _f(np.mean(np.abs(half))) if half.size else None,
        "max_update_fro_norm": _f(norms.max()) if norms.size else None,
        "median_update_fro_norm": _f(np.median(norms)) if norms.size else None,
    }
