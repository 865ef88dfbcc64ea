"""Centering-and-whitening transforms built from posterior estimates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DimensionError, NumericalError

DEFAULT_ABS_FLOOR = 1e-10
DEFAULT_REL_FLOOR = 1e-8


@dataclass(frozen=True)
class FloorConfig:
    abs_floor: float = DEFAULT_ABS_FLOOR
    rel_floor: float = DEFAULT_REL_FLOOR

    def __post_init__(self):
        for name in ("abs_floor", "rel_floor"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be > 0, got {value}", key=name)


@dataclass(frozen=True)
class WhiteningTransform:
    """Frozen ``(mu_hat, Sigma_hat^{-1/2})`` pair plus flooring report."""

    mu_hat: np.ndarray
    w: np.ndarray
    floored_count: int
    lambda_max: float
    lambda_min_raw: float
    eigvals: np.ndarray  # floored spectrum of sigma_hat, ascending
    eigvecs: np.ndarray

    @property
    def d(self) -> int:
        return self.mu_hat.shape[0]


class SpectralReport(NamedTuple):
    condition_number: float
    lambda_max: float
    lambda_min: float


def _check_symmetric_finite(sigma) -> np.ndarray:
    s = np.asarray(sigma, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {s.shape}")
    if not np.all(np.isfinite(s)):
        raise NumericalError("covariance contains non-finite entries")
    return 0.5 * (s + s.T)


def _fix_signs(q: np.ndarray) -> np.ndarray:
    """Make the first nonzero component of every eigenvector positive."""
    q = q.copy()
    for j in range(q.shape[1]):
        nz = np.flatnonzero(q[:, j])
        if nz.size and q[nz[0], j] < 0:
            q[:, j] = -q[:, j]
    return q


def _eigh(s: np.ndarray):
    try:
        lam, q = np.linalg.eigh(s)
    except np.linalg.LinAlgError as exc:
        diag = np.diag(s)
        raise NumericalError(
            f"eigendecomposition failed ({exc}); diag range "
            f"[{diag.min():.3e}, {diag.max():.3e}], frobenius {np.linalg.norm(s):.3e}"
        ) from exc
    return lam, _fix_signs(q)


def floor_eigenvalues(lam: np.ndarray, floor: FloorConfig) -> tuple[np.ndarray, int]:
    lam_max = float(lam.max())
    threshold = max(floor.abs_floor, floor.rel_floor * lam_max)
    floored = lam < threshold
    return np.where(floored, threshold, lam), int(floored.sum())


def build_transform(mu_hat, sigma_hat, floor: FloorConfig | None = None) -> WhiteningTransform:
    """Eigendecompose ``sigma_hat``, floor its spectrum and form the inverse square root."""
    floor = floor or FloorConfig()
    s = _check_symmetric_finite(sigma_hat)
    mu = np.asarray(mu_hat, dtype=np.float64)
    if mu.shape != (s.shape[0],):
        raise DimensionError(f"mean shape {mu.shape} does not match covariance {s.shape}")
    if not np.all(np.isfinite(mu)):
        raise NumericalError("mean contains non-finite entries")
    lam, q = _eigh(s)
    lam_f, count = floor_eigenvalues(lam, floor)
    w = (q * lam_f**-0.5) @ q.T
    w = 0.5 * (w + w.T)
    return WhiteningTransform(
        mu_hat=mu.copy(),
        w=w,
        floored_count=count,
        lambda_max=float(lam.max()),
        lambda_min_raw=float(lam.min()),
        eigvals=lam_f,
        eigvecs=q,
    )


def whiten(t: WhiteningTransform, v) -> np.ndarray:
    """Return ``w (v - mu_hat)``; ``v`` may be one vector or a ``d x n`` matrix of columns."""
    x = np.asarray(v, dtype=np.float64)
    if x.shape[0] != t.d or x.ndim > 2:
        raise DimensionError(f"cannot whiten shape {x.shape} with a {t.d}-dim transform")
    centered = x - (t.mu_hat if x.ndim == 1 else t.mu_hat[:, None])
    return t.w @ centered


def spectral_report(sigma_hat, abs_floor: float = DEFAULT_ABS_FLOOR) -> SpectralReport:
    """Condition number and extreme eigenvalues (before any flooring)."""
    s = _check_symmetric_finite(sigma_hat)
    try:
        lam = np.linalg.eigvalsh(s)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    return report_from_eigenvalues(lam, abs_floor)


def report_from_eigenvalues(lam, abs_floor: float = DEFAULT_ABS_FLOOR) -> SpectralReport:
    lam_max = float(np.max(lam))
    lam_min = float(np.min(lam))
    return SpectralReport(lam_max / max(lam_min, abs_floor), lam_max, lam_min)
