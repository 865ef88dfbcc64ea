"""Recursive Normal-Inverse-Wishart tracking of the value-gradient distribution.

The tracker never forgets: every batch is folded into the posterior and the
posterior becomes the next prior.  Hidden states only get per-dimension
running moments (``DiagStats``), since they are standardized, not whitened.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, DimensionError


def _as_samples(samples, d=None) -> np.ndarray:
    """Coerce a batch to an ``(n, d)`` float64 array (one sample per row)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None] if d == 1 else x[None, :]
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-D batch of samples, got shape {x.shape}")
    if x.shape[0] == 0:
        raise DimensionError("empty batch")
    if d is not None and x.shape[1] != d:
        raise DimensionError(f"sample dimension {x.shape[1]} does not match {d}")
    return x


@dataclass(frozen=True)
class DiagStats:
    """Element-wise running mean and sum of squared deviations."""

    mean: np.ndarray
    ssd: np.ndarray
    count: int = 0

    @classmethod
    def zeros(cls, dim: int) -> "DiagStats":
        return cls(np.zeros(dim), np.zeros(dim), 0)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def std(self, floor: float = 1e-8) -> np.ndarray:
        """Running standard deviation ``sqrt(S / (N - 1))``, floored."""
        denom = max(self.count - 1, 1)
        return np.maximum(np.sqrt(self.ssd / denom), floor)


def diag_update(stats: DiagStats, batch) -> DiagStats:
    """Fold a batch (rows are samples) into the running moments.

    Mean shift ``delta = batch_mean - m``; then
    ``m += n/N * delta`` and ``S += n*Var(batch) + N_prev*n/N * delta**2``.
    """
    x = _as_samples(batch, stats.dim)
    n = x.shape[0]
    n_prev = stats.count
    n_new = n_prev + n
    batch_mean = x.mean(axis=0)
    delta = batch_mean - stats.mean
    mean = stats.mean + (n / n_new) * delta
    within = ((x - batch_mean) ** 2).sum(axis=0)
    ssd = stats.ssd + within + (n_prev * n / n_new) * delta**2
    return DiagStats(mean, np.maximum(ssd, 0.0), n_new)


class BatchSummary(NamedTuple):
    n: int
    v_bar: np.ndarray
    scatter: np.ndarray


def summarize_batch(samples, d: int | None = None) -> BatchSummary:
    """Sample mean and scatter matrix ``sum (v - v_bar)(v - v_bar)^T``."""
    x = _as_samples(samples, d)
    v_bar = x.mean(axis=0)
    centered = x - v_bar
    scatter = centered.T @ centered
    scatter = 0.5 * (scatter + scatter.T)
    return BatchSummary(x.shape[0], v_bar, scatter)


@dataclass(frozen=True)
class NiwState:
    """NIW hyperparameters ``(m, kappa, psi, nu)`` plus hidden-state moments.

    ``kappa`` and ``nu`` are kept as floats so fractional priors work.
    """

    m: np.ndarray
    kappa: float
    psi: np.ndarray
    nu: float
    h_stats: DiagStats = field(default_factory=lambda: DiagStats.zeros(0))

    @property
    def d(self) -> int:
        return self.m.shape[0]

    @property
    def d_h(self) -> int:
        return self.h_stats.dim


def init_prior(d: int, epsilon_0: float, d_h: int = 0) -> NiwState:
    """Non-informative prior: ``m = 0, kappa = 0, psi = epsilon_0 * I, nu = 0``."""
    if int(d) != d or d < 1:
        raise ConfigError(f"dimension must be a positive integer, got {d}", key="d")
    if not (np.isfinite(epsilon_0) and epsilon_0 > 0):
        raise ConfigError(f"epsilon_0 must be > 0, got {epsilon_0}", key="epsilon_0")
    if int(d_h) != d_h or d_h < 0:
        raise ConfigError(f"hidden dimension must be >= 0, got {d_h}", key="d_h")
    d = int(d)
    return NiwState(
        m=np.zeros(d),
        kappa=0.0,
        psi=float(epsilon_0) * np.eye(d),
        nu=0.0,
        h_stats=DiagStats.zeros(int(d_h)),
    )


def niw_update(state: NiwState, batch: BatchSummary) -> NiwState:
    """Conjugate posterior after observing one batch of value gradients."""
    if batch.v_bar.shape != (state.d,):
        raise DimensionError(
            f"batch dimension {batch.v_bar.shape[0]} does not match state dimension {state.d}"
        )
    n = float(batch.n)
    kappa = state.kappa + n
    nu = state.nu + n
    m = (state.kappa * state.m + n * batch.v_bar) / kappa
    shift = batch.v_bar - state.m
    psi = state.psi + batch.scatter + (state.kappa * n / kappa) * np.outer(shift, shift)
    psi = 0.5 * (psi + psi.T)
    return replace(state, m=m, kappa=kappa, psi=psi, nu=nu)


class PosteriorEstimate(NamedTuple):
    mu_hat: np.ndarray
    sigma_hat: np.ndarray
    clamped: bool


def posterior_estimates(state: NiwState) -> PosteriorEstimate:
    """Posterior expectations of the mean and covariance.

    The covariance denominator ``nu - d - 1`` is clamped at 1 while the
    posterior is still too weak for the expectation to exist; ``clamped``
    reports when that happened.
    """
    raw = state.nu - state.d - 1
    denom = max(raw, 1.0)
    sigma = state.psi / denom
    sigma = 0.5 * (sigma + sigma.T)
    return PosteriorEstimate(state.m.copy(), sigma, raw < 1.0)


def observe(state: NiwState, v_samples, h_samples=None) -> NiwState:
    """Update both the NIW posterior (from ``v``) and the hidden-state moments."""
    new = niw_update(state, summarize_batch(v_samples, state.d))
    if h_samples is not None:
        new = replace(new, h_stats=diag_update(state.h_stats, h_samples))
    return new
