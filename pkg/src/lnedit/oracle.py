"""Brute-force reference computations used to check the main code path.

Nothing here calls into the tracker, whitening or editor internals; the
oracles work from raw samples with plain loops and dense solves so that
agreement with the fast path is real evidence.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericalError
from .niw import DiagStats, NiwState


def naive_mean(samples) -> np.ndarray:
    rows = [np.asarray(s, dtype=np.float64) for s in samples]
    if not rows:
        raise DimensionError("no samples")
    total = np.zeros_like(rows[0])
    for r in rows:
        total = total + r
    return total / len(rows)


def naive_scatter(samples) -> np.ndarray:
    """Double-loop ``sum_i (x_i - mean)(x_i - mean)^T``."""
    rows = [np.asarray(s, dtype=np.float64) for s in samples]
    mean = naive_mean(rows)
    d = mean.shape[0]
    out = np.zeros((d, d))
    for x in rows:
        c = x - mean
        for a in range(d):
            for b in range(d):
                out[a, b] += c[a] * c[b]
    return out


def naive_moments(samples) -> tuple[np.ndarray, np.ndarray, int]:
    """Mean and element-wise sum of squared deviations, recomputed from scratch."""
    rows = [np.asarray(s, dtype=np.float64) for s in samples]
    mean = naive_mean(rows)
    ssd = np.zeros_like(mean)
    for x in rows:
        ssd = ssd + (x - mean) ** 2
    return mean, ssd, len(rows)


def naive_standardized_sq_norms(h_columns, history) -> np.ndarray:
    """``|(h - mean) / std|^2`` per column, with moments recomputed from ``history``."""
    mean, ssd, count = naive_moments(history)
    std = np.maximum(np.sqrt(ssd / max(count - 1, 1)), 1e-8)
    h = np.asarray(h_columns, dtype=np.float64)
    return np.array([float(np.sum(((h[:, j] - mean) / std) ** 2)) for j in range(h.shape[1])])


def batch_niw_posterior(prior: NiwState, all_samples) -> NiwState:
    """NIW posterior from the prior and every sample at once (one big batch)."""
    x = np.asarray(all_samples, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DimensionError("need a nonempty (N, d) sample matrix")
    if x.shape[1] != prior.d:
        raise DimensionError(f"samples have dimension {x.shape[1]}, prior has {prior.d}")
    count = x.shape[0]
    mean = naive_mean(list(x))
    scatter = naive_scatter(list(x))
    kappa = prior.kappa + count
    shift = (mean - prior.m)[:, None]
    psi = prior.psi + scatter + (prior.kappa * count / kappa) * (shift @ shift.T)
    return NiwState(
        m=(prior.kappa * prior.m + count * mean) / kappa,
        kappa=kappa,
        psi=0.5 * (psi + psi.T),
        nu=prior.nu + count,
        h_stats=prior.h_stats,
    )


def diag_stats_from_samples(samples) -> DiagStats:
    mean, ssd, count = naive_moments(samples)
    return DiagStats(mean, ssd, count)


def dense_ridge_solve(h, v, lam: float) -> np.ndarray:
    """``V H^T (H H^T + lam I)^{-1}`` through a general dense solve."""
    h = np.asarray(h, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    a = h @ h.T + lam * np.eye(h.shape[0])
    return np.linalg.solve(a.T, (v @ h.T).T).T


def dense_projection_factors(h, h_tilde_sq, lam: float) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    inv = np.linalg.inv(h @ h.T + lam * np.eye(h.shape[0]))
    return np.array([h_tilde_sq[i] * (h[:, i] @ inv) for i in range(h.shape[1])])


def ridge_objective(delta, h, v, lam: float) -> float:
    r = np.asarray(delta) @ np.asarray(h) - np.asarray(v)
    return float(np.sum(r * r) + lam * np.sum(np.asarray(delta) ** 2))


def ridge_objective_gradient(delta, h, v, lam: float) -> np.ndarray:
    """Gradient of ``|Delta H - V|_F^2 + lam |Delta|_F^2`` with respect to ``Delta``."""
    delta = np.asarray(delta, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if delta.shape != (v.shape[0], h.shape[0]) or h.shape[1] != v.shape[1]:
        raise DimensionError(
            f"inconsistent shapes delta {delta.shape}, h {h.shape}, v {v.shape}"
        )
    return 2.0 * (delta @ h - v) @ h.T + 2.0 * lam * delta


def power_iteration_specnorm(sym_matrix, iters: int = 100_000, tol: float = 1e-12,
                             seed: int = 0) -> float:
    """Largest absolute eigenvalue of a symmetric matrix by power iteration on ``A^2``.

    Iterating on the square avoids oscillation when ``lambda`` and
    ``-lambda`` are both extreme.  Stops once the eigen-residual of ``A^2``
    is below ``tol`` (relative).
    """
    a = np.asarray(sym_matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got {a.shape}")
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(a), initial=0.0)):
        raise ValueError("matrix is not symmetric")
    b = a @ a
    x = np.random.default_rng(seed).standard_normal(a.shape[0])
    x /= np.linalg.norm(x)
    rho = 0.0
    residual = np.inf
    for _ in range(iters):
        y = b @ x
        rho = float(x @ y)
        residual = float(np.linalg.norm(y - rho * x))
        if residual <= tol * max(1.0, abs(rho)):
            return float(np.sqrt(max(rho, 0.0)))
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x = y / ny
    raise NumericalError(
        f"power iteration did not converge in {iters} iterations (residual {residual:.3e})"
    )


def sample_covariance(samples) -> np.ndarray:
    rows = [np.asarray(s, dtype=np.float64) for s in samples]
    return naive_scatter(rows) / (len(rows) - 1)


def whitening_reconstruction_error(w, sigma) -> float:
    """``|W Sigma W - I|_2`` through a singular-value norm (no eigensolver)."""
    w = np.asarray(w, dtype=np.float64)
    m = w @ np.asarray(sigma, dtype=np.float64) @ w
    return float(np.linalg.norm(m - np.eye(m.shape[0]), 2))


def monte_carlo_mean(source, n_samples: int, seed: int = 12345) -> tuple[np.ndarray, np.ndarray]:
    """Empirical mean and standard error of gradients drawn at the source's current state."""
    if n_samples < 100:
        raise ValueError("need at least 100 samples")
    batch = source.sample(np.random.default_rng(seed), n_samples)
    v = batch.v_raw
    mean = v.mean(axis=1)
    stderr = v.std(axis=1, ddof=1) / np.sqrt(n_samples)
    return mean, stderr
