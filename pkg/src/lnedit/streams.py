"""Synthetic edit streams with known gradient distributions.

Every random draw comes from a generator keyed by ``(seed, phase, step,
purpose)``, so warm-up and target phases never share randomness and a
stream can be resumed at any step without replaying earlier samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .editor import EditBatch, UpdateMatrix
from .errors import ConfigError, DimensionError

PHASE_TARGET = 0
PHASE_WARMUP = 1
_PURPOSE_SAMPLE = 0
_PURPOSE_DRIFT = 1
_INIT = 7919


def step_rng(seed: int, phase: int, step: int, purpose: int = _PURPOSE_SAMPLE):
    return np.random.default_rng([int(seed), int(phase), int(step), int(purpose)])


def init_rng(seed: int):
    return np.random.default_rng([int(seed), _INIT])


class GroundTruth(NamedTuple):
    mu: Optional[np.ndarray] = None
    sigma: Optional[np.ndarray] = None


def _unit_vector(rng, d):
    u = rng.standard_normal(d)
    return u / np.linalg.norm(u)


def clip_spectrum(sigma, lo, hi):
    lam, q = np.linalg.eigh(0.5 * (sigma + sigma.T))
    out = (q * np.clip(lam, lo, hi)) @ q.T
    return 0.5 * (out + out.T)


@dataclass
class ScheduledDriftSource:
    """Gaussian gradients whose mean and covariance drift on a decaying schedule.

    Step ``t`` moves the mean by exactly ``c_mu * (r_offset + t)^-(1 + eps_mu)``
    in a random direction and the covariance by at most
    ``c_sigma * (r_offset + t)^-(1 + eps_sigma)`` in spectral norm, keeping its
    spectrum inside ``[sigma_minus, sigma_plus]``.  Hidden states are standard
    normal and carry no signal.
    """

    d: int
    d_h: int
    mu: np.ndarray
    sigma: np.ndarray
    seed: int
    c_mu: float = 0.0
    c_sigma: float = 0.0
    eps_mu: float = 0.5
    eps_sigma: float = 0.5
    r_offset: int = 0
    sigma_minus: float = 1e-3
    sigma_plus: float = 10.0
    phase: int = PHASE_TARGET
    step: int = 0
    _chol: Optional[np.ndarray] = field(default=None, repr=False)

    @classmethod
    def create(cls, d, d_h, seed, *, mean_scale=1.0, eig_min=0.25, eig_max=4.0,
               phase=PHASE_TARGET, **drift):
        """Random initial mean ``N(0, mean_scale^2 I)`` and covariance with log-spaced spectrum."""
        sigma_minus = drift.get("sigma_minus", 1e-3)
        sigma_plus = drift.get("sigma_plus", 10.0)
        if not (sigma_minus <= eig_min <= eig_max <= sigma_plus):
            raise ConfigError(
                "initial spectrum must satisfy sigma_minus <= eig_min <= eig_max <= sigma_plus",
                key="eig_min",
            )
        rng = init_rng(seed)
        mu = mean_scale * rng.standard_normal(d)
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        lam = np.geomspace(eig_min, eig_max, d)
        sigma = (q * lam) @ q.T
        sigma = 0.5 * (sigma + sigma.T)
        return cls(d=d, d_h=d_h, mu=mu, sigma=sigma, seed=seed, phase=phase, **drift)

    def mean_bound(self, t: int) -> float:
        return self.c_mu * (self.r_offset + t) ** -(1.0 + self.eps_mu)

    def cov_bound(self, t: int) -> float:
        return self.c_sigma * (self.r_offset + t) ** -(1.0 + self.eps_sigma)

    def _advance(self):
        t = self.step + 1
        rng = step_rng(self.seed, self.phase, t, _PURPOSE_DRIFT)
        if self.c_mu > 0:
            self.mu = self.mu + self.mean_bound(t) * _unit_vector(rng, self.d)
        if self.c_sigma > 0:
            bound = self.cov_bound(t)
            a = rng.standard_normal((self.d, self.d))
            e = a + a.T
            e *= bound / np.linalg.norm(e, 2)
            change = clip_spectrum(self.sigma + e, self.sigma_minus, self.sigma_plus) - self.sigma
            size = np.linalg.norm(change, 2)
            if size > bound:
                # Convex combination of two in-range matrices stays in range.
                change *= bound / size
            new = self.sigma + change
            self.sigma = 0.5 * (new + new.T)
            self._chol = None
        self.step = t

    def fast_forward(self, steps: int) -> None:
        """Advance the drift schedule without drawing samples."""
        for _ in range(steps):
            self._advance()

    def truth(self) -> GroundTruth:
        return GroundTruth(self.mu.copy(), self.sigma.copy())

    def sample(self, rng, n: int) -> EditBatch:
        if self._chol is None:
            self._chol = np.linalg.cholesky(self.sigma)
        z = rng.standard_normal((self.d, n))
        v = self.mu[:, None] + self._chol @ z
        h = rng.standard_normal((self.d_h, n))
        return EditBatch(h=h, v_raw=v)

    def next_batch(self, n: int, last_delta: Optional[UpdateMatrix] = None):
        """Advance one drift step and draw ``n`` edits from the new distribution.

        Updates never feed back into this source, so ``last_delta`` is ignored.
        """
        if n < 1:
            raise ConfigError("batch size must be >= 1", key="n")
        self._advance()
        batch = self.sample(step_rng(self.seed, self.phase, self.step), n)
        return batch, self.truth()


@dataclass
class LinearTeacherSource:
    """Squared-loss editing of a linear module ``u = W h`` toward targets ``y``.

    Value gradients are ``v = W h - y`` with ``h ~ N(mu_h, I)`` and
    ``y = b_star + noise``, so the true gradient mean ``W mu_h - b_star`` moves
    whenever an update is applied to ``W``.
    """

    w_edit: np.ndarray
    mu_h: np.ndarray
    b_star: np.ndarray
    noise_std: float
    seed: int
    phase: int = PHASE_TARGET
    step: int = 0

    @classmethod
    def create(cls, d, d_h, seed, *, mu_h_norm=1.0, b_star_scale=1.0, noise_std=0.1,
               w0_scale=1.0, phase=PHASE_TARGET):
        rng = init_rng(seed)
        mu_h = mu_h_norm * _unit_vector(rng, d_h)
        b_star = b_star_scale * rng.standard_normal(d)
        w0 = (w0_scale / np.sqrt(d_h)) * rng.standard_normal((d, d_h))
        return cls(w_edit=w0, mu_h=mu_h, b_star=b_star, noise_std=float(noise_std),
                   seed=seed, phase=phase)

    @property
    def d(self) -> int:
        return self.w_edit.shape[0]

    @property
    def d_h(self) -> int:
        return self.w_edit.shape[1]

    def gradient_mean(self, w=None) -> np.ndarray:
        w = self.w_edit if w is None else w
        return w @ self.mu_h - self.b_star

    def truth(self) -> GroundTruth:
        w = self.w_edit
        sigma = w @ w.T + self.noise_std**2 * np.eye(self.d)
        return GroundTruth(self.gradient_mean(), 0.5 * (sigma + sigma.T))

    def sample(self, rng, n: int) -> EditBatch:
        h = self.mu_h[:, None] + rng.standard_normal((self.d_h, n))
        y = self.b_star[:, None] + self.noise_std * rng.standard_normal((self.d, n))
        return EditBatch(h=h, v_raw=self.w_edit @ h - y, targets=y)

    def next_batch(self, n: int, last_delta: Optional[UpdateMatrix] = None):
        if n < 1:
            raise ConfigError("batch size must be >= 1", key="n")
        if last_delta is not None:
            self.apply_update(last_delta)
        self.step += 1
        batch = self.sample(step_rng(self.seed, self.phase, self.step), n)
        return batch, self.truth()

    def apply_update(self, delta) -> "LinearTeacherSource":
        d = delta.delta if isinstance(delta, UpdateMatrix) else np.asarray(delta, dtype=np.float64)
        if d.shape != self.w_edit.shape:
            raise DimensionError(f"update shape {d.shape} does not match W {self.w_edit.shape}")
        self.w_edit = self.w_edit + d
        return self


def _residuals(w, h, y):
    return np.linalg.norm(w @ h - y, axis=0)


def efficacy_retention(source, w_before, w_after, current_edits, held_out_edits):
    """Desk-scale efficacy and retention of one update.

    Edits are ``(H, Y)`` pairs of column matrices.  Efficacy is the fraction
    of current edits whose residual ``|W h - y|`` strictly shrank; retention
    is the fraction of earlier edits whose residual grew by less than 10%.
    """
    h_cur, y_cur = current_edits
    h_old, y_old = held_out_edits
    if np.asarray(h_cur).shape[1] == 0 or np.asarray(h_old).shape[1] == 0:
        raise ValueError("edit sets must be nonempty")
    before = _residuals(w_before, h_cur, y_cur)
    after = _residuals(w_after, h_cur, y_cur)
    efficacy = float(np.mean(after < before))
    old_before = _residuals(w_before, h_old, y_old)
    old_after = _residuals(w_after, h_old, y_old)
    retention = float(np.mean(old_after < 1.1 * old_before))
    return efficacy, retention


class TraceSource:
    """Replays recorded ``(h, v)`` batches; no ground truth is available."""

    def __init__(self, batches, step_ids=None):
        self.batches = list(batches)
        self.step_ids = list(step_ids) if step_ids is not None else list(range(1, len(self.batches) + 1))
        if not self.batches:
            raise ValueError("trace has no steps")
        self.d = self.batches[0].v_raw.shape[0]
        self.d_h = self.batches[0].h.shape[0]
        self.step = 0

    def __len__(self):
        return len(self.batches)

    def next_batch(self, n: Optional[int] = None, last_delta=None):
        if self.step >= len(self.batches):
            raise IndexError("trace exhausted")
        batch = self.batches[self.step]
        self.step += 1
        return batch, GroundTruth()
