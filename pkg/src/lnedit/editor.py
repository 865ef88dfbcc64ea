"""Closed-form ridge updates from normalized value gradients."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import ConfigError, DimensionError, NumericalError
from .niw import DiagStats, NiwState, PosteriorEstimate, posterior_estimates
from .whitening import FloorConfig, WhiteningTransform, build_transform, floor_eigenvalues

H_STD_FLOOR = 1e-8


class Mode(str, enum.Enum):
    RAW = "raw"
    DIAGONAL = "diagonal"
    FULL = "full"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, cls):
            return value
        aliases = {
            "raw": cls.RAW, "rawgradient": cls.RAW,
            "diagonal": cls.DIAGONAL, "diag": cls.DIAGONAL, "diagonalnorm": cls.DIAGONAL,
            "full": cls.FULL, "fullwhitening": cls.FULL,
        }
        try:
            return aliases[str(value).strip().lower().replace("_", "")]
        except KeyError:
            raise ConfigError(f"unknown mode {value!r}; expected raw, diagonal or full", key="mode")


def _softsign(x):
    return x / (1.0 + np.abs(x))


# Element-wise 1-Lipschitz maps usable as the post-normalization hook.
HOOKS: dict[str, Optional[Callable[[np.ndarray], np.ndarray]]] = {
    "none": None,
    "tanh": np.tanh,
    "clip": lambda x: np.clip(x, -1.0, 1.0),
    "softsign": _softsign,
}


def resolve_hook(name: str):
    try:
        return HOOKS[name]
    except KeyError:
        raise ConfigError(f"unknown hook {name!r}; expected one of {sorted(HOOKS)}", key="hook")


@dataclass(frozen=True)
class EditorConfig:
    gamma: float = 1e-3
    lam: float = 10.0
    mode: Mode = Mode.FULL
    lipschitz_hook: Optional[Callable[[np.ndarray], np.ndarray]] = None
    floor: FloorConfig = FloorConfig()

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ConfigError(f"gamma must be > 0, got {self.gamma}", key="gamma")
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ConfigError(f"lambda must be > 0, got {self.lam}", key="lambda")


@dataclass
class EditBatch:
    """One step of edits: columns of ``h`` (d_h x n) pair with columns of ``v_raw`` (d x n)."""

    h: np.ndarray
    v_raw: np.ndarray
    targets: Optional[np.ndarray] = None  # d x n edit targets y, linear-teacher mode only

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.float64)
        self.v_raw = np.asarray(self.v_raw, dtype=np.float64)
        if self.h.ndim != 2 or self.v_raw.ndim != 2:
            raise DimensionError("h and v_raw must be 2-D (features x samples)")
        if self.h.shape[1] != self.v_raw.shape[1]:
            raise DimensionError(
                f"h has {self.h.shape[1]} columns but v_raw has {self.v_raw.shape[1]}"
            )
        if self.h.shape[1] < 1:
            raise DimensionError("a batch needs at least one edit")
        if self.targets is not None:
            self.targets = np.asarray(self.targets, dtype=np.float64)
            if self.targets.shape != self.v_raw.shape:
                raise DimensionError("targets must have the same shape as v_raw")

    @property
    def n(self) -> int:
        return self.h.shape[1]


@dataclass(frozen=True)
class UpdateMatrix:
    delta: np.ndarray
    fro_norm: float
    spec_component_norm: Optional[float] = None
    bias_component_norm: Optional[float] = None

    @classmethod
    def from_delta(cls, delta, spec=None, bias=None) -> "UpdateMatrix":
        return cls(delta, float(np.linalg.norm(delta)), spec, bias)


def _require_finite(name, x):
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"{name} contains non-finite entries")


def _gram_factor(h: np.ndarray, lam: float):
    if not lam > 0:
        raise ConfigError(f"lambda must be > 0, got {lam}", key="lambda")
    gram = h @ h.T
    gram[np.diag_indices_from(gram)] += lam
    try:
        return cho_factor(gram, lower=True)
    except LinAlgError as exc:
        raise NumericalError(f"Cholesky of H H^T + lambda I failed: {exc}") from exc


def projection_factors(h, h_tilde_sq, lam: float) -> np.ndarray:
    """Rows ``phi_i = |h~_i|^2 h_i^T (H H^T + lam I)^{-1}``, shape ``(n, d_h)``."""
    h = np.asarray(h, dtype=np.float64)
    w = np.asarray(h_tilde_sq, dtype=np.float64)
    _require_finite("h", h)
    _require_finite("h_tilde_sq", w)
    if w.shape != (h.shape[1],):
        raise DimensionError(f"need one squared norm per column of h, got {w.shape}")
    if np.any(w < 0):
        raise ValueError("squared norms must be nonnegative")
    solved = cho_solve(_gram_factor(h, lam), h)  # (H H^T + lam I)^{-1} H
    return solved.T * w[:, None]


def standardize_h(h, h_stats: DiagStats) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension standardization of hidden-state columns with running moments."""
    h = np.asarray(h, dtype=np.float64)
    if h_stats.count < 1:
        raise NumericalError("hidden-state statistics have not seen any samples")
    if h.shape[0] != h_stats.dim:
        raise DimensionError(f"h has {h.shape[0]} rows, statistics track {h_stats.dim}")
    std = h_stats.std(H_STD_FLOOR)
    h_tilde = (h - h_stats.mean[:, None]) / std[:, None]
    return h_tilde, np.einsum("ij,ij->j", h_tilde, h_tilde)


def assemble_targets(v_tilde, h_tilde_sq, gamma: float) -> np.ndarray:
    """Regression targets ``V = -gamma [ |h~_1|^2 v~_1, ..., |h~_n|^2 v~_n ]``."""
    return -gamma * np.asarray(v_tilde) * np.asarray(h_tilde_sq)[None, :]


def ridge_solve(h, v, lam: float) -> np.ndarray:
    """Minimizer of ``|Delta H - V|_F^2 + lam |Delta|_F^2``: ``V H^T (H H^T + lam I)^{-1}``."""
    h = np.asarray(h, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if h.shape[1] != v.shape[1]:
        raise DimensionError("H and V need the same number of columns")
    return cho_solve(_gram_factor(h, lam), h @ v.T).T


class GradientMap(NamedTuple):
    """Affine map ``v -> scale @ (v - center)`` that a mode applies before the hook."""

    scale: np.ndarray
    center: np.ndarray


def gradient_map(mode: Mode, post: PosteriorEstimate, transform: WhiteningTransform,
                 floor: FloorConfig) -> GradientMap:
    d = post.mu_hat.shape[0]
    if mode is Mode.RAW:
        return GradientMap(np.eye(d), np.zeros(d))
    if mode is Mode.DIAGONAL:
        var, _ = floor_eigenvalues(np.diag(post.sigma_hat).copy(), floor)
        return GradientMap(np.diag(var**-0.5), post.mu_hat)
    return GradientMap(transform.w, transform.mu_hat)


def normalize(gmap: GradientMap, v, hook=None) -> np.ndarray:
    out = gmap.scale @ (np.asarray(v) - gmap.center[:, None])
    return hook(out) if hook is not None else out


def solve_update(batch: EditBatch, state: NiwState, cfg: EditorConfig,
                 mu_true=None) -> tuple[UpdateMatrix, WhiteningTransform]:
    """Normalize this batch's gradients and solve the ridge problem for ``Delta``.

    ``state`` must already include the batch (statistics are updated before
    the update is formed).  When the true gradient mean is supplied the
    update is split into its instance-specific and mean-error parts.
    """
    if batch.v_raw.shape[0] != state.d or batch.h.shape[0] != state.d_h:
        raise DimensionError(
            f"batch is ({batch.v_raw.shape[0]}, {batch.h.shape[0]}), "
            f"state is ({state.d}, {state.d_h})"
        )
    _require_finite("v_raw", batch.v_raw)
    _require_finite("h", batch.h)
    post = posterior_estimates(state)
    transform = build_transform(post.mu_hat, post.sigma_hat, cfg.floor)
    gmap = gradient_map(cfg.mode, post, transform, cfg.floor)
    v_tilde = normalize(gmap, batch.v_raw, cfg.lipschitz_hook)

    _, h_sq = standardize_h(batch.h, state.h_stats)
    targets = assemble_targets(v_tilde, h_sq, cfg.gamma)
    delta = ridge_solve(batch.h, targets, cfg.lam)
    _require_finite("update", delta)

    phi = projection_factors(batch.h, h_sq, cfg.lam)
    delta_sum = -cfg.gamma * v_tilde @ phi
    gap = np.linalg.norm(delta - delta_sum)
    if gap > 1e-10 * max(1.0, np.linalg.norm(delta)):
        raise NumericalError(f"matrix and sum forms of the update disagree by {gap:.3e}")

    spec_norm = bias_norm = None
    if mu_true is not None:
        # Same map, centered on the true mean: what remains is the mean-error part.
        true_map = GradientMap(gmap.scale, np.asarray(mu_true, dtype=np.float64))
        spec = -cfg.gamma * normalize(true_map, batch.v_raw, cfg.lipschitz_hook) @ phi
        spec_norm = float(np.linalg.norm(spec))
        bias_norm = float(np.linalg.norm(delta_sum - spec))
    return UpdateMatrix.from_delta(delta, spec_norm, bias_norm), transform
