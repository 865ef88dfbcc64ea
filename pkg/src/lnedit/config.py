"""Experiment configuration: flat ``key = value`` files plus overrides.

Validation is total.  Every bad value is reported as a ``ConfigError``
naming the key (and the file line when it came from a file) before any
work starts.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Optional, Union

from .editor import HOOKS, EditorConfig, Mode, resolve_hook
from .errors import ConfigError
from .whitening import FloorConfig

OUT_DIR_ENV = "LNEDIT_OUT_DIR"

WARMUP_VARIANTS = ("full", "stats_only", "none")
WARMUP_SOURCES = ("same", "separate")

SCHEDULED_KEYS = (
    "c_mu", "c_sigma", "eps_mu", "eps_sigma", "r_offset",
    "sigma_minus", "sigma_plus", "mean_scale", "eig_min", "eig_max",
)
TEACHER_KEYS = ("mu_h_norm", "b_star_scale", "noise_std", "w0_scale")
STREAM_KEYS = ("stream",) + SCHEDULED_KEYS + TEACHER_KEYS

# Keys that only shape the warm-up phase or the outputs; everything else
# must match for a warm/cold comparison to be meaningful.
_NON_TARGET_KEYS = {
    "r", "warmup_variant", "warmup_source", "warmup_placement", "warmup",
    "out", "save_checkpoint", "save_deltas",
}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int(text: str) -> int:
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"not an integer: {text!r}")
    return int(value)


def _parse_placement(text: str) -> Union[str, float]:
    t = text.strip().lower()
    return "start" if t == "start" else float(t)


@dataclass(frozen=True)
class ExperimentConfig:
    # dimensions and schedule
    d: int = 8
    d_h: int = 16
    n: int = 100
    T: int = 200
    r: int = 0
    warmup_variant: str = "full"
    warmup_source: str = "same"
    warmup_placement: Union[str, float] = "start"
    # editor
    mode: str = "full"
    gamma: float = 1e-3
    lam: float = 10.0
    epsilon_0: float = 1e-6
    abs_floor: float = 1e-10
    rel_floor: float = 1e-8
    hook: str = "none"
    # stream
    stream: str = "scheduled"
    seed: int = 0
    c_mu: float = 0.0
    c_sigma: float = 0.0
    eps_mu: float = 0.5
    eps_sigma: float = 0.5
    r_offset: int = 0
    sigma_minus: float = 1e-3
    sigma_plus: float = 10.0
    mean_scale: float = 1.0
    eig_min: float = 0.25
    eig_max: float = 4.0
    mu_h_norm: float = 1.0
    b_star_scale: float = 1.0
    noise_std: float = 0.1
    w0_scale: float = 1.0
    retention_pool: int = 200
    # continuation and outputs
    step_offset: int = 0
    init_checkpoint: str = ""
    save_checkpoint: bool = False
    save_deltas: bool = False
    out: str = ""
    warmup: dict = field(default_factory=dict)  # stream overrides for a separate warm-up source

    def __post_init__(self):
        _validate(self)

    # -- derived views -------------------------------------------------
    @property
    def trace_path(self) -> Optional[str]:
        return self.stream[len("trace:"):] if self.stream.startswith("trace:") else None

    def editor_config(self) -> EditorConfig:
        return EditorConfig(
            gamma=self.gamma,
            lam=self.lam,
            mode=Mode.parse(self.mode),
            lipschitz_hook=resolve_hook(self.hook),
            floor=FloorConfig(self.abs_floor, self.rel_floor),
        )

    def warmup_stream_config(self) -> "ExperimentConfig":
        """Config whose stream parameters describe the warm-up source."""
        if self.warmup_source == "same":
            return self
        return replace(self, warmup={}, warmup_source="same", **self.warmup)

    def target_signature(self) -> tuple:
        return tuple(
            (f.name, getattr(self, f.name)) for f in fields(self) if f.name not in _NON_TARGET_KEYS
        )

    def with_overrides(self, **values) -> "ExperimentConfig":
        return replace(self, **values)


_FIELD_NAMES = {f.name for f in fields(ExperimentConfig)} - {"warmup"}
# Config-file spelling differs from the attribute name for 'lambda' only.
_ALIASES = {"lambda": "lam"}
_TYPES: dict[str, Any] = {}
for _f in fields(ExperimentConfig):
    if _f.name == "warmup_placement":
        _TYPES[_f.name] = _parse_placement
    elif _f.type in ("int",):
        _TYPES[_f.name] = _parse_int
    elif _f.type in ("float",):
        _TYPES[_f.name] = float
    elif _f.type in ("bool",):
        _TYPES[_f.name] = _parse_bool
    else:
        _TYPES[_f.name] = str


def _check(cond, key, message):
    if not cond:
        raise ConfigError(message, key=key)


def _finite_positive(cfg, *keys):
    for k in keys:
        v = getattr(cfg, k)
        _check(v == v and v > 0 and v != float("inf"), k, f"must be a finite number > 0, got {v}")


def _nonnegative(cfg, *keys):
    for k in keys:
        v = getattr(cfg, k)
        _check(v == v and v >= 0 and v != float("inf"), k, f"must be finite and >= 0, got {v}")


def _validate(cfg: ExperimentConfig) -> None:
    for k in ("d", "d_h", "n", "T"):
        _check(isinstance(getattr(cfg, k), int) and getattr(cfg, k) >= 1, k,
               f"must be an integer >= 1, got {getattr(cfg, k)!r}")
    for k in ("r", "step_offset", "r_offset", "seed"):
        _check(isinstance(getattr(cfg, k), int) and getattr(cfg, k) >= 0, k,
               f"must be an integer >= 0, got {getattr(cfg, k)!r}")
    _check(isinstance(cfg.retention_pool, int) and cfg.retention_pool >= 1, "retention_pool",
           "must be an integer >= 1")
    _finite_positive(cfg, "gamma", "lam", "epsilon_0", "abs_floor", "rel_floor",
                     "eps_mu", "eps_sigma", "sigma_minus", "sigma_plus", "eig_min", "eig_max")
    _nonnegative(cfg, "c_mu", "c_sigma", "mean_scale", "mu_h_norm", "b_star_scale",
                 "noise_std", "w0_scale")
    _check(cfg.sigma_minus <= cfg.eig_min <= cfg.eig_max <= cfg.sigma_plus, "eig_min",
           "need sigma_minus <= eig_min <= eig_max <= sigma_plus")
    Mode.parse(cfg.mode)
    _check(cfg.hook in HOOKS, "hook", f"unknown hook {cfg.hook!r}; expected one of {sorted(HOOKS)}")
    _check(cfg.warmup_variant in WARMUP_VARIANTS, "warmup_variant",
           f"expected one of {WARMUP_VARIANTS}, got {cfg.warmup_variant!r}")
    _check(cfg.warmup_source in WARMUP_SOURCES, "warmup_source",
           f"expected one of {WARMUP_SOURCES}, got {cfg.warmup_source!r}")
    _check(not (cfg.warmup_variant == "none" and cfg.r > 0), "warmup_variant",
           "warmup_variant=none requires r=0")
    p = cfg.warmup_placement
    _check(p == "start" or (isinstance(p, float) and 0.0 < p < 1.0), "warmup_placement",
           f"expected 'start' or a fraction in (0, 1), got {p!r}")
    _check(cfg.stream in ("scheduled", "linear_teacher") or
           (cfg.stream.startswith("trace:") and len(cfg.stream) > len("trace:")),
           "stream", f"expected scheduled, linear_teacher or trace:<path>, got {cfg.stream!r}")
    if cfg.trace_path is not None:
        _check(cfg.step_offset == 0, "step_offset", "trace streams cannot be resumed mid-way")
        _check(cfg.r == 0 or cfg.warmup_source == "separate", "warmup_source",
               "a trace stream needs warmup_source=separate for warm-up steps")
    if cfg.stream == "linear_teacher":
        # A checkpoint holds the statistics only, not the edited matrix.
        _check(cfg.step_offset == 0, "step_offset", "linear-teacher runs cannot be resumed")
    for key in cfg.warmup:
        _check(key in STREAM_KEYS, f"warmup.{key}", "not a stream parameter")
    if cfg.warmup:
        _check(cfg.warmup_source == "separate", "warmup_source",
               "warmup.* overrides require warmup_source=separate")
    if cfg.warmup_source == "separate" and cfg.r > 0:
        _check(cfg.warmup_stream_config().trace_path is None, "warmup.stream",
               "the warm-up source must be synthetic")


def _coerce(key: str, raw: str, line=None):
    try:
        return _TYPES[key](raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value {raw!r}: {exc}", key=key, line=line) from None


def _assign(values: dict, warm: dict, key: str, raw: str, line=None):
    key = key.strip()
    raw = raw.strip()
    if key.startswith("warmup."):
        sub = _ALIASES.get(key[7:], key[7:])
        if sub not in STREAM_KEYS:
            raise ConfigError("not a stream parameter", key=key, line=line)
        warm[sub] = _coerce(sub, raw, line)
        return
    name = _ALIASES.get(key, key)
    if name not in _FIELD_NAMES:
        raise ConfigError("unknown key", key=key, line=line)
    values[name] = _coerce(name, raw, line)


def parse_config_text(text: str, overrides=(), base: Optional[dict] = None) -> ExperimentConfig:
    """Parse ``key = value`` lines (``#`` comments allowed); overrides win."""
    values: dict = dict(base or {})
    warm: dict = {}
    lines: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", line=lineno)
        key, raw = stripped.split("=", 1)
        key = key.strip()
        name = _ALIASES.get(key, key)
        if name in lines:
            raise ConfigError(f"duplicate key (first set on line {lines[name]})", key=key, line=lineno)
        lines[name] = lineno
        _assign(values, warm, key, raw, lineno)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _assign(values, warm, key, raw)
    if warm:
        values["warmup"] = warm
    try:
        return ExperimentConfig(**values)
    except ConfigError as exc:
        if exc.line is None and exc.key in lines:
            raise ConfigError(exc.detail, key=exc.key, line=lines[exc.key]) from None
        raise


def load_config(path, overrides=()) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config_text(text, overrides)


def default_out_dir() -> Optional[str]:
    return os.environ.get(OUT_DIR_ENV) or None


def config_to_text(cfg: ExperimentConfig) -> str:
    """Render a config back to the ``key = value`` format (round-trips through the parser)."""
    out = []
    for f in fields(cfg):
        if f.name == "warmup":
            continue
        key = "lambda" if f.name == "lam" else f.name
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        out.append(f"{key} = {value}")
    for key, value in sorted(cfg.warmup.items()):
        out.append(f"warmup.{key} = {value!r}" if isinstance(value, float) else f"warmup.{key} = {value}")
    return "\n".join(out) + "\n"
