"""The editing loop: warm-up and target phases over one stream.

One step folds a batch into the running statistics, builds the whitening
transform, solves for the update and logs a ``StepRecord``.  A run strings
steps together; statistics carry over between phases unchanged.
"""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .config import ExperimentConfig
from .diagnostics import (
    StepRecord,
    batch_identity_deviation,
    cosine_adjacent,
    cov_spectral_error,
    mean_mse,
    summarize,
    whitened_identity_deviation,
)
from .editor import EditBatch, EditorConfig, UpdateMatrix, solve_update
from .errors import ConfigError, NumericalError
from .niw import NiwState, init_prior, observe, posterior_estimates
from .streams import (
    PHASE_TARGET,
    PHASE_WARMUP,
    GroundTruth,
    LinearTeacherSource,
    ScheduledDriftSource,
    TraceSource,
    efficacy_retention,
)
from .whitening import build_transform, spectral_report, whiten


@dataclass
class StepResult:
    state: NiwState
    record: StepRecord
    update: Optional[UpdateMatrix]
    batch: EditBatch


def _finite_or_none(x):
    if x is None:
        return None
    x = float(x)
    if not np.isfinite(x):
        raise NumericalError(f"diagnostic value is not finite: {x}")
    return x


def edit_step(source, state: NiwState, editor: EditorConfig, *, n: int, step: int,
              phase: str = "target", stats_only: bool = False,
              prev_delta: Optional[np.ndarray] = None,
              held_out: Optional[tuple] = None) -> StepResult:
    """Run one editing step against ``source``.

    Nothing is changed if the step fails: ``state`` is immutable and the
    source is restored from a snapshot before the error propagates.
    """
    snapshot = copy.copy(source)
    try:
        return _edit_step(source, state, editor, n, step, phase, stats_only, prev_delta, held_out)
    except BaseException:
        source.__dict__.update(snapshot.__dict__)
        raise


def _edit_step(source, state, editor, n, step, phase, stats_only, prev_delta, held_out):
    batch, truth = source.next_batch(n)
    prev = posterior_estimates(state) if state.kappa > 0 else None

    new_state = observe(state, batch.v_raw.T, batch.h.T)
    post = posterior_estimates(new_state)

    if stats_only:
        update = None
        transform = build_transform(post.mu_hat, post.sigma_hat, editor.floor)
    else:
        update, transform = solve_update(batch, new_state, editor, mu_true=truth.mu)

    rec = StepRecord(step=step, phase=phase)
    if prev is not None:
        rec.mu_drift = float(np.linalg.norm(post.mu_hat - prev.mu_hat))
        rec.sigma_drift = float(np.linalg.norm(post.sigma_hat - prev.sigma_hat))
    if truth.mu is not None:
        rec.mean_mse = mean_mse(post.mu_hat, truth.mu)
    if truth.sigma is not None:
        rec.cov_spec_err = cov_spectral_error(post.sigma_hat, truth.sigma)
        rec.whiten_identity_dev = whitened_identity_deviation(transform.w, truth.sigma)
    else:
        rec.whiten_identity_dev = batch_identity_deviation(whiten(transform, batch.v_raw))
    report = spectral_report(post.sigma_hat, editor.floor.abs_floor)
    rec.cond_number = report.condition_number
    rec.lambda_max = report.lambda_max

    if update is not None:
        rec.update_fro_norm = update.fro_norm
        rec.cos_prev = cosine_adjacent(update.delta, prev_delta)
        rec.spec_norm = update.spec_component_norm
        rec.bias_norm = update.bias_component_norm
        if isinstance(source, LinearTeacherSource):
            w_before = source.w_edit
            source.apply_update(update)
            if held_out is not None and held_out[0].shape[1] > 0:
                rec.efficacy, rec.retention = efficacy_retention(
                    source, w_before, source.w_edit, (batch.h, batch.targets), held_out
                )
            else:
                rec.efficacy, _ = efficacy_retention(
                    source, w_before, source.w_edit, (batch.h, batch.targets),
                    (batch.h, batch.targets),
                )

    for name in ("mean_mse", "cov_spec_err", "mu_drift", "sigma_drift", "update_fro_norm",
                 "cos_prev", "cond_number", "lambda_max", "whiten_identity_dev",
                 "efficacy", "retention", "bias_norm", "spec_norm"):
        setattr(rec, name, _finite_or_none(getattr(rec, name)))
    return StepResult(new_state, rec, update, batch)


@dataclass
class RunReport:
    config: ExperimentConfig
    records: list = field(default_factory=list)
    deltas: list = field(default_factory=list)  # one entry per step; None when no update was made
    final_state: Optional[NiwState] = None
    final_w: Optional[np.ndarray] = None
    warmup_updates: int = 0
    summary: dict = field(default_factory=dict)


def make_source(cfg: ExperimentConfig, phase: int):
    """Synthetic source described by the stream keys of ``cfg``."""
    if cfg.stream == "scheduled":
        return ScheduledDriftSource.create(
            cfg.d, cfg.d_h, cfg.seed, mean_scale=cfg.mean_scale, eig_min=cfg.eig_min,
            eig_max=cfg.eig_max, phase=phase, c_mu=cfg.c_mu, c_sigma=cfg.c_sigma,
            eps_mu=cfg.eps_mu, eps_sigma=cfg.eps_sigma, r_offset=cfg.r_offset,
            sigma_minus=cfg.sigma_minus, sigma_plus=cfg.sigma_plus,
        )
    if cfg.stream == "linear_teacher":
        return LinearTeacherSource.create(
            cfg.d, cfg.d_h, cfg.seed, mu_h_norm=cfg.mu_h_norm, b_star_scale=cfg.b_star_scale,
            noise_std=cfg.noise_std, w0_scale=cfg.w0_scale, phase=phase,
        )
    raise ConfigError(f"not a synthetic stream: {cfg.stream!r}", key="stream")


def phase_plan(cfg: ExperimentConfig) -> list[tuple[str, int]]:
    """Ordered ``(phase, steps)`` segments implied by the warm-up size and placement."""
    if cfg.r == 0:
        return [("target", cfg.T)]
    if cfg.warmup_placement == "start":
        return [("warmup", cfg.r), ("target", cfg.T)]
    k = int(round(cfg.warmup_placement * cfg.T))
    plan = [("target", k), ("warmup", cfg.r), ("target", cfg.T - k)]
    return [seg for seg in plan if seg[1] > 0]


def _check_dims(cfg, state: NiwState, what: str):
    if state.d != cfg.d or state.d_h != cfg.d_h:
        raise ConfigError(
            f"{what} has dimensions (d={state.d}, d_h={state.d_h}), config has "
            f"(d={cfg.d}, d_h={cfg.d_h})", key="d",
        )


def run_experiment(cfg: ExperimentConfig, init_state: Optional[NiwState] = None,
                   trace_source: Optional[TraceSource] = None,
                   on_batch: Optional[Callable[[str, int, EditBatch], None]] = None) -> RunReport:
    """Run warm-up and target phases and collect one record per step.

    ``init_state`` (or ``cfg.init_checkpoint``) replaces the prior, and
    ``cfg.step_offset`` says how many target steps the stream has already
    produced, so a run can be resumed from a checkpoint.  ``on_batch`` sees
    every batch as ``(phase, step, batch)``.
    """
    editor = cfg.editor_config()
    if init_state is None and cfg.init_checkpoint:
        from .io import load_checkpoint

        init_state = load_checkpoint(cfg.init_checkpoint)
    state = init_state if init_state is not None else init_prior(cfg.d, cfg.epsilon_0, cfg.d_h)
    _check_dims(cfg, state, "initial state")

    if cfg.trace_path is not None:
        if trace_source is None:
            from .io import ingest_trace

            trace_source = ingest_trace(cfg.trace_path)
        target = trace_source
        if target.d != cfg.d or target.d_h != cfg.d_h:
            raise ConfigError(
                f"trace has d={target.d}, d_h={target.d_h}; config has d={cfg.d}, d_h={cfg.d_h}",
                key="d",
            )
        if cfg.T > len(target):
            raise ConfigError(f"trace has only {len(target)} steps, T={cfg.T}", key="T")
    else:
        target = make_source(cfg, PHASE_TARGET)
        if cfg.step_offset:
            target.fast_forward(cfg.step_offset)
    warm = make_source(cfg.warmup_stream_config(), PHASE_WARMUP) if cfg.r > 0 else None
    teacher = isinstance(target, LinearTeacherSource)

    report = RunReport(config=cfg)
    pool: deque = deque(maxlen=cfg.retention_pool)
    prev_delta = None
    step = cfg.step_offset
    current = target
    for phase, count in phase_plan(cfg):
        source = warm if phase == "warmup" else target
        if teacher and isinstance(source, LinearTeacherSource) and source is not current:
            # The editable matrix is shared: hand over whatever the other phase did to it.
            source.w_edit = current.w_edit
        current = source
        stats_only = phase == "warmup" and cfg.warmup_variant == "stats_only"
        for _ in range(count):
            step += 1
            held = None
            if pool:
                held = (np.column_stack([p[0] for p in pool]), np.column_stack([p[1] for p in pool]))
            try:
                result = edit_step(source, state, editor, n=cfg.n, step=step, phase=phase,
                                   stats_only=stats_only, prev_delta=prev_delta, held_out=held)
            except NumericalError as exc:
                raise NumericalError(_numerical_context(exc, step, state)) from exc
            state = result.state
            report.records.append(result.record)
            if on_batch is not None:
                on_batch(phase, step, result.batch)
            if result.update is not None:
                prev_delta = result.update.delta
                report.deltas.append(result.update.delta)
                if phase == "warmup":
                    report.warmup_updates += 1
            else:
                report.deltas.append(None)
            if result.batch.targets is not None:
                pool.append((result.batch.h[:, 0], result.batch.targets[:, 0]))

    report.final_state = state
    if teacher:
        report.final_w = current.w_edit.copy()
    report.summary = summarize(report.records, report.warmup_updates)
    return report


def _numerical_context(exc: Exception, step: int, state: NiwState) -> str:
    try:
        rep = spectral_report(posterior_estimates(state).sigma_hat, 1e-300)
        cond = f"condition number {rep.condition_number:.3e}, lambda_max {rep.lambda_max:.3e}"
    except Exception:  # the covariance itself may be what broke
        cond = "covariance conditioning unavailable"
    return f"step {step}: {exc} ({cond})"
