"""Acceptance criteria, each run at its stated tolerance.

Every test records one PASS/FAIL line (shown in the terminal summary) and
then asserts the same condition.  Seeds are always 0..N-1.
"""

import time

import numpy as np
import pytest
from scipy.linalg import fractional_matrix_power

from lnedit import oracle
from lnedit.cli import main as cli_main
from lnedit.config import ExperimentConfig
from lnedit.diagnostics import column, moving_average, warmup_curve_shift
from lnedit.editor import EditBatch, EditorConfig, Mode, solve_update
from lnedit.experiment import run_experiment
from lnedit.io import ingest_trace, load_checkpoint, save_checkpoint
from lnedit.niw import DiagStats, NiwState, init_prior, niw_update, observe, summarize_batch
from lnedit.whitening import build_transform


def _rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _random_spd(rng, d, lo=0.1, hi=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    s = (q * rng.uniform(lo, hi, d)) @ q.T
    return 0.5 * (s + s.T)


def _timed_runs(configs):
    start = time.perf_counter()
    reports = [run_experiment(c) for c in configs]
    return reports, time.perf_counter() - start


# -- shared runs (each group is computed once per session) -----------------

@pytest.fixture(scope="module")
def stationary_500():
    cfgs = [ExperimentConfig(d=8, n=50, T=500, seed=s) for s in range(50)]
    return _timed_runs(cfgs)


def _teacher(mode, hook, seed):
    return ExperimentConfig(stream="linear_teacher", T=1000, mode=mode, hook=hook, seed=seed)


@pytest.fixture(scope="module")
def teacher_runs():
    cache = {}

    def get(mode, hook="none"):
        if (mode, hook) not in cache:
            cache[mode, hook] = _timed_runs([_teacher(mode, hook, s) for s in range(20)])
        return cache[mode, hook]

    return get


@pytest.fixture(scope="module")
def stationary_1000():
    cache = {}

    def get(hook="none"):
        if hook not in cache:
            cfgs = [ExperimentConfig(T=1000, mode="full", hook=hook, seed=s) for s in range(20)]
            cache[hook] = _timed_runs(cfgs)
        return cache[hook]

    return get


# -- 1 ----------------------------------------------------------------------

def test_c01_conjugacy_equivalence(verdict):
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 9))
        prior = NiwState(
            m=rng.standard_normal(d),
            kappa=float(rng.choice([0.0, rng.uniform(0.1, 5.0)])),
            psi=_random_spd(rng, d),
            nu=float(rng.uniform(0.0, 10.0)),
            h_stats=DiagStats.zeros(0),
        )
        batches = [rng.standard_normal((int(rng.integers(1, 21)), d)) * 2 + 1
                   for _ in range(int(rng.integers(1, 51)))]
        state = prior
        for b in batches:
            state = niw_update(state, summarize_batch(b))
        ref = oracle.batch_niw_posterior(prior, np.vstack(batches))
        worst = max(worst, _rel(state.m, ref.m), _rel(state.psi, ref.psi),
                    _rel(state.kappa, ref.kappa), _rel(state.nu, ref.nu))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-9 and elapsed < 10
    verdict(1, ok, f"worst relative error {worst:.2e} (<= 1e-9), {elapsed:.1f}s (< 10s)")
    assert ok


# -- 2 ----------------------------------------------------------------------

def _independent_targets(batch, state, history_h, cfg):
    """V built without the editor's helpers: direct formulas plus scipy's matrix power."""
    d = state.d
    mu = state.m
    sigma = state.psi / max(state.nu - d - 1, 1.0)
    if cfg.mode is Mode.RAW:
        v_t = batch.v_raw
    elif cfg.mode is Mode.DIAGONAL:
        v_t = (batch.v_raw - mu[:, None]) / np.sqrt(np.diag(sigma))[:, None]
    else:
        w = np.real(fractional_matrix_power(sigma, -0.5))
        v_t = w @ (batch.v_raw - mu[:, None])
    sq = oracle.naive_standardized_sq_norms(batch.h, history_h)
    return v_t, sq, -cfg.gamma * v_t * sq[None, :]


def test_c02_ridge_optimality(verdict):
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst_grad = worst_sum = 0.0
    for i in range(100):
        d, d_h, n = int(rng.integers(1, 9)), int(rng.integers(1, 17)), int(rng.integers(1, 33))
        cfg = EditorConfig(gamma=float(10 ** rng.uniform(-4, 0)), lam=float(10 ** rng.uniform(-1, 2)),
                           mode=list(Mode)[i % 3])
        state = init_prior(d, 1e-6, d_h)
        history = []
        for _ in range(3):
            h = rng.standard_normal((d_h, 40)) + 0.5
            v = rng.standard_normal((d, 40)) * 2 + 1
            state = observe(state, v.T, h.T)
            history.extend(h.T)
        batch = EditBatch(h=rng.standard_normal((d_h, n)) + 0.5, v_raw=rng.standard_normal((d, n)) * 2 + 1)
        state = observe(state, batch.v_raw.T, batch.h.T)
        history.extend(batch.h.T)
        upd, transform = solve_update(batch, state, cfg)
        assert transform.floored_count == 0
        v_t, sq, targets = _independent_targets(batch, state, history, cfg)
        grad = oracle.ridge_objective_gradient(upd.delta, batch.h, targets, cfg.lam)
        phi = oracle.dense_projection_factors(batch.h, sq, cfg.lam)
        sum_form = -cfg.gamma * sum(np.outer(v_t[:, j], phi[j]) for j in range(n))
        worst_grad = max(worst_grad, float(np.linalg.norm(grad)))
        worst_sum = max(worst_sum, float(np.linalg.norm(upd.delta - sum_form)))
    elapsed = time.perf_counter() - start
    ok = worst_grad < 1e-8 and worst_sum <= 1e-10 and elapsed < 10
    verdict(2, ok, f"max objective gradient {worst_grad:.2e} (< 1e-8), matrix vs sum form "
                   f"{worst_sum:.2e} (<= 1e-10), {elapsed:.1f}s (< 10s)")
    assert ok


# -- 3 ----------------------------------------------------------------------

def test_c03_whitening_reconstruction(verdict, stationary_500):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        d = int(rng.integers(1, 17))
        sigma = _random_spd(rng, d, 0.01, 100.0)
        t = build_transform(rng.standard_normal(d), sigma)
        assert t.floored_count == 0
        worst = max(worst, oracle.whitening_reconstruction_error(t.w, sigma))

    reports, elapsed = stationary_500
    good = 0
    finals = []
    for rep in reports:
        dev = column(rep.records, "whiten_identity_dev")
        finals.append(dev[-1])
        good += dev[-1] < 0.15 and dev[:50].mean() > dev[-50:].mean()
    frac = good / len(reports)
    ok = worst <= 1e-8 and frac >= 0.9 and elapsed < 60
    verdict(3, ok, f"reconstruction {worst:.2e} (<= 1e-8); stream: final < 0.15 and decreasing "
                   f"on {frac:.0%} of 50 seeds (>= 90%), median final {np.median(finals):.3f}, "
                   f"{elapsed:.1f}s (< 60s)")
    assert ok


# -- 4 ----------------------------------------------------------------------

def test_c04_mse_decay(verdict, stationary_500):
    reports, elapsed = stationary_500
    mse = np.array([column(r.records, "mean_mse") for r in reports])
    smoothed = moving_average(mse.mean(axis=0), 20)
    rises = int(np.sum(np.diff(smoothed) > 0))
    frac = float(np.mean(mse[:, -1] < mse[:, 9]))
    per_seed_monotone = float(np.mean([np.all(np.diff(moving_average(m, 20)) <= 0) for m in mse]))
    ok = rises == 0 and frac >= 0.9 and elapsed < 60
    verdict(4, ok, f"seed-averaged window-20 MSE rises at {rises} of {smoothed.size - 1} steps (0); "
                   f"final < MSE(10) on {frac:.0%} of 50 seeds (>= 90%); "
                   f"[per-seed monotone: {per_seed_monotone:.0%}], {elapsed:.1f}s (< 60s)")
    assert ok


# -- 5 ----------------------------------------------------------------------

def test_c05_covariance_error_bounded(verdict, stationary_500):
    reports, elapsed = stationary_500
    good = 0
    for rep in reports:
        err = column(rep.records, "cov_spec_err")
        good += np.all(err[99:500] <= 3 * err[99])
    frac = good / len(reports)
    ok = frac >= 0.9 and elapsed < 60
    verdict(5, ok, f"cov_spec_err within 3x of step 100 on {frac:.0%} of 50 seeds (>= 90%), "
                   f"{elapsed:.1f}s (< 60s)")
    assert ok


# -- 6 ----------------------------------------------------------------------

def test_c06_warmup_curve_shift(verdict):
    start = time.perf_counter()
    fractions, medians = [], []
    for s in range(20):
        warm = run_experiment(ExperimentConfig(r=50, T=200, seed=s))
        cold = run_experiment(ExperimentConfig(r=0, T=200, seed=s))
        shift = warmup_curve_shift(warm, cold)
        fractions.append(shift.fraction_le)
        medians.append(shift.median_ratio)
    elapsed = time.perf_counter() - start
    mean_frac = float(np.mean(fractions))
    median_ratio = float(np.median(medians))
    ok = mean_frac >= 0.9 and 0.5 <= median_ratio <= 2.0 and elapsed < 120
    verdict(6, ok, f"mean fraction warm <= cold {mean_frac:.3f} (>= 0.9); median ratio "
                   f"warm(t)/cold(r+t) {median_ratio:.3f} (in [0.5, 2]), {elapsed:.1f}s (< 120s)")
    assert ok


# -- 7 / 10 -----------------------------------------------------------------

def _second_half_abs_cos(rep):
    c = column(rep.records, "cos_prev")
    half = c[len(c) // 2:]
    return float(np.nanmean(np.abs(half)))


def _geometry(teacher_runs, hook):
    full, t_full = teacher_runs("full", hook)
    raw, t_raw = teacher_runs("raw", hook)
    f = np.array([_second_half_abs_cos(r) for r in full])
    r = np.array([_second_half_abs_cos(r) for r in raw])
    seeds_ok = int(np.sum((f < 0.1) & (f < r)))
    return f, r, seeds_ok, t_full + t_raw


def test_c07_update_geometry(verdict, teacher_runs):
    f, r, seeds_ok, elapsed = _geometry(teacher_runs, "none")
    ok = seeds_ok >= 18 and elapsed < 120
    verdict(7, ok, f"full < 0.1 and < raw on {seeds_ok}/20 seeds (>= 18); full below 0.1 on "
                   f"{int(np.sum(f < 0.1))}/20, below raw on {int(np.sum(f < r))}/20; "
                   f"seed means full {f.mean():.4f} raw {r.mean():.4f}, {elapsed:.1f}s (< 120s)")
    assert ok


# -- 8 / 10 -----------------------------------------------------------------

def _norms_and_bias(reports):
    norm_ok = bias_ok = 0
    ratios, bias_sq, bias_plain = [], [], []
    for rep in reports:
        norms = column(rep.records, "update_fro_norm")
        ratio = norms[100:1000].max() / norms[:100].max()
        ratios.append(ratio)
        norm_ok += ratio <= 2.0
        b = column(rep.records, "bias_norm")
        sq = np.mean(b[750:] ** 2) / np.mean(b[:10] ** 2)
        bias_sq.append(sq)
        bias_plain.append(np.mean(b[750:]) / np.mean(b[:10]))
        bias_ok += sq < 0.05
    n = len(reports)
    return norm_ok / n, bias_ok / n, np.array(ratios), np.array(bias_sq), np.array(bias_plain)


def test_c08_bounded_norms_and_bias_decay(verdict, stationary_1000):
    reports, elapsed = stationary_1000("none")
    norm_frac, bias_frac, ratios, sq, plain = _norms_and_bias(reports)
    ok = norm_frac >= 0.9 and bias_frac >= 0.9
    verdict(8, ok, f"max norm ratio <= 2 on {norm_frac:.0%} (>= 90%, worst {ratios.max():.3f}); "
                   f"squared bias ratio < 0.05 on {bias_frac:.0%} (median {np.median(sq):.4f}) "
                   f"[unsquared median {np.median(plain):.4f}], {elapsed:.1f}s")
    assert ok


# -- 9 ----------------------------------------------------------------------

def test_c09_drift_surrogate_decay(verdict, teacher_runs):
    reports, _ = teacher_runs("full", "none")
    early = np.median([column(r.records, "mu_drift")[4] for r in reports])
    late = np.median([column(r.records, "mu_drift")[499] for r in reports])
    ok = late < 0.1 * early
    verdict(9, ok, f"median mu_drift t=500 {late:.3e} vs t=5 {early:.3e}: ratio {late / early:.4f} (< 0.1)")
    assert ok


# -- 10 ---------------------------------------------------------------------

def test_c10_lipschitz_hook(verdict, teacher_runs, stationary_1000):
    f, r, seeds_ok, elapsed = _geometry(teacher_runs, "tanh")
    reports, _ = stationary_1000("tanh")
    norm_frac, bias_frac, ratios, sq, _ = _norms_and_bias(reports)
    ok = seeds_ok >= 18 and elapsed < 120 and norm_frac >= 0.9 and bias_frac >= 0.9
    verdict(10, ok, f"tanh hook: geometry {seeds_ok}/20 seeds (>= 18, full mean {f.mean():.4f}, "
                    f"raw mean {r.mean():.4f}); norm ratio ok on {norm_frac:.0%}; "
                    f"bias ok on {bias_frac:.0%} (median {np.median(sq):.4f})")
    assert ok


# -- 11 ---------------------------------------------------------------------

def _write_config(path, text):
    path.write_text(text)
    return str(path)


def test_c11_determinism_and_round_trips(verdict, tmp_path):
    cfg = _write_config(tmp_path / "c.cfg", "d = 4\nd_h = 6\nn = 30\nT = 60\nc_mu = 0.5\nc_sigma = 0.5\n")
    assert cli_main(["run", "--config", cfg, "--seed", "7", "--out", str(tmp_path / "a")]) == 0
    assert cli_main(["run", "--config", cfg, "--seed", "7", "--out", str(tmp_path / "b")]) == 0
    same_csv = (tmp_path / "a" / "steps.csv").read_bytes() == (tmp_path / "b" / "steps.csv").read_bytes()

    # checkpoint continuation: 200 steps, save, resume for 100 more
    base = dict(d=4, d_h=6, n=30, c_mu=0.5, c_sigma=0.5, seed=3)
    first = run_experiment(ExperimentConfig(T=200, **base))
    ckpt = tmp_path / "state.json"
    save_checkpoint(first.final_state, ckpt)
    resumed = run_experiment(ExperimentConfig(T=100, step_offset=200, init_checkpoint=str(ckpt), **base))
    whole = run_experiment(ExperimentConfig(T=300, **base))
    continued = all(np.array_equal(a, b) for a, b in zip(first.deltas + resumed.deltas, whole.deltas))
    end_a, end_b = resumed.final_state, whole.final_state
    continued &= (np.array_equal(end_a.m, end_b.m) and np.array_equal(end_a.psi, end_b.psi)
                  and end_a.kappa == end_b.kappa and end_a.nu == end_b.nu)
    continued &= [r.as_row() for r in whole.records[201:]] == [r.as_row() for r in resumed.records[1:]]
    continued &= load_checkpoint(ckpt).psi.tobytes() == first.final_state.psi.tobytes()

    # export-trace -> ingest -> identical update sequence
    trace = tmp_path / "trace.csv"
    assert cli_main(["export-trace", "--config", cfg, "--seed", "7", "--out", str(trace)]) == 0
    orig = run_experiment(ExperimentConfig(d=4, d_h=6, n=30, T=60, c_mu=0.5, c_sigma=0.5, seed=7))
    replay = run_experiment(ExperimentConfig(d=4, d_h=6, n=30, T=60, stream=f"trace:{trace}"),
                            trace_source=ingest_trace(trace))
    traced = len(orig.deltas) == len(replay.deltas) and all(
        np.array_equal(a, b) for a, b in zip(orig.deltas, replay.deltas))

    ok = same_csv and continued and traced
    verdict(11, ok, f"byte-identical steps.csv {same_csv}; checkpoint continuation exact {continued}; "
                    f"trace round-trip exact {traced}")
    assert ok
