import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aldi_is.clustering import DbscanConfig
from aldi_is.errors import ConfigurationError, DegenerateDrift, StepDiverged
from aldi_is.lsf import LinearLSF
from aldi_is.sampler import (
    AldiConfig,
    CumulativeState,
    Ensemble,
    LevelSchedule,
    adaptive_dt,
    aldi_step,
    drift,
    ensemble_cov_sqrt,
    ensemble_mean,
    initial_ensemble,
    preconditioned,
    regularized_cov_sqrt,
    run_level,
    run_schedule,
    run_ula,
    stopping_update,
    ula_step,
)
from aldi_is.smoothing import SmoothingConfig, potential_and_gradient


def _ensembles(max_d=20, max_m=50):
    return st.tuples(st.integers(1, max_d), st.integers(2, max_m), st.integers(0, 2**32 - 1))


def _make(d, m, seed):
    return np.random.default_rng(seed).standard_normal((d, m)) * 2 + 1


class FlatLSF(LinearLSF):
    """Zero gradient everywhere: the potential reduces to |x|^2 / 2."""

    def _values(self, pts):
        return np.full(pts.shape[1], 1e3)

    def _values_and_gradients(self, pts):
        return self._values(pts), np.zeros_like(pts)


# --- ensemble algebra ---------------------------------------------------------
def test_mean_examples():
    v = np.array([1.0, -2.0, 3.0])
    np.testing.assert_array_equal(ensemble_mean(np.tile(v[:, None], 4)), v)
    np.testing.assert_array_equal(ensemble_mean(np.stack([v, -v], axis=1)), 0)


@settings(max_examples=30, deadline=None)
@given(_ensembles())
def test_mean_matches_loop(args):
    x = _make(*args)
    acc = np.zeros(x.shape[0])
    for i in range(x.shape[1]):
        acc += x[:, i]
    np.testing.assert_allclose(ensemble_mean(Ensemble(x)), acc / x.shape[1], atol=1e-12)


def test_cov_sqrt_examples():
    assert not np.any(ensemble_cov_sqrt(np.ones((3, 5))))
    s = ensemble_cov_sqrt(np.array([[-1.0, 1.0]]))
    assert (s @ s.T)[0, 0] == pytest.approx(1.0)


@settings(max_examples=40, deadline=None)
@given(_ensembles())
def test_cov_sqrt_reproduces_covariance(args):
    x = _make(*args)
    d, m = x.shape
    mu = x.mean(axis=1)
    cov = sum(np.outer(x[:, i] - mu, x[:, i] - mu) for i in range(m)) / m
    s = ensemble_cov_sqrt(x)
    np.testing.assert_allclose(s @ s.T, cov, atol=1e-12 * max(1.0, np.abs(cov).max()))


@settings(max_examples=60, deadline=None)
@given(_ensembles(), st.sampled_from([0.0, 0.3, 1.0]))
def test_regularised_root_identity(args, gamma):
    x = _make(*args)
    d, m = x.shape
    s = ensemble_cov_sqrt(x)
    root = regularized_cov_sqrt(x, gamma)
    assert root.shape == (d, m + d)
    target = (1 - gamma) * (s @ s.T) + gamma * np.eye(d)
    np.testing.assert_allclose(root @ root.T, target, atol=1e-12 * max(1.0, np.abs(target).max()))


@settings(max_examples=30, deadline=None)
@given(_ensembles(), st.floats(0.0, 1.0))
def test_preconditioned_matches_dense(args, gamma):
    x = _make(*args)
    grads = np.random.default_rng(args[2] + 1).standard_normal(x.shape)
    s = ensemble_cov_sqrt(x)
    dense = ((1 - gamma) * (s @ s.T) + gamma * np.eye(x.shape[0])) @ grads
    np.testing.assert_allclose(preconditioned(x, grads, gamma), dense, atol=1e-10)


# --- steps -----------------------------------------------------------------------
@settings(max_examples=40, deadline=None)
@given(_ensembles(), st.floats(1e-6, 1.0))
def test_gamma_one_is_ula(args, dt):
    x = _make(*args)
    d, m = x.shape
    gen = np.random.default_rng(args[2] + 7)
    grads = gen.standard_normal((d, m))
    noise = gen.standard_normal((m + d, m))
    a = aldi_step(Ensemble(x), grads, 1.0, dt, noise).particles
    u = ula_step(x, grads, dt, noise[m:])
    assert np.max(np.abs(a - u)) <= 1e-12


def test_zero_forces_spread_outward_keeping_mean(rng):
    d, m, gamma, dt = 3, 8, 0.4, 0.01
    x = rng.standard_normal((d, m))
    new = aldi_step(Ensemble(x), np.zeros((d, m)), gamma, dt, np.zeros((m + d, m))).particles
    centred = x - x.mean(axis=1, keepdims=True)
    np.testing.assert_allclose(new, x + dt * (1 - gamma) * (d + 1) / m * centred, atol=1e-14)
    np.testing.assert_allclose(new.mean(axis=1), x.mean(axis=1), atol=1e-14)


def test_diffusion_covariance_monte_carlo():
    gen = np.random.default_rng(3)
    d, m, gamma, dt = 3, 5, 0.3, 0.02
    x = gen.standard_normal((d, m)) * np.array([[1.0], [2.0], [0.5]])
    s = ensemble_cov_sqrt(x)
    sigma_g = (1 - gamma) * (s @ s.T) + gamma * np.eye(d)
    # dense square root by eigendecomposition, the reference the factor-free root must match
    w, v = np.linalg.eigh(sigma_g)
    dense_root = v @ np.diag(np.sqrt(w)) @ v.T
    n = 100_000
    reps = np.empty((d, n))
    base = x + dt * drift(x, np.zeros((d, m)), gamma)
    for k in range(n):
        reps[:, k] = aldi_step(Ensemble(x), np.zeros((d, m)), gamma, dt,
                               gen.standard_normal((m + d, m))).particles[:, 0] - base[:, 0]
    emp = np.cov(reps)
    ref = 2 * dt * dense_root @ dense_root.T
    assert np.linalg.norm(emp - ref) <= 0.02 * np.linalg.norm(ref)


def test_step_validation_and_divergence():
    x = np.zeros((2, 3))
    with pytest.raises(ConfigurationError):
        aldi_step(Ensemble(x), x, 0.5, 0.0, np.zeros((5, 3)))
    with pytest.raises(ConfigurationError):
        aldi_step(Ensemble(x), x, 0.5, 0.1, np.zeros((2, 3)))
    with pytest.raises(StepDiverged):
        aldi_step(Ensemble(x), np.full((2, 3), np.inf), 1.0, 0.1, np.zeros((5, 3)))


# --- adaptive step and stopping rule ------------------------------------------------
def test_adaptive_dt_example():
    x = np.zeros((2, 3))
    grads = np.zeros((2, 3))
    grads[:, 1] = [6.0, 8.0]  # drift norm 10 under gamma = 1
    assert adaptive_dt(x, grads, 1.0, 0.1) == pytest.approx(0.01)


@settings(max_examples=30, deadline=None)
@given(_ensembles(max_d=6, max_m=10), st.floats(0.1, 100.0))
def test_adaptive_dt_homogeneous_and_brute_force(args, c):
    x = np.zeros(args[:2])  # zero spread, so the drift is -gamma * grads
    grads = np.random.default_rng(args[2]).standard_normal(x.shape)
    dt = adaptive_dt(x, grads, 1.0, 0.1)
    top = max(math.sqrt(sum(v * v for v in grads[:, i])) for i in range(x.shape[1]))
    assert dt == pytest.approx(0.1 / top, rel=1e-12)
    assert adaptive_dt(x, c * grads, 1.0, 0.1) == pytest.approx(dt / c, rel=1e-10)
    assert adaptive_dt(x, grads, 0.5, 0.1) == pytest.approx(2 * dt, rel=1e-12)


def test_adaptive_dt_degenerate():
    with pytest.raises(DegenerateDrift):
        adaptive_dt(np.zeros((2, 3)), np.zeros((2, 3)), 1.0)
    with pytest.raises(StepDiverged):
        adaptive_dt(np.zeros((2, 3)), np.full((2, 3), np.nan), 1.0)


def test_stopping_rule_constant_statistic():
    x = np.ones((2, 4))
    grads = np.zeros((2, 4))  # statistic = |x|^2 = 2
    state = CumulativeState()
    for k in range(30):
        state, stop = stopping_update(state, x, grads, 0.1, k_min=12)
        assert state.value == pytest.approx(2.0)
        assert stop == (k >= 12)
        if stop:
            break
    assert k == 12


def test_stopping_rule_first_value_and_running_mean(rng):
    stats = []
    state = CumulativeState()
    for k in range(25):
        x = rng.standard_normal((3, 6))
        grads = rng.standard_normal((3, 6))
        stats.append(np.mean(np.sum(grads**2, axis=0) + np.sum(x**2, axis=0)))
        state, _ = stopping_update(state, x, grads, 0.1, 5)
        if k == 0:
            assert state.value == pytest.approx(stats[0], rel=1e-15)
        assert state.value == pytest.approx(np.mean(stats), rel=1e-12)


# --- configuration ------------------------------------------------------------------
@pytest.mark.parametrize("kw", [dict(gamma=0.0), dict(gamma=1.5), dict(eps_cumu=0.0), dict(k_min=0),
                                dict(k_min=5, k_max=5), dict(step_scale=0.0), dict(share="x"),
                                dict(stopping_scope="x")])
def test_aldi_config_invariants(kw):
    with pytest.raises(ConfigurationError):
        AldiConfig(**kw)


def test_schedule_invariants():
    assert len(LevelSchedule.paper()) == 4
    with pytest.raises(ConfigurationError):
        LevelSchedule((1.0, 0.5), (1.0, 0.5), (0.1, 0.1))
    with pytest.raises(ConfigurationError):
        LevelSchedule((0.5, 1.0, 0.0), (1, 1, 1), (0.1, 0.1, 0.1))
    with pytest.raises(ConfigurationError):
        LevelSchedule((1.0, 0.0), (1.0,), (0.1, 0.1))


# --- runs ----------------------------------------------------------------------------
def test_run_level_kmax_zero_is_identity(rng):
    lsf = LinearLSF(3)
    x = rng.standard_normal((3, 4))
    out, level = run_level(Ensemble(x), lsf, SmoothingConfig(0.1, 0.1), AldiConfig(k_max=0), rng)
    np.testing.assert_array_equal(out.particles, x)
    assert level.iterations == 0 and lsf.ledger.total_evaluations == 0


def test_run_level_gaussian_stationary_law():
    gen = np.random.default_rng(11)
    e0 = initial_ensemble(2, 64, gen)
    e0.particles *= 3.0
    cfg = AldiConfig(gamma=1.0, eps_cumu=1e-9, k_min=10, k_max=2000)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # the run is meant to hit k_max
        out, level = run_level(e0, FlatLSF(2), SmoothingConfig(1.0, 1.0), cfg, gen)
    x = out.particles
    assert np.all(np.abs(x.mean(axis=1)) <= 3 / math.sqrt(64))
    assert np.all((x.var(axis=1) >= 0.6) & (x.var(axis=1) <= 1.4))


def test_paper_schedule_concentrates_near_failure_set():
    gen = np.random.default_rng(5)
    lsf = LinearLSF(100)
    smoothing = SmoothingConfig.from_reduced(1e-9)
    cfg = AldiConfig(k_min=50, stopping_scope="level")
    out, diag = run_schedule(initial_ensemble(100, 50, gen), lsf, smoothing,
                             LevelSchedule.paper(0.01), cfg, gen)
    g = lsf.value(out.particles)
    assert np.mean(g <= 5 * smoothing.sigma * math.log(1e4)) >= 0.9
    assert not diag.diverged


def test_single_level_schedule_equals_run_level():
    lsf = LinearLSF(5)
    smoothing = SmoothingConfig.from_reduced(1e-2)
    cfg = AldiConfig(gamma=0.5, eps_cumu=0.05, k_min=5)
    a_rng, b_rng = np.random.default_rng(1), np.random.default_rng(1)
    e0 = initial_ensemble(5, 8, np.random.default_rng(0))
    a, _ = run_schedule(e0, lsf, smoothing, LevelSchedule.single(0.5, 0.05), cfg, a_rng)
    b, _ = run_level(e0, lsf, smoothing.at_level(0.0), cfg, b_rng)
    np.testing.assert_array_equal(a.particles, b.particles)


@pytest.mark.parametrize("dbscan", [None, DbscanConfig()])
def test_gradient_counts_match_ledger(dbscan):
    gen = np.random.default_rng(2)
    lsf = LinearLSF(10)
    cfg = AldiConfig(k_min=15, dbscan=dbscan)
    _, diag = run_schedule(initial_ensemble(10, 20, gen), lsf, SmoothingConfig.from_reduced(1e-3),
                           LevelSchedule.paper(), cfg, gen)
    assert diag.gradient_evaluations == lsf.ledger.gradient_calls == diag.ledger["gradient_calls"]
    if dbscan is not None:
        assert diag.gradient_evaluations < 20 * diag.iterations


def test_run_schedule_is_reproducible():
    def go():
        gen = np.random.default_rng(9)
        out, _ = run_schedule(initial_ensemble(4, 6, gen), LinearLSF(4), SmoothingConfig.from_reduced(1e-2),
                              LevelSchedule.paper(), AldiConfig(k_min=5), gen)
        return out.particles

    np.testing.assert_array_equal(go(), go())


def test_run_schedule_reports_divergence():
    class Exploding(LinearLSF):
        def _values_and_gradients(self, pts):
            return self._values(pts), np.full(pts.shape, np.inf)

    gen = np.random.default_rng(0)
    with pytest.warns(RuntimeWarning):
        out, diag = run_schedule(initial_ensemble(2, 4, gen), Exploding(2), SmoothingConfig(1.0, 1.0),
                                 LevelSchedule.single(), AldiConfig(k_min=2), gen)
    assert diag.diverged and np.all(np.isfinite(out.particles))


def test_run_ula_fixed_horizon():
    gen = np.random.default_rng(4)
    lsf = LinearLSF(3)
    smoothing = SmoothingConfig.from_reduced(0.1)
    out, diag = run_ula(initial_ensemble(3, 5, gen), lsf, smoothing, 1e-3, 100, gen)
    assert diag.iterations == 100 and lsf.ledger.gradient_calls == 500
    assert out.elapsed_time == pytest.approx(0.1)


def test_ula_matches_manual_loop():
    smoothing = SmoothingConfig.from_reduced(0.1)
    lsf = LinearLSF(3)
    x0 = np.random.default_rng(0).standard_normal((3, 4))
    out, _ = run_ula(x0, lsf, smoothing, 1e-2, 10, np.random.default_rng(1))
    gen = np.random.default_rng(1)
    x = x0.copy()
    for _ in range(10):
        _, grads = potential_and_gradient(x, lsf, smoothing)
        x = x - 1e-2 * grads + math.sqrt(2e-2) * gen.standard_normal(x.shape)
    np.testing.assert_allclose(out.particles, x, rtol=0, atol=1e-13)
