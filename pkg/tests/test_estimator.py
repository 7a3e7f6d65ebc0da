import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from aldi_is.errors import CapabilityError, ConfigurationError
from aldi_is.estimator import (
    alpha_sigma,
    crude_mc,
    is_estimate,
    l_sigma,
    log_standard_normal,
    nrmse,
    summarize,
    theory_diagnostics,
    ula_constants,
)
from aldi_is.lsf import FourBranchesLSF, LinearLSF
from aldi_is.smoothing import SmoothingConfig, log_smooth_indicator, smooth_indicator


class Constant(LinearLSF):
    def __init__(self, value, dim=2):
        super().__init__(dim)
        self.const = value

    def _values(self, pts):
        return np.full(pts.shape[1], float(self.const))


def test_log_standard_normal_matches_scipy(rng):
    x = rng.standard_normal((3, 7)) * 3
    ref = stats.multivariate_normal(np.zeros(3), np.eye(3)).logpdf(x.T)
    np.testing.assert_allclose(log_standard_normal(x), ref, rtol=1e-13)
    assert log_standard_normal(np.zeros(2)) == pytest.approx(-math.log(2 * math.pi))


# --- importance sampling -----------------------------------------------------------
def test_nominal_auxiliary_on_whole_space_gives_one(rng):
    x = rng.standard_normal((2, 500))
    rep = is_estimate(x, log_standard_normal, Constant(-1.0))
    assert rep.p_hat == 1.0 and rep.weight_max == 1.0
    assert rep.ess == pytest.approx(500)


def test_weights_match_linear_space(rng):
    beta = 2.0
    x = rng.normal(beta, 1.0, size=(1, 400))
    aux = stats.norm(beta, 1.0).logpdf(x[0])
    rep = is_estimate(x, aux, LinearLSF(1, beta))
    fail = x[0] >= beta
    naive = stats.norm.pdf(x[0][fail]) / stats.norm(beta, 1.0).pdf(x[0][fail])
    assert rep.weight_max == pytest.approx(naive.max(), rel=1e-12)
    assert rep.p_hat == pytest.approx(naive.sum() / 400, rel=1e-12)
    assert rep.n_failures == fail.sum() and rep.ess <= rep.n_samples


def test_unbiased_on_shifted_gaussian():
    beta, n, reps = 2.0, 1000, 1000
    gen = np.random.default_rng(2024)
    lsf = LinearLSF(1, beta)
    aux = stats.norm(beta, 1.0)
    est = np.array([is_estimate(x, aux.logpdf(x[0]), lsf).p_hat
                    for x in (gen.normal(beta, 1.0, size=(1, n)) for _ in range(reps))])
    target = stats.norm.cdf(-beta)
    assert target == pytest.approx(0.022750131948, rel=1e-10)
    assert abs(est.mean() - target) <= 3 * est.std(ddof=1) / math.sqrt(reps)
    assert stats.ttest_1samp(est, target).pvalue > 0.01


def test_non_finite_weights_are_excluded(rng):
    x = rng.standard_normal((1, 1000)) + 3
    x[0, :5] = 4.0  # inside the failure set
    log_q = stats.norm(3, 1).logpdf(x[0])
    log_q[:5] = -np.inf
    lsf = LinearLSF(1, 3.0)
    with pytest.warns(RuntimeWarning):
        rep = is_estimate(x, log_q, lsf)
    assert rep.n_excluded == 5 and not rep.valid
    assert np.isfinite(rep.p_hat)
    log_q[1:5] = stats.norm(3, 1).logpdf(x[0, 1:5])
    with pytest.warns(RuntimeWarning):
        rep = is_estimate(x, log_q, lsf)
    assert rep.n_excluded == 1 and rep.valid  # at the 0.1 % allowance


def test_is_validation():
    with pytest.raises(ConfigurationError):
        is_estimate(np.zeros((1, 0)), np.zeros(0), LinearLSF(1))
    with pytest.raises(ConfigurationError):
        is_estimate(np.zeros((1, 3)), np.zeros(2), LinearLSF(1))


# --- crude Monte Carlo and nRMSE -------------------------------------------------------
def test_crude_mc_examples(rng):
    assert crude_mc(Constant(-1.0), 1000, rng).p_hat == 1.0
    assert crude_mc(Constant(1.0), 1000, rng).p_hat == 0.0
    n = 250_000  # spans several chunks
    p = crude_mc(LinearLSF(1, 0.0), n, rng).p_hat
    assert abs(p - 0.5) <= 3 * math.sqrt(0.25 / n)
    with pytest.raises(ConfigurationError):
        crude_mc(Constant(1.0), 0, rng)


def test_crude_mc_nrmse_formula():
    p, n, reps = 0.1, 100, 10_000
    lsf = LinearLSF(1, float(stats.norm.isf(p)))
    gen = np.random.default_rng(7)
    est = [crude_mc(lsf, n, gen).p_hat for _ in range(reps)]
    expected = math.sqrt((1 - p) / (n * p))
    assert expected == pytest.approx(0.3)
    assert abs(nrmse(est, p) - expected) <= 0.05 * expected


def test_nrmse_examples():
    assert nrmse([0.2, 0.2], 0.2) == 0.0
    assert nrmse([2e-7], 1e-7) == pytest.approx(1.0)
    with pytest.raises(ConfigurationError):
        nrmse([], 1.0)
    with pytest.raises(ConfigurationError):
        nrmse([1.0], 0.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1e-3), min_size=1, max_size=30), st.floats(1e-8, 1e-3), st.integers(-20, 20))
def test_nrmse_scale_covariant(est, p_ref, k):
    c = 2.0**k  # powers of two scale without rounding
    assert nrmse(np.array(est) * c, p_ref * c) == nrmse(est, p_ref)


def test_summarize_excludes_failed_reps():
    led = [{"lsf_calls": 10, "gradient_calls": 2}, {"lsf_calls": 20}, {"lsf_calls": 30}]
    s = summarize([1.0, np.nan, 3.0], 2.0, led, [False, True, False])
    assert s.reps == 3 and s.failure_count == 1
    assert s.nrmse == pytest.approx(nrmse([1.0, 3.0], 2.0))
    assert s.mean_estimate == 2.0
    assert s.call_means["lsf_calls"] == 20.0 and s.call_totals["gradient_calls"] == 2
    assert not s.valid  # one failure in three is above the 2 % allowance
    ok = summarize([1.0] * 100, 1.0, [{}] * 100, [False] * 99 + [True])
    assert ok.valid


# --- smoothing error diagnostics ------------------------------------------------------
def test_exp_neg_mu_over_sigma():
    cfg = SmoothingConfig.from_reduced(0.1)
    sigma = math.sqrt(3) * 0.1 / math.pi
    mu = math.log(9) * math.sqrt(0.3 / math.pi)
    gen = np.random.default_rng(0)
    diag = theory_diagnostics(LinearLSF(2, 2.0), cfg, gen.standard_normal((2, 10)), gen, n_mc=1000)
    assert diag.exp_neg_mu_over_sigma == pytest.approx(math.exp(-mu / sigma), rel=1e-12)


def test_linear_constants():
    cfg = SmoothingConfig.from_reduced(0.1)
    r = 3.0
    a, l = ula_constants(LinearLSF(10), cfg, r)
    assert a == 1.0
    assert l == pytest.approx(math.exp((r - cfg.mu) / cfg.sigma) / cfg.sigma**2 + 1, rel=1e-12)
    assert alpha_sigma(-2.0, 0.5) == pytest.approx(-3.0)
    assert l_sigma(2.0, 3.0, 0.5, 0.1, 1.0) == pytest.approx(math.exp(1.8) * 16 + 13, rel=1e-12)


def test_missing_capabilities():
    with pytest.raises(CapabilityError):
        ula_constants(FourBranchesLSF(), SmoothingConfig.from_reduced(0.1), 1.0)
    with pytest.raises(ConfigurationError):
        theory_diagnostics(LinearLSF(1), SmoothingConfig(0.1, 0.1, q=0.5), np.zeros((1, 4)),
                           np.random.default_rng(0))


def _rejection_sample(cfg, lsf, n, gen):
    out = []
    while sum(len(o) for o in out) < n:
        z = gen.standard_normal(200_000)
        keep = gen.uniform(size=z.size) < smooth_indicator(lsf(z[None, :]), cfg)
        out.append(z[keep])
    return np.concatenate(out)[:n][None, :]


@pytest.mark.parametrize("sigma_r", [1e-2, 1e-1])
def test_bound_covers_observed_error(sigma_r):
    beta, n_is, reps = 2.0, 200, 300
    lsf = LinearLSF(1, beta)
    cfg = SmoothingConfig.from_reduced(sigma_r)
    gen = np.random.default_rng(11)
    f = lambda x: float(smooth_indicator(lsf(np.array([[x]])), cfg)[0]) * stats.norm.pdf(x)  # noqa: E731
    p_sigma = integrate.quad(f, -np.inf, beta)[0] + integrate.quad(f, beta, np.inf)[0]

    def log_aux(x):
        return log_smooth_indicator(lsf(x), cfg) + log_standard_normal(x) - math.log(p_sigma)

    p = stats.norm.cdf(-beta)
    est = [is_estimate(_rejection_sample(cfg, lsf, n_is, gen), log_aux, lsf).p_hat for _ in range(reps)]
    observed = nrmse(est, p)
    diag = theory_diagnostics(lsf, cfg, _rejection_sample(cfg, lsf, 40_000, gen), gen,
                              n_is=n_is, p_ref=p, n_mc=10**6)
    assert diag.coupling_pairs > 1000
    assert diag.bound >= observed
