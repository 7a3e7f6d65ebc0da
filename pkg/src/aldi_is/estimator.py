"""Importance-sampling and crude Monte Carlo estimators, error statistics and
the empirically accessible terms of the smoothing error bounds."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CapabilityError, ConfigurationError
from .smoothing import SmoothingConfig, log_smooth_indicator

__all__ = [
    "EstimateReport",
    "ExperimentSummary",
    "TheoryDiagnostics",
    "log_standard_normal",
    "is_estimate",
    "crude_mc",
    "nrmse",
    "summarize",
    "alpha_sigma",
    "l_sigma",
    "theory_diagnostics",
    "ula_constants",
    "MAX_EXCLUDED_FRACTION",
    "MAX_FAILED_REPS",
]

# share of non-finite IS weights above which an estimate is not trusted
MAX_EXCLUDED_FRACTION = 1e-3
# share of diverged repetitions above which an experiment is invalid
MAX_FAILED_REPS = 0.02

_CHUNK = 100_000


@dataclass
class EstimateReport:
    p_hat: float
    n_samples: int
    weight_max: float
    weight_mean: float
    ess: float
    n_failures: int = 0
    n_excluded: int = 0
    valid: bool = True
    ledger: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


@dataclass
class ExperimentSummary:
    reps: int
    p_ref: float
    nrmse: float
    mean_estimate: float
    call_means: dict
    failure_count: int
    valid: bool = True
    call_totals: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def log_standard_normal(x):
    """Log-density of N(0, I) for the columns of ``x``."""
    x = np.asarray(x, dtype=float)
    pts = x[:, None] if x.ndim == 1 else x
    d = pts.shape[0]
    out = -0.5 * np.sum(pts * pts, axis=0) - 0.5 * d * np.log(2.0 * np.pi)
    return float(out[0]) if x.ndim == 1 else out


def _weight_stats(weights):
    total = float(weights.sum())
    sq = float(np.sum(weights * weights))
    ess = total * total / sq if sq > 0 else 0.0
    wmax = float(weights.max()) if weights.size else 0.0
    return wmax, ess


def is_estimate(samples, log_aux_pdf, lsf):
    """Importance-sampling estimate of ``P(g(X) <= 0)`` for ``X ~ N(0, I)``.

    Parameters
    ----------
    samples : ndarray, shape (d, N)
        Draws from the auxiliary density.
    log_aux_pdf : callable or ndarray
        Log-density of the auxiliary law, either as a function of a ``(d, n)``
        array or as the ``(N,)`` values at ``samples``.
    lsf : LimitStateFunction or callable
        Vectorised limit-state function.

    Notes
    -----
    Weights are formed as ``exp(log phi - log q)`` on failure samples only.
    Failure samples with a non-finite weight are dropped and counted; more
    than ``MAX_EXCLUDED_FRACTION`` of them marks the report invalid.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ConfigurationError("samples must be a non-empty (d, N) array")
    n = x.shape[1]
    g = np.asarray(lsf(x), dtype=float)
    fail = g <= 0
    log_q = log_aux_pdf(x) if callable(log_aux_pdf) else np.asarray(log_aux_pdf, dtype=float)
    if np.shape(log_q) != (n,):
        raise ConfigurationError("auxiliary log-density must give one value per sample")
    weights = np.zeros(n)
    with np.errstate(over="ignore", invalid="ignore"):
        log_w = log_standard_normal(x[:, fail]) - log_q[fail]
        weights[fail] = np.exp(log_w)
    bad = fail & ~np.isfinite(weights)
    n_bad = int(bad.sum())
    if n_bad:
        warnings.warn(f"{n_bad} importance weights were not finite and were excluded",
                      RuntimeWarning, stacklevel=2)
        weights[bad] = 0.0
    kept = n - n_bad
    p_hat = float(weights.sum() / kept) if kept else float("nan")
    wmax, ess = _weight_stats(weights[fail & ~bad])
    ledger = lsf.ledger.snapshot() if hasattr(lsf, "ledger") else {}
    return EstimateReport(p_hat=p_hat, n_samples=n, weight_max=wmax, weight_mean=p_hat,
                          ess=ess, n_failures=int(fail.sum()), n_excluded=n_bad,
                          valid=n_bad <= MAX_EXCLUDED_FRACTION * n, ledger=ledger)


def crude_mc(lsf, n, rng, dim=None):
    """Fraction of ``n`` standard-normal draws with ``g <= 0``.

    The draws are generated in chunks so large ``n`` need not fit in memory.
    """
    if n < 1:
        raise ConfigurationError("crude Monte Carlo needs n >= 1")
    d = dim if dim is not None else lsf.dim
    hits = 0
    left = n
    while left:
        m = min(left, _CHUNK)
        hits += int(np.sum(np.asarray(lsf(rng.standard_normal((d, m)))) <= 0))
        left -= m
    p_hat = hits / n
    ledger = lsf.ledger.snapshot() if hasattr(lsf, "ledger") else {}
    return EstimateReport(p_hat=p_hat, n_samples=n, weight_max=1.0 if hits else 0.0,
                          weight_mean=p_hat, ess=float(hits), n_failures=hits, ledger=ledger)


def nrmse(estimates, p_ref):
    """``sqrt(mean((p_hat - p_ref)^2)) / p_ref``."""
    est = np.asarray(estimates, dtype=float)
    if est.size == 0:
        raise ConfigurationError("nrmse needs at least one estimate")
    if not p_ref > 0:
        raise ConfigurationError("reference probability must be positive")
    return float(np.sqrt(np.mean((est - p_ref) ** 2)) / p_ref)


def summarize(estimates, p_ref, ledgers, failed):
    """Aggregate repetitions in their given order.

    Parameters
    ----------
    estimates : sequence of float
        ``p_hat`` of every repetition; entries of failed ones are ignored.
    ledgers : sequence of dict
        Call counters per repetition (all repetitions, failed included).
    failed : sequence of bool
    """
    est = np.asarray(estimates, dtype=float)
    failed = np.asarray(failed, dtype=bool)
    reps = est.size
    ok = est[~failed]
    n_failed = int(failed.sum())
    keys = sorted({k for led in ledgers for k in led})
    totals = {k: int(sum(led.get(k, 0) for led in ledgers)) for k in keys}
    means = {k: (totals[k] / reps if reps else 0.0) for k in keys}
    valid = reps > 0 and n_failed <= MAX_FAILED_REPS * reps and ok.size > 0
    return ExperimentSummary(
        reps=reps,
        p_ref=float(p_ref),
        nrmse=nrmse(ok, p_ref) if ok.size else float("nan"),
        mean_estimate=float(ok.mean()) if ok.size else float("nan"),
        call_means=means,
        failure_count=n_failed,
        valid=bool(valid),
        call_totals=totals,
    )


# ---------------------------------------------------------------------------
# smoothing error diagnostics
# ---------------------------------------------------------------------------
def alpha_sigma(hessian_min, sigma):
    """Convexity constant ``H / sigma + 1`` of the rare-event potential.

    ``H = inf (1 - F) lambda_min(Hess g)`` is bounded below by
    ``min(lambda_min, 0)``, which is what is used here.
    """
    return min(float(hessian_min), 0.0) / sigma + 1.0


def l_sigma(lipschitz, smoothness, sigma, mu, r):
    """Smoothness constant of the potential for a ``K``-Lipschitz,
    ``G``-smooth LSF bounded by ``r``."""
    with np.errstate(over="ignore"):
        growth = np.exp((r - mu) / sigma - 2.0 * np.log(sigma))
    return float(growth * lipschitz**2 + 2.0 * smoothness / sigma + 1.0)


@dataclass
class TheoryDiagnostics:
    exp_neg_mu_over_sigma: float
    band_probability: float
    coupling_term: float
    coupling_pairs: int
    bound: float | None = None
    alpha_sigma: float | None = None
    l_sigma: float | None = None
    max_ula_step: float | None = None

    def to_dict(self):
        return asdict(self)


def theory_diagnostics(lsf, smoothing, samples, rng, n_is=None, p_ref=None,
                       truncation=None, n_mc=200_000):
    """Evaluate the terms of the IS error bound and the ULA constants.

    Parameters
    ----------
    lsf : LimitStateFunction
    smoothing : SmoothingConfig
        Its level ``q`` must be 0.
    samples : ndarray, shape (d, n)
        Approximately distributed as the smoothed optimal density.
    rng : numpy.random.Generator
        Used for the band probability and for thinning samples to the
        zero-variance density.
    n_is, p_ref : optional
        When both are given, the full bound on the nRMSE of an ``n_is``-sample
        estimator is returned as ``bound``.
    truncation : float, optional
        Bound ``r`` on ``|g|``; enables ``l_sigma`` when the LSF declares its
        Lipschitz and smoothness constants.

    Notes
    -----
    The coupling term uses independent pairs. The first half of ``samples``
    provides ``X``; the second half is thinned to the zero-variance density
    by accepting ``x`` in the failure set with probability
    ``F(0) / F(x) <= 1``, which gives ``Y``. Independent pairs are a valid
    coupling but not the one that minimises the bound.
    """
    if not isinstance(smoothing, SmoothingConfig) or smoothing.q != 0:
        raise ConfigurationError("theory diagnostics need a SmoothingConfig at level q = 0")
    sigma, mu = smoothing.sigma, smoothing.mu
    x = np.asarray(samples, dtype=float)
    half = x.shape[1] // 2
    if half < 1:
        raise ConfigurationError("need at least two samples")
    gx = np.asarray(lsf.value(x[:, :half]))
    gy_all = np.asarray(lsf.value(x[:, half:2 * half]))
    # thinning: acceptance F(g=0)/F(g) on {g <= 0}
    log_acc = log_smooth_indicator(0.0, smoothing) - log_smooth_indicator(gy_all, smoothing)
    accept = (gy_all <= 0) & (np.log(rng.uniform(size=gy_all.size)) < log_acc)
    gy = gy_all[accept]
    m = min(gx.size, gy.size)
    if m:
        diff2 = (gx[:m] - gy[:m]) ** 2 * (gx[:m] <= 0)
        coupling = float(diff2.mean())
    else:
        coupling = float("nan")

    hits = 0
    left = n_mc
    while left:
        k = min(left, _CHUNK)
        gz = np.asarray(lsf.value(rng.standard_normal((lsf.dim, k))))
        hits += int(np.sum((gz > 0) & (gz < 2.0 * mu)))
        left -= k
    band = hits / n_mc

    e_mu = float(np.exp(-mu / sigma))
    out = TheoryDiagnostics(e_mu, band, coupling, m)
    if n_is is not None and p_ref is not None:
        inner = e_mu + band + np.exp(-2.0 * mu / sigma) / sigma**2 * coupling
        out.bound = float(6.0 / (np.sqrt(n_is) * p_ref) * np.sqrt(inner))
    if lsf.hessian_min is not None:
        out.alpha_sigma = alpha_sigma(lsf.hessian_min, sigma)
    if truncation is not None and lsf.lipschitz is not None and lsf.smoothness is not None:
        out.l_sigma = l_sigma(lsf.lipschitz, lsf.smoothness, sigma, mu, truncation)
        if out.alpha_sigma is not None:
            out.max_ula_step = 2.0 / (out.alpha_sigma + out.l_sigma)
    return out


def ula_constants(lsf, smoothing, truncation):
    """``(alpha_sigma, L_sigma)``; raises CapabilityError when the LSF does
    not declare the constants they need."""
    missing = [n for n in ("hessian_min", "lipschitz", "smoothness") if getattr(lsf, n) is None]
    if missing:
        raise CapabilityError(f"{type(lsf).__name__} does not declare {', '.join(missing)}")
    return (alpha_sigma(lsf.hessian_min, smoothing.sigma),
            l_sigma(lsf.lipschitz, lsf.smoothness, smoothing.sigma, smoothing.mu, truncation))

