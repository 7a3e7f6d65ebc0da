"""Limit-state functions, call accounting and the benchmark problems.

All functions work in the standard-normal input space. Points are passed
either as a 1-D array of length ``d`` or as a ``(d, n)`` array whose columns
are points; values come back as a float or an ``(n,)`` array accordingly,
and gradients as ``(d,)`` or ``(d, n)``.
"""

from __future__ import annotations

import copy
import threading
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import norm

from .errors import CapabilityError, ConfigurationError, NumericalError

__all__ = [
    "CallLedger",
    "LsfEvaluation",
    "LimitStateFunction",
    "LinearLSF",
    "FourBranchesLSF",
    "DarcyConfig",
    "DarcyLSF",
    "TruncatedLSF",
    "kl_eigenpairs",
    "fd_gradient",
    "linear_lsf",
    "four_branches_lsf",
    "darcy_lsf",
    "truncate_lsf",
    "make_lsf",
    "BENCHMARKS",
    "REFERENCE_PROBABILITIES",
]

REFERENCE_PROBABILITIES = {
    "linear": 2.87e-7,
    "four-branches": 2.22e-3,
    "darcy": 7.78e-6,
}


class CallLedger:
    """Thread-safe counters for limit-state evaluations.

    ``lsf_calls`` counts values requested by the algorithm, ``gradient_calls``
    counts gradient evaluations (analytic or finite-difference), ``fd_calls``
    counts finite-difference gradients and ``fd_lsf_calls`` the extra LSF
    evaluations those finite differences performed internally.
    """

    _fields = ("lsf_calls", "gradient_calls", "fd_calls", "fd_lsf_calls")

    def __init__(self):
        self._lock = threading.Lock()
        self.lsf_calls = 0
        self.gradient_calls = 0
        self.fd_calls = 0
        self.fd_lsf_calls = 0

    def add(self, lsf_calls=0, gradient_calls=0, fd_calls=0, fd_lsf_calls=0):
        if min(lsf_calls, gradient_calls, fd_calls, fd_lsf_calls) < 0:
            raise ValueError("ledger counters are monotone")
        with self._lock:
            self.lsf_calls += int(lsf_calls)
            self.gradient_calls += int(gradient_calls)
            self.fd_calls += int(fd_calls)
            self.fd_lsf_calls += int(fd_lsf_calls)

    @property
    def paper_total(self):
        """Cost convention where one FD gradient is charged as two LSF calls."""
        return self.lsf_calls + 2 * self.fd_calls

    @property
    def total_evaluations(self):
        """Number of times the underlying model was actually evaluated."""
        return self.lsf_calls + self.fd_lsf_calls

    def snapshot(self):
        with self._lock:
            return {name: getattr(self, name) for name in self._fields}

    def __repr__(self):
        inner = ", ".join(f"{k}={v}" for k, v in self.snapshot().items())
        return f"CallLedger({inner})"


@dataclass(frozen=True)
class LsfEvaluation:
    value: float
    gradient: np.ndarray | None = None


def _as_points(x, dim):
    arr = np.asarray(x, dtype=float)
    single = arr.ndim == 1
    pts = arr[:, None] if single else arr
    if pts.ndim != 2 or pts.shape[0] != dim:
        raise ConfigurationError(f"expected points of dimension {dim}, got shape {arr.shape}")
    if not np.all(np.isfinite(pts)):
        raise ConfigurationError("non-finite coordinates passed to a limit-state function")
    return pts, single


class LimitStateFunction:
    """Base class; subclasses implement the vectorised ``_values`` hook.

    Subclasses with an analytic gradient set ``has_analytic_gradient`` and
    implement ``_values_and_gradients``. The rest fall back to central
    finite differences. Optional constants (``lipschitz``, ``smoothness``,
    ``hessian_min``) feed the theory diagnostics.
    """

    has_analytic_gradient = False
    has_hessian = False
    lipschitz = None
    smoothness = None
    hessian_min = None
    name = "lsf"

    def __init__(self, dim, ledger=None):
        if dim < 1:
            raise ConfigurationError("dimension must be >= 1")
        self.dim = int(dim)
        self.ledger = ledger if ledger is not None else CallLedger()
        self.fd_step = None

    def with_ledger(self, ledger=None):
        """Shallow copy sharing all fixed data but counting into ``ledger``."""
        clone = copy.copy(self)
        clone.ledger = ledger if ledger is not None else CallLedger()
        return clone

    # hooks -----------------------------------------------------------------
    def _values(self, pts):
        raise NotImplementedError

    def _values_and_gradients(self, pts):
        raise CapabilityError(f"{type(self).__name__} has no analytic gradient")

    def _hessian(self, x):
        raise CapabilityError(f"{type(self).__name__} has no analytic Hessian")

    # public API ------------------------------------------------------------
    def value(self, x):
        pts, single = _as_points(x, self.dim)
        vals = np.asarray(self._values(pts), dtype=float)
        self.ledger.add(lsf_calls=pts.shape[1])
        return float(vals[0]) if single else vals

    __call__ = value

    def value_and_gradient(self, x):
        """Values and gradients; one LSF call plus one gradient call per point."""
        pts, single = _as_points(x, self.dim)
        n = pts.shape[1]
        if self.has_analytic_gradient:
            vals, grads = self._values_and_gradients(pts)
            self.ledger.add(lsf_calls=n, gradient_calls=n)
        else:
            vals = np.asarray(self._values(pts), dtype=float)
            grads = np.empty_like(pts)
            for j in range(n):
                grads[:, j] = _central_difference(self._values, pts[:, j], self.fd_step)
            self.ledger.add(lsf_calls=n, gradient_calls=n, fd_calls=n,
                            fd_lsf_calls=2 * self.dim * n)
        if single:
            return float(vals[0]), grads[:, 0]
        return vals, grads

    def gradient(self, x):
        return self.value_and_gradient(x)[1]

    def evaluate(self, x, with_gradient=True):
        if with_gradient:
            value, grad = self.value_and_gradient(x)
            return LsfEvaluation(value, grad)
        return LsfEvaluation(self.value(x))

    def hessian(self, x):
        if not self.has_hessian:
            raise CapabilityError(f"{type(self).__name__} has no analytic Hessian")
        pts, _ = _as_points(x, self.dim)
        return self._hessian(pts[:, 0])


def _central_difference(values, x, h=None):
    d = x.size
    if h is None:
        h = 1e-6 * (1.0 + np.max(np.abs(x)))
    if h <= 0:
        raise ConfigurationError("finite-difference step must be positive")
    shifts = h * np.eye(d)
    pts = np.concatenate([x[:, None] + shifts, x[:, None] - shifts], axis=1)
    vals = np.asarray(values(pts), dtype=float)
    return (vals[:d] - vals[d:]) / (2.0 * h)


def fd_gradient(lsf, x, h=None):
    """Central finite-difference gradient of ``lsf`` at the point ``x``.

    Parameters
    ----------
    lsf : LimitStateFunction or callable
        Either a limit-state object (its ledger is charged one FD gradient
        and ``2 d`` internal evaluations) or a plain vectorised callable
        mapping ``(d, n)`` arrays to ``(n,)`` values.
    x : array_like, shape (d,)
    h : float, optional
        Step. Defaults to ``1e-6 * (1 + max|x_i|)``.
    """
    x = np.asarray(x, dtype=float)
    if isinstance(lsf, LimitStateFunction):
        pts, _ = _as_points(x, lsf.dim)
        grad = _central_difference(lsf._values, pts[:, 0], h)
        lsf.ledger.add(fd_calls=1, fd_lsf_calls=2 * lsf.dim)
        return grad
    return _central_difference(lsf, x, h)


# ---------------------------------------------------------------------------
# benchmark problems
# ---------------------------------------------------------------------------
class LinearLSF(LimitStateFunction):
    """Hyperplane ``beta - sum(x) / sqrt(d)``; failure probability Phi(-beta)."""

    has_analytic_gradient = True
    has_hessian = True
    lipschitz = 1.0
    smoothness = 0.0
    hessian_min = 0.0
    name = "linear"

    def __init__(self, dim=100, beta=5.0, ledger=None):
        super().__init__(dim, ledger)
        self.beta = float(beta)

    def _values(self, pts):
        return self.beta - pts.sum(axis=0) / np.sqrt(self.dim)

    def _values_and_gradients(self, pts):
        grads = np.full(pts.shape, -1.0 / np.sqrt(self.dim))
        return self._values(pts), grads

    def _hessian(self, x):
        return np.zeros((self.dim, self.dim))

    def exact_probability(self):
        return float(norm.cdf(-self.beta))


_SQ2 = np.sqrt(2.0)


def _four_branch_values(pts):
    x1, x2 = pts
    diff = x1 - x2
    quad = 0.1 * diff**2
    s = (x1 + x2) / _SQ2
    return np.stack([
        quad - s + 3.0,
        quad + s + 3.0,
        diff + 7.0 / _SQ2,
        -diff + 7.0 / _SQ2,
    ])


class FourBranchesLSF(LimitStateFunction):
    """Minimum of four branches in two dimensions, with the argmin subgradient.

    Ties between branches resolve to the smallest branch index.
    """

    has_analytic_gradient = True
    name = "four-branches"

    def __init__(self, dim=2, ledger=None):
        if dim != 2:
            raise ConfigurationError("the four-branches problem is two-dimensional")
        super().__init__(2, ledger)

    @staticmethod
    def branches(x):
        """All four branch values, shape ``(4,)`` or ``(4, n)``."""
        arr = np.asarray(x, dtype=float)
        out = _four_branch_values(arr if arr.ndim == 2 else arr[:, None])
        return out if arr.ndim == 2 else out[:, 0]

    def _values(self, pts):
        return _four_branch_values(pts).min(axis=0)

    def _values_and_gradients(self, pts):
        b = _four_branch_values(pts)
        k = np.argmin(b, axis=0)
        vals = b[k, np.arange(pts.shape[1])]
        diff = pts[0] - pts[1]
        c = 1.0 / _SQ2
        grads = np.empty_like(pts)
        grads[0] = np.select([k == 0, k == 1, k == 2], [0.2 * diff - c, 0.2 * diff + c, 1.0], -1.0)
        grads[1] = np.select([k == 0, k == 1, k == 2], [-0.2 * diff - c, -0.2 * diff + c, -1.0], 1.0)
        return vals, grads


# ---------------------------------------------------------------------------
# Karhunen-Loeve expansion of the exponential kernel on [0, 1]
# ---------------------------------------------------------------------------
def _kl_frequencies(corr_length, n_terms):
    """Frequencies and parities of the exponential-kernel eigenfunctions.

    On the centred interval [-1/2, 1/2] with c = 1/corr_length, even modes
    solve ``c cos(w/2) = w sin(w/2)`` and odd modes ``w cos(w/2) = -c sin(w/2)``.
    Roots alternate even/odd in increasing order, one per half-period bracket.
    """
    c = 1.0 / corr_length
    a = 0.5
    even = lambda w: c * np.cos(w * a) - w * np.sin(w * a)  # noqa: E731
    odd = lambda w: w * np.cos(w * a) + c * np.sin(w * a)  # noqa: E731
    omegas, parity = [], []
    for i in range(n_terms):
        k, is_odd = divmod(i, 2)
        if not is_odd:
            lo, hi, f = k * np.pi / a, (k * np.pi + np.pi / 2) / a, even
        else:
            lo, hi, f = (k * np.pi + np.pi / 2) / a, (k + 1) * np.pi / a, odd
        lo_eps = lo + 1e-14 * max(1.0, lo)
        hi_eps = hi - 1e-14 * max(1.0, hi)
        try:
            w = brentq(f, lo_eps, hi_eps, xtol=1e-12, rtol=4 * np.finfo(float).eps)
        except ValueError as exc:
            raise NumericalError(f"KL root bracketing failed for term {i}") from exc
        omegas.append(w)
        parity.append(bool(is_odd))
    omegas = np.array(omegas)
    lambdas = 2.0 * c / (omegas**2 + c**2)
    return omegas, np.array(parity), lambdas


def _kl_basis(omegas, parity, y):
    """Normalised eigenfunctions evaluated at ``y``, shape ``(len(y), n)``."""
    a = 0.5
    t = np.asarray(y, dtype=float)[:, None] - a
    s2 = np.sin(2 * omegas * a) / (2 * omegas)
    norm_even = np.sqrt(a + s2)
    norm_odd = np.sqrt(a - s2)
    return np.where(parity, np.sin(omegas * t) / norm_odd, np.cos(omegas * t) / norm_even)


def kl_eigenpairs(corr_length, n_terms):
    """Eigenpairs of ``exp(-|y - y'| / corr_length)`` on [0, 1].

    Returns a list of ``(lambda_i, phi_i)`` with eigenvalues in descending
    order and each ``phi_i`` an L2-normalised vectorised callable.
    """
    if corr_length <= 0:
        raise ConfigurationError("correlation length must be positive")
    if n_terms < 1:
        raise ConfigurationError("need at least one KL term")
    omegas, parity, lambdas = _kl_frequencies(corr_length, n_terms)
    pairs = []
    for w, odd, lam in zip(omegas, parity, lambdas):
        def phi(y, w=w, odd=odd):
            y = np.asarray(y, dtype=float)
            out = _kl_basis(np.array([w]), np.array([odd]), y.ravel())[:, 0]
            return out.reshape(y.shape) if y.ndim else float(out[0])
        pairs.append((float(lam), phi))
    return pairs


# ---------------------------------------------------------------------------
# 1D Darcy flow
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class DarcyConfig:
    d: int = 101
    n_segments: int = 500
    corr_length: float = 0.1
    threshold: float = 2.7
    field_variance: float = 0.3
    field_mean: float = 1.0

    def __post_init__(self):
        if self.d < 2:
            raise ConfigurationError("Darcy dimension must be >= 2")
        if self.n_segments < 2:
            raise ConfigurationError("Darcy mesh needs >= 2 segments")
        if self.corr_length <= 0:
            raise ConfigurationError("corr_length must be positive")

    def to_dict(self):
        return asdict(self)


def _source(y):
    centers = 0.2 * np.arange(1, 5)
    return 0.8 * norm.pdf(np.asarray(y)[..., None], loc=centers, scale=0.05).sum(axis=-1)


def _solve_tridiagonal(lower, diag, upper, rhs):
    """Thomas algorithm, vectorised over columns. ``diag``/``rhs`` are (n, m)."""
    n = diag.shape[0]
    cp = np.empty_like(diag)
    dp = np.empty_like(rhs)
    cp[0] = upper[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        denom = diag[i] - lower[i - 1] * cp[i - 1]
        if i < n - 1:
            cp[i] = upper[i] / denom
        dp[i] = (rhs[i] - lower[i - 1] * dp[i - 1]) / denom
    out = np.empty_like(rhs)
    out[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        out[i] = dp[i] - cp[i] * out[i + 1]
    return out


class DarcyLSF(LimitStateFunction):
    """``threshold - max_y u(y, x)`` for the 1D diffusion problem.

    ``u`` solves ``-(kappa u')' = J`` on (0, 1) with ``u'(0) = 2 - sqrt(0.5) x_1``
    and ``u(1) = dirichlet``. The log-conductivity is a KL-expanded Gaussian
    field driven by ``x_2 .. x_d``. Linear finite elements on a uniform mesh,
    element conductivity = harmonic mean of the nodal values, lumped load.
    """

    name = "darcy"

    def __init__(self, cfg=None, ledger=None, dirichlet=1.0):
        cfg = cfg or DarcyConfig()
        super().__init__(cfg.d, ledger)
        self.cfg = cfg
        self.dirichlet = float(dirichlet)
        n = cfg.n_segments
        self.h = 1.0 / n
        self.nodes = np.linspace(0.0, 1.0, n + 1)
        omegas, parity, lambdas = _kl_frequencies(cfg.corr_length, cfg.d - 1)
        self.kl_lambdas = lambdas
        self._field_basis = (np.sqrt(cfg.field_variance)
                             * _kl_basis(omegas, parity, self.nodes) * np.sqrt(lambdas))
        load = self.h * _source(self.nodes)
        load[0] *= 0.5
        self._load = load[:-1]

    def conductivity(self, x):
        """Nodal conductivity, shape ``(n+1,)`` or ``(n+1, m)``."""
        pts, single = _as_points(x, self.dim)
        kappa = np.exp(self.cfg.field_mean + self._field_basis @ pts[1:])
        return kappa[:, 0] if single else kappa

    def solve(self, x):
        """Nodal solution ``u`` including the Dirichlet node."""
        pts, single = _as_points(x, self.dim)
        u = self._solve(pts)
        return u[:, 0] if single else u

    def _solve(self, pts):
        m = pts.shape[1]
        kappa = np.exp(self.cfg.field_mean + self._field_basis @ pts[1:])
        k_el = 2.0 * kappa[:-1] * kappa[1:] / (kappa[:-1] + kappa[1:])
        k_el = k_el / self.h
        n = self.cfg.n_segments
        diag = np.empty((n, m))
        diag[0] = k_el[0]
        diag[1:] = k_el[:-1] + k_el[1:]
        off = -k_el[:-1]
        rhs = np.repeat(self._load[:, None], m, axis=1)
        slope0 = 2.0 - np.sqrt(0.5) * pts[0]
        rhs[0] -= kappa[0] * slope0
        rhs[-1] += k_el[n - 1] * self.dirichlet
        if not (np.all(np.isfinite(diag)) and np.all(diag > 0)):
            raise NumericalError("singular or non-finite Darcy stiffness matrix")
        u = _solve_tridiagonal(off, diag, off, rhs)
        if not np.all(np.isfinite(u)):
            raise NumericalError("Darcy solve produced non-finite values")
        return np.vstack([u, np.full((1, m), self.dirichlet)])

    def _values(self, pts):
        out = np.empty(pts.shape[1])
        # chunk to bound the (n_nodes, batch) work arrays
        for start in range(0, pts.shape[1], 512):
            sl = slice(start, start + 512)
            out[sl] = self.cfg.threshold - self._solve(pts[:, sl]).max(axis=0)
        return out


class TruncatedLSF(LimitStateFunction):
    """``sign(g) * min(|g|, r)``; keeps the failure set of the wrapped LSF."""

    def __init__(self, base, r):
        if r <= 0:
            raise ConfigurationError("truncation radius must be positive")
        super().__init__(base.dim, base.ledger)
        self.base = base
        self.r = float(r)
        self.has_analytic_gradient = base.has_analytic_gradient
        self.lipschitz = base.lipschitz
        self.fd_step = base.fd_step
        self.name = f"truncated-{base.name}"

    def with_ledger(self, ledger=None):
        base = self.base.with_ledger(ledger)
        return TruncatedLSF(base, self.r)

    def _clip(self, vals):
        return np.sign(vals) * np.minimum(np.abs(vals), self.r)

    def _values(self, pts):
        return self._clip(self.base._values(pts))

    def _values_and_gradients(self, pts):
        vals, grads = self.base._values_and_gradients(pts)
        grads = np.where(np.abs(vals) > self.r, 0.0, grads)
        return self._clip(vals), grads


# ---------------------------------------------------------------------------
# functional aliases and registry
# ---------------------------------------------------------------------------
def linear_lsf(x):
    x = np.asarray(x, dtype=float)
    return LinearLSF(dim=x.shape[0]).evaluate(x)


def four_branches_lsf(x):
    return FourBranchesLSF(dim=np.asarray(x).shape[0]).evaluate(x)


def darcy_lsf(x, cfg=None):
    cfg = cfg or DarcyConfig(d=np.asarray(x).shape[0])
    return DarcyLSF(cfg).evaluate(x, with_gradient=False)


def truncate_lsf(lsf, r):
    return TruncatedLSF(lsf, r)


def _make_darcy(dim=101, **kwargs):
    return DarcyLSF(DarcyConfig(d=dim, **kwargs))


BENCHMARKS = {
    "linear": lambda dim=100, **kw: LinearLSF(dim=dim, **kw),
    "four-branches": lambda dim=2, **kw: FourBranchesLSF(dim=dim, **kw),
    "darcy": _make_darcy,
}


def make_lsf(name, dim=None, **params):
    """Instantiate a benchmark by its registry id."""
    try:
        factory = BENCHMARKS[name]
    except KeyError:
        raise ConfigurationError(f"unknown benchmark {name!r}; known: {sorted(BENCHMARKS)}") from None
    return factory(**params) if dim is None else factory(dim=dim, **params)
