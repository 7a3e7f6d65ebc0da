"""Von Mises-Fisher-Nakagami mixtures: densities, sampling and EM fitting.

A component factors into a Nakagami law on the radius ``r = |x|`` and a
von Mises-Fisher law on the direction ``x / r``. :func:`log_pdf` returns the
density with respect to Lebesgue measure on R^d, i.e. it includes the
``-(d-1) log r`` Jacobian of polar coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import digamma, gammaln, ive, logsumexp

from .errors import ConfigurationError

__all__ = [
    "VmfnParams",
    "VmfnmModel",
    "log_bessel_iv",
    "log_nakagami_pdf",
    "log_vmf_pdf",
    "component_log_pdfs",
    "log_pdf",
    "responsibilities",
    "sample",
    "sample_vmf",
    "fit_em",
    "select_k",
    "n_parameters",
    "KAPPA_MAX",
]

KAPPA_MAX = 1e6
M_BOUNDS = (0.5, 1e3)
_TINY_RESP = 1e-30


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------
def _debye_log_iv(nu, x):
    """Uniform asymptotic expansion of log I_nu(x) for large order."""
    z = x / nu
    root = np.sqrt(1.0 + z * z)
    t = 1.0 / root
    eta = root + np.log(z / (1.0 + root))
    t2 = t * t
    u1 = t * (3.0 - 5.0 * t2) / 24.0
    u2 = t2 * (81.0 - 462.0 * t2 + 385.0 * t2**2) / 1152.0
    u3 = t * t2 * (30375.0 - 369603.0 * t2 + 765765.0 * t2**2 - 425425.0 * t2**3) / 414720.0
    u4 = t2**2 * (4465125.0 - 94121676.0 * t2 + 349922430.0 * t2**2
                  - 446185740.0 * t2**3 + 185910725.0 * t2**4) / 39813120.0
    series = 1.0 + u1 / nu + u2 / nu**2 + u3 / nu**3 + u4 / nu**4
    return nu * eta - 0.5 * np.log(2.0 * np.pi * nu) - 0.5 * np.log(root) + np.log(series)


def _series_log_iv(nu, x):
    """Power series, summed in log space; used when x is small against nu."""
    q = 0.25 * x * x
    k = np.arange(200)
    log_terms = k * np.log(q) - gammaln(k + 1) - gammaln(nu + k + 1)
    return nu * np.log(0.5 * x) + logsumexp(log_terms)


def log_bessel_iv(nu, x):
    """``log I_nu(x)`` for ``x >= 0`` without overflow or underflow.

    Exponentially scaled Bessel values are used where they are
    representable, the uniform (Debye) expansion for large orders and the
    power series otherwise.
    """
    x = float(x)
    nu = float(nu)
    if x < 0:
        raise ConfigurationError("Bessel argument must be non-negative")
    if x == 0.0:
        return 0.0 if nu == 0 else -np.inf
    scaled = ive(nu, x)
    if np.isfinite(scaled) and scaled > 1e-280:
        return float(np.log(scaled) + x)
    if nu >= 8.0:
        return float(_debye_log_iv(nu, x))
    return float(_series_log_iv(nu, x))


def _log_sphere_area(d):
    return np.log(2.0) + 0.5 * d * np.log(np.pi) - gammaln(0.5 * d)


def _log_vmf_normaliser(d, kappa):
    if kappa == 0:
        return -_log_sphere_area(d)
    nu = 0.5 * d - 1.0
    return nu * np.log(kappa) - 0.5 * d * np.log(2.0 * np.pi) - log_bessel_iv(nu, kappa)


def _mean_resultant(d, kappa):
    """``A_d(kappa) = I_{d/2}(kappa) / I_{d/2-1}(kappa)``."""
    nu = 0.5 * d - 1.0
    return np.exp(log_bessel_iv(nu + 1.0, kappa) - log_bessel_iv(nu, kappa))


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class VmfnParams:
    mean_dir: np.ndarray
    kappa: float
    m: float
    S: float

    def __post_init__(self):
        mu = np.asarray(self.mean_dir, dtype=float)
        object.__setattr__(self, "mean_dir", mu)
        if abs(np.linalg.norm(mu) - 1.0) > 1e-10:
            raise ConfigurationError("mean direction must have unit norm")
        if self.kappa < 0 or self.m < 0.5 or not self.S > 0:
            raise ConfigurationError(
                f"invalid vMFN parameters kappa={self.kappa}, m={self.m}, S={self.S}")

    def to_dict(self):
        return {"mean_dir": self.mean_dir.tolist(), "kappa": float(self.kappa),
                "m": float(self.m), "S": float(self.S)}

    @classmethod
    def from_dict(cls, data):
        return cls(np.array(data["mean_dir"], dtype=float), data["kappa"], data["m"], data["S"])


@dataclass(frozen=True)
class VmfnmModel:
    components: tuple
    weights: np.ndarray
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if w.shape != (len(self.components),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ConfigurationError("mixture weights must be non-negative and sum to 1")
        dims = {c.mean_dir.size for c in self.components}
        if len(dims) != 1:
            raise ConfigurationError("components disagree on the dimension")

    @property
    def K(self):
        return len(self.components)

    @property
    def d(self):
        return self.components[0].mean_dir.size

    def to_dict(self):
        return {"weights": self.weights.tolist(),
                "components": [c.to_dict() for c in self.components]}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(VmfnParams.from_dict(c) for c in data["components"]),
                   np.array(data["weights"], dtype=float))


def n_parameters(K, d):
    """Free-parameter count used in the BIC."""
    return K * (d + 3) + (K - 1)


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------
def log_nakagami_pdf(r, m, S):
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ConfigurationError("Nakagami density needs r > 0")
    out = (np.log(2.0) + m * np.log(m) - gammaln(m) - m * np.log(S)
           + (2.0 * m - 1.0) * np.log(r) - (m / S) * r * r)
    return float(out) if out.ndim == 0 else out


def log_vmf_pdf(omega, mu, kappa):
    """Log-density on the unit sphere; ``omega`` is ``(d,)`` or ``(d, n)``."""
    if kappa < 0:
        raise ConfigurationError("vMF concentration must be non-negative")
    omega = np.asarray(omega, dtype=float)
    mu = np.asarray(mu, dtype=float)
    out = _log_vmf_normaliser(mu.size, kappa) + kappa * (mu @ omega)
    return float(out) if np.ndim(out) == 0 else out


def _polar(x):
    x = np.asarray(x, dtype=float)
    pts = x[:, None] if x.ndim == 1 else x
    r = np.linalg.norm(pts, axis=0)
    if np.any(r == 0):
        raise ConfigurationError("the origin has no polar representation")
    return pts, r, pts / r


def _component_polar_log_pdfs(r, omega, model):
    out = np.empty((model.K, r.size))
    for k, c in enumerate(model.components):
        out[k] = log_nakagami_pdf(r, c.m, c.S) + log_vmf_pdf(omega, c.mean_dir, c.kappa)
    return out


def component_log_pdfs(x, model):
    """``(K, n)`` Cartesian log-densities of each component (weights excluded)."""
    _, r, omega = _polar(x)
    return _component_polar_log_pdfs(r, omega, model) - (model.d - 1) * np.log(r)


def log_pdf(x, model):
    """Mixture log-density with respect to Lebesgue measure on R^d."""
    x = np.asarray(x, dtype=float)
    _, r, omega = _polar(x)
    with np.errstate(divide="ignore"):
        log_w = np.log(model.weights)[:, None]
    comp = _component_polar_log_pdfs(r, omega, model)
    out = logsumexp(log_w + comp, axis=0) - (model.d - 1) * np.log(r)
    return float(out[0]) if x.ndim == 1 else out


def responsibilities(x, model):
    """Posterior component probabilities, shape ``(K, n)``."""
    _, r, omega = _polar(x)
    with np.errstate(divide="ignore"):
        joint = np.log(model.weights)[:, None] + _component_polar_log_pdfs(r, omega, model)
    return np.exp(joint - logsumexp(joint, axis=0))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------
def _sample_vmf_cosines(kappa, d, n, rng):
    """Wood's rejection sampler for ``w = mu . omega``."""
    dm1 = d - 1.0
    b = dm1 / (2.0 * kappa + np.sqrt(4.0 * kappa**2 + dm1**2))
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + dm1 * np.log1p(-x0 * x0)
    out = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        z = rng.beta(0.5 * dm1, 0.5 * dm1, size=todo.size)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(size=todo.size)
        ok = kappa * w + dm1 * np.log1p(-x0 * w) - c >= np.log(u)
        out[todo[ok]] = w[ok]
        todo = todo[~ok]
    return out


def sample_vmf(mu, kappa, n, rng):
    """``n`` draws on the sphere, returned as a ``(d, n)`` array."""
    mu = np.asarray(mu, dtype=float)
    d = mu.size
    if d == 1:
        p = 1.0 / (1.0 + np.exp(-2.0 * kappa))
        return np.where(rng.uniform(size=n) < p, mu[0], -mu[0])[None, :]
    w = _sample_vmf_cosines(kappa, d, n, rng)
    v = rng.standard_normal((d, n))
    v -= np.outer(mu, mu @ v)
    v /= np.linalg.norm(v, axis=0)
    return w * mu[:, None] + np.sqrt(np.clip(1.0 - w * w, 0.0, None)) * v


def sample(model, n, rng):
    """Draw ``n`` points in R^d from the mixture, shape ``(d, n)``."""
    if n < 1:
        raise ConfigurationError("need at least one sample")
    labels = rng.choice(model.K, size=n, p=model.weights)
    out = np.empty((model.d, n))
    for k, c in enumerate(model.components):
        idx = np.flatnonzero(labels == k)
        if idx.size == 0:
            continue
        r = np.sqrt(rng.gamma(c.m, c.S / c.m, size=idx.size))
        out[:, idx] = r * sample_vmf(c.mean_dir, c.kappa, idx.size, rng)
    return out


# ---------------------------------------------------------------------------
# EM
# ---------------------------------------------------------------------------
def _solve_kappa(rbar, d):
    """Concentration with ``A_d(kappa) = rbar``: ratio approximation + Newton."""
    if rbar <= 0:
        return 0.0
    if rbar >= 1.0 - 1e-15:
        return KAPPA_MAX
    kappa = (rbar * d - rbar**3) / (1.0 - rbar * rbar)
    if kappa >= KAPPA_MAX:
        return KAPPA_MAX
    for _ in range(3):
        a = _mean_resultant(d, kappa)
        slope = 1.0 - a * a - (d - 1.0) / kappa * a
        if not slope > 0:
            break
        step = (a - rbar) / slope
        new = kappa - step
        if not np.isfinite(new) or new <= 0:
            break
        kappa = new
        if abs(step) <= 1e-12 * kappa:
            break
    return float(min(kappa, KAPPA_MAX))


def _solve_shape(delta):
    """Gamma-shape MLE: ``log m - digamma(m) = delta``, clamped to M_BOUNDS."""
    lo, hi = M_BOUNDS
    f = lambda m: np.log(m) - digamma(m) - delta  # noqa: E731
    if f(lo) <= 0:
        return lo
    if f(hi) >= 0:
        return hi
    return float(brentq(f, lo, hi, xtol=1e-12, rtol=1e-12))


def _m_step(r, omega, resp, d):
    comps, weights, keep = [], [], []
    total = resp.sum()
    log_r2 = np.log(r * r)
    for k in range(resp.shape[0]):
        w = resp[k]
        wsum = w.sum()
        if wsum <= _TINY_RESP:
            continue
        resultant = omega @ w
        norm = np.linalg.norm(resultant)
        if norm > 0:
            mu = resultant / norm
        else:
            mu = np.zeros(d)
            mu[0] = 1.0
        rbar = min(norm / wsum, 1.0)
        kappa = _solve_kappa(rbar, d)
        S = float(w @ (r * r) / wsum)
        delta = max(np.log(S) - float(w @ log_r2) / wsum, 0.0)
        m = _solve_shape(delta)
        comps.append(VmfnParams(mu, kappa, m, S))
        weights.append(wsum / total)
        keep.append(k)
    weights = np.array(weights)
    return VmfnmModel(tuple(comps), weights / weights.sum()), keep


def _spherical_kmeans(omega, K, rng, n_iter=50):
    """Hard partition of unit vectors by cosine similarity (k-means++ seeding)."""
    n = omega.shape[1]
    centers = [omega[:, rng.integers(n)]]
    for _ in range(1, K):
        sim = np.max(np.array(centers) @ omega, axis=0)
        dist = np.clip(1.0 - sim, 0.0, None)
        total = dist.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=dist / total)
        centers.append(omega[:, idx])
    centers = np.array(centers).T
    labels = np.full(n, -1)
    for _ in range(n_iter):
        new = np.argmax(centers.T @ omega, axis=0)
        if np.array_equal(new, labels):
            break
        labels = new
        for k in range(K):
            members = labels == k
            if not members.any():
                worst = np.argmin(np.max(centers.T @ omega, axis=0))
                centers[:, k] = omega[:, worst]
                continue
            s = omega[:, members].sum(axis=1)
            nrm = np.linalg.norm(s)
            centers[:, k] = s / nrm if nrm > 0 else omega[:, members][:, 0]
    return labels


def _log_likelihood(r, omega, model):
    with np.errstate(divide="ignore"):
        joint = np.log(model.weights)[:, None] + _component_polar_log_pdfs(r, omega, model)
    return float(np.sum(logsumexp(joint, axis=0) - (model.d - 1) * np.log(r)))


def fit_em(points, K=1, max_iter=200, tol=1e-8, rng=None, init_model=None, history=None):
    """Maximum-likelihood vMFN mixture for the columns of ``points``.

    Parameters
    ----------
    points : ndarray, shape (d, M)
    K : int
        Number of components (ignored when ``init_model`` is given).
    max_iter, tol : stopping rule on the relative log-likelihood change.
    rng : numpy.random.Generator, optional
        Seeds the spherical k-means initialisation for ``K > 1``.
    init_model : VmfnmModel, optional
        Start from these parameters instead of a k-means partition.
    history : list, optional
        Receives the log-likelihood after every M-step.

    Returns
    -------
    VmfnmModel
        ``model.info`` records iterations, final log-likelihood and the
        number of dropped components.
    """
    pts, r, omega = _polar(points)
    d, n = pts.shape
    if init_model is not None:
        resp = responsibilities(pts, init_model)
        K = init_model.K
    else:
        if not 1 <= K <= n:
            raise ConfigurationError(f"need 1 <= K <= M, got K={K}, M={n}")
        if K == 1:
            resp = np.ones((1, n))
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            labels = _spherical_kmeans(omega, K, rng)
            resp = np.zeros((K, n))
            resp[labels, np.arange(n)] = 1.0
    dropped = 0
    prev = -np.inf
    it = 0
    for it in range(1, max_iter + 1):
        model, keep = _m_step(r, omega, resp, d)
        dropped += resp.shape[0] - len(keep)
        ll = _log_likelihood(r, omega, model)
        if history is not None:
            history.append(ll)
        converged = np.isfinite(prev) and abs(ll - prev) <= tol * abs(ll)
        prev = ll
        if converged:
            break
        with np.errstate(divide="ignore"):
            joint = np.log(model.weights)[:, None] + _component_polar_log_pdfs(r, omega, model)
        resp = np.exp(joint - logsumexp(joint, axis=0))
    info = {"iterations": it, "log_likelihood": prev, "dropped": dropped}
    return VmfnmModel(model.components, model.weights, info)


def select_k(points, k_candidates, criterion="bic", rng=None, **fit_kwargs):
    """Pick the number of components by BIC; ties go to the smaller K.

    Returns ``(K, model)``.
    """
    cands = sorted(set(int(k) for k in k_candidates))
    if not cands:
        raise ConfigurationError("no candidate K given")
    if criterion != "bic":
        raise ConfigurationError(f"unknown criterion {criterion!r}")
    pts = np.asarray(points, dtype=float)
    d, n = pts.shape
    cands = [k for k in cands if k <= n] or [1]
    if len(cands) == 1:
        k = cands[0]
        return k, fit_em(pts, k, rng=rng, **fit_kwargs)
    best = None
    for k in cands:
        model = fit_em(pts, k, rng=rng, **fit_kwargs)
        k_eff = model.K
        score = -2.0 * model.info["log_likelihood"] + n_parameters(k_eff, d) * np.log(n)
        if best is None or score < best[0]:
            best = (score, k, model)
    return best[1], best[2]
