"""Logistic smoothing of the failure indicator and the rare-event potential.

Everything is evaluated through ``expit``/``logaddexp`` so that smoothing
widths down to 1e-12 neither overflow nor cancel.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .errors import CapabilityError, ConfigurationError

__all__ = [
    "SmoothingConfig",
    "smooth_indicator",
    "log_smooth_indicator",
    "failure_complement",
    "potential",
    "potential_gradient",
    "potential_and_gradient",
    "hessian_spectral_bounds",
    "SATURATION",
]

# |t| beyond which the logistic complement is below double-precision resolution
SATURATION = 30.0


@dataclass(frozen=True)
class SmoothingConfig:
    """Smoothing width ``sigma``, shift ``mu`` and the current level ``q``."""

    sigma: float
    mu: float
    q: float = 0.0
    sigma_r: float | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigurationError(f"sigma must be positive, got {self.sigma}")
        if not self.mu > 0:
            raise ConfigurationError(f"mu must be positive, got {self.mu}")
        if self.q < 0:
            raise ConfigurationError(f"level q must be non-negative, got {self.q}")

    @classmethod
    def from_reduced(cls, sigma_r, q=0.0):
        """``sigma = sqrt(3) s / pi`` and ``mu = log(9) sqrt(3 s / pi)``."""
        if not sigma_r > 0:
            raise ConfigurationError("reduced smoothing parameter must be positive")
        sigma = np.sqrt(3.0) * sigma_r / np.pi
        mu = np.log(9.0) * np.sqrt(3.0 * sigma_r / np.pi)
        return cls(float(sigma), float(mu), q, float(sigma_r))

    def at_level(self, q):
        return replace(self, q=float(q))

    def scaled_margin(self, g_val):
        """``t = (g - q - mu) / sigma``; F = expit(-t)."""
        return (np.asarray(g_val, dtype=float) - self.q - self.mu) / self.sigma


def _out(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def smooth_indicator(g_val, cfg):
    """Logistic approximation ``1 / (1 + exp((g - q - mu) / sigma))``."""
    return _out(expit(-cfg.scaled_margin(g_val)))


def failure_complement(g_val, cfg):
    """``1 - F`` without cancellation."""
    return _out(expit(cfg.scaled_margin(g_val)))


def log_smooth_indicator(g_val, cfg):
    return _out(-np.logaddexp(0.0, cfg.scaled_margin(g_val)))


def _sq_norm(x):
    x = np.asarray(x, dtype=float)
    return np.sum(x * x, axis=0)


def potential(x, lsf, cfg):
    """Rare-event potential ``-log F(x) + |x|^2 / 2`` (one LSF call per point)."""
    g = lsf.value(x)
    return _out(-log_smooth_indicator(g, cfg) + 0.5 * _sq_norm(x))


def potential_and_gradient(x, lsf, cfg):
    """Potential values and gradients, sharing a single LSF/gradient evaluation."""
    x = np.asarray(x, dtype=float)
    g, dg = lsf.value_and_gradient(x)
    t = cfg.scaled_margin(g)
    values = np.logaddexp(0.0, t) + 0.5 * _sq_norm(x)
    grads = dg * (expit(t) / cfg.sigma) + x
    return _out(values), grads


def potential_gradient(x, lsf, cfg):
    """``grad g / sigma * (1 - F) + x``."""
    return potential_and_gradient(x, lsf, cfg)[1]


def hessian_spectral_bounds(x, lsf, cfg):
    """Smallest and largest eigenvalue of the potential's Hessian at ``x``.

    Uses the rank-one structure when the LSF Hessian vanishes identically,
    a dense symmetric eigensolve otherwise.
    """
    if not lsf.has_hessian:
        raise CapabilityError(f"{type(lsf).__name__} does not expose a Hessian")
    x = np.asarray(x, dtype=float)
    g, dg = lsf.value_and_gradient(x)
    hg = lsf.hessian(x)
    t = cfg.scaled_margin(g)
    comp = expit(t)
    curv = comp * expit(-t) / cfg.sigma**2
    if not np.any(hg):
        top = 1.0 + curv * float(dg @ dg)
        return (1.0, top) if x.size > 1 else (top, top)
    hess = curv * np.outer(dg, dg) + (comp / cfg.sigma) * hg + np.eye(x.size)
    eig = np.linalg.eigvalsh(hess)
    return float(eig[0]), float(eig[-1])
