"""Langevin samplers for the smoothed optimal importance density.

Ensembles are stored as ``(d, M)`` arrays, one particle per column. The
regularised covariance square root is the ``(d, M + d)`` block
``[sqrt(1 - gamma) S | sqrt(gamma) I]`` with ``S`` the centred, ``1/sqrt(M)``
scaled particle matrix, so each particle is driven by an ``M + d`` vector of
standard normals and no matrix factorisation is ever needed.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .clustering import DbscanConfig, dbscan, shared_gradients
from .errors import ConfigurationError, DegenerateDrift, StepDiverged
from .smoothing import failure_complement, potential_and_gradient

logger = logging.getLogger(__name__)

__all__ = [
    "Ensemble",
    "AldiConfig",
    "LevelSchedule",
    "CumulativeState",
    "LevelDiagnostics",
    "RunDiagnostics",
    "ensemble_mean",
    "ensemble_cov_sqrt",
    "regularized_cov_sqrt",
    "preconditioned",
    "drift",
    "aldi_step",
    "ula_step",
    "adaptive_dt",
    "stopping_update",
    "run_level",
    "run_schedule",
    "run_ula",
    "initial_ensemble",
]


@dataclass
class Ensemble:
    particles: np.ndarray
    iteration: int = 0
    elapsed_time: float = 0.0

    def __post_init__(self):
        self.particles = np.asarray(self.particles, dtype=float)
        if self.particles.ndim != 2 or self.particles.shape[1] < 1:
            raise ConfigurationError("an ensemble is a (d, M) array with M >= 1")

    @property
    def d(self):
        return self.particles.shape[0]

    @property
    def M(self):
        return self.particles.shape[1]


def initial_ensemble(d, m, rng):
    """``M`` standard-normal particles."""
    return Ensemble(rng.standard_normal((d, m)))


@dataclass(frozen=True)
class AldiConfig:
    gamma: float = 1.0
    step_scale: float = 0.1
    eps_cumu: float = 0.1
    k_min: int = 10
    k_max: int = 2000
    dbscan: DbscanConfig | None = None
    # "potential": clusters share the full potential gradient of their mean;
    # "lsf": they share only the limit-state part and keep their own +x term
    share: str = "potential"
    # "global": the iteration counter and running average carry over from one
    # level to the next, so k_min is a minimum over the whole schedule;
    # "level": both restart at every level
    stopping_scope: str = "global"

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ConfigurationError(f"gamma must lie in (0, 1], got {self.gamma}")
        if not 0 < self.eps_cumu < 1:
            raise ConfigurationError(f"eps_cumu must lie in (0, 1), got {self.eps_cumu}")
        if self.k_min < 1 or self.k_max < 0:
            raise ConfigurationError("k_min must be >= 1 and k_max >= 0")
        if self.k_max and self.k_min >= self.k_max:
            raise ConfigurationError("k_min must be smaller than k_max")
        if self.step_scale <= 0:
            raise ConfigurationError("step_scale must be positive")
        if self.share not in ("potential", "lsf"):
            raise ConfigurationError("share must be 'potential' or 'lsf'")
        if self.stopping_scope not in ("global", "level"):
            raise ConfigurationError("stopping_scope must be 'global' or 'level'")


@dataclass(frozen=True)
class LevelSchedule:
    levels: tuple
    gammas: tuple
    eps_cumus: tuple

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        object.__setattr__(self, "gammas", tuple(float(v) for v in self.gammas))
        object.__setattr__(self, "eps_cumus", tuple(float(v) for v in self.eps_cumus))
        q = np.array(self.levels)
        if q.size == 0 or not (len(self.gammas) == len(self.eps_cumus) == q.size):
            raise ConfigurationError("levels, gammas and eps_cumus must have the same non-zero length")
        if np.any(np.diff(q) >= 0) or q[-1] != 0:
            raise ConfigurationError("levels must decrease strictly to 0")

    @classmethod
    def paper(cls, final_eps=0.01):
        return cls((1.0, 0.5, 0.05, 0.0), (1.0, 0.5, 0.01, 1e-3), (0.1, 0.1, 0.1, final_eps))

    @classmethod
    def single(cls, gamma=1.0, eps_cumu=0.01):
        return cls((0.0,), (gamma,), (eps_cumu,))

    def __len__(self):
        return len(self.levels)


# ---------------------------------------------------------------------------
# ensemble algebra
# ---------------------------------------------------------------------------
def _particles(e):
    return e.particles if isinstance(e, Ensemble) else np.asarray(e, dtype=float)


def ensemble_mean(e):
    return _particles(e).mean(axis=1)


def ensemble_cov_sqrt(e):
    """Centred particles scaled by ``1/sqrt(M)``; ``S S^T`` is the 1/M covariance."""
    x = _particles(e)
    return (x - x.mean(axis=1, keepdims=True)) / np.sqrt(x.shape[1])


def regularized_cov_sqrt(e, gamma):
    """``(d, M + d)`` factor whose outer product is ``(1-gamma) Sigma + gamma I``."""
    s = ensemble_cov_sqrt(e)
    return np.hstack([np.sqrt(1.0 - gamma) * s, np.sqrt(gamma) * np.eye(s.shape[0])])


def preconditioned(e, grads, gamma):
    """``Sigma_gamma @ grads`` using the low-rank structure of Sigma."""
    s = ensemble_cov_sqrt(e)
    return (1.0 - gamma) * (s @ (s.T @ grads)) + gamma * grads


def drift(e, grads, gamma):
    x = _particles(e)
    d, m = x.shape
    centred = x - x.mean(axis=1, keepdims=True)
    return -preconditioned(x, grads, gamma) + (1.0 - gamma) * ((d + 1) / m) * centred


def aldi_step(e, grads, gamma, dt, noise):
    """One Euler-Maruyama step of regularised ALDI.

    ``noise`` is an ``(M + d, M)`` standard-normal array: column ``i`` drives
    particle ``i`` through the regularised square root.
    """
    if not dt > 0:
        raise ConfigurationError("time step must be positive")
    x = _particles(e)
    d, m = x.shape
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (m + d, m):
        raise ConfigurationError(f"noise must have shape {(m + d, m)}, got {noise.shape}")
    s = ensemble_cov_sqrt(x)
    diffusion = np.sqrt(1.0 - gamma) * (s @ noise[:m]) + np.sqrt(gamma) * noise[m:]
    new = x + dt * drift(x, grads, gamma) + np.sqrt(2.0 * dt) * diffusion
    iteration = e.iteration if isinstance(e, Ensemble) else 0
    if not np.all(np.isfinite(new)):
        raise StepDiverged(iteration)
    elapsed = e.elapsed_time if isinstance(e, Ensemble) else 0.0
    return Ensemble(new, iteration + 1, elapsed + dt)


def ula_step(x, grads, dt, noise):
    """``x - dt * grad V(x) + sqrt(2 dt) * noise`` for every column."""
    x = _particles(x)
    return x + dt * (-grads) + np.sqrt(2.0 * dt) * noise


def adaptive_dt(e, grads, gamma, step_scale=0.1):
    """``step_scale`` divided by the largest particle drift norm.

    Raises StepDiverged when a drift is not finite and DegenerateDrift when
    all of them vanish.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        norms = np.linalg.norm(drift(e, grads, gamma), axis=0)
    top = norms.max()
    if not np.isfinite(top):
        raise StepDiverged(-1, "non-finite drift")
    if not top > 0:
        raise DegenerateDrift("all drift norms vanish")
    return step_scale / top


@dataclass(frozen=True)
class CumulativeState:
    """Running average of ``mean_i |grad V(x_i)|^2 + |x_i|^2`` over iterations."""

    k: int = 0
    value: float = 0.0


def stopping_update(state, e, grads, eps_cumu=0.1, k_min=10):
    """Advance the running average; returns ``(new_state, stop)``."""
    x = _particles(e)
    stat = float(np.mean(np.sum(grads**2, axis=0) + np.sum(x**2, axis=0)))
    k = state.k
    value = stat / (k + 1) + (k / (k + 1)) * state.value
    new = CumulativeState(k + 1, value)
    if value == 0:
        return new, True
    stop = k >= k_min and abs(value - state.value) / value <= eps_cumu
    return new, stop


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------
@dataclass
class LevelDiagnostics:
    q: float
    gamma: float
    eps_cumu: float
    iterations: int = 0
    stopping_time: float = 0.0
    gradient_evaluations: int = 0
    hit_k_max: bool = False
    degenerate: bool = False
    clusters: list = field(default_factory=list)
    stopping_state: CumulativeState = field(default_factory=CumulativeState)


@dataclass
class RunDiagnostics:
    levels: list = field(default_factory=list)
    diverged: bool = False
    diverged_iteration: int | None = None
    ledger: dict = field(default_factory=dict)
    global_iterations: int = 0

    @property
    def iterations(self):
        return sum(lv.iterations for lv in self.levels)

    @property
    def gradient_evaluations(self):
        return sum(lv.gradient_evaluations for lv in self.levels)

    @property
    def hit_k_max(self):
        return any(lv.hit_k_max for lv in self.levels)

    def to_dict(self):
        return asdict(self)


class _ClusterTracker:
    """Holds the current cluster assignment across levels (global iteration clock)."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.assignment = None
        self.iteration = 0

    def update(self, x):
        if self.cfg is not None and self.cfg.due(self.iteration):
            eps, mn = self.cfg.resolve(*x.shape)
            self.assignment = dbscan(x, eps, mn)
        self.iteration += 1
        return self.assignment if self.cfg is not None else None


def _gradients(x, lsf, smoothing, assignment, share):
    """Potential gradients, full or cluster-shared. Returns (grads, n_evaluated)."""
    if assignment is None:
        _, grads = potential_and_gradient(x, lsf, smoothing)
        return grads, x.shape[1]
    if share == "potential":
        def grad_fn(pts):
            return potential_and_gradient(pts, lsf, smoothing)[1]
        return shared_gradients(x, assignment, grad_fn)

    def lsf_part(pts):
        g, dg = lsf.value_and_gradient(pts)
        return dg * (failure_complement(g, smoothing) / smoothing.sigma)
    grads, n = shared_gradients(x, assignment, lsf_part)
    return grads + x, n


def run_level(e, lsf, cfg, aldi_cfg, rng, tracker=None, diagnostics=None, state=None):
    """Run discretised ALDI at one level until the stopping rule or ``k_max``.

    Returns the final ensemble and its :class:`LevelDiagnostics`. ``tracker``
    carries the DBSCAN state from previous levels and ``state`` the running
    average of the stopping rule (a fresh one when omitted). ``k_max``
    bounds the iterations of this level alone.
    """
    if tracker is None:
        tracker = _ClusterTracker(aldi_cfg.dbscan)
    level = LevelDiagnostics(cfg.q, aldi_cfg.gamma, aldi_cfg.eps_cumu)
    state = CumulativeState() if state is None else state
    current = Ensemble(e.particles.copy(), 0, 0.0) if isinstance(e, Ensemble) else Ensemble(e)
    d, m = current.particles.shape
    stopped = False
    for _ in range(aldi_cfg.k_max):
        x = current.particles
        assignment = tracker.update(x)
        if assignment is not None:
            level.clusters.append(assignment.n_clusters)
        grads, n_eval = _gradients(x, lsf, cfg, assignment, aldi_cfg.share)
        level.gradient_evaluations += n_eval
        level.iterations += 1
        try:
            dt = adaptive_dt(x, grads, aldi_cfg.gamma, aldi_cfg.step_scale)
        except StepDiverged:
            raise StepDiverged(tracker.iteration, "non-finite drift") from None
        except DegenerateDrift:
            level.degenerate = True
            stopped = True
            break
        noise = rng.standard_normal((m + d, m))
        current = aldi_step(current, grads, aldi_cfg.gamma, dt, noise)
        # the rule is fed the gradients of this iteration, so the stopping
        # check costs no extra evaluation
        state, stop = stopping_update(state, x, grads, aldi_cfg.eps_cumu, aldi_cfg.k_min)
        if stop:
            stopped = True
            break
    if not stopped and aldi_cfg.k_max > 0:
        level.hit_k_max = True
        logger.warning("level q=%g reached k_max=%d without meeting the stopping rule",
                       cfg.q, aldi_cfg.k_max)
    level.stopping_time = current.elapsed_time
    level.stopping_state = state
    if diagnostics is not None:
        diagnostics.levels.append(level)
        diagnostics.global_iterations = tracker.iteration
    return current, level


def run_schedule(e0, lsf, smoothing, schedule, aldi_cfg, rng):
    """Chain :func:`run_level` over a level schedule.

    A divergence ends the run: the diagnostics are flagged and the last
    finite ensemble is returned.
    """
    diagnostics = RunDiagnostics()
    tracker = _ClusterTracker(aldi_cfg.dbscan)
    current = e0 if isinstance(e0, Ensemble) else Ensemble(e0)
    state = CumulativeState()
    for q, gamma, eps in zip(schedule.levels, schedule.gammas, schedule.eps_cumus):
        level_cfg = replace(aldi_cfg, gamma=gamma, eps_cumu=eps)
        if aldi_cfg.stopping_scope == "level":
            state = CumulativeState()
        try:
            current, level = run_level(current, lsf, smoothing.at_level(q), level_cfg, rng,
                                       tracker=tracker, diagnostics=diagnostics, state=state)
            state = level.stopping_state
        except StepDiverged as exc:
            diagnostics.diverged = True
            diagnostics.diverged_iteration = exc.iteration
            warnings.warn(f"ALDI diverged at level q={q}: {exc}", RuntimeWarning, stacklevel=2)
            break
    diagnostics.ledger = lsf.ledger.snapshot()
    return current, diagnostics


def run_ula(e0, lsf, smoothing, step, n_steps, rng):
    """Fixed-step unadjusted Langevin algorithm on every particle independently."""
    x = _particles(e0).copy()
    diagnostics = RunDiagnostics()
    level = LevelDiagnostics(smoothing.q, 1.0, float("nan"))
    for k in range(n_steps):
        _, grads = potential_and_gradient(x, lsf, smoothing)
        new = ula_step(x, grads, step, rng.standard_normal(x.shape))
        level.iterations += 1
        level.gradient_evaluations += x.shape[1]
        if not np.all(np.isfinite(new)):
            diagnostics.diverged = True
            diagnostics.diverged_iteration = k
            break
        x = new
    level.stopping_time = step * level.iterations
    diagnostics.levels.append(level)
    diagnostics.ledger = lsf.ledger.snapshot()
    return Ensemble(x, level.iterations, level.stopping_time), diagnostics
