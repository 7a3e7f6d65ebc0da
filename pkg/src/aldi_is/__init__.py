"""Rare-event estimation with affine invariant Langevin dynamics and
von Mises-Fisher-Nakagami importance sampling."""

__version__ = "0.1.0"

from .errors import CapabilityError, ConfigurationError, DegenerateDrift, NumericalError, StepDiverged
from .lsf import (
    BENCHMARKS,
    REFERENCE_PROBABILITIES,
    CallLedger,
    DarcyConfig,
    DarcyLSF,
    FourBranchesLSF,
    LimitStateFunction,
    LinearLSF,
    TruncatedLSF,
    make_lsf,
)
from .smoothing import SmoothingConfig, potential, potential_and_gradient, smooth_indicator
from .sampler import AldiConfig, Ensemble, LevelSchedule, aldi_step, initial_ensemble, run_level, run_schedule, run_ula
from .clustering import DbscanConfig, dbscan
from .vmfnm import VmfnmModel, VmfnParams, fit_em, log_pdf, sample, select_k
from .estimator import crude_mc, is_estimate, nrmse, summarize, theory_diagnostics
from .harness import (
    ConfigError,
    ExperimentConfig,
    ExperimentResult,
    emit_results,
    load_config,
    load_preset,
    read_results,
    run_experiment,
    run_sigma_sweep,
)
