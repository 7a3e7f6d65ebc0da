"""Experiment configuration, repeated ALDI-IS runs, sweeps and result files.

A run is described by a small TOML file (see the shipped presets) that can
be amended with dotted ``section.key=value`` overrides. Every repetition
draws from its own child of ``numpy.random.SeedSequence(seed)`` and counts
into its own call ledger, so results do not depend on the thread count.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from . import vmfnm
from .clustering import DbscanConfig, dbscan
from .errors import ConfigurationError
from .estimator import ExperimentSummary, is_estimate, summarize
from .lsf import REFERENCE_PROBABILITIES, CallLedger, make_lsf
from .sampler import AldiConfig, LevelSchedule, initial_ensemble, run_schedule, run_ula
from .smoothing import SmoothingConfig

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "RepetitionRecord",
    "ExperimentResult",
    "SweepRow",
    "load_config",
    "parse_config",
    "apply_overrides",
    "list_presets",
    "load_preset",
    "resolve_config",
    "run_experiment",
    "run_sigma_sweep",
    "emit_results",
    "read_results",
    "emit_sweep",
    "read_sweep",
    "OUTPUT_DIR_ENV",
    "RECORD_COLUMNS",
]

OUTPUT_DIR_ENV = "ALDI_IS_OUTPUT_DIR"
RESULT_SCHEMA = "aldi-is/result-1"
SWEEP_SCHEMA = "aldi-is/sweep-1"


class ConfigError(ConfigurationError):
    """Invalid configuration, located as precisely as the source allows."""

    def __init__(self, message, key=None, line=None, source=None):
        self.key = key
        self.line = line
        self.source = source
        where = []
        if source:
            where.append(str(source))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        label = f" [{key}]" if key else ""
        super().__init__(f"{prefix}{': ' if prefix else ''}{message}{label}")
        self.detail = message

    def to_record(self):
        return {"error": "ConfigError", "message": self.detail, "key": self.key,
                "line": self.line, "source": None if self.source is None else str(self.source)}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------
_REQUIRED = object()

# dotted key -> (attribute, kind, default)
_SCHEMA = {
    "name": ("name", "str", "experiment"),
    "benchmark": ("benchmark", "str", _REQUIRED),
    "dim": ("dim", "int?", None),
    "reps": ("reps", "int", 1),
    "seed": ("seed", "int", 0),
    "threads": ("threads", "int", 1),
    "benchmark_params": ("benchmark_params", "table", {}),
    "smoothing.sigma_r": ("sigma_r", "float?", None),
    "smoothing.sigma": ("sigma", "float?", None),
    "smoothing.mu": ("mu", "float?", None),
    "schedule.levels": ("levels", "floats", (1.0, 0.5, 0.05, 0.0)),
    "schedule.gammas": ("gammas", "floats", (1.0, 0.5, 0.01, 1e-3)),
    "schedule.eps_cumu": ("eps_cumu", "floats", (0.1, 0.1, 0.1, 0.01)),
    "sampler.kind": ("sampler", "str", "aldi"),
    "sampler.particles": ("particles", "int", 50),
    "sampler.k_min": ("k_min", "int", 10),
    "sampler.k_max": ("k_max", "int", 2000),
    "sampler.step_scale": ("step_scale", "float", 0.1),
    "sampler.stopping_scope": ("stopping_scope", "str", "global"),
    "sampler.ula_step": ("ula_step", "float", 1e-3),
    "sampler.ula_steps": ("ula_steps", "int", 100),
    "dbscan.enabled": ("dbscan", "bool", False),
    "dbscan.epsilon": ("dbscan_epsilon", "float?", None),
    "dbscan.min_neighbors": ("dbscan_min_neighbors", "int?", None),
    "dbscan.burn_in": ("dbscan_burn_in", "int", 10),
    "dbscan.period": ("dbscan_period", "int", 10),
    "dbscan.share": ("share", "str", "potential"),
    "mixture.k_policy": ("k_policy", "str", "dbscan"),
    "mixture.k": ("k_fixed", "int", 1),
    "mixture.k_max": ("k_cap", "int", 5),
    "mixture.em_max_iter": ("em_max_iter", "int", 200),
    "mixture.em_tol": ("em_tol", "float", 1e-8),
    "estimator.samples": ("is_samples", "int", 2000),
    "estimator.p_ref": ("p_ref", "float?", None),
    "sweep.sigma_r": ("sweep_grid", "floats?", None),
    "sweep.mode": ("sweep_mode", "str?", None),
    "output.path": ("output", "str?", None),
    "output.format": ("output_format", "str", "csv"),
}
_ATTR_TO_KEY = {attr: key for key, (attr, _, _) in _SCHEMA.items()}
# knobs the method description leaves open; their values are echoed in
# the result metadata so that every run states what it assumed
UNSTATED_KNOBS = ("sigma_r", "k_min", "k_max", "stopping_scope", "share", "k_policy",
                  "dbscan_burn_in", "dbscan_min_neighbors")


@dataclass(frozen=True)
class ExperimentConfig:
    benchmark: str
    name: str = "experiment"
    dim: int | None = None
    reps: int = 1
    seed: int = 0
    threads: int = 1
    benchmark_params: dict = field(default_factory=dict)
    sigma_r: float | None = None
    sigma: float | None = None
    mu: float | None = None
    levels: tuple = (1.0, 0.5, 0.05, 0.0)
    gammas: tuple = (1.0, 0.5, 0.01, 1e-3)
    eps_cumu: tuple = (0.1, 0.1, 0.1, 0.01)
    sampler: str = "aldi"
    particles: int = 50
    k_min: int = 10
    k_max: int = 2000
    step_scale: float = 0.1
    stopping_scope: str = "global"
    ula_step: float = 1e-3
    ula_steps: int = 100
    dbscan: bool = False
    dbscan_epsilon: float | None = None
    dbscan_min_neighbors: int | None = None
    dbscan_burn_in: int = 10
    dbscan_period: int = 10
    share: str = "potential"
    k_policy: str = "dbscan"
    k_fixed: int = 1
    k_cap: int = 5
    em_max_iter: int = 200
    em_tol: float = 1e-8
    is_samples: int = 2000
    p_ref: float | None = None
    sweep_grid: tuple | None = None
    sweep_mode: str | None = None
    output: str | None = None
    output_format: str = "csv"
    source: str | None = field(default=None, compare=False)
    lines: dict = field(default_factory=dict, compare=False, repr=False)

    # derived objects ------------------------------------------------------
    def smoothing(self):
        if self.sigma_r is not None:
            return SmoothingConfig.from_reduced(self.sigma_r)
        return SmoothingConfig(self.sigma, self.mu)

    def schedule(self):
        return LevelSchedule(self.levels, self.gammas, self.eps_cumu)

    def dbscan_config(self):
        return DbscanConfig(self.dbscan_epsilon, self.dbscan_min_neighbors,
                            self.dbscan_burn_in, self.dbscan_period)

    def aldi_config(self):
        return AldiConfig(gamma=1.0, step_scale=self.step_scale, eps_cumu=0.1, k_min=self.k_min,
                          k_max=self.k_max, dbscan=self.dbscan_config() if self.dbscan else None,
                          share=self.share, stopping_scope=self.stopping_scope)

    def make_lsf(self):
        return make_lsf(self.benchmark, self.dim, **self.benchmark_params)

    def reference_probability(self):
        """``estimator.p_ref`` if set, else the published value for the
        benchmark; a closed form replaces the latter when the benchmark
        parameters were changed and one exists."""
        if self.p_ref is not None:
            return self.p_ref
        if self.benchmark_params:
            exact = getattr(self.make_lsf(), "exact_probability", None)
            if exact is not None:
                return exact()
        return REFERENCE_PROBABILITIES.get(self.benchmark)

    def to_dict(self):
        out = {}
        for f in fields(self):
            if f.name in ("source", "lines"):
                continue
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    def validate(self):
        """Build every derived object once; errors point at the offending key."""
        def fail(attr, message):
            key = _ATTR_TO_KEY.get(attr, attr)
            raise ConfigError(message, key=key, line=self.lines.get(key), source=self.source)

        def check(attrs, build):
            try:
                return build()
            except ConfigError:
                raise
            except (ConfigurationError, ValueError, TypeError) as exc:
                fail(attrs, str(exc))

        check("benchmark", self.make_lsf)
        if (self.sigma_r is None) == (self.sigma is None and self.mu is None):
            fail("sigma_r", "give either smoothing.sigma_r or both smoothing.sigma and smoothing.mu")
        if self.sigma_r is None and (self.sigma is None or self.mu is None):
            fail("sigma", "smoothing.sigma and smoothing.mu must be given together")
        check("sigma_r" if self.sigma_r is not None else "sigma", self.smoothing)
        check("levels", self.schedule)
        check("dbscan_epsilon", self.dbscan_config)
        check("k_min", self.aldi_config)
        positive = {"reps": 0, "threads": 1, "particles": 1, "is_samples": 1, "k_fixed": 1,
                    "k_cap": 1, "em_max_iter": 1, "ula_steps": 0}
        for attr, low in positive.items():
            if getattr(self, attr) < low:
                fail(attr, f"must be >= {low}")
        if self.seed < 0:
            fail("seed", "must be non-negative")
        if self.sampler not in ("aldi", "ula"):
            fail("sampler", "must be 'aldi' or 'ula'")
        if not self.ula_step > 0:
            fail("ula_step", "must be positive")
        if self.k_policy not in ("dbscan", "fixed", "bic"):
            fail("k_policy", "must be 'dbscan', 'fixed' or 'bic'")
        if self.k_fixed > self.particles:
            fail("k_fixed", "cannot exceed the number of particles")
        p_ref = self.reference_probability()
        if p_ref is not None and not 0 < p_ref < 1:
            fail("p_ref", "must lie in (0, 1)")
        if self.output_format not in ("csv", "json"):
            fail("output_format", "must be 'csv' or 'json'")
        if self.sweep_grid is not None:
            if not self.sweep_grid or any(not s > 0 for s in self.sweep_grid):
                fail("sweep_grid", "needs a non-empty list of positive values")
            if self.sweep_mode not in ("ula", "aldi"):
                fail("sweep_mode", "must be 'ula' or 'aldi'")
        return self


def _key_lines(text):
    """Map dotted keys to the line that defines them (1-based)."""
    lines = {}
    section = ""
    header = re.compile(r"^\s*\[\s*([A-Za-z0-9_.\-]+)\s*\]")
    assign = re.compile(r"^\s*([A-Za-z0-9_\-]+)\s*=")
    for no, raw in enumerate(text.splitlines(), start=1):
        m = header.match(raw)
        if m:
            section = m.group(1)
            lines.setdefault(section, no)
            continue
        m = assign.match(raw)
        if m:
            key = f"{section}.{m.group(1)}" if section else m.group(1)
            lines.setdefault(key, no)
    return lines


def _flatten(mapping, prefix=""):
    out = {}
    for k, v in mapping.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict) and key not in _SCHEMA:
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key, kind, value):
    base = kind.rstrip("?")
    if value is None:
        if kind.endswith("?"):
            return None
        raise ValueError("may not be empty")
    if base == "str":
        if not isinstance(value, str):
            raise ValueError("expected a string")
        return value
    if base == "bool":
        if not isinstance(value, bool):
            raise ValueError("expected true or false")
        return value
    if base == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError("expected an integer")
        return value
    if base == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError("expected a number")
        return float(value)
    if base == "floats":
        if not isinstance(value, list) or any(isinstance(v, bool) or not isinstance(v, (int, float))
                                              for v in value):
            raise ValueError("expected a list of numbers")
        return tuple(float(v) for v in value)
    if base == "table":
        if not isinstance(value, dict):
            raise ValueError("expected a table")
        return dict(value)
    raise AssertionError(kind)


def parse_config(text, source=None, overrides=()):
    """Parse TOML text into a validated :class:`ExperimentConfig`."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"TOML syntax error: {exc}", line=int(m.group(1)) if m else None,
                          source=source) from None
    lines = _key_lines(text)
    flat = _flatten(data)
    for key, value in _parse_overrides(overrides).items():
        flat[key] = value
        lines[key] = None
    kwargs = {}
    for key, value in flat.items():
        if key not in _SCHEMA:
            raise ConfigError("unknown setting", key=key, line=lines.get(key), source=source)
        attr, kind, _ = _SCHEMA[key]
        try:
            kwargs[attr] = _coerce(key, kind, value)
        except ValueError as exc:
            raise ConfigError(str(exc), key=key, line=lines.get(key), source=source) from None
    for key, (attr, _, default) in _SCHEMA.items():
        if default is _REQUIRED and attr not in kwargs:
            raise ConfigError("missing required setting", key=key, source=source)
    cfg = ExperimentConfig(**kwargs, source=None if source is None else str(source), lines=lines)
    return cfg.validate()


def _parse_overrides(overrides):
    out = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        try:
            value = tomllib.loads(f"v = {raw.strip()}")["v"]
        except tomllib.TOMLDecodeError:
            value = raw.strip()
        out[key] = value
    return out


def apply_overrides(cfg, overrides):
    """Return a copy of ``cfg`` with dotted ``key=value`` overrides applied."""
    kwargs = {}
    for key, value in _parse_overrides(overrides).items():
        if key not in _SCHEMA:
            raise ConfigError("unknown setting", key=key)
        attr, kind, _ = _SCHEMA[key]
        try:
            kwargs[attr] = _coerce(key, kind, value)
        except ValueError as exc:
            raise ConfigError(str(exc), key=key) from None
    return replace(cfg, **kwargs).validate()


def load_config(path, overrides=()):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", source=path) from None
    return parse_config(text, source=path, overrides=overrides)


def _preset_dir():
    return resources.files("aldi_is") / "presets"


def list_presets():
    return sorted(p.name[:-5] for p in _preset_dir().iterdir() if p.name.endswith(".toml"))


def load_preset(name, overrides=()):
    target = _preset_dir() / f"{name}.toml"
    if not target.is_file():
        raise ConfigError(f"unknown preset {name!r}; known: {', '.join(list_presets())}")
    return parse_config(target.read_text(), source=f"preset:{name}", overrides=overrides)


def resolve_config(spec, overrides=()):
    """A preset name or a path to a TOML file."""
    if spec in list_presets():
        return load_preset(spec, overrides)
    if os.path.exists(spec) or spec.endswith(".toml"):
        return load_config(spec, overrides)
    raise ConfigError(f"{spec!r} is neither a preset nor a config file; presets: "
                      f"{', '.join(list_presets())}")


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------
RECORD_COLUMNS = (
    "rep", "seed_spawn_key", "p_hat", "failed", "diverged", "hit_k_max", "lsf_calls",
    "gradient_calls", "fd_calls", "fd_lsf_calls", "paper_total", "iterations",
    "level_iterations", "stopping_time", "n_components", "ess", "weight_max", "n_excluded",
)


@dataclass
class RepetitionRecord:
    rep: int
    seed_spawn_key: int
    p_hat: float
    failed: bool
    diverged: bool
    hit_k_max: bool
    lsf_calls: int
    gradient_calls: int
    fd_calls: int
    fd_lsf_calls: int
    paper_total: int
    iterations: int
    level_iterations: str
    stopping_time: float
    n_components: int
    ess: float
    weight_max: float
    n_excluded: int

    def ledger(self):
        return {"lsf_calls": self.lsf_calls, "gradient_calls": self.gradient_calls,
                "fd_calls": self.fd_calls, "fd_lsf_calls": self.fd_lsf_calls,
                "paper_total": self.paper_total}


@dataclass
class ExperimentResult:
    config: dict
    summary: ExperimentSummary
    records: list
    metadata: dict

    def to_dict(self):
        return {"schema": RESULT_SCHEMA, "metadata": self.metadata, "config": self.config,
                "summary": self.summary.to_dict(),
                "repetitions": [dataclasses.asdict(r) for r in self.records]}


def _choose_model(cfg, x, rng):
    d, m = x.shape
    if cfg.k_policy == "fixed":
        k = cfg.k_fixed
    elif cfg.k_policy == "bic":
        k, model = vmfnm.select_k(x, range(1, min(cfg.k_cap, m) + 1), rng=rng,
                                  max_iter=cfg.em_max_iter, tol=cfg.em_tol)
        return model
    else:
        eps, min_nb = cfg.dbscan_config().resolve(d, m)
        k = int(np.clip(dbscan(x, eps, min_nb).n_clusters, 1, cfg.k_cap))
    return vmfnm.fit_em(x, min(k, m), rng=rng, max_iter=cfg.em_max_iter, tol=cfg.em_tol)


def _run_repetition(cfg, base_lsf, seq, rep):
    rng = np.random.default_rng(seq)
    ledger = CallLedger()
    lsf = base_lsf.with_ledger(ledger)
    smoothing = cfg.smoothing()
    e0 = initial_ensemble(lsf.dim, cfg.particles, rng)
    if cfg.sampler == "ula":
        ens, diag = run_ula(e0, lsf, smoothing, cfg.ula_step, cfg.ula_steps, rng)
    else:
        ens, diag = run_schedule(e0, lsf, smoothing, cfg.schedule(), cfg.aldi_config(), rng)
    p_hat = float("nan")
    k = 0
    ess = weight_max = float("nan")
    n_excluded = 0
    failed = diag.diverged
    if not failed:
        model = _choose_model(cfg, ens.particles, rng)
        k = model.K
        xs = vmfnm.sample(model, cfg.is_samples, rng)
        report = is_estimate(xs, lambda z: vmfnm.log_pdf(z, model), lsf)
        p_hat, ess, weight_max, n_excluded = report.p_hat, report.ess, report.weight_max, report.n_excluded
        failed = not report.valid
    snap = ledger.snapshot()
    return RepetitionRecord(
        rep=rep,
        seed_spawn_key=int(seq.spawn_key[-1]),
        p_hat=p_hat,
        failed=bool(failed),
        diverged=bool(diag.diverged),
        hit_k_max=bool(diag.hit_k_max),
        lsf_calls=snap["lsf_calls"],
        gradient_calls=snap["gradient_calls"],
        fd_calls=snap["fd_calls"],
        fd_lsf_calls=snap["fd_lsf_calls"],
        paper_total=ledger.paper_total,
        iterations=diag.iterations,
        level_iterations=";".join(str(lv.iterations) for lv in diag.levels),
        stopping_time=float(sum(lv.stopping_time for lv in diag.levels)),
        n_components=k,
        ess=float(ess),
        weight_max=float(weight_max),
        n_excluded=int(n_excluded),
    )


def _metadata(cfg, threads):
    from . import __version__

    return {
        "version": __version__,
        "seed": cfg.seed,
        "seed_scheme": "numpy SeedSequence(seed).spawn(reps); repetition i uses child i",
        "threads": threads,
        "unstated_knobs": {k: getattr(cfg, k) for k in UNSTATED_KNOBS},
    }


def run_experiment(cfg, threads=None):
    """Run ``cfg.reps`` independent ALDI-IS (or ULA-IS) repetitions.

    Returns an :class:`ExperimentResult`; its ``summary`` is the
    :class:`ExperimentSummary`. Records are ordered by repetition whatever
    the number of worker threads.
    """
    threads = cfg.threads if threads is None else threads
    if threads < 1:
        raise ConfigError("threads must be >= 1", key="threads")
    p_ref = cfg.reference_probability()
    if p_ref is None:
        raise ConfigError("no reference probability known; set estimator.p_ref", key="estimator.p_ref")
    base = cfg.make_lsf()
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.reps)
    jobs = list(enumerate(seqs))
    if threads == 1 or len(jobs) <= 1:
        records = [_run_repetition(cfg, base, s, i) for i, s in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            records = list(pool.map(lambda job: _run_repetition(cfg, base, job[1], job[0]), jobs))
    summary = summarize([r.p_hat for r in records], p_ref, [r.ledger() for r in records],
                        [r.failed for r in records])
    return ExperimentResult(cfg.to_dict(), summary, records, _metadata(cfg, threads))


@dataclass
class SweepRow:
    sigma_r: float
    nrmse: float
    mean_estimate: float
    mean_gradient_calls: float
    mean_lsf_calls: float
    failure_count: int
    valid: bool


def run_sigma_sweep(cfg, sigma_r_grid, sampler_mode, threads=None):
    """nRMSE and mean gradient calls for each reduced smoothing value.

    ``sampler_mode`` is ``"ula"`` (fixed step, ``ula_steps`` iterations) or
    ``"aldi"`` (the configured schedule with adaptive steps and stopping).
    """
    grid = [float(s) for s in sigma_r_grid]
    if not grid:
        raise ConfigError("sigma sweep needs a non-empty grid", key="sweep.sigma_r")
    if sampler_mode not in ("ula", "aldi"):
        raise ConfigError("sweep mode must be 'ula' or 'aldi'", key="sweep.mode")
    rows = []
    for s in grid:
        point = replace(cfg, sigma_r=s, sigma=None, mu=None, sampler=sampler_mode,
                        sweep_grid=None, sweep_mode=None).validate()
        res = run_experiment(point, threads=threads)
        summ = res.summary
        rows.append(SweepRow(s, summ.nrmse, summ.mean_estimate,
                             summ.call_means.get("gradient_calls", 0.0),
                             summ.call_means.get("lsf_calls", 0.0),
                             summ.failure_count, summ.valid))
    return rows


# ---------------------------------------------------------------------------
# result files
# ---------------------------------------------------------------------------
def _default_path(cfg_name, fmt):
    base = Path(os.environ.get(OUTPUT_DIR_ENV, "."))
    return base / f"{cfg_name}.{fmt}"


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return {"__float__": repr(obj)}
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def _json_restore(obj):
    if isinstance(obj, dict):
        if set(obj) == {"__float__"}:
            return float(obj["__float__"])
        return {k: _json_restore(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_restore(v) for v in obj]
    return obj


def _write(path, text):
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write results to {path}: {exc.strerror}") from None
    return path


def _cell(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _record_types():
    return {f.name: f.type for f in fields(RepetitionRecord)}


def _parse_cell(kind, text):
    if kind == "bool":
        return text == "true"
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text


def emit_results(result, fmt="csv", path=None):
    """Write ``result`` and return the path written.

    ``csv`` writes one row per repetition plus a ``<stem>.summary.json``
    sidecar with the summary, configuration and metadata; ``json`` writes a
    single document holding all of them.
    """
    if fmt not in ("csv", "json"):
        raise ConfigError("format must be 'csv' or 'json'", key="output.format")
    path = Path(path) if path is not None else _default_path(result.config.get("name", "results"), fmt)
    doc = _json_safe(result.to_dict())
    if fmt == "json":
        return _write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    lines = [",".join(RECORD_COLUMNS)]
    for rec in result.records:
        lines.append(",".join(_cell(getattr(rec, c)) for c in RECORD_COLUMNS))
    _write(path, "\n".join(lines) + "\n")
    side = {k: v for k, v in doc.items() if k != "repetitions"}
    _write(_sidecar(path), json.dumps(side, indent=2, sort_keys=True) + "\n")
    return path


def _sidecar(path):
    path = Path(path)
    return path.with_name(path.stem + ".summary.json")


def read_results(path):
    """Inverse of :func:`emit_results` for either format."""
    path = Path(path)
    types = _record_types()
    if path.suffix == ".json":
        doc = _json_restore(json.loads(path.read_text()))
        records = [RepetitionRecord(**r) for r in doc["repetitions"]]
    else:
        doc = _json_restore(json.loads(_sidecar(path).read_text()))
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            records = [RepetitionRecord(**{k: _parse_cell(types[k], v) for k, v in row.items()})
                       for row in reader]
    summary = ExperimentSummary(**doc["summary"])
    return ExperimentResult(doc["config"], summary, records, doc["metadata"])


SWEEP_COLUMNS = tuple(f.name for f in fields(SweepRow))


def emit_sweep(rows, fmt="csv", path=None, name="sweep"):
    path = Path(path) if path is not None else _default_path(name, fmt)
    if fmt == "json":
        doc = {"schema": SWEEP_SCHEMA, "rows": [dataclasses.asdict(r) for r in rows]}
        return _write(path, json.dumps(_json_safe(doc), indent=2) + "\n")
    lines = [",".join(SWEEP_COLUMNS)]
    lines += [",".join(_cell(getattr(r, c)) for c in SWEEP_COLUMNS) for r in rows]
    return _write(path, "\n".join(lines) + "\n")


def read_sweep(path):
    path = Path(path)
    types = {f.name: f.type for f in fields(SweepRow)}
    if path.suffix == ".json":
        doc = _json_restore(json.loads(path.read_text()))
        return [SweepRow(**r) for r in doc["rows"]]
    with path.open(newline="") as fh:
        return [SweepRow(**{k: _parse_cell(types[k], v) for k, v in row.items()})
                for row in csv.DictReader(fh)]
