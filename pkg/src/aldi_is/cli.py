"""Command line entry point: ``aldi-is run <preset|config> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigurationError, NumericalError
from .harness import (
    ConfigError,
    emit_results,
    emit_sweep,
    list_presets,
    resolve_config,
    run_experiment,
    run_sigma_sweep,
)


def _parser():
    p = argparse.ArgumentParser(prog="aldi-is", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a preset or a TOML config file")
    run.add_argument("config", help="preset name or path to a TOML file")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="override a setting, e.g. --set sampler.particles=100 (repeatable)")
    run.add_argument("--out", help="output file (default: <name>.<format> in $ALDI_IS_OUTPUT_DIR)")
    run.add_argument("--format", choices=("csv", "json"))
    run.add_argument("--reps", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--threads", type=int)
    run.add_argument("-q", "--quiet", action="store_true")
    sub.add_parser("presets", help="list the shipped presets")
    return p


def _error(kind, message, **extra):
    record = {"error": kind, "message": message, **extra}
    print(json.dumps(record), file=sys.stderr)


def _run(args):
    cfg = resolve_config(args.config, args.overrides)
    changes = {k: v for k, v in (("reps", args.reps), ("seed", args.seed),
                                 ("threads", args.threads), ("output_format", args.format))
               if v is not None}
    if changes:
        cfg = replace(cfg, **changes).validate()
    fmt = cfg.output_format
    out = args.out or cfg.output
    if cfg.sweep_grid is not None:
        rows = run_sigma_sweep(cfg, cfg.sweep_grid, cfg.sweep_mode)
        path = emit_sweep(rows, fmt, out, name=cfg.name)
        if not args.quiet:
            for r in rows:
                print(f"sigma_r={r.sigma_r:.3g}  nrmse={r.nrmse:.4f}  "
                      f"grad_calls={r.mean_gradient_calls:.1f}  failed={r.failure_count}")
    else:
        result = run_experiment(cfg)
        path = emit_results(result, fmt, out)
        if not args.quiet:
            s = result.summary
            calls = "  ".join(f"{k}={v:.1f}" for k, v in s.call_means.items())
            print(f"{cfg.name}: reps={s.reps} nrmse={s.nrmse:.4f} mean={s.mean_estimate:.4g} "
                  f"failed={s.failure_count} valid={s.valid}\n  mean calls: {calls}")
    if not args.quiet:
        print(f"results written to {path}")
    return 0


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "presets":
            print("\n".join(list_presets()))
            return 0
        return _run(args)
    except ConfigError as exc:
        print(json.dumps(exc.to_record()), file=sys.stderr)
        return 2
    except ConfigurationError as exc:
        _error("ConfigurationError", str(exc))
        return 2
    except NumericalError as exc:
        _error(type(exc).__name__, str(exc))
        return 3
    except OSError as exc:
        _error("OSError", str(exc), path=getattr(exc, "filename", None))
        return 4


if __name__ == "__main__":
    sys.exit(main())
