"""Command-line front end: simulate, fit, gof, experiment.

Exit codes: 0 success, 2 validation error, 3 numerical failure,
4 partial experiment failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .baseline import fit_standard_mle
from .em_complete import EmOptions, default_init, fit_complete_em
from .em_semicomplete import SemiEmOptions, fit_semicomplete_em
from .errors import ConfigError, ExplosionError, NumericalError
from .events import read_events
from .experiments import PRESETS, run_experiment
from .gof import GofOptions, gof_report
from .models import HomogeneousPoisson, ModelSpec, OffspringModel, WeibullRenewal
from .rng import derive_rng
from .serialize import kernel_from_config, model_from_config
from .simulate import simulate_hawkes_renewal, simulate_to_size, write_simulation

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_PARTIAL = 4


def _load_config(path: str | None) -> dict:
    if path is None:
        raise ConfigError("--config is required for this subcommand")
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    model = model_from_config(cfg["model"])
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    reps = int(cfg.get("replications", 1))
    out = _out_dir(args)
    size = cfg.get("size")
    r = cfg.get("r")
    if size is None and r is None:
        raise ConfigError("simulate config needs 'r' or 'size'")
    for rep in range(reps):
        rng = derive_rng(seed, rep)
        if size is not None:
            result = simulate_to_size(model, int(size), rng)
        else:
            result = simulate_hawkes_renewal(model, float(r), rng)
        name = "events.csv" if reps == 1 else f"events_{rep:03d}.csv"
        write_simulation(out / name, result)
        print(f"wrote {out / name} ({result.events.n} events, r={result.events.r:g})")
    return EXIT_OK


def _fit_options(cfg: dict, seed: int) -> dict:
    return {k: v for k, v in cfg.get("options", {}).items()} | {"seed": seed}


def cmd_fit(args) -> int:
    cfg = _load_config(args.config)
    events = read_events(cfg["data"], r=cfg.get("r"))
    algorithm = cfg.get("algorithm", "em_complete")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    out = _out_dir(args)
    kernel_family = cfg.get("kernel_family", "exponential")
    init = model_from_config(cfg["init"]) if "init" in cfg else None
    if algorithm == "em_complete":
        init = init or default_init(events, kernel_family)
        report = fit_complete_em(events, init, EmOptions(**_fit_options(cfg, seed)))
    elif algorithm == "em_semicomplete":
        mode = cfg.get("immigration_mode", "renewal")
        if init is None:
            base = default_init(events, kernel_family)
            if mode == "renewal":
                init = base
            else:
                init = ModelSpec(HomogeneousPoisson(0.5 * events.n / events.r), base.offspring)
        report = fit_semicomplete_em(events, init, SemiEmOptions(**_fit_options(cfg, seed)), immigration_mode=mode)
    elif algorithm == "baseline":
        report = fit_standard_mle(events, family=kernel_family, init=init, restarts=int(cfg.get("restarts", 3)))
    else:
        raise ConfigError(f"unknown algorithm {algorithm!r}")
    base = out / cfg.get("name", "fit")
    report.save(base)
    print(f"wrote {base}.json (converged={report.converged}, params={report.params()})")
    return EXIT_OK


def cmd_gof(args) -> int:
    cfg = _load_config(args.config)
    events = read_events(cfg["data"], r=cfg.get("r"))
    if "model" in cfg:
        model = model_from_config(cfg["model"])
    elif "report" in cfg:
        fitted = json.loads(Path(cfg["report"]).read_text())
        model = model_from_config(fitted["model"])
    else:
        raise ConfigError("gof config needs 'model' or 'report'")
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    opts = GofOptions(mc_samples=int(cfg.get("mc_samples", 200)), seed=seed)
    report = gof_report(model, events, opts)
    out = _out_dir(args)
    base = out / cfg.get("name", "gof")
    report.save(base)
    print(report.summary_line())
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _load_config(args.config) if args.config else {}
    experiment = cfg.get("experiment", args.preset)
    if experiment is None:
        raise ConfigError("experiment id missing: set 'experiment' in the config or pass --preset")
    if experiment not in PRESETS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose one of {PRESETS}")
    seed = args.seed if args.seed is not None else cfg.get("seed")
    overrides = {k: v for k, v in cfg.items() if k in ("size", "mc_samples")}
    result = run_experiment(
        experiment,
        _out_dir(args),
        reps=cfg.get("replications"),
        seed=None if seed is None else int(seed),
        jobs=args.jobs,
        full_scale=args.full_scale or bool(cfg.get("full_scale", False)),
        **overrides,
    )
    ok = len(result.rows) - result.n_failed
    print(f"{experiment}: {ok}/{len(result.rows)} replications succeeded; summary rows: {len(result.summary)}")
    for row in result.summary:
        print("  " + ", ".join(f"{k}={v}" for k, v in row.items()))
    return EXIT_PARTIAL if result.n_failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="renewal-hawkes",
        description="Hawkes processes with renewal immigration: simulate, fit, test, reproduce.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, desc in (
        ("simulate", cmd_simulate, "simulate event series from a model config"),
        ("fit", cmd_fit, "fit a model to an event series"),
        ("gof", cmd_gof, "goodness-of-fit report for a fitted model"),
        ("experiment", cmd_experiment, "run a preset Monte Carlo study"),
    ):
        p = sub.add_parser(name, help=desc)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="root seed (overrides config)")
        p.add_argument("--out", help="output directory (default: current)")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers for replications")
        p.add_argument("--full-scale", action="store_true", help="run the full study grids")
        if name == "experiment":
            p.add_argument("--preset", choices=PRESETS, help="experiment id when no config is given")
        p.set_defaults(fn=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, KeyError, TypeError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, ExplosionError, ZeroDivisionError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
