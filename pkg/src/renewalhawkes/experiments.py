"""Preset Monte Carlo experiments at desk scale, with full-scale grids behind a flag.

Presets: ``table1`` (estimator consistency), ``table2`` (model selection),
``fig3`` (branching-ratio bias under immigration misspecification), ``fig45``
(inhomogeneous immigration estimation).  Each preset writes per-replication
rows plus a summary table; summaries are pure functions of the rows, so
re-aggregation reproduces them exactly.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from . import __version__
from .baseline import fit_standard_mle
from .em_complete import EmOptions, fit_complete_em
from .em_semicomplete import SemiEmOptions, fit_semicomplete_em
from .events import EventSeries
from .gof import GofOptions, ks_test_exponential, model_selection, residual_transform
from .models import (
    ExponentialKernel,
    HomogeneousPoisson,
    ModelSpec,
    OffspringModel,
    WeibullRenewal,
    sinusoidal_intensity,
)
from .rng import derive_rng
from .simulate import simulate_hawkes_renewal, simulate_to_size

PRESETS = ("table1", "table2", "fig3", "fig45")

# Reference values (bias, sd) per (kappa, eta) cell for n = 500: rows are
# (kappa_bias, beta_bias, eta_bias, tau0_bias) with their reported sds.
TABLE1_REFERENCE = {
    (0.5, 0.1): {"kappa": (0.02, 0.02), "beta": (0.55, 0.74), "eta": (0.02, 0.06), "tau0": (-0.05, 2.04)},
    (0.5, 0.5): {"kappa": (0.06, 0.03), "beta": (1.70, 1.32), "eta": (0.03, 0.06), "tau0": (-0.41, 0.52)},
    (0.5, 0.9): {"kappa": (0.16, 0.15), "beta": (0.89, 2.13), "eta": (-0.04, 0.05), "tau0": (-0.46, 0.51)},
    (0.75, 0.1): {"kappa": (0.04, 0.04), "beta": (1.01, 1.22), "eta": (0.06, 0.06), "tau0": (0.31, 1.51)},
    (0.75, 0.5): {"kappa": (0.06, 0.07), "beta": (1.16, 1.52), "eta": (0.02, 0.06), "tau0": (-0.25, 0.48)},
    (0.75, 0.9): {"kappa": (0.12, 0.13), "beta": (-1.00, 3.14), "eta": (-0.05, 0.05), "tau0": (-0.52, 0.37)},
    (1.0, 0.1): {"kappa": (0.02, 0.05), "beta": (0.46, 0.76), "eta": (0.03, 0.04), "tau0": (1.71, 2.97)},
    (1.0, 0.5): {"kappa": (-0.02, 0.07), "beta": (-0.66, 1.08), "eta": (-0.03, 0.05), "tau0": (-0.08, 0.48)},
    (1.0, 0.9): {"kappa": (0.02, 0.15), "beta": (-1.58, 2.99), "eta": (-0.04, 0.05), "tau0": (-0.28, 0.60)},
    (1.25, 0.1): {"kappa": (-0.03, 0.08), "beta": (0.04, 0.63), "eta": (0.01, 0.04), "tau0": (6.23, 6.59)},
    (1.25, 0.5): {"kappa": (-0.06, 0.11), "beta": (-0.69, 1.21), "eta": (-0.04, 0.07), "tau0": (-0.05, 0.59)},
    (1.25, 0.9): {"kappa": (-0.12, 0.20), "beta": (-3.16, 2.53), "eta": (-0.07, 0.05), "tau0": (-0.30, 0.49)},
    (1.5, 0.1): {"kappa": (-0.06, 0.09), "beta": (-0.09, 0.60), "eta": (0.00, 0.03), "tau0": (3.91, 5.35)},
    (1.5, 0.5): {"kappa": (-0.15, 0.10), "beta": (-0.79, 1.09), "eta": (-0.03, 0.06), "tau0": (0.03, 0.56)},
    (1.5, 0.9): {"kappa": (-0.29, 0.26), "beta": (-3.17, 2.96), "eta": (-0.05, 0.05), "tau0": (-0.36, 0.42)},
}

# Scale values used in the consistency study so the mean waiting time is 10.
TABLE1_BETAS = {0.5: 5.0, 0.75: 8.4, 1.0: 10.0, 1.25: 10.7, 1.5: 11.1}


def _seed_int(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=tuple(key)).generate_state(1)[0])


def _weibull_scale_for_mean(kappa: float, mean: float) -> float:
    return mean / math.exp(gammaln(1.0 + 1.0 / kappa))


def _run_tasks(worker, tasks: list[dict], jobs: int) -> list[dict]:
    if jobs <= 1 or len(tasks) <= 1:
        return [worker(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(worker, tasks, chunksize=1))


class _guard:
    """Picklable wrapper recording per-replication failures instead of aborting."""

    def __init__(self, worker):
        self.worker = worker

    def __call__(self, task: dict) -> dict:
        try:
            row = self.worker(task)
            row["status"] = "ok"
            row["error"] = ""
            return row
        except Exception as exc:  # partial failures recorded, run continues
            return dict(task, status="failed", error=f"{type(exc).__name__}: {exc}")


@dataclass
class ExperimentResult:
    experiment: str
    config: dict
    rows: list[dict]
    summary: list[dict]

    @property
    def n_failed(self) -> int:
        return sum(1 for row in self.rows if row.get("status") != "ok")


def _metadata_lines(experiment: str, config: dict) -> list[str]:
    return [
        f"# experiment={experiment}",
        f"# package=renewalhawkes {__version__}",
        f"# config={json.dumps(config, sort_keys=True)}",
    ]


def _write_table(path: Path, rows: list[dict], header_lines: list[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("\n".join(header_lines) + "\n")
        return
    cols = sorted({k for row in rows for k in row})
    lines = list(header_lines)
    lines.append(",".join(cols))
    for row in rows:
        lines.append(",".join(_cell(row.get(c)) for c in cols))
    path.write_text("\n".join(lines) + "\n")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_result(result: ExperimentResult, out_dir: str | Path | None) -> None:
    if out_dir is None:
        return
    out = Path(out_dir)
    meta = _metadata_lines(result.experiment, result.config)
    _write_table(out / "results.csv", result.rows, meta)
    _write_table(out / "summary.csv", result.summary, meta)


# ---------------------------------------------------------------------------
# Table 1: consistency of the complete-data EM.
# ---------------------------------------------------------------------------


def _table1_worker(task: dict) -> dict:
    kappa, eta, beta, tau0 = task["kappa"], task["eta"], task["beta"], task["tau0"]
    rng = derive_rng(task["seed"], task["cell"], task["rep"])
    truth = ModelSpec(WeibullRenewal(kappa, beta), OffspringModel(eta, ExponentialKernel(tau0)))
    sim = simulate_to_size(truth, task["size"], rng)
    # Deliberately poor starting values, drawn as in the consistency study.
    init = ModelSpec(
        WeibullRenewal(1.0, beta * rng.uniform(0.25, 4.0)),
        OffspringModel(rng.uniform(0.1, 0.9), ExponentialKernel(rng.uniform(0.5, 10.0))),
    )
    # The source study runs its EM for ~50 iterations from these deliberately bad
    # starts and reports the resulting (not fully converged) estimates; the same
    # budget is needed to reproduce its bias table.
    fit = fit_complete_em(sim.events, init, EmOptions(max_iterations=50, compute_loglik=False))
    p = fit.params()
    return {
        "kappa": kappa,
        "eta": eta,
        "rep": task["rep"],
        "n": sim.events.n,
        "r": sim.events.r,
        "kappa_hat": p["kappa"],
        "beta_hat": p["beta"],
        "eta_hat": p["eta"],
        "tau0_hat": p["tau0"],
        "kappa_bias": p["kappa"] - kappa,
        "beta_bias": p["beta"] - beta,
        "eta_bias": p["eta"] - eta,
        "tau0_bias": p["tau0"] - tau0,
        "iterations": fit.iterations,
        "converged": fit.converged,
    }


def aggregate_table1(rows: list[dict], reps: int) -> list[dict]:
    summary = []
    cells = sorted({(row["kappa"], row["eta"]) for row in rows if row.get("status") == "ok"})
    for kappa, eta in cells:
        cell_rows = [r for r in rows if r.get("status") == "ok" and (r["kappa"], r["eta"]) == (kappa, eta)]
        entry: dict = {"kappa": kappa, "eta": eta, "replications": len(cell_rows)}
        ref = TABLE1_REFERENCE.get((kappa, eta), {})
        for param in ("kappa", "beta", "eta", "tau0"):
            biases = np.array([r[f"{param}_bias"] for r in cell_rows])
            entry[f"{param}_bias_mean"] = float(biases.mean())
            entry[f"{param}_bias_sd"] = float(biases.std(ddof=1)) if biases.size > 1 else 0.0
            if param in ref:
                bias_ref, sd_ref = ref[param]
                tol = 3.0 * sd_ref / math.sqrt(reps) + 0.02
                entry[f"{param}_ref_bias"] = bias_ref
                entry[f"{param}_ref_sd"] = sd_ref
                entry[f"{param}_tolerance"] = tol
                entry[f"{param}_within"] = bool(abs(biases.mean() - bias_ref) <= tol)
        summary.append(entry)
    return summary


def run_table1(
    out_dir: str | Path | None = None,
    reps: int = 20,
    seed: int = 1,
    jobs: int = 1,
    full_scale: bool = False,
    size: int = 500,
) -> ExperimentResult:
    kappas = sorted(TABLE1_BETAS) if full_scale else [0.5, 1.0, 1.5]
    if full_scale:
        reps = max(reps, 50)
    etas = [0.1, 0.5, 0.9]
    tasks = []
    for cell, (kappa, eta) in enumerate((k, e) for k in kappas for e in etas):
        for rep in range(reps):
            tasks.append(
                {
                    "kappa": kappa,
                    "eta": eta,
                    "beta": TABLE1_BETAS[kappa],
                    "tau0": 3.0,
                    "size": size,
                    "cell": cell,
                    "rep": rep,
                    "seed": seed,
                }
            )
    rows = _run_tasks(_guard(_table1_worker), tasks, jobs)
    config = {"reps": reps, "seed": seed, "size": size, "kappas": kappas, "etas": etas, "full_scale": full_scale}
    result = ExperimentResult("table1", config, rows, aggregate_table1(rows, reps))
    _write_result(result, out_dir)
    return result


# ---------------------------------------------------------------------------
# Table 2: model selection (AIC, Wilks, KS) against the standard Hawkes model.
# ---------------------------------------------------------------------------


def _table2_worker(task: dict) -> dict:
    kappa = task["kappa"]
    rng = derive_rng(task["seed"], task["cell"], task["rep"])
    truth = ModelSpec(
        WeibullRenewal(kappa, task["beta"]),
        OffspringModel(task["eta"], ExponentialKernel(task["tau0"])),
    )
    sim = simulate_to_size(truth, task["size"], rng)
    events = sim.events
    mc_seed = _seed_int(task["seed"], task["cell"], task["rep"], 7)
    fit_h1 = fit_complete_em(
        events,
        init=ModelSpec(
            WeibullRenewal(1.0, task["beta"] * rng.uniform(0.25, 4.0)),
            OffspringModel(rng.uniform(0.1, 0.9), ExponentialKernel(task["tau0"] * rng.uniform(0.5, 4.0))),
        ),
        opts=EmOptions(seed=mc_seed, loglik_samples=task["mc_samples"]),
    )
    fit_h0 = fit_standard_mle(events, family="exponential", want_weights=False)
    sel = model_selection(fit_h0, fit_h1)
    z0 = np.zeros(events.n, dtype=np.int8)
    z0[0] = 1
    _, ks_p = ks_test_exponential(residual_transform(fit_h0.model, events, z0))
    level = task["level"]
    return {
        "kappa": kappa,
        "size": task["size"],
        "rep": task["rep"],
        "n": events.n,
        "loglik_h0": fit_h0.loglik,
        "loglik_h1": fit_h1.loglik,
        "aic_h0": fit_h0.aic,
        "aic_h1": fit_h1.aic,
        "aic_selects_h1": bool(sel.delta_aic > 0),
        "wilks_stat": sel.wilks_stat,
        "wilks_reject": bool(sel.wilks_pvalue < level),
        "ks_pvalue": ks_p,
        "ks_reject": bool(ks_p < level),
    }


def aggregate_table2(rows: list[dict]) -> list[dict]:
    summary = []
    cells = sorted({(row["kappa"], row["size"]) for row in rows if row.get("status") == "ok"})
    for kappa, size in cells:
        cell_rows = [r for r in rows if r.get("status") == "ok" and (r["kappa"], r["size"]) == (kappa, size)]
        m = len(cell_rows)
        summary.append(
            {
                "kappa": kappa,
                "size": size,
                "replications": m,
                "aic_fraction": sum(r["aic_selects_h1"] for r in cell_rows) / m,
                "wilks_fraction": sum(r["wilks_reject"] for r in cell_rows) / m,
                "ks_fraction": sum(r["ks_reject"] for r in cell_rows) / m,
            }
        )
    return summary


def run_table2(
    out_dir: str | Path | None = None,
    reps: int = 30,
    seed: int = 2,
    jobs: int = 1,
    full_scale: bool = False,
    mc_samples: int = 200,
) -> ExperimentResult:
    kappas = [0.5, 0.75, 1.0, 1.25, 1.5] if full_scale else [0.5, 1.0]
    sizes = [250, 500, 750, 1000] if full_scale else [250]
    if full_scale:
        reps = max(reps, 100)
    tasks = []
    cell = 0
    for kappa in kappas:
        for size in sizes:
            for rep in range(reps):
                tasks.append(
                    {
                        "kappa": kappa,
                        "beta": 1.0,
                        "eta": 0.6,
                        "tau0": 0.3,
                        "size": size,
                        "level": 0.05,
                        "mc_samples": mc_samples,
                        "cell": cell,
                        "rep": rep,
                        "seed": seed,
                    }
                )
            cell += 1
    rows = _run_tasks(_guard(_table2_worker), tasks, jobs)
    config = {
        "reps": reps,
        "seed": seed,
        "kappas": kappas,
        "sizes": sizes,
        "mc_samples": mc_samples,
        "full_scale": full_scale,
    }
    result = ExperimentResult("table2", config, rows, aggregate_table2(rows))
    _write_result(result, out_dir)
    return result


# ---------------------------------------------------------------------------
# Figure 3: eta bias of the misspecified Poisson-immigration MLE.
# ---------------------------------------------------------------------------


def _fig3_worker(task: dict) -> dict:
    kappa = task["kappa"]
    rng = derive_rng(task["seed"], task["cell"], task["rep"])
    beta = _weibull_scale_for_mean(kappa, task["mean_wait"])
    truth = ModelSpec(
        WeibullRenewal(kappa, beta), OffspringModel(task["eta"], ExponentialKernel(task["tau0"]))
    )
    sim = simulate_to_size(truth, task["size"], rng)
    fit_exp = fit_standard_mle(sim.events, family="exponential", want_weights=False)
    fit_omori = fit_standard_mle(sim.events, family="omori", want_weights=False)
    return {
        "kappa": kappa,
        "rep": task["rep"],
        "n": sim.events.n,
        "eta_hat_exponential": fit_exp.params()["eta"],
        "eta_hat_omori": fit_omori.params()["eta"],
        "eta_bias_exponential": fit_exp.params()["eta"] - task["eta"],
        "eta_bias_omori": fit_omori.params()["eta"] - task["eta"],
    }


def aggregate_fig3(rows: list[dict]) -> list[dict]:
    summary = []
    for kappa in sorted({row["kappa"] for row in rows if row.get("status") == "ok"}):
        cell_rows = [r for r in rows if r.get("status") == "ok" and r["kappa"] == kappa]
        entry = {"kappa": kappa, "replications": len(cell_rows)}
        for fam in ("exponential", "omori"):
            biases = np.array([r[f"eta_bias_{fam}"] for r in cell_rows])
            q25, q50, q75 = np.quantile(biases, [0.25, 0.5, 0.75])
            entry[f"{fam}_bias_q25"] = float(q25)
            entry[f"{fam}_bias_median"] = float(q50)
            entry[f"{fam}_bias_q75"] = float(q75)
        summary.append(entry)
    return summary


def run_fig3(
    out_dir: str | Path | None = None,
    reps: int = 30,
    seed: int = 3,
    jobs: int = 1,
    full_scale: bool = False,
    size: int = 1000,
) -> ExperimentResult:
    kappas = [round(0.4 + 0.1 * k, 1) for k in range(11)] if full_scale else [0.5]
    if full_scale:
        reps = max(reps, 50)
    tasks = []
    for cell, kappa in enumerate(kappas):
        for rep in range(reps):
            tasks.append(
                {
                    "kappa": kappa,
                    "eta": 0.5,
                    "tau0": 0.1,
                    "mean_wait": 4.0,
                    "size": size,
                    "cell": cell,
                    "rep": rep,
                    "seed": seed,
                }
            )
    rows = _run_tasks(_guard(_fig3_worker), tasks, jobs)
    config = {"reps": reps, "seed": seed, "size": size, "kappas": kappas, "full_scale": full_scale}
    result = ExperimentResult("fig3", config, rows, aggregate_fig3(rows))
    _write_result(result, out_dir)
    return result


# ---------------------------------------------------------------------------
# Figures 4-5: semi-complete EM with sinusoidal immigration.
# ---------------------------------------------------------------------------

FIG45_GRID_POINTS = 256


def _fig45_worker(task: dict) -> dict:
    eta = task["eta"]
    rng = derive_rng(task["seed"], task["cell"], task["rep"])
    truth_mu = sinusoidal_intensity(task["amplitude"], task["period"], task["offset"])
    truth = ModelSpec(truth_mu, OffspringModel(eta, ExponentialKernel(task["tau0"])))
    sim = simulate_hawkes_renewal(truth, task["r"], rng)
    events = sim.events
    init = ModelSpec(
        HomogeneousPoisson(rng.uniform(0.1, 5.0)),
        OffspringModel(rng.uniform(0.1, 0.9), ExponentialKernel(rng.uniform(0.1, 10.0))),
    )
    opts = SemiEmOptions(compute_loglik=False)
    fit_true = fit_semicomplete_em(events, init, opts, immigration_mode="inhomogeneous")
    fit_false = fit_semicomplete_em(events, init, opts, immigration_mode="homogeneous")
    estimate = fit_true.model.immigration
    mass_residual = abs(estimate.cumulative(task["r"]) - estimate.total_mass)
    grid = np.linspace(0.0, task["r"], FIG45_GRID_POINTS + 1)[1:]
    mu_hat = np.asarray(estimate.intensity(grid))
    mu_true = np.asarray(truth_mu.intensity(grid))
    iae = float(np.trapezoid(np.abs(mu_hat - mu_true), grid))
    row = {
        "eta": eta,
        "rep": task["rep"],
        "n": events.n,
        "eta_hat_true_model": fit_true.params()["eta"],
        "eta_hat_false_model": fit_false.params()["eta"],
        "eta_bias_true_model": fit_true.params()["eta"] - eta,
        "eta_bias_false_model": fit_false.params()["eta"] - eta,
        "tau0_hat_true_model": fit_true.params()["tau0"],
        "mass_residual": float(mass_residual),
        "iae": iae,
        "bandwidth": estimate.bandwidth,
        "iterations_true": fit_true.iterations,
        "iterations_false": fit_false.iterations,
    }
    if task.get("curve_dir"):
        path = Path(task["curve_dir"]) / f"fig45_eta{eta:g}_rep{task['rep']:03d}_mu.csv"
        _write_table(
            path,
            [{"t": float(t), "mu_hat": float(v)} for t, v in zip(grid, mu_hat)],
            [f"# experiment=fig45", f"# eta={eta:g}", f"# rep={task['rep']}"],
        )
    row["_mu_hat"] = mu_hat.tolist()
    return row


def aggregate_fig45(rows: list[dict], r: float = 250.0) -> list[dict]:
    summary = []
    for eta in sorted({row["eta"] for row in rows if row.get("status") == "ok"}):
        cell_rows = [x for x in rows if x.get("status") == "ok" and x["eta"] == eta]
        entry = {"eta": eta, "replications": len(cell_rows)}
        for model in ("true_model", "false_model"):
            biases = np.array([x[f"eta_bias_{model}"] for x in cell_rows])
            q25, q50, q75 = np.quantile(biases, [0.25, 0.5, 0.75])
            entry[f"{model}_bias_q25"] = float(q25)
            entry[f"{model}_bias_median"] = float(q50)
            entry[f"{model}_bias_q75"] = float(q75)
        entry["max_mass_residual"] = float(max(x["mass_residual"] for x in cell_rows))
        entry["median_iae"] = float(np.median([x["iae"] for x in cell_rows]))
        summary.append(entry)
    return summary


def mu_bands_fig45(rows: list[dict], r: float = 250.0) -> list[dict]:
    """Pointwise quantile bands of the estimated immigration intensity."""
    grid = np.linspace(0.0, r, FIG45_GRID_POINTS + 1)[1:]
    bands = []
    for eta in sorted({row["eta"] for row in rows if row.get("status") == "ok"}):
        curves = np.array(
            [x["_mu_hat"] for x in rows if x.get("status") == "ok" and x["eta"] == eta and "_mu_hat" in x]
        )
        if curves.size == 0:
            continue
        q05, q25, q50, q75, q95 = np.quantile(curves, [0.05, 0.25, 0.5, 0.75, 0.95], axis=0)
        for k, t in enumerate(grid):
            bands.append(
                {
                    "eta": eta,
                    "t": float(t),
                    "q05": float(q05[k]),
                    "q25": float(q25[k]),
                    "median": float(q50[k]),
                    "q75": float(q75[k]),
                    "q95": float(q95[k]),
                }
            )
    return bands


def run_fig45(
    out_dir: str | Path | None = None,
    reps: int = 50,
    seed: int = 4,
    jobs: int = 1,
    full_scale: bool = False,
) -> ExperimentResult:
    etas = [round(0.1 * k, 1) for k in range(1, 10)] if full_scale else [0.1, 0.5, 0.9]
    tasks = []
    curve_dir = str(Path(out_dir) / "reps") if out_dir is not None else None
    for cell, eta in enumerate(etas):
        for rep in range(reps):
            tasks.append(
                {
                    "eta": eta,
                    "tau0": 0.1,
                    "amplitude": 1.0,
                    "period": 250.0,
                    "offset": 1.5,
                    "r": 250.0,
                    "cell": cell,
                    "rep": rep,
                    "seed": seed,
                    "curve_dir": curve_dir,
                }
            )
    rows = _run_tasks(_guard(_fig45_worker), tasks, jobs)
    config = {"reps": reps, "seed": seed, "etas": etas, "full_scale": full_scale}
    summary = aggregate_fig45(rows)
    result = ExperimentResult("fig45", config, rows, summary)
    if out_dir is not None:
        out = Path(out_dir)
        meta = _metadata_lines("fig45", config)
        slim_rows = [{k: v for k, v in row.items() if k != "_mu_hat"} for row in rows]
        _write_table(out / "results.csv", slim_rows, meta)
        _write_table(out / "summary.csv", summary, meta)
        _write_table(out / "fig45_mu_bands.csv", mu_bands_fig45(rows), meta)
    return result


def run_experiment(
    experiment: str,
    out_dir: str | Path | None = None,
    *,
    reps: int | None = None,
    seed: int | None = None,
    jobs: int = 1,
    full_scale: bool = False,
    **overrides,
) -> ExperimentResult:
    """Dispatch a preset by id."""
    runners = {"table1": run_table1, "table2": run_table2, "fig3": run_fig3, "fig45": run_fig45}
    if experiment not in runners:
        raise ValueError(f"unknown experiment {experiment!r}; choose one of {PRESETS}")
    kwargs = dict(jobs=jobs, full_scale=full_scale, **overrides)
    if reps is not None:
        kwargs["reps"] = reps
    if seed is not None:
        kwargs["seed"] = seed
    return runners[experiment](out_dir, **kwargs)
