"""Complete-data EM: the full branching structure is the missing data.

The E-step computes the pi/omega probability weights; the M-steps update the
branching ratio (closed form), the immigration waiting-time density (profile
likelihood over the Weibull shape), and the offspring density (closed form,
local optimization, or histogram).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InsufficientDataError
from .events import EventSeries
from .intensity import offspring_tail_cdf_sum
from .models import (
    ExponentialKernel,
    HistogramKernel,
    ModelSpec,
    OffspringModel,
    OmoriKernel,
    WeibullRenewal,
)
from .optim import maximize_logspace, maximize_scalar_logspace
from .reports import FitReport
from .rng import derive_rng
from .weights import BranchingWeights, branching_estep, build_pair_index

KAPPA_BOUNDS = (0.05, 20.0)
ALPHA_BOUNDS = (0.05, 20.0)


@dataclass(frozen=True)
class EmOptions:
    """Knobs for the complete-data EM.

    ``convergence_tol`` applies to the cumulative absolute parameter change
    over the last 3 iterations.  ``censor_final_interval`` adds the
    omega-weighted survival term for the censored interval after the last
    immigrant to the immigration M-step; ``coupled_offspring_mstep`` replaces
    the decoupled offspring updates by an exact joint maximization of the
    offspring part of the surrogate.  Both default to the plain estimator.
    """

    max_iterations: int = 200
    convergence_tol: float = 1e-6
    band_width: int | None = None
    omega_cutoff: float = 1e-12
    resample: bool = False
    resample_size: int | None = None
    censor_final_interval: bool = False
    coupled_offspring_mstep: bool = False
    kappa_fixed: float | None = None
    seed: int | None = None
    loglik_samples: int = 200
    compute_loglik: bool = True

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not (self.convergence_tol > 0):
            raise ConfigError("convergence_tol must be positive")
        if self.omega_cutoff < 0:
            raise ConfigError("omega_cutoff must be >= 0")


def e_step(events: EventSeries, model: ModelSpec, opts: EmOptions | None = None) -> BranchingWeights:
    """Probability weights of the branching structure under the current model."""
    opts = opts or EmOptions()
    return branching_estep(
        events,
        model,
        omega_cutoff=opts.omega_cutoff,
        band_width=opts.band_width,
        want_parent_pairs=True,
    )


def m_step_eta(weights: BranchingWeights, events: EventSeries, kernel) -> float:
    """eta = (n - sum_i pi_i) / sum_i H(r - t_i); the denominator corrects for
    offspring censored beyond the stopping time."""
    denom = offspring_tail_cdf_sum(events, kernel)
    if denom <= 0.0:
        raise ZeroDivisionError("degenerate branching-ratio denominator: sum_i H(r - t_i) = 0")
    if weights.parent_pairs is not None and weights.band_width is not None:
        num = weights.parent_pairs.total
    else:
        num = weights.expected_offspring()
    return max(num, 0.0) / denom


def _immigrant_sample(weights: BranchingWeights, events: EventSeries, censored: bool):
    pairs = weights.immigrant_pairs
    lag = pairs.lag
    w = pairs.weight
    keep = w > 0
    lag, w = lag[keep], w[keep]
    if censored:
        y = events.r - events.times[weights.tail_start :]
        v = weights.tail_weights
        keep = (v > 0) & (y > 0)
        return lag, w, y[keep], v[keep]
    return lag, w, np.empty(0), np.empty(0)


def m_step_immigration(
    weights: BranchingWeights,
    events: EventSeries,
    *,
    kappa_fixed: float | None = None,
    censor_final_interval: bool = False,
) -> WeibullRenewal:
    """Weighted Weibull MLE of the immigrant waiting-time density.

    For fixed shape the scale has the closed form beta^kappa = sum w x^kappa / sum w;
    the shape is profiled by bounded search on log kappa.
    """
    lag, w, y, v = _immigrant_sample(weights, events, censor_final_interval)
    total = w.sum()
    if not (total > 0):
        raise InsufficientDataError("no immigrant mass: immigration M-step undefined")
    log_lag = np.log(lag)
    log_w = np.log(w)
    if y.size:
        log_lag = np.concatenate([log_lag, np.log(y)])
        log_w = np.concatenate([log_w, np.log(v)])
    sum_w_loglag = float(w @ np.log(lag))
    log_total = math.log(total)

    def profile(kappa: float) -> tuple[float, float]:
        terms = log_w + kappa * log_lag
        m = terms.max()
        log_beta = (m + math.log(np.exp(terms - m).sum()) - log_total) / kappa
        # At the profiled scale the weighted power sum equals the total weight.
        q = (
            total * (math.log(kappa) - kappa * log_beta)
            + (kappa - 1.0) * sum_w_loglag
            - total
        )
        return q, log_beta

    if kappa_fixed is not None:
        _, log_beta = profile(kappa_fixed)
        return WeibullRenewal(kappa_fixed, math.exp(log_beta))
    kappa, _ = maximize_scalar_logspace(lambda k: profile(k)[0], *KAPPA_BOUNDS)
    _, log_beta = profile(kappa)
    return WeibullRenewal(kappa, math.exp(log_beta))


def _offspring_sample(weights: BranchingWeights, events: EventSeries):
    if weights.parent_pairs is None:
        raise ValueError("offspring M-step needs materialized parent weights")
    return weights.parent_pairs.lag, weights.parent_pairs.weight


def m_step_offspring_parametric(
    weights: BranchingWeights,
    events: EventSeries,
    family: str = "exponential",
    init_kernel=None,
):
    """Weighted MLE of the offspring density from the parent weights."""
    lag, w = _offspring_sample(weights, events)
    total = w.sum()
    if not (total > 0):
        raise InsufficientDataError("no offspring mass: offspring M-step undefined")
    if family == "exponential":
        return ExponentialKernel(float(w @ lag) / total)
    if family != "omori":
        raise ConfigError(f"unknown offspring family {family!r}")
    log_shifted = lambda c: np.log(lag + c)  # noqa: E731
    if isinstance(init_kernel, OmoriKernel):
        x0 = [init_kernel.c, init_kernel.alpha]
    else:
        x0 = [float(w @ lag) / total, 1.0]

    def objective(theta):
        c, alpha = theta
        return float(w @ (math.log(alpha) + alpha * math.log(c) - (1.0 + alpha) * log_shifted(c)))

    bounds = [(1e-6 * events.r, 10.0 * events.r), ALPHA_BOUNDS]
    res = maximize_logspace(objective, np.asarray(x0), bounds, restarts=3)
    return OmoriKernel(res.x[0], res.x[1])


def m_step_offspring_histogram(
    weights: BranchingWeights,
    events: EventSeries,
    bin_width: float,
    support_end: float,
    *,
    resample: bool = False,
    resample_size: int | None = None,
    rng: np.random.Generator | None = None,
) -> HistogramKernel:
    """Piecewise-constant offspring density from the parent weights.

    Normalized by the parent weight inside the support so the estimate is a
    proper density.  The Monte Carlo path draws an unweighted sample of lags
    with replacement, proportional to the weights, and histograms it.
    """
    if support_end < bin_width:
        raise ConfigError("support_end must be at least one bin wide")
    lag, w = _offspring_sample(weights, events)
    total = w.sum()
    if not (total > 0):
        raise InsufficientDataError("no offspring mass: histogram M-step undefined")
    nbins = int(math.ceil(support_end / bin_width - 1e-9))
    top = nbins * bin_width
    if resample:
        if rng is None:
            raise ConfigError("resampling requires an explicit rng")
        n_h = resample_size
        if n_h is None:
            n_h = int(weights.expected_offspring())
        n_h = max(n_h, 1)
        draws = lag[rng.choice(lag.size, size=n_h, p=w / total)]
        counts, _ = np.histogram(draws, bins=nbins, range=(0.0, top))
        inside = counts.sum()
    else:
        counts, _ = np.histogram(lag, bins=nbins, range=(0.0, top), weights=w)
        inside = counts.sum()
    if not (inside > 0):
        raise InsufficientDataError("no offspring mass inside the histogram support")
    return HistogramKernel(bin_width, counts / (inside * bin_width))


def _offspring_q_part(lag, w, eta: float, kernel, tail_sum: float) -> float:
    if w.size == 0 or eta == 0.0:
        return 0.0 if w.size == 0 else -np.inf
    total = float(w.sum())
    if isinstance(kernel, ExponentialKernel):
        sum_logh = -total * math.log(kernel.tau0) - float(w @ lag) / kernel.tau0
    elif isinstance(kernel, OmoriKernel):
        sum_logh = total * (math.log(kernel.alpha) + kernel.alpha * math.log(kernel.c)) - (
            1.0 + kernel.alpha
        ) * float(w @ np.log(lag + kernel.c))
    else:
        with np.errstate(divide="ignore"):
            sum_logh = float(w @ np.log(np.asarray(kernel.density(lag))))
    return total * math.log(eta) + sum_logh - eta * tail_sum


def _coupled_offspring_mstep(
    weights: BranchingWeights,
    events: EventSeries,
    family: str,
    current: OffspringModel,
) -> tuple[float, object]:
    """Exact joint maximizer of the offspring surrogate (eta profiled in closed form)."""
    lag, w = _offspring_sample(weights, events)
    total = w.sum()
    if not (total > 0):
        return 0.0, current.kernel

    def profiled(theta) -> float:
        kernel = ExponentialKernel(theta[0]) if family == "exponential" else OmoriKernel(*theta)
        tail = offspring_tail_cdf_sum(events, kernel)
        if tail <= 0:
            return -np.inf
        eta_hat = total / tail
        with np.errstate(divide="ignore"):
            logh = np.log(np.asarray(kernel.density(lag)))
        return float(w @ logh) + total * math.log(eta_hat) - total

    if family == "exponential":
        tau, _ = maximize_scalar_logspace(lambda t: profiled([t]), 1e-6 * events.r, 10.0 * events.r)
        kernel = ExponentialKernel(tau)
    else:
        x0 = (
            [current.kernel.c, current.kernel.alpha]
            if isinstance(current.kernel, OmoriKernel)
            else [float(w @ lag) / total, 1.0]
        )
        res = maximize_logspace(profiled, np.asarray(x0), [(1e-6 * events.r, 10.0 * events.r), ALPHA_BOUNDS], restarts=3)
        kernel = OmoriKernel(*res.x)
    tail = offspring_tail_cdf_sum(events, kernel)
    eta = total / tail
    # Never step downhill: fall back to the previous offspring model if better.
    old_tail = offspring_tail_cdf_sum(events, current.kernel)
    if _offspring_q_part(lag, w, current.eta, current.kernel, old_tail) > _offspring_q_part(
        lag, w, eta, kernel, tail
    ):
        return current.eta, current.kernel
    return eta, kernel


def _q_value(weights: BranchingWeights, events: EventSeries, model: ModelSpec, censored: bool) -> float:
    """Surrogate objective at the given parameters under the given weights."""
    lag_o, w_o = _offspring_sample(weights, events)
    tail_sum = offspring_tail_cdf_sum(events, model.offspring.kernel)
    q = _offspring_q_part(lag_o, w_o, model.offspring.eta, model.offspring.kernel, tail_sum)
    lag_i, w_i, y, v = _immigrant_sample(weights, events, censored)
    q += float(w_i @ model.immigration.log_density(lag_i))
    if y.size:
        q -= float(v @ model.immigration.cumulative_hazard(y))
    return q


def fit_complete_em(events: EventSeries, init: ModelSpec, opts: EmOptions | None = None) -> FitReport:
    """Alternate the E-step with the three M-steps until the parameters settle."""
    opts = opts or EmOptions()
    if not isinstance(init.immigration, WeibullRenewal):
        raise ConfigError("complete-data EM estimates Weibull renewal immigration; fix kappa=1 for Poisson")
    kernel0 = init.offspring.kernel
    if isinstance(kernel0, ExponentialKernel):
        family = "exponential"
    elif isinstance(kernel0, OmoriKernel):
        family = "omori"
    else:
        family = "histogram"
    model = init
    trace: list[dict] = []
    history: list[np.ndarray] = [np.array(list(model.scalar_params().values()))]
    converged = False
    pair_index = build_pair_index(events.times, opts.band_width)
    for m in range(opts.max_iterations):
        weights = branching_estep(
            events,
            model,
            omega_cutoff=opts.omega_cutoff,
            band_width=opts.band_width,
            want_parent_pairs=True,
            pair_index=pair_index,
        )
        has_offspring = weights.parent_pairs is not None and weights.parent_pairs.weight.size > 0
        if not has_offspring:
            kernel, eta = model.offspring.kernel, 0.0
        elif opts.coupled_offspring_mstep and family != "histogram":
            eta, kernel = _coupled_offspring_mstep(weights, events, family, model.offspring)
        else:
            if family == "histogram":
                kernel = m_step_offspring_histogram(
                    weights,
                    events,
                    kernel0.bin_width,
                    kernel0.support_end,
                    resample=opts.resample,
                    resample_size=opts.resample_size,
                    rng=derive_rng(opts.seed or 0, 500, m) if opts.resample else None,
                )
            else:
                kernel = m_step_offspring_parametric(weights, events, family, init_kernel=model.offspring.kernel)
            eta = m_step_eta(weights, events, kernel)
        immigration = m_step_immigration(
            weights,
            events,
            kappa_fixed=opts.kappa_fixed,
            censor_final_interval=opts.censor_final_interval,
        )
        model = ModelSpec(immigration, OffspringModel(eta, kernel))
        params = model.scalar_params()
        trace.append(dict(params, q_value=_q_value(weights, events, model, opts.censor_final_interval)))
        history.append(np.array(list(params.values())))
        if len(history) >= 4:
            deltas = [np.abs(history[-k] - history[-k - 1]).sum() for k in (1, 2, 3)]
            if sum(deltas) < opts.convergence_tol:
                converged = True
                break

    weights = e_step(events, model, opts)
    warnings = _boundary_warnings(model, opts)
    loglik = se = None
    label = "skipped"
    if opts.compute_loglik:
        from .gof import GofOptions, mc_loglik

        loglik, se = mc_loglik(events=events, model=model, opts=GofOptions(opts.loglik_samples, seed=opts.seed))
        label = "monte_carlo"
    return FitReport(
        algorithm="em_complete",
        model=model,
        iterations=len(trace),
        trace=trace,
        converged=converged,
        loglik=loglik,
        loglik_label=label,
        loglik_se=se,
        k=model.free_parameter_count(),
        n=events.n,
        r=events.r,
        data_fingerprint=events.fingerprint(),
        weights=weights,
        boundary_warnings=warnings,
        seed=opts.seed,
    )


def _boundary_warnings(model: ModelSpec, opts: EmOptions) -> list[str]:
    out = []
    imm = model.immigration
    if isinstance(imm, WeibullRenewal) and opts.kappa_fixed is None:
        if min(abs(math.log(imm.kappa / KAPPA_BOUNDS[0])), abs(math.log(imm.kappa / KAPPA_BOUNDS[1]))) < 1e-3:
            out.append(f"kappa={imm.kappa:.4g} at search boundary")
    if model.offspring.eta >= 1.0:
        out.append(f"eta={model.offspring.eta:.4g} >= 1: non-stationary fit")
    return out


def default_init(events: EventSeries, family: str = "exponential") -> ModelSpec:
    """Data-driven starting point: kappa=1, eta=0.5, scales from event spacing."""
    n, r = events.n, events.r
    eta0 = 0.5
    beta0 = r / max(n, 1) / (1.0 - eta0)
    mean_gap = float(np.mean(np.diff(events.times))) if n > 1 else r / 2.0
    if family == "exponential":
        kernel = ExponentialKernel(mean_gap)
    elif family == "omori":
        kernel = OmoriKernel(mean_gap, 1.0)
    else:
        raise ConfigError("default_init supports exponential or omori kernels")
    return ModelSpec(WeibullRenewal(1.0, beta0), OffspringModel(eta0, kernel))
