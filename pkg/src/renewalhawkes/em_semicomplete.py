"""Semi-complete-data EM: only the immigrant indicators are missing data.

The E-step needs just the immigrant probabilities (O(n) for Poisson-type
immigration); the offspring parameters are estimated by a joint numerical
M-step with the branching ratio profiled in closed form; an inhomogeneous
immigration intensity is estimated by a mass-conserving reflected kernel
smoother of the immigrant probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .baseline import standard_loglik
from .errors import ConfigError, NumericalError
from .events import EventSeries
from .em_complete import m_step_immigration
from .intensity import exp_decay_sums, offspring_sums, offspring_tail_cdf_sum
from .models import (
    ExponentialKernel,
    HomogeneousPoisson,
    InhomogeneousEstimate,
    ModelSpec,
    OffspringModel,
    OmoriKernel,
    WeibullRenewal,
    is_renewal,
)
from .optim import maximize_logspace, maximize_scalar_logspace
from .reports import FitReport
from .weights import BranchingWeights, branching_estep, immigrant_probs_fast

MODES = ("renewal", "homogeneous", "inhomogeneous")


@dataclass(frozen=True)
class SemiEmOptions:
    """Options for the semi-complete EM.

    ``bandwidth`` fixes the immigration smoother bandwidth; None applies a
    Silverman-style rule to the weighted immigrant locations each iteration.
    """

    max_iterations: int = 200
    convergence_tol: float = 1e-6
    bandwidth: float | None = None
    optimizer_restarts: int = 3
    omega_cutoff: float = 1e-12
    censor_final_interval: bool = False
    seed: int | None = None
    loglik_samples: int = 200
    compute_loglik: bool = True
    grid_size: int | None = None

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not (self.convergence_tol > 0):
            raise ConfigError("convergence_tol must be positive")
        if self.bandwidth is not None and not (self.bandwidth > 0):
            raise ConfigError("bandwidth must be positive when fixed")


def semi_e_step(events: EventSeries, model: ModelSpec, opts: SemiEmOptions | None = None) -> BranchingWeights:
    """Immigrant-specific weights only; parent weights are never materialized."""
    opts = opts or SemiEmOptions()
    return branching_estep(
        events,
        model,
        omega_cutoff=opts.omega_cutoff,
        band_width=None,
        want_parent_pairs=False,
    )


def _joint_offspring_value(events: EventSeries, wgt: np.ndarray, eta: float, kernel) -> float:
    """Offspring part of the semi-complete surrogate at the given parameters."""
    mask = wgt > 0
    if not mask.any():
        return 0.0
    if eta <= 0:
        return -np.inf
    sums = offspring_sums(events.times, kernel)[mask]
    if np.any(sums <= 0):
        return -np.inf
    tail = eta * offspring_tail_cdf_sum(events, kernel)
    return float(wgt[mask] @ (math.log(eta) + np.log(sums))) - tail


def m_step_offspring_joint(
    events: EventSeries,
    immigrant_probs,
    family: str = "exponential",
    init: OffspringModel | None = None,
    *,
    restarts: int = 3,
    tau_bracket: tuple[float, float] | None = None,
) -> tuple[float, object]:
    """Jointly maximize the offspring surrogate over (eta, kernel parameters).

    For fixed kernel parameters the optimal branching ratio has the closed form
    eta = sum_i (1 - pi_i) / sum_i H(r - t_i), used as the inner profile step;
    the exponential family evaluates its lag sums through the O(n) recursion.
    """
    pi = immigrant_probs.pi if isinstance(immigrant_probs, BranchingWeights) else np.asarray(immigrant_probs)
    wgt = np.clip(1.0 - pi, 0.0, 1.0)
    total = float(wgt.sum())
    if init is None:
        init = OffspringModel(0.5, ExponentialKernel(max(events.r / max(events.n, 1), 1e-12)))
    if total <= 0:
        return 0.0, init.kernel
    times, r = events.times, events.r
    mask = wgt > 0

    if family == "exponential":

        def profiled(tau: float) -> float:
            sums = exp_decay_sums(times, tau) / tau
            s = sums[mask]
            if np.any(s <= 0):
                return -np.inf
            tail = float(np.sum(-np.expm1(-(r - times) / tau)))
            if tail <= 0:
                return -np.inf
            eta_hat = total / tail
            return float(wgt[mask] @ np.log(s)) + total * math.log(eta_hat) - total

        lo, hi = tau_bracket if tau_bracket is not None else (1e-6 * r, 10.0 * r)
        tau, _ = maximize_scalar_logspace(profiled, lo, hi, xatol_log=1e-8)
        kernel = ExponentialKernel(tau)
    elif family == "omori":

        def profiled_vec(theta) -> float:
            kern = OmoriKernel(theta[0], theta[1])
            sums = offspring_sums(times, kern)[mask]
            if np.any(sums <= 0):
                return -np.inf
            tail = offspring_tail_cdf_sum(events, kern)
            if tail <= 0:
                return -np.inf
            eta_hat = total / tail
            return float(wgt[mask] @ np.log(sums)) + total * math.log(eta_hat) - total

        x0 = (
            np.array([init.kernel.c, init.kernel.alpha])
            if isinstance(init.kernel, OmoriKernel)
            else np.array([max(float(np.mean(np.diff(times))) if events.n > 1 else r, 1e-9), 1.0])
        )
        res = maximize_logspace(profiled_vec, x0, [(1e-6 * r, 10.0 * r), (0.05, 20.0)], restarts=restarts)
        kernel = OmoriKernel(res.x[0], res.x[1])
    else:
        raise ConfigError(f"semi-complete offspring M-step supports exponential or omori, got {family!r}")

    tail = offspring_tail_cdf_sum(events, kernel)
    eta = total / tail
    # Monotone guard: keep the previous offspring model if the update is worse.
    if _joint_offspring_value(events, wgt, init.eta, init.kernel) > _joint_offspring_value(events, wgt, eta, kernel):
        return init.eta, init.kernel
    return eta, kernel


# ---------------------------------------------------------------------------
# Inhomogeneous immigration smoother.
# ---------------------------------------------------------------------------


def silverman_bandwidth(times: np.ndarray, weights: np.ndarray, r: float) -> float:
    """Rule-of-thumb bandwidth from the weighted immigrant locations."""
    total = float(weights.sum())
    if total <= 0:
        return r / 20.0
    mean = float(weights @ times) / total
    var = float(weights @ (times - mean) ** 2) / total
    ess = total**2 / float(weights @ weights) if float(weights @ weights) > 0 else 1.0
    order = np.argsort(times)
    cw = np.cumsum(weights[order]) / total
    q25, q75 = np.interp([0.25, 0.75], cw, times[order])
    spread = min(math.sqrt(max(var, 0.0)), max(q75 - q25, 0.0) / 1.34) if q75 > q25 else math.sqrt(max(var, 0.0))
    if spread <= 0 or ess < 2:
        return r / 20.0
    b = 0.9 * spread * ess ** (-0.2)
    return float(min(max(b, 1e-6 * r), r))


def m_step_mu_kernel(
    events: EventSeries,
    immigrant_probs,
    bandwidth: float | None = None,
    r: float | None = None,
) -> InhomogeneousEstimate:
    """Spread mass pi_i around each event; reflection keeps all of it inside (0, r]."""
    pi = immigrant_probs.pi if isinstance(immigrant_probs, BranchingWeights) else np.asarray(immigrant_probs)
    r = events.r if r is None else float(r)
    b = bandwidth if bandwidth is not None else silverman_bandwidth(events.times, pi, r)
    return InhomogeneousEstimate(events.times, pi, b, r)


def _auto_grid(b: float, r: float, requested: int | None) -> int | None:
    """Grid size for the internal FFT evaluation; None falls back to exact sums."""
    if requested is not None:
        return int(requested)
    needed = 24.0 * r / b  # grid step of at most b/12
    if needed > 2**17:
        return None
    g = 2048
    while g < needed:
        g *= 2
    return g


def _kde_at_events(
    times: np.ndarray, weights: np.ndarray, b: float, r: float, grid_size: int | None
) -> np.ndarray:
    """Reflected Gaussian KDE evaluated at the event times.

    Reflection at 0 and r equals a circular convolution of period 2r with the
    atoms mirrored about the origin, done on a grid by FFT; falls back to exact
    atom sums when the bandwidth would need an enormous grid.
    """
    g = _auto_grid(b, r, grid_size)
    if g is None:
        return np.asarray(InhomogeneousEstimate(times, weights, b, r).intensity(times))
    period = 2.0 * r
    delta = period / g
    mass = np.zeros(g)
    for p, w in ((times, weights), (-times, weights)):
        pos = (p + r) / delta
        lo = np.floor(pos).astype(np.int64)
        frac = pos - lo
        np.add.at(mass, lo % g, w * (1.0 - frac))
        np.add.at(mass, (lo + 1) % g, w * frac)
    # Kernel sampled at circular offsets 0, delta, 2*delta, ...; offsets past
    # half a period wrap to their negative image.
    offsets = delta * np.arange(g)
    n_img = int(12.0 * b / period) + 2
    kern = np.zeros(g)
    for m in range(-n_img, n_img + 1):
        u = (offsets + m * period) / b
        kern += np.exp(-0.5 * u * u)
    kern /= b * math.sqrt(2.0 * math.pi)
    dens = np.fft.irfft(np.fft.rfft(mass) * np.fft.rfft(kern), n=g)
    dens = np.maximum(dens, 0.0)
    grid_x = np.append(-r + offsets, r)
    grid_y = np.append(dens, dens[0])
    return np.interp(times, grid_x, grid_y)


# ---------------------------------------------------------------------------
# Fit driver.
# ---------------------------------------------------------------------------


def _family_of(kernel) -> str:
    if isinstance(kernel, ExponentialKernel):
        return "exponential"
    if isinstance(kernel, OmoriKernel):
        return "omori"
    raise ConfigError("semi-complete EM supports exponential or omori offspring kernels")


def _approx_loglik(events: EventSeries, mu_at_events, mu_integral, offspring) -> float:
    phi = offspring.eta * offspring_sums(events.times, offspring.kernel)
    lam = np.maximum(np.asarray(mu_at_events) + phi, 1e-300)
    tail = offspring.eta * offspring_tail_cdf_sum(events, offspring.kernel)
    return float(np.sum(np.log(lam)) - mu_integral - tail)


def fit_semicomplete_em(
    events: EventSeries,
    init: ModelSpec,
    opts: SemiEmOptions | None = None,
    immigration_mode: str = "renewal",
) -> FitReport:
    """Alternate the immigrant-probability E-step with the joint offspring
    M-step and the immigration update selected by ``immigration_mode``."""
    opts = opts or SemiEmOptions()
    if immigration_mode not in MODES:
        raise ConfigError(f"immigration_mode must be one of {MODES}, got {immigration_mode!r}")
    family = _family_of(init.offspring.kernel)
    times, r, n = events.times, events.r, events.n

    if immigration_mode == "renewal":
        if not isinstance(init.immigration, WeibullRenewal):
            raise ConfigError("renewal mode needs a WeibullRenewal initial immigration model")
    else:
        if isinstance(init.immigration, WeibullRenewal) and init.immigration.kappa == 1.0:
            init = ModelSpec(HomogeneousPoisson(1.0 / init.immigration.beta), init.offspring)
        if not isinstance(init.immigration, (HomogeneousPoisson, InhomogeneousEstimate)):
            raise ConfigError(f"{immigration_mode} mode needs a Poisson-type initial immigration model")

    model = init
    # Inhomogeneous state: atom weights and bandwidth; the estimate object is
    # only materialized at the end (the loop works on the FFT grid).
    inhom_pi: np.ndarray | None = None
    inhom_b: float | None = None
    if immigration_mode == "inhomogeneous" and isinstance(init.immigration, InhomogeneousEstimate):
        if not np.array_equal(init.immigration.atoms, times):
            raise ConfigError("resuming an inhomogeneous fit requires atoms at the event times")
        inhom_pi = init.immigration.weights
        inhom_b = init.immigration.bandwidth
    trace: list[dict] = []
    history: list[np.ndarray] = [np.array(list(model.scalar_params().values()))]
    converged = False

    for m in range(opts.max_iterations):
        # E-step: immigrant probabilities under the current model.
        if immigration_mode == "renewal":
            weights = semi_e_step(events, model, opts)
            pi = weights.pi
        elif immigration_mode == "homogeneous" or (inhom_pi is None and isinstance(model.immigration, HomogeneousPoisson)):
            pi = immigrant_probs_fast(events, model)
        else:
            mu_ev = _kde_at_events(times, inhom_pi, inhom_b, r, opts.grid_size)
            phi = model.offspring.eta * offspring_sums(times, model.offspring.kernel)
            denom = mu_ev + phi
            bad = np.flatnonzero(~(np.isfinite(denom) & (denom > 0)))
            if bad.size:
                raise NumericalError("non-positive conditional intensity", event_index=int(bad[0]))
            pi = mu_ev / denom
            pi[0] = 1.0

        # M-step: offspring jointly, immigration by mode.
        if family == "exponential" and isinstance(model.offspring.kernel, ExponentialKernel):
            tau_cur = model.offspring.kernel.tau0
            bracket = (max(tau_cur / 8.0, 1e-6 * r), min(tau_cur * 8.0, 10.0 * r))
        else:
            bracket = None
        eta, kernel = m_step_offspring_joint(
            events, pi, family, init=model.offspring, restarts=opts.optimizer_restarts, tau_bracket=bracket
        )
        offspring = OffspringModel(eta, kernel)

        row: dict = {}
        if immigration_mode == "renewal":
            immigration = m_step_immigration(
                weights, events, censor_final_interval=opts.censor_final_interval
            )
            model = ModelSpec(immigration, offspring)
        elif immigration_mode == "homogeneous":
            mu_hat = float(pi.sum()) / r
            model = ModelSpec(HomogeneousPoisson(mu_hat), offspring)
            row["exact_loglik"] = standard_loglik(mu_hat, offspring, events)
        else:
            inhom_pi = pi
            inhom_b = opts.bandwidth if opts.bandwidth is not None else silverman_bandwidth(times, pi, r)
            model = ModelSpec(
                InhomogeneousEstimate(times, inhom_pi, inhom_b, r), offspring
            )
            mu_ev_new = _kde_at_events(times, inhom_pi, inhom_b, r, opts.grid_size)
            row["approx_loglik"] = _approx_loglik(events, mu_ev_new, float(pi.sum()), offspring)

        params = model.scalar_params()
        trace.append(dict(params, **row))
        history.append(np.array(list(params.values())))
        if len(history) >= 4:
            deltas = [np.abs(history[-k] - history[-k - 1]).sum() for k in (1, 2, 3)]
            if sum(deltas) < opts.convergence_tol:
                converged = True
                break

    final_weights = branching_estep(
        events, model, omega_cutoff=opts.omega_cutoff, want_parent_pairs=False
    )
    loglik = se = None
    label = "skipped"
    if opts.compute_loglik:
        if immigration_mode == "homogeneous":
            loglik, se, label = (
                standard_loglik(model.immigration.rate, model.offspring, events),
                0.0,
                "exact",
            )
        elif immigration_mode == "inhomogeneous":
            mu_exact = np.asarray(model.immigration.intensity(times))
            phi = model.offspring.eta * offspring_sums(times, model.offspring.kernel)
            lam = mu_exact + phi
            bad = np.flatnonzero(~(np.isfinite(lam) & (lam > 0)))
            if bad.size:
                raise NumericalError("non-positive intensity in final likelihood", event_index=int(bad[0]))
            tail = model.offspring.eta * offspring_tail_cdf_sum(events, model.offspring.kernel)
            loglik = float(np.sum(np.log(lam)) - model.immigration.cumulative(r) - tail)
            se, label = 0.0, "exact"
        else:
            from .gof import GofOptions, mc_loglik

            loglik, se = mc_loglik(events=events, model=model, opts=GofOptions(opts.loglik_samples, seed=opts.seed))
            label = "monte_carlo"
    return FitReport(
        algorithm=f"em_semicomplete_{immigration_mode}",
        model=model,
        iterations=len(trace),
        trace=trace,
        converged=converged,
        loglik=loglik,
        loglik_label=label,
        loglik_se=se,
        k=model.free_parameter_count(),
        n=n,
        r=r,
        data_fingerprint=events.fingerprint(),
        weights=final_weights,
        seed=opts.seed,
    )
