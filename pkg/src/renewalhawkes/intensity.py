"""Conditional intensities, the O(n) exponential recursion, and compensators."""

from __future__ import annotations

import numpy as np

from .errors import NumericalError, UnsupportedKernelError
from .events import EventSeries
from .models import (
    ExponentialKernel,
    ModelSpec,
    OffspringModel,
    is_renewal,
)

_BLOCK = 48


def exp_decay_sums(times: np.ndarray, tau0: float) -> np.ndarray:
    """A_i = sum_{j<i} exp(-(t_i - t_j)/tau0), computed in O(n) blocked form.

    Equivalent to the sequential recursion A_i = exp(-(t_i - t_{i-1})/tau0) * (1 + A_{i-1})
    with A_1 = 0, but vectorized block by block.
    """
    times = np.asarray(times, dtype=float)
    n = times.size
    out = np.empty(n)
    if n == 0:
        return out
    carry = 0.0  # 1 + A at the last element of the previous block
    t_prev = times[0]
    for s in range(0, n, _BLOCK):
        tb = times[s : s + _BLOCK]
        decayed = np.exp(-(tb - t_prev) / tau0) * carry
        lags = tb[:, None] - tb[None, :]
        within = np.tril(np.exp(-np.maximum(lags, 0.0) / tau0), k=-1).sum(axis=1)
        block = decayed + within
        out[s : s + _BLOCK] = block
        carry = 1.0 + block[-1]
        t_prev = tb[-1]
    return out


def exp_recursion_state(events: EventSeries, kernel) -> np.ndarray:
    """Per-event partial sums A_i with Phi(t_i | H) = (eta/tau0) * A_i; A_1 = 0.

    Accepts an :class:`ExponentialKernel` (or its tau0 directly); other kernel
    families have no such recursion.
    """
    if isinstance(kernel, (int, float)):
        tau0 = float(kernel)
    else:
        tau0 = require_exponential(kernel).tau0
    if not (tau0 > 0):
        raise ValueError(f"tau0 must be positive, got {tau0}")
    return exp_decay_sums(events.times, tau0)


def offspring_sums(times: np.ndarray, kernel, chunk: int = 256) -> np.ndarray:
    """S_i = sum_{j<i} h(t_i - t_j) for every event."""
    times = np.asarray(times, dtype=float)
    if isinstance(kernel, ExponentialKernel):
        return exp_decay_sums(times, kernel.tau0) / kernel.tau0
    n = times.size
    out = np.zeros(n)
    for s in range(1, n, chunk):
        e = min(s + chunk, n)
        lags = times[s:e, None] - times[None, :e]
        mask = lags > 0
        lags = np.where(mask, lags, 0.0)
        out[s:e] = np.sum(np.asarray(kernel.density(lags)) * mask, axis=1)
    return out


def offspring_intensity_at_events(events: EventSeries, offspring: OffspringModel) -> np.ndarray:
    """Phi(t_i | H) at every observed event (left limits; the event itself excluded)."""
    phi = offspring.eta * offspring_sums(events.times, offspring.kernel)
    bad = np.flatnonzero(~np.isfinite(phi))
    if bad.size:
        raise NumericalError("non-finite offspring intensity", event_index=int(bad[0]))
    return phi


def offspring_intensity(offspring: OffspringModel, events: EventSeries, t: float) -> float:
    """Phi(t | H) = sum_{i: t_i < t} eta h(t - t_i); events exactly at t are excluded."""
    if not (0.0 < t <= events.r):
        raise ValueError(f"t must lie in (0, r], got {t}")
    prior = events.times[events.times < t]
    if prior.size == 0:
        return 0.0
    return float(offspring.eta * np.sum(offspring.kernel.density(t - prior)))


def offspring_tail_cdf_sum(events: EventSeries, kernel) -> float:
    """sum_i H(r - t_i), the censoring denominator of the branching-ratio estimator."""
    return float(np.sum(kernel.cdf(events.r - events.times)))


# ---------------------------------------------------------------------------
# Immigration given an immigrant vector.
# ---------------------------------------------------------------------------


def _validate_z(events: EventSeries, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z)
    if z.shape != (events.n,):
        raise ValueError(f"immigrant vector length {z.shape} does not match n={events.n}")
    if events.n and z[0] != 1:
        raise ValueError("invalid immigrant vector: first element must be 1")
    if not np.all((z == 0) | (z == 1)):
        raise ValueError("immigrant vector entries must be 0 or 1")
    return z.astype(np.int8)


def _last_reset_before(times: np.ndarray, resets: np.ndarray) -> np.ndarray:
    """Time of the most recent reset strictly before each event (0 if none)."""
    pos = np.searchsorted(resets, times, side="left") - 1
    return np.where(pos >= 0, resets[np.maximum(pos, 0)], 0.0)


def immigration_intensity_at_events(immigration, events: EventSeries, z) -> np.ndarray:
    """mu^(z)(t_i): hazard at each event given the last immigrant strictly before it.

    For the first event (and none before it) the hazard runs from the origin
    t_0 = 0.  Absolute-time Poisson intensities ignore z.
    """
    times = events.times
    if not is_renewal(immigration):
        return np.asarray(immigration.intensity(times), dtype=float).reshape(-1)
    z = _validate_z(events, z)
    last = _last_reset_before(times, times[z == 1])
    return np.asarray(immigration.hazard_clamped(times - last), dtype=float).reshape(-1)


def immigration_compensator_at_events(immigration, events: EventSeries, z) -> tuple[np.ndarray, float]:
    """(integral of mu^(z) over (0, t_i] for every i, integral over (0, r])."""
    times = events.times
    if not is_renewal(immigration):
        vals = np.asarray(immigration.cumulative(times), dtype=float).reshape(-1)
        return vals, float(immigration.cumulative(events.r))
    z = _validate_z(events, z)
    resets = times[z == 1]
    # Cumulative hazard accrued over completed inter-immigrant segments.
    seg = immigration.cumulative_hazard(np.diff(np.concatenate([[0.0], resets])))
    base = np.concatenate([[0.0], np.cumsum(seg)])
    pos = np.searchsorted(resets, times, side="left")
    last = np.where(pos > 0, resets[np.maximum(pos - 1, 0)], 0.0)
    out = base[pos] + np.asarray(immigration.cumulative_hazard(times - last), dtype=float)
    total = float(base[-1] + immigration.cumulative_hazard(events.r - (resets[-1] if resets.size else 0.0)))
    return out, total


def compensator(model: ModelSpec, events: EventSeries, z, t: float) -> float:
    """Expected count Lambda(t | z): immigration piece via closed-form hazard
    increments between consecutive immigrants, plus eta * sum_i H(t - t_i)."""
    if not (0.0 < t <= events.r):
        raise ValueError(f"t must lie in (0, r], got {t}")
    imm = model.immigration
    if is_renewal(imm):
        z = _validate_z(events, z)
        resets = np.concatenate([[0.0], events.times[z == 1]])
        resets = resets[resets < t]
        ends = np.append(resets[1:], t)
        imm_part = float(np.sum(imm.cumulative_hazard(ends - resets)))
    else:
        imm_part = float(imm.cumulative(t))
    prior = events.times[events.times < t]
    off_part = float(model.offspring.eta * np.sum(model.offspring.kernel.cdf(t - prior))) if prior.size else 0.0
    return imm_part + off_part


def compensator_at_events(model: ModelSpec, events: EventSeries, z) -> np.ndarray:
    """Lambda(t_i | z) for every event, in one pass."""
    times = events.times
    imm_vals, _ = immigration_compensator_at_events(model.immigration, events, z)
    kernel = model.offspring.kernel
    if isinstance(kernel, ExponentialKernel):
        idx = np.arange(events.n, dtype=float)
        off = model.offspring.eta * (idx - exp_decay_sums(times, kernel.tau0))
    else:
        off = np.zeros(events.n)
        chunk = 256
        for s in range(1, events.n, chunk):
            e = min(s + chunk, events.n)
            lags = times[s:e, None] - times[None, :e]
            mask = lags > 0
            off[s:e] = model.offspring.eta * np.sum(np.asarray(kernel.cdf(np.where(mask, lags, 0.0))) * mask, axis=1)
    return imm_vals + off


def require_exponential(kernel) -> ExponentialKernel:
    if not isinstance(kernel, ExponentialKernel):
        raise UnsupportedKernelError(
            f"operation supports only the exponential kernel, got {type(kernel).__name__}"
        )
    return kernel
