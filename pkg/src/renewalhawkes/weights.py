"""Branching-structure probability weights.

``branching_estep`` computes, for the current model, the immigrant
probabilities pi_i, the most-recent-immigrant weights omega_{i,j} (advanced row
by row through the Hadamard-product recursion), the conditional immigrant
probabilities pi_{i|j}, and optionally the parent weights pi_{i,j}.  Both EM
algorithms and the goodness-of-fit machinery are built on these quantities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .events import EventSeries
from .intensity import offspring_intensity_at_events
from .models import ModelSpec, is_renewal


@dataclass(frozen=True)
class ImmigrantVector:
    """Binary immigrant indicators; the first event is always an immigrant."""

    z: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z).astype(np.int8).copy()
        if z.ndim != 1 or z.size == 0:
            raise ValueError("immigrant vector must be a non-empty 1-D array")
        if not np.all((z == 0) | (z == 1)):
            raise ValueError("immigrant vector entries must be 0 or 1")
        if z[0] != 1:
            raise ValueError("invalid immigrant vector: z[0] must be 1")
        z.flags.writeable = False
        object.__setattr__(self, "z", z)

    @property
    def immigrant_indices(self) -> np.ndarray:
        return np.flatnonzero(self.z == 1)

    def key(self) -> int:
        """Index of this vector in the binary enumeration of valid vectors."""
        bits = self.z[1:]
        return int(sum(int(b) << (bits.size - 1 - k) for k, b in enumerate(bits)))


@dataclass(frozen=True)
class PairWeights:
    """Flat (child, parent, lag, weight) rows over event-index pairs j < i."""

    child: np.ndarray
    parent: np.ndarray
    lag: np.ndarray
    weight: np.ndarray

    @property
    def total(self) -> float:
        return float(self.weight.sum()) if self.weight.size else 0.0


def _empty_pairs() -> PairWeights:
    z = np.empty(0, dtype=np.int64)
    return PairWeights(z, z.copy(), np.empty(0), np.empty(0))


@dataclass(frozen=True)
class BranchingWeights:
    """E-step output; the probabilistic expected branching structure."""

    pi: np.ndarray
    denom: np.ndarray  # mu*_i + Phi_i per event (inf for the first event)
    omega_starts: np.ndarray  # per event i, first stored index of the omega row
    omega_rows: list
    parent_pairs: PairWeights | None
    immigrant_pairs: PairWeights
    tail_start: int
    tail_weights: np.ndarray  # omega row advanced past the last event (for censoring)
    band_width: int | None
    omega_cutoff: float

    @property
    def n(self) -> int:
        return int(self.pi.size)

    def omega_row_dense(self, i: int) -> np.ndarray:
        """omega_{i+1, .} over parents 0..i-1 (0-based event index i)."""
        row = np.zeros(i)
        start = int(self.omega_starts[i])
        vals = self.omega_rows[i]
        row[start : start + len(vals)] = vals
        return row

    def expected_offspring(self) -> float:
        return float(self.n - self.pi.sum())

    def pi_row_sums(self) -> np.ndarray:
        """pi_i + sum_j pi_{i,j} per event (requires materialized parent weights)."""
        if self.parent_pairs is None:
            raise ValueError("parent weights were not materialized")
        sums = self.pi.copy()
        np.add.at(sums, self.parent_pairs.child, self.parent_pairs.weight)
        return sums


def validate_weights(w: BranchingWeights, atol: float = 1e-9) -> None:
    """Check the structural invariants; raises ValueError on violation."""
    if w.n == 0:
        raise ValueError("empty weights")
    if abs(w.pi[0] - 1.0) > atol:
        raise ValueError("pi_1 must be 1")
    if not np.all(np.isfinite(w.pi)) or np.any(w.pi < -atol) or np.any(w.pi > 1 + atol):
        raise ValueError("pi out of [0, 1]")
    if w.n >= 2:
        row = w.omega_rows[1]
        if len(row) != 1 or abs(row[0] - 1.0) > atol:
            raise ValueError("omega_{2,1} must be 1")
    for i in range(1, w.n):
        vals = np.asarray(w.omega_rows[i])
        if vals.size == 0 or np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError(f"bad omega row at event {i}")
        s = vals.sum()
        if not s > 0:
            raise ValueError(f"omega row {i} has no mass")
        if abs(vals.sum() / s - 1.0) > atol:  # renormalized row sums to 1
            raise ValueError(f"omega row {i} fails renormalized-sum check")
    if w.parent_pairs is not None and w.band_width is None and w.omega_cutoff == 0.0:
        sums = w.pi_row_sums()
        if np.max(np.abs(sums - 1.0)) > atol:
            raise ValueError("untruncated pi rows must sum to 1")


def _hazard_closure(imm):
    """Vectorized clamped hazard over lag arrays, dispatch hoisted out of the loop."""
    from .models import HomogeneousPoisson, WeibullRenewal

    if isinstance(imm, WeibullRenewal):
        scale = imm.kappa / imm.beta
        expo = imm.kappa - 1.0
        beta = imm.beta
        floor = 1e-12 * beta
        if expo == 0.0:
            return lambda lags: np.full(lags.size, scale)
        return lambda lags: scale * (np.maximum(lags, floor) / beta) ** expo
    if isinstance(imm, HomogeneousPoisson):
        rate = imm.rate
        return lambda lags: np.full(lags.size, rate)
    raise NotImplementedError(type(imm).__name__)


def branching_estep(
    events: EventSeries,
    model: ModelSpec,
    *,
    omega_cutoff: float = 1e-12,
    band_width: int | None = None,
    want_parent_pairs: bool = True,
    pair_index: "PairIndex | None" = None,
) -> BranchingWeights:
    """Compute branching weights for the current model parameters.

    The omega rows advance by the Hadamard recursion
    ``omega_i = (omega_{i-1} o (1 - pi_{i-1|.}), pi_{i-1})``; leading entries
    below ``omega_cutoff`` are dropped and the surviving row is rescaled to
    keep its pre-drop mass (entries only shrink once below the cutoff, so a
    dropped prefix never matters again).  ``band_width`` truncates parent
    weights to the most recent ``band_width`` predecessors; immigrant chains
    are never banded.  ``pair_index`` lets repeated calls on the same events
    reuse the lower-triangle index arrays.
    """
    times = events.times
    n = events.n
    if n == 0:
        raise ValueError("events must be nonempty")
    offspring = model.offspring
    phi = offspring_intensity_at_events(events, offspring)
    imm = model.immigration
    renewal = is_renewal(imm)
    if renewal:
        hazard_vec = _hazard_closure(imm)
        mu_abs = None
    else:
        mu_abs = np.asarray(imm.intensity(times), dtype=float).reshape(-1)

    pi = np.empty(n)
    pi[0] = 1.0
    denom = np.empty(n)
    denom[0] = np.inf
    omega_starts = np.zeros(n, dtype=np.int64)
    omega_rows: list[np.ndarray] = [np.empty(0)]
    imm_lag: list[np.ndarray] = []
    imm_weight: list[np.ndarray] = []

    row_lo = 0
    row_w = np.array([1.0])
    for i in range(1, n):
        omega_starts[i] = row_lo
        omega_rows.append(row_w)
        lag_vec = times[i] - times[row_lo:i]
        if renewal:
            mu_vec = hazard_vec(lag_vec)
        else:
            mu_vec = np.full(i - row_lo, mu_abs[i])
        p = phi[i]
        pi_cond = mu_vec / (mu_vec + p)
        mu_star = float(row_w @ mu_vec)
        d = mu_star + p
        if not (np.isfinite(d) and d > 0):
            raise NumericalError("non-finite or zero conditional intensity", event_index=i)
        denom[i] = d
        pi_i = mu_star / d
        pi[i] = pi_i

        w_pairs = row_w * pi_cond
        imm_lag.append(lag_vec)
        imm_weight.append(w_pairs)

        # Advance: omega_{i+1} = (omega_i * (1 - pi_cond), pi_i).
        new_w = np.empty(row_w.size + 1)
        np.subtract(row_w, w_pairs, out=new_w[:-1])
        new_w[-1] = pi_i
        if omega_cutoff > 0.0:
            above = new_w >= omega_cutoff
            keep_from = int(np.argmax(above)) if above.any() else new_w.size - 1
            if keep_from > 0:
                total = new_w.sum()
                new_w = new_w[keep_from:].copy()
                kept = new_w.sum()
                if kept > 0:
                    new_w *= total / kept
                row_lo += keep_from
        row_w = new_w

    if imm_weight:
        lengths = np.arange(n) - omega_starts
        lengths[0] = 0
        child = np.repeat(np.arange(n, dtype=np.int64), lengths)
        offsets = np.cumsum(lengths) - lengths
        within = np.arange(int(lengths.sum()), dtype=np.int64) - np.repeat(offsets, lengths)
        parent = np.repeat(omega_starts, lengths) + within
        immigrant_pairs = PairWeights(
            child, parent, np.concatenate(imm_lag), np.concatenate(imm_weight)
        )
    else:
        immigrant_pairs = _empty_pairs()

    parent_pairs = None
    if want_parent_pairs:
        parent_pairs = _parent_pairs(times, offspring, denom, band_width, pair_index)

    return BranchingWeights(
        pi=pi,
        denom=denom,
        omega_starts=omega_starts,
        omega_rows=omega_rows,
        parent_pairs=parent_pairs,
        immigrant_pairs=immigrant_pairs,
        tail_start=row_lo,
        tail_weights=row_w,
        band_width=band_width,
        omega_cutoff=omega_cutoff,
    )


@dataclass(frozen=True)
class PairIndex:
    """Reusable banded lower-triangle index: child/parent event indices and lags."""

    child: np.ndarray
    parent: np.ndarray
    lags: np.ndarray
    band_width: int | None


def build_pair_index(times: np.ndarray, band_width: int | None) -> PairIndex:
    n = times.size
    nf = n if band_width is None else int(band_width)
    counts = np.minimum(np.arange(n), nf)
    total = int(counts.sum())
    child = np.repeat(np.arange(n, dtype=np.int64), counts)
    offsets = np.cumsum(counts) - counts
    within = np.arange(total, dtype=np.int64) - np.repeat(offsets, counts)
    parent = np.repeat(np.arange(n, dtype=np.int64) - counts, counts) + within
    return PairIndex(child, parent, times[child] - times[parent], band_width)


def _parent_pairs(
    times: np.ndarray,
    offspring,
    denom: np.ndarray,
    band_width: int | None,
    pair_index: PairIndex | None = None,
) -> PairWeights:
    """pi_{i,j} = eta h(t_i - t_j) / (mu*_i + Phi_i) over the banded lower triangle."""
    n = times.size
    if offspring.eta == 0.0 or n < 2:
        return _empty_pairs()
    if pair_index is None or pair_index.band_width != band_width:
        pair_index = build_pair_index(times, band_width)
    h = np.asarray(offspring.kernel.density(pair_index.lags))
    w = offspring.eta * h / denom[pair_index.child]
    keep = w > 0.0
    return PairWeights(
        pair_index.child[keep], pair_index.parent[keep], pair_index.lags[keep], w[keep]
    )


def immigrant_probs_fast(events: EventSeries, model: ModelSpec) -> np.ndarray:
    """pi_i for Poisson-type immigration, without omega bookkeeping (O(n))."""
    from .models import HomogeneousPoisson

    imm = model.immigration
    if isinstance(imm, HomogeneousPoisson):
        mu = np.full(events.n, imm.rate)
    elif not is_renewal(imm):
        mu = np.asarray(imm.intensity(events.times), dtype=float).reshape(-1)
    else:
        raise ValueError("fast path applies to Poisson-type immigration only")
    phi = offspring_intensity_at_events(events, model.offspring)
    denom = mu + phi
    bad = np.flatnonzero(~(np.isfinite(denom) & (denom > 0)))
    if bad.size:
        raise NumericalError("non-finite or zero conditional intensity", event_index=int(bad[0]))
    pi = mu / denom
    pi[0] = 1.0
    return pi
