"""Exact simulation via the branching construction, and immigrant-vector thinning."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ExplosionError
from .events import EventSeries
from .intensity import offspring_intensity_at_events
from .models import (
    DeterministicIntensity,
    HomogeneousPoisson,
    ModelSpec,
    WeibullRenewal,
    is_renewal,
)
from .weights import ImmigrantVector

DEFAULT_POINT_CAP = 1_000_000


@dataclass(frozen=True)
class SimulationResult:
    """Simulated events with their true branching structure.

    ``parent[i]`` is the 1-based index (in time order) of event i's parent, or
    0 for immigrants; ``generation[i]`` is 0 for immigrants.  A parent index of
    -1 marks offspring whose parent fell outside the observation window (only
    possible with a burn-in).
    """

    events: EventSeries
    parent: np.ndarray
    generation: np.ndarray

    def __post_init__(self):
        parent = np.asarray(self.parent, dtype=np.int64).copy()
        generation = np.asarray(self.generation, dtype=np.int64).copy()
        if parent.shape != (self.events.n,) or generation.shape != (self.events.n,):
            raise ValueError("parent/generation must match the number of events")
        parent.flags.writeable = False
        generation.flags.writeable = False
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "generation", generation)

    def immigrant_vector(self) -> ImmigrantVector:
        return ImmigrantVector((self.parent == 0).astype(np.int8))


def simulate_renewal_immigrants(immigration, r: float, rng: np.random.Generator) -> np.ndarray:
    """Immigrant times on (0, r].

    Renewal models accumulate i.i.d. waiting times from the origin (ordinary
    renewal process); a deterministic intensity is sampled by thinning against
    its majorant bound.
    """
    if r <= 0:
        raise ValueError(f"r must be positive, got {r}")
    if is_renewal(immigration):
        mean_w = immigration.mean_waiting()
        expected = r / mean_w
        out: list[np.ndarray] = []
        total = 0.0
        while True:
            batch = max(64, int(expected - total / mean_w + 6.0 * np.sqrt(expected) + 1))
            draws = immigration.sample_waiting(rng, batch)
            cum = total + np.cumsum(draws)
            out.append(cum)
            total = cum[-1]
            if total > r:
                break
        times = np.concatenate(out)
        return times[times <= r]
    if isinstance(immigration, DeterministicIntensity):
        count = rng.poisson(immigration.bound * r)
        candidates = np.sort(rng.uniform(0.0, r, count))
        accept = rng.random(count) * immigration.bound < immigration.intensity(candidates)
        return candidates[accept]
    raise ConfigError(
        f"cannot simulate immigration of type {type(immigration).__name__}: no finite majorant available"
    )


def _spawn_children(
    parent_times: np.ndarray,
    parent_ids: np.ndarray,
    offspring,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    counts = rng.poisson(offspring.eta, parent_times.size)
    total = int(counts.sum())
    if total == 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    child_t = np.repeat(parent_times, counts) + offspring.kernel.sample(rng, total)
    child_parent = np.repeat(parent_ids, counts)
    return child_t, child_parent


def _assemble(all_t, all_parent, all_gen, r: float) -> SimulationResult:
    times = np.concatenate(all_t) if all_t else np.empty(0)
    parents = np.concatenate(all_parent) if all_parent else np.empty(0, dtype=np.int64)
    gens = np.concatenate(all_gen) if all_gen else np.empty(0, dtype=np.int64)
    order = np.argsort(times, kind="stable")
    times = times[order]
    # Positions are 1-based; internal parent ids -1 denote immigrants.
    pos = np.empty(order.size, dtype=np.int64)
    pos[order] = np.arange(1, order.size + 1)
    parents = parents[order]
    parents = np.where(parents >= 0, pos[np.maximum(parents, 0)], 0)
    gens = gens[order]
    # Ties have probability zero but float collisions do happen; nudge upward.
    for k in range(1, times.size):
        if times[k] <= times[k - 1]:
            times[k] = np.nextafter(times[k - 1], np.inf)
    if times.size and times[-1] > r:
        r = float(times[-1])
    return SimulationResult(EventSeries(times, r), parents, gens)


def simulate_hawkes_renewal(
    model: ModelSpec,
    r: float,
    rng: np.random.Generator,
    *,
    max_points: int = DEFAULT_POINT_CAP,
    burn_in: float = 0.0,
) -> SimulationResult:
    """Simulate on (0, r] via the cluster construction.

    Immigrants arrive from the renewal (or deterministic) immigration process;
    every point spawns Poisson(eta) children at i.i.d. kernel lags; children
    beyond the window are generated and then discarded.  With ``burn_in`` > 0
    the process is simulated on a longer window and shifted, censoring cluster
    roots before the origin.
    """
    horizon = r + burn_in
    imm_t = simulate_renewal_immigrants(model.immigration, horizon, rng)
    all_t = [imm_t]
    all_parent = [np.full(imm_t.size, -1, dtype=np.int64)]
    all_gen = [np.zeros(imm_t.size, dtype=np.int64)]
    n_total = imm_t.size
    next_id = imm_t.size
    current_t, current_ids = imm_t, np.arange(imm_t.size, dtype=np.int64)
    gen = 0
    while current_t.size:
        gen += 1
        child_t, child_parent = _spawn_children(current_t, current_ids, model.offspring, rng)
        keep = child_t <= horizon
        child_t, child_parent = child_t[keep], child_parent[keep]
        n_total += child_t.size
        if n_total > max_points:
            raise ExplosionError(model.offspring.eta, max_points)
        all_t.append(child_t)
        all_parent.append(child_parent)
        all_gen.append(np.full(child_t.size, gen, dtype=np.int64))
        current_ids = np.arange(next_id, next_id + child_t.size, dtype=np.int64)
        next_id += child_t.size
        current_t = child_t
    result = _assemble(all_t, all_parent, all_gen, horizon)
    if burn_in == 0.0:
        return result
    keep = result.events.times > burn_in
    times = result.events.times[keep] - burn_in
    kept_pos = np.flatnonzero(keep) + 1
    remap = {int(p): k + 1 for k, p in enumerate(kept_pos)}
    parent = np.array(
        [0 if p == 0 else remap.get(int(p), -1) for p in result.parent[keep]], dtype=np.int64
    )
    return SimulationResult(EventSeries(times, r), parent, result.generation[keep])


def _simulate_cluster(root_t: float, offspring, rng, cap: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full (unbounded-time) cluster of one immigrant; local ids, root id 0."""
    times = [np.array([root_t])]
    parents = [np.array([-1], dtype=np.int64)]
    gens = [np.array([0], dtype=np.int64)]
    cur_t = times[0]
    cur_ids = np.zeros(1, dtype=np.int64)
    next_id = 1
    total = 1
    g = 0
    while cur_t.size:
        g += 1
        child_t, child_parent = _spawn_children(cur_t, cur_ids, offspring, rng)
        total += child_t.size
        if total > cap:
            raise ExplosionError(offspring.eta, cap)
        times.append(child_t)
        parents.append(child_parent)
        gens.append(np.full(child_t.size, g, dtype=np.int64))
        cur_ids = np.arange(next_id, next_id + child_t.size, dtype=np.int64)
        next_id += child_t.size
        cur_t = child_t
    return np.concatenate(times), np.concatenate(parents), np.concatenate(gens)


def simulate_to_size(
    model: ModelSpec,
    size: int,
    rng: np.random.Generator,
    *,
    max_points: int = DEFAULT_POINT_CAP,
) -> SimulationResult:
    """Simulate until exactly ``size`` events are observed; r is the time of the last one.

    Immigrants are drawn one at a time with their complete clusters; a point is
    final once its time precedes the newest immigrant, so the earliest ``size``
    points are exact.  Requires a renewal-family immigration model.
    """
    if not is_renewal(model.immigration):
        raise ConfigError("fixed-size simulation requires renewal-family immigration")
    if size < 1:
        raise ValueError("size must be >= 1")
    all_t: list[np.ndarray] = []
    all_parent: list[np.ndarray] = []
    all_gen: list[np.ndarray] = []
    u = 0.0
    next_base = 0
    total = 0
    while True:
        u += float(model.immigration.sample_waiting(rng, 1)[0])
        ct, cp, cg = _simulate_cluster(u, model.offspring, rng, max_points - total)
        total += ct.size
        all_t.append(ct)
        all_parent.append(np.where(cp >= 0, cp + next_base, -1))
        all_gen.append(cg)
        next_base += ct.size
        finalized = sum(int((a <= u).sum()) for a in all_t)
        if finalized >= size:
            break
    times = np.concatenate(all_t)
    r = float(np.sort(times)[size - 1])
    keep = times <= r
    # Re-index within the kept subset before assembling.
    old_ids = np.flatnonzero(keep)
    id_map = np.full(times.size, -1, dtype=np.int64)
    id_map[old_ids] = np.arange(old_ids.size)
    parents = np.concatenate(all_parent)[keep]
    parents = np.where(parents >= 0, id_map[np.maximum(parents, 0)], -1)
    return _assemble(
        [times[keep]],
        [parents],
        [np.concatenate(all_gen)[keep]],
        r,
    )


def _scalar_hazard(immigration):
    """Fast scalar hazard closure for the thinning scan."""
    if isinstance(immigration, WeibullRenewal):
        kappa, beta = immigration.kappa, immigration.beta
        scale = kappa / beta
        expo = kappa - 1.0
        floor = 1e-12 * beta
        return lambda w: scale * ((w if w > floor else floor) / beta) ** expo
    if isinstance(immigration, HomogeneousPoisson):
        rate = immigration.rate
        return lambda w: rate
    raise ConfigError(f"no scalar hazard for {type(immigration).__name__}")


class ImmigrantVectorSampler:
    """Draws immigrant vectors by the forward thinning scan.

    From the last accepted immigrant k, event i is accepted with probability
    pi_{i|k} = mu(t_i - t_k) / (mu(t_i - t_k) + Phi(t_i)); model-fixed
    quantities are precomputed once so repeated draws are cheap.
    """

    def __init__(self, events: EventSeries, model: ModelSpec):
        self.events = events
        self.model = model
        self.n = events.n
        phi = offspring_intensity_at_events(events, model.offspring)
        self._phi = phi.tolist()
        self._times = events.times.tolist()
        self._renewal = is_renewal(model.immigration)
        if self._renewal:
            self._hazard = _scalar_hazard(model.immigration)
            self._accept_probs = None
        else:
            mu = np.asarray(model.immigration.intensity(events.times), dtype=float).reshape(-1)
            self._accept_probs = mu / (mu + phi)

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        z = np.zeros(self.n, dtype=np.int8)
        z[0] = 1
        if self.n == 1:
            return z
        if not self._renewal:
            z[1:] = rng.random(self.n - 1) < self._accept_probs[1:]
            return z
        times, phi, hazard = self._times, self._phi, self._hazard
        uniforms = rng.random(self.n - 1)
        k = 0
        t_k = times[0]
        for i in range(1, self.n):
            mu = hazard(times[i] - t_k)
            if uniforms[i - 1] * (mu + phi[i]) < mu:
                z[i] = 1
                k = i
                t_k = times[i]
        return z


def sample_immigrant_vector(events: EventSeries, model: ModelSpec, rng: np.random.Generator) -> ImmigrantVector:
    """One immigrant-vector draw from the thinning scan."""
    return ImmigrantVector(ImmigrantVectorSampler(events, model).draw(rng))


# ---------------------------------------------------------------------------
# Serialization: time,parent_index,generation rows with the window in a header.
# ---------------------------------------------------------------------------


def write_simulation(path: str | Path, result: SimulationResult) -> None:
    lines = [f"# r={result.events.r!r}", "time,parent_index,generation"]
    for t, p, g in zip(result.events.times, result.parent, result.generation):
        lines.append(f"{float(t)!r},{int(p)},{int(g)}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_simulation(path: str | Path) -> SimulationResult:
    r = None
    times, parents, gens = [], [], []
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("r="):
                r = float(body[2:])
            continue
        if line.startswith("time"):
            continue
        t, p, g = line.split(",")
        times.append(float(t))
        parents.append(int(p))
        gens.append(int(g))
    if r is None:
        raise ValueError(f"{path}: missing '# r=' header")
    return SimulationResult(EventSeries(np.asarray(times), r), np.asarray(parents), np.asarray(gens))
