"""Goodness of fit: conditional likelihoods, Monte Carlo aggregation, residual tests."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import chi2

from .errors import InsufficientDataError, NumericalError
from .events import EventSeries
from .intensity import (
    compensator_at_events,
    immigration_compensator_at_events,
    immigration_intensity_at_events,
    offspring_intensity_at_events,
    offspring_tail_cdf_sum,
)
from .models import ModelSpec, is_renewal
from .reports import FitReport
from .simulate import ImmigrantVectorSampler
from .weights import ImmigrantVector


@dataclass(frozen=True)
class GofOptions:
    mc_samples: int = 200
    ks_level: float = 0.05
    seed: int | None = None

    def __post_init__(self):
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be >= 1")


@dataclass
class GofReport:
    mc_loglik: float
    mc_loglik_se: float
    sample_logliks: np.ndarray
    mc_pvalue: float
    sample_ks_stats: np.ndarray
    sample_ks_pvalues: np.ndarray
    aic: float | None
    k: int | None
    mc_samples: int
    ks_level: float
    seed: int | None

    def __post_init__(self):
        if not (0.0 <= self.mc_pvalue <= 1.0):
            raise ValueError("mc_pvalue must lie in [0, 1]")
        if self.mc_loglik_se < 0:
            raise ValueError("standard error must be >= 0")

    def summary_line(self) -> str:
        aic = "n/a" if self.aic is None else f"{self.aic:.3f}"
        return (
            f"mc_loglik={self.mc_loglik:.4f} (se {self.mc_loglik_se:.4f}) "
            f"mc_pvalue={self.mc_pvalue:.4f} aic={aic} samples={self.mc_samples}"
        )

    def save(self, base: str | Path) -> None:
        base = Path(base)
        base.parent.mkdir(parents=True, exist_ok=True)
        summary = {
            "mc_loglik": self.mc_loglik,
            "mc_loglik_se": self.mc_loglik_se,
            "mc_pvalue": self.mc_pvalue,
            "aic": self.aic,
            "k": self.k,
            "mc_samples": self.mc_samples,
            "ks_level": self.ks_level,
            "seed": self.seed,
        }
        base.with_suffix(".json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        lines = ["sample,loglik,ks_stat,ks_pvalue"]
        for j in range(self.mc_samples):
            lines.append(
                f"{j},{self.sample_logliks[j]!r},{self.sample_ks_stats[j]!r},{self.sample_ks_pvalues[j]!r}"
            )
        Path(str(base) + "_samples.csv").write_text("\n".join(lines) + "\n")


def _as_z(z) -> np.ndarray:
    return z.z if isinstance(z, ImmigrantVector) else np.asarray(z)


def conditional_loglik(model: ModelSpec, events: EventSeries, z) -> float:
    """Log of the incomplete-data likelihood conditioned on the immigrant vector."""
    z = _as_z(z)
    phi = offspring_intensity_at_events(events, model.offspring)
    off_total = model.offspring.eta * offspring_tail_cdf_sum(events, model.offspring.kernel)
    return _conditional_loglik_given(model, events, z, phi, off_total)


def _conditional_loglik_given(model, events, z, phi, off_total) -> float:
    lam = immigration_intensity_at_events(model.immigration, events, z) + phi
    bad = np.flatnonzero(~(np.isfinite(lam) & (lam > 0)))
    if bad.size:
        raise NumericalError("non-positive conditional intensity", event_index=int(bad[0]))
    _, imm_total = immigration_compensator_at_events(model.immigration, events, z)
    return float(np.sum(np.log(lam)) - imm_total - off_total)


def _aggregate_logliks(lls: np.ndarray) -> tuple[float, float]:
    """log of the average likelihood via log-sum-exp, plus a delta-method SE."""
    m = float(np.max(lls))
    w = np.exp(lls - m)
    wbar = float(w.mean())
    loglik = m + float(np.log(wbar))
    se = float(w.std(ddof=1) / (np.sqrt(w.size) * wbar)) if w.size > 1 else 0.0
    return loglik, se


def mc_loglik(
    model: ModelSpec, events: EventSeries, opts: GofOptions | None = None, rng: np.random.Generator | None = None
) -> tuple[float, float]:
    """Monte Carlo incomplete-data log-likelihood: average conditional likelihoods
    over sampled immigrant vectors.  Exact (zero variance) for z-independent models."""
    opts = opts or GofOptions()
    phi = offspring_intensity_at_events(events, model.offspring)
    off_total = model.offspring.eta * offspring_tail_cdf_sum(events, model.offspring.kernel)
    if not is_renewal(model.immigration):
        trivial = np.zeros(events.n, dtype=np.int8)
        trivial[0] = 1
        return _conditional_loglik_given(model, events, trivial, phi, off_total), 0.0
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(opts.seed))
    sampler = ImmigrantVectorSampler(events, model)
    lls = np.array(
        [
            _conditional_loglik_given(model, events, sampler.draw(rng), phi, off_total)
            for _ in range(opts.mc_samples)
        ]
    )
    return _aggregate_logliks(lls)


def residual_transform(model: ModelSpec, events: EventSeries, z) -> np.ndarray:
    """Time-change transform t_i -> Lambda(t_i | z); strictly increasing by construction."""
    out = compensator_at_events(model, events, _as_z(z))
    if np.any(np.diff(out) <= 0):
        raise NumericalError("residual transform is not strictly increasing (compensator bug)")
    return out


def _kolmogorov_sf(x: float, terms: int = 100) -> float:
    """P(K > x) by the asymptotic Kolmogorov series truncated at ``terms``."""
    if x <= 0.05:
        return 1.0
    k = np.arange(1, terms + 1)
    s = 2.0 * float(np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * (k * x) ** 2)))
    return float(min(max(s, 0.0), 1.0))


def ks_test_exponential(transformed_times) -> tuple[float, float]:
    """KS statistic and asymptotic p-value of transformed inter-event times
    against the standard exponential distribution."""
    tt = np.asarray(transformed_times, dtype=float).reshape(-1)
    if tt.size < 2:
        raise InsufficientDataError("KS test needs at least 2 transformed times")
    gaps = np.diff(np.concatenate([[0.0], tt]))
    x = np.sort(gaps)
    m = x.size
    cdf = -np.expm1(-x)
    grid = np.arange(1, m + 1) / m
    d = float(max(np.max(grid - cdf), np.max(cdf - (grid - 1.0 / m))))
    return d, _kolmogorov_sf(np.sqrt(m) * d)


def mc_pvalue(
    model: ModelSpec, events: EventSeries, opts: GofOptions | None = None, rng: np.random.Generator | None = None
) -> float:
    """Average of per-immigrant-vector KS p-values over sampled vectors."""
    opts = opts or GofOptions()
    if not is_renewal(model.immigration):
        trivial = np.zeros(events.n, dtype=np.int8)
        trivial[0] = 1
        return ks_test_exponential(residual_transform(model, events, trivial))[1]
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(opts.seed))
    sampler = ImmigrantVectorSampler(events, model)
    ps = [
        ks_test_exponential(residual_transform(model, events, sampler.draw(rng)))[1]
        for _ in range(opts.mc_samples)
    ]
    return float(np.mean(ps))


def gof_report(model: ModelSpec, events: EventSeries, opts: GofOptions | None = None) -> GofReport:
    """Full goodness-of-fit evaluation on one shared ensemble of immigrant vectors."""
    opts = opts or GofOptions()
    phi = offspring_intensity_at_events(events, model.offspring)
    off_total = model.offspring.eta * offspring_tail_cdf_sum(events, model.offspring.kernel)
    l = opts.mc_samples
    if not is_renewal(model.immigration):
        trivial = np.zeros(events.n, dtype=np.int8)
        trivial[0] = 1
        ll = _conditional_loglik_given(model, events, trivial, phi, off_total)
        d, p = ks_test_exponential(residual_transform(model, events, trivial))
        lls = np.full(l, ll)
        ds = np.full(l, d)
        ps = np.full(l, p)
        agg_ll, se = ll, 0.0
        mean_p = p
    else:
        rng = np.random.default_rng(np.random.SeedSequence(opts.seed))
        sampler = ImmigrantVectorSampler(events, model)
        lls = np.empty(l)
        ds = np.empty(l)
        ps = np.empty(l)
        for j in range(l):
            z = sampler.draw(rng)
            lls[j] = _conditional_loglik_given(model, events, z, phi, off_total)
            ds[j], ps[j] = ks_test_exponential(residual_transform(model, events, z))
        agg_ll, se = _aggregate_logliks(lls)
        mean_p = float(np.mean(ps))
    k = model.free_parameter_count()
    aic = None if k is None else 2.0 * k - 2.0 * agg_ll
    return GofReport(
        mc_loglik=agg_ll,
        mc_loglik_se=se,
        sample_logliks=lls,
        mc_pvalue=mean_p,
        sample_ks_stats=ds,
        sample_ks_pvalues=ps,
        aic=aic,
        k=k,
        mc_samples=l,
        ks_level=opts.ks_level,
        seed=opts.seed,
    )


@dataclass(frozen=True)
class ModelSelection:
    delta_aic: float  # AIC(H0) - AIC(H1); positive favors H1
    wilks_stat: float
    wilks_pvalue: float
    df: int


def model_selection(fit_h0: FitReport, fit_h1: FitReport) -> ModelSelection:
    """Compare a nested H0 fit against H1 on the same data via AIC and the Wilks test."""
    if fit_h0.data_fingerprint != fit_h1.data_fingerprint:
        raise ValueError("model comparison requires fits on identical data")
    if fit_h0.loglik is None or fit_h1.loglik is None or fit_h0.aic is None or fit_h1.aic is None:
        raise ValueError("both fits need log-likelihoods for model selection")
    if fit_h0.k is None or fit_h1.k is None or fit_h1.k <= fit_h0.k:
        raise ValueError("H0 must be nested in H1 with fewer free parameters")
    df = fit_h1.k - fit_h0.k
    stat = 2.0 * (fit_h1.loglik - fit_h0.loglik)
    return ModelSelection(
        delta_aic=fit_h0.aic - fit_h1.aic,
        wilks_stat=stat,
        wilks_pvalue=float(chi2.sf(stat, df)),
        df=df,
    )
