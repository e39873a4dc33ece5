"""Model components: offspring kernels, immigration models, and their evaluation.

All densities are evaluated in log space internally where underflow is a risk
and exponentiated only at API boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import gammaln, ndtr

from .errors import ConfigError

# Relative clamp keeping kappa<1 hazards finite at zero lag inside likelihoods.
WEIBULL_LAG_CLAMP = 1e-12

_SQRT2PI = math.sqrt(2.0 * math.pi)


def _scalarize(x, out):
    return float(out) if np.ndim(x) == 0 else out


# ---------------------------------------------------------------------------
# Offspring kernels: densities on (0, inf) integrating to 1.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExponentialKernel:
    """h(t) = exp(-t/tau0)/tau0."""

    tau0: float

    def __post_init__(self):
        if not (self.tau0 > 0 and np.isfinite(self.tau0)):
            raise ConfigError(f"tau0 must be positive, got {self.tau0}")

    def density(self, t):
        t_arr = np.asarray(t, dtype=float)
        out = np.where(t_arr >= 0, np.exp(-np.maximum(t_arr, 0.0) / self.tau0) / self.tau0, 0.0)
        return _scalarize(t, out)

    def cdf(self, t):
        t_arr = np.asarray(t, dtype=float)
        out = np.where(t_arr >= 0, -np.expm1(-np.maximum(t_arr, 0.0) / self.tau0), 0.0)
        return _scalarize(t, out)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.exponential(self.tau0, size)

    def params(self) -> dict:
        return {"tau0": self.tau0}


@dataclass(frozen=True)
class OmoriKernel:
    """Power-law density h(t) = alpha c^alpha / (t + c)^(1+alpha)."""

    c: float
    alpha: float

    def __post_init__(self):
        if not (self.c > 0 and self.alpha > 0):
            raise ConfigError(f"Omori kernel needs c > 0 and alpha > 0, got c={self.c}, alpha={self.alpha}")

    def density(self, t):
        t_arr = np.asarray(t, dtype=float)
        logh = (
            math.log(self.alpha)
            + self.alpha * math.log(self.c)
            - (1.0 + self.alpha) * np.log(np.maximum(t_arr, 0.0) + self.c)
        )
        out = np.where(t_arr >= 0, np.exp(logh), 0.0)
        return _scalarize(t, out)

    def cdf(self, t):
        # Closed form: H(t) = 1 - (c/(t+c))^alpha.
        t_arr = np.asarray(t, dtype=float)
        ratio_log = self.alpha * (math.log(self.c) - np.log(np.maximum(t_arr, 0.0) + self.c))
        out = np.where(t_arr >= 0, -np.expm1(ratio_log), 0.0)
        return _scalarize(t, out)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        u = rng.random(size)
        return self.c * (u ** (-1.0 / self.alpha) - 1.0)

    def params(self) -> dict:
        return {"c": self.c, "alpha": self.alpha}


@dataclass(frozen=True)
class HistogramKernel:
    """Piecewise-constant density: ``bin_masses[k]`` on [k*d, (k+1)*d), zero beyond."""

    bin_width: float
    bin_masses: np.ndarray

    def __post_init__(self):
        masses = np.asarray(self.bin_masses, dtype=float).reshape(-1).copy()
        if not (self.bin_width > 0):
            raise ConfigError(f"bin_width must be positive, got {self.bin_width}")
        if masses.size == 0 or np.any(masses < 0):
            raise ConfigError("bin_masses must be non-empty and non-negative")
        total = float(masses.sum() * self.bin_width)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"histogram must integrate to 1, got {total}")
        masses.flags.writeable = False
        object.__setattr__(self, "bin_masses", masses)
        cum = np.concatenate([[0.0], np.cumsum(masses) * self.bin_width])
        cum.flags.writeable = False
        object.__setattr__(self, "_cum", cum)

    @property
    def support_end(self) -> float:
        return self.bin_width * self.bin_masses.size

    def density(self, t):
        t_arr = np.asarray(t, dtype=float)
        idx = np.floor(t_arr / self.bin_width).astype(int)
        valid = (t_arr >= 0) & (idx < self.bin_masses.size)
        out = np.where(valid, self.bin_masses[np.clip(idx, 0, self.bin_masses.size - 1)], 0.0)
        return _scalarize(t, out)

    def cdf(self, t):
        t_arr = np.asarray(t, dtype=float)
        clipped = np.clip(t_arr, 0.0, self.support_end)
        idx = np.minimum(np.floor(clipped / self.bin_width).astype(int), self.bin_masses.size - 1)
        out = self._cum[idx] + self.bin_masses[idx] * (clipped - idx * self.bin_width)
        return _scalarize(t, np.clip(out, 0.0, 1.0))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        probs = self.bin_masses * self.bin_width
        probs = probs / probs.sum()
        bins = rng.choice(self.bin_masses.size, size=size, p=probs)
        return (bins + rng.random(size)) * self.bin_width

    def params(self) -> dict:
        return {"bin_width": self.bin_width, "bin_masses": self.bin_masses.tolist()}


Kernel = ExponentialKernel | OmoriKernel | HistogramKernel


@dataclass(frozen=True)
class OffspringModel:
    """Offspring intensity eta * h(t - t_parent); eta >= 1 is non-stationary but not rejected."""

    eta: float
    kernel: Kernel

    def __post_init__(self):
        if not (self.eta >= 0 and np.isfinite(self.eta)):
            raise ConfigError(f"branching ratio eta must be >= 0, got {self.eta}")

    @property
    def stationary(self) -> bool:
        return self.eta < 1.0


# ---------------------------------------------------------------------------
# Immigration models.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeibullRenewal:
    """Renewal waiting times with hazard mu(w) = (kappa/beta) (w/beta)^(kappa-1)."""

    kappa: float
    beta: float

    def __post_init__(self):
        if not (self.kappa > 0 and self.beta > 0):
            raise ConfigError(f"Weibull needs kappa > 0 and beta > 0, got {self.kappa}, {self.beta}")

    def hazard(self, w):
        """Raw hazard; returns +inf at w = 0 when kappa < 1."""
        w_arr = np.asarray(w, dtype=float)
        if np.any(w_arr < 0):
            raise ValueError("waiting time must be >= 0")
        with np.errstate(divide="ignore"):
            out = (self.kappa / self.beta) * (w_arr / self.beta) ** (self.kappa - 1.0)
        return _scalarize(w, out)

    def hazard_clamped(self, w):
        w_arr = np.maximum(np.asarray(w, dtype=float), WEIBULL_LAG_CLAMP * self.beta)
        out = (self.kappa / self.beta) * (w_arr / self.beta) ** (self.kappa - 1.0)
        return _scalarize(w, out)

    def log_hazard_clamped(self, w):
        w_arr = np.maximum(np.asarray(w, dtype=float), WEIBULL_LAG_CLAMP * self.beta)
        out = (
            math.log(self.kappa)
            - math.log(self.beta)
            + (self.kappa - 1.0) * (np.log(w_arr) - math.log(self.beta))
        )
        return _scalarize(w, out)

    def cumulative_hazard(self, w):
        w_arr = np.maximum(np.asarray(w, dtype=float), 0.0)
        out = (w_arr / self.beta) ** self.kappa
        return _scalarize(w, out)

    def density(self, w):
        out = np.exp(self.log_density(w))
        return _scalarize(w, out)

    def log_density(self, w):
        w_arr = np.maximum(np.asarray(w, dtype=float), WEIBULL_LAG_CLAMP * self.beta)
        z = np.log(w_arr) - math.log(self.beta)
        out = math.log(self.kappa) - math.log(self.beta) + (self.kappa - 1.0) * z - np.exp(self.kappa * z)
        return _scalarize(w, out)

    def cdf(self, w):
        w_arr = np.maximum(np.asarray(w, dtype=float), 0.0)
        out = -np.expm1(-((w_arr / self.beta) ** self.kappa))
        return _scalarize(w, out)

    def mean_waiting(self) -> float:
        return self.beta * math.exp(gammaln(1.0 + 1.0 / self.kappa))

    def sample_waiting(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return self.beta * rng.weibull(self.kappa, size)

    def params(self) -> dict:
        return {"kappa": self.kappa, "beta": self.beta}


@dataclass(frozen=True)
class HomogeneousPoisson:
    """Constant-rate immigration; the kappa = 1 special case with rate = 1/beta."""

    rate: float

    def __post_init__(self):
        if not (self.rate > 0):
            raise ConfigError(f"rate must be positive, got {self.rate}")

    def hazard(self, w):
        return _scalarize(w, np.full_like(np.asarray(w, dtype=float), self.rate))

    hazard_clamped = hazard

    def log_hazard_clamped(self, w):
        return _scalarize(w, np.full_like(np.asarray(w, dtype=float), math.log(self.rate)))

    def cumulative_hazard(self, w):
        out = self.rate * np.maximum(np.asarray(w, dtype=float), 0.0)
        return _scalarize(w, out)

    def density(self, w):
        w_arr = np.maximum(np.asarray(w, dtype=float), 0.0)
        return _scalarize(w, self.rate * np.exp(-self.rate * w_arr))

    def log_density(self, w):
        w_arr = np.maximum(np.asarray(w, dtype=float), 0.0)
        return _scalarize(w, math.log(self.rate) - self.rate * w_arr)

    def cdf(self, w):
        w_arr = np.maximum(np.asarray(w, dtype=float), 0.0)
        return _scalarize(w, -np.expm1(-self.rate * w_arr))

    def mean_waiting(self) -> float:
        return 1.0 / self.rate

    def sample_waiting(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.exponential(1.0 / self.rate, size)

    def params(self) -> dict:
        return {"rate": self.rate}


@dataclass(frozen=True)
class DeterministicIntensity:
    """Known deterministic immigration intensity on (0, r], with a finite majorant for thinning."""

    fn: Callable[[np.ndarray], np.ndarray]
    bound: float
    cumulative_fn: Callable[[np.ndarray], np.ndarray] | None = None
    label: str = "deterministic"

    def __post_init__(self):
        if not (np.isfinite(self.bound) and self.bound > 0):
            raise ConfigError("deterministic intensity needs a finite positive majorant bound")

    def intensity(self, t):
        out = np.asarray(self.fn(np.asarray(t, dtype=float)), dtype=float)
        return _scalarize(t, out)

    def cumulative(self, t):
        if self.cumulative_fn is None:
            raise ConfigError(f"intensity '{self.label}' has no cumulative function")
        return _scalarize(t, np.asarray(self.cumulative_fn(np.asarray(t, dtype=float)), dtype=float))

    def params(self) -> dict:
        return {"label": self.label, "bound": self.bound}


def sinusoidal_intensity(amplitude: float = 1.0, period: float = 250.0, offset: float = 1.5) -> DeterministicIntensity:
    """mu(t) = amplitude * sin(2 pi t / period) + offset, with its exact integral."""
    if offset - abs(amplitude) < 0:
        raise ConfigError("sinusoidal intensity must stay non-negative (offset >= |amplitude|)")
    w = 2.0 * math.pi / period

    def fn(t):
        return amplitude * np.sin(w * t) + offset

    def cum(t):
        return offset * t + amplitude * (1.0 - np.cos(w * t)) / w

    return DeterministicIntensity(fn=fn, bound=offset + abs(amplitude), cumulative_fn=cum, label="sinusoid")


@dataclass(frozen=True)
class InhomogeneousEstimate:
    """Kernel estimate of an immigration intensity on (0, r].

    Mass ``weights[i]`` is spread around ``atoms[i]`` by a Gaussian of the given
    bandwidth; mass falling outside (0, r] is reflected back, implemented by the
    method of images, so the estimate integrates exactly to ``sum(weights)``.
    """

    atoms: np.ndarray
    weights: np.ndarray
    bandwidth: float
    r: float

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float).reshape(-1).copy()
        weights = np.asarray(self.weights, dtype=float).reshape(-1).copy()
        if atoms.size != weights.size:
            raise ConfigError("atoms and weights must have equal length")
        if np.any(weights < 0):
            raise ConfigError("atom weights must be non-negative")
        if not (self.bandwidth > 0 and self.r > 0):
            raise ConfigError("bandwidth and r must be positive")
        atoms.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def _image_range(self) -> range:
        # Images until the Gaussian tail (12 sd) cannot reach back into [0, r].
        m = int(12.0 * self.bandwidth / (2.0 * self.r)) + 1
        return range(-m, m + 1)

    def intensity(self, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros_like(t_arr)
        b = self.bandwidth
        chunk = max(1, int(2**22 / max(self.atoms.size, 1)))
        for lo in range(0, t_arr.size, chunk):
            x = t_arr[lo : lo + chunk, None]
            acc = np.zeros(x.shape[0])
            for m in self._image_range():
                shift = 2.0 * m * self.r
                for center in (self.atoms + shift, -self.atoms + shift):
                    z = (x - center[None, :]) / b
                    acc += (np.exp(-0.5 * z * z) / (b * _SQRT2PI)) @ self.weights
            out[lo : lo + chunk] = acc
        return _scalarize(t, out if np.ndim(t) else out[0])

    def cumulative(self, t):
        """Integral of the estimate over (0, min(t, r)]."""
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        u = np.clip(t_arr, 0.0, self.r)[:, None]
        b = self.bandwidth
        acc = np.zeros(u.shape[0])
        for m in self._image_range():
            shift = 2.0 * m * self.r
            for center in (self.atoms + shift, -self.atoms + shift):
                c = center[None, :]
                acc += (ndtr((u - c) / b) - ndtr((0.0 - c) / b)) @ self.weights
        return _scalarize(t, acc if np.ndim(t) else acc[0])

    def params(self) -> dict:
        return {"bandwidth": self.bandwidth, "total_mass": self.total_mass, "n_atoms": int(self.atoms.size)}


Immigration = WeibullRenewal | HomogeneousPoisson | DeterministicIntensity | InhomogeneousEstimate

RENEWAL_FAMILIES = (WeibullRenewal, HomogeneousPoisson)


def is_renewal(immigration) -> bool:
    """True for lag-based renewal hazards; False for absolute-time Poisson intensities."""
    return isinstance(immigration, RENEWAL_FAMILIES)


@dataclass(frozen=True)
class ModelSpec:
    """Immigration model plus offspring model."""

    immigration: Immigration
    offspring: OffspringModel

    def free_parameter_count(self) -> int | None:
        """Parameters counted for AIC; None when only a descriptive count exists."""
        if isinstance(self.immigration, HomogeneousPoisson):
            k = 1
        elif isinstance(self.immigration, WeibullRenewal):
            k = 2
        else:
            return None
        kernel = self.offspring.kernel
        if isinstance(kernel, ExponentialKernel):
            return k + 2  # eta + tau0
        if isinstance(kernel, OmoriKernel):
            return k + 3  # eta + c + alpha
        return None

    def scalar_params(self) -> dict:
        """Named scalar parameters, used for traces and convergence checks."""
        out: dict[str, float] = {}
        imm = self.immigration
        if isinstance(imm, WeibullRenewal):
            out.update(kappa=imm.kappa, beta=imm.beta)
        elif isinstance(imm, HomogeneousPoisson):
            out.update(mu=imm.rate)
        elif isinstance(imm, InhomogeneousEstimate):
            out.update(mu_mean=imm.total_mass / imm.r)
        out["eta"] = self.offspring.eta
        kernel = self.offspring.kernel
        if isinstance(kernel, ExponentialKernel):
            out["tau0"] = kernel.tau0
        elif isinstance(kernel, OmoriKernel):
            out.update(c=kernel.c, alpha=kernel.alpha)
        return out


# ---------------------------------------------------------------------------
# Spec-level evaluation operations.
# ---------------------------------------------------------------------------


def renewal_eval(model: WeibullRenewal | HomogeneousPoisson, w):
    """Evaluate (g, G, mu) of a renewal waiting-time model at w >= 0.

    mu = g / (1 - G); for kappa < 1 the hazard at w = 0 is the +inf sentinel.
    """
    w_arr = np.asarray(w, dtype=float)
    if np.any(w_arr < 0):
        raise ValueError("waiting time w must be >= 0")
    g = model.density(w)
    big_g = model.cdf(w)
    mu = model.hazard(w)
    return g, big_g, mu


def kernel_eval(kernel: Kernel, t):
    """Evaluate (h, H) of an offspring kernel at t >= 0."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("kernel lag t must be >= 0")
    return kernel.density(t), kernel.cdf(t)
