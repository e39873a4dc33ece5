"""Config-dict serialization of model specifications."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .models import (
    ExponentialKernel,
    HistogramKernel,
    HomogeneousPoisson,
    InhomogeneousEstimate,
    ModelSpec,
    OffspringModel,
    OmoriKernel,
    WeibullRenewal,
    sinusoidal_intensity,
)


def kernel_to_config(kernel) -> dict:
    if isinstance(kernel, ExponentialKernel):
        return {"family": "exponential", "tau0": kernel.tau0}
    if isinstance(kernel, OmoriKernel):
        return {"family": "omori", "c": kernel.c, "alpha": kernel.alpha}
    if isinstance(kernel, HistogramKernel):
        return {
            "family": "histogram",
            "bin_width": kernel.bin_width,
            "bin_masses": kernel.bin_masses.tolist(),
        }
    raise ConfigError(f"cannot serialize kernel {type(kernel).__name__}")


def kernel_from_config(cfg: dict):
    family = cfg.get("family")
    if family == "exponential":
        return ExponentialKernel(float(cfg["tau0"]))
    if family == "omori":
        return OmoriKernel(float(cfg["c"]), float(cfg["alpha"]))
    if family == "histogram":
        return HistogramKernel(float(cfg["bin_width"]), np.asarray(cfg["bin_masses"], dtype=float))
    raise ConfigError(f"unknown kernel family {family!r}")


def immigration_to_config(imm) -> dict:
    if isinstance(imm, WeibullRenewal):
        return {"family": "weibull", "kappa": imm.kappa, "beta": imm.beta}
    if isinstance(imm, HomogeneousPoisson):
        return {"family": "poisson", "rate": imm.rate}
    if isinstance(imm, InhomogeneousEstimate):
        return {
            "family": "inhomogeneous_estimate",
            "atoms": imm.atoms.tolist(),
            "weights": imm.weights.tolist(),
            "bandwidth": imm.bandwidth,
            "r": imm.r,
        }
    if getattr(imm, "label", None) == "sinusoid":
        return {"family": "sinusoid", "bound": imm.bound}
    raise ConfigError(f"cannot serialize immigration {type(imm).__name__}")


def immigration_from_config(cfg: dict):
    family = cfg.get("family")
    if family == "weibull":
        return WeibullRenewal(float(cfg["kappa"]), float(cfg["beta"]))
    if family == "poisson":
        return HomogeneousPoisson(float(cfg["rate"]))
    if family == "inhomogeneous_estimate":
        return InhomogeneousEstimate(
            np.asarray(cfg["atoms"], dtype=float),
            np.asarray(cfg["weights"], dtype=float),
            float(cfg["bandwidth"]),
            float(cfg["r"]),
        )
    if family == "sinusoid":
        return sinusoidal_intensity(
            amplitude=float(cfg.get("amplitude", 1.0)),
            period=float(cfg.get("period", 250.0)),
            offset=float(cfg.get("offset", 1.5)),
        )
    raise ConfigError(f"unknown immigration family {family!r}")


def model_to_config(model: ModelSpec) -> dict:
    return {
        "immigration": immigration_to_config(model.immigration),
        "offspring": {"eta": model.offspring.eta, "kernel": kernel_to_config(model.offspring.kernel)},
    }


def model_from_config(cfg: dict) -> ModelSpec:
    try:
        off = cfg["offspring"]
        return ModelSpec(
            immigration_from_config(cfg["immigration"]),
            OffspringModel(float(off["eta"]), kernel_from_config(off["kernel"])),
        )
    except KeyError as exc:
        raise ConfigError(f"model config missing key {exc}") from exc
