"""Box-free maximization on log-transformed positive parameters.

One optimizer stack is shared by the semi-complete joint M-step, the Omori
M-step, and the baseline MLE so that compared models share numerical behavior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, minimize_scalar

_BIG = 1e300

# Deterministic restart offsets applied multiplicatively in log space.
_RESTART_STEPS = (
    None,
    (1.0, -1.0, 1.0, -1.0, 1.0, -1.0),
    (-1.0, 1.0, -1.0, 1.0, -1.0, 1.0),
    (1.7, 1.7, 1.7, 1.7, 1.7, 1.7),
    (-1.7, -1.7, -1.7, -1.7, -1.7, -1.7),
)


@dataclass(frozen=True)
class OptResult:
    x: np.ndarray
    fun: float  # maximized objective value
    success: bool


def maximize_logspace(objective, x0, bounds, restarts: int = 3) -> OptResult:
    """Maximize ``objective`` over positive parameters via L-BFGS-B on logs.

    ``bounds`` are (low, high) pairs in linear space; ``restarts`` extra starts
    are deterministic multiplicative perturbations of ``x0``.  The best iterate
    ever evaluated (including the starts) is returned, so the result never
    falls below the objective at ``x0``.
    """
    x0 = np.asarray(x0, dtype=float)
    lo = np.log([b[0] for b in bounds])
    hi = np.log([b[1] for b in bounds])
    y0 = np.clip(np.log(x0), lo, hi)

    best = {"y": y0, "f": -np.inf}

    def neg(y):
        with np.errstate(over="ignore", invalid="ignore"):
            val = objective(np.exp(y))
        if not np.isfinite(val):
            return _BIG
        if val > best["f"]:
            best["f"] = val
            best["y"] = y.copy()
        return -val

    neg(y0)
    success = False
    for k in range(restarts + 1):
        step = _RESTART_STEPS[k % len(_RESTART_STEPS)]
        y_start = y0 if step is None else np.clip(y0 + np.asarray(step[: y0.size]), lo, hi)
        res = minimize(
            neg,
            y_start,
            method="L-BFGS-B",
            bounds=list(zip(lo, hi)),
            options={"maxiter": 200},
        )
        success = success or bool(res.success)
    return OptResult(np.exp(best["y"]), best["f"], success)


def maximize_scalar_logspace(objective, low: float, high: float, xatol_log: float = 1e-9):
    """Maximize a scalar objective over [low, high] via bounded search on the log axis."""
    best = {"x": low, "f": -np.inf}

    def neg(y):
        x = float(np.exp(y))
        with np.errstate(over="ignore", invalid="ignore"):
            val = objective(x)
        if not np.isfinite(val):
            return _BIG
        if val > best["f"]:
            best["f"] = val
            best["x"] = x
        return -val

    minimize_scalar(
        neg,
        bounds=(np.log(low), np.log(high)),
        method="bounded",
        options={"xatol": xatol_log},
    )
    return best["x"], best["f"]
