"""Fit reports and their serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .models import ModelSpec
from .weights import BranchingWeights


@dataclass
class FitReport:
    """Outcome of one model fit: estimates, trace, convergence, fit quality."""

    algorithm: str
    model: ModelSpec
    iterations: int
    trace: list[dict]
    converged: bool
    loglik: float | None
    loglik_label: str  # 'exact' | 'monte_carlo' | 'skipped'
    loglik_se: float | None
    k: int | None
    n: int
    r: float
    data_fingerprint: str
    weights: BranchingWeights | None = None
    boundary_warnings: list[str] = field(default_factory=list)
    seed: int | None = None

    def __post_init__(self):
        if len(self.trace) != self.iterations:
            raise ValueError("trace length must equal the iteration count")

    @property
    def aic(self) -> float | None:
        if self.k is None or self.loglik is None:
            return None
        return 2.0 * self.k - 2.0 * self.loglik

    def params(self) -> dict:
        return self.model.scalar_params()

    def summary_dict(self) -> dict:
        from .serialize import model_to_config

        return {
            "algorithm": self.algorithm,
            "model": model_to_config(self.model),
            "params": self.params(),
            "iterations": self.iterations,
            "converged": self.converged,
            "loglik": self.loglik,
            "loglik_label": self.loglik_label,
            "loglik_se": self.loglik_se,
            "aic": self.aic,
            "k": self.k,
            "n": self.n,
            "r": self.r,
            "data_fingerprint": self.data_fingerprint,
            "sum_pi": None if self.weights is None else float(self.weights.pi.sum()),
            "boundary_warnings": self.boundary_warnings,
            "seed": self.seed,
        }

    def save(self, base: str | Path) -> None:
        """Write ``<base>.json`` and the per-iteration trace ``<base>_trace.csv``."""
        base = Path(base)
        base.parent.mkdir(parents=True, exist_ok=True)
        base.with_suffix(".json").write_text(json.dumps(self.summary_dict(), indent=2, sort_keys=True) + "\n")
        if self.trace:
            cols = sorted({k for row in self.trace for k in row})
            lines = ["iteration," + ",".join(cols)]
            for it, row in enumerate(self.trace):
                lines.append(f"{it}," + ",".join(_fmt(row.get(c)) for c in cols))
            Path(str(base) + "_trace.csv").write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))
