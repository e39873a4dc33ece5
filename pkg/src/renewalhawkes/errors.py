"""Exception types shared across the package."""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid configuration or model parameters (CLI exit code 2)."""


class NumericalError(RuntimeError):
    """Non-finite or degenerate values encountered during computation (CLI exit code 3)."""

    def __init__(self, message: str, event_index: int | None = None):
        if event_index is not None:
            message = f"{message} (event index {event_index})"
        super().__init__(message)
        self.event_index = event_index


class ExplosionError(RuntimeError):
    """Simulation exceeded the point cap; the branching ratio is too large."""

    def __init__(self, eta: float, cap: int):
        super().__init__(
            f"simulation exceeded {cap} points; branching ratio eta={eta} is at or above criticality"
        )
        self.eta = eta
        self.cap = cap


class UnsupportedKernelError(TypeError):
    """Operation requires a kernel family it does not support."""


class InsufficientDataError(ValueError):
    """Too few observations for the requested statistic."""
