"""Event data: strictly increasing event times on (0, r]."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class EventSeries:
    """Observed event times ``t_1 < ... < t_n`` on the window ``(0, r]``.

    The virtual origin 0 and the stopping time ``r`` are conventions handled
    inside operations; neither is stored in ``times``.  An event exactly at
    ``r`` is admitted.
    """

    times: np.ndarray
    r: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float).reshape(-1).copy()
        r = float(self.r)
        if not np.isfinite(r) or r <= 0:
            raise ValueError(f"stopping time r must be positive and finite, got {r}")
        if times.size:
            if not np.all(np.isfinite(times)):
                raise ValueError("event times must be finite")
            if times[0] <= 0:
                raise ValueError("event times must be strictly positive")
            if times[-1] > r:
                raise ValueError(f"event times must not exceed r={r}")
            if np.any(np.diff(times) <= 0):
                raise ValueError("event times must be strictly increasing (duplicates rejected)")
        times.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "r", r)

    @property
    def n(self) -> int:
        return int(self.times.size)

    def fingerprint(self) -> str:
        """Stable hash of (times, r), used to match reports fitted on the same data."""
        h = hashlib.sha256()
        h.update(self.times.tobytes())
        h.update(np.float64(self.r).tobytes())
        return h.hexdigest()[:16]


def write_events(path: str | Path, events: EventSeries) -> None:
    """Write the one-value-per-line text format with the stopping time in a header comment."""
    lines = [f"# r={events.r!r}", "time"]
    lines.extend(repr(float(t)) for t in events.times)
    Path(path).write_text("\n".join(lines) + "\n")


def read_events(path: str | Path, r: float | None = None) -> EventSeries:
    """Read the format written by :func:`write_events`.

    ``r`` overrides the header comment; one of the two must be present.
    """
    times = []
    header_r = None
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("r="):
                header_r = float(body[2:])
            continue
        if line.startswith("time"):
            continue
        times.append(float(line.split(",")[0]))
    stop = r if r is not None else header_r
    if stop is None:
        raise ValueError(f"{path}: stopping time not found (pass r= or include a '# r=' header)")
    return EventSeries(np.asarray(times), stop)
