"""Trajectory record containers shared by the continuous-time runners."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class TrajectoryRecord:
    """One trajectory: time grid, measurement record, observable traces.

    times includes the initial point; dy/dn rows cover the recording windows
    between consecutive times (len(times) - 1 rows).  dy holds real diffusive
    increments per channel, dn integer counter increments per detector.
    """

    times: np.ndarray
    dy: np.ndarray | None = None
    dn: np.ndarray | None = None
    observables: dict[str, np.ndarray] = field(default_factory=dict)
    seed: int | None = None
    traj_id: int | None = None

    def __post_init__(self):
        nw = len(self.times) - 1
        if self.dy is not None and self.dy.shape[0] != nw:
            raise ValueError("dy rows must match the number of recording windows")
        if self.dn is not None and self.dn.shape[0] != nw:
            raise ValueError("dn rows must match the number of recording windows")
        for name, trace in self.observables.items():
            if trace.shape[0] != len(self.times):
                raise ValueError(f"observable {name!r} length mismatch")
        if self.dy is not None and not np.all(np.isfinite(self.dy)):
            raise ValueError("dy contains non-finite entries")
