"""Trajectory container shared by all propagators, and the time average."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class IntegratorError(RuntimeError):
    """Norm drift or another sign that a propagation went wrong."""


def running_average(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """(1/t) int_0^t values dt' by the trapezoid rule; the t=0 entry is values[0]."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    out = np.empty_like(values)
    out[0] = values[0]
    if values.size > 1:
        integral = np.cumsum(0.5 * (values[1:] + values[:-1]) * np.diff(times))
        span = times[1:] - times[0]
        out[1:] = np.where(span > 0, integral / np.where(span > 0, span, 1.0), values[1:])
    return out


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """Observables on a time grid.

    ``jz_mean`` is <J_z>/N, ``jz_var`` is in atoms squared and ``frag`` is
    (rho_11 - rho_22)/N.  Mean-field records carry NaN for the last two.
    """

    times: np.ndarray
    jz_mean: np.ndarray
    jz_var: np.ndarray
    frag: np.ndarray
    N: int
    model: str = "tm-standard"
    norm_drift: float = 0.0
    jz_timeavg_running: np.ndarray = field(init=False)

    def __post_init__(self):
        for name in ("times", "jz_mean", "jz_var", "frag"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.times.shape == self.jz_mean.shape == self.jz_var.shape == self.frag.shape):
            raise ValueError("observable arrays must share the time axis")
        avg = running_average(self.times, self.jz_mean)
        avg.setflags(write=False)
        object.__setattr__(self, "jz_timeavg_running", avg)

    @property
    def t_final(self) -> float:
        return float(self.times[-1])

    def rows(self):
        for i in range(self.times.size):
            yield {"t": self.times[i], "jz_mean_over_N": self.jz_mean[i], "jz_var": self.jz_var[i],
                   "frag": self.frag[i], "jz_timeavg": self.jz_timeavg_running[i]}


def time_averaged_imbalance(record: TrajectoryRecord, T: float) -> float:
    """(1/T) int_0^T <J_z>/N dt, trapezoid on the record, interpolated at T."""
    t, y = record.times, record.jz_mean
    if T <= 0:
        raise ValueError("averaging window must be positive")
    if T > t[-1] * (1 + 1e-12) + 1e-12:
        raise ValueError(f"record ends at t={t[-1]} before T={T}")
    i = int(np.searchsorted(t, T, side="right"))
    ts = np.append(t[:i], T)
    ys = np.append(y[:i], np.interp(T, t, y))
    return float(np.trapezoid(ys, ts) / T)
