"""Fixed-step integration of occupancy vector fields.

The fields integrated here (drift, mean drift, limit drift) are smooth
and non-stiff, so a classic 4th-order fixed-step scheme with default
step min(0.1, t_end/1000) is enough.  The simplex is invariant for the
exact dynamics but not for discrete steps: after each step, components
in [-1e-9, 0) are clipped to zero and the vector renormalized; anything
below -1e-9 or non-finite aborts with a diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .drift import VectorField, drift_field, limit_field
from .errors import ModelError, NumericsError
from .meandrift import mean_drift_field
from .model import ModelSpec, check_occupancy

__all__ = ["Trajectory", "integrate", "solve"]


@dataclass(frozen=True)
class Trajectory:
    """Sampled solution of an occupancy ODE.

    ``states[k]`` is the occupancy at ``times[k]``; times are strictly
    increasing and every stored point lies on the simplex within the
    integrator's tolerance.
    """

    times: np.ndarray
    states: np.ndarray
    kind: str
    N: Optional[float]
    step: float

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def sample(self, times) -> np.ndarray:
        """Occupancies at the given times by linear interpolation."""
        ts = np.asarray(times, dtype=float)
        if ts.size and (ts.min() < self.times[0] - 1e-12
                        or ts.max() > self.times[-1] + 1e-12):
            raise ModelError(
                f"requested times outside [{self.times[0]}, {self.times[-1]}]"
            )
        out = np.empty((ts.size, self.states.shape[1]))
        for col in range(self.states.shape[1]):
            out[:, col] = np.interp(ts, self.times, self.states[:, col])
        return out


def _step_boundaries(
    t_end: float, h: float, sample_times: Optional[Sequence[float]]
) -> tuple[np.ndarray, np.ndarray]:
    """All step boundary times, and which of them are recorded."""
    grid = np.arange(0.0, t_end, h)
    pieces = [grid, np.array([t_end])]
    if sample_times is not None:
        extra = np.asarray(sample_times, dtype=float)
        if extra.size:
            if extra.min() < 0.0 or extra.max() > t_end + 1e-12:
                raise ModelError("sample times must lie within [0, t_end]")
            pieces.append(np.clip(extra, 0.0, t_end))
        record = np.unique(
            np.concatenate([np.array([0.0, t_end]), np.asarray(sample_times, float)])
        )
    else:
        record = None
    bounds = np.unique(np.concatenate(pieces))
    # collapse boundaries closer than float resolution allows
    keep = np.ones(len(bounds), dtype=bool)
    keep[1:] = np.diff(bounds) > 1e-12 * max(1.0, t_end)
    bounds = bounds[keep]
    if record is None:
        record = bounds
    else:
        keep = np.ones(len(record), dtype=bool)
        keep[1:] = np.diff(record) > 1e-12 * max(1.0, t_end)
        record = record[keep]
    return bounds, record


def integrate(
    field: VectorField,
    phi0,
    t_end: float,
    step: Optional[float] = None,
    sample_times: Optional[Sequence[float]] = None,
) -> Trajectory:
    """Integrate dphi/dt = field(phi) from phi0 over [0, t_end].

    Output is sampled at ``sample_times`` plus both endpoints; when no
    sample times are given, every step boundary is recorded.
    """
    if not t_end > 0:
        raise ModelError(f"t_end must be positive, got {t_end}")
    y = check_occupancy(phi0).copy()
    h = step if step is not None else min(0.1, t_end / 1000.0)
    if not h > 0:
        raise ModelError(f"step must be positive, got {h}")
    bounds, record = _step_boundaries(t_end, h, sample_times)

    record_idx = 0
    times: list[float] = []
    states: list[np.ndarray] = []

    def maybe_record(t: float) -> None:
        nonlocal record_idx
        while record_idx < len(record) and record[record_idx] <= t + 1e-12 * max(1.0, t_end):
            times.append(float(record[record_idx]))
            states.append(y.copy())
            record_idx += 1

    maybe_record(0.0)
    for idx in range(len(bounds) - 1):
        t0, t1 = bounds[idx], bounds[idx + 1]
        dt = t1 - t0
        k1 = np.asarray(field(y), dtype=float)
        k2 = np.asarray(field(y + 0.5 * dt * k1), dtype=float)
        k3 = np.asarray(field(y + 0.5 * dt * k2), dtype=float)
        k4 = np.asarray(field(y + dt * k3), dtype=float)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NumericsError(
                f"integration produced a non-finite state at t={t1}"
            )
        low = float(y.min())
        if low < -1e-9:
            raise NumericsError(
                f"integration left the simplex at t={t1}: component {low}"
            )
        np.clip(y, 0.0, None, out=y)
        y /= y.sum()
        maybe_record(t1)
    return Trajectory(
        times=np.array(times),
        states=np.array(states),
        kind=field.kind,
        N=field.N,
        step=h,
    )


def solve(
    model: ModelSpec,
    variant: str,
    N: Optional[float],
    phi0,
    t_end: float,
    sample_times: Optional[Sequence[float]] = None,
    step: Optional[float] = None,
    tau: float = 1e-10,
) -> Trajectory:
    """Integrate one of the model's deterministic approximations.

    variant is 'drift', 'meandrift' (with truncation tolerance tau), or
    'limit' (N is ignored; declared limit rates are used when present,
    numeric stabilization otherwise).
    """
    if variant == "drift":
        if N is None:
            raise ModelError("variant 'drift' needs N")
        field = drift_field(model, N)
    elif variant == "meandrift":
        if N is None:
            raise ModelError("variant 'meandrift' needs N")
        field = mean_drift_field(model, N, tau=tau)
    elif variant == "limit":
        mode = "declared" if model.has_limit else "numeric"
        field = limit_field(model, mode=mode)
    else:
        raise ModelError(f"unknown variant {variant!r}")
    return integrate(field, phi0, t_end, step=step, sample_times=sample_times)
