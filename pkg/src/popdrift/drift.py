"""Drift vector fields of population models.

The drift at occupancy m sums, over declared transitions s -> t, the
intensity m_s * rate(s, t, m) applied to the unit direction
e_t - e_s.  Coordinates therefore always sum to zero and the simplex
is forward-invariant for the induced ODE.

The population limit drift is available two ways: from declared limit
rates, or numerically by evaluating the finite-N drift along doubling
N until it stalls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ModelError, NumericsError, RateError
from .model import ModelSpec

__all__ = [
    "VectorField",
    "intensity",
    "drift",
    "limit_drift",
    "drift_field",
    "limit_field",
]


@dataclass(frozen=True)
class VectorField:
    """A vector field on the occupancy simplex with provenance metadata.

    ``kind`` is one of 'drift', 'mean-drift', 'limit'; ``N`` is the
    population size the field was built for (None for limit fields).
    """

    kind: str
    N: Optional[float]
    fn: Callable[[np.ndarray], np.ndarray] = field(compare=False)

    def __call__(self, m: np.ndarray) -> np.ndarray:
        return self.fn(m)


def _checked_rate(model: ModelSpec, N: float, m: np.ndarray, i: int, j: int, fn) -> float:
    with np.errstate(all="ignore"):
        value = float(fn(N, m))
    if not math.isfinite(value) or value < 0.0:
        raise RateError(
            model.state_names[i], model.state_names[j], m,
            f"evaluated to {value}",
        )
    return value


def intensity(model: ModelSpec, N: float, m, s: str, t: str) -> float:
    """Transition intensity m_s * rate(s, t).  Zero when m_s is zero.

    The short-circuit makes the intensity well defined even where the
    bare rate expression is singular in an empty state.
    """
    i = model.index_of(s)
    j = model.index_of(t)
    arr = np.asarray(m, dtype=float)
    if arr[i] == 0.0:
        return 0.0
    for ti, tj, fn in model.transitions():
        if (ti, tj) == (i, j):
            return float(arr[i]) * _checked_rate(model, N, arr, i, j, fn)
    return 0.0


def drift(model: ModelSpec, N: float, m) -> np.ndarray:
    """Drift vector at occupancy m for population size N."""
    arr = np.asarray(m, dtype=float)
    out = np.zeros(model.n_states)
    for i, j, fn in model.transitions():
        if arr[i] == 0.0:
            continue
        flow = float(arr[i]) * _checked_rate(model, N, arr, i, j, fn)
        out[i] -= flow
        out[j] += flow
    return out


def _declared_limit_drift(model: ModelSpec, arr: np.ndarray) -> np.ndarray:
    out = np.zeros(model.n_states)
    for i, j, fn in model.limit_transitions():
        if arr[i] == 0.0:
            continue
        flow = float(arr[i]) * _checked_rate(model, math.nan, arr, i, j, fn)
        out[i] -= flow
        out[j] += flow
    return out


def limit_drift(model: ModelSpec, m, mode: str = "declared") -> np.ndarray:
    """Population-limit drift at occupancy m.

    mode='declared' uses the model's limit rates.  mode='numeric'
    evaluates the finite-N drift at N = 2^7, 2^8, ... until successive
    values differ by less than 1e-9 in max norm, and raises
    NumericsError if that never happens by 2^20.
    """
    arr = np.asarray(m, dtype=float)
    if mode == "declared":
        return _declared_limit_drift(model, arr)
    if mode != "numeric":
        raise ModelError(f"unknown limit mode {mode!r}")
    prev: Optional[np.ndarray] = None
    for k in range(7, 21):
        cur = drift(model, float(2**k), arr)
        if prev is not None and float(np.max(np.abs(cur - prev))) < 1e-9:
            return cur
        prev = cur
    raise NumericsError(
        "finite-N drift did not stabilize by N=2^20; "
        "declare limit rates explicitly"
    )


def drift_field(model: ModelSpec, N: float) -> VectorField:
    """The finite-N drift as a reusable vector field."""
    return VectorField(kind="drift", N=N, fn=lambda m: drift(model, N, m))


def limit_field(model: ModelSpec, mode: str = "declared") -> VectorField:
    """The population-limit drift as a reusable vector field."""
    if mode == "declared" and not model.has_limit:
        raise ModelError(
            "model declares no limit rates; use mode='numeric'"
        )
    return VectorField(
        kind="limit", N=None, fn=lambda m: limit_drift(model, m, mode=mode)
    )
