"""Poisson-averaged mean drift.

The mean drift replaces each intensity m_s * Q(m) by its expectation
under independent Poisson coordinates K_i with means N*m_i:

    E[(K_s/N) * Q(K_1/N, ..., K_I/N)]

evaluated by truncated rectangular enumeration.  Each coordinate's
Poisson pmf is truncated to a window around its mode holding all but
tau/(2I) of the mass, which bounds the neglected joint mass by tau.
Lattice points with K_s = 0 contribute nothing (the intensity factor
vanishes), so rates singular in an empty state stay harmless.

For rates that depend on a single occupancy coordinate there is a
one-dimensional fast path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .drift import VectorField
from .errors import ModelError, NumericsError, RateError
from .model import ModelSpec

__all__ = [
    "PoissonWeights",
    "poisson_weights",
    "poisson_mean_intensity",
    "mean_drift",
    "simple_poisson_mean",
    "mean_drift_field",
    "LATTICE_POINT_CAP",
]

LATTICE_POINT_CAP = 10**8

# chunk size (lattice points) for the rectangular sum, to bound peak
# memory while keeping numpy batches large
_CHUNK = 1 << 22


@dataclass(frozen=True)
class PoissonWeights:
    """Truncated Poisson pmf: probs[k - k_min] = P(K = k).

    ``tail`` is the mass left outside the window, at most the requested
    tolerance (up to float accumulation).
    """

    lam: float
    k_min: int
    probs: np.ndarray
    tail: float

    @property
    def k_max(self) -> int:
        return self.k_min + len(self.probs) - 1

    def support(self) -> np.ndarray:
        return self.k_min + np.arange(len(self.probs))


def poisson_weights(lam: float, tau: float) -> PoissonWeights:
    """Poisson pmf window covering at least 1-tau of the mass.

    Probabilities are built by the recurrence p_{k+1} = p_k*lam/(k+1)
    outward from the mode, which stays in range for any lam a float
    can hold.
    """
    if lam < 0:
        raise ModelError(f"Poisson rate must be non-negative, got {lam}")
    if not 0 < tau < 1:
        raise ModelError(f"tail tolerance must be in (0, 1), got {tau}")
    if lam == 0.0:
        return PoissonWeights(lam=0.0, k_min=0, probs=np.array([1.0]), tail=0.0)
    mode = int(math.floor(lam))
    p_mode = math.exp(mode * math.log(lam) - lam - math.lgamma(mode + 1))
    below: list[float] = []  # k = mode-1, mode-2, ...
    above: list[float] = []  # k = mode+1, mode+2, ...
    total = p_mode
    lo, hi = mode, mode
    p_lo, p_hi = p_mode, p_mode
    while total < 1.0 - tau:
        cand_down = p_lo * lo / lam if lo > 0 else 0.0
        cand_up = p_hi * lam / (hi + 1)
        if cand_down == 0.0 and cand_up == 0.0:
            break  # mass is numerically exhausted
        if cand_down >= cand_up:
            lo -= 1
            p_lo = cand_down
            below.append(cand_down)
            total += cand_down
        else:
            hi += 1
            p_hi = cand_up
            above.append(cand_up)
            total += cand_up
    probs = np.array(below[::-1] + [p_mode] + above)
    return PoissonWeights(
        lam=lam, k_min=lo, probs=probs, tail=max(0.0, 1.0 - total)
    )


def _pair_fn(model: ModelSpec, s: str, t: str):
    if s == t:
        raise ModelError("rates are defined for distinct state pairs")
    i = model.index_of(s)
    j = model.index_of(t)
    for ti, tj, fn in model.transitions():
        if (ti, tj) == (i, j):
            return i, j, fn
    return i, j, None


def _window_lattice_sum(
    model: ModelSpec, N: float, windows, i: int, fn, s: str, t: str
) -> float:
    """Sum (k_i/N) * Q(k/N) * prod(weights) over the window rectangle.

    Evaluates in chunks along coordinate 0 with a fixed accumulation
    order, so results do not depend on chunk size.
    """
    n_states = model.n_states
    sizes = [len(w.probs) for w in windows]
    points = math.prod(sizes)
    if points > LATTICE_POINT_CAP:
        raise NumericsError(
            f"mean intensity enumeration needs {points} lattice points "
            f"(cap {LATTICE_POINT_CAP}); use the single-coordinate fast "
            f"path or a larger tail tolerance"
        )
    rest = math.prod(sizes[1:])
    chunk0 = max(1, min(sizes[0], _CHUNK // max(rest, 1)))

    def shaped(arr: np.ndarray, axis: int) -> np.ndarray:
        shape = [1] * n_states
        shape[axis] = len(arr)
        return arr.reshape(shape)

    supports = [w.support().astype(float) for w in windows]
    total = 0.0
    for start in range(0, sizes[0], chunk0):
        stop = min(sizes[0], start + chunk0)
        coords = []
        for c in range(n_states):
            sup = supports[c][start:stop] if c == 0 else supports[c]
            coords.append(shaped(sup / N, c))
        with np.errstate(all="ignore"):
            q = np.broadcast_to(
                fn(N, coords), tuple(len(c.ravel()) for c in coords)
            ).copy()
        # zero out the k_i = 0 face before weighting: those points
        # contribute nothing and the rate may be singular there
        if i == 0:
            if start == 0 and windows[0].k_min == 0:
                q[0, ...] = 0.0
        elif windows[i].k_min == 0:
            index = [slice(None)] * n_states
            index[i] = 0
            q[tuple(index)] = 0.0
        if not np.all(np.isfinite(q)):
            bad = np.argwhere(~np.isfinite(q))[0]
            point = [
                float(coords[c].ravel()[bad[c]]) for c in range(n_states)
            ]
            raise RateError(s, t, point, "evaluated to a non-finite value")
        if np.any(q < 0):
            bad = np.argwhere(q < 0)[0]
            point = [
                float(coords[c].ravel()[bad[c]]) for c in range(n_states)
            ]
            raise RateError(s, t, point, "evaluated to a negative value")
        part = q
        for c in range(n_states):
            w = windows[c].probs[start:stop] if c == 0 else windows[c].probs
            part = part * shaped(w, c)
        part = part * (coords[i])  # intensity factor k_i/N
        total += float(part.sum())
    return total


def _clamped(x: float) -> float:
    # ODE stage points may sit a rounding error below the simplex
    # boundary; treat those as boundary, reject anything worse
    if x < 0.0:
        if x < -1e-9:
            raise ModelError(f"occupancy coordinate {x} is negative")
        return 0.0
    return x


def _coordinate_windows(model: ModelSpec, N: float, m, tau: float):
    arr = np.asarray(m, dtype=float)
    budget = tau / (2 * model.n_states)
    windows = [poisson_weights(N * _clamped(float(x)), budget) for x in arr]
    return arr, windows


def poisson_mean_intensity(
    model: ModelSpec, N: float, m, s: str, t: str, tau: float = 1e-10
) -> float:
    """Expectation of the intensity under Poisson coordinate counts.

    Truncated so the neglected joint tail mass is at most tau.  Raises
    NumericsError when the rectangular enumeration would exceed the
    lattice point cap.
    """
    i, _, fn = _pair_fn(model, s, t)
    if fn is None:
        return 0.0
    _, windows = _coordinate_windows(model, N, m, tau)
    return _window_lattice_sum(model, N, windows, i, fn, s, t)


def mean_drift(model: ModelSpec, N: float, m, tau: float = 1e-10) -> np.ndarray:
    """Mean drift vector: Poisson-averaged intensities on e_t - e_s."""
    arr, windows = _coordinate_windows(model, N, m, tau)
    out = np.zeros(model.n_states)
    for i, j, fn in model.transitions():
        s, t = model.state_names[i], model.state_names[j]
        value = _window_lattice_sum(model, N, windows, i, fn, s, t)
        out[i] -= value
        out[j] += value
    return out


def simple_poisson_mean(
    model: ModelSpec,
    N: float,
    m,
    s: str,
    t: str,
    j: str,
    tau: float = 1e-10,
) -> float:
    """One-dimensional fast path for rates depending only on m[j].

    Computes m_s * sum_k Q((k/N) e_j) * P(K_j = k) over the truncated
    window.  The precondition that the rate reads no other occupancy
    coordinate is checked via its free variables.
    """
    from . import expr as ex

    i = model.index_of(s)
    model.index_of(t)
    jdx = model.index_of(j)
    node = model.rate_expr(s, t)
    occ_vars = [v for v in ex.free_vars(node) if v.startswith("m[")]
    allowed = f"m[{j}]"
    extra = [v for v in occ_vars if v != allowed]
    if extra:
        raise ModelError(
            f"rate {s} -> {t} depends on {', '.join(extra)}, not only on "
            f"{allowed}; use poisson_mean_intensity"
        )
    _, _, fn = _pair_fn(model, s, t)
    if fn is None:
        return 0.0
    arr = np.asarray(m, dtype=float)
    w = poisson_weights(N * _clamped(float(arr[jdx])), tau)
    coords: list = [0.0] * model.n_states
    coords[jdx] = w.support() / N
    with np.errstate(all="ignore"):
        q = np.broadcast_to(np.asarray(fn(N, coords), dtype=float), w.probs.shape)
    if not np.all(np.isfinite(q)) or np.any(q < 0):
        raise RateError(s, t, arr, "evaluated to an invalid value on the window")
    return float(arr[i]) * float(np.dot(q, w.probs))


def mean_drift_field(
    model: ModelSpec, N: float, tau: float = 1e-10
) -> VectorField:
    """The mean drift as a reusable vector field."""
    return VectorField(
        kind="mean-drift", N=N, fn=lambda m: mean_drift(model, N, m, tau=tau)
    )
