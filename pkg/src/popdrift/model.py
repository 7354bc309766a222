"""Population model definitions.

A model is a finite set of agent states, named parameters, and per
ordered state pair a transition rate expression over the parameters,
the population size ``N`` and the occupancy vector ``m``.  Missing
pairs default to rate zero.  A model may additionally declare
population-limit rates, which must not reference ``N``.

Models are specified either in code or as a small line-oriented
document:

    # comment
    states = idle, backoff
    param p1 = 0.008
    rate idle -> backoff : p1*(1 - pow(1-p1/2, N*m[idle]))
    limit idle -> backoff : p1
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from . import expr as ex
from .errors import ModelError, RateError, SlotResolutionError

__all__ = [
    "ModelSpec",
    "ValidationReport",
    "load_model",
    "builtin_example",
    "builtin_example_text",
    "rate",
    "slot_probability",
    "validate",
    "check_occupancy",
    "check_counts",
    "largest_remainder_counts",
    "sample_simplex",
]

_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")

# Compiled rate functions take (N, m) with m indexable by state
# position; entries may be floats or broadcastable numpy arrays.
RateFn = Callable[[float, Sequence], object]


@dataclass(frozen=True)
class ModelSpec:
    """A population model: states, parameters, and rate expressions.

    ``rates`` and ``limit_rates`` map ordered state-name pairs to
    expression ASTs.  ``limit_rates=None`` means no limit model was
    declared; an empty mapping declares an identically-zero limit.
    """

    state_names: tuple[str, ...]
    params: Mapping[str, float]
    rates: Mapping[tuple[str, str], ex.Expr]
    limit_rates: Optional[Mapping[tuple[str, str], ex.Expr]] = None

    _index: Mapping[str, int] = field(init=False, repr=False, compare=False)
    _rate_fns: tuple = field(init=False, repr=False, compare=False)
    _limit_fns: Optional[tuple] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        names = self.state_names
        if len(names) < 2:
            raise ModelError("a model needs at least two states")
        if len(set(names)) != len(names):
            raise ModelError("state names must be distinct")
        for name in names:
            if not _IDENT_RE.match(name):
                raise ModelError(f"invalid state name {name!r}")
        for pname in self.params:
            if pname == "N":
                raise ModelError("parameter name 'N' is reserved")
            if not _IDENT_RE.match(pname):
                raise ModelError(f"invalid parameter name {pname!r}")
        index = {s: i for i, s in enumerate(names)}
        object.__setattr__(self, "_index", index)
        object.__setattr__(
            self, "_rate_fns", self._compile_table(self.rates, allow_n=True)
        )
        limit = None
        if self.limit_rates is not None:
            limit = self._compile_table(self.limit_rates, allow_n=False)
        object.__setattr__(self, "_limit_fns", limit)

    def _compile_table(self, table, allow_n: bool):
        compiled = []
        for (s, t), node in table.items():
            if s not in self._index or t not in self._index:
                unknown = s if s not in self._index else t
                raise ModelError(f"rate references unknown state {unknown!r}")
            if s == t:
                raise ModelError(f"self-loop rate {s} -> {t} is not allowed")
            for var in ex.free_vars(node):
                if var.startswith("m["):
                    state = var[2:-1]
                    if state not in self._index:
                        raise ModelError(
                            f"rate {s} -> {t} uses unknown state in {var}"
                        )
                elif var == "N":
                    if not allow_n:
                        raise ModelError(
                            f"limit rate {s} -> {t} must not reference N"
                        )
                elif var not in self.params:
                    raise ModelError(
                        f"rate {s} -> {t} uses undeclared parameter {var!r}"
                    )
            fn = ex.compile_fn(node, self.params, self._index)
            compiled.append((self._index[s], self._index[t], fn, node))
        # canonical order: by (source, target) index
        compiled.sort(key=lambda item: (item[0], item[1]))
        return tuple(compiled)

    @property
    def n_states(self) -> int:
        return len(self.state_names)

    def index_of(self, state: str) -> int:
        try:
            return self._index[state]
        except KeyError:
            raise ModelError(f"unknown state {state!r}") from None

    def transitions(self) -> tuple:
        """Declared transitions as (source_index, target_index, rate_fn)."""
        return tuple((i, j, fn) for i, j, fn, _ in self._rate_fns)

    def limit_transitions(self) -> tuple:
        if self._limit_fns is None:
            raise ModelError("model declares no limit rates")
        return tuple((i, j, fn) for i, j, fn, _ in self._limit_fns)

    @property
    def has_limit(self) -> bool:
        return self.limit_rates is not None

    def rate_expr(self, s: str, t: str) -> ex.Expr:
        """Rate expression for an ordered pair; zero when undeclared."""
        if s == t:
            raise ModelError("rates are defined for distinct state pairs")
        self.index_of(s)
        self.index_of(t)
        return self.rates.get((s, t), ex.Num(0.0))


def check_occupancy(m, n_states: Optional[int] = None) -> np.ndarray:
    """Validate an occupancy vector: entries >= 0, sum 1 within 1e-12."""
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 1:
        raise ModelError("occupancy must be a flat vector")
    if n_states is not None and arr.shape[0] != n_states:
        raise ModelError(
            f"occupancy has {arr.shape[0]} entries, model has {n_states} states"
        )
    if not np.all(np.isfinite(arr)):
        raise ModelError("occupancy entries must be finite")
    if np.any(arr < 0):
        raise ModelError("occupancy entries must be non-negative")
    if abs(float(arr.sum()) - 1.0) > 1e-12:
        raise ModelError(f"occupancy must sum to 1, got {float(arr.sum())!r}")
    return arr


def check_counts(counts, N: int, n_states: Optional[int] = None) -> np.ndarray:
    """Validate a count vector: non-negative integers summing to N."""
    arr = np.asarray(counts)
    if arr.ndim != 1:
        raise ModelError("counts must be a flat vector")
    if n_states is not None and arr.shape[0] != n_states:
        raise ModelError(
            f"counts have {arr.shape[0]} entries, model has {n_states} states"
        )
    if not np.all(arr == np.floor(arr)):
        raise ModelError("counts must be integers")
    arr = arr.astype(np.int64)
    if np.any(arr < 0):
        raise ModelError("counts must be non-negative")
    if int(arr.sum()) != N:
        raise ModelError(f"counts must sum to N={N}, got {int(arr.sum())}")
    return arr


def largest_remainder_counts(m, N: int) -> np.ndarray:
    """Round N*m to an integer count vector by largest remainder.

    Ties are broken toward the lowest state index, so the result is
    deterministic.
    """
    arr = check_occupancy(m)
    scaled = N * arr
    base = np.floor(scaled).astype(np.int64)
    missing = int(N - base.sum())
    if missing > 0:
        order = np.argsort(-(scaled - base), kind="stable")
        base[order[:missing]] += 1
    return base


def rate(model: ModelSpec, N: float, m, s: str, t: str) -> float:
    """Evaluate the transition rate for one agent in state s toward t.

    The result must be finite and non-negative; anything else raises
    RateError identifying the transition and the occupancy.
    """
    if s == t:
        raise ModelError("rates are defined for distinct state pairs")
    i = model.index_of(s)
    j = model.index_of(t)
    for ti, tj, fn, node in model._rate_fns:
        if (ti, tj) == (i, j):
            with np.errstate(all="ignore"):
                value = float(fn(N, np.asarray(m, dtype=float)))
            if not math.isfinite(value):
                raise RateError(s, t, m, f"evaluated to {value}")
            if value < 0.0:
                raise RateError(s, t, m, f"evaluated to negative value {value}")
            return value
    return 0.0


def slot_probability(
    model: ModelSpec, N: float, m, s: str, t: str, D: int
) -> float:
    """Per-agent transition probability in one slot of width 1/D.

    The probability is rate/D clipped to [0, 1].  If the total
    probability of leaving s in one slot exceeds 1 the slot width is
    too coarse and SlotResolutionError suggests a larger D.
    """
    if D <= 0:
        raise ModelError("slot count D must be positive")
    i = model.index_of(s)
    model.index_of(t)
    eps = 1.0 / D
    total = 0.0
    wanted = 0.0
    arr = np.asarray(m, dtype=float)
    for ti, tj, fn, _ in model._rate_fns:
        if ti != i:
            continue
        target = model.state_names[tj]
        q = rate(model, N, arr, s, target)
        total += eps * q
        if target == t:
            wanted = eps * q
    if total > 1.0:
        raise SlotResolutionError(
            f"total slot probability {total:.6g} out of state {s} exceeds 1; "
            f"increase D above {math.ceil(D * total)}"
        )
    return min(1.0, max(0.0, wanted))


def sample_simplex(n_states: int, count: int, seed: int) -> np.ndarray:
    """Deterministic low-discrepancy sample of occupancy vectors.

    Scrambled Halton points are mapped through coordinate-wise
    exponentials and normalized, which distributes them uniformly over
    the simplex.  Returns an array of shape (count, n_states).
    """
    from scipy.stats import qmc

    sampler = qmc.Halton(d=n_states, scramble=True, seed=seed)
    u = sampler.random(count)
    x = -np.log1p(-np.clip(u, 0.0, 1.0 - 1e-15))
    totals = x.sum(axis=1, keepdims=True)
    totals[totals == 0.0] = 1.0
    x /= totals
    return x


@dataclass(frozen=True)
class ValidationReport:
    """Outcome of sampling-based model validation.

    ``lipschitz_estimate`` is the largest drift increment ratio over
    consecutive sampled occupancy pairs; ``bound_estimate`` the largest
    drift norm seen.  Rates above 1 are legal (rates are not
    probabilities) but flagged, since they often indicate a modelling
    slip.
    """

    N: float
    sample_count: int
    nonnegative: bool
    lipschitz_estimate: float
    bound_estimate: float
    max_rate: float
    rate_warning: bool
    failures: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return self.nonnegative and not self.failures


def validate(
    model: ModelSpec, N: float, sample_count: int = 1000, seed: int = 0
) -> ValidationReport:
    """Probe a model on quasi-random occupancies.

    Checks that every declared rate is finite and non-negative, and
    estimates the drift's Lipschitz constant and bound from consecutive
    sample pairs.
    """
    from .drift import drift

    if sample_count < 2:
        raise ModelError("sample_count must be at least 2")
    points = sample_simplex(model.n_states, sample_count, seed)
    failures: list[str] = []
    max_rate = 0.0
    bound = 0.0
    lipschitz = 0.0
    drifts = np.full((sample_count, model.n_states), np.nan)
    for k, m in enumerate(points):
        point_ok = True
        for i, j, fn in model.transitions():
            s, t = model.state_names[i], model.state_names[j]
            try:
                q = rate(model, N, m, s, t)
            except ModelError as err:
                point_ok = False
                if len(failures) < 10:
                    failures.append(str(err))
                continue
            max_rate = max(max_rate, q)
        if point_ok:
            vec = drift(model, N, m)
            drifts[k] = vec
            bound = max(bound, float(np.linalg.norm(vec)))
    for k in range(sample_count - 1):
        if np.any(np.isnan(drifts[k])) or np.any(np.isnan(drifts[k + 1])):
            continue
        gap = float(np.linalg.norm(points[k + 1] - points[k]))
        if gap == 0.0:
            continue
        ratio = float(np.linalg.norm(drifts[k + 1] - drifts[k])) / gap
        lipschitz = max(lipschitz, ratio)
    return ValidationReport(
        N=N,
        sample_count=sample_count,
        nonnegative=not failures,
        lipschitz_estimate=lipschitz,
        bound_estimate=bound,
        max_rate=max_rate,
        rate_warning=max_rate > 1.0,
        failures=tuple(failures),
    )


_LINE_STATES = re.compile(r"states\s*=\s*(.+)\Z")
_LINE_PARAM = re.compile(r"param\s+([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(\S+)\Z")
_LINE_RATE = re.compile(
    r"(rate|limit)\s+([A-Za-z_][A-Za-z0-9_]*)\s*->\s*"
    r"([A-Za-z_][A-Za-z0-9_]*)\s*:\s*(.+)\Z"
)


def load_model(document: str) -> ModelSpec:
    """Parse a model document into a ModelSpec.

    Problems are reported with their 1-based line number.
    """
    states: Optional[tuple[str, ...]] = None
    params: dict[str, float] = {}
    rates: dict[tuple[str, str], ex.Expr] = {}
    limits: dict[tuple[str, str], ex.Expr] = {}
    saw_limit = False

    for lineno, raw in enumerate(document.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        match = _LINE_STATES.fullmatch(line)
        if match:
            if states is not None:
                raise ModelError(f"line {lineno}: duplicate states line")
            names = tuple(part.strip() for part in match.group(1).split(","))
            for name in names:
                if not _IDENT_RE.match(name):
                    raise ModelError(
                        f"line {lineno}: invalid state name {name!r}"
                    )
            if len(names) != len(set(names)):
                raise ModelError(f"line {lineno}: repeated state name")
            states = names
            continue
        match = _LINE_PARAM.fullmatch(line)
        if match:
            name, text = match.group(1), match.group(2)
            if name in params:
                raise ModelError(f"line {lineno}: duplicate param {name!r}")
            if name == "N":
                raise ModelError(f"line {lineno}: parameter name 'N' is reserved")
            try:
                value = float(text)
            except ValueError:
                raise ModelError(
                    f"line {lineno}: param {name!r} needs a numeric value, "
                    f"got {text!r}"
                ) from None
            params[name] = value
            continue
        match = _LINE_RATE.fullmatch(line)
        if match:
            kind, src, dst, text = match.groups()
            table = rates if kind == "rate" else limits
            if kind == "limit":
                saw_limit = True
            if (src, dst) in table:
                raise ModelError(
                    f"line {lineno}: duplicate {kind} {src} -> {dst}"
                )
            try:
                node = ex.parse(text)
            except ex.ExprSyntaxError as err:
                raise ModelError(f"line {lineno}: {err}") from None
            table[(src, dst)] = node
            continue
        raise ModelError(f"line {lineno}: unrecognized directive {line!r}")

    if states is None:
        raise ModelError("model declares no states line")
    try:
        return ModelSpec(
            state_names=states,
            params=params,
            rates=rates,
            limit_rates=limits if saw_limit else None,
        )
    except ModelError:
        raise
    except ex.ExprError as err:
        raise ModelError(str(err)) from None


def builtin_example_text() -> str:
    """Document text of the bundled saturated-channel model."""
    return (
        resources.files("popdrift.data")
        .joinpath("saturated_channel.pop")
        .read_text(encoding="utf-8")
    )


def builtin_example() -> ModelSpec:
    """Two-state saturated-channel contention model.

    States idle/backoff with p1 = 0.008, p2 = 0.05; the success
    probability of a transmission attempt decays geometrically in the
    number of competing agents, and in the large-population limit every
    attempt collides.
    """
    return load_model(builtin_example_text())
