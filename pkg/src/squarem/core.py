"""Plain fixed-point iteration and squared extrapolation (SQUAREM).

Both drivers take a :class:`FixedPointProblem` wrapping one step of an
EM/MM-like algorithm plus an optional objective to *minimize* (usually a
negative log-likelihood), and return a :class:`ConvergenceReport`.

Steplengths use the negative sign convention: ``alpha = -1`` makes the
extrapolated point identical to two plain map steps, and more negative
values extrapolate further along the secant direction.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

ArrayMap = Callable[[np.ndarray], np.ndarray]


class MapFailure(RuntimeError):
    """The fixed-point map raised or produced non-finite values."""


class Termination(enum.Enum):
    TOLERANCE_MET = "ToleranceMet"
    MAXITER_REACHED = "MaxIterReached"
    MAP_FAILURE = "MapFailure"


def _all_finite(x: np.ndarray) -> bool:
    return bool(np.isfinite(x).all())


def _norm(x: np.ndarray) -> float:
    return math.sqrt(float(x @ x))


@dataclass(frozen=True)
class FixedPointProblem:
    """A fixed-point map, an optional objective to minimize, and a domain test.

    ``map`` and ``objective`` must be pure: the engine may call them from
    several runs at once and relies on ``map(x)`` being reproducible.
    """

    map: ArrayMap
    objective: Optional[Callable[[np.ndarray], float]] = None
    feasible: Callable[[np.ndarray], bool] = _all_finite


@dataclass(frozen=True)
class SquaremSettings:
    tol: float = 1e-7
    maxiter: int = 1500
    method: int = 3
    objfn_inc: float = 1.0
    step_min0: float = -1.0
    step_max_growth: float = 4.0
    K: int = 1

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if int(self.maxiter) != self.maxiter or self.maxiter < 1:
            raise ValueError(f"maxiter must be a positive integer, got {self.maxiter}")
        if self.method not in (1, 2, 3):
            raise ValueError(f"method must be 1, 2 or 3, got {self.method}")
        if math.isnan(self.objfn_inc) or self.objfn_inc < 0:
            raise ValueError(f"objfn_inc must be >= 0 or inf, got {self.objfn_inc}")
        if not self.step_min0 < 0:
            raise ValueError(f"step_min0 must be negative, got {self.step_min0}")
        if not self.step_max_growth > 1:
            raise ValueError(f"step_max_growth must exceed 1, got {self.step_max_growth}")
        if self.K != 1:
            raise ValueError("only first-order squared schemes (K=1) are supported")


@dataclass
class ConvergenceReport:
    par: np.ndarray
    value_objfn: Optional[float]
    iter: Optional[int]
    fpevals: int
    objfevals: int
    convergence: bool
    termination: Termination

    def __str__(self):
        lines = [
            f"par          {np.array2string(self.par, precision=7, max_line_width=100, threshold=20, edgeitems=4)}",
            f"value.objfn  {self.value_objfn}",
        ]
        if self.iter is not None:
            lines.append(f"iter         {self.iter}")
        lines += [
            f"fpevals      {self.fpevals}",
            f"objfevals    {self.objfevals}",
            f"convergence  {self.convergence}",
            f"termination  {self.termination.value}",
        ]
        return "\n".join(lines)


class TraceRecord(NamedTuple):
    fpevals: int
    objective: Optional[float]
    residual: float
    par: np.ndarray


@dataclass
class IterationTrace:
    """Per-iteration progress; ``fpevals`` is strictly increasing."""

    records: list = field(default_factory=list)

    def append(self, fpevals, objective, residual, par):
        if self.records and fpevals <= self.records[-1].fpevals:
            raise ValueError("trace fpevals must be strictly increasing")
        self.records.append(TraceRecord(fpevals, objective, float(residual), np.array(par, copy=True)))

    def __len__(self):
        return len(self.records)

    def errors(self, reference: np.ndarray) -> np.ndarray:
        """Euclidean distance of every recorded iterate to ``reference``."""
        return np.array([np.linalg.norm(r.par - reference) for r in self.records])


class _CountingMap:
    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        try:
            y = self.fn(x)
        except MapFailure:
            raise
        except Exception as exc:  # noqa: BLE001 - any user error is a map failure
            raise MapFailure(str(exc)) from exc
        if type(y) is not np.ndarray or y.dtype != np.float64:
            y = np.asarray(y, dtype=float)
        if y.shape != x.shape:
            raise MapFailure(f"map changed parameter shape {x.shape} -> {y.shape}")
        if not _all_finite(y):
            raise MapFailure("map returned non-finite values")
        return y


def _safe_objective(objective, x):
    try:
        value = float(objective(x))
    except Exception:  # noqa: BLE001
        return math.nan
    return value


def compute_steplength(r: np.ndarray, v: np.ndarray, method: int = 3) -> float:
    """Unclamped steplength for residual ``r`` and second difference ``v``.

    Method 3 (default) is ``-||r||/||v||``; methods 1 and 2 are the two
    Barzilai-Borwein-type ratios. Degenerate denominators give ``-1``.
    """
    rr = float(np.dot(r, r))
    vv = float(np.dot(v, v))
    rv = float(np.dot(r, v))
    if method == 1:
        return -rv / vv if vv > 0 else -1.0
    if method == 2:
        return -rr / rv if rv != 0 else -1.0
    if method == 3:
        return -math.sqrt(rr / vv) if vv > 0 else -1.0
    raise ValueError(f"unknown steplength method {method}")


def clamp_steplength(alpha: float, step_lower: float) -> float:
    """Restrict ``alpha`` to ``[step_lower, -1]``; NaN maps to -1."""
    if math.isnan(alpha):
        return -1.0
    return max(step_lower, min(-1.0, alpha))


def extrapolate(theta0: np.ndarray, r: np.ndarray, v: np.ndarray, alpha: float) -> np.ndarray:
    return theta0 - 2.0 * alpha * r + alpha * alpha * v


class Acceptance(NamedTuple):
    accepted: bool
    chosen: np.ndarray
    objfevals: int
    value: Optional[float]


def accept_candidate(problem: FixedPointProblem, candidate, fallback, reference, eta) -> Acceptance:
    """Monotonicity guard for an extrapolated candidate.

    The candidate is kept when it is finite, feasible, and its objective
    does not exceed ``reference + eta``. With no objective, or with
    ``eta = inf``, any finite feasible candidate is kept without
    evaluating anything. ``value`` is the candidate's objective when it
    was computed.
    """
    if not _all_finite(candidate) or not problem.feasible(candidate):
        return Acceptance(False, fallback, 0, None)
    if problem.objective is None or math.isinf(eta):
        return Acceptance(True, candidate, 0, None)
    value = _safe_objective(problem.objective, candidate)
    if math.isfinite(value) and value <= reference + eta:
        return Acceptance(True, candidate, 1, value)
    return Acceptance(False, fallback, 1, value)


def fixed_point_run(problem: FixedPointProblem, start, settings: SquaremSettings | None = None,
                    trace: IterationTrace | None = None) -> ConvergenceReport:
    """Iterate ``theta <- F(theta)`` until ``||F(theta) - theta|| < tol``.

    ``maxiter`` caps the number of map evaluations. On convergence the
    reported ``par`` is the last input to the map, as in the usual
    ``fpiter`` convention.
    """
    settings = settings or SquaremSettings()
    fmap = _CountingMap(problem.map)
    par = np.array(start, dtype=float).ravel()
    if not _all_finite(par):
        raise ValueError("start must be finite")
    termination = Termination.MAXITER_REACHED
    while fmap.calls < settings.maxiter:
        try:
            new = fmap(par)
        except MapFailure:
            termination = Termination.MAP_FAILURE
            break
        res = _norm(new - par)
        if trace is not None:
            trace.append(fmap.calls, None, res, new)
        if res < settings.tol:
            termination = Termination.TOLERANCE_MET
            break
        par = new

    value, objfevals = None, 0
    if problem.objective is not None:
        value = _safe_objective(problem.objective, par)
        objfevals = 1
    return ConvergenceReport(par, value, None, fmap.calls, objfevals,
                             termination is Termination.TOLERANCE_MET, termination)


def squarem_run(problem: FixedPointProblem, start, settings: SquaremSettings | None = None,
                trace: IterationTrace | None = None) -> ConvergenceReport:
    """Accelerate ``problem.map`` with first-order squared extrapolation.

    One outer iteration computes ``t1 = F(t0)``, ``t2 = F(t1)``, the
    steplength from ``r = t1 - t0`` and ``v = t2 - 2 t1 + t0``, the
    extrapolated ``t0 - 2 alpha r + alpha^2 v``, and then one stabilizing
    map step from it whenever ``alpha`` differs from -1. The stabilized
    point replaces ``t0`` if its objective is within ``objfn_inc`` of the
    current objective; otherwise ``t2`` does. The run stops as soon as a
    plain step moves less than ``tol``.
    """
    s = settings or SquaremSettings()
    fmap = _CountingMap(problem.map)
    par = np.array(start, dtype=float).ravel()
    if not _all_finite(par) or not problem.feasible(par):
        raise ValueError("start must be finite and feasible")

    guarded = problem.objective is not None and math.isfinite(s.objfn_inc)
    objfevals = 0
    lold = None
    if guarded:
        lold = _safe_objective(problem.objective, par)
        objfevals += 1

    step_max0 = -s.step_min0
    step_max = step_max0
    growth = s.step_max_growth
    iteration = 1
    termination = Termination.MAXITER_REACHED

    while fmap.calls < s.maxiter:
        try:
            p1 = fmap(par)
        except MapFailure:
            termination = Termination.MAP_FAILURE
            break
        r = p1 - par
        if _norm(r) < s.tol:
            termination = Termination.TOLERANCE_MET
            break
        try:
            p2 = fmap(p1)
        except MapFailure:
            termination = Termination.MAP_FAILURE
            break
        q2 = p2 - p1
        if _norm(q2) < s.tol:
            termination = Termination.TOLERANCE_MET
            break
        v = q2 - r

        # magnitude bookkeeping mirrors the clamp window [-step_max, -1]
        alpha = clamp_steplength(compute_steplength(r, v, s.method), -step_max)
        mag = -alpha
        candidate = extrapolate(par, r, v, alpha)
        if abs(mag - 1.0) > 0.01:
            if _all_finite(candidate) and problem.feasible(candidate):
                try:
                    candidate = fmap(candidate)
                except MapFailure:
                    candidate = None
            else:
                candidate = None

        if candidate is None:
            outcome = Acceptance(False, p2, 0, None)
        else:
            outcome = accept_candidate(problem, candidate, p2, lold if guarded else 0.0,
                                       s.objfn_inc if guarded else math.inf)
        objfevals += outcome.objfevals

        if outcome.accepted:
            lnew = outcome.value if guarded else lold
        else:
            if mag == step_max:
                step_max = max(step_max0, step_max / growth)
            mag = 1.0
            lnew = lold
            if guarded:
                lnew = _safe_objective(problem.objective, p2)
                objfevals += 1
        if mag == step_max:
            step_max *= growth

        par = outcome.chosen
        if lnew is not None and not math.isnan(lnew):
            lold = lnew
        if trace is not None:
            trace.append(fmap.calls, lold, _norm(r), par)
        iteration += 1

    if problem.objective is not None and not guarded:
        lold = _safe_objective(problem.objective, par)
        objfevals += 1
    return ConvergenceReport(par, lold, iteration, fmap.calls, objfevals,
                             termination is Termination.TOLERANCE_MET, termination)
