"""Nonparametric MLE of a survival distribution from interval-censored data.

Each observation is a half-open interval ``(L, R]`` known to contain the
event time; ``R`` may be ``inf``. The distribution is represented by the
probability masses of the cells between consecutive support times, and
the clique matrix ``a[i, j] = 1`` marks the cells inside interval ``i``.
"""

from dataclasses import dataclass

import numpy as np

from ..core import FixedPointProblem, MapFailure


@dataclass(frozen=True)
class IntervalData:
    left: np.ndarray
    right: np.ndarray

    def __post_init__(self):
        left = np.asarray(self.left, dtype=float)
        right = np.asarray(self.right, dtype=float)
        if left.shape != right.shape or left.ndim != 1:
            raise ValueError("left and right endpoints must be 1-d and equally long")
        if left.size == 0:
            raise ValueError("no intervals given")
        if np.any(np.isnan(left)) or np.any(np.isnan(right)) or np.any(np.isinf(left)):
            raise ValueError("endpoints must be numbers and left endpoints finite")
        if np.any(left < 0):
            raise ValueError("endpoints must be nonnegative")
        bad = np.flatnonzero(left >= right)
        if bad.size:
            raise ValueError(f"empty interval (L >= R) at row {bad[0] + 1}")
        object.__setattr__(self, "left", left)
        object.__setattr__(self, "right", right)

    def __len__(self):
        return self.left.size


@dataclass(frozen=True)
class AlphaMatrix:
    """Clique matrix plus the ``(lower, upper]`` bounds of each column's cell."""

    a: np.ndarray
    support_times: np.ndarray
    cell_lower: np.ndarray
    cell_upper: np.ndarray

    @property
    def cells(self):
        return list(zip(self.cell_lower.tolist(), self.cell_upper.tolist()))


def build_alpha_matrix(data: IntervalData, innermost=False) -> AlphaMatrix:
    """Clique matrix over the cells ``(s_{j-1}, s_j]``.

    Support times are the sorted unique values of ``{0} u {L_i} u {R_i}``.
    Cell ``j`` belongs to interval ``i`` when ``L_i <= s_{j-1}`` and
    ``s_j <= R_i``; cells no interval covers are dropped.

    With ``innermost=True`` only the innermost intervals are kept: cells
    ``(L, R]`` where some left endpoint is immediately followed by a right
    endpoint in the sorted endpoint list. Mass elsewhere is zero at the
    NPMLE, so this is the reduced parametrization EM normally runs on.
    """
    left, right = data.left, data.right
    times = np.unique(np.concatenate([[0.0], left, right]))
    if innermost:
        lower, upper = _innermost_intervals(left, right)
    else:
        lower, upper = times[:-1], times[1:]
    a = (left[:, None] <= lower[None, :]) & (upper[None, :] <= right[:, None])
    keep = a.any(axis=0)
    return AlphaMatrix(a[:, keep].astype(float), times, lower[keep], upper[keep])


def _innermost_intervals(left, right):
    # at ties a left endpoint (L, ...] sorts after a right endpoint (..., R]
    # because (x, .] and (., x] do not overlap
    values = np.concatenate([left, right])
    kind = np.concatenate([np.ones_like(left), np.zeros_like(right)])  # 1 = left
    order = np.lexsort((kind, values))
    values, kind = values[order], kind[order]
    hits = np.flatnonzero((kind[:-1] == 1) & (kind[1:] == 0))
    return values[hits], values[hits + 1]


def interval_em_step(pvec, a, weights=None):
    """Self-consistency update ``p_j <- mean_i a_ij p_j / sum_s a_is p_s``.

    ``weights`` are row multiplicities when identical intervals have been
    merged into one row of ``a``.
    """
    pvec = np.asarray(pvec, dtype=float)
    mass = a @ pvec
    if np.any(mass <= 0):
        raise MapFailure("an interval carries zero probability mass")
    if weights is None:
        pnew = pvec * ((1.0 / mass) @ a) / a.shape[0]
    else:
        pnew = pvec * ((weights / mass) @ a) / weights.sum()
    return pnew * (pnew > 0)


def interval_neg_loglik(pvec, a, weights=None):
    mass = a @ np.asarray(pvec, dtype=float)
    if np.any(mass <= 0):
        return np.inf
    logs = np.log(mass)
    return float(-(logs.sum() if weights is None else weights @ logs))


def collapse_rows(a):
    """Distinct rows of ``a`` and how often each occurs."""
    rows, counts = np.unique(a, axis=0, return_counts=True)
    return np.ascontiguousarray(rows), counts.astype(float)


def uniform_start(alpha: AlphaMatrix):
    m = alpha.a.shape[1]
    return np.full(m, 1.0 / m)


def is_feasible(pvec):
    # extrapolated candidates may leave the simplex; EM only maps it to itself
    return bool(np.all(np.isfinite(pvec)) and np.all(pvec >= 0))


def make_problem(alpha: AlphaMatrix):
    a, w = collapse_rows(alpha.a)
    return FixedPointProblem(
        map=lambda p: interval_em_step(p, a, w),
        objective=lambda p: interval_neg_loglik(p, a, w),
        feasible=is_feasible,
    )
