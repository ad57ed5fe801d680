"""Two-component Poisson mixture fitted to grouped count data.

Parameters are packed as ``(p, mu1, mu2)``: the mixing probability of the
first component and the two Poisson means. ``counts[i]`` is the number of
observations equal to ``i``.
"""

import math

import numpy as np
from scipy.special import gammaln

from .._jit import njit
from ..core import FixedPointProblem


@njit(cache=True)
def _em_kernel(p, mu1, mu2, counts, logfact):
    l1 = math.log(mu1)
    l2 = math.log(mu2)
    total = s1 = s1i = si = 0.0
    for i in range(counts.shape[0]):
        a = p * math.exp(i * l1 - mu1 - logfact[i])
        b = (1.0 - p) * math.exp(i * l2 - mu2 - logfact[i])
        w = counts[i] * a / (a + b)
        total += counts[i]
        s1 += w
        s1i += i * w
        si += i * counts[i]
    out = np.empty(3)
    out[0] = s1 / total
    out[1] = s1i / s1
    out[2] = (si - s1i) / (total - s1)
    return out


def _log_terms(params, counts):
    p, mu1, mu2 = params
    i = np.arange(len(counts))
    logfact = gammaln(i + 1)
    with np.errstate(divide="ignore"):
        la = np.log(p) - mu1 + i * np.log(mu1) - logfact
        lb = np.log1p(-p) - mu2 + i * np.log(mu2) - logfact
    return la, lb


def responsibilities(params, counts):
    """Posterior probability that count value ``i`` came from component 1."""
    la, lb = _log_terms(params, counts)
    return 1.0 / (1.0 + np.exp(lb - la))


def poisson_em_step(params, counts):
    counts = np.asarray(counts, dtype=float)
    logfact = gammaln(np.arange(len(counts)) + 1.0)
    p, mu1, mu2 = params
    return _em_kernel(float(p), float(mu1), float(mu2), counts, logfact)


def poisson_neg_loglik(params, counts):
    if not is_feasible(params):
        raise ValueError(f"infeasible Poisson mixture parameters {params!r}")
    counts = np.asarray(counts, dtype=float)
    la, lb = _log_terms(params, counts)
    return float(-np.sum(counts * np.logaddexp(la, lb)))


def is_feasible(params):
    p, mu1, mu2 = params
    return bool(np.all(np.isfinite(params)) and 0 <= p <= 1 and mu1 > 0 and mu2 > 0)


def make_problem(counts):
    counts = np.ascontiguousarray(counts, dtype=float)
    logfact = gammaln(np.arange(len(counts)) + 1.0)

    def step(x):
        return _em_kernel(x[0], x[1], x[2], counts, logfact)

    return FixedPointProblem(
        map=step,
        objective=lambda x: poisson_neg_loglik(x, counts),
        feasible=is_feasible,
    )
