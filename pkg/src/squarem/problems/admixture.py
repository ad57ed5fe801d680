"""Global ancestry (admixture) estimation by EM.

``x[i, j]`` counts copies of allele 1 at marker ``j`` in individual ``i``.
``freq[j, k]`` is the allele-1 frequency at marker ``j`` in ancestral
population ``k`` and ``qmat[i, k]`` is the share of individual ``i``'s
genome drawn from population ``k``. Flat vectors hold ``freq`` then
``qmat``, each in column-major order.
"""

from dataclasses import dataclass

import numpy as np

from ..core import FixedPointProblem, MapFailure

EPS = 1e-6


@dataclass
class AdmixtureParams:
    freq: np.ndarray
    qmat: np.ndarray

    def to_vector(self):
        return np.concatenate([self.freq.ravel(order="F"), self.qmat.ravel(order="F")])

    @classmethod
    def from_vector(cls, x, n, p, K):
        x = np.asarray(x, dtype=float)
        return cls(x[: p * K].reshape((p, K), order="F"), x[p * K:].reshape((n, K), order="F"))


def validate_genotypes(x):
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError("genotype matrix must be 2-d")
    if not np.all(np.isin(x, (0, 1, 2))):
        raise ValueError("genotypes must be 0, 1 or 2")
    return x.astype(np.int8)


def admixture_em_step(params: AdmixtureParams, x, eps=EPS) -> AdmixtureParams:
    """One EM update of ``(freq, qmat)``.

    The posterior over (allele origin, ancestry) for each chromosome copy
    factorizes, so the expected counts reduce to the per-cell ratios
    ``q f / sum(q f)`` and ``q (1 - f) / sum(q (1 - f))`` weighted by the
    observed numbers of allele-1 and allele-0 copies.
    """
    freq, qmat = params.freq, params.qmat
    x = np.asarray(x, dtype=float)
    one = qmat @ freq.T                 # n x p, P(allele 1)
    zero = qmat @ (1.0 - freq).T        # n x p, P(allele 0)
    if np.any(one[x > 0] <= 0) or np.any(zero[x < 2] <= 0):
        raise MapFailure("genotype with zero posterior mass")
    with np.errstate(divide="ignore", invalid="ignore"):
        w1 = np.where(x > 0, x / one, 0.0)
        w0 = np.where(x < 2, (2.0 - x) / zero, 0.0)
    n1 = eps + freq * (w1.T @ qmat)
    n0 = eps + (1.0 - freq) * (w0.T @ qmat)
    m = eps + qmat * (w1 @ freq + w0 @ (1.0 - freq))
    return AdmixtureParams(n1 / (n0 + n1), m / m.sum(axis=1, keepdims=True))


def admixture_neg_loglik(params: AdmixtureParams, x) -> float:
    x = np.asarray(x, dtype=float)
    one = params.qmat @ params.freq.T
    zero = params.qmat @ (1.0 - params.freq).T
    with np.errstate(divide="ignore", invalid="ignore"):
        ll = np.sum(np.where(x > 0, x * np.log(one), 0.0)) + np.sum(np.where(x < 2, (2.0 - x) * np.log(zero), 0.0))
    return float(-ll) if np.isfinite(ll) else np.inf


def make_problem(x, K):
    x = validate_genotypes(x)
    n, p = x.shape

    def unpack(v):
        return AdmixtureParams.from_vector(v, n, p, K)

    def feasible(v):
        pr = unpack(v)
        return bool(np.all(np.isfinite(v)) and np.all((pr.freq > 0) & (pr.freq < 1)) and np.all(pr.qmat >= 0))

    return FixedPointProblem(
        map=lambda v: admixture_em_step(unpack(v), x).to_vector(),
        objective=lambda v: admixture_neg_loglik(unpack(v), x),
        feasible=feasible,
    )
