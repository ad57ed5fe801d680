"""Maximum-likelihood factor analysis by EM and ECME.

The model is ``Y = beta^T Z + e`` with ``Z ~ N(0, I_q)`` and
``e ~ N(0, diag(tau2))``, so the marginal covariance is
``diag(tau2) + beta^T beta``. ``beta`` is stored factors x variables
(q x p). Loadings that are zero a priori are given by a boolean mask of
the same shape (``True`` = free).

Flat parameter vectors hold ``beta`` column by column (all q loadings of
variable 1, then variable 2, ...) followed by the p uniquenesses.
"""

from dataclasses import dataclass

import numpy as np

from ..core import FixedPointProblem, MapFailure


@dataclass
class FactorModelParams:
    beta: np.ndarray
    tau2: np.ndarray

    @property
    def shape(self):
        return self.beta.shape

    def to_vector(self):
        return np.concatenate([self.beta.ravel(order="F"), self.tau2])

    @classmethod
    def from_vector(cls, x, q, p):
        x = np.asarray(x, dtype=float)
        return cls(x[: q * p].reshape((q, p), order="F"), x[q * p:])


@dataclass
class SampleCovariance:
    cyy: np.ndarray
    n: int

    def __post_init__(self):
        self.cyy = np.asarray(self.cyy, dtype=float)
        if self.cyy.ndim != 2 or self.cyy.shape[0] != self.cyy.shape[1]:
            raise ValueError("covariance must be square")
        if not np.allclose(self.cyy, self.cyy.T, rtol=0, atol=1e-12):
            raise ValueError("covariance must be symmetric")


def _solve(a, b):
    try:
        return np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise MapFailure(f"singular system in factor update: {exc}") from exc


def e_step(beta, tau2):
    """Regression of the factors on the data: ``delta`` (p x q) and ``Delta`` (q x q).

    ``E[Z | Y] = delta^T Y`` and ``Var[Z | Y] = Delta``.
    """
    q = beta.shape[0]
    sigma = np.diag(tau2) + beta.T @ beta
    delta = _solve(sigma, beta.T)
    big_delta = np.eye(q) - beta @ delta
    return delta, big_delta


def _m_step(cyy, delta, big_delta, free):
    czz = delta.T @ cyy @ delta + big_delta
    cyz = cyy @ delta
    q, p = free.shape
    if free.all():
        beta = _solve(czz, cyz.T)
        tau2 = np.diag(cyy) - np.einsum("jk,kj->j", cyz, beta)
        return beta, tau2

    beta = np.zeros((q, p))
    tau2 = np.empty(p)
    # variables sharing a free pattern share one small solve
    patterns = {}
    for j in range(p):
        patterns.setdefault(tuple(free[:, j]), []).append(j)
    for pattern, cols in patterns.items():
        idx = np.flatnonzero(pattern)
        cols = np.array(cols)
        if idx.size == 0:
            tau2[cols] = np.diag(cyy)[cols]
            continue
        sub = _solve(czz[np.ix_(idx, idx)], cyz[np.ix_(cols, idx)].T)
        beta[np.ix_(idx, cols)] = sub
        tau2[cols] = np.diag(cyy)[cols] - np.einsum("jk,kj->j", cyz[np.ix_(cols, idx)], sub)
    return beta, tau2


def factor_em_step(params: FactorModelParams, cov: SampleCovariance, free=None) -> FactorModelParams:
    if free is None:
        free = np.ones(params.beta.shape, dtype=bool)
    delta, big_delta = e_step(params.beta, params.tau2)
    beta, tau2 = _m_step(cov.cyy, delta, big_delta, np.asarray(free, dtype=bool))
    return FactorModelParams(beta, tau2)


def factor_loglik(beta, tau2, cov: SampleCovariance):
    sigma = np.diag(tau2) + beta.T @ beta
    sign, logdet = np.linalg.slogdet(sigma)
    if sign <= 0:
        return -np.inf
    return -0.5 * cov.n * (logdet + np.trace(np.linalg.solve(sigma, cov.cyy)))


def factor_neg_loglik(params: FactorModelParams, cov: SampleCovariance) -> float:
    return float(-factor_loglik(params.beta, params.tau2, cov))


def tau2_newton_step(beta, tau2, cov: SampleCovariance, max_halvings=10):
    """One Newton step for ``log(tau2)`` on the observed-data log-likelihood.

    ``beta`` is held fixed. Gradient and Hessian are exact in
    ``U = log(tau2)``. If the full step lowers the likelihood it is halved
    up to ``max_halvings`` times; ``None`` is returned when no trial step
    improves on the current ``tau2``.
    """
    n = cov.n
    a = _solve(np.diag(tau2) + beta.T @ beta, np.eye(len(tau2)))
    b = n * a @ cov.cyy @ a
    grad = 0.5 * tau2 * (np.diag(b) - n * np.diag(a))
    hess = 0.5 * np.outer(tau2, tau2) * (n * a * a - 2.0 * a * b)
    hess[np.diag_indices_from(hess)] += grad
    step = _solve(hess, grad)

    u = np.log(tau2)
    base = factor_loglik(beta, tau2, cov)
    for _ in range(max_halvings + 1):
        trial = np.exp(u - step)
        value = factor_loglik(beta, trial, cov)
        if np.isfinite(value) and value >= base:
            return trial
        step = 0.5 * step
    return None


def factor_ecme_step(params: FactorModelParams, cov: SampleCovariance, free=None) -> FactorModelParams:
    """EM update of the loadings, then a likelihood-ascent Newton update of tau2."""
    if free is None:
        free = np.ones(params.beta.shape, dtype=bool)
    delta, big_delta = e_step(params.beta, params.tau2)
    beta, tau2_em = _m_step(cov.cyy, delta, big_delta, np.asarray(free, dtype=bool))
    tau2 = tau2_newton_step(beta, params.tau2, cov)
    if tau2 is None:
        tau2 = tau2_em
    return FactorModelParams(beta, tau2)


def make_problem(cov: SampleCovariance, shape, free=None, ecme=False):
    q, p = shape
    if free is None:
        free = np.ones((q, p), dtype=bool)
    free = np.asarray(free, dtype=bool)
    step = factor_ecme_step if ecme else factor_em_step

    def fmap(x):
        return step(FactorModelParams.from_vector(x, q, p), cov, free).to_vector()

    def objective(x):
        return factor_neg_loglik(FactorModelParams.from_vector(x, q, p), cov)

    def feasible(x):
        return bool(np.all(np.isfinite(x)) and np.all(x[q * p:] > 0))

    return FixedPointProblem(map=fmap, objective=objective, feasible=feasible)
