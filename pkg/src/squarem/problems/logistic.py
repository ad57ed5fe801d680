"""Logistic-regression MLE by quadratic majorization (MM).

Two surrogates are provided: the uniform bound ``B = X^T N X / 4``, which
is constant and factored once, and the non-uniform bound ``X^T W(beta) X``
with ``w_i = N_i (2 p_i - 1) / (2 x_i^T beta)``, which is tighter but has
to be rebuilt every step.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit

from ..core import FixedPointProblem, MapFailure

# below this |x^T beta| the non-uniform weight uses its limit N/4
WEIGHT_LIMIT_CUTOFF = 1e-6


@dataclass(frozen=True)
class LogisticData:
    design: np.ndarray
    successes: np.ndarray
    trials: np.ndarray = None

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.design, dtype=float))
        y = np.asarray(self.successes, dtype=float)
        N = np.ones_like(y) if self.trials is None else np.asarray(self.trials, dtype=float)
        if X.shape[0] != y.shape[0] or N.shape != y.shape:
            raise ValueError("design, successes and trials disagree in length")
        if np.any(y < 0) or np.any(N < 1) or np.any(y > N):
            raise ValueError("need 0 <= successes <= trials and trials >= 1")
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "successes", y)
        object.__setattr__(self, "trials", N)


def _softplus(z):
    # log(1 + exp(z)) without overflow
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def logistic_neg_loglik(beta, data: LogisticData) -> float:
    """``-sum y_i x_i^T beta + sum N_i log(1 + exp(x_i^T beta))``."""
    eta = data.design @ np.asarray(beta, dtype=float)
    return float(-data.successes @ eta + data.trials @ _softplus(eta))


def logistic_gradient(beta, data: LogisticData) -> np.ndarray:
    eta = data.design @ np.asarray(beta, dtype=float)
    return data.design.T @ (data.trials * expit(eta) - data.successes)


def nonuniform_weights(eta, trials):
    """``N (2 p - 1) / (2 eta)``, which equals ``N tanh(eta / 2) / (2 eta)``."""
    eta = np.asarray(eta, dtype=float)
    small = np.abs(eta) < WEIGHT_LIMIT_CUTOFF
    safe = np.where(small, 1.0, eta)
    w = np.tanh(0.5 * safe) / (2.0 * safe)
    return trials * np.where(small, 0.25, w)


@dataclass
class UniformBoundMap:
    """Fixed-point map ``beta - 4 (X^T N X)^{-1} X^T u(beta)``."""

    data: LogisticData
    _factor: tuple = field(init=False, repr=False)

    def __post_init__(self):
        X, N = self.data.design, self.data.trials
        try:
            self._factor = cho_factor(X.T @ (N[:, None] * X))
        except np.linalg.LinAlgError as exc:
            raise MapFailure(f"X^T N X is singular: {exc}") from exc

    def __call__(self, beta):
        return beta - 4.0 * cho_solve(self._factor, logistic_gradient(beta, self.data))


def qm_uniform_step(beta, data: LogisticData):
    return UniformBoundMap(data)(np.asarray(beta, dtype=float))


def qm_nonuniform_step(beta, data: LogisticData):
    beta = np.asarray(beta, dtype=float)
    X = data.design
    eta = X @ beta
    w = nonuniform_weights(eta, data.trials)
    lhs = X.T @ (w[:, None] * X)
    grad = X.T @ (data.trials * expit(eta) - data.successes)
    try:
        return beta - np.linalg.solve(lhs, grad)
    except np.linalg.LinAlgError as exc:
        raise MapFailure(f"singular non-uniform bound: {exc}") from exc


def make_problem(data: LogisticData, bound="uniform"):
    if bound == "uniform":
        fmap = UniformBoundMap(data)
    elif bound == "nonuniform":
        def fmap(beta):
            return qm_nonuniform_step(beta, data)
    else:
        raise ValueError(f"unknown bound {bound!r}")
    return FixedPointProblem(map=fmap, objective=lambda b: logistic_neg_loglik(b, data))
