"""Bundled datasets, text formats, random streams and simulators.

Random numbers come from numpy's PCG64 generator. A run is identified by
a 64-bit seed; replicate ``k`` of a study draws from the child stream
``SeedSequence(seed, spawn_key=(k,))``, so results never depend on how
replicates are scheduled.
"""

from __future__ import annotations

import io
import math
import os
from importlib import resources

import numpy as np

from .problems.factor import FactorModelParams, SampleCovariance
from .problems.interval import IntervalData
from .problems.logistic import LogisticData

JORESKOG_N = 145
LEE_DATA_ENV = "SQUAREM_LEE_DATA"


class DataFormatError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# --------------------------------------------------------------------------
# random streams and samplers
# --------------------------------------------------------------------------

def make_rng(seed: int, stream: int | None = None) -> np.random.Generator:
    """PCG64 generator for ``seed``, or for child stream ``stream`` of it."""
    key = () if stream is None else (int(stream),)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def sample_uniform(a, b, rng):
    return a + (b - a) * rng.random()


def weibull_inverse_cdf(u, shape, scale):
    return scale * (-math.log(u)) ** (1.0 / shape)


def sample_weibull(shape, scale, rng):
    # 1 - random() lies in (0, 1], so the log is finite
    return weibull_inverse_cdf(1.0 - rng.random(), shape, scale)


def sample_poisson(mu, rng):
    """Poisson draw by counting unit-rate exponential gaps that fit in ``mu``.

    Meant for small means; above 30 it defers to numpy's sampler.
    """
    if mu < 0:
        raise ValueError("Poisson mean must be nonnegative")
    if mu > 30:
        return int(rng.poisson(mu))
    count = 0
    elapsed = -math.log(1.0 - rng.random())
    while elapsed <= mu:
        count += 1
        elapsed -= math.log(1.0 - rng.random())
    return count


# --------------------------------------------------------------------------
# text formats
# --------------------------------------------------------------------------

def _rows(text):
    for lineno, line in enumerate(io.StringIO(text), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, [t for t in line.replace(",", " ").split() if t]


def _number(token, lineno):
    if token.lower() in ("inf", "+inf"):
        return math.inf
    try:
        return float(token)
    except ValueError:
        raise DataFormatError(f"not a number: {token!r}", lineno) from None


def parse_intervals(text: str) -> IntervalData:
    """Two columns ``L, R`` (comma or whitespace separated); ``Inf`` allowed.

    Interval-notation decorations such as ``(45,Inf]`` are accepted too.
    A first line that is not numeric is treated as a header.
    """
    left, right = [], []
    for k, (lineno, tokens) in enumerate(_rows(text.replace("(", " ").replace("]", " "))):
        if len(tokens) != 2:
            raise DataFormatError(f"expected 2 columns, found {len(tokens)}", lineno)
        if k == 0 and not _looks_numeric(tokens[0]):
            continue
        lo, hi = _number(tokens[0], lineno), _number(tokens[1], lineno)
        if math.isinf(lo) or lo < 0:
            raise DataFormatError(f"left endpoint must be finite and >= 0, got {tokens[0]}", lineno)
        if not lo < hi:
            raise DataFormatError(f"empty interval ({tokens[0]}, {tokens[1]}]", lineno)
        left.append(lo)
        right.append(hi)
    if not left:
        raise DataFormatError("no intervals found")
    return IntervalData(np.array(left), np.array(right))


def _looks_numeric(token):
    try:
        _number(token, None)
    except DataFormatError:
        return False
    return True


def _fmt(x):
    if math.isinf(x):
        return "Inf" if x > 0 else "-Inf"
    return repr(float(x)) if x != int(x) else str(int(x))


def write_intervals(data: IntervalData) -> str:
    return "".join(f"{_fmt(lo)},{_fmt(hi)}\n" for lo, hi in zip(data.left, data.right))


def parse_genotypes(text: str) -> np.ndarray:
    rows = []
    for lineno, tokens in _rows(text):
        row = []
        for t in tokens:
            if t not in ("0", "1", "2"):
                raise DataFormatError(f"genotype must be 0, 1 or 2, got {t!r}", lineno)
            row.append(int(t))
        if rows and len(row) != len(rows[0]):
            raise DataFormatError(f"ragged row: {len(row)} values, expected {len(rows[0])}", lineno)
        rows.append(row)
    if not rows:
        raise DataFormatError("no genotypes found")
    return np.array(rows, dtype=np.int8)


def write_genotypes(x) -> str:
    return "".join(" ".join(str(int(v)) for v in row) + "\n" for row in np.asarray(x))


def parse_matrix(text: str) -> np.ndarray:
    rows = []
    for lineno, tokens in _rows(text):
        row = [_number(t, lineno) for t in tokens]
        if rows and len(row) != len(rows[0]):
            raise DataFormatError("ragged row", lineno)
        rows.append(row)
    if not rows:
        raise DataFormatError("no values found")
    return np.array(rows, dtype=float)


def parse_covariance(text: str) -> np.ndarray:
    m = parse_matrix(text)
    if m.shape[0] != m.shape[1]:
        raise DataFormatError(f"covariance must be square, got {m.shape}")
    if not np.allclose(m, m.T, rtol=0, atol=1e-12):
        raise DataFormatError("covariance must be symmetric")
    return m


def write_matrix(m) -> str:
    return "".join(",".join(f"{v:.17g}" for v in row) + "\n" for row in np.atleast_2d(m))


def load_logistic(path) -> LogisticData:
    """Whitespace table: design columns followed by a 0/1 response column."""
    with open(path) as fh:
        m = parse_matrix(fh.read())
    return LogisticData(m[:, :-1], m[:, -1])


# --------------------------------------------------------------------------
# bundled datasets
# --------------------------------------------------------------------------

def _read(name):
    return resources.files("squarem.datasets").joinpath(name).read_text()


def times_deaths() -> np.ndarray:
    """Days with 0..9 deaths of women aged 80+ (London Times, 1910-1912)."""
    table = parse_matrix(_read("times_deaths.csv").split("\n", 1)[1])
    return table[:, 1].copy()


def joreskog_cov() -> SampleCovariance:
    return SampleCovariance(parse_covariance(_read("joreskog_cov.csv")), JORESKOG_N)


def joreskog_free() -> np.ndarray:
    """Free-loading mask (factors x variables): variables 1-4 skip factor 4, 5-9 skip factor 3."""
    free = np.ones((4, 9), dtype=bool)
    free[3, :4] = False
    free[2, 4:] = False
    return free


def joreskog_start() -> FactorModelParams:
    beta = parse_matrix(_read("joreskog_beta_start.csv")).T
    return FactorModelParams(beta, np.full(9, 1e-8))


def breast_cancer_intervals() -> IntervalData:
    """Intervals of cosmetic deterioration for 46 radiotherapy-only patients."""
    return parse_intervals(_read("breast_cancer.csv"))


def lee_preview() -> LogisticData:
    """First five rows of the cancer-remission data (too few rows to fit)."""
    m = parse_matrix(_read("lee_preview.txt"))
    return LogisticData(m[:, :-1], m[:, -1])


def find_lee_data(path=None):
    """Path of the full 27-row cancer-remission file, if one is available."""
    for candidate in (path, os.environ.get(LEE_DATA_ENV)):
        if candidate and os.path.isfile(candidate):
            return candidate
    return None


CATALOG = {
    "times_deaths": times_deaths,
    "joreskog": joreskog_cov,
    "breast_cancer": breast_cancer_intervals,
    "lee_preview": lee_preview,
}


# --------------------------------------------------------------------------
# simulators
# --------------------------------------------------------------------------

def simulate_intervals(n: int, mu_nexam: float, rng) -> IntervalData:
    """Interval-censored sample with exponential (mean 5) event times.

    Each subject gets a Poisson(``mu_nexam``) number of inspections at
    times U(0, 10) rounded to one decimal; the interval runs from the last
    inspection before the event to the first one at or after it, with 0
    and infinity as sentinel inspections.
    """
    if n < 1:
        raise ValueError("n must be positive")
    left = np.empty(n)
    right = np.empty(n)
    for i in range(n):
        t = sample_weibull(1.0, 5.0, rng)
        exams = [round(sample_uniform(0.0, 10.0, rng), 1) for _ in range(sample_poisson(mu_nexam, rng))]
        left[i] = max([0.0] + [e for e in exams if t > e])
        right[i] = min([math.inf] + [e for e in exams if t <= e])
    return IntervalData(left, right)


def simulate_genotypes(n: int, p: int, K: int, rng, freq=None, qmat=None):
    """Genotypes ``x_ij ~ Binomial(2, sum_k q_ik f_jk)``.

    Unless given, frequencies are U(0.05, 0.95) and admixture rows are
    flat-Dirichlet. Returns ``(x, freq, qmat)``.
    """
    if freq is None:
        freq = rng.uniform(0.05, 0.95, size=(p, K))
    if qmat is None:
        qmat = rng.dirichlet(np.ones(K), size=n)
    freq = np.asarray(freq, dtype=float).reshape(p, K)
    qmat = np.asarray(qmat, dtype=float).reshape(n, K)
    prob = np.clip(qmat @ freq.T, 0.0, 1.0)
    x = rng.binomial(2, prob).astype(np.int8)
    return x, freq, qmat


def simulate_factor_data(n: int, p: int, q: int, rng, beta=None, tau2=None) -> SampleCovariance:
    """Sample covariance (divisor n, mean-centred) of ``Y = beta^T Z + e``.

    Default loadings are U(-1, 1) and default uniquenesses U(0.2, 0.8).
    """
    if beta is None:
        beta = rng.uniform(-1.0, 1.0, size=(q, p))
    if tau2 is None:
        tau2 = rng.uniform(0.2, 0.8, size=p)
    beta = np.asarray(beta, dtype=float).reshape(q, p)
    z = rng.standard_normal((n, q))
    e = rng.standard_normal((n, p)) * np.sqrt(tau2)
    y = z @ beta + e
    return SampleCovariance(np.cov(y, rowvar=False, bias=True).reshape(p, p), n)


def simulate_logistic(n: int, d: int, rng, beta=None) -> LogisticData:
    """Binary logistic data: an intercept plus ``d - 1`` U(-1, 1) covariates.

    Default coefficients are a zero intercept and slopes of random sign
    with magnitude U(3, 6). Most fitted probabilities then sit near 0 or
    1, where majorization converges slowly, while enough overlap remains
    at n in the hundreds for the MLE to exist.
    """
    X = np.column_stack([np.ones(n), rng.uniform(-1.0, 1.0, size=(n, d - 1))])
    if beta is None:
        beta = np.concatenate([[0.0], rng.choice([-1.0, 1.0], d - 1) * rng.uniform(3.0, 6.0, d - 1)])
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-(X @ np.asarray(beta, dtype=float))))).astype(float)
    return LogisticData(X, y)
