"""Experiment harness: single runs, multi-start studies and simulation studies.

Given the same :class:`ExperimentSpec` the per-run CSV and summary files
are byte-identical; wall-clock timings go to a separate, non-normative
``.timing.csv`` file.

Random streams: a simulated dataset used by single and multi-start runs
comes from the root stream ``make_rng(seed)``. Replicate ``k`` of a
multi-start study draws its start from child stream ``k``; dataset ``k``
of a simulation study is generated from child stream ``k`` and its
random start is drawn from the same stream afterwards.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import data as dio
from .core import (ConvergenceReport, FixedPointProblem, IterationTrace, SquaremSettings,
                   fixed_point_run, squarem_run)
from .problems import admixture, factor, interval, logistic, poisson

PROBLEMS = ("poisson", "factor", "factor-ecme", "interval", "admixture", "logistic-ub", "logistic-nub")
ALGOS = ("fp", "squarem")
REFERENCE_TOL = 1e-13


@dataclass
class ExperimentSpec:
    problem: str
    algo: str = "squarem"
    starts: int = 1
    seed: int = 0
    settings: SquaremSettings = field(default_factory=SquaremSettings)
    data: Optional[str] = None
    simulate: dict = field(default_factory=dict)
    start: Optional[tuple] = None

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ValueError(f"unknown problem {self.problem!r}; choose from {', '.join(PROBLEMS)}")
        if self.algo not in ALGOS + ("both",):
            raise ValueError(f"unknown algorithm {self.algo!r}")
        if self.starts < 1:
            raise ValueError("starts must be >= 1")

    @property
    def algos(self):
        return ALGOS if self.algo == "both" else (self.algo,)

    def to_json(self):
        d = dataclasses.asdict(self)
        d["settings"]["objfn_inc"] = _json_float(self.settings.objfn_inc)
        return json.dumps(d, indent=2, sort_keys=True)


def _json_float(x):
    return "Inf" if math.isinf(x) else x


@dataclass
class Setup:
    """A concrete problem instance with its default and random start laws."""

    problem: FixedPointProblem
    default_start: np.ndarray
    random_start: Callable[[np.random.Generator], np.ndarray]


@dataclass
class RunRecord:
    replicate: int
    algo: str
    start: np.ndarray
    fpevals: int
    objfevals: int
    value_objfn: float
    converged: bool
    seconds: float


def _sim_int(spec, key, default):
    return int(spec.simulate.get(key, default))


def _sim_float(spec, key, default):
    return float(spec.simulate.get(key, default))


def build_setup(spec: ExperimentSpec, rng: np.random.Generator | None = None) -> Setup:
    """Instantiate the problem named by ``spec``.

    Simulated data (``spec.simulate`` non-empty) is drawn from ``rng``,
    which defaults to the root stream of ``spec.seed``.
    """
    if rng is None:
        rng = dio.make_rng(spec.seed)
    sim = bool(spec.simulate)
    name = spec.problem

    if name == "poisson":
        if sim:
            raise ValueError("the Poisson problem has no simulator")
        counts = _load_counts(spec.data)
        return Setup(poisson.make_problem(counts), np.array([0.3, 1.0, 5.0]),
                     lambda g: np.array([g.uniform(0.05, 0.95), g.uniform(0, 20), g.uniform(0, 20)]))

    if name in ("factor", "factor-ecme"):
        ecme = name == "factor-ecme"
        if sim:
            n, p, q = _sim_int(spec, "n", 200), _sim_int(spec, "p", 32), _sim_int(spec, "q", 4)
            cov = dio.simulate_factor_data(n, p, q, rng)
            free = np.ones((q, p), dtype=bool)

            def rand(g):
                return factor.FactorModelParams(g.uniform(-1, 1, (q, p)), 0.5 * np.diag(cov.cyy)).to_vector()
            start = rand(rng)
        else:
            if spec.data not in (None, "joreskog"):
                raise ValueError("factor analysis data must be 'joreskog' or simulated")
            cov, free, p0 = dio.joreskog_cov(), dio.joreskog_free(), dio.joreskog_start()
            q, p = free.shape
            start = p0.to_vector()

            def rand(g):
                beta = np.where(free, g.uniform(-1, 1, (q, p)), 0.0)
                return factor.FactorModelParams(beta, g.uniform(0.1, 1.0, p)).to_vector()
        return Setup(factor.make_problem(cov, (q, p), free, ecme=ecme), start, rand)

    if name == "interval":
        if sim:
            d = dio.simulate_intervals(_sim_int(spec, "n", 200), _sim_float(spec, "mu_nexam", 5.0), rng)
        elif spec.data in (None, "breast_cancer"):
            d = dio.breast_cancer_intervals()
        else:
            with open(spec.data) as fh:
                d = dio.parse_intervals(fh.read())
        alpha = interval.build_alpha_matrix(d, innermost=True)
        m = alpha.a.shape[1]
        return Setup(interval.make_problem(alpha), interval.uniform_start(alpha),
                     lambda g: g.dirichlet(np.ones(m)))

    if name == "admixture":
        K = _sim_int(spec, "K", 3)
        if sim:
            x, _, _ = dio.simulate_genotypes(_sim_int(spec, "n", 150), _sim_int(spec, "p", 100), K, rng)
        elif spec.data:
            with open(spec.data) as fh:
                x = dio.parse_genotypes(fh.read())
        else:
            raise ValueError("admixture needs --data PATH or --simulate n=..,p=..,K=..")
        n, p = x.shape

        def rand(g):
            return admixture.AdmixtureParams(g.uniform(0, 1, (p, K)), np.full((n, K), 1.0 / K)).to_vector()
        return Setup(admixture.make_problem(x, K), rand(rng), rand)

    # logistic-ub / logistic-nub
    if sim:
        ld = dio.simulate_logistic(_sim_int(spec, "n", 200), _sim_int(spec, "d", 5), rng)
    elif spec.data == "lee_preview":
        ld = dio.lee_preview()
    else:
        path = dio.find_lee_data(spec.data)
        if path is None:
            raise ValueError(f"logistic data not found; pass --data PATH or set {dio.LEE_DATA_ENV}")
        ld = dio.load_logistic(path)
    d = ld.design.shape[1]
    bound = "uniform" if name == "logistic-ub" else "nonuniform"
    return Setup(logistic.make_problem(ld, bound), np.full(d, 10.0), lambda g: g.uniform(0, 10, d))


def _load_counts(source):
    if source in (None, "times_deaths"):
        return dio.times_deaths()
    with open(source) as fh:
        table = dio.parse_matrix(fh.read())
    return table[:, -1]


def run_algo(algo, problem, start, settings, trace=None) -> ConvergenceReport:
    runner = squarem_run if algo == "squarem" else fixed_point_run
    return runner(problem, start, settings, trace)


def _start_for(spec, setup):
    if spec.start is None:
        return setup.default_start
    start = np.asarray(spec.start, dtype=float)
    if start.shape != setup.default_start.shape:
        raise ValueError(f"start has {start.size} values, problem needs {setup.default_start.size}")
    return start


def run_single(spec: ExperimentSpec, trace=False):
    """One run from the ExperimentSpec start. Returns ``(report, trace_rows)``.

    With ``trace=True`` the rows are ``(fpevals, ||theta - theta*||,
    objective)`` starting with the initial point, where ``theta*`` comes
    from a squared run at tolerance 1e-13.
    """
    setup = build_setup(spec)
    start = _start_for(spec, setup)
    algo = spec.algos[0]
    if not trace:
        return run_algo(algo, setup.problem, start, spec.settings), None

    ref_settings = dataclasses.replace(spec.settings, tol=REFERENCE_TOL,
                                       maxiter=max(spec.settings.maxiter, 100_000))
    reference = squarem_run(setup.problem, start, ref_settings).par
    tr = IterationTrace()
    report = run_algo(algo, setup.problem, start, spec.settings, tr)
    obj = setup.problem.objective
    rows = [(0, float(np.linalg.norm(start - reference)), obj(start) if obj else math.nan)]
    for rec in tr.records:
        rows.append((rec.fpevals, float(np.linalg.norm(rec.par - reference)),
                     obj(rec.par) if obj else math.nan))
    return report, rows


def _one(spec, setup, replicate, algo, start):
    t0 = time.monotonic()
    rep = run_algo(algo, setup.problem, start, spec.settings)
    seconds = time.monotonic() - t0
    value = rep.value_objfn if rep.value_objfn is not None else math.nan
    return RunRecord(replicate, algo, start, rep.fpevals, rep.objfevals, value, rep.convergence, seconds)


def _multistart_chunk(spec, replicates):
    setup = build_setup(spec)
    out = []
    for k in replicates:
        start = setup.random_start(dio.make_rng(spec.seed, k)) if spec.starts > 1 else _start_for(spec, setup)
        for algo in spec.algos:
            out.append(_one(spec, setup, k, algo, start))
    return out


def _simulation_chunk(spec, replicates):
    out = []
    for k in replicates:
        rng = dio.make_rng(spec.seed, k)
        setup = build_setup(spec, rng)
        start = setup.default_start if spec.problem == "interval" else setup.random_start(rng)
        for algo in spec.algos:
            out.append(_one(spec, setup, k, algo, start))
    return out


def _workers():
    try:
        return max(1, int(os.environ.get("BENCH_THREADS", "1")))
    except ValueError:
        return 1


def _dispatch(chunk_fn, spec, count):
    workers = min(_workers(), count)
    if workers == 1:
        records = chunk_fn(spec, range(count))
    else:
        parts = [range(i, count, workers) for i in range(workers)]
        with ProcessPoolExecutor(workers) as pool:
            records = [r for part in pool.map(chunk_fn, [spec] * workers, parts) for r in part]
    order = {a: i for i, a in enumerate(ALGOS)}
    return sorted(records, key=lambda r: (r.replicate, order[r.algo]))


def run_multistart(spec: ExperimentSpec):
    """Run every algorithm in ``spec.algos`` from ``spec.starts`` starts.

    With one start the ExperimentSpec start is used, so the result equals
    :func:`run_single`. Returns ``(records, summary)``.
    """
    records = _dispatch(_multistart_chunk, spec, spec.starts)
    return records, summarize(records)


def run_simulation_study(spec: ExperimentSpec, datasets: int):
    """Fit ``datasets`` simulated datasets with each algorithm in ``spec.algos``."""
    if not spec.simulate:
        raise ValueError("a simulation study needs simulator parameters")
    records = _dispatch(_simulation_chunk, spec, datasets)
    return records, summarize(records)


def summarize(records):
    """Per-algorithm aggregates over converged runs.

    Bands are empirical 2.5 and 97.5 percentiles (linear interpolation).
    Failed runs are counted and excluded.
    """
    summary = []
    for algo in ALGOS:
        rows = [r for r in records if r.algo == algo]
        if not rows:
            continue
        ok = np.array([r.fpevals for r in rows if r.converged], dtype=float)
        entry = {"algo": algo, "runs": len(rows), "failed": len(rows) - ok.size}
        if ok.size:
            lo, hi = np.percentile(ok, [2.5, 97.5])
            entry.update(fpevals_mean=float(ok.mean()), fpevals_sd=float(ok.std(ddof=1)) if ok.size > 1 else 0.0,
                         fpevals_p2_5=float(lo), fpevals_p97_5=float(hi))
        else:
            entry.update(fpevals_mean=math.nan, fpevals_sd=math.nan, fpevals_p2_5=math.nan, fpevals_p97_5=math.nan)
        summary.append(entry)
    return summary


def timing_summary(records):
    out = []
    for algo in ALGOS:
        t = np.array([r.seconds for r in records if r.algo == algo and r.converged])
        if t.size:
            lo, hi = np.percentile(t, [2.5, 97.5])
            out.append({"algo": algo, "seconds_mean": float(t.mean()), "seconds_p2_5": float(lo),
                        "seconds_p97_5": float(hi)})
    return out


def format_band(mean, lo, hi, digits=0):
    """Render ``mean(low, high)`` with ``digits`` decimals."""
    return f"{mean:.{digits}f}({lo:.{digits}f}, {hi:.{digits}f})"


RECORD_FIELDS = ["replicate", "algo", "start", "fpevals", "objfevals", "value_objfn", "converged"]
SUMMARY_FIELDS = ["algo", "runs", "failed", "fpevals_mean", "fpevals_sd", "fpevals_p2_5", "fpevals_p97_5"]


def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, np.ndarray):
        return " ".join(repr(float(x)) for x in v)
    return str(v)


def records_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    for r in records:
        w.writerow([_cell(getattr(r, f)) for f in RECORD_FIELDS])
    return buf.getvalue()


def summary_csv(summary) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for s in summary:
        w.writerow([_cell(s[f]) for f in SUMMARY_FIELDS])
    return buf.getvalue()


def timing_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replicate", "algo", "wall_seconds_nonnormative"])
    for r in records:
        w.writerow([r.replicate, r.algo, repr(r.seconds)])
    return buf.getvalue()


def trace_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fpevals", "error", "objective"])
    for f, e, o in rows:
        w.writerow([f, repr(e), repr(float(o))])
    return buf.getvalue()


def read_records(text):
    out = []
    for row in csv.DictReader(io.StringIO(text)):
        out.append(RunRecord(int(row["replicate"]), row["algo"],
                             np.array([float(t) for t in row["start"].split()]),
                             int(row["fpevals"]), int(row["objfevals"]), float(row["value_objfn"]),
                             row["converged"] == "true", math.nan))
    return out


def verify_summary(records_text: str, summary_text: str) -> bool:
    """Check that a summary CSV is exactly recomputable from its records CSV."""
    return summary_csv(summarize(read_records(records_text))) == summary_text


def write_outputs(path, spec, records, summary):
    with open(path, "w") as fh:
        fh.write(records_csv(records))
    with open(path + ".summary.csv", "w") as fh:
        fh.write(summary_csv(summary))
    with open(path + ".timing.csv", "w") as fh:
        fh.write(timing_csv(records))
    with open(path + ".json", "w") as fh:
        fh.write(spec.to_json() + "\n")
