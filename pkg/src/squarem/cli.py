"""``bench`` command line.

    bench <problem> --algo {fp|squarem|both} [--method {1|2|3}] [--tol T]
          [--maxiter M] [--objfn-inc H] [--start v1,v2,...] [--starts N]
          [--seed S] [--data NAME|PATH] [--simulate k=v,...] [--trace PATH]
          [--out PATH]
    bench verify PATH

A single run happens unless ``--starts`` exceeds 1 (multi-start study) or
``--simulate`` contains ``datasets=N`` (simulation study over N datasets).

Exit status: 0 all runs converged, 2 some run did not converge, 1 usage
or data error.
"""

import argparse
import dataclasses
import math
import sys

from . import bench
from .core import SquaremSettings

EXIT_OK, EXIT_ERROR, EXIT_NONCONVERGED = 0, 1, 2


def _floats(text):
    try:
        return tuple(float(t) for t in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _pairs(text):
    out = {}
    for item in filter(None, text.split(",")):
        key, sep, value = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _inc(text):
    return math.inf if text.lower() in ("inf", "infinity") else float(text)


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which here means nonconvergence
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="bench", description="SQUAREM convergence-count experiments.")
    p.add_argument("problem", choices=bench.PROBLEMS + ("verify",))
    p.add_argument("path", nargs="?", help="records CSV to check (verify only)")
    p.add_argument("--algo", choices=("fp", "squarem", "both"), default="squarem")
    p.add_argument("--method", type=int, choices=(1, 2, 3), default=3)
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--maxiter", type=int, default=1500)
    p.add_argument("--objfn-inc", type=_inc, default=1.0)
    p.add_argument("--start", type=_floats)
    p.add_argument("--starts", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data")
    p.add_argument("--simulate", type=_pairs, default={})
    p.add_argument("--trace", metavar="PATH")
    p.add_argument("--out", metavar="PATH")
    return p


def _verify(path):
    with open(path) as fh:
        records = fh.read()
    with open(path + ".summary.csv") as fh:
        summary = fh.read()
    ok = bench.verify_summary(records, summary)
    print("summary matches records" if ok else "summary does NOT match records")
    return EXIT_OK if ok else EXIT_ERROR


def _print_summary(summary, records):
    timing = {t["algo"]: t for t in bench.timing_summary(records)}
    for s in summary:
        line = f"{s['algo']:8s} runs={s['runs']} failed={s['failed']} fpevals " + bench.format_band(
            s["fpevals_mean"], s["fpevals_p2_5"], s["fpevals_p97_5"]) + f" sd={s['fpevals_sd']:.1f}"
        if s["algo"] in timing:
            t = timing[s["algo"]]
            line += "  seconds " + bench.format_band(t["seconds_mean"], t["seconds_p2_5"], t["seconds_p97_5"], 4)
        print(line)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.problem == "verify":
            if not args.path:
                raise ValueError("verify needs the records CSV path")
            return _verify(args.path)

        simulate = dict(args.simulate)
        datasets = int(simulate.pop("datasets", 0))
        settings = SquaremSettings(tol=args.tol, maxiter=args.maxiter, method=args.method,
                                   objfn_inc=args.objfn_inc)
        spec = bench.ExperimentSpec(problem=args.problem, algo=args.algo, starts=args.starts, seed=args.seed,
                                    settings=settings, data=args.data, simulate=simulate, start=args.start)

        if datasets or args.starts > 1:
            if datasets:
                records, summary = bench.run_simulation_study(spec, datasets)
            else:
                records, summary = bench.run_multistart(spec)
            _print_summary(summary, records)
            if args.out:
                bench.write_outputs(args.out, spec, records, summary)
            return EXIT_OK if all(r.converged for r in records) else EXIT_NONCONVERGED

        converged = True
        for algo in spec.algos:
            one = dataclasses.replace(spec, algo=algo)
            report, rows = bench.run_single(one, trace=bool(args.trace))
            print(f"[{algo}]")
            print(report)
            if rows is not None:
                path = args.trace if len(spec.algos) == 1 else f"{args.trace}.{algo}"
                with open(path, "w") as fh:
                    fh.write(bench.trace_csv(rows))
            converged &= report.convergence
        if args.out:
            records, summary = bench.run_multistart(spec)
            bench.write_outputs(args.out, spec, records, summary)
        return EXIT_OK if converged else EXIT_NONCONVERGED
    except (ValueError, OSError) as exc:
        print(f"bench: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
