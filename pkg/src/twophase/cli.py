"""Command line entry point ``twophase``.

Exit status: 0 success, 1 failed acceptance check (``mc check``),
2 usage error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

import numpy as np

from . import __version__
from .asymptotics import corollary_identities, sigma_totals
from .cox_interval import fit_cox_interval
from .cox_right import fit_cox_right
from .data import AuxiliaryMap, Design, DesignSpec, identity_builder
from .exceptions import DataError, NumericalError
from .harness import McConfig, McReport, check_report, generate_population, run_experiment
from .io import atomic_write, dumps, format_sample, format_weights, parse_draws, \
    read_sample, read_text
from .links import get_g_family
from .sampling import RngStreams, simulate_sample
from .weights import Method, adjust_weights

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4
WEIGHTS = [m.value for m in Method]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _common(p, weights=True, io_=True):
    if io_:
        p.add_argument("--input", required=True, help="input CSV")
        p.add_argument("--output", help="output file (stdout if omitted)")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--design", choices=["wor", "bernoulli"], default="wor")
    p.add_argument("--strata-cuts", type=float, nargs="*", default=None,
                   help="cut points on u_1 when the CSV has no stratum column")
    if weights:
        p.add_argument("--weights", choices=WEIGHTS, default="plain")
        p.add_argument("--within-stratum", action="store_true")
        p.add_argument("--g-family", choices=["trunclinear", "scaledlogit"],
                       default="trunclinear")


def build_parser():
    parser = _Parser(prog="twophase", description="Weighted likelihood under "
                     "two-phase stratified sampling.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--threads", type=int, default=None,
                        help="worker processes for mc (env TWOPHASE_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate-design", help="simulate a two-phase sample as CSV")
    p.add_argument("--config", help="experiment configuration JSON (DGP and strata)")
    p.add_argument("--n", type=int, default=1000, help="phase-I size")
    p.add_argument("--output", help="output CSV (stdout if omitted)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--design", choices=["wor", "bernoulli"], default="wor")
    p.add_argument("--include-pi0", action="store_true", help="write a pi0 column")

    p = sub.add_parser("calibrate", help="compute adjusted weights")
    _common(p)
    p.add_argument("--diagnostics", help="JSON diagnostics file "
                   "(default: <output>.json, or stderr)")

    p = sub.add_parser("fit-right", help="weighted Cox fit, right censoring")
    _common(p)

    p = sub.add_parser("fit-interval", help="weighted Cox fit, current status data")
    _common(p)
    p.add_argument("--box", type=float, default=5.0, help="theta box half-width")

    p = sub.add_parser("variance", help="asymptotic variances from a draws CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--method", nargs="+", choices=WEIGHTS, default=["plain"])
    p.add_argument("--design", choices=["wor", "bernoulli"], default="wor")
    p.add_argument("--within-stratum", action="store_true")

    mc = sub.add_parser("mc", help="Monte Carlo experiments")
    mcs = mc.add_subparsers(dest="mc_command", required=True, parser_class=_Parser)
    p = mcs.add_parser("run", help="run an experiment configuration")
    p.add_argument("config", help="configuration JSON")
    p.add_argument("--output", help="report JSON (stdout if omitted)")
    p.add_argument("--csv", help="long-format per-replication CSV")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--threads", type=int, default=None, dest="mc_threads")
    p = mcs.add_parser("check", help="evaluate acceptance thresholds on a report")
    p.add_argument("report", help="report JSON from mc run")
    p.add_argument("--output", help="write check lines here as well")
    return parser


def _emit(path, text):
    if path:
        atomic_write(path, text)
    else:
        sys.stdout.write(text)


def _spec_for(args):
    if args.strata_cuts is None:
        return None
    cuts = list(args.strata_cuts)
    return DesignSpec.cut_on_u(cuts, [1.0] * (len(cuts) + 1), design=Design(args.design))


def _load(args):
    return read_sample(args.input, Design(args.design), _spec_for(args))


def _weights(args, sample):
    method = Method(args.weights)
    if method is Method.PLAIN and args.within_stratum:
        raise DataError("plain weights have no within-stratum variant")
    aux = None
    if method is not Method.PLAIN:
        if sample.u.shape[1] == 0:
            raise DataError(f"method {method.value} needs auxiliary columns u_1..u_m")
        aux = AuxiliaryMap(identity_builder())
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        ws = adjust_weights(sample, method, aux, g=get_g_family(args.g_family),
                            within=args.within_stratum)
    for w in caught:
        sys.stderr.write(f"warning: {w.message}\n")
    return ws


def cmd_simulate(args):
    cfg = McConfig.from_json(read_text(args.config)) if args.config else McConfig.from_dict({})
    if args.n < 2:
        raise DataError("--n must be at least 2")
    streams = RngStreams(args.seed, 0)
    pop = generate_population(cfg, args.n, streams.generator("population"))
    spec = cfg.design_spec(args.design)
    sample = simulate_sample(pop.y, pop.delta, pop.u, pop.x, spec, streams)
    _emit(args.output, format_sample(sample, include_pi0=args.include_pi0))
    return EXIT_OK


def cmd_calibrate(args):
    sample = _load(args)
    ws = _weights(args, sample)
    diag = ws.diagnostics()
    diag["seed"] = args.seed
    label = ws.method.value + ("/within" if ws.within else "")
    _emit(args.output, format_weights(sample, label, ws.weights))
    text = dumps(diag)
    if args.diagnostics:
        atomic_write(args.diagnostics, text)
    elif args.output:
        atomic_write(args.output + ".json", text)
    else:
        sys.stderr.write(text)
    return EXIT_OK


def cmd_fit_right(args):
    sample = _load(args)
    ws = _weights(args, sample)
    fit = fit_cox_right(sample, ws)
    out = fit.to_dict()
    out["weights_diagnostics"] = ws.diagnostics()
    out["seed"] = args.seed
    _emit(args.output, dumps(out))
    return EXIT_OK


def cmd_fit_interval(args):
    sample = _load(args)
    ws = _weights(args, sample)
    fit = fit_cox_interval(sample, ws, box=args.box)
    out = fit.to_dict()
    out["weights_diagnostics"] = ws.diagnostics()
    out["seed"] = args.seed
    _emit(args.output, dumps(out))
    return EXIT_OK


def cmd_variance(args):
    draws = parse_draws(read_text(args.input))
    methods = [m for m in args.method if m != "plain"]
    rep = sigma_totals(draws, methods, within=args.within_stratum)
    out = rep.to_dict()
    out["requested"] = {m: rep.total(m, args.design).tolist() for m in args.method}
    out["design"] = args.design
    out["identity_residuals"] = corollary_identities(rep)
    _emit(args.output, dumps(out))
    return EXIT_OK


def _threads(args):
    t = getattr(args, "mc_threads", None) or args.threads
    if t is None:
        env = os.environ.get("TWOPHASE_THREADS")
        if env:
            try:
                t = int(env)
            except ValueError:
                raise DataError(f"TWOPHASE_THREADS must be an integer, got {env!r}") from None
    return t


def cmd_mc(args):
    if args.mc_command == "run":
        cfg = McConfig.from_json(read_text(args.config))
        if args.seed is not None:
            cfg = cfg.replace(seed=args.seed)
        report = run_experiment(cfg, threads=_threads(args))
        if args.csv:
            atomic_write(args.csv, report.to_csv())
        _emit(args.output, report.to_json() + "\n")
        return EXIT_OK
    try:
        raw = json.loads(read_text(args.report))
    except json.JSONDecodeError as exc:
        raise DataError(f"report is not valid JSON: {exc}") from None
    results = check_report(McReport.from_dict(raw))
    lines = "".join(r.line() + "\n" for r in results)
    sys.stdout.write(lines)
    if args.output:
        atomic_write(args.output, lines)
    if not results:
        sys.stderr.write("no applicable checks\n")
        return EXIT_CHECK
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


_COMMANDS = {
    "simulate-design": cmd_simulate,
    "calibrate": cmd_calibrate,
    "fit-right": cmd_fit_right,
    "fit-interval": cmd_fit_interval,
    "variance": cmd_variance,
    "mc": cmd_mc,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except DataError as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        sys.stderr.write(f"numerical error: {exc}\n")
        return EXIT_NUMERIC
    except ValueError as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
