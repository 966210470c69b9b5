"""Command-line front end: ``paam analyze|simulate|generate|admit|experiment``.

Exit codes: 0 on success, 1 on a negative domain verdict (REJECT, a failed
``--check``, or an unschedulable system under ``--strict``), 2 on usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from paam import __version__
from paam.analysis import REPORT_SCHEMA_VERSION, AnalysisReport, admission_test, analyze
from paam.config import (
    CONFIG_SCHEMA_VERSION,
    dump_system,
    format_duration,
    load_system,
    parse_duration,
    parse_json,
    system_from_dict,
)
from paam.experiments import (
    CHAIN_CURVE_BASE,
    DEFAULT_CHAIN_COUNTS,
    DEFAULT_RATIOS,
    RATIO_CURVE_BASE,
    curve_csv,
    curve_summary,
    overloaded_scenario_doc,
    run_chain_count_curve,
    run_overloaded_accelerator_case,
    run_ratio_curve,
    write_results,
)
from paam.model import ConfigError, WaitPolicy
from paam.simulator import (
    STATS_SCHEMA_VERSION,
    TRACE_SCHEMA_VERSION,
    SimMode,
    check_against_bounds,
    run_simulation,
)
from paam.workload import GenParams, generate_chainset, parse_ratio

EXIT_OK, EXIT_VERDICT, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _duration(text):
    try:
        return parse_duration(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _ratio(text):
    try:
        return parse_ratio(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _ratio_list(text):
    return [_ratio(x) for x in text.split(",") if x]


def _read_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    return parse_json(text, str(path))


def _ms(ns):
    return "inf" if ns is None else format_duration(ns)


# -- analyze -------------------------------------------------------------------

def cmd_analyze(args):
    system = load_system(args.config)
    report = analyze(system)
    print(f"system {report.fingerprint}")
    print(f"{'chain':12s} {'prio':>4s} {'R_c':>12s} {'D_c':>12s}  verdict")
    for r in sorted(report.chains.values(), key=lambda r: -r.priority):
        if not r.critical:
            verdict = "best-effort"
        else:
            verdict = "schedulable" if r.schedulable else "UNSCHEDULABLE"
        note = f"  ({r.note})" if r.note else ""
        print(f"{r.chain:12s} {r.priority:4d} {_ms(r.wcrt):>12s} {_ms(r.deadline):>12s}  "
              f"{verdict}{note}")
    print("system schedulable" if report.schedulable else "system NOT schedulable")
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    if args.json:
        Path(args.json).write_text(report.to_json())
    if args.strict and not report.schedulable:
        return EXIT_VERDICT
    return EXIT_OK


# -- simulate ------------------------------------------------------------------

def cmd_simulate(args):
    system = load_system(args.config)
    trace, stats = run_simulation(system, SimMode(args.mode), args.duration, args.seed,
                                  jitter=args.jitter, record_trace=bool(args.trace))
    if args.trace:
        trace.write(args.trace)
    if args.stats:
        Path(args.stats).write_text(stats.to_csv())
    print(f"simulated {format_duration(args.duration)} in {args.mode} mode, seed {args.seed}")
    print(f"{'chain':12s} {'done':>6s} {'max':>12s} {'mean':>12s} {'dropped':>7s}")
    for cid, st in stats.chains.items():
        mean = "-" if st.mean_response is None else format_duration(round(st.mean_response))
        print(f"{cid:12s} {st.completed:6d} {_ms(st.max_response):>12s} {mean:>12s} "
              f"{st.dropped:7d}")
    if not args.check:
        return EXIT_OK
    try:
        report = AnalysisReport.from_dict(_read_json(args.check))
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{args.check}: not an analysis report ({exc})") from None
    try:
        conformance = check_against_bounds(stats, report)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    print(conformance.summary())
    return EXIT_OK if conformance.ok else EXIT_VERDICT


# -- generate ------------------------------------------------------------------

_GEN_FLAGS = {
    "chains": "chains", "util": "utilization", "callbacks": "callbacks_per_chain",
    "ratio": "ratio", "buckets": "buckets", "units": "units", "cores": "cores",
    "epsilon": "epsilon", "kappa": "kappa", "period_min": "period_min",
    "period_max": "period_max", "util_mode": "util_mode", "seed": "seed",
}


def _params_from_file(path):
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: expected a JSON object")
    fields = set(GenParams.__dataclass_fields__)
    unknown = set(doc) - fields
    if unknown:
        raise UsageError(f"{path}: unknown parameter(s) {sorted(unknown)}")
    kw = dict(doc)
    for key in ("period_min", "period_max", "epsilon", "kappa"):
        if key in kw:
            kw[key] = parse_duration(kw[key])
    if "ratio" in kw:
        kw["ratio"] = parse_ratio(kw["ratio"])
    if "wait" in kw:
        kw["wait"] = WaitPolicy(kw["wait"])
    return GenParams(**kw)


def _gen_params(args, base):
    params = _params_from_file(args.params) if args.params else base
    kw = {field: getattr(args, flag) for flag, field in _GEN_FLAGS.items()
          if getattr(args, flag, None) is not None}
    if getattr(args, "wait", None) is not None:
        kw["wait"] = WaitPolicy(args.wait)
    try:
        return replace(params, **kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_generate(args):
    params = _gen_params(args, GenParams())
    try:
        system = generate_chainset(params)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    text = dump_system(system, args.output)
    if args.output is None:
        sys.stdout.write(text)
    else:
        print(f"wrote {args.output} ({len(system.chains)} chains, fingerprint "
              f"{system.fingerprint()})")
    return EXIT_OK


# -- admit ---------------------------------------------------------------------

def cmd_admit(args):
    base = _read_json(args.config)
    system_from_dict(base)  # the base itself must be valid
    result = admission_test(base, _read_json(args.candidate))
    if result.accepted:
        print(f"ACCEPT: {result.reason}")
        return EXIT_OK
    who = f" (chain {result.chain})" if result.chain else ""
    print(f"REJECT{who}: {result.reason}")
    return EXIT_VERDICT


# -- experiment ----------------------------------------------------------------

def cmd_experiment(args):
    out = args.out
    if args.name == "overloaded":
        doc = _read_json(args.scenario) if args.scenario else overloaded_scenario_doc()
        seed = args.seed or 0
        res = run_overloaded_accelerator_case(args.duration, seed, doc)
        summary = res.summary() + "\n"
        where = write_results(out, "overloaded", seed,
                              {"comparison.csv": res.to_csv(), "summary.txt": summary})
        sys.stdout.write(summary)
        print(f"results in {where}")
        return EXIT_OK if res.bounded else EXIT_VERDICT

    if args.name == "chain-curve":
        params = _gen_params(args, CHAIN_CURVE_BASE)
        points = run_chain_count_curve(params, args.m_values or DEFAULT_CHAIN_COUNTS,
                                       args.trials, args.workers)
        table, title = curve_csv(points, "chains"), "acceptance ratio vs chain count"
    else:
        params = _gen_params(args, RATIO_CURVE_BASE)
        points = run_ratio_curve(params, args.ratios or DEFAULT_RATIOS, args.trials,
                                 args.workers)
        table, title = curve_csv(points, "ratio"), "acceptance ratio vs accelerator:CPU ratio"
    summary = curve_summary(f"{title} ({args.trials} trials)", points, params)
    where = write_results(out, args.name, params.seed,
                          {"curve.csv": table, "summary.txt": summary})
    sys.stdout.write(summary)
    print(f"results in {where}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def _add_gen_flags(p, with_chains=True):
    if with_chains:
        p.add_argument("--chains", type=int, help="chains per chainset")
    p.add_argument("--util", type=float, help="utilization (per chain unless --util-mode total)")
    p.add_argument("--util-mode", dest="util_mode", choices=["per_chain", "total"])
    p.add_argument("--ratio", type=_ratio, help="accelerator:CPU split, e.g. 1:1")
    p.add_argument("--callbacks", type=int, help="callbacks per chain")
    p.add_argument("--buckets", type=int)
    p.add_argument("--units", type=int)
    p.add_argument("--cores", type=int, help="client cores (the server gets one more)")
    p.add_argument("--wait", choices=[w.value for w in WaitPolicy])
    p.add_argument("--epsilon", type=_duration)
    p.add_argument("--kappa", type=_duration)
    p.add_argument("--period-min", dest="period_min", type=_duration)
    p.add_argument("--period-max", dest="period_max", type=_duration)
    p.add_argument("--params", help="JSON file of generator parameters (flags override it)")
    p.add_argument("--seed", type=int)


def build_parser():
    versions = (f"paam {__version__} (config schema v{CONFIG_SCHEMA_VERSION}, "
                f"trace v{TRACE_SCHEMA_VERSION}, report/csv v{REPORT_SCHEMA_VERSION}, "
                f"stats v{STATS_SCHEMA_VERSION})")
    parser = argparse.ArgumentParser(prog="paam", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=versions)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="response-time analysis of a configuration")
    p.add_argument("config")
    p.add_argument("--csv", help="write the per-chain table as CSV")
    p.add_argument("--json", help="write the full report as JSON (usable with simulate --check)")
    p.add_argument("--strict", action="store_true", help="exit 1 if any critical chain fails")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="discrete-event simulation")
    p.add_argument("config")
    p.add_argument("--mode", choices=[m.value for m in SimMode], default="paam")
    p.add_argument("--duration", type=_duration, default="1s")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter", type=float, help="execution times drawn from [f*WCET, WCET]")
    p.add_argument("--trace", help="write the event trace (TSV)")
    p.add_argument("--stats", help="write per-chain and per-unit statistics (CSV)")
    p.add_argument("--check", metavar="REPORT", help="compare against an analysis report JSON")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("generate", help="draw a random chainset")
    _add_gen_flags(p)
    p.add_argument("-o", "--output", help="output configuration file (default: stdout)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("admit", help="admission test for candidate chains")
    p.add_argument("config")
    p.add_argument("--candidate", required=True, help="document with the new chains")
    p.set_defaults(func=cmd_admit)

    p = sub.add_parser("experiment", help="scripted experiments")
    p.add_argument("name", choices=["chain-curve", "ratio-curve", "overloaded"])
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--workers", type=int, help="worker processes (default: CPU count, max 8)")
    p.add_argument("--out", default="results", help="results root directory")
    p.add_argument("--m-values", dest="m_values", type=_int_list, help="e.g. 1,2,4,8")
    p.add_argument("--ratios", type=_ratio_list, help="e.g. 1:9,5:5,7:3")
    p.add_argument("--duration", type=_duration, default="30s", help="overloaded only")
    p.add_argument("--scenario", help="overloaded only: alternative scenario file")
    _add_gen_flags(p)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "experiment" and args.trials < 1:
        parser.error("--trials must be >= 1")
    try:
        return args.func(args)
    except (ConfigError, UsageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
