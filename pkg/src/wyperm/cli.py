"""Command-line entry point ``wy``.

Exit codes: 0 on success, 2 for input or configuration errors, 3 when a test
precondition fails (for example ties under the strict Wilcoxon policy).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from pathlib import Path

from .core import InputError, PermutationPlan, PreconditionError, read_data
from .engine import wy_adjusted_pvalues, wy_stepdown
from .marginal import ALIASES, MarginalTest, rank_sum_lattice, wilcoxon_lattice

EXIT_OK, EXIT_INPUT, EXIT_PRECONDITION = 0, 2, 3
TEST_CHOICES = ("wilcoxon", "perm-t", "spearman", "fisher")


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=default(0), help="master seed (default 0)")
    parser.add_argument("--threads", type=int, default=default(1), help="worker threads")
    parser.add_argument("--format", choices=("csv", "json"), default=default("csv"),
                        help="format of tables written to stdout")
    parser.add_argument("--out", type=Path, default=default(None),
                        help="directory for output files (default: print to stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wy", description="Westfall-Young permutation multiple testing")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("adjust", parents=[common], help="adjusted p-values for a data file")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--test", choices=TEST_CHOICES, default="wilcoxon")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--permutations", type=int, default=1000)
    p.add_argument("--exhaustive", action="store_true", help="enumerate every distinct rearrangement")
    p.add_argument("--stepdown", action="store_true", help="free step-down instead of single-step")
    p.add_argument("--header", action="store_true", help="skip a column-name row")
    resp = p.add_mutually_exclusive_group()
    resp.add_argument("--categorical", dest="categorical", action="store_const", const=True,
                      help="treat the response as labels")
    resp.add_argument("--numeric", dest="categorical", action="store_const", const=False,
                      help="treat the response as numbers")
    p.add_argument("--ties", choices=("strict", "permissive"), default="strict")

    p = sub.add_parser("simulate", parents=[common], help="power and FWER study")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", type=Path, help="JSON scenario file")
    src.add_argument("--preset", choices=("desk", "full"))
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--runs", type=int, help="simulation runs per scenario")
    p.add_argument("--permutations", type=int)
    p.add_argument("--oracle-sims", type=int)
    p.add_argument("--methods", help="comma separated subset of methods")
    p.add_argument("--structures", default="toeplitz,block", help="preset structures")

    p = sub.add_parser("oracle", parents=[common], help="Monte Carlo oracle threshold")
    p.add_argument("--scenario", required=True, type=Path)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--sims", type=int, default=1000)
    p.add_argument("--level-sims", type=int, default=0,
                   help="fresh simulations for the effective level (0 reuses the threshold sims)")

    p = sub.add_parser("lattice", parents=[common], help="attainable Wilcoxon p-values")
    p.add_argument("--n", type=int, help="total size, split equally")
    p.add_argument("--n1", type=int)
    p.add_argument("--n2", type=int)

    sub.add_parser("verify", parents=[common], help="cross-check fast paths against brute force")

    p = sub.add_parser("benchmark", parents=[common], help="time the min-p sweep")
    p.add_argument("--m", type=int, default=10000)
    p.add_argument("--permutations", type=int, default=1000)
    p.add_argument("--n", type=int, default=100)
    return parser


def _emit_rows(rows: list[dict], args, name: str, summary: dict | None = None) -> None:
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        path = args.out / f"{name}.{args.format}"
        path.write_text(_render(rows, args.format, summary))
        if summary is not None and args.format == "csv":
            (args.out / f"{name}.json").write_text(json.dumps(summary, indent=2) + "\n")
        print(path)
    else:
        sys.stdout.write(_render(rows, args.format, summary))


def _render(rows: list[dict], fmt: str, summary: dict | None) -> str:
    if fmt == "json":
        doc = {"rows": rows} if summary is None else {"summary": summary, "rows": rows}
        return json.dumps(doc, indent=2) + "\n"
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return buf.getvalue()


def cmd_adjust(args) -> int:
    kind = ALIASES.get(args.test, args.test)
    W = read_data(args.data, header=args.header, categorical=args.categorical,
                  categorical_features=kind == "fisher_exact")
    if args.exhaustive:
        plan = PermutationPlan.exhaustive()
    else:
        plan = PermutationPlan(count=args.permutations, seed=args.seed)
    test = MarginalTest(kind, plan=plan, ties=args.ties, fisher_seed=args.seed)
    t0 = time.perf_counter()
    run = wy_stepdown if args.stepdown else wy_adjusted_pvalues
    result = run(W, test, plan, alpha=args.alpha, workers=args.threads)
    elapsed = time.perf_counter() - t0
    summary = {
        "method": result.method,
        "threshold": result.threshold,
        "alpha": result.alpha,
        "test": test.kind,
        "plan": plan.to_dict(),
        "rejections": result.rejections.tolist(),
        "timing_seconds": elapsed,
    }
    _emit_rows(result.to_rows(), args, "adjust", summary)
    if args.out is None and args.format == "csv":
        print(json.dumps(summary), file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .experiment import METHODS, PRESETS, emit_outputs, preset_scenarios, run_experiment
    from .simulate import load_scenario

    if args.preset:
        defaults = PRESETS[args.preset]
        scenarios = preset_scenarios(args.preset, tuple(args.structures.split(",")), args.seed)
    else:
        defaults = PRESETS["desk"]
        scenarios = [load_scenario(args.scenario)]
    methods = tuple(args.methods.split(",")) if args.methods else METHODS
    runs = args.runs if args.runs is not None else defaults["n_runs"]
    perms = args.permutations if args.permutations is not None else defaults["permutations"]
    sims = args.oracle_sims if args.oracle_sims is not None else defaults["oracle_sims"]
    plan = PermutationPlan(count=perms, seed=args.seed)
    reports = [
        run_experiment(sc, methods, args.alpha, runs, plan, args.seed, sims, workers=args.threads)
        for sc in scenarios
    ]
    rows = [row for r in reports for row in r.table_rows()]
    if args.out is not None:
        for path in emit_outputs(reports, args.out).values():
            print(path)
    else:
        sys.stdout.write(_render(rows, args.format, None))
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .oracle import effective_level, oracle_threshold_mc
    from .simulate import load_scenario

    scenario = load_scenario(args.scenario)
    est = oracle_threshold_mc(scenario, None, args.alpha, args.sims, args.seed)
    doc = {
        "threshold": est.threshold,
        "effective_level": est.effective_level,
        "stderr": est.mc_stderr,
        "alpha": args.alpha,
        "n_sims": est.n_sims,
        "seed": args.seed,
    }
    if args.level_sims:
        lvl = effective_level(scenario, None, est.threshold, args.level_sims, args.seed + 1)
        doc.update(effective_level=lvl.level, stderr=lvl.stderr, level_sims=lvl.n_sims)
    text = json.dumps(doc, indent=2) + "\n"
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        path = args.out / "oracle.json"
        path.write_text(text)
        print(path)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_lattice(args) -> int:
    if args.n is not None:
        if args.n1 is not None or args.n2 is not None:
            raise InputError("give either --n or --n1/--n2")
        lattice = wilcoxon_lattice(args.n)
    elif args.n1 is not None and args.n2 is not None:
        lattice = rank_sum_lattice(args.n1, args.n2)
    else:
        raise InputError("lattice needs --n or both --n1 and --n2")
    rows = [
        {"index": i, "pvalue": repr(float(v)), "exact": str(f)}
        for i, (v, f) in enumerate(zip(lattice.values, lattice.exact))
    ]
    _emit_rows(rows, args, "lattice")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .brute import cross_checks

    checks = cross_checks(args.seed)
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    return EXIT_OK if all(ok for _, ok in checks) else EXIT_PRECONDITION


def cmd_benchmark(args) -> int:
    from .experiment import benchmark

    report = benchmark(args.m, args.permutations, args.seed, args.n, workers=args.threads)
    text = json.dumps(report, indent=2) + "\n"
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        path = args.out / "benchmark.json"
        path.write_text(text)
        print(path)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "adjust": cmd_adjust,
    "simulate": cmd_simulate,
    "oracle": cmd_oracle,
    "lattice": cmd_lattice,
    "verify": cmd_verify,
    "benchmark": cmd_benchmark,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("wy: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return COMMANDS[args.command](args)
    except PreconditionError as exc:
        print(f"wy: precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (InputError, OSError) as exc:
        print(f"wy: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FloatingPointError as exc:
        print(f"wy: numerical error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
