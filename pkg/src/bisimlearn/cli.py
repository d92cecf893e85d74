"""Command-line front end: learn, quotient, check, oracle, bench."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import statistics
import sys
import time
from dataclasses import dataclass
from pathlib import Path

from bisimlearn.cegis import CegisConfig, FailureReport, LearnedBisimulation, run
from bisimlearn.checker import (
    PropertySyntaxError,
    check,
    lift,
    parse_property,
)
from bisimlearn.core import SystemDefinitionError, pred_to_str
from bisimlearn.dsl import DslSyntaxError, UnboundedBranchingError, load_system
from bisimlearn.oracle import (
    EtsFormatError,
    Partition,
    check_partition,
    coarsest_partition,
    parse_ets,
)
from bisimlearn.quotient import ExtractionError, Quotient, extract
from bisimlearn.smt import SmtBackend, SolverBackendError
from bisimlearn.templates import ClassifierTemplate

log = logging.getLogger("bisim")

_USER_ERRORS = (
    DslSyntaxError,
    SystemDefinitionError,
    UnboundedBranchingError,
    SolverBackendError,
    ExtractionError,
    PropertySyntaxError,
    EtsFormatError,
    ValueError,
    OSError,
    json.JSONDecodeError,
)


@dataclass
class RunReport:
    """Per-run reproducibility record (enough to replay a run)."""

    case: str
    result: str
    seed: int
    iterations: int
    counterexamples: int
    classes: int
    learn_seconds: float
    verify_seconds: float
    extract_seconds: float
    check_seconds: float
    solver_queries: int
    solver_version: str

    def lines(self) -> list[str]:
        return [
            f"case:             {self.case}",
            f"result:           {self.result}",
            f"classes:          {self.classes}",
            f"iterations:       {self.iterations}",
            f"counterexamples:  {self.counterexamples}",
            f"learn wall:       {self.learn_seconds:.3f} s",
            f"verify wall:      {self.verify_seconds:.3f} s",
            f"extract wall:     {self.extract_seconds:.3f} s",
            f"check wall:       {self.check_seconds:.3f} s",
            f"solver queries:   {self.solver_queries}",
            f"seed:             {self.seed}",
            f"solver version:   {self.solver_version}",
        ]


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--solver-cmd", help="SMT solver command line (default: $BISIM_SOLVER, then z3smt/z3 on PATH)")
    parser.add_argument("--timeout-ms", type=int, default=60_000, help="per-query solver timeout")
    parser.add_argument("--jobs", type=int, default=1, help="parallel solver queries")
    parser.add_argument("--seed", type=int, default=0, help="RNG seed")
    parser.add_argument("-o", "--output", help="output file (default: stdout)")
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")


def _add_cegis(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--max-cegis-iters", type=int, default=100, help="learner/verifier round budget")
    parser.add_argument("--max-depth", type=int, default=6, help="template refinement limit")
    rank = parser.add_mutually_exclusive_group()
    rank.add_argument("--piecewise", dest="piecewise", action="store_true", default=True, help="per-class ranking functions (default)")
    rank.add_argument("--global-rank", dest="piecewise", action="store_false", help="one global ranking function")
    parser.add_argument("--seed-samples", type=int, default=0, help="initial random sample pairs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bisim",
        description="Learn stutter-insensitive bisimulation quotients of integer "
        "transition systems and model check CTL*-without-next on them.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_learn = sub.add_parser("learn", help="synthesize a classifier for a system")
    p_learn.add_argument("system", help=".bsys system file")
    p_learn.add_argument("--save-classifier", help="write the learned classifier JSON here")
    _add_cegis(p_learn)
    _add_common(p_learn)

    p_quot = sub.add_parser("quotient", help="extract the finite quotient graph")
    p_quot.add_argument("system", help=".bsys system file")
    p_quot.add_argument("--load-classifier", help="classifier JSON from `learn --save-classifier` (otherwise learn first)")
    p_quot.add_argument("--emit", choices=("dot", "json"), default="json", help="output format")
    _add_cegis(p_quot)
    _add_common(p_quot)

    p_check = sub.add_parser("check", help="model check a property against a system")
    p_check.add_argument("system", help=".bsys system file")
    p_check.add_argument("--prop", required=True, help="property file")
    p_check.add_argument("--load-classifier", help="classifier JSON (otherwise learn first)")
    _add_cegis(p_check)
    _add_common(p_check)

    p_oracle = sub.add_parser("oracle", help="ground truth on explicit finite systems")
    p_oracle.add_argument("action", choices=("coarsest", "check"))
    p_oracle.add_argument("file", help=".ets explicit system file")
    p_oracle.add_argument("--partition", help="partition JSON (for `check`)")
    _add_common(p_oracle)

    p_bench = sub.add_parser("bench", help="run a benchmark suite manifest")
    p_bench.add_argument("manifest", help="JSON manifest of cases")
    p_bench.add_argument("--reps", type=int, default=1, help="repetitions per case (distinct seeds)")
    _add_cegis(p_bench)
    _add_common(p_bench)

    return parser


def _backend(args) -> SmtBackend:
    return SmtBackend(args.solver_cmd, default_timeout_ms=args.timeout_ms)


def _config(args, seed: int | None = None) -> CegisConfig:
    return CegisConfig(
        max_iters=args.max_cegis_iters,
        max_depth=args.max_depth,
        piecewise=args.piecewise,
        timeout_ms=args.timeout_ms,
        jobs=args.jobs,
        seed=args.seed if seed is None else seed,
        seed_samples=args.seed_samples,
    )


def _write(args, text: str) -> None:
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _obtain_classifier(args, system, backend):
    """(template, assignment) from --load-classifier or a fresh learn run."""
    if getattr(args, "load_classifier", None):
        data = json.loads(Path(args.load_classifier).read_text())
        template, assignment = ClassifierTemplate.from_dict(data)
        if assignment is None:
            raise ValueError(
                f"{args.load_classifier} has no parameter assignment; "
                "save it with `learn --save-classifier`"
            )
        return template, assignment, None
    log.info("no classifier supplied; learning one")
    outcome = run(system, _config(args), backend)
    if isinstance(outcome, FailureReport):
        raise SolverBackendError(
            f"learning failed ({outcome.reason}): {outcome.detail}"
        )
    return outcome.template, outcome.assignment, outcome


def cmd_learn(args) -> int:
    system = load_system(args.system)
    backend = _backend(args)
    outcome = run(system, _config(args), backend)
    if isinstance(outcome, FailureReport):
        print(f"learning failed: {outcome.reason}", file=sys.stderr)
        print(outcome.detail, file=sys.stderr)
        return 1
    report = RunReport(
        case=system.name,
        result="learned",
        seed=args.seed,
        iterations=outcome.stats.iterations,
        counterexamples=outcome.stats.counterexamples,
        classes=len(outcome.template.classes()),
        learn_seconds=outcome.stats.learn_seconds,
        verify_seconds=outcome.stats.verify_seconds,
        extract_seconds=0.0,
        check_seconds=0.0,
        solver_queries=backend.queries,
        solver_version=backend.solver_version(),
    )
    if args.save_classifier:
        Path(args.save_classifier).write_text(
            json.dumps(outcome.template.to_dict(outcome.assignment), indent=2) + "\n"
        )
        log.info("classifier written to %s", args.save_classifier)
    _write(args, "\n".join(report.lines()))
    return 0


def cmd_quotient(args) -> int:
    system = load_system(args.system)
    backend = _backend(args)
    template, assignment, _ = _obtain_classifier(args, system, backend)
    q = extract(
        system, template, assignment, backend, jobs=args.jobs, timeout_ms=args.timeout_ms
    )
    _write(args, q.to_dot() if args.emit == "dot" else q.to_json())
    return 0


def cmd_check(args) -> int:
    system = load_system(args.system)
    backend = _backend(args)
    formula = parse_property(
        Path(args.prop).read_text(), alphabet=system.labels.keys()
    )
    template, assignment, _ = _obtain_classifier(args, system, backend)
    q = extract(
        system, template, assignment, backend, jobs=args.jobs, timeout_ms=args.timeout_ms
    )
    verdict = check(
        q, formula, init=system.init, alphabet=frozenset(system.labels)
    )
    condition = lift(system, template, assignment, verdict)
    lines = [
        f"property {'holds' if verdict.holds else 'fails'} from every initial state"
        if verdict.holds
        else "property fails from some initial state",
        f"satisfying classes: {sorted(verdict.satisfying) or 'none'}",
        f"initial classes:    {sorted(q.initial) or 'none'}",
        f"initial condition:  {pred_to_str(condition)}",
    ]
    _write(args, "\n".join(lines))
    return 0 if verdict.holds else 1


def cmd_oracle(args) -> int:
    es = parse_ets(Path(args.file).read_text())
    if args.action == "coarsest":
        _write(args, coarsest_partition(es).to_json())
        return 0
    if not args.partition:
        raise ValueError("oracle check requires --partition")
    partition = Partition.from_json(Path(args.partition).read_text())
    violation = check_partition(es, partition)
    if violation is None:
        _write(args, "valid")
        return 0
    _write(
        args,
        f"violation ({violation.kind}) in block {sorted(violation.block)}: "
        f"{violation.detail}",
    )
    return 1


def _bench_case(case: dict, args, rep: int, seed: int) -> tuple[RunReport, bool]:
    backend = _backend(args)
    system = load_system(case["system"])
    budget = float(case.get("budget_s", 500.0))
    cfg = CegisConfig(
        max_iters=int(case.get("max_iters", args.max_cegis_iters)),
        max_depth=int(case.get("max_depth", args.max_depth)),
        piecewise=bool(case.get("piecewise", args.piecewise)),
        timeout_ms=args.timeout_ms,
        jobs=args.jobs,
        seed=seed,
        seed_samples=args.seed_samples,
    )
    started = time.monotonic()
    outcome = run(system, cfg, backend)
    report = RunReport(
        case=case.get("name", system.name),
        result="learned",
        seed=seed,
        iterations=outcome.stats.iterations,
        counterexamples=outcome.stats.counterexamples,
        classes=0,
        learn_seconds=outcome.stats.learn_seconds,
        verify_seconds=outcome.stats.verify_seconds,
        extract_seconds=0.0,
        check_seconds=0.0,
        solver_queries=0,
        solver_version=backend.solver_version(),
    )
    if isinstance(outcome, FailureReport):
        report.result = f"failed:{outcome.reason}"
        report.solver_queries = backend.queries
        return report, False
    report.classes = len(outcome.template.classes())

    t0 = time.monotonic()
    q = extract(
        system,
        outcome.template,
        outcome.assignment,
        backend,
        jobs=args.jobs,
        timeout_ms=args.timeout_ms,
    )
    report.extract_seconds = time.monotonic() - t0
    report.classes = len(q.classes)

    if case.get("property"):
        formula = parse_property(
            Path(case["property"]).read_text(), alphabet=system.labels.keys()
        )
        t0 = time.monotonic()
        verdict = check(
            q, formula, init=system.init, alphabet=frozenset(system.labels)
        )
        report.check_seconds = time.monotonic() - t0
        report.result = "holds" if verdict.holds else "fails"
    report.solver_queries = backend.queries
    within = (time.monotonic() - started) <= budget
    if not within:
        report.result += ":over-budget"
    return report, within


def cmd_bench(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    cases = manifest.get("cases", [])
    rows: list[RunReport] = []
    any_failed = False
    for case in cases:
        for rep in range(args.reps):
            report, ok = _bench_case(case, args, rep, seed=args.seed + rep)
            rows.append(report)
            ok = ok and not report.result.startswith("failed")
            any_failed = any_failed or not ok
            log.info("case %s rep %d: %s", report.case, rep, report.result)

    by_case: dict[str, list[float]] = {}
    for r in rows:
        total = r.learn_seconds + r.verify_seconds + r.extract_seconds + r.check_seconds
        by_case.setdefault(r.case, []).append(total)
    table = ["case                 mean_s    std_s   runs"]
    for name, totals in by_case.items():
        std = statistics.stdev(totals) if len(totals) > 1 else 0.0
        table.append(
            f"{name:<20} {statistics.mean(totals):>7.3f} {std:>8.3f} {len(totals):>6}"
        )
    print("\n".join(table))

    csv_path = args.output or "bench.csv"
    with open(csv_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["case", "rep", "phase", "seconds", "iters", "classes", "result"])
        rep_counter: dict[str, int] = {}
        for r in rows:
            rep = rep_counter.get(r.case, 0)
            rep_counter[r.case] = rep + 1
            for phase, seconds in (
                ("learn", r.learn_seconds),
                ("verify", r.verify_seconds),
                ("extract", r.extract_seconds),
                ("check", r.check_seconds),
            ):
                writer.writerow(
                    [r.case, rep, phase, f"{seconds:.6f}", r.iterations, r.classes, r.result]
                )
    log.info("CSV written to %s", csv_path)
    return 1 if any_failed else 0


_COMMANDS = {
    "learn": cmd_learn,
    "quotient": cmd_quotient,
    "check": cmd_check,
    "oracle": cmd_oracle,
    "bench": cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except _USER_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
