"""Quantifier-free linear-arithmetic queries over an external SMT solver.

The solver runs as a subprocess speaking the SMT-LIB2 v2.6 textual
protocol on standard streams, one disposable session per query: scripts
are of the form ``(set-logic ...)``, ``(declare-const ...)``,
``(assert ...)``, ``(check-sat)``, ``(get-model)``.  Sessions never use
incremental push/pop, so concurrent queries simply spawn independent
processes.

The solver command is resolved, in order, from: an explicit argument,
the BISIM_SOLVER environment variable, a `z3smt` executable on PATH, or
a `z3` executable on PATH (invoked as ``z3 -in``).  The command receives
the script on stdin and must print the verdict (and model) on stdout.
"""

from __future__ import annotations

import os
import re
import shlex
import shutil
import subprocess
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Sequence, Union

from bisimlearn.core import (
    Add,
    And,
    BoolLit,
    Cmp,
    Const,
    Ite,
    Mul,
    Neg,
    Not,
    Or,
    Pred,
    Sub,
    Term,
    Var,
    eval_pred,
)

__all__ = [
    "Sat",
    "SmtBackend",
    "SmtFormula",
    "SmtResult",
    "SolverBackendError",
    "Unknown",
    "Unsat",
    "formula_to_script",
    "resolve_solver_command",
]


class SolverBackendError(Exception):
    """The solver process failed (distinct from an `unknown` verdict)."""


@dataclass(frozen=True)
class SmtFormula:
    """A quantifier-free assertion over declared integer/rational constants.

    Attributes
    ----------
    declarations:
        (name, sort) pairs; sort is "Int" or "Real".  Every free variable
        of `assertion` must be declared.
    assertion:
        The asserted predicate.
    """

    declarations: tuple[tuple[str, str], ...]
    assertion: Pred

    def __post_init__(self) -> None:
        names = [name for name, _ in self.declarations]
        if len(set(names)) != len(names):
            raise ValueError("duplicate declaration")
        for _, sort in self.declarations:
            if sort not in ("Int", "Real"):
                raise ValueError(f"unsupported sort {sort!r}")

    @staticmethod
    def over_ints(names: Sequence[str], assertion: Pred) -> "SmtFormula":
        return SmtFormula(tuple((n, "Int") for n in names), assertion)


@dataclass(frozen=True)
class Sat:
    """Satisfiable, with a total model for all declared constants."""

    model: Mapping[str, int]


@dataclass(frozen=True)
class Unsat:
    pass


@dataclass(frozen=True)
class Unknown:
    reason: str


SmtResult = Union[Sat, Unsat, Unknown]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _term_sexp(term: Term, out: list[str], binders: Mapping[int, str] | None = None) -> None:
    if binders is not None:
        bound = binders.get(id(term))
        if bound is not None:
            out.append(bound)
            return
    if isinstance(term, Var):
        out.append(term.name)
    elif isinstance(term, Const):
        out.append(str(term.value) if term.value >= 0 else f"(- {-term.value})")
    elif isinstance(term, Add):
        out.append("(+ ")
        _term_sexp(term.left, out, binders)
        out.append(" ")
        _term_sexp(term.right, out, binders)
        out.append(")")
    elif isinstance(term, Sub):
        out.append("(- ")
        _term_sexp(term.left, out, binders)
        out.append(" ")
        _term_sexp(term.right, out, binders)
        out.append(")")
    elif isinstance(term, Mul):
        out.append("(* ")
        _term_sexp(term.left, out, binders)
        out.append(" ")
        _term_sexp(term.right, out, binders)
        out.append(")")
    elif isinstance(term, Neg):
        out.append("(- ")
        _term_sexp(term.operand, out, binders)
        out.append(")")
    elif isinstance(term, Ite):
        out.append("(ite ")
        _pred_sexp(term.cond, out, binders)
        out.append(" ")
        _term_sexp(term.then, out, binders)
        out.append(" ")
        _term_sexp(term.orelse, out, binders)
        out.append(")")
    else:
        raise TypeError(f"not a term: {term!r}")


def _pred_sexp(pred: Pred, out: list[str], binders: Mapping[int, str] | None = None) -> None:
    if binders is not None:
        bound = binders.get(id(pred))
        if bound is not None:
            out.append(bound)
            return
    if isinstance(pred, BoolLit):
        out.append("true" if pred.value else "false")
    elif isinstance(pred, Cmp):
        out.append(f"({pred.op} ")
        _term_sexp(pred.left, out, binders)
        out.append(" ")
        _term_sexp(pred.right, out, binders)
        out.append(")")
    elif isinstance(pred, And):
        if not pred.args:
            out.append("true")
            return
        out.append("(and")
        for p in pred.args:
            out.append(" ")
            _pred_sexp(p, out, binders)
        out.append(")")
    elif isinstance(pred, Or):
        if not pred.args:
            out.append("false")
            return
        out.append("(or")
        for p in pred.args:
            out.append(" ")
            _pred_sexp(p, out, binders)
        out.append(")")
    elif isinstance(pred, Not):
        out.append("(not ")
        _pred_sexp(pred.arg, out, binders)
        out.append(")")
    else:
        raise TypeError(f"not a predicate: {pred!r}")


def pred_to_sexp(pred: Pred) -> str:
    """Serialize a predicate as an SMT-LIB2 s-expression."""
    out: list[str] = []
    _pred_sexp(pred, out)
    return "".join(out)


# Certificate formulas embed the same successor terms and equivalence
# subformulas many times over; the serializer binds any sizeable node that
# is referenced repeatedly to a let name, which keeps scripts small enough
# to parse quickly.  Sharing is detected by object identity, so builders
# that reuse subexpression objects benefit automatically.  The binder
# prefix cannot collide with user variables (the system definition language
# forbids `!` in identifiers) or internal parameter names (which never
# start with an underscore).
_LET_PREFIX = "_l!"
_LET_MIN_NODES = 12


def _assertion_sexp(pred: Pred) -> str:
    counts: dict[int, int] = {}
    nodes: dict[int, Union[Term, Pred]] = {}
    sizes: dict[int, int] = {}
    order: list[int] = []

    def walk_term(t: Term) -> int:
        i = id(t)
        seen = counts.get(i, 0)
        counts[i] = seen + 1
        if seen:
            return sizes[i]
        if isinstance(t, (Var, Const)):
            sizes[i] = 1
            return 1
        nodes[i] = t
        n = 1
        if isinstance(t, (Add, Sub, Mul)):
            n += walk_term(t.left) + walk_term(t.right)
        elif isinstance(t, Neg):
            n += walk_term(t.operand)
        elif isinstance(t, Ite):
            n += walk_pred(t.cond) + walk_term(t.then) + walk_term(t.orelse)
        else:
            raise TypeError(f"not a term: {t!r}")
        sizes[i] = n
        order.append(i)
        return n

    def walk_pred(p: Pred) -> int:
        i = id(p)
        seen = counts.get(i, 0)
        counts[i] = seen + 1
        if seen:
            return sizes[i]
        if isinstance(p, BoolLit):
            sizes[i] = 1
            return 1
        nodes[i] = p
        n = 1
        if isinstance(p, Cmp):
            n += walk_term(p.left) + walk_term(p.right)
        elif isinstance(p, (And, Or)):
            n += sum(walk_pred(a) for a in p.args)
        elif isinstance(p, Not):
            n += walk_pred(p.arg)
        else:
            raise TypeError(f"not a predicate: {p!r}")
        sizes[i] = n
        order.append(i)
        return n

    walk_pred(pred)

    binders: dict[int, str] = {}
    bindings: list[tuple[str, str]] = []
    for i in order:  # post-order: children are bound before their parents
        if counts[i] < 2 or sizes[i] < _LET_MIN_NODES:
            continue
        node = nodes[i]
        out: list[str] = []
        if isinstance(node, (BoolLit, Cmp, And, Or, Not)):
            _pred_sexp(node, out, binders)
        else:
            _term_sexp(node, out, binders)
        name = f"{_LET_PREFIX}{len(bindings)}"
        bindings.append((name, "".join(out)))
        binders[i] = name

    out = []
    _pred_sexp(pred, out, binders)
    body = "".join(out)
    for name, definition in reversed(bindings):
        body = f"(let (({name} {definition})) {body})"
    return body


def formula_to_script(formula: SmtFormula, get_model: bool = True) -> str:
    """Render a complete SMT-LIB2 script for one disposable session."""
    logic = "QF_LIA" if all(sort == "Int" for _, sort in formula.declarations) else "QF_LIRA"
    lines = [f"(set-logic {logic})"]
    for name, sort in formula.declarations:
        lines.append(f"(declare-const {name} {sort})")
    lines.append(f"(assert {_assertion_sexp(formula.assertion)})")
    lines.append("(check-sat)")
    if get_model:
        lines.append("(get-model)")
    lines.append("(exit)")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Model parsing
# ---------------------------------------------------------------------------


def _parse_sexps(text: str) -> list:
    """Parse a sequence of s-expressions into nested lists of strings."""
    tokens: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch in "()":
            tokens.append(ch)
            i += 1
        elif ch.isspace():
            i += 1
        elif ch == ";":
            while i < len(text) and text[i] != "\n":
                i += 1
        elif ch == '"':
            j = i + 1
            while j < len(text) and text[j] != '"':
                j += 1
            tokens.append(text[i : j + 1])
            i = j + 1
        elif ch == "|":
            j = i + 1
            while j < len(text) and text[j] != "|":
                j += 1
            tokens.append(text[i : j + 1])
            i = j + 1
        else:
            j = i
            while j < len(text) and not text[j].isspace() and text[j] not in "();":
                j += 1
            tokens.append(text[i:j])
            i = j
    stack: list[list] = [[]]
    for token in tokens:
        if token == "(":
            stack.append([])
        elif token == ")":
            if len(stack) == 1:
                raise ValueError("unbalanced parentheses in solver output")
            closed = stack.pop()
            stack[-1].append(closed)
        else:
            stack[-1].append(token)
    return stack[0]


def _sexp_value(sexp) -> int | Fraction:
    """Interpret a model value s-expression as an integer or rational."""
    if isinstance(sexp, str):
        if "." in sexp:
            return Fraction(sexp)
        return int(sexp)
    if isinstance(sexp, list) and sexp:
        if sexp[0] == "-" and len(sexp) == 2:
            return -_sexp_value(sexp[1])
        if sexp[0] == "/" and len(sexp) == 3:
            return Fraction(_sexp_value(sexp[1]), _sexp_value(sexp[2]))
    raise ValueError(f"cannot interpret model value {sexp!r}")


def _parse_model(text: str, declarations: Sequence[tuple[str, str]]) -> dict[str, int]:
    """Extract declared-constant values from `(get-model)` output.

    Constants the solver omits are don't-cares; they are completed with 0
    to honour the total-assignment contract of `Sat`.
    """
    values: dict[str, int | Fraction] = {}
    for sexp in _parse_sexps(text):
        if not isinstance(sexp, list):
            continue
        entries = sexp[1:] if sexp and sexp[0] == "model" else sexp
        for entry in entries:
            if (
                isinstance(entry, list)
                and len(entry) == 5
                and entry[0] == "define-fun"
                and entry[2] == []
            ):
                values[entry[1]] = _sexp_value(entry[4])
    model: dict[str, int] = {}
    for name, sort in declarations:
        value = values.get(name, 0)
        if sort == "Int":
            if isinstance(value, Fraction):
                if value.denominator != 1:
                    raise ValueError(f"non-integer value {value} for Int constant {name}")
                value = value.numerator
            model[name] = int(value)
        else:
            model[name] = value  # type: ignore[assignment]
    return model


# ---------------------------------------------------------------------------
# Backend
# ---------------------------------------------------------------------------


def resolve_solver_command(command: Sequence[str] | str | None = None) -> list[str]:
    """Resolve the solver command line (see module docstring for the order)."""
    if command is not None:
        if isinstance(command, str):
            resolved = shlex.split(command)
        else:
            resolved = list(command)
        if not resolved:
            raise SolverBackendError("empty solver command")
        return resolved
    env = os.environ.get("BISIM_SOLVER")
    if env:
        return shlex.split(env)
    z3smt = shutil.which("z3smt")
    if z3smt:
        return [z3smt]
    z3 = shutil.which("z3")
    if z3:
        return [z3, "-in"]
    raise SolverBackendError(
        "no SMT solver found: pass --solver-cmd, set BISIM_SOLVER, or put "
        "`z3smt` or `z3` on PATH (the command must read SMT-LIB2 from stdin)"
    )


_VERDICTS = ("sat", "unsat", "unknown")


class SmtBackend:
    """Issues satisfiability queries to the external solver.

    `check` is reentrant: concurrent calls spawn independent solver
    processes and share no mutable state beyond the query counters.
    """

    def __init__(
        self,
        command: Sequence[str] | str | None = None,
        default_timeout_ms: int = 60_000,
    ) -> None:
        self.command = resolve_solver_command(command)
        self.default_timeout_ms = default_timeout_ms
        self._lock = threading.Lock()
        self.queries = 0
        self.sat_results = 0
        self.unsat_results = 0

    def solver_version(self) -> str:
        """The solver's version banner, for reproducibility reports."""
        try:
            proc = subprocess.run(
                self.command,
                input=b"(get-info :version)\n(exit)\n",
                capture_output=True,
                timeout=30,
            )
        except (OSError, subprocess.TimeoutExpired):
            return "unavailable"
        banner = proc.stdout.decode("utf-8", "replace").strip()
        match = re.search(r'"([^"]*)"', banner)
        if match:
            return match.group(1)
        return " ".join(banner.split()) or "unavailable"

    def check(self, formula: SmtFormula, timeout_ms: int | None = None) -> SmtResult:
        """Decide satisfiability of `formula`.

        Returns `Sat` with a total model, `Unsat`, or `Unknown` on solver
        timeout; raises `SolverBackendError` if the solver process fails
        or produces unparseable output.
        """
        timeout_ms = self.default_timeout_ms if timeout_ms is None else timeout_ms
        script = formula_to_script(formula)
        with self._lock:
            self.queries += 1
        try:
            proc = subprocess.run(
                self.command,
                input=script.encode("utf-8"),
                capture_output=True,
                timeout=max(timeout_ms, 1) / 1000.0,
            )
        except subprocess.TimeoutExpired:
            return Unknown(f"solver timeout after {timeout_ms} ms")
        except OSError as err:
            raise SolverBackendError(f"cannot run solver {self.command!r}: {err}") from err

        stdout = proc.stdout.decode("utf-8", "replace")
        lines = stdout.splitlines()
        verdict_at = next(
            (i for i, line in enumerate(lines) if line.strip() in _VERDICTS), None
        )
        if verdict_at is None:
            stderr = proc.stderr.decode("utf-8", "replace").strip()
            raise SolverBackendError(
                f"solver produced no verdict (exit {proc.returncode}); "
                f"stdout: {stdout.strip()[:500]!r}; stderr: {stderr[:500]!r}"
            )
        for line in lines[:verdict_at]:
            if "(error" in line:
                raise SolverBackendError(f"solver error: {line.strip()}")
        verdict = lines[verdict_at].strip()
        if verdict == "unsat":
            with self._lock:
                self.unsat_results += 1
            return Unsat()
        if verdict == "unknown":
            return Unknown("solver returned unknown")
        rest = "\n".join(lines[verdict_at + 1 :])
        try:
            model = _parse_model(rest, formula.declarations)
        except ValueError as err:
            raise SolverBackendError(f"cannot parse solver model: {err}") from err
        with self._lock:
            self.sat_results += 1
        result = Sat(model)
        return result

    def is_sat(self, formula: SmtFormula, timeout_ms: int | None = None) -> bool:
        """Satisfiability as a boolean; raises on an `Unknown` verdict."""
        result = self.check(formula, timeout_ms)
        if isinstance(result, Sat):
            return True
        if isinstance(result, Unsat):
            return False
        raise SolverBackendError(f"inconclusive solver verdict: {result.reason}")


def model_satisfies(formula: SmtFormula, model: Mapping[str, int]) -> bool:
    """Concretely re-evaluate `formula` under `model` (model-soundness check)."""
    return eval_pred(formula.assertion, model)
