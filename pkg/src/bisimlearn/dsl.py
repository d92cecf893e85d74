"""Text format for symbolic transition systems.

Grammar (statements end with `;`, `#` starts a line comment)::

    system <name>;
    vars <id>:int (, <id>:int)*;
    branching <k>;
    init <predicate>;
    label <name> := <predicate>;      (zero or more)
    branch <i>: <id> := <term> (, <id> := <term>)*;

Terms use infix arithmetic (`+`, `-`, `*` by a constant, unary `-`,
`if <pred> then <term> else <term>`); predicates use `&&`, `||`, `!` and
the comparisons `<=`, `<`, `=`, `>=`, `>` (with `==` and `!=` accepted as
aliases).  A bare `*` in term position denotes an unbounded
non-deterministic choice, which this tool rejects at load time: such
updates induce unbounded branching.  Variables a branch does not mention
keep their value.  Branch indices must be contiguous from 1; if fewer
than `k` branches are declared, the last declared branch is repeated.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

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
    SymbolicSystem,
    SystemDefinitionError,
    Term,
    Var,
)

__all__ = [
    "DslSyntaxError",
    "UnboundedBranchingError",
    "load_system",
    "loads_system",
    "parse_predicate",
    "parse_term",
]


class DslSyntaxError(SystemDefinitionError):
    """Syntax error with source position information."""

    def __init__(self, message: str, line: int, column: int) -> None:
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class UnboundedBranchingError(SystemDefinitionError):
    """An update uses `*` (an unbounded non-deterministic value).

    Systems with unbounded branching are outside the supported fragment and
    are rejected when the file is loaded.
    """


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
      (?P<ws>\s+|\#[^\n]*)
    | (?P<num>\d+)
    | (?P<id>[A-Za-z_][A-Za-z0-9_]*)
    | (?P<op><=|>=|==|!=|:=|&&|\|\||[-+*/()<>=!:;,])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # "num" | "id" | "op" | "eof"
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    line = 1
    line_start = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise DslSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = match.lastgroup or ""
        value = match.group()
        if kind != "ws":
            tokens.append(_Token(kind, value, line, match.start() - line_start + 1))
        newlines = value.count("\n")
        if newlines:
            line += newlines
            line_start = match.start() + value.rindex("\n") + 1
        pos = match.end()
    tokens.append(_Token("eof", "<end of input>", line, pos - line_start + 1))
    return tokens


class _TokenStream:
    def __init__(self, tokens: Sequence[_Token]) -> None:
        self._tokens = tokens
        self.index = 0

    @property
    def current(self) -> _Token:
        return self._tokens[self.index]

    def advance(self) -> _Token:
        token = self.current
        if token.kind != "eof":
            self.index += 1
        return token

    def accept(self, text: str) -> bool:
        if self.current.text == text and self.current.kind in ("op", "id"):
            self.advance()
            return True
        return False

    def expect(self, text: str) -> _Token:
        token = self.current
        if token.text != text:
            raise DslSyntaxError(f"expected {text!r}, found {token.text!r}", token.line, token.column)
        return self.advance()

    def expect_id(self, what: str = "identifier") -> _Token:
        token = self.current
        if token.kind != "id":
            raise DslSyntaxError(f"expected {what}, found {token.text!r}", token.line, token.column)
        return self.advance()

    def expect_num(self) -> int:
        token = self.current
        if token.kind != "num":
            raise DslSyntaxError(f"expected a number, found {token.text!r}", token.line, token.column)
        self.advance()
        return int(token.text)

    def error(self, message: str) -> DslSyntaxError:
        return DslSyntaxError(message, self.current.line, self.current.column)


_KEYWORDS = {"system", "vars", "branching", "init", "label", "branch", "if", "then", "else", "true", "false", "int"}


# ---------------------------------------------------------------------------
# Expression parsing (shared by terms, predicates, and other modules)
# ---------------------------------------------------------------------------


def _parse_term(ts: _TokenStream) -> Term:
    return _parse_additive(ts)


def _parse_additive(ts: _TokenStream) -> Term:
    term = _parse_multiplicative(ts)
    while True:
        if ts.accept("+"):
            term = Add(term, _parse_multiplicative(ts))
        elif ts.accept("-"):
            term = Sub(term, _parse_multiplicative(ts))
        else:
            return term


def _parse_multiplicative(ts: _TokenStream) -> Term:
    term = _parse_atom(ts)
    while True:
        if ts.current.text == "*" and ts.current.kind == "op":
            ts.advance()
            term = Mul(term, _parse_atom(ts))
        else:
            return term


def _parse_atom(ts: _TokenStream) -> Term:
    token = ts.current
    if token.text == "*":
        raise UnboundedBranchingError(
            f"line {token.line}, column {token.column}: `*` denotes an unbounded "
            "non-deterministic value; only bounded branching is supported"
        )
    if token.kind == "num":
        ts.advance()
        value = int(token.text)
        # Juxtaposition such as `2x` is implicit multiplication by a constant.
        if ts.current.kind == "id" and ts.current.text not in _KEYWORDS:
            return Mul(Const(value), _parse_atom(ts))
        if ts.current.text == "(":
            return Mul(Const(value), _parse_atom(ts))
        return Const(value)
    if token.text == "-":
        ts.advance()
        return Neg(_parse_atom(ts))
    if token.text == "(":
        ts.advance()
        term = _parse_term(ts)
        ts.expect(")")
        return term
    if token.text == "if":
        ts.advance()
        cond = _parse_predicate(ts)
        ts.expect("then")
        then = _parse_term(ts)
        ts.expect("else")
        return Ite(cond, then, _parse_term(ts))
    if token.kind == "id" and token.text not in _KEYWORDS:
        ts.advance()
        return Var(token.text)
    raise ts.error(f"expected a term, found {token.text!r}")


_COMPARISONS = {"<=", "<", "=", "==", ">=", ">", "!="}


def _parse_predicate(ts: _TokenStream) -> Pred:
    pred = _parse_conjunction(ts)
    parts = [pred]
    while ts.accept("||"):
        parts.append(_parse_conjunction(ts))
    return parts[0] if len(parts) == 1 else Or(tuple(parts))


def _parse_conjunction(ts: _TokenStream) -> Pred:
    parts = [_parse_negation(ts)]
    while ts.accept("&&"):
        parts.append(_parse_negation(ts))
    return parts[0] if len(parts) == 1 else And(tuple(parts))


def _parse_negation(ts: _TokenStream) -> Pred:
    if ts.accept("!"):
        return Not(_parse_negation(ts))
    return _parse_pred_atom(ts)


def _parse_pred_atom(ts: _TokenStream) -> Pred:
    token = ts.current
    if token.text == "true" and token.kind == "id":
        ts.advance()
        return BoolLit(True)
    if token.text == "false" and token.kind == "id":
        ts.advance()
        return BoolLit(False)
    if token.text == "(":
        # Either a parenthesised predicate or a parenthesised term followed by
        # a comparison; try the predicate reading first and fall back.
        saved = ts.index
        ts.advance()
        try:
            pred = _parse_predicate(ts)
            ts.expect(")")
        except DslSyntaxError:
            ts.index = saved
        else:
            if ts.current.text in _COMPARISONS:
                ts.index = saved
            else:
                return pred
    return _parse_comparison(ts)


def _parse_comparison(ts: _TokenStream) -> Pred:
    left = _parse_term(ts)
    token = ts.current
    if token.text not in _COMPARISONS:
        raise ts.error(f"expected a comparison operator, found {token.text!r}")
    ts.advance()
    right = _parse_term(ts)
    if token.text == "==":
        return Cmp("=", left, right)
    if token.text == "!=":
        return Not(Cmp("=", left, right))
    return Cmp(token.text, left, right)


def parse_term(text: str) -> Term:
    """Parse a single term written in the DSL's expression syntax."""
    ts = _TokenStream(_tokenize(text))
    term = _parse_term(ts)
    if ts.current.kind != "eof":
        raise ts.error(f"unexpected trailing input {ts.current.text!r}")
    return term


def parse_predicate(text: str) -> Pred:
    """Parse a single predicate written in the DSL's expression syntax."""
    ts = _TokenStream(_tokenize(text))
    pred = _parse_predicate(ts)
    if ts.current.kind != "eof":
        raise ts.error(f"unexpected trailing input {ts.current.text!r}")
    return pred


# ---------------------------------------------------------------------------
# System files
# ---------------------------------------------------------------------------


def loads_system(text: str) -> SymbolicSystem:
    """Parse a system definition from a string. See the module docstring."""
    ts = _TokenStream(_tokenize(text))

    ts.expect("system")
    name = ts.expect_id("system name").text
    ts.expect(";")

    ts.expect("vars")
    variables: list[str] = []
    while True:
        var = ts.expect_id("variable name").text
        ts.expect(":")
        ts.expect("int")
        if var in variables:
            raise ts.error(f"variable {var!r} declared twice")
        variables.append(var)
        if not ts.accept(","):
            break
    ts.expect(";")

    ts.expect("branching")
    if ts.current.text == "*":
        raise UnboundedBranchingError(
            "unbounded branching ('branching *') is not supported: the "
            "transition relation must decompose into finitely many "
            "successor functions"
        )
    k = ts.expect_num()
    if k < 1:
        raise ts.error("branching bound must be a positive integer")
    ts.expect(";")

    ts.expect("init")
    init = _parse_predicate(ts)
    ts.expect(";")

    labels: dict[str, Pred] = {}
    while ts.current.text == "label":
        ts.advance()
        label_name = ts.expect_id("label name").text
        if label_name in labels:
            raise ts.error(f"label {label_name!r} declared twice")
        ts.expect(":=")
        labels[label_name] = _parse_predicate(ts)
        ts.expect(";")

    branch_updates: dict[int, dict[str, Term]] = {}
    while ts.current.text == "branch":
        ts.advance()
        index = ts.expect_num()
        if index in branch_updates:
            raise ts.error(f"branch {index} declared twice")
        ts.expect(":")
        updates: dict[str, Term] = {}
        while True:
            var = ts.expect_id("variable name").text
            if var not in variables:
                raise ts.error(f"branch {index} updates undeclared variable {var!r}")
            if var in updates:
                raise ts.error(f"branch {index} updates {var!r} twice")
            ts.expect(":=")
            updates[var] = _parse_term(ts)
            if not ts.accept(","):
                break
        ts.expect(";")
        branch_updates[index] = updates

    if ts.current.kind != "eof":
        raise ts.error(f"unexpected statement {ts.current.text!r}")

    if not branch_updates:
        raise SystemDefinitionError("at least one branch must be declared")
    declared = sorted(branch_updates)
    if declared != list(range(1, len(declared) + 1)):
        raise SystemDefinitionError(
            f"branch indices must be contiguous starting at 1, found {declared}"
        )
    if len(declared) > k:
        raise SystemDefinitionError(
            f"{len(declared)} branches declared but branching bound is {k}"
        )

    # Updates are simultaneous; unmentioned variables keep their value.
    # Missing trailing branches repeat the last declared alternative.
    successors = []
    for index in range(1, k + 1):
        updates = branch_updates[min(index, len(declared))]
        successors.append({v: updates.get(v, Var(v)) for v in variables})

    _reject_nonlinear(successors, init, labels)

    return SymbolicSystem(
        name=name,
        variables=tuple(variables),
        k=k,
        successors=tuple(successors),
        init=init,
        labels=labels,
    )


def load_system(path: str | Path) -> SymbolicSystem:
    """Load a system definition from a file."""
    return loads_system(Path(path).read_text(encoding="utf-8"))


def _reject_nonlinear(
    successors: Sequence[Mapping[str, Term]], init: Pred, labels: Mapping[str, Pred]
) -> None:
    """Reject multiplications of two non-constant subterms (outside QF_LIA)."""
    for fn in successors:
        for term in fn.values():
            _check_linear_term(term)
    _check_linear_pred(init)
    for pred in labels.values():
        _check_linear_pred(pred)


def _check_linear_term(term: Term) -> None:
    if isinstance(term, (Var, Const)):
        return
    if isinstance(term, (Add, Sub)):
        _check_linear_term(term.left)
        _check_linear_term(term.right)
        return
    if isinstance(term, Mul):
        if not (_is_constant(term.left) or _is_constant(term.right)):
            raise SystemDefinitionError(
                "multiplication of two variable terms is not supported "
                "(only linear integer arithmetic)"
            )
        _check_linear_term(term.left)
        _check_linear_term(term.right)
        return
    if isinstance(term, Neg):
        _check_linear_term(term.operand)
        return
    if isinstance(term, Ite):
        _check_linear_pred(term.cond)
        _check_linear_term(term.then)
        _check_linear_term(term.orelse)
        return
    raise TypeError(f"not a term: {term!r}")


def _check_linear_pred(pred: Pred) -> None:
    if isinstance(pred, BoolLit):
        return
    if isinstance(pred, Cmp):
        _check_linear_term(pred.left)
        _check_linear_term(pred.right)
        return
    if isinstance(pred, (And, Or)):
        for p in pred.args:
            _check_linear_pred(p)
        return
    if isinstance(pred, Not):
        _check_linear_pred(pred.arg)
        return
    raise TypeError(f"not a predicate: {pred!r}")


def _is_constant(term: Term) -> bool:
    if isinstance(term, Const):
        return True
    if isinstance(term, Neg):
        return _is_constant(term.operand)
    return False
