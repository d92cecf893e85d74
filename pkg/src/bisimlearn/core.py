"""Symbolic transition systems over integer state spaces.

Expression and predicate ASTs, concrete-state evaluation, substitution,
simplification, and the `SymbolicSystem` model type: a state space Z^n
together with k total deterministic successor functions, an initial
region, and named labelling predicates.

All types in this module are immutable; instances can be shared freely
across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence, Union

__all__ = [
    "Add",
    "And",
    "BoolLit",
    "Cmp",
    "Const",
    "FALSE",
    "Ite",
    "Mul",
    "Neg",
    "Not",
    "Or",
    "Pred",
    "State",
    "Sub",
    "SymbolicSystem",
    "SystemDefinitionError",
    "Term",
    "TRUE",
    "Var",
    "conj",
    "disj",
    "eval_pred",
    "eval_term",
    "mk_not",
    "pred_to_str",
    "pred_vars",
    "simplify_pred",
    "simplify_term",
    "subst_pred",
    "subst_term",
    "term_to_str",
    "term_vars",
]


class SystemDefinitionError(Exception):
    """A transition-system definition is malformed (raised at load time)."""


# ---------------------------------------------------------------------------
# Terms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Var:
    """Reference to an integer-typed variable by name."""

    name: str


@dataclass(frozen=True)
class Const:
    """Integer literal (arbitrary precision)."""

    value: int


@dataclass(frozen=True)
class Add:
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class Sub:
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class Mul:
    left: "Term"
    right: "Term"


@dataclass(frozen=True)
class Neg:
    operand: "Term"


@dataclass(frozen=True)
class Ite:
    """Conditional term: value of `then` if `cond` holds, else `orelse`."""

    cond: "Pred"
    then: "Term"
    orelse: "Term"


Term = Union[Var, Const, Add, Sub, Mul, Neg, Ite]


# ---------------------------------------------------------------------------
# Predicates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoolLit:
    value: bool


@dataclass(frozen=True)
class Cmp:
    """Linear integer comparison. `op` is one of <=, <, =, >=, >."""

    op: str
    left: Term
    right: Term

    _OPS = ("<=", "<", "=", ">=", ">")

    def __post_init__(self) -> None:
        if self.op not in self._OPS:
            raise ValueError(f"unsupported comparison operator: {self.op!r}")


@dataclass(frozen=True)
class And:
    args: tuple["Pred", ...]


@dataclass(frozen=True)
class Or:
    args: tuple["Pred", ...]


@dataclass(frozen=True)
class Not:
    arg: "Pred"


Pred = Union[BoolLit, Cmp, And, Or, Not]

TRUE = BoolLit(True)
FALSE = BoolLit(False)


def conj(preds: Iterable[Pred]) -> Pred:
    """Conjunction with flattening and boolean-literal absorption."""
    flat: list[Pred] = []
    for p in preds:
        if isinstance(p, BoolLit):
            if not p.value:
                return FALSE
            continue
        if isinstance(p, And):
            flat.extend(p.args)
        else:
            flat.append(p)
    if not flat:
        return TRUE
    if len(flat) == 1:
        return flat[0]
    return And(tuple(flat))


def disj(preds: Iterable[Pred]) -> Pred:
    """Disjunction with flattening and boolean-literal absorption."""
    flat: list[Pred] = []
    for p in preds:
        if isinstance(p, BoolLit):
            if p.value:
                return TRUE
            continue
        if isinstance(p, Or):
            flat.extend(p.args)
        else:
            flat.append(p)
    if not flat:
        return FALSE
    if len(flat) == 1:
        return flat[0]
    return Or(tuple(flat))


def mk_not(p: Pred) -> Pred:
    """Negation with literal folding and double-negation elimination."""
    if isinstance(p, BoolLit):
        return BoolLit(not p.value)
    if isinstance(p, Not):
        return p.arg
    return Not(p)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def eval_term(term: Term, env: Mapping[str, int]) -> int:
    """Evaluate `term` under a total assignment of integers to variables.

    Raises KeyError if the term references an unassigned variable; system
    loaders validate variable resolution up front so this never fires on
    well-formed inputs.
    """
    if isinstance(term, Const):
        return term.value
    if isinstance(term, Var):
        return env[term.name]
    if isinstance(term, Add):
        return eval_term(term.left, env) + eval_term(term.right, env)
    if isinstance(term, Sub):
        return eval_term(term.left, env) - eval_term(term.right, env)
    if isinstance(term, Mul):
        return eval_term(term.left, env) * eval_term(term.right, env)
    if isinstance(term, Neg):
        return -eval_term(term.operand, env)
    if isinstance(term, Ite):
        return eval_term(term.then if eval_pred(term.cond, env) else term.orelse, env)
    raise TypeError(f"not a term: {term!r}")


_CMP_FUNCS = {
    "<=": lambda a, b: a <= b,
    "<": lambda a, b: a < b,
    "=": lambda a, b: a == b,
    ">=": lambda a, b: a >= b,
    ">": lambda a, b: a > b,
}


def eval_pred(pred: Pred, env: Mapping[str, int]) -> bool:
    """Evaluate `pred` under a total assignment of integers to variables."""
    if isinstance(pred, BoolLit):
        return pred.value
    if isinstance(pred, Cmp):
        return _CMP_FUNCS[pred.op](eval_term(pred.left, env), eval_term(pred.right, env))
    if isinstance(pred, And):
        return all(eval_pred(p, env) for p in pred.args)
    if isinstance(pred, Or):
        return any(eval_pred(p, env) for p in pred.args)
    if isinstance(pred, Not):
        return not eval_pred(pred.arg, env)
    raise TypeError(f"not a predicate: {pred!r}")


# ---------------------------------------------------------------------------
# Variables, substitution, simplification
# ---------------------------------------------------------------------------


def term_vars(term: Term) -> frozenset[str]:
    """The set of variable names referenced by `term`."""
    if isinstance(term, Var):
        return frozenset((term.name,))
    if isinstance(term, Const):
        return frozenset()
    if isinstance(term, (Add, Sub, Mul)):
        return term_vars(term.left) | term_vars(term.right)
    if isinstance(term, Neg):
        return term_vars(term.operand)
    if isinstance(term, Ite):
        return pred_vars(term.cond) | term_vars(term.then) | term_vars(term.orelse)
    raise TypeError(f"not a term: {term!r}")


def pred_vars(pred: Pred) -> frozenset[str]:
    """The set of variable names referenced by `pred`."""
    if isinstance(pred, BoolLit):
        return frozenset()
    if isinstance(pred, Cmp):
        return term_vars(pred.left) | term_vars(pred.right)
    if isinstance(pred, (And, Or)):
        out: frozenset[str] = frozenset()
        for p in pred.args:
            out |= pred_vars(p)
        return out
    if isinstance(pred, Not):
        return pred_vars(pred.arg)
    raise TypeError(f"not a predicate: {pred!r}")


def subst_term(term: Term, sub: Mapping[str, Term]) -> Term:
    """Substitute terms for variables, leaving unmapped variables in place."""
    if isinstance(term, Var):
        return sub.get(term.name, term)
    if isinstance(term, Const):
        return term
    if isinstance(term, Add):
        return Add(subst_term(term.left, sub), subst_term(term.right, sub))
    if isinstance(term, Sub):
        return Sub(subst_term(term.left, sub), subst_term(term.right, sub))
    if isinstance(term, Mul):
        return Mul(subst_term(term.left, sub), subst_term(term.right, sub))
    if isinstance(term, Neg):
        return Neg(subst_term(term.operand, sub))
    if isinstance(term, Ite):
        return Ite(subst_pred(term.cond, sub), subst_term(term.then, sub), subst_term(term.orelse, sub))
    raise TypeError(f"not a term: {term!r}")


def subst_pred(pred: Pred, sub: Mapping[str, Term]) -> Pred:
    """Substitute terms for variables inside a predicate."""
    if isinstance(pred, BoolLit):
        return pred
    if isinstance(pred, Cmp):
        return Cmp(pred.op, subst_term(pred.left, sub), subst_term(pred.right, sub))
    if isinstance(pred, And):
        return And(tuple(subst_pred(p, sub) for p in pred.args))
    if isinstance(pred, Or):
        return Or(tuple(subst_pred(p, sub) for p in pred.args))
    if isinstance(pred, Not):
        return Not(subst_pred(pred.arg, sub))
    raise TypeError(f"not a predicate: {pred!r}")


def simplify_term(term: Term) -> Term:
    """Fold constant subexpressions and resolve conditionals with decided guards.

    Already-simplified input comes back as the same object, so subterms that
    are shared by reference keep their identity through repeated passes.
    """
    if isinstance(term, (Var, Const)):
        return term
    if isinstance(term, Add):
        left, right = simplify_term(term.left), simplify_term(term.right)
        if isinstance(left, Const) and isinstance(right, Const):
            return Const(left.value + right.value)
        if isinstance(left, Const) and left.value == 0:
            return right
        if isinstance(right, Const) and right.value == 0:
            return left
        if left is term.left and right is term.right:
            return term
        return Add(left, right)
    if isinstance(term, Sub):
        left, right = simplify_term(term.left), simplify_term(term.right)
        if isinstance(left, Const) and isinstance(right, Const):
            return Const(left.value - right.value)
        if isinstance(right, Const) and right.value == 0:
            return left
        if left is term.left and right is term.right:
            return term
        return Sub(left, right)
    if isinstance(term, Mul):
        left, right = simplify_term(term.left), simplify_term(term.right)
        if isinstance(left, Const) and isinstance(right, Const):
            return Const(left.value * right.value)
        for a, b in ((left, right), (right, left)):
            if isinstance(a, Const):
                if a.value == 0:
                    return Const(0)
                if a.value == 1:
                    return b
        if left is term.left and right is term.right:
            return term
        return Mul(left, right)
    if isinstance(term, Neg):
        operand = simplify_term(term.operand)
        if isinstance(operand, Const):
            return Const(-operand.value)
        if operand is term.operand:
            return term
        return Neg(operand)
    if isinstance(term, Ite):
        cond = simplify_pred(term.cond)
        if isinstance(cond, BoolLit):
            return simplify_term(term.then if cond.value else term.orelse)
        then, orelse = simplify_term(term.then), simplify_term(term.orelse)
        if cond is term.cond and then is term.then and orelse is term.orelse:
            return term
        return Ite(cond, then, orelse)
    raise TypeError(f"not a term: {term!r}")


def simplify_pred(pred: Pred) -> Pred:
    """Fold constant subformulas; flatten nested conjunctions/disjunctions.

    Like `simplify_term`, returns the input object itself when nothing
    changes, preserving sharing between repeated subformulas.
    """
    if isinstance(pred, BoolLit):
        return pred
    if isinstance(pred, Cmp):
        left, right = simplify_term(pred.left), simplify_term(pred.right)
        if isinstance(left, Const) and isinstance(right, Const):
            return BoolLit(_CMP_FUNCS[pred.op](left.value, right.value))
        if left is pred.left and right is pred.right:
            return pred
        return Cmp(pred.op, left, right)
    if isinstance(pred, And):
        args = tuple(simplify_pred(p) for p in pred.args)
        if (
            len(args) > 1
            and all(a is b for a, b in zip(args, pred.args))
            and not any(isinstance(a, (And, BoolLit)) for a in args)
        ):
            return pred
        return conj(args)
    if isinstance(pred, Or):
        args = tuple(simplify_pred(p) for p in pred.args)
        if (
            len(args) > 1
            and all(a is b for a, b in zip(args, pred.args))
            and not any(isinstance(a, (Or, BoolLit)) for a in args)
        ):
            return pred
        return disj(args)
    if isinstance(pred, Not):
        arg = simplify_pred(pred.arg)
        if arg is pred.arg and not isinstance(arg, (Not, BoolLit)):
            return pred
        return mk_not(arg)
    raise TypeError(f"not a predicate: {pred!r}")


# ---------------------------------------------------------------------------
# Pretty-printing (round-trips through the system DSL's expression syntax)
# ---------------------------------------------------------------------------


def term_to_str(term: Term) -> str:
    """Render a term in the DSL's infix syntax."""
    return _term_str(term, 0)


def _term_str(term: Term, prec: int) -> str:
    # precedence levels: 0 additive, 1 multiplicative, 2 atom
    if isinstance(term, Var):
        return term.name
    if isinstance(term, Const):
        return str(term.value) if term.value >= 0 else f"(-{-term.value})" if prec > 0 else f"-{-term.value}"
    if isinstance(term, Add):
        text = f"{_term_str(term.left, 0)} + {_term_str(term.right, 1)}"
        return f"({text})" if prec > 0 else text
    if isinstance(term, Sub):
        text = f"{_term_str(term.left, 0)} - {_term_str(term.right, 1)}"
        return f"({text})" if prec > 0 else text
    if isinstance(term, Mul):
        text = f"{_term_str(term.left, 1)} * {_term_str(term.right, 2)}"
        return f"({text})" if prec > 1 else text
    if isinstance(term, Neg):
        return f"-{_term_str(term.operand, 2)}"
    if isinstance(term, Ite):
        text = f"if {pred_to_str(term.cond)} then {_term_str(term.then, 0)} else {_term_str(term.orelse, 0)}"
        return f"({text})" if prec > 0 else text
    raise TypeError(f"not a term: {term!r}")


def pred_to_str(pred: Pred) -> str:
    """Render a predicate in the DSL's infix syntax."""
    return _pred_str(pred, 0)


def _pred_str(pred: Pred, prec: int) -> str:
    # precedence levels: 0 disjunctive, 1 conjunctive, 2 atom
    if isinstance(pred, BoolLit):
        return "true" if pred.value else "false"
    if isinstance(pred, Cmp):
        return f"{_term_str(pred.left, 0)} {pred.op} {_term_str(pred.right, 0)}"
    if isinstance(pred, And):
        if not pred.args:
            return "true"
        text = " && ".join(_pred_str(p, 2) for p in pred.args)
        return f"({text})" if prec > 1 else text
    if isinstance(pred, Or):
        if not pred.args:
            return "false"
        text = " || ".join(_pred_str(p, 1) for p in pred.args)
        return f"({text})" if prec > 0 else text
    if isinstance(pred, Not):
        return f"!({_pred_str(pred.arg, 0)})"
    raise TypeError(f"not a predicate: {pred!r}")


# ---------------------------------------------------------------------------
# States and systems
# ---------------------------------------------------------------------------

State = tuple[int, ...]

SuccessorFunction = Mapping[str, Term]


@dataclass(frozen=True)
class SymbolicSystem:
    """A non-blocking transition system over Z^n with bounded branching.

    The transition relation is the union of exactly `k` total deterministic
    successor functions; systems with fewer alternatives at some state
    duplicate successors to reach the fixed branching bound.

    Attributes
    ----------
    name:
        Identifier from the source file (diagnostics only).
    variables:
        Declared state variables, in declaration order; dimension n.
    k:
        Branching bound; `successors` has exactly this many entries.
    successors:
        For each branch index, a total map from variable name to update term.
    init:
        Predicate carving out the initial region I.
    labels:
        Atomic-proposition name -> defining predicate, in declaration order.
    """

    name: str
    variables: tuple[str, ...]
    k: int
    successors: tuple[Mapping[str, Term], ...]
    init: Pred
    labels: Mapping[str, Pred]

    def __post_init__(self) -> None:
        if not self.variables:
            raise SystemDefinitionError("a system needs at least one variable")
        if len(set(self.variables)) != len(self.variables):
            raise SystemDefinitionError("duplicate variable declaration")
        if self.k < 1:
            raise SystemDefinitionError("branching bound must be a positive integer")
        if len(self.successors) != self.k:
            raise SystemDefinitionError(
                f"expected {self.k} successor functions, found {len(self.successors)}"
            )
        declared = set(self.variables)
        for i, fn in enumerate(self.successors, start=1):
            missing = declared - set(fn)
            if missing:
                raise SystemDefinitionError(
                    f"branch {i} does not update variables {sorted(missing)}"
                )
            for var, term in fn.items():
                if var not in declared:
                    raise SystemDefinitionError(f"branch {i} updates undeclared variable {var!r}")
                bad = term_vars(term) - declared
                if bad:
                    raise SystemDefinitionError(
                        f"branch {i} update of {var!r} references undeclared {sorted(bad)}"
                    )
        bad = pred_vars(self.init) - declared
        if bad:
            raise SystemDefinitionError(f"init references undeclared variables {sorted(bad)}")
        for label, pred in self.labels.items():
            bad = pred_vars(pred) - declared
            if bad:
                raise SystemDefinitionError(
                    f"label {label!r} references undeclared variables {sorted(bad)}"
                )

    # -- concrete semantics -------------------------------------------------

    def state_env(self, state: State) -> dict[str, int]:
        """Map variable names to the components of `state`."""
        if len(state) != len(self.variables):
            raise ValueError(
                f"state dimension {len(state)} does not match {len(self.variables)} variables"
            )
        return dict(zip(self.variables, state))

    def successor_states(self, state: State) -> list[State]:
        """All k successors of `state`, in branch order (duplicates possible)."""
        env = self.state_env(state)
        return [
            tuple(eval_term(fn[v], env) for v in self.variables) for fn in self.successors
        ]

    def labels_of(self, state: State) -> frozenset[str]:
        """The set of atomic propositions holding at `state`."""
        env = self.state_env(state)
        return frozenset(name for name, pred in self.labels.items() if eval_pred(pred, env))

    def is_initial(self, state: State) -> bool:
        return eval_pred(self.init, self.state_env(state))

    # -- symbolic helpers ----------------------------------------------------

    def identity_point(self) -> dict[str, Term]:
        """The symbolic state point {v: Var(v)}."""
        return {v: Var(v) for v in self.variables}

    def successor_point(self, branch: int, point: Mapping[str, Term]) -> dict[str, Term]:
        """The symbolic successor sigma_branch applied to a symbolic state point."""
        fn = self.successors[branch]
        return {v: subst_term(fn[v], point) for v in self.variables}


def eval_term_at(system: SymbolicSystem, term: Term, state: State) -> int:
    """Evaluate a term at a concrete state of `system`."""
    return eval_term(term, system.state_env(state))
