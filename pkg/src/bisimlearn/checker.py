"""CTL*-without-next model checking over finite quotients.

Properties are state formulas: `true`, label atoms, `&&`, `!`, and the
path quantifier `E` (with `A p` sugar for `! E ! p`); path formulas add
`U` (with `F p` = `true U p` and `G p` = `! (true U ! p)`).  The
next-time operator is rejected: it is not invariant under stuttering,
which the quotient deliberately abstracts away.

Evaluation is bottom-up on state subformulas.  Each `E psi` first
collapses the maximal state subformulas of `psi` into class sets, then:
pure boolean combinations fold directly; `E (X U Y)` and `E G Y` run
standard fixpoint iteration (an until whose suffix is a general path
formula composes through `E` first: a witness path is a prefix in X
followed by a witness for the suffix); everything else goes through a
tableau construction — assignments over the elementary subformulas,
product with the quotient graph, and a search for a reachable cycle
that fulfils every until.

Self-loops in the quotient are ordinary edges; paths are infinite
(quotients are total by construction).

`exists_until_lasso` and `exists_always_lasso` are deliberately naive
path-enumeration engines used as independent ground truth for the two
fixpoints; they share no graph code with the main evaluator.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Union

from bisimlearn.core import Pred, SymbolicSystem, TRUE, conj, disj, simplify_pred
from bisimlearn.quotient import Quotient
from bisimlearn.templates import ClassifierTemplate, ParamAssignment

__all__ = [
    "PAnd",
    "PNot",
    "PState",
    "PUntil",
    "PropertySyntaxError",
    "SAnd",
    "SAtom",
    "SExists",
    "SNot",
    "STrue",
    "Verdict",
    "atoms_of",
    "check",
    "exists_always_lasso",
    "exists_until_lasso",
    "lift",
    "parse_property",
]


# ---------------------------------------------------------------------------
# Formula AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class STrue:
    pass


@dataclass(frozen=True)
class SAtom:
    name: str


@dataclass(frozen=True)
class SAnd:
    args: tuple["SFormula", ...]


@dataclass(frozen=True)
class SNot:
    arg: "SFormula"


@dataclass(frozen=True)
class SExists:
    path: "PFormula"


SFormula = Union[STrue, SAtom, SAnd, SNot, SExists]


@dataclass(frozen=True)
class PState:
    state: SFormula


@dataclass(frozen=True)
class PAnd:
    args: tuple["PFormula", ...]


@dataclass(frozen=True)
class PNot:
    arg: "PFormula"


@dataclass(frozen=True)
class PUntil:
    lhs: "PFormula"
    rhs: "PFormula"


PFormula = Union[PState, PAnd, PNot, PUntil]


@dataclass(frozen=True)
class _PSet:
    """Internal: a state subformula already evaluated to a class set."""

    classes: frozenset[int]


def atoms_of(formula: SFormula) -> frozenset[str]:
    found: set[str] = set()

    def walk(node) -> None:
        if isinstance(node, SAtom):
            found.add(node.name)
        elif isinstance(node, (SAnd, PAnd)):
            for a in node.args:
                walk(a)
        elif isinstance(node, (SNot, PNot)):
            walk(node.arg)
        elif isinstance(node, SExists):
            walk(node.path)
        elif isinstance(node, PState):
            walk(node.state)
        elif isinstance(node, PUntil):
            walk(node.lhs)
            walk(node.rhs)

    walk(formula)
    return frozenset(found)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class PropertySyntaxError(Exception):
    def __init__(self, message: str, position: int) -> None:
        super().__init__(f"{message} (at offset {position})")
        self.position = position


_PROP_TOKEN = re.compile(r"\s+|(?P<op>&&|\|\||->|[!()])|(?P<id>[A-Za-z_][A-Za-z0-9_]*)")

_PATH_OPS = frozenset("EAFGXU")


def _tokenize_property(text: str) -> list[tuple[str, str, int]]:
    tokens: list[tuple[str, str, int]] = []
    pos = 0
    while pos < len(text):
        m = _PROP_TOKEN.match(text, pos)
        if not m:
            raise PropertySyntaxError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup == "op":
            tokens.append(("op", m.group("op"), pos))
        elif m.lastgroup == "id":
            word = m.group("id")
            if len(word) == 1 and word in _PATH_OPS:
                tokens.append(("temporal", word, pos))
            elif word in ("true", "false"):
                tokens.append(("const", word, pos))
            else:
                tokens.append(("atom", word, pos))
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


# Generic nodes produced by the parser before the state/path split.
_G_TRUE, _G_FALSE, _G_ATOM, _G_NOT, _G_AND, _G_OR, _G_IMP = range(7)
_G_E, _G_A, _G_F, _G_G, _G_U = range(7, 12)


@dataclass(frozen=True)
class _G:
    kind: int
    args: tuple = ()
    name: str = ""


class _PropParser:
    """Precedence, loosest to tightest: ->, ||, &&, U, prefix operators."""

    def __init__(self, tokens: list[tuple[str, str, int]]) -> None:
        self.tokens = tokens
        self.i = 0

    @property
    def current(self) -> tuple[str, str, int]:
        return self.tokens[self.i]

    def _accept(self, kind: str, text: str) -> bool:
        k, t, _ = self.current
        if k == kind and t == text:
            self.i += 1
            return True
        return False

    def parse(self) -> _G:
        node = self._imp()
        kind, text, pos = self.current
        if kind != "eof":
            raise PropertySyntaxError(f"unexpected {text!r}", pos)
        return node

    def _imp(self) -> _G:
        left = self._or()
        if self._accept("op", "->"):
            return _G(_G_IMP, (left, self._imp()))
        return left

    def _or(self) -> _G:
        node = self._and()
        while self._accept("op", "||"):
            node = _G(_G_OR, (node, self._and()))
        return node

    def _and(self) -> _G:
        node = self._until()
        while self._accept("op", "&&"):
            node = _G(_G_AND, (node, self._until()))
        return node

    def _until(self) -> _G:
        left = self._unary()
        if self._accept("temporal", "U"):
            return _G(_G_U, (left, self._until()))
        return left

    def _unary(self) -> _G:
        kind, text, pos = self.current
        if kind == "op" and text == "!":
            self.i += 1
            return _G(_G_NOT, (self._unary(),))
        if kind == "temporal":
            if text == "X":
                raise PropertySyntaxError(
                    "the next-time operator is not supported", pos
                )
            if text == "U":
                raise PropertySyntaxError("'U' is a binary operator", pos)
            self.i += 1
            table = {"E": _G_E, "A": _G_A, "F": _G_F, "G": _G_G}
            return _G(table[text], (self._unary(),))
        return self._primary()

    def _primary(self) -> _G:
        kind, text, pos = self.current
        if kind == "op" and text == "(":
            self.i += 1
            node = self._imp()
            if not self._accept("op", ")"):
                raise PropertySyntaxError("expected ')'", self.current[2])
            return node
        if kind == "const":
            self.i += 1
            return _G(_G_TRUE) if text == "true" else _G(_G_FALSE)
        if kind == "atom":
            self.i += 1
            return _G(_G_ATOM, name=text)
        raise PropertySyntaxError(f"expected a formula, found {text or 'end'!r}", pos)


def _is_state_level(node: _G) -> bool:
    if node.kind in (_G_TRUE, _G_FALSE, _G_ATOM, _G_E, _G_A):
        return True
    if node.kind in (_G_NOT, _G_AND, _G_OR, _G_IMP):
        return all(_is_state_level(a) for a in node.args)
    return False


def _to_state(node: _G) -> SFormula:
    if node.kind == _G_TRUE:
        return STrue()
    if node.kind == _G_FALSE:
        return SNot(STrue())
    if node.kind == _G_ATOM:
        return SAtom(node.name)
    if node.kind == _G_NOT:
        return SNot(_to_state(node.args[0]))
    if node.kind == _G_AND:
        return SAnd(tuple(_to_state(a) for a in node.args))
    if node.kind == _G_OR:
        return SNot(SAnd(tuple(SNot(_to_state(a)) for a in node.args)))
    if node.kind == _G_IMP:
        lhs, rhs = node.args
        return SNot(SAnd((_to_state(lhs), SNot(_to_state(rhs)))))
    if node.kind == _G_E:
        return SExists(_to_path(node.args[0]))
    if node.kind == _G_A:
        return SNot(SExists(PNot(_to_path(node.args[0]))))
    raise PropertySyntaxError(
        "temporal operator outside a path quantifier; wrap it in E or A", 0
    )


def _to_path(node: _G) -> PFormula:
    if _is_state_level(node):
        return PState(_to_state(node))
    if node.kind == _G_NOT:
        return PNot(_to_path(node.args[0]))
    if node.kind == _G_AND:
        return PAnd(tuple(_to_path(a) for a in node.args))
    if node.kind == _G_OR:
        return PNot(PAnd(tuple(PNot(_to_path(a)) for a in node.args)))
    if node.kind == _G_IMP:
        lhs, rhs = node.args
        return PNot(PAnd((_to_path(lhs), PNot(_to_path(rhs)))))
    if node.kind == _G_F:
        return PUntil(PState(STrue()), _to_path(node.args[0]))
    if node.kind == _G_G:
        return PNot(PUntil(PState(STrue()), PNot(_to_path(node.args[0]))))
    if node.kind == _G_U:
        return PUntil(_to_path(node.args[0]), _to_path(node.args[1]))
    raise AssertionError("unreachable")


def parse_property(text: str, alphabet: Iterable[str] | None = None) -> SFormula:
    """Parse a property into a state formula.

    If `alphabet` is given, atoms outside it are rejected immediately.
    """
    stripped = "\n".join(
        line.split("#", 1)[0] for line in text.splitlines()
    ).strip()
    if not stripped:
        raise PropertySyntaxError("empty property", 0)
    node = _PropParser(_tokenize_property(stripped)).parse()
    formula = _to_state(node)
    if alphabet is not None:
        unknown = atoms_of(formula) - frozenset(alphabet)
        if unknown:
            raise PropertySyntaxError(
                f"unknown atoms: {', '.join(sorted(unknown))}", 0
            )
    return formula


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    """Model-checking outcome on a quotient.

    `holds` means the quotient has at least one initial class and every
    initial class satisfies the property.  `condition` is the
    disjunction of the satisfying classes' region formulas, conjoined
    with the initial predicate when one is supplied to `check`; `lift`
    produces the same thing from a classifier.
    """

    satisfying: frozenset[int]
    holds: bool
    condition: Pred


def _pre_exists(q: Quotient, target: frozenset[int]) -> frozenset[int]:
    return frozenset(c for c, d in q.edges if d in target)


def _eu_fixpoint(
    q: Quotient, hold: frozenset[int], goal: frozenset[int]
) -> frozenset[int]:
    result = goal
    while True:
        grown = result | (hold & _pre_exists(q, result))
        if grown == result:
            return result
        result = grown


def _eg_fixpoint(q: Quotient, stay: frozenset[int]) -> frozenset[int]:
    result = stay
    while True:
        shrunk = stay & _pre_exists(q, result)
        if shrunk == result:
            return result
        result = shrunk


def _fold_state_level(node: PFormula, universe: frozenset[int]) -> frozenset[int] | None:
    """Collapse an until-free formula over _PSet leaves to a class set."""
    if isinstance(node, _PSet):
        return node.classes
    if isinstance(node, PNot):
        inner = _fold_state_level(node.arg, universe)
        return None if inner is None else universe - inner
    if isinstance(node, PAnd):
        out = universe
        for a in node.args:
            inner = _fold_state_level(a, universe)
            if inner is None:
                return None
            out &= inner
        return out
    return None


class _Evaluator:
    def __init__(self, q: Quotient, alphabet: frozenset[str] | None = None) -> None:
        self.q = q
        self.universe = frozenset(q.classes)
        self.alphabet = q.alphabet() | (alphabet or frozenset())
        self._memo: dict[SFormula, frozenset[int]] = {}

    def state_set(self, f: SFormula) -> frozenset[int]:
        if f in self._memo:
            return self._memo[f]
        if isinstance(f, STrue):
            result = self.universe
        elif isinstance(f, SAtom):
            if f.name not in self.alphabet:
                raise ValueError(
                    f"atom {f.name!r} is not a label of this quotient "
                    f"(labels: {', '.join(sorted(self.alphabet)) or 'none'})"
                )
            result = self.q.atom_classes(f.name)
        elif isinstance(f, SAnd):
            result = self.universe
            for a in f.args:
                result &= self.state_set(a)
        elif isinstance(f, SNot):
            result = self.universe - self.state_set(f.arg)
        elif isinstance(f, SExists):
            result = self.exists_set(self._reduce(f.path))
        else:
            raise TypeError(f"not a state formula: {f!r}")
        self._memo[f] = result
        return result

    def _reduce(self, p: PFormula) -> PFormula:
        """Replace maximal state subformulas with evaluated class sets."""
        if isinstance(p, PState):
            return _PSet(self.state_set(p.state))
        if isinstance(p, PAnd):
            return PAnd(tuple(self._reduce(a) for a in p.args))
        if isinstance(p, PNot):
            return PNot(self._reduce(p.arg))
        if isinstance(p, PUntil):
            return PUntil(self._reduce(p.lhs), self._reduce(p.rhs))
        raise TypeError(f"not a path formula: {p!r}")

    def exists_set(self, p: PFormula) -> frozenset[int]:
        """Classes from which some path satisfies the reduced formula `p`."""
        folded = _fold_state_level(p, self.universe)
        if folded is not None:
            return folded
        if isinstance(p, PUntil):
            hold = _fold_state_level(p.lhs, self.universe)
            if hold is not None:
                goal = _fold_state_level(p.rhs, self.universe)
                if goal is None:
                    # A witness is a prefix inside `hold` followed by a
                    # witness for the suffix formula.
                    goal = self.exists_set(p.rhs)
                return _eu_fixpoint(self.q, hold, goal)
        if isinstance(p, PNot) and isinstance(p.arg, PUntil):
            scope = _fold_state_level(p.arg.lhs, self.universe)
            if scope == self.universe and isinstance(p.arg.rhs, PNot):
                stay = _fold_state_level(p.arg.rhs.arg, self.universe)
                if stay is not None:
                    return _eg_fixpoint(self.q, stay)
        return _tableau_exists(self.q, p)


def _tableau_exists(q: Quotient, p: PFormula) -> frozenset[int]:
    """Decide `E p` for a general reduced path formula via a tableau.

    Assignments of truth values to the elementary subformulas (class-set
    leaves and untils) are the candidate per-position valuations; the
    product with the quotient graph admits exactly the runs whose until
    claims expand consistently; a run is accepting when, for every
    until, positions claiming it pending-but-unfulfilled do not persist
    forever.  `E p` holds at a class iff some product node asserting `p`
    at that class reaches a cycle-closed strongly connected component
    intersecting every until's fulfilment set.
    """
    elementary: list = []

    def collect(node: PFormula) -> None:
        if isinstance(node, _PSet):
            if node not in elementary:
                elementary.append(node)
        elif isinstance(node, PAnd):
            for a in node.args:
                collect(a)
        elif isinstance(node, PNot):
            collect(node.arg)
        elif isinstance(node, PUntil):
            if node not in elementary:
                elementary.append(node)
            collect(node.lhs)
            collect(node.rhs)
        else:
            raise TypeError(f"unexpected node in reduced formula: {node!r}")

    collect(p)
    index = {e: i for i, e in enumerate(elementary)}
    psets = [e for e in elementary if isinstance(e, _PSet)]
    untils = [e for e in elementary if isinstance(e, PUntil)]

    def val(a: tuple[bool, ...], node: PFormula) -> bool:
        if isinstance(node, (_PSet, PUntil)):
            return a[index[node]]
        if isinstance(node, PAnd):
            return all(val(a, x) for x in node.args)
        if isinstance(node, PNot):
            return not val(a, node.arg)
        raise TypeError

    assignments = list(itertools.product((False, True), repeat=len(elementary)))

    def consistent(c: int, a: tuple[bool, ...]) -> bool:
        return all(a[index[ps]] == (c in ps.classes) for ps in psets)

    nodes = [(c, a) for c in q.classes for a in assignments if consistent(c, a)]
    node_ids = {n: i for i, n in enumerate(nodes)}

    def expands(a: tuple[bool, ...], b: tuple[bool, ...]) -> bool:
        return all(
            a[index[u]] == (val(a, u.rhs) or (val(a, u.lhs) and b[index[u]]))
            for u in untils
        )

    succs: list[list[int]] = [[] for _ in nodes]
    for (c, a), i in node_ids.items():
        for (d, b), j in node_ids.items():
            if (c, d) in q.edges and expands(a, b):
                succs[i].append(j)

    fulfils = [
        frozenset(
            i
            for (c, a), i in node_ids.items()
            if not a[index[u]] or val(a, u.rhs)
        )
        for u in untils
    ]

    # Iterative Tarjan SCC over the product graph.
    sccs: list[list[int]] = []
    disc = [-1] * len(nodes)
    low = [0] * len(nodes)
    on_stack = [False] * len(nodes)
    stack: list[int] = []
    counter = 0
    for root in range(len(nodes)):
        if disc[root] != -1:
            continue
        work = [(root, 0)]
        while work:
            v, pi = work[-1]
            if pi == 0:
                disc[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            advanced = False
            while pi < len(succs[v]):
                w = succs[v][pi]
                pi += 1
                if disc[w] == -1:
                    work[-1] = (v, pi)
                    work.append((w, 0))
                    advanced = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], disc[w])
            if advanced:
                continue
            work.pop()
            if low[v] == disc[v]:
                scc = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    scc.append(w)
                    if w == v:
                        break
                sccs.append(scc)
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])

    good: set[int] = set()
    for scc in sccs:
        members = set(scc)
        has_cycle = len(scc) > 1 or any(w in members for w in succs[scc[0]])
        if not has_cycle:
            continue
        if all(members & f for f in fulfils):
            good.update(members)

    # Nodes that can reach a good component (backward closure).
    preds: list[list[int]] = [[] for _ in nodes]
    for i, out in enumerate(succs):
        for j in out:
            preds[j].append(i)
    reach = set(good)
    frontier = list(good)
    while frontier:
        j = frontier.pop()
        for i in preds[j]:
            if i not in reach:
                reach.add(i)
                frontier.append(i)

    return frozenset(
        c for (c, a), i in node_ids.items() if i in reach and val(a, p)
    )


def check(
    q: Quotient,
    formula: SFormula,
    init: Pred | None = None,
    alphabet: frozenset[str] | None = None,
) -> Verdict:
    """Evaluate a state formula on every class of the quotient.

    The verdict holds iff the quotient has initial classes and all of
    them satisfy the formula.  `alphabet` declares extra atoms that are
    legal but hold on no class (a quotient cannot itself distinguish an
    everywhere-false label from an unknown one).
    """
    evaluator = _Evaluator(q, alphabet)
    satisfying = evaluator.state_set(formula)
    holds = bool(q.initial) and q.initial <= satisfying
    condition = disj([q.regions[c] for c in sorted(satisfying)])
    if init is not None:
        condition = conj([init, condition])
    return Verdict(satisfying, holds, simplify_pred(condition))


def lift(
    system: SymbolicSystem,
    template: ClassifierTemplate,
    assignment: ParamAssignment,
    verdict: Verdict,
) -> Pred:
    """The exact initial condition under which the property holds.

    Concrete states satisfying the returned predicate are precisely the
    initial states whose class is in the verdict's satisfying set.
    """
    regions = [
        template.class_region(c, assignment) for c in sorted(verdict.satisfying)
    ]
    return simplify_pred(conj([system.init, disj(regions)]))


# ---------------------------------------------------------------------------
# Independent path-enumeration ground truth
# ---------------------------------------------------------------------------


def exists_until_lasso(
    q: Quotient, hold: frozenset[int], goal: frozenset[int]
) -> frozenset[int]:
    """Classes with a path reaching `goal` through `hold`, by explicit
    enumeration of repetition-free paths (a minimal witness never
    revisits a state)."""
    adjacency: dict[int, list[int]] = {c: [] for c in q.classes}
    for c, d in q.edges:
        adjacency[c].append(d)

    def search(c: int, seen: set[int]) -> bool:
        if c in goal:
            return True
        if c not in hold:
            return False
        for d in adjacency[c]:
            if d not in seen and search(d, seen | {d}):
                return True
        return False

    return frozenset(c for c in q.classes if search(c, {c}))


def exists_always_lasso(q: Quotient, stay: frozenset[int]) -> frozenset[int]:
    """Classes with an infinite path inside `stay`, by explicit
    enumeration of paths cut at their first repeated state (a minimal
    witness is a simple stem closed by one cycle)."""
    adjacency: dict[int, list[int]] = {c: [] for c in q.classes}
    for c, d in q.edges:
        adjacency[c].append(d)

    def search(path: list[int]) -> bool:
        tip = path[-1]
        for d in adjacency[tip]:
            if d not in stay:
                continue
            if d in path:
                return True
            if search(path + [d]):
                return True
        return False

    return frozenset(c for c in q.classes if c in stay and search([c]))
