"""Parametric state classifiers and ranking functions.

A classifier is a binary decision tree over states.  The top of the
tree tests the system's observation predicates (fixed, no parameters);
beneath each observation cell sit parametric affine tests
``theta_1 . s + theta_0 <= 0`` whose integer coefficients are the
unknowns synthesized by the learner.  Each leaf is one candidate
equivalence class.

Ranking functions are affine forms ``eta_1 . u + eta_2 . v + eta_3``
over a pair of states, either one global form or one form per class.

Parameter names use ``!`` as a separator (legal in SMT-LIB2 symbols,
unparseable as a system variable), so they can never collide with state
variables.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterator, Mapping, Sequence, Union

from bisimlearn.core import (
    Add,
    And,
    Cmp,
    Const,
    Mul,
    Pred,
    Term,
    TRUE,
    Var,
    conj,
    disj,
    eval_pred,
    eval_term,
    mk_not,
    pred_to_str,
    simplify_pred,
    simplify_term,
    subst_pred,
    SymbolicSystem,
)


def _add(left: Term, right: Term) -> Term:
    return Add(left, right)
from bisimlearn.dsl import parse_predicate

__all__ = [
    "ClassifierTemplate",
    "LabelNode",
    "Leaf",
    "ParamAssignment",
    "RankingTemplate",
    "SplitNode",
    "initial_template",
]


ParamAssignment = Mapping[str, int]
"""A total valuation of template parameters (names to integers)."""


def zeros(names: Sequence[str]) -> dict[str, int]:
    """The all-zero parameter assignment over `names`."""
    return {name: 0 for name in names}


# ---------------------------------------------------------------------------
# Tree nodes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Leaf:
    """A candidate class.  `sink` marks provably uniform cells that are
    never refined (every state in the cell only loops to itself)."""

    class_id: int
    sink: bool = False


@dataclass(frozen=True)
class LabelNode:
    """Fixed test: does the state satisfy this observation predicate?"""

    pred: Pred
    on_true: "Node"
    on_false: "Node"


@dataclass(frozen=True)
class SplitNode:
    """Parametric test: theta_1 . s + theta_0 <= 0, coefficients unknown."""

    index: int
    on_true: "Node"
    on_false: "Node"


Node = Union[Leaf, LabelNode, SplitNode]


def split_coeff(index: int, var: str) -> str:
    return f"th!{index}!{var}"


def split_offset(index: int) -> str:
    return f"th!{index}!off"


def _iter_leaves(node: Node) -> Iterator[Leaf]:
    if isinstance(node, Leaf):
        yield node
    else:
        yield from _iter_leaves(node.on_true)
        yield from _iter_leaves(node.on_false)


# ---------------------------------------------------------------------------
# Classifier
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassifierTemplate:
    """A decision tree classifying states into candidate classes.

    `variables` fixes the coefficient layout of parametric splits;
    `n_splits` is the number of split indices allocated so far.
    """

    variables: tuple[str, ...]
    root: Node
    n_splits: int

    def classes(self) -> tuple[int, ...]:
        return tuple(leaf.class_id for leaf in _iter_leaves(self.root))

    def depth(self) -> int:
        def height(node: Node) -> int:
            if isinstance(node, Leaf):
                return 0
            return 1 + max(height(node.on_true), height(node.on_false))

        return height(self.root)

    def params(self) -> tuple[str, ...]:
        names: list[str] = []
        for index in self._split_indices():
            names.extend(split_coeff(index, v) for v in self.variables)
            names.append(split_offset(index))
        return tuple(names)

    def _split_indices(self) -> list[int]:
        found: list[int] = []

        def walk(node: Node) -> None:
            if isinstance(node, Leaf):
                return
            if isinstance(node, SplitNode):
                found.append(node.index)
            walk(node.on_true)
            walk(node.on_false)

        walk(self.root)
        return sorted(found)

    # -- formulas -----------------------------------------------------------

    def _split_form(
        self, index: int, point: Mapping[str, Term], assignment: ParamAssignment | None
    ) -> Term:
        """The affine form theta_1 . point + theta_0 of split `index`."""
        total: Term = Const(0)
        for v in self.variables:
            coeff: Term
            if assignment is None:
                coeff = Var(split_coeff(index, v))
            else:
                coeff = Const(assignment[split_coeff(index, v)])
            term = Mul(coeff, point[v])
            total = term if total == Const(0) else _add(total, term)
        offset: Term
        if assignment is None:
            offset = Var(split_offset(index))
        else:
            offset = Const(assignment[split_offset(index)])
        return simplify_term(_add(total, offset))

    def path_formula(
        self,
        class_id: int,
        point: Mapping[str, Term],
        assignment: ParamAssignment | None = None,
    ) -> Pred:
        """Predicate over `point` holding iff it lands in class `class_id`.

        With `assignment`, split coefficients are folded to constants
        (symbolic states, concrete parameters); without, they are left
        as parameter variables (concrete states, unknown parameters).
        """
        constraints: list[Pred] = []

        def walk(node: Node) -> bool:
            if isinstance(node, Leaf):
                return node.class_id == class_id
            before = len(constraints)
            if isinstance(node, LabelNode):
                test: Pred = subst_pred(node.pred, point)
            else:
                test = Cmp("<=", self._split_form(node.index, point, assignment), Const(0))
            constraints.append(test)
            if walk(node.on_true):
                return True
            constraints[before:] = [mk_not(test)]
            if walk(node.on_false):
                return True
            del constraints[before:]
            return False

        if not walk(self.root):
            raise KeyError(f"no class {class_id} in this classifier")
        return simplify_pred(conj(constraints))

    def class_region(self, class_id: int, assignment: ParamAssignment) -> Pred:
        """The symbolic region of `class_id` over the state variables."""
        identity = {v: Var(v) for v in self.variables}
        return self.path_formula(class_id, identity, assignment)

    def eq_formula(
        self,
        point_u: Mapping[str, Term],
        point_v: Mapping[str, Term],
        assignment: ParamAssignment | None = None,
    ) -> Pred:
        """Both points fall in the same class."""
        cases = [
            And(
                (
                    self.path_formula(c, point_u, assignment),
                    self.path_formula(c, point_v, assignment),
                )
            )
            for c in self.classes()
        ]
        return simplify_pred(disj(cases))

    def classify_concrete(
        self,
        state: Mapping[str, int] | Sequence[int],
        assignment: ParamAssignment | None = None,
    ) -> int:
        """Classify a concrete state (requires `assignment` if splits exist).

        The state may be a variable->value mapping or a value tuple in
        declaration order.
        """
        env = (
            state
            if isinstance(state, Mapping)
            else dict(zip(self.variables, state, strict=True))
        )
        node = self.root
        while not isinstance(node, Leaf):
            if isinstance(node, LabelNode):
                taken = eval_pred(node.pred, env)
            else:
                if assignment is None:
                    raise ValueError("parameter assignment required to evaluate splits")
                point = {v: Const(env[v]) for v in self.variables}
                taken = eval_term(self._split_form(node.index, point, assignment), {}) <= 0
            node = node.on_true if taken else node.on_false
        return node.class_id

    # -- refinement ---------------------------------------------------------

    def refine(self) -> "ClassifierTemplate":
        """Split every non-sink leaf with a fresh parametric test.

        Existing split indices are preserved; class ids are renumbered
        sequentially left to right.
        """
        next_split = self.n_splits
        next_class = 0

        def walk(node: Node) -> Node:
            nonlocal next_split, next_class
            if isinstance(node, Leaf):
                if node.sink:
                    renamed = replace(node, class_id=next_class)
                    next_class += 1
                    return renamed
                index = next_split
                next_split += 1
                left = Leaf(next_class)
                right = Leaf(next_class + 1)
                next_class += 2
                return SplitNode(index, left, right)
            on_true = walk(node.on_true)
            on_false = walk(node.on_false)
            if isinstance(node, LabelNode):
                return LabelNode(node.pred, on_true, on_false)
            return SplitNode(node.index, on_true, on_false)

        root = walk(self.root)
        return ClassifierTemplate(self.variables, root, next_split)

    def can_refine(self) -> bool:
        return any(not leaf.sink for leaf in _iter_leaves(self.root))

    # -- serialization ------------------------------------------------------

    def to_dict(self, assignment: ParamAssignment | None = None) -> dict:
        def node_dict(node: Node) -> dict:
            if isinstance(node, Leaf):
                return {"kind": "leaf", "class": node.class_id, "sink": node.sink}
            if isinstance(node, LabelNode):
                return {
                    "kind": "label",
                    "pred": pred_to_str(node.pred),
                    "true": node_dict(node.on_true),
                    "false": node_dict(node.on_false),
                }
            return {
                "kind": "split",
                "index": node.index,
                "true": node_dict(node.on_true),
                "false": node_dict(node.on_false),
            }

        data = {
            "variables": list(self.variables),
            "n_splits": self.n_splits,
            "root": node_dict(self.root),
        }
        if assignment is not None:
            data["assignment"] = {k: assignment[k] for k in sorted(assignment)}
        return data

    @staticmethod
    def from_dict(data: dict) -> tuple["ClassifierTemplate", dict[str, int] | None]:
        def node_from(d: dict) -> Node:
            kind = d["kind"]
            if kind == "leaf":
                return Leaf(int(d["class"]), bool(d.get("sink", False)))
            if kind == "label":
                return LabelNode(
                    parse_predicate(d["pred"]), node_from(d["true"]), node_from(d["false"])
                )
            if kind == "split":
                return SplitNode(int(d["index"]), node_from(d["true"]), node_from(d["false"]))
            raise ValueError(f"unknown classifier node kind {kind!r}")

        template = ClassifierTemplate(
            tuple(data["variables"]), node_from(data["root"]), int(data["n_splits"])
        )
        assignment = data.get("assignment")
        if assignment is not None:
            assignment = {str(k): int(v) for k, v in assignment.items()}
        return template, assignment


# ---------------------------------------------------------------------------
# Initial template construction
# ---------------------------------------------------------------------------


def initial_template(system: SymbolicSystem, backend) -> ClassifierTemplate:
    """Build the starting classifier for `system`.

    The top of the tree tests each observation predicate in name order,
    skipping tests that are already decided by the path so far (checked
    with the solver).  Observation cells whose states provably only loop
    to themselves become bare sink leaves; every other cell receives one
    parametric split.
    """
    from bisimlearn.smt import SmtFormula

    variables = system.variables
    identity = system.identity_point()
    moves = disj(
        [
            mk_not(Cmp("=", system.successor_point(i, identity)[v], Var(v)))
            for i in range(system.k)
            for v in variables
        ]
    )

    def decidable(path: Pred, test: Pred) -> bool | None:
        """True/False if `path` already forces `test`; None if both live."""
        if not backend.is_sat(SmtFormula.over_ints(variables, conj([path, test]))):
            return False
        if not backend.is_sat(SmtFormula.over_ints(variables, conj([path, mk_not(test)]))):
            return True
        return None

    next_split = 0
    next_class = 0
    label_preds = [system.labels[name] for name in sorted(system.labels)]

    def build(path: Pred, remaining: Sequence[Pred]) -> Node:
        nonlocal next_split, next_class
        if remaining:
            test, rest = remaining[0], remaining[1:]
            forced = decidable(path, test)
            if forced is True:
                return build(conj([path, test]), rest)
            if forced is False:
                return build(conj([path, mk_not(test)]), rest)
            return LabelNode(
                test,
                build(conj([path, test]), rest),
                build(conj([path, mk_not(test)]), rest),
            )
        if not backend.is_sat(SmtFormula.over_ints(variables, conj([path, moves]))):
            leaf = Leaf(next_class, sink=True)
            next_class += 1
            return leaf
        index = next_split
        next_split += 1
        node = SplitNode(index, Leaf(next_class), Leaf(next_class + 1))
        next_class += 2
        return node

    root = build(TRUE, label_preds)
    return ClassifierTemplate(variables, root, next_split)


# ---------------------------------------------------------------------------
# Ranking functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RankingTemplate:
    """Affine ranking over state pairs: eta_1 . u + eta_2 . v + eta_3.

    In "global" mode one form serves all classes; in "per-class" mode
    each class id in `class_ids` owns an independent form.
    """

    variables: tuple[str, ...]
    mode: str  # "global" | "per-class"
    class_ids: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.mode not in ("global", "per-class"):
            raise ValueError(f"unknown ranking mode {self.mode!r}")
        if self.mode == "per-class" and not self.class_ids:
            raise ValueError("per-class ranking requires class ids")

    def _prefix(self, class_id: int | None) -> str:
        if self.mode == "global":
            return "eta!g"
        if class_id is None:
            raise ValueError("per-class ranking requires a class id")
        return f"eta!c{class_id}"

    def params(self) -> tuple[str, ...]:
        prefixes = (
            ["eta!g"]
            if self.mode == "global"
            else [f"eta!c{c}" for c in self.class_ids]
        )
        names: list[str] = []
        for prefix in prefixes:
            names.extend(f"{prefix}!1!{v}" for v in self.variables)
            names.extend(f"{prefix}!2!{v}" for v in self.variables)
            names.append(f"{prefix}!3")
        return tuple(names)

    def rank_term(
        self,
        class_id: int | None,
        point_u: Mapping[str, Term],
        point_v: Mapping[str, Term],
        assignment: ParamAssignment | None = None,
    ) -> Term:
        prefix = self._prefix(class_id)

        def coeff(name: str) -> Term:
            return Var(name) if assignment is None else Const(assignment[name])

        total: Term = coeff(f"{prefix}!3")
        for v in self.variables:
            total = _add(total, Mul(coeff(f"{prefix}!1!{v}"), point_u[v]))
            total = _add(total, Mul(coeff(f"{prefix}!2!{v}"), point_v[v]))
        return simplify_term(total)

    def rank_value(
        self,
        class_id: int | None,
        u: Mapping[str, int],
        v: Mapping[str, int],
        assignment: ParamAssignment,
    ) -> int:
        """The rank of a concrete state pair under `assignment`."""
        prefix = self._prefix(class_id)
        total = assignment[f"{prefix}!3"]
        for name in self.variables:
            total += assignment[f"{prefix}!1!{name}"] * u[name]
            total += assignment[f"{prefix}!2!{name}"] * v[name]
        return total
