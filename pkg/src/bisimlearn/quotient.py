"""Finite quotient extraction from a verified classifier, and export.

Classes are the satisfiable classifier regions under the learned
parameters.  For distinct classes c and d there is an edge c -> d iff
some state of c has a successor in d.  A class has a self-loop iff
every state of the class keeps at least one successor inside it (this
is what makes stuttering inside a class observable as divergence).  A
class is initial iff its region meets the initial condition.  All
queries are independent and read-only, so they can run in parallel.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Union

from bisimlearn.core import (
    Pred,
    SymbolicSystem,
    TRUE,
    Var,
    conj,
    disj,
    eval_pred,
    mk_not,
    pred_to_str,
)
from bisimlearn.dsl import parse_predicate
from bisimlearn.smt import Sat, SmtBackend, SmtFormula, Unknown, Unsat
from bisimlearn.templates import ClassifierTemplate, ParamAssignment

__all__ = ["ExtractionError", "Quotient", "extract"]


class ExtractionError(Exception):
    """An extraction query was inconclusive or an invariant failed."""


@dataclass(frozen=True)
class Quotient:
    """A finite state-labelled quotient graph.

    `regions` maps each class to the symbolic predicate carving its
    states out of the concrete state space.
    """

    classes: tuple[int, ...]
    edges: frozenset[tuple[int, int]]
    labels: Mapping[int, frozenset[str]]
    initial: frozenset[int]
    regions: Mapping[int, Pred]

    def __post_init__(self) -> None:
        cs = set(self.classes)
        if len(cs) != len(self.classes):
            raise ValueError("duplicate class ids")
        for c, d in self.edges:
            if c not in cs or d not in cs:
                raise ValueError(f"edge ({c}, {d}) mentions an unknown class")
        if not set(self.initial) <= cs:
            raise ValueError("initial set mentions an unknown class")
        if set(self.labels) != cs or set(self.regions) != cs:
            raise ValueError("labels/regions must cover exactly the classes")

    @staticmethod
    def of(
        classes: Iterable[int],
        edges: Iterable[tuple[int, int]],
        labels: Mapping[int, Iterable[str]],
        initial: Iterable[int] = (),
        regions: Mapping[int, Pred] | None = None,
    ) -> "Quotient":
        """Convenience constructor; missing regions default to `true`."""
        classes = tuple(classes)
        return Quotient(
            classes,
            frozenset((int(c), int(d)) for c, d in edges),
            {c: frozenset(labels.get(c, ())) for c in classes},
            frozenset(initial),
            dict(regions) if regions is not None else {c: TRUE for c in classes},
        )

    def successors(self, c: int) -> tuple[int, ...]:
        return tuple(sorted(d for (a, d) in self.edges if a == c))

    def atom_classes(self, atom: str) -> frozenset[int]:
        return frozenset(c for c in self.classes if atom in self.labels[c])

    def alphabet(self) -> frozenset[str]:
        out: set[str] = set()
        for labels in self.labels.values():
            out |= labels
        return frozenset(out)

    # -- export ---------------------------------------------------------

    def to_json(self) -> str:
        data = {
            "classes": sorted(self.classes),
            "edges": sorted([c, d] for c, d in self.edges),
            "labels": {str(c): sorted(self.labels[c]) for c in sorted(self.classes)},
            "initial": sorted(self.initial),
            "regions": {str(c): pred_to_str(self.regions[c]) for c in sorted(self.classes)},
        }
        return json.dumps(data, indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "Quotient":
        data = json.loads(text)
        classes = tuple(int(c) for c in data["classes"])
        return Quotient(
            classes,
            frozenset((int(c), int(d)) for c, d in data["edges"]),
            {int(c): frozenset(ls) for c, ls in data["labels"].items()},
            frozenset(int(c) for c in data["initial"]),
            {int(c): parse_predicate(r) for c, r in data["regions"].items()},
        )

    def to_dot(self) -> str:
        lines = ["digraph quotient {", "  rankdir=LR;"]
        for c in sorted(self.classes):
            label_set = ",".join(sorted(self.labels[c])) or "∅"
            shape = "doublecircle" if c in self.initial else "circle"
            tooltip = pred_to_str(self.regions[c]).replace('"', "'")
            lines.append(
                f'  c{c} [shape={shape}, label="{c}: {{{label_set}}}", tooltip="{tooltip}"];'
            )
        for c, d in sorted(self.edges):
            lines.append(f"  c{c} -> c{d};")
        lines.append("}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Extraction
# ---------------------------------------------------------------------------


def _run_queries(
    items: list, job: Callable, jobs: int
) -> list:
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(job, items))
    return [job(item) for item in items]


def extract(
    system: SymbolicSystem,
    template: ClassifierTemplate,
    assignment: ParamAssignment,
    backend: SmtBackend | None = None,
    jobs: int = 1,
    timeout_ms: int | None = None,
) -> Quotient:
    """Extract the quotient induced by the classifier under `assignment`.

    Uses only the classifier parameters; ranking parameters play no part.
    Raises `ExtractionError` if any query is inconclusive or a class
    carries a non-constant observation.
    """
    backend = backend or SmtBackend()
    variables = system.variables

    def query(pred: Pred, what: str) -> Union[Sat, Unsat]:
        result = backend.check(SmtFormula.over_ints(variables, pred), timeout_ms)
        if isinstance(result, Unknown):
            raise ExtractionError(f"inconclusive query while {what}: {result.reason}")
        return result

    def sat(pred: Pred, what: str) -> bool:
        return isinstance(query(pred, what), Sat)

    regions = {c: template.class_region(c, assignment) for c in template.classes()}

    # Each satisfiability check yields a concrete witness state; keeping
    # the witnesses lets most of the remaining facts be read off by
    # evaluation, with the solver consulted only for universal claims.
    def probe(c: int) -> tuple[int, tuple[int, ...] | None]:
        result = query(regions[c], f"testing class {c} for emptiness")
        if isinstance(result, Unsat):
            return c, None
        return c, tuple(result.model.get(v, 0) for v in variables)

    probed = _run_queries(sorted(regions), probe, jobs)
    witnesses = {c: w for c, w in probed if w is not None}
    kept = sorted(witnesses)
    if not kept:
        raise ExtractionError("every class region is empty")

    def class_labels(c: int) -> tuple[int, frozenset[str]]:
        found: set[str] = set()
        env = system.state_env(witnesses[c])
        for name in sorted(system.labels):
            mu = system.labels[name]
            if eval_pred(mu, env):
                if sat(
                    conj([regions[c], mk_not(mu)]),
                    f"checking label {name} on class {c}",
                ):
                    raise ExtractionError(f"label {name} is not constant on class {c}")
                found.add(name)
            elif sat(
                conj([regions[c], mu]), f"checking label {name} on class {c}"
            ):
                raise ExtractionError(f"label {name} is not constant on class {c}")
        return c, frozenset(found)

    labels = dict(_run_queries(kept, class_labels, jobs))

    identity = system.identity_point()
    succ_points = [
        system.successor_point(i, identity) for i in range(system.k)
    ]

    def in_class_after(d: int, i: int) -> Pred:
        return template.path_formula(d, succ_points[i], assignment)

    def class_targets(c: int) -> tuple[int, frozenset[int]]:
        """All classes some state of `c` steps into, found by enumeration.

        Successors of known witnesses are classified by evaluation; the
        solver is only asked whether a state of `c` can step outside the
        classes found so far, so the query count follows the number of
        distinct targets rather than the number of classes.
        """
        targets = {
            template.classify_concrete(nxt, assignment)
            for nxt in system.successor_states(witnesses[c])
        }
        while True:
            escape = disj(
                [
                    mk_not(disj([in_class_after(d, i) for d in sorted(targets)]))
                    for i in range(system.k)
                ]
            )
            result = query(
                conj([regions[c], escape]), f"enumerating successors of class {c}"
            )
            if isinstance(result, Unsat):
                return c, frozenset(targets)
            state = tuple(result.model.get(v, 0) for v in variables)
            new = {
                template.classify_concrete(nxt, assignment)
                for nxt in system.successor_states(state)
            }
            if new <= targets:
                raise ExtractionError(
                    f"successor enumeration for class {c} made no progress; "
                    "the classifier and its regions disagree"
                )
            targets |= new

    targets = dict(_run_queries(kept, class_targets, jobs))
    stray = {d for ds in targets.values() for d in ds} - set(kept)
    if stray:
        raise ExtractionError(
            f"witnessed successors in classes {sorted(stray)} whose regions "
            "were reported empty"
        )

    def has_self_loop(c: int) -> tuple[int, bool]:
        # A self-loop records divergence: every state of the class must
        # keep at least one successor inside it.  Classes where no state
        # stays put at all cannot qualify and need no query.
        if c not in targets[c]:
            return c, False
        escape_all = conj([mk_not(in_class_after(c, i)) for i in range(system.k)])
        return c, not sat(
            conj([regions[c], escape_all]), f"testing self-loop of class {c}"
        )

    loop_flags = _run_queries(kept, has_self_loop, jobs)
    edges = frozenset(
        (c, d) for c in kept for d in targets[c] if d != c
    ) | frozenset((c, c) for c, looping in loop_flags if looping)

    def is_initial(c: int) -> tuple[int, bool]:
        if system.is_initial(witnesses[c]):
            return c, True
        return c, sat(
            conj([regions[c], system.init]), f"testing class {c} initial"
        )

    initial_flags = _run_queries(kept, is_initial, jobs)
    initial = frozenset(c for c, flagged in initial_flags if flagged)

    return Quotient(
        tuple(kept),
        edges,
        labels,
        initial,
        {c: regions[c] for c in kept},
    )
