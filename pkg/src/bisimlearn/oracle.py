"""Ground truth on explicit finite transition systems.

This module is the reference implementation the learning pipeline is
tested against: it builds explicit graphs (from text files, from random
generation, or by unrolling a symbolic system over a finite box),
computes the coarsest stutter-insensitive partition by signature
refinement, validates arbitrary partitions directly against the local
conditions, and converts between explicit and symbolic form.

The validity conditions for a label-preserving partition are local to
each block B:
  (i) every state of B can exit to exactly the same set of foreign
      blocks, where an exit is a path inside B followed by one edge out;
  (ii) all states of B agree on divergence (the existence of an
      infinite path that never leaves B).

Text format (one state per line, `#` comments):

    id | labels | succ,succ,... | init?

Labels are comma/space-separated names (empty or `-` for none); the
branching bound k is the longest successor list in the file, shorter
lists repeat their last entry; the literal word `init` marks initial
states.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from bisimlearn.core import (
    Cmp,
    Const,
    Ite,
    Pred,
    State,
    SymbolicSystem,
    Term,
    Var,
    disj,
    eval_pred,
)
from bisimlearn.quotient import Quotient

__all__ = [
    "BoxEscapeError",
    "EtsFormatError",
    "ExplicitSystem",
    "Partition",
    "Violation",
    "box_states",
    "check_partition",
    "coarsest_partition",
    "explicit_from_symbolic",
    "parse_ets",
    "quotient_of_partition",
    "random_explicit",
    "symbolic_from_explicit",
    "write_ets",
]


class EtsFormatError(Exception):
    """Malformed explicit-system text input."""


class BoxEscapeError(Exception):
    """A successor of an in-box state leaves the box."""


@dataclass(frozen=True)
class ExplicitSystem:
    """A finite transition system with exactly-k successor lists."""

    states: tuple[int, ...]
    k: int
    succ: Mapping[int, tuple[int, ...]]
    labels: Mapping[int, frozenset[str]]
    initial: frozenset[int]

    def __post_init__(self) -> None:
        universe = set(self.states)
        if len(universe) != len(self.states):
            raise ValueError("duplicate state ids")
        if self.k < 1:
            raise ValueError("branching bound must be at least 1")
        if set(self.succ) != universe or set(self.labels) != universe:
            raise ValueError("succ/labels must cover exactly the states")
        for s in self.states:
            if len(self.succ[s]) != self.k:
                raise ValueError(
                    f"state {s} has {len(self.succ[s])} successors, expected {self.k}"
                )
            for t in self.succ[s]:
                if t not in universe:
                    raise ValueError(f"state {s} has unknown successor {t}")
        if not self.initial <= universe:
            raise ValueError("initial set mentions unknown states")

    def successor_set(self, s: int) -> frozenset[int]:
        return frozenset(self.succ[s])


@dataclass(frozen=True)
class Partition:
    """Block membership per state; block ids are arbitrary but consistent."""

    block_of: Mapping[int, int]

    def blocks(self) -> tuple[frozenset[int], ...]:
        grouped: dict[int, set[int]] = {}
        for s, b in self.block_of.items():
            grouped.setdefault(b, set()).add(s)
        return tuple(
            frozenset(members)
            for _, members in sorted(grouped.items(), key=lambda kv: min(kv[1]))
        )

    @staticmethod
    def from_blocks(blocks: Iterable[Iterable[int]]) -> "Partition":
        block_of: dict[int, int] = {}
        for i, block in enumerate(blocks):
            members = list(block)
            if not members:
                raise ValueError("empty block")
            for s in members:
                if s in block_of:
                    raise ValueError(f"state {s} appears in two blocks")
                block_of[s] = i
        return Partition(block_of)

    def to_json(self) -> str:
        blocks = [sorted(b) for b in self.blocks()]
        return json.dumps({"blocks": blocks}, indent=2) + "\n"

    @staticmethod
    def from_json(text: str) -> "Partition":
        data = json.loads(text)
        return Partition.from_blocks(data["blocks"])

    def refines(self, coarser: "Partition") -> bool:
        """Every block of self lies inside one block of `coarser`."""
        for block in self.blocks():
            images = {coarser.block_of[s] for s in block}
            if len(images) != 1:
                return False
        return True


@dataclass(frozen=True)
class Violation:
    """Why a partition is not a stutter-insensitive bisimulation."""

    kind: str  # "label" | "exit" | "divergence"
    block: frozenset[int]
    witness: tuple[int, int]
    detail: str


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------


def parse_ets(text: str) -> ExplicitSystem:
    rows: list[tuple[int, frozenset[str], list[int], bool]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split("|")]
        if len(fields) not in (3, 4):
            raise EtsFormatError(
                f"line {lineno}: expected 'id | labels | successors [| init]'"
            )
        try:
            sid = int(fields[0])
        except ValueError:
            raise EtsFormatError(f"line {lineno}: bad state id {fields[0]!r}") from None
        label_field = fields[1].strip()
        labels = (
            frozenset()
            if label_field in ("", "-")
            else frozenset(label_field.replace(",", " ").split())
        )
        try:
            succ = [int(x) for x in fields[2].replace(",", " ").split()]
        except ValueError:
            raise EtsFormatError(f"line {lineno}: bad successor list {fields[2]!r}") from None
        if not succ:
            raise EtsFormatError(f"line {lineno}: state {sid} has no successors")
        is_init = False
        if len(fields) == 4 and fields[3]:
            if fields[3] != "init":
                raise EtsFormatError(
                    f"line {lineno}: expected 'init' marker, found {fields[3]!r}"
                )
            is_init = True
        rows.append((sid, labels, succ, is_init))
    if not rows:
        raise EtsFormatError("no states")
    k = max(len(succ) for _, _, succ, _ in rows)
    states = tuple(sid for sid, _, _, _ in rows)
    succ_map = {
        sid: tuple(succ + [succ[-1]] * (k - len(succ))) for sid, _, succ, _ in rows
    }
    labels_map = {sid: labels for sid, labels, _, _ in rows}
    initial = frozenset(sid for sid, _, _, is_init in rows if is_init)
    try:
        return ExplicitSystem(states, k, succ_map, labels_map, initial)
    except ValueError as err:
        raise EtsFormatError(str(err)) from None


def write_ets(es: ExplicitSystem) -> str:
    lines = []
    for s in sorted(es.states):
        labels = ",".join(sorted(es.labels[s])) or "-"
        succ = ",".join(str(t) for t in es.succ[s])
        init = " | init" if s in es.initial else ""
        lines.append(f"{s} | {labels} | {succ}{init}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Signatures, validity, coarsest partition
# ---------------------------------------------------------------------------


def _reach_inside(es: ExplicitSystem, start: int, block: frozenset[int]) -> set[int]:
    """States of `block` reachable from `start` without leaving it."""
    seen = {start}
    frontier = [start]
    while frontier:
        u = frontier.pop()
        for v in es.succ[u]:
            if v in block and v not in seen:
                seen.add(v)
                frontier.append(v)
    return seen


def _exit_blocks(
    es: ExplicitSystem, state: int, block: frozenset[int], block_of: Mapping[int, int]
) -> frozenset[int]:
    """Foreign blocks reachable by an inside-block path plus one edge."""
    return frozenset(
        block_of[v]
        for u in _reach_inside(es, state, block)
        for v in es.succ[u]
        if v not in block
    )


def _divergent_states(es: ExplicitSystem, block: frozenset[int]) -> frozenset[int]:
    """States with an infinite path that never leaves `block`."""
    alive = set(block)
    while True:
        survivors = {u for u in alive if any(v in alive for v in es.succ[u])}
        if survivors == alive:
            return frozenset(alive)
        alive = survivors


def _signature(
    es: ExplicitSystem, state: int, block: frozenset[int], block_of: Mapping[int, int]
) -> tuple[frozenset[int], bool]:
    divergent = state in _divergent_states(es, block)
    return _exit_blocks(es, state, block, block_of), divergent


def check_partition(es: ExplicitSystem, partition: Partition) -> Violation | None:
    """First violation of the validity conditions, or None if valid."""
    if set(partition.block_of) != set(es.states):
        raise ValueError("partition does not cover exactly the states")
    for block in partition.blocks():
        members = sorted(block)
        rep = members[0]
        for s in members[1:]:
            if es.labels[s] != es.labels[rep]:
                return Violation(
                    "label",
                    block,
                    (rep, s),
                    f"states {rep} and {s} have different labels",
                )
        divergent = _divergent_states(es, block)
        rep_sig = (
            _exit_blocks(es, rep, block, partition.block_of),
            rep in divergent,
        )
        for s in members[1:]:
            exits = _exit_blocks(es, s, block, partition.block_of)
            if exits != rep_sig[0]:
                diff = exits ^ rep_sig[0]
                return Violation(
                    "exit",
                    block,
                    (rep, s),
                    f"states {rep} and {s} exit to different blocks "
                    f"(disagree on block {min(diff)})",
                )
            if (s in divergent) != rep_sig[1]:
                return Violation(
                    "divergence",
                    block,
                    (rep, s),
                    f"states {rep} and {s} disagree on divergence",
                )
    return None


def coarsest_partition(es: ExplicitSystem) -> Partition:
    """Iterated signature splitting from the observation partition."""
    by_labels: dict[frozenset[str], list[int]] = {}
    for s in es.states:
        by_labels.setdefault(es.labels[s], []).append(s)
    blocks = [frozenset(members) for members in by_labels.values()]

    while True:
        block_of = {s: i for i, block in enumerate(blocks) for s in block}
        new_blocks: list[frozenset[int]] = []
        changed = False
        for block in blocks:
            groups: dict[tuple[frozenset[int], bool], set[int]] = {}
            divergent = _divergent_states(es, block)
            for s in block:
                sig = (_exit_blocks(es, s, block, block_of), s in divergent)
                groups.setdefault(sig, set()).add(s)
            if len(groups) > 1:
                changed = True
            new_blocks.extend(frozenset(g) for g in groups.values())
        blocks = new_blocks
        if not changed:
            return Partition.from_blocks(sorted(blocks, key=min))


def quotient_of_partition(
    es: ExplicitSystem, partition: Partition, var: str = "s"
) -> Quotient:
    """The quotient graph induced by a partition of an explicit system.

    Cross edge c -> d iff some state of c steps into d; self-loop iff
    every state of c keeps a successor inside c.  Regions identify each
    class as a disjunction of `var = id` equations, matching the
    symbolic bridge of `symbolic_from_explicit`.
    """
    blocks = partition.blocks()
    ids = {block: i for i, block in enumerate(blocks)}
    labels: dict[int, frozenset[str]] = {}
    for block, c in ids.items():
        rep_labels = {es.labels[s] for s in block}
        if len(rep_labels) != 1:
            raise ValueError(f"labels are not constant on block {sorted(block)}")
        labels[c] = next(iter(rep_labels))
    edges: set[tuple[int, int]] = set()
    for block, c in ids.items():
        for other, d in ids.items():
            if c == d:
                if all(any(t in block for t in es.succ[s]) for s in block):
                    edges.add((c, c))
            elif any(t in other for s in block for t in es.succ[s]):
                edges.add((c, d))
    initial = frozenset(ids[b] for b in blocks if b & es.initial)
    regions = {
        ids[b]: disj([Cmp("=", Var(var), Const(s)) for s in sorted(b)]) for b in blocks
    }
    return Quotient(tuple(range(len(blocks))), frozenset(edges), labels, initial, regions)


# ---------------------------------------------------------------------------
# Symbolic bridges
# ---------------------------------------------------------------------------


def box_states(
    system: SymbolicSystem, box: Mapping[str, tuple[int, int]]
) -> list[State]:
    """All states of the box, ordered lexicographically by variable order."""
    if set(box) != set(system.variables):
        raise ValueError("box must cover exactly the system variables")
    ranges = []
    for v in system.variables:
        lo, hi = box[v]
        if lo > hi:
            raise ValueError(f"empty range for {v}")
        ranges.append(range(lo, hi + 1))
    out: list[State] = []

    def fill(prefix: tuple[int, ...], rest: list[range]) -> None:
        if not rest:
            out.append(prefix)
            return
        for x in rest[0]:
            fill(prefix + (x,), rest[1:])

    fill((), ranges)
    return out


def explicit_from_symbolic(
    system: SymbolicSystem, box: Mapping[str, tuple[int, int]]
) -> ExplicitSystem:
    """Unroll a symbolic system over a finite box of states.

    Every successor of every in-box state must stay in the box;
    otherwise `BoxEscapeError` names the offending state.
    """
    states = box_states(system, box)
    index = {s: i for i, s in enumerate(states)}
    succ: dict[int, tuple[int, ...]] = {}
    labels: dict[int, frozenset[str]] = {}
    initial: set[int] = set()
    for s, i in index.items():
        targets = []
        for t in system.successor_states(s):
            if t not in index:
                raise BoxEscapeError(
                    f"state {s} has successor {t} outside the box"
                )
            targets.append(index[t])
        succ[i] = tuple(targets)
        env = system.state_env(s)
        labels[i] = frozenset(
            name for name, pred in system.labels.items() if eval_pred(pred, env)
        )
        if eval_pred(system.init, env):
            initial.add(i)
    return ExplicitSystem(
        tuple(range(len(states))), system.k, succ, labels, frozenset(initial)
    )


def symbolic_from_explicit(
    es: ExplicitSystem, name: str = "explicit", var: str = "s"
) -> SymbolicSystem:
    """Embed an explicit system as a one-variable symbolic system.

    The variable holds the state id; each branch is a nested
    conditional over the ids.  Integers that are not state ids behave
    as unlabelled pure self-loops, a region unreachable from any real
    state and disjoint from every label and from the initial condition.
    """
    ordered = sorted(es.states)

    def branch(i: int) -> Term:
        expr: Term = Var(var)
        for s in reversed(ordered):
            expr = Ite(Cmp("=", Var(var), Const(s)), Const(es.succ[s][i]), expr)
        return expr

    successors = tuple({var: branch(i)} for i in range(es.k))
    label_names = sorted({name for ls in es.labels.values() for name in ls})
    labels = {
        p: disj(
            [Cmp("=", Var(var), Const(s)) for s in ordered if p in es.labels[s]]
        )
        for p in label_names
    }
    init: Pred = disj([Cmp("=", Var(var), Const(s)) for s in sorted(es.initial)])
    return SymbolicSystem(
        name=name,
        variables=(var,),
        k=es.k,
        successors=successors,
        init=init,
        labels=labels,
    )


# ---------------------------------------------------------------------------
# Random instances
# ---------------------------------------------------------------------------


def random_explicit(
    rng: random.Random,
    n_states: int,
    k: int,
    label_pool: Sequence[str] = ("p", "q"),
    edge_locality: int | None = None,
) -> ExplicitSystem:
    """A random explicit system for differential testing.

    `edge_locality` bounds |successor - state| to keep symbolic bridges
    learnable with shallow interval splits; None allows any target.
    """
    states = tuple(range(n_states))
    succ: dict[int, tuple[int, ...]] = {}
    labels: dict[int, frozenset[str]] = {}
    for s in states:
        if edge_locality is None:
            pool = states
        else:
            lo = max(0, s - edge_locality)
            hi = min(n_states - 1, s + edge_locality)
            pool = tuple(range(lo, hi + 1))
        succ[s] = tuple(rng.choice(pool) for _ in range(k))
        labels[s] = frozenset(
            name for name in label_pool if rng.random() < 0.5
        )
    n_init = rng.randint(1, max(1, n_states // 3))
    initial = frozenset(rng.sample(states, n_init))
    return ExplicitSystem(states, k, succ, labels, initial)
