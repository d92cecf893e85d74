"""Learner–verifier loop synthesizing a stutter-insensitive bisimulation.

The loop maintains a sample set D of state pairs.  The learner asks the
solver for template parameters that satisfy, for every pair in D,

    same-class(s, t)  ==>  Psi(theta, eta, s, t)

with states folded to constants (the query is linear in the unknown
parameters).  The verifier asks for a pair of same-class states
falsifying Psi with the parameters folded (linear in the state copies).
A verifier model becomes a new sample; learner infeasibility triggers a
template refinement; verifier validity certifies the candidate.

Psi demands, for every successor step s -> sigma_i(s), one of:
  (a) sigma_i(s) lands in the same class as some successor of t;
  (b) s stutters: sigma_i(s) stays in s's class and the rank strictly
      decreases while staying nonnegative;
  (c) t stutters: some sigma_j(t) stays in t's class and the rank of
      (sigma_i(s), sigma_j(t)) strictly decreases below that of
      (sigma_i(s), t) while staying nonnegative.

Nonnegativity is required only where a decrease is claimed, which over
integer-valued affine ranks rules out infinite descent.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

from bisimlearn.core import (
    BoolLit,
    Cmp,
    Const,
    Pred,
    State,
    SymbolicSystem,
    Term,
    Var,
    conj,
    disj,
    eval_pred,
    mk_not,
    simplify_pred,
    simplify_term,
)
from bisimlearn.smt import Sat, SmtBackend, SmtFormula, Unknown, Unsat
from bisimlearn.templates import (
    ClassifierTemplate,
    ParamAssignment,
    RankingTemplate,
    initial_template,
    zeros,
)

__all__ = [
    "CegisConfig",
    "CegisStats",
    "Counterexample",
    "FailureReport",
    "Infeasible",
    "LearnedBisimulation",
    "SolverInconclusive",
    "Valid",
    "build_psi",
    "learn",
    "run",
    "verify",
]


class SolverInconclusive(Exception):
    """A solver query timed out or returned `unknown`."""


@dataclass
class CegisConfig:
    """Loop bounds and strategy knobs (all bounds must be nonnegative)."""

    max_iters: int = 100
    max_depth: int = 6
    piecewise: bool = True
    param_bound: int | None = None
    timeout_ms: int = 60_000
    jobs: int = 1
    seed: int = 0
    seed_samples: int = 0

    def __post_init__(self) -> None:
        if self.max_iters < 0 or self.max_depth < 0 or self.jobs < 1:
            raise ValueError("loop bounds must be nonnegative and jobs >= 1")


@dataclass
class CegisStats:
    iterations: int = 0
    refinements: int = 0
    counterexamples: int = 0
    model_checks: int = 0
    cex_checks: int = 0
    learn_seconds: float = 0.0
    verify_seconds: float = 0.0
    trace: list = field(default_factory=list)


@dataclass(frozen=True)
class Infeasible:
    """No parameters satisfy the sample constraints for this template."""


@dataclass(frozen=True)
class Valid:
    """No same-class pair falsifies the conditions: certificate holds."""


@dataclass(frozen=True)
class Counterexample:
    s: State
    t: State
    class_id: int | None = None


@dataclass(frozen=True)
class LearnedBisimulation:
    """A verified certificate: classifier + ranking parameters."""

    system: SymbolicSystem
    template: ClassifierTemplate
    ranking: RankingTemplate
    assignment: Mapping[str, int]
    samples: tuple[tuple[State, State], ...]
    stats: CegisStats


@dataclass(frozen=True)
class FailureReport:
    reason: str  # "budget-exhausted" | "refinement-limit" | "solver-unknown"
    detail: str
    stats: CegisStats


# ---------------------------------------------------------------------------
# The certificate condition
# ---------------------------------------------------------------------------


def _const_point(system: SymbolicSystem, state: State) -> dict[str, Term]:
    return {v: Const(x) for v, x in zip(system.variables, state)}


def _succ_points(
    system: SymbolicSystem, point: Mapping[str, Term]
) -> list[dict[str, Term]]:
    return [
        {v: simplify_term(t) for v, t in system.successor_point(i, point).items()}
        for i in range(system.k)
    ]


class _PsiBuilder:
    """Assembles step conditions whose class-independent pieces are shared.

    The per-class verifier issues one query per class; those queries differ
    only in the ranking atoms and the class-membership conjunct, while the
    (much larger) successor-equivalence formulas are identical.  Building
    the equivalence pieces once and reusing the objects keeps construction
    time flat in the class count and lets the serializer bind the repeated
    pieces to let names instead of re-emitting their text.
    """

    def __init__(
        self,
        system: SymbolicSystem,
        template: ClassifierTemplate,
        ranking: RankingTemplate,
        point_s: Mapping[str, Term],
        point_t: Mapping[str, Term],
        assignment: ParamAssignment | None = None,
    ) -> None:
        self._system = system
        self._ranking = ranking
        self._point_s = point_s
        self._point_t = point_t
        self._assignment = assignment
        self._succ_s = _succ_points(system, point_s)
        self._succ_t = _succ_points(system, point_t)
        k = system.k

        def eq(u: Mapping[str, Term], v: Mapping[str, Term]) -> Pred:
            return template.eq_formula(u, v, assignment)

        self._matched = [
            disj([eq(self._succ_s[i], self._succ_t[j]) for j in range(k)])
            for i in range(k)
        ]
        self._s_stays = [eq(point_s, self._succ_s[i]) for i in range(k)]
        self._t_stays = [eq(point_t, self._succ_t[j]) for j in range(k)]

    def psi(self, rank_class: int | None = None) -> Pred:
        system, ranking = self._system, self._ranking
        point_s, point_t = self._point_s, self._point_t
        succ_s, succ_t = self._succ_s, self._succ_t

        def rank(u: Mapping[str, Term], v: Mapping[str, Term]) -> Term:
            return ranking.rank_term(rank_class, u, v, self._assignment)

        rank_here = rank(point_s, point_s)
        steps: list[Pred] = []
        for i in range(system.k):
            rank_after_s = rank(succ_s[i], succ_s[i])
            s_stutters = conj(
                [
                    self._s_stays[i],
                    Cmp("<", rank_after_s, rank_here),
                    Cmp(">=", rank_after_s, Const(0)),
                ]
            )
            t_options: list[Pred] = []
            for j in range(system.k):
                rank_after_t = rank(succ_s[i], succ_t[j])
                t_options.append(
                    conj(
                        [
                            self._t_stays[j],
                            Cmp("<", rank_after_t, rank(succ_s[i], point_t)),
                            Cmp(">=", rank_after_t, Const(0)),
                        ]
                    )
                )
            steps.append(disj([self._matched[i], s_stutters, disj(t_options)]))
        return conj(steps)


def build_psi(
    system: SymbolicSystem,
    template: ClassifierTemplate,
    ranking: RankingTemplate,
    point_s: Mapping[str, Term],
    point_t: Mapping[str, Term],
    assignment: ParamAssignment | None = None,
    rank_class: int | None = None,
) -> Pred:
    """The step condition Psi over the two state points.

    With `assignment` the parameters are folded to constants, otherwise
    they remain free parameter variables.  `rank_class` selects the
    per-class ranking block (None in global mode).
    """
    builder = _PsiBuilder(system, template, ranking, point_s, point_t, assignment)
    return simplify_pred(builder.psi(rank_class))


# ---------------------------------------------------------------------------
# Learner
# ---------------------------------------------------------------------------


def _sample_constraints(
    system: SymbolicSystem,
    template: ClassifierTemplate,
    ranking: RankingTemplate,
    pairs: Sequence[tuple[State, State]],
) -> list[Pred]:
    """One implication per sample (per class in per-class mode).

    Constraints that fold to `true` carry no information and are dropped;
    a constraint folding to `false` is kept so the conjunction reports
    infeasibility.
    """
    out: list[Pred] = []
    for s, t in pairs:
        ps, pt = _const_point(system, s), _const_point(system, t)
        builder = _PsiBuilder(system, template, ranking, ps, pt)
        if ranking.mode == "per-class":
            for c in template.classes():
                antecedent = conj(
                    [template.path_formula(c, ps), template.path_formula(c, pt)]
                )
                constraint = simplify_pred(
                    disj([mk_not(antecedent), builder.psi(rank_class=c)])
                )
                if not (isinstance(constraint, BoolLit) and constraint.value):
                    out.append(constraint)
        else:
            antecedent = template.eq_formula(ps, pt)
            constraint = simplify_pred(disj([mk_not(antecedent), builder.psi()]))
            if not (isinstance(constraint, BoolLit) and constraint.value):
                out.append(constraint)
    return out


class _Learner:
    """Incremental learner for one template generation.

    Sample constraints are appended as new counterexamples arrive instead
    of being rebuilt each round.  Because the constraint set only grows, a
    parameter magnitude bound that was infeasible once stays infeasible,
    so the bound ladder resumes where the previous round succeeded.
    """

    # Small parameter values generalise far better and keep the verifier's
    # counterexamples small, so search magnitude-bounded assignments first
    # and consult the unbounded problem only to establish infeasibility.
    _LADDER: tuple[int | None, ...] = (1, 2, 4, 8, 16, None)

    def __init__(
        self,
        system: SymbolicSystem,
        template: ClassifierTemplate,
        ranking: RankingTemplate,
        cfg: CegisConfig,
        backend: SmtBackend,
    ) -> None:
        self._system = system
        self._template = template
        self._ranking = ranking
        self._cfg = cfg
        self._backend = backend
        self._params = template.params() + ranking.params()
        self._constraints: list[Pred] = []
        self._n_seen = 0
        self._rung = 0

    def solve(
        self, samples: Sequence[tuple[State, State]]
    ) -> Union[dict[str, int], Infeasible]:
        if not samples:
            return zeros(self._params)
        self._constraints.extend(
            _sample_constraints(
                self._system, self._template, self._ranking, samples[self._n_seen :]
            )
        )
        self._n_seen = len(samples)
        base = conj(self._constraints)

        def attempt(bound: int | None) -> Union[Sat, Unsat, Unknown]:
            bounded = [base]
            if bound is not None:
                for p in self._params:
                    bounded.append(Cmp("<=", Var(p), Const(bound)))
                    bounded.append(Cmp("<=", Const(-bound), Var(p)))
            formula = SmtFormula.over_ints(self._params, conj(bounded))
            return self._backend.check(formula, self._cfg.timeout_ms)

        if self._cfg.param_bound is not None:
            schedule: list[int | None] = [self._cfg.param_bound]
            start = 0
        else:
            schedule = list(self._LADDER)
            start = self._rung
        for rung in range(start, len(schedule)):
            result = attempt(schedule[rung])
            if isinstance(result, Unknown):
                raise SolverInconclusive(
                    f"learner query inconclusive: {result.reason}"
                )
            if isinstance(result, Sat):
                if self._cfg.param_bound is None:
                    self._rung = rung
                return {p: result.model[p] for p in self._params}
        return Infeasible()


def learn(
    system: SymbolicSystem,
    template: ClassifierTemplate,
    ranking: RankingTemplate,
    samples: Sequence[tuple[State, State]],
    cfg: CegisConfig,
    backend: SmtBackend,
) -> Union[dict[str, int], Infeasible]:
    """Find parameters satisfying the sample constraints, or Infeasible.

    An empty sample set is vacuously satisfied by the all-zero
    assignment, returned without consulting the solver.
    """
    return _Learner(system, template, ranking, cfg, backend).solve(samples)


# ---------------------------------------------------------------------------
# Concrete screening
# ---------------------------------------------------------------------------

_POOL_CAP = 256


def _concrete_pool(
    system: SymbolicSystem,
    samples: Sequence[tuple[State, State]],
    cap: int = _POOL_CAP,
) -> list[State]:
    """Sample states plus their forward closure, breadth-first up to `cap`."""
    frontier = sorted({s for pair in samples for s in pair})
    seen = set(frontier)
    pool = list(frontier)
    while frontier and len(pool) < cap:
        grown = sorted(
            {nxt for s in frontier for nxt in system.successor_states(s)} - seen
        )
        take = grown[: cap - len(pool)]
        seen.update(take)
        pool.extend(take)
        frontier = take
    return pool


def _screen(
    system: SymbolicSystem,
    template: ClassifierTemplate,
    ranking: RankingTemplate,
    assignment: Mapping[str, int],
    pool: Sequence[State],
) -> list[Counterexample]:
    """Hunt for violating same-class pairs among concrete pool states.

    Purely evaluative, no solver involved: candidate assignments that fail
    on states already in hand are rejected without paying for a verifier
    sweep.  At most one violation per class is reported, mirroring a
    verifier round.  Every reported pair is re-checked through the
    symbolic path by the caller, so the two evaluations of the step
    condition guard each other.
    """
    classes: dict[State, int] = {}
    succ: dict[State, list[State]] = {}
    ranks: dict[tuple[int | None, State, State], int] = {}

    def cls(s: State) -> int:
        c = classes.get(s)
        if c is None:
            c = template.classify_concrete(s, assignment)
            classes[s] = c
        return c

    def successors(s: State) -> list[State]:
        out = succ.get(s)
        if out is None:
            out = system.successor_states(s)
            succ[s] = out
        return out

    def rank(rc: int | None, u: State, v: State) -> int:
        key = (rc, u, v)
        val = ranks.get(key)
        if val is None:
            val = ranking.rank_value(
                rc, system.state_env(u), system.state_env(v), assignment
            )
            ranks[key] = val
        return val

    def psi(s: State, t: State, rc: int | None) -> bool:
        succ_t = successors(t)
        for step_s in successors(s):
            c_step = cls(step_s)
            if any(c_step == cls(step_t) for step_t in succ_t):
                continue  # matched by some branch of t
            if cls(s) == c_step and 0 <= rank(rc, step_s, step_s) < rank(rc, s, s):
                continue  # s stutters with decreasing rank
            if any(
                cls(t) == cls(step_t)
                and 0 <= rank(rc, step_s, step_t) < rank(rc, step_s, t)
                for step_t in succ_t
            ):
                continue  # t stutters toward the move with decreasing rank
            return False
        return True

    by_class: dict[int, list[State]] = {}
    for s in pool:
        by_class.setdefault(cls(s), []).append(s)

    found: list[Counterexample] = []
    for c in sorted(by_class):
        states = by_class[c]
        rc = c if ranking.mode == "per-class" else None
        hit: Counterexample | None = None
        for u in states:
            for v in states:
                if u == v:
                    continue
                if not psi(u, v, rc):
                    hit = Counterexample(u, v, rc)
                    break
            if hit is not None:
                break
        if hit is not None:
            found.append(hit)
    return found


# ---------------------------------------------------------------------------
# Verifier
# ---------------------------------------------------------------------------


def _verify_round(
    system: SymbolicSystem,
    template: ClassifierTemplate,
    ranking: RankingTemplate,
    assignment: Mapping[str, int],
    cfg: CegisConfig,
    backend: SmtBackend,
) -> Union[Valid, list[Counterexample]]:
    """One full verifier sweep; all counterexamples found are returned.

    In per-class mode one independent query is issued per class (in
    parallel up to `cfg.jobs`); every satisfiable query contributes its
    witness pair, sorted by class id then state values so the outcome is
    independent of job count.  A query that comes back unknown only
    matters when no counterexample was found elsewhere: validity
    requires every query to be unsat.
    """
    variables = system.variables
    point_s = {v: Var(f"s!{v}") for v in variables}
    point_t = {v: Var(f"t!{v}") for v in variables}
    decls = [f"s!{v}" for v in variables] + [f"t!{v}" for v in variables]

    builder = _PsiBuilder(system, template, ranking, point_s, point_t, assignment)
    queries: list[tuple[int | None, SmtFormula]] = []
    if ranking.mode == "per-class":
        for c in template.classes():
            same_class = conj(
                [
                    template.path_formula(c, point_s, assignment),
                    template.path_formula(c, point_t, assignment),
                ]
            )
            psi = builder.psi(rank_class=c)
            queries.append(
                (c, SmtFormula.over_ints(decls, conj([same_class, mk_not(psi)])))
            )
    else:
        same_class = template.eq_formula(point_s, point_t, assignment)
        psi = builder.psi()
        queries.append(
            (None, SmtFormula.over_ints(decls, conj([same_class, mk_not(psi)])))
        )

    def check_one(item: tuple[int | None, SmtFormula]):
        return item[0], backend.check(item[1], cfg.timeout_ms)

    if cfg.jobs > 1 and len(queries) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(check_one, queries))
    else:
        results = [check_one(q) for q in queries]

    found: list[Counterexample] = []
    for class_id, result in results:
        if isinstance(result, Sat):
            s = tuple(result.model[f"s!{v}"] for v in variables)
            t = tuple(result.model[f"t!{v}"] for v in variables)
            found.append(Counterexample(s, t, class_id))
    if found:
        found.sort(key=lambda cex: (cex.class_id is not None, cex.class_id, cex.s, cex.t))
        return found
    unknowns = [(c, r) for c, r in results if isinstance(r, Unknown)]
    if unknowns:
        c, r = unknowns[0]
        raise SolverInconclusive(
            f"verifier query for class {c} inconclusive: {r.reason}"
        )
    return Valid()


def verify(
    system: SymbolicSystem,
    template: ClassifierTemplate,
    ranking: RankingTemplate,
    assignment: Mapping[str, int],
    cfg: CegisConfig,
    backend: SmtBackend,
) -> Union[Valid, Counterexample]:
    """Search the whole state space for a violating same-class pair.

    Returns the counterexample from the smallest class id when any
    exists, making the outcome independent of `cfg.jobs`.
    """
    outcome = _verify_round(system, template, ranking, assignment, cfg, backend)
    if isinstance(outcome, Valid):
        return outcome
    return outcome[0]


# ---------------------------------------------------------------------------
# Concrete self-checks
# ---------------------------------------------------------------------------


def _psi_concrete(
    system: SymbolicSystem,
    template: ClassifierTemplate,
    ranking: RankingTemplate,
    assignment: Mapping[str, int],
    s: State,
    t: State,
) -> tuple[bool, bool]:
    """(same class?, Psi holds?) for a concrete pair under `assignment`."""
    env_s = system.state_env(s)
    env_t = system.state_env(t)
    class_s = template.classify_concrete(env_s, assignment)
    class_t = template.classify_concrete(env_t, assignment)
    if class_s != class_t:
        return False, True
    rank_class = class_s if ranking.mode == "per-class" else None
    psi = build_psi(
        system,
        template,
        ranking,
        _const_point(system, s),
        _const_point(system, t),
        assignment,
        rank_class=rank_class,
    )
    return True, eval_pred(psi, {})


def _check_learner_model(
    system: SymbolicSystem,
    template: ClassifierTemplate,
    ranking: RankingTemplate,
    assignment: Mapping[str, int],
    samples: Sequence[tuple[State, State]],
) -> None:
    """Re-substitute the learner model into every sample constraint."""
    for s, t in samples:
        same, psi = _psi_concrete(system, template, ranking, assignment, s, t)
        if same and not psi:
            raise RuntimeError(
                f"learner model violates its own constraint on pair ({s}, {t})"
            )


def _check_counterexample(
    system: SymbolicSystem,
    template: ClassifierTemplate,
    ranking: RankingTemplate,
    assignment: Mapping[str, int],
    cex: Counterexample,
) -> None:
    """A verifier model must be a same-class pair concretely falsifying Psi."""
    same, psi = _psi_concrete(system, template, ranking, assignment, cex.s, cex.t)
    if not same or psi:
        raise RuntimeError(
            f"verifier returned ({cex.s}, {cex.t}) which does not violate "
            "the certificate conditions"
        )


# ---------------------------------------------------------------------------
# The loop
# ---------------------------------------------------------------------------


def _make_ranking(
    system: SymbolicSystem, template: ClassifierTemplate, cfg: CegisConfig
) -> RankingTemplate:
    if cfg.piecewise:
        return RankingTemplate(system.variables, "per-class", template.classes())
    return RankingTemplate(system.variables, "global")


def _seed_pairs(
    system: SymbolicSystem, count: int, seed: int
) -> list[tuple[State, State]]:
    rng = random.Random(seed)
    n = len(system.variables)
    pairs: list[tuple[State, State]] = []
    while len(pairs) < count:
        s = tuple(rng.randint(-50, 50) for _ in range(n))
        t = tuple(rng.randint(-50, 50) for _ in range(n))
        if (s, t) not in pairs:
            pairs.append((s, t))
    return pairs


def run(
    system: SymbolicSystem,
    cfg: CegisConfig | None = None,
    backend: SmtBackend | None = None,
) -> Union[LearnedBisimulation, FailureReport]:
    """Alternate learn/verify until a certificate is verified or a bound hits.

    Counterexamples accumulate in the sample set across refinements.
    A refinement is triggered only by learner infeasibility.  Every
    learner model and every counterexample is concretely re-checked;
    a violation means an encoding or solver fault and raises.
    """
    cfg = cfg or CegisConfig()
    backend = backend or SmtBackend(default_timeout_ms=cfg.timeout_ms)
    stats = CegisStats()

    template = initial_template(system, backend)
    ranking = _make_ranking(system, template, cfg)
    learner = _Learner(system, template, ranking, cfg, backend)
    samples: list[tuple[State, State]] = _seed_pairs(
        system, cfg.seed_samples, cfg.seed
    )
    refinements = 0

    while True:
        if stats.iterations >= cfg.max_iters:
            return FailureReport(
                "budget-exhausted",
                f"no certificate after {stats.iterations} iterations "
                f"({stats.counterexamples} counterexamples, {refinements} refinements)",
                stats,
            )
        stats.iterations += 1

        t0 = time.monotonic()
        try:
            learned = learner.solve(samples)
        except SolverInconclusive as err:
            return FailureReport("solver-unknown", str(err), stats)
        finally:
            stats.learn_seconds += time.monotonic() - t0

        if isinstance(learned, Infeasible):
            stats.trace.append(("learn", "infeasible"))
            if refinements >= cfg.max_depth or not template.can_refine():
                return FailureReport(
                    "refinement-limit",
                    f"templates infeasible after {refinements} refinements "
                    f"({len(template.classes())} classes)",
                    stats,
                )
            template = template.refine()
            ranking = _make_ranking(system, template, cfg)
            learner = _Learner(system, template, ranking, cfg, backend)
            refinements += 1
            stats.refinements += 1
            stats.trace.append(("refine", len(template.classes())))
            continue

        assignment = learned
        _check_learner_model(system, template, ranking, assignment, samples)
        stats.model_checks += len(samples)
        stats.trace.append(("learn", "model"))

        def ingest(found: list[Counterexample], phase: str) -> None:
            for cex in found:
                _check_counterexample(system, template, ranking, assignment, cex)
                stats.cex_checks += 1
                pair = (cex.s, cex.t)
                if pair in samples:
                    raise RuntimeError(
                        f"counterexample {pair} repeated: the learner constraint "
                        "failed to exclude it"
                    )
                samples.append(pair)
                stats.counterexamples += 1
                stats.trace.append((phase, "counterexample", pair))

        # Cheap concrete screening first: reject assignments that already
        # fail on states in hand without paying for a verifier sweep.
        # Validity can only ever come from the verifier.
        t0 = time.monotonic()
        screened = _screen(
            system, template, ranking, assignment, _concrete_pool(system, samples)
        )
        stats.verify_seconds += time.monotonic() - t0
        if screened:
            ingest(screened, "screen")
            continue

        t0 = time.monotonic()
        try:
            outcome = _verify_round(system, template, ranking, assignment, cfg, backend)
        except SolverInconclusive as err:
            return FailureReport("solver-unknown", str(err), stats)
        finally:
            stats.verify_seconds += time.monotonic() - t0

        if isinstance(outcome, Valid):
            stats.trace.append(("verify", "valid"))
            return LearnedBisimulation(
                system, template, ranking, assignment, tuple(samples), stats
            )

        # Every query in the round was paid for, so ingest every witness:
        # the learner then excludes them all in one step.
        ingest(outcome, "verify")
