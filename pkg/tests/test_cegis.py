"""Learner/verifier loop: certificate condition, progress, self-checks."""

import pytest

from bisimlearn import cegis
from bisimlearn.cegis import (
    CegisConfig,
    Counterexample,
    FailureReport,
    Infeasible,
    LearnedBisimulation,
    build_psi,
    learn,
    run,
    verify,
)
from bisimlearn.core import Const, eval_pred
from bisimlearn.dsl import loads_system
from bisimlearn.templates import (
    RankingTemplate,
    initial_template,
    split_coeff,
    zeros,
)

from .conftest import FIXTURES


@pytest.fixture(scope="module")
def fig5a():
    return loads_system((FIXTURES / "fig5a.bsys").read_text())


def _known_assignment(template, ranking):
    """The hand-derived classifier (split 2x - y <= 0) with zero ranks."""
    assignment = dict(zeros(template.params() + ranking.params()))
    assignment[split_coeff(0, "x")] = 2
    assignment[split_coeff(0, "y")] = -1
    return assignment


def _points(system, s, t):
    return (
        {v: Const(c) for v, c in zip(system.variables, s)},
        {v: Const(c) for v, c in zip(system.variables, t)},
    )


# ---------------------------------------------------------------------------
# The certificate condition Psi
# ---------------------------------------------------------------------------


def test_psi_true_when_successors_coincide(fig5a, backend):
    """s = t = (5,1): both branches land on (5,-4), so Psi holds under any rank."""
    template = initial_template(fig5a, backend)
    ranking = RankingTemplate(fig5a.variables, "per-class", template.classes())
    assignment = _known_assignment(template, ranking)
    ps, pt = _points(fig5a, (5, 1), (5, 1))
    psi = build_psi(fig5a, template, ranking, ps, pt, assignment, rank_class=0)
    assert eval_pred(psi, {})


def test_psi_false_for_divergent_pair_with_zero_ranks(fig5a, backend):
    """(1,2) vs (10,2): one side can exit to x<=0, the other cannot match it,
    and all-zero ranks allow no stuttering credit."""
    template = initial_template(fig5a, backend)
    ranking = RankingTemplate(fig5a.variables, "per-class", template.classes())
    assignment = dict(zeros(template.params() + ranking.params()))
    ps, pt = _points(fig5a, (1, 2), (10, 2))
    env_s = fig5a.state_env((1, 2))
    cls = template.classify_concrete(env_s, assignment)
    psi = build_psi(fig5a, template, ranking, ps, pt, assignment, rank_class=cls)
    assert not eval_pred(psi, {})


def test_psi_with_symbolic_parameters_mentions_them(fig5a, backend):
    from bisimlearn.core import pred_vars

    template = initial_template(fig5a, backend)
    ranking = RankingTemplate(fig5a.variables, "global")
    ps, pt = _points(fig5a, (1, 2), (3, 8))
    psi = build_psi(fig5a, template, ranking, ps, pt)
    free = pred_vars(psi)
    assert any(name.startswith("th!") for name in free)
    assert any(name.startswith("eta!") for name in free)


# ---------------------------------------------------------------------------
# Learner
# ---------------------------------------------------------------------------


def test_learner_empty_samples_returns_zeros_without_solver(fig5a, backend):
    template = initial_template(fig5a, backend)
    ranking = RankingTemplate(fig5a.variables, "per-class", template.classes())
    before = backend.queries
    model = learn(fig5a, template, ranking, [], CegisConfig(), backend)
    assert backend.queries == before
    assert set(model) == set(template.params() + ranking.params())
    assert all(v == 0 for v in model.values())


def test_learner_infeasible_under_zero_bound(fig5a, backend):
    """With every parameter pinned to zero the divergent pair is unsatisfiable."""
    template = initial_template(fig5a, backend)
    ranking = RankingTemplate(fig5a.variables, "per-class", template.classes())
    cfg = CegisConfig(param_bound=0)
    outcome = learn(fig5a, template, ranking, [((1, 2), (10, 2))], cfg, backend)
    assert isinstance(outcome, Infeasible)


def test_learner_model_satisfies_samples(fig5a, backend):
    template = initial_template(fig5a, backend)
    ranking = RankingTemplate(fig5a.variables, "per-class", template.classes())
    cfg = CegisConfig()
    samples = [((1, 2), (10, 2)), ((1, 2), (2, 3)), ((0, 0), (-5, 3))]
    model = learn(fig5a, template, ranking, samples, cfg, backend)
    assert not isinstance(model, Infeasible)
    # the run loop re-checks every model concretely; do the same here
    cegis._check_learner_model(fig5a, template, ranking, model, samples)


# ---------------------------------------------------------------------------
# Verifier
# ---------------------------------------------------------------------------


def test_verifier_finds_counterexample_for_zero_assignment(fig5a, backend):
    template = initial_template(fig5a, backend)
    ranking = RankingTemplate(fig5a.variables, "per-class", template.classes())
    assignment = dict(zeros(template.params() + ranking.params()))
    outcome = verify(fig5a, template, ranking, assignment, CegisConfig(), backend)
    assert isinstance(outcome, Counterexample)
    same_class, psi_holds = cegis._psi_concrete(
        fig5a, template, ranking, assignment, outcome.s, outcome.t
    )
    assert same_class and not psi_holds


def test_verifier_accepts_known_certificate(fig5a, backend, fig5a_learned):
    outcome = verify(
        fig5a,
        fig5a_learned.template,
        fig5a_learned.ranking,
        fig5a_learned.assignment,
        CegisConfig(),
        backend,
    )
    assert isinstance(outcome, cegis.Valid)


def test_verifier_parallel_jobs_deterministic(fig5a, backend):
    template = initial_template(fig5a, backend)
    ranking = RankingTemplate(fig5a.variables, "per-class", template.classes())
    assignment = dict(zeros(template.params() + ranking.params()))
    seq = verify(fig5a, template, ranking, assignment, CegisConfig(jobs=1), backend)
    par = verify(fig5a, template, ranking, assignment, CegisConfig(jobs=4), backend)
    assert isinstance(seq, Counterexample) and isinstance(par, Counterexample)
    assert seq.class_id == par.class_id


# ---------------------------------------------------------------------------
# The full loop
# ---------------------------------------------------------------------------


def test_run_learns_fig5a(fig5a_learned):
    assert isinstance(fig5a_learned, LearnedBisimulation)
    assert len(fig5a_learned.template.classes()) == 3
    assert fig5a_learned.stats.iterations >= 1
    # built-in self-checks really ran (acceptance: 100% of models and
    # counterexamples are concretely validated)
    assert fig5a_learned.stats.model_checks >= fig5a_learned.stats.iterations - 1
    assert fig5a_learned.stats.cex_checks == fig5a_learned.stats.counterexamples
    events = [e[0] for e in fig5a_learned.stats.trace]
    assert "learn" in events and "verify" in events
    assert fig5a_learned.stats.trace[-1][:2] == ("verify", "valid")


def test_run_budget_exhaustion_reports_failure(fig5a, backend):
    outcome = run(fig5a, CegisConfig(max_iters=1, seed=0), backend)
    assert isinstance(outcome, FailureReport)
    assert outcome.reason == "budget-exhausted"
    assert outcome.stats.iterations == 1


def test_run_seed_samples_are_deterministic(fig5a, backend):
    cfg = CegisConfig(seed=7, seed_samples=4, max_iters=1)
    first = run(fig5a, cfg, backend)
    second = run(fig5a, cfg, backend)
    # max_iters=1 fails fast either way; the seeded prefix must agree
    first_samples = (
        first.samples[:4] if isinstance(first, LearnedBisimulation) else None
    )
    assert first_samples is None  # budget of one iteration cannot verify
    # regenerate via the private helper to pin determinism
    a = cegis._seed_pairs(fig5a, 4, 7)
    b = cegis._seed_pairs(fig5a, 4, 7)
    assert a == b and len(a) == 4
    assert all(
        all(-50 <= x <= 50 for x in s + t) for s, t in a
    )
    assert second.stats.iterations == 1


def test_run_global_rank_mode_converges_on_simple_loop(backend):
    system = loads_system((FIXTURES / "term-loop-nd.bsys").read_text())
    outcome = run(system, CegisConfig(piecewise=False, seed=0), backend)
    assert isinstance(outcome, LearnedBisimulation)
    assert outcome.ranking.mode == "global"


def test_run_raises_on_non_falsifying_counterexample(fig5a, backend, monkeypatch):
    """The concrete self-check guards against a lying verifier."""

    def lying_verify(system, template, ranking, assignment, cfg, backend):
        return [Counterexample((5, 1), (5, 1), 0)]  # Psi holds here

    monkeypatch.setattr(cegis, "_verify_round", lying_verify)
    with pytest.raises(RuntimeError, match="does not violate"):
        run(fig5a, CegisConfig(seed=0), backend)


def test_run_raises_on_repeated_counterexample(fig5a, backend, monkeypatch):
    """A verifier that never makes progress is reported, not looped on."""
    stuck = Counterexample((1, 2), (10, 2), None)

    def stuck_verify(system, template, ranking, assignment, cfg, backend):
        return [stuck]

    monkeypatch.setattr(cegis, "_verify_round", stuck_verify)
    monkeypatch.setattr(cegis, "_check_counterexample", lambda *a, **k: None)
    with pytest.raises(RuntimeError, match="progress|repeat"):
        run(fig5a, CegisConfig(seed=0), backend)
