"""Term/predicate algebra, symbolic systems, and the .bsys parser."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bisimlearn.core import (
    FALSE,
    TRUE,
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
    Sub,
    SymbolicSystem,
    SystemDefinitionError,
    Var,
    conj,
    disj,
    eval_pred,
    eval_term,
    mk_not,
    pred_to_str,
    pred_vars,
    simplify_pred,
    simplify_term,
    subst_pred,
    subst_term,
    term_to_str,
    term_vars,
)
from bisimlearn.dsl import (
    DslSyntaxError,
    UnboundedBranchingError,
    loads_system,
    parse_predicate,
    parse_term,
)

from .conftest import FIXTURES


# ---------------------------------------------------------------------------
# Terms and predicates
# ---------------------------------------------------------------------------


def test_eval_term_arithmetic():
    env = {"x": 3, "y": -2}
    term = Add(Mul(Const(2), Var("x")), Neg(Var("y")))
    assert eval_term(term, env) == 8
    assert eval_term(Sub(Var("x"), Const(10)), env) == -7
    assert eval_term(Ite(Cmp("<", Var("y"), Const(0)), Var("x"), Const(0)), env) == 3


def test_eval_pred_connectives():
    env = {"x": 1}
    assert eval_pred(Cmp("<=", Var("x"), Const(1)), env)
    assert not eval_pred(Cmp("<", Var("x"), Const(1)), env)
    assert eval_pred(And((TRUE, Cmp("=", Var("x"), Const(1)))), env)
    assert eval_pred(Or((FALSE, TRUE)), env)
    assert eval_pred(Not(FALSE), env)
    assert eval_pred(BoolLit(True), env)


def test_subst_folds_variables():
    term = Add(Var("x"), Var("y"))
    replaced = subst_term(term, {"x": Const(5)})
    assert eval_term(replaced, {"y": 1}) == 6
    pred = Cmp("<=", Var("x"), Var("y"))
    replaced_pred = subst_pred(pred, {"y": Const(0)})
    assert eval_pred(replaced_pred, {"x": -1})
    assert not eval_pred(replaced_pred, {"x": 1})


def test_vars_collect_reachable_names():
    term = Ite(Cmp("=", Var("a"), Const(0)), Var("b"), Add(Var("c"), Const(1)))
    assert term_vars(term) == {"a", "b", "c"}
    assert pred_vars(And((Cmp("<", Var("u"), Var("v")), TRUE))) == {"u", "v"}


def test_conj_disj_unit_laws():
    assert conj([]) == TRUE
    assert disj([]) == FALSE
    p = Cmp("<", Var("x"), Const(0))
    assert conj([p]) == p
    assert disj([p]) == p


def test_mk_not_collapses_double_negation():
    p = Cmp("<", Var("x"), Const(0))
    assert mk_not(mk_not(p)) == p
    assert mk_not(TRUE) == FALSE or eval_pred(mk_not(TRUE), {}) is False


@settings(max_examples=60, deadline=None)
@given(
    x=st.integers(min_value=-30, max_value=30),
    y=st.integers(min_value=-30, max_value=30),
)
def test_simplify_preserves_meaning(x, y):
    env = {"x": x, "y": y}
    term = Add(Mul(Const(0), Var("x")), Ite(Cmp("<", Var("x"), Var("y")), Sub(Var("y"), Var("x")), Const(0)))
    assert eval_term(simplify_term(term), env) == eval_term(term, env)
    pred = And((Or((Cmp("<=", Var("x"), Var("y")), FALSE)), Not(Not(Cmp("<", Var("y"), Const(5))))))
    assert eval_pred(simplify_pred(pred), env) == eval_pred(pred, env)


def test_printers_round_trip_through_parser():
    term = parse_term("2x - (y + 1)")
    assert eval_term(parse_term(term_to_str(term)), {"x": 4, "y": 2}) == 5
    pred = parse_predicate("x > 0 && !(2x <= y)")
    rendered = pred_to_str(pred)
    again = parse_predicate(rendered)
    for env in ({"x": 1, "y": 1}, {"x": 1, "y": 3}, {"x": 0, "y": 0}):
        assert eval_pred(again, env) == eval_pred(pred, env)


# ---------------------------------------------------------------------------
# Symbolic systems (semantics of the running fixture)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def fig5a():
    return loads_system((FIXTURES / "fig5a.bsys").read_text())


def test_fig5a_successors_inside_loop(fig5a):
    assert fig5a.successor_states((3, 8)) == [(-5, 8), (3, 5)]


def test_fig5a_successors_after_exit_duplicate(fig5a):
    assert fig5a.successor_states((0, 5)) == [(0, 5), (0, 5)]


def test_fig5a_successors_single_branch_duplicated(fig5a):
    assert fig5a.successor_states((2, 1)) == [(2, -1), (2, -1)]


def test_fig5a_labelling(fig5a):
    assert fig5a.labels_of((3, 8)) == frozenset({"xgt0"})
    assert fig5a.labels_of((0, 5)) == frozenset({"xle0"})


def test_state_env_and_identity(fig5a):
    assert fig5a.state_env((7, -2)) == {"x": 7, "y": -2}
    ident = fig5a.identity_point()
    assert set(ident) == {"x", "y"}
    assert eval_term(ident["x"], {"x": 9, "y": 0}) == 9


def test_successor_point_matches_concrete(fig5a):
    point = fig5a.identity_point()
    moved = fig5a.successor_point(0, point)
    env = fig5a.state_env((3, 8))
    assert tuple(eval_term(moved[v], env) for v in fig5a.variables) == (-5, 8)


def test_system_validation_rejects_bad_shapes():
    with pytest.raises(SystemDefinitionError):
        SymbolicSystem(
            name="bad",
            variables=("x", "x"),
            k=1,
            successors=({"x": Var("x")},),
            init=TRUE,
            labels={},
        )
    with pytest.raises(SystemDefinitionError):
        SymbolicSystem(
            name="bad",
            variables=("x",),
            k=2,
            successors=({"x": Var("x")},),
            init=TRUE,
            labels={},
        )


# ---------------------------------------------------------------------------
# DSL
# ---------------------------------------------------------------------------


def test_dsl_implicit_multiplication():
    assert eval_term(parse_term("2x + 3"), {"x": 5}) == 13


def test_dsl_if_then_else_terms():
    term = parse_term("if x > 0 then x - 1 else x")
    assert eval_term(term, {"x": 4}) == 3
    assert eval_term(term, {"x": -4}) == -4


def test_dsl_branch_autofill_repeats_last():
    text = """
    system pair;
    vars x: int, y: int;
    branching 3;
    init x == 0;
    label zero := x == 0;
    branch 1: x := x + 1;
    branch 2: x := x - 1, y := y + x;
    """
    system = loads_system(text)
    assert system.k == 3
    assert system.successor_states((0, 0)) == [(1, 0), (-1, 0), (-1, 0)]


def test_dsl_unmentioned_variables_stay_fixed():
    text = """
    system keep;
    vars a: int, b: int;
    branching 1;
    init true;
    branch 1: a := a + b;
    """
    system = loads_system(text)
    assert system.successor_states((2, 3)) == [(5, 3)]


def test_dsl_unbounded_branching_rejected():
    text = """
    system bad;
    vars x: int;
    branching *;
    init true;
    branch 1: x := x;
    """
    with pytest.raises(UnboundedBranchingError):
        loads_system(text)


def test_dsl_nonlinear_update_rejected():
    text = """
    system bad;
    vars x: int;
    branching 1;
    init true;
    branch 1: x := x * x;
    """
    with pytest.raises(SystemDefinitionError):
        loads_system(text)


def test_dsl_syntax_error_reports_position():
    with pytest.raises(DslSyntaxError):
        loads_system("system broken; vars x: int branching 1;")


def test_dsl_scaling_by_constant_is_linear():
    text = """
    system ok;
    vars x: int;
    branching 1;
    init true;
    branch 1: x := 3x - 2;
    """
    assert loads_system(text).successor_states((4,)) == [(10,)]
