import numpy as np
import pytest
import tomli_w
from hypothesis import given, settings
from hypothesis import strategies as st

from randstop.config import tomllib
from randstop.plans import (RandomizedPlan, plan_from_increments, plan_from_rule, plan_value,
                            plan_values, random_plan, random_plans)
from randstop.tree import (FilteredTree, TreeError, count_stopping_rules, enumerate_stopping_rules,
                           evaluate_stopped, random_tree, snell_envelope, tree_from_records)

from oracles import brute_force_plan_value


@st.composite
def tree_and_payoff(draw, max_depth=4):
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    tree = random_tree(rng, max_depth=max_depth, max_branch=3)
    return tree, rng.uniform(-1, 1, tree.size), rng


def test_plan_value_chain():
    tree = FilteredTree.chain(1)
    plan = RandomizedPlan(tree, [0.5, 1.0])
    assert plan_value(np.array([0.0, 1.0]), plan) == 0.5


def test_plan_value_two_leaf():
    tree, h = tree_from_records([("r", None, 1, 0), ("u", "r", 0.5, 4), ("d", "r", 0.5, -2)])
    assert plan_value(h, RandomizedPlan(tree, [0.25, 1, 1])) == pytest.approx(0.75, abs=1e-15)


@pytest.mark.parametrize(
    "p, match",
    [([0.5, 0.5], "leaf"), ([1.5, 1.0], r"\[0, 1\]"), ([0.5], "one stopping probability")],
)
def test_invalid_plans(p, match):
    with pytest.raises(TreeError, match=match):
        RandomizedPlan(FilteredTree.chain(1), p)


def test_plan_from_rule_root_and_leaves():
    tree, _ = tree_from_records([("r", None, 1, 0), ("u", "r", 0.5, 4), ("d", "r", 0.5, -2)])
    rules = list(enumerate_stopping_rules(tree))
    at_root = next(r for r in rules if r.stop[0])
    at_leaves = next(r for r in rules if not r.stop[0])
    assert plan_from_rule(at_root).p[0] == 1.0
    assert np.array_equal(plan_from_rule(at_leaves).p, [0.0, 1.0, 1.0])


def test_increments_sum_to_one_per_path():
    tree = FilteredTree.from_branching(lambda v, t: [0.3, 0.7], 3)
    plan = random_plan(tree, np.random.default_rng(0))
    totals = plan.increments[tree.ancestor[:, tree.leaves]].sum(axis=0)
    assert np.allclose(totals, 1.0, atol=1e-15)


def test_batched_values_match_single():
    rng = np.random.default_rng(3)
    tree = random_tree(rng, 4, 3)
    h = rng.uniform(-1, 1, tree.size)
    P = random_plans(tree, rng, 50)
    single = [plan_value(h, RandomizedPlan(tree, p)) for p in P]
    assert np.allclose(plan_values(tree, h, P), single, atol=1e-15, rtol=0)


def test_round_trip_through_toml():
    rng = np.random.default_rng(1)
    tree, _ = tree_from_records([("r", None, 1, 0), ("u", "r", 0.5, 4), ("d", "r", 0.5, -2)])
    plan = random_plan(tree, rng)
    text = tomli_w.dumps({"plan": plan.to_dict()})
    back = RandomizedPlan.from_dict(tree, tomllib.loads(text)["plan"])
    assert np.array_equal(back.p, plan.p)


@settings(max_examples=40, deadline=None)
@given(tree_and_payoff(max_depth=3))
def test_value_matches_path_expansion(case):
    tree, h, rng = case
    p = random_plans(tree, rng, 1)[0]
    expected = brute_force_plan_value(tree.parent.tolist(), tree.prob.tolist(), h.tolist(), p.tolist())
    assert plan_value(h, RandomizedPlan(tree, p)) == pytest.approx(expected, abs=1e-13)


@settings(max_examples=40, deadline=None)
@given(tree_and_payoff())
def test_dominance_by_snell(case):
    tree, h, rng = case
    P = random_plans(tree, rng, 200)
    assert plan_values(tree, h, P).max() <= snell_envelope(tree, h)[0] + 1e-12


@settings(max_examples=30, deadline=None)
@given(tree_and_payoff(max_depth=3))
def test_pure_plans_reproduce_rule_values(case):
    tree, h, _ = case
    if count_stopping_rules(tree) > 1000:
        return
    values = []
    for rule in enumerate_stopping_rules(tree):
        v = plan_value(h, plan_from_rule(rule))
        assert abs(v - evaluate_stopped(h, rule)) <= 1e-15
        values.append(v)
    assert abs(max(values) - snell_envelope(tree, h)[0]) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(tree_and_payoff(), st.floats(0, 1))
def test_affine_in_increments(case, lam):
    tree, h, rng = case
    a, b = (RandomizedPlan(tree, p) for p in random_plans(tree, rng, 2))
    mixed = plan_from_increments(tree, lam * a.increments + (1 - lam) * b.increments)
    expected = lam * plan_value(h, a) + (1 - lam) * plan_value(h, b)
    assert abs(plan_value(h, mixed) - expected) <= 1e-12
