import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randstop.cdf import CdfPath, FunctionPath, IntensityPath, StepPath, intensity_to_cdf
from randstop.derandomize import (StagePayoffs, atomwise_excess, conditional_values,
                                  inductive_partition, piecewise_discretize, plan_to_rule,
                                  plans_to_rules, stages_from_plan)
from randstop.plans import RandomizedPlan, plan_from_rule, plan_value, plan_values, random_plans
from randstop.runner import random_smooth_path
from randstop.tree import (FilteredTree, TreeError, enumerate_stopping_rules, evaluate_stopped,
                           random_tree, snell_envelope, tree_from_records)

from oracles import dyadic_gap_identity


@st.composite
def tree_and_payoff(draw, max_depth=4):
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    tree = random_tree(rng, max_depth=max_depth, max_branch=3)
    return tree, rng.uniform(-1, 1, tree.size), rng


def two_leaf():
    return tree_from_records([("r", None, 1, 0), ("u", "r", 0.5, 4), ("d", "r", 0.5, -2)])


def test_single_stage_is_everything():
    tree, h = two_leaf()
    s = StagePayoffs.from_nodes(tree, [1], [h], [np.ones(tree.size)])
    part = inductive_partition(s)
    assert part.A.all()


def test_two_stage_deterministic_stops_first():
    tree = FilteredTree.chain(0)
    s = StagePayoffs(tree, (0, 0), np.array([[1.0], [0.0]]), np.array([[0.5], [0.5]]))
    part = inductive_partition(s)
    assert part.A[:, 0].tolist() == [True, False]
    randomized, pure = conditional_values(s, part)
    assert randomized[0] == 0.5 and pure[0] == 1.0


def test_two_stage_tree_continues():
    tree, h = two_leaf()
    s = StagePayoffs.from_nodes(tree, [0, 1], [h, h], [np.full(tree.size, 0.25), np.full(tree.size, 0.75)])
    part = inductive_partition(s)
    part.check()
    assert not part.A[0].any() and part.A[1].all()
    randomized, pure = conditional_values(s, part)
    assert randomized[0] == pytest.approx(0.75) and pure[0] == pytest.approx(1.0)


def test_chain_uniform_plan_waits_to_the_end():
    tree = FilteredTree.chain(2)
    h = np.array([0.0, 1.0, 2.0])
    plan = RandomizedPlan(tree, [1 / 3, 0.5, 1.0])
    assert plan_value(h, plan) == pytest.approx(1.0, abs=1e-15)
    rule = plan_to_rule(h, plan)
    assert rule.stop_nodes.tolist() == [2]
    assert evaluate_stopped(h, rule) == 2.0


def test_pure_plan_keeps_its_value():
    tree = FilteredTree.from_branching(lambda v, t: [0.4, 0.6], 2)
    h = np.random.default_rng(2).uniform(-1, 1, tree.size)
    for rule in enumerate_stopping_rules(tree):
        got = plan_to_rule(h, plan_from_rule(rule))
        assert evaluate_stopped(h, got) >= evaluate_stopped(h, rule) - 1e-12


def test_stage_validation():
    tree, h = two_leaf()
    with pytest.raises(TreeError, match="sum to 1"):
        StagePayoffs.from_nodes(tree, [0, 1], [h, h], [np.full(3, 0.5), np.full(3, 0.4)])
    with pytest.raises(TreeError, match="measurable"):
        StagePayoffs(tree, (0, 1), np.array([[1.0, 0.0], [0.0, 0.0]]), np.full((2, 2), 0.5))


def test_trace_lists_every_stage_atom():
    tree, h = two_leaf()
    log = []
    plan_to_rule(h, RandomizedPlan(tree, [0.25, 1, 1]), trace=log)
    assert [e["stage"] for e in log] == [1, 2, 2]
    assert log[0]["chosen"] == "continue" and log[0]["continuation"] == pytest.approx(1.0)
    assert [e["chosen"] for e in log[1:]] == ["stop", "stop"]


@settings(max_examples=60, deadline=None)
@given(tree_and_payoff())
def test_partition_is_valid(case):
    tree, h, rng = case
    plan = RandomizedPlan(tree, random_plans(tree, rng, 1)[0])
    inductive_partition(stages_from_plan(h, plan)).check()


@settings(max_examples=60, deadline=None)
@given(tree_and_payoff())
def test_sandwich(case):
    tree, h, rng = case
    P = random_plans(tree, rng, 100)
    stops = plans_to_rules(tree, h, P)
    rule_vals = stops @ (tree.path_prob * h)
    assert np.all(rule_vals >= plan_values(tree, h, P) - 1e-12)
    assert np.all(rule_vals <= snell_envelope(tree, h)[0] + 1e-12)


@settings(max_examples=30, deadline=None)
@given(tree_and_payoff(max_depth=3))
def test_batched_matches_single(case):
    tree, h, rng = case
    P = random_plans(tree, rng, 10)
    stops = plans_to_rules(tree, h, P)
    for p, row in zip(P, stops):
        assert np.array_equal(plan_to_rule(h, RandomizedPlan(tree, p)).stop, row)


@settings(max_examples=60, deadline=None)
@given(tree_and_payoff())
def test_atomwise_inequality(case):
    tree, h, rng = case
    assert atomwise_excess(tree, h, random_plans(tree, rng, 20)).max() <= 1e-12


@settings(max_examples=60, deadline=None)
@given(tree_and_payoff(), st.integers(2, 5))
def test_atomwise_on_random_stages(case, N):
    tree, h, rng = case
    depths = sorted(rng.integers(0, tree.horizon + 1, N))
    H = [rng.uniform(-1, 1, tree.size) for _ in depths]
    anc = tree.ancestor[:, tree.leaves]
    hs = np.array([hv[anc[d]] for hv, d in zip(H, depths)])
    # stick breaking keeps each weight measurable at its own stage
    u = np.array([rng.uniform(0, 1, tree.size)[anc[d]] for d in depths])
    u[-1] = 1.0
    ps = u * np.cumprod(np.vstack([np.ones(u.shape[1]), 1 - u[:-1]]), axis=0)
    s = StagePayoffs(tree, tuple(depths), hs, ps)
    part = inductive_partition(s)
    part.check()
    randomized, pure = conditional_values(s, part)
    assert np.all(randomized <= pure + 1e-12)


@pytest.mark.parametrize("n", range(1, 13))
def test_discretize_linear_uniform(n):
    d = piecewise_discretize(FunctionPath(lambda t: t, horizon=1.0), CdfPath.uniform(0, 1), n)
    assert abs(d.discrepancy - 2.0 ** (-n - 1)) <= 1e-12


@pytest.mark.parametrize("n", [1, 3, 5])
def test_discretize_linear_matches_cellwise_oracle(n):
    d = piecewise_discretize(FunctionPath(lambda t: t, horizon=1.0), CdfPath.uniform(0, 1), n)
    assert d.discrepancy == pytest.approx(dyadic_gap_identity(n), abs=1e-13)


def test_discretize_step_on_grid_is_exact():
    h = StepPath([-1.0, 0.0, 0.25, 0.5, 1.0], [0.3, 1.0, -1.0, 2.0], side="right")
    for F in (CdfPath.uniform(0, 1), CdfPath([0.25, 0.6], [0.5, 0.5])):
        assert piecewise_discretize(h, F, 3).discrepancy <= 1e-15


def test_discretize_keeps_jump_values():
    h = FunctionPath(lambda t: np.sin(7 * t), horizon=1.0)
    F = CdfPath([0.3137], [1.0])
    d = piecewise_discretize(h, F, 2)
    assert d.discrepancy == 0.0
    assert d.path(0.3137) == pytest.approx(np.sin(7 * 0.3137))


def test_discretize_monotone_for_monotone_path():
    h = FunctionPath(lambda t: t**2, horizon=1.0)
    F = intensity_to_cdf(IntensityPath([0.0, 0.5, 1.0], [1.0, 3.0], 3.0))
    gaps = [piecewise_discretize(h, F, n).discrepancy for n in range(1, 13)]
    assert all(b <= a + 1e-15 for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 1e-3


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_discretize_random_paths_converge(seed):
    rng = np.random.default_rng(seed)
    h = random_smooth_path(rng)
    assert piecewise_discretize(h, CdfPath.uniform(0, 1), 12).discrepancy < 1e-3


def test_discretize_rejects_level_zero():
    with pytest.raises(ValueError):
        piecewise_discretize(FunctionPath(lambda t: t), CdfPath.uniform(0, 1), 0)
