"""Randomized stopping plans on a filtered tree.

A plan assigns each node the conditional probability of stopping there given
that the path has not stopped earlier. Leaves stop with certainty, so the
induced stopping mass along every root-to-leaf path totals one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tree import FilteredTree, StoppingRule, TreeError, check_adapted

MASS_TOL = 1e-12


def _survival(tree: FilteredTree, p: np.ndarray) -> np.ndarray:
    """Probability (along the path) of not having stopped before each node; batched over rows."""
    p = np.atleast_2d(p)
    surv = np.ones_like(p)
    for t in range(1, tree.horizon + 1):
        nodes = tree.at_depth(t)
        par = tree.parent[nodes]
        surv[:, nodes] = surv[:, par] * (1.0 - p[:, par])
    return surv


@dataclass(frozen=True, eq=False)
class RandomizedPlan:
    tree: FilteredTree
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.shape != (self.tree.size,):
            raise TreeError("plan needs one stopping probability per node")
        if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise TreeError("stopping probabilities must lie in [0, 1]")
        if np.any(p[self.tree.leaves] != 1.0):
            raise TreeError("every leaf must stop with probability 1")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "p", p)
        totals = self.increments[self.tree.ancestor[:, self.tree.leaves]].sum(axis=0)
        if np.any(np.abs(totals - 1.0) > MASS_TOL):
            raise TreeError("stopping increments do not sum to 1 along every path")

    @property
    def increments(self) -> np.ndarray:
        """Stopping mass at each node along its own path: p(v) * prod_{a < v} (1 - p(a))."""
        return (self.p * _survival(self.tree, self.p))[0]

    def to_dict(self) -> dict:
        return {str(label): float(x) for label, x in zip(self.tree.ids, self.p)}

    @classmethod
    def from_dict(cls, tree: FilteredTree, d: dict) -> "RandomizedPlan":
        by_label = {str(k): float(v) for k, v in d.items()}
        missing = [label for label in tree.ids if str(label) not in by_label]
        if missing:
            raise TreeError(f"plan lacks probabilities for nodes {missing}")
        return cls(tree, np.array([by_label[str(label)] for label in tree.ids]))


def plan_value(h, plan: RandomizedPlan) -> float:
    h = check_adapted(plan.tree, h)
    return float(np.sum(plan.tree.path_prob * plan.increments * h))


def plan_values(tree: FilteredTree, h, P: np.ndarray) -> np.ndarray:
    """Vectorized ``plan_value`` for a stack of plans, one per row of ``P``."""
    h = check_adapted(tree, h)
    inc = P * _survival(tree, P)
    return inc @ (tree.path_prob * h)


def plan_from_rule(rule: StoppingRule) -> RandomizedPlan:
    p = rule.stop.astype(float)
    p[rule.tree.leaves] = 1.0
    return RandomizedPlan(rule.tree, p)


def plan_from_increments(tree: FilteredTree, inc) -> RandomizedPlan:
    """Inverse of ``RandomizedPlan.increments``; nodes reached with no mass left stop surely."""
    inc = np.asarray(inc, dtype=float)
    before = np.zeros(tree.size)
    for t in range(1, tree.horizon + 1):
        nodes = tree.at_depth(t)
        par = tree.parent[nodes]
        before[nodes] = before[par] + inc[par]
    remaining = 1.0 - before
    p = np.ones(tree.size)
    alive = remaining > MASS_TOL
    p[alive] = np.clip(inc[alive] / remaining[alive], 0.0, 1.0)
    p[tree.leaves] = 1.0
    return RandomizedPlan(tree, p)


def random_plans(tree: FilteredTree, rng: np.random.Generator, count: int) -> np.ndarray:
    """Independent uniform conditional stopping probabilities, leaves forced to 1."""
    P = rng.uniform(0.0, 1.0, size=(count, tree.size))
    P[:, tree.leaves] = 1.0
    return P


def random_plan(tree: FilteredTree, rng: np.random.Generator) -> RandomizedPlan:
    return RandomizedPlan(tree, random_plans(tree, rng, 1)[0])
