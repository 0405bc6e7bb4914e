"""Turning randomized stopping into pure stopping without losing value.

The inductive partition works stage by stage: at stage 1 it compares the
payoff for stopping now with the conditional mean of the renormalized
remaining payoffs, stops where the former is at least as large, and recurses
on the later stages with the surviving outcomes. All random variables live on
the leaves (outcomes) of a ``FilteredTree``; the stage sigma-algebras are the
depth cross-sections of the tree.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate

from .cdf import CdfPath, StepPath
from .plans import RandomizedPlan, _survival, plan_value
from .tree import FilteredTree, StoppingRule, TreeError, check_adapted, evaluate_stopped

WEIGHT_TOL = 1e-12
ADAPTED_TOL = 1e-12
# denominators this small on {p_1 < 1} count as p_1 = 1
DENOM_FLOOR = 1e-14


def _group_spread(values: np.ndarray, groups: np.ndarray, n_groups: int) -> np.ndarray:
    hi = np.full(n_groups, -np.inf)
    lo = np.full(n_groups, np.inf)
    np.maximum.at(hi, groups, values)
    np.minimum.at(lo, groups, values)
    return hi - lo


@dataclass(frozen=True, eq=False)
class StagePayoffs:
    """Stage payoffs ``h[i]`` and weights ``p[i]`` as functions of the outcome (leaf).

    Stage ``i`` observes the tree at depth ``depths[i]``; depths are
    nondecreasing so the stage filtrations increase.
    """

    tree: FilteredTree
    depths: tuple
    h: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        depths = tuple(int(d) for d in self.depths)
        h = np.asarray(self.h, dtype=float)
        p = np.asarray(self.p, dtype=float)
        n_leaves = len(self.tree.leaves)
        N = len(depths)
        if N < 1:
            raise TreeError("at least one stage is required")
        if h.shape != (N, n_leaves) or p.shape != (N, n_leaves):
            raise TreeError(f"payoffs and weights must have shape {(N, n_leaves)}")
        if any(d < 0 or d > self.tree.horizon for d in depths):
            raise TreeError("stage depth outside the tree")
        if any(b < a for a, b in zip(depths, depths[1:])):
            raise TreeError("stage depths must be nondecreasing")
        if not (np.all(np.isfinite(h)) and np.all(np.isfinite(p))):
            raise TreeError("payoffs and weights must be finite")
        if np.any(p < 0):
            raise TreeError("weights must be nonnegative")
        if np.any(np.abs(p.sum(axis=0) - 1.0) > WEIGHT_TOL):
            raise TreeError("weights must sum to 1 on every outcome")
        anc = self.tree.ancestor[:, self.tree.leaves]
        for i, d in enumerate(depths):
            groups = anc[d] - self.tree.at_depth(d)[0]
            n_groups = len(self.tree.at_depth(d))
            if (np.any(_group_spread(h[i], groups, n_groups) > ADAPTED_TOL)
                    or np.any(_group_spread(p[i], groups, n_groups) > ADAPTED_TOL)):
                raise TreeError(f"stage {i + 1} is not measurable at depth {d}")
        object.__setattr__(self, "depths", depths)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "p", p)

    @property
    def stages(self) -> int:
        return len(self.depths)

    @classmethod
    def from_nodes(cls, tree: FilteredTree, depths: Sequence[int], h_nodes, p_nodes):
        """Build from per-node stage values: ``h_nodes[i][v]`` for ``v`` at depth ``depths[i]``."""
        anc = tree.ancestor[:, tree.leaves]
        h = np.array([np.asarray(hv, dtype=float)[anc[d]] for hv, d in zip(h_nodes, depths)])
        p = np.array([np.asarray(pv, dtype=float)[anc[d]] for pv, d in zip(p_nodes, depths)])
        return cls(tree, tuple(depths), h, p)


@dataclass(frozen=True, eq=False)
class Partition:
    """Per-stage events ``A[i]`` as boolean masks over outcomes."""

    tree: FilteredTree
    depths: tuple
    A: np.ndarray
    trace: list = field(default_factory=list, repr=False)

    def check(self) -> None:
        A = self.A
        if np.any(A.sum(axis=0) != 1):
            raise AssertionError("events are not disjoint and exhaustive")
        anc = self.tree.ancestor[:, self.tree.leaves]
        for i, d in enumerate(self.depths):
            groups = anc[d] - self.tree.at_depth(d)[0]
            spread = _group_spread(A[i].astype(float), groups, len(self.tree.at_depth(d)))
            if np.any(spread > 0):
                raise AssertionError(f"event {i + 1} is not measurable at depth {d}")

    def atoms(self, i: int) -> list:
        """Node labels of the depth-``depths[i]`` atoms that make up event ``i``."""
        d = self.depths[i]
        nodes = np.unique(self.tree.ancestor[d, self.tree.leaves][self.A[i]])
        return [self.tree.ids[v] for v in nodes]


def _atom_mean(x, q, groups, n_groups):
    num = np.bincount(groups, weights=q * x, minlength=n_groups)
    den = np.bincount(groups, weights=q, minlength=n_groups)
    return num / np.where(den > 0, den, 1.0)


def _atom_mean_batch(x, q, groups, n_groups):
    """Atom means of ``x[..., L]`` broadcast back onto the outcomes."""
    G = np.zeros((len(groups), n_groups))
    G[np.arange(len(groups)), groups] = q
    den = G.sum(axis=0)
    return ((x @ G) / np.where(den > 0, den, 1.0))[..., groups]


def _trace_stage(trace, tree, depths, groups, first, stage, alive, h0, B, cond, stop):
    atoms, first_leaf = np.unique(groups, return_index=True)
    for g, j in zip(atoms, first_leaf):
        trace.append({
            "stage": stage,
            "depth": depths[0],
            "atom": tree.ids[first[0] + g],
            "reached": bool(alive[j]),
            "in_B": bool(B[j]),
            "stop_payoff": float(h0[j]),
            "continuation": float(cond[j]) if B[j] else None,
            "chosen": ("stop" if stop[j] else "continue") if alive[j] else None,
        })


def _partition(h, p, depths, q, anc, tree, trace, stage, alive=None):
    """Recursive partition on arrays shaped ``(..., N, L)``; leading axes batch independent instances.

    ``alive`` (trace mode only) marks outcomes not yet assigned to an earlier stage.
    """
    N, L = h.shape[-2:]
    first = tree.at_depth(depths[0])
    groups = anc[depths[0]] - first[0]
    if trace is not None and alive is None:
        alive = np.ones(L, dtype=bool)
    if N == 1:
        if trace is not None:
            none = np.zeros(L, dtype=bool)
            _trace_stage(trace, tree, depths, groups, first, stage, alive, h[0], none, None, alive)
        return np.ones(h.shape, dtype=bool)

    # p[0] is stage-1 measurable, so B is a union of stage-1 atoms
    B = (1.0 - p[..., 0, :]) > DENOM_FLOOR
    rest = p[..., 1:, :].sum(axis=-2)
    safe = np.where(B, rest, 1.0)
    ratio = np.where(B, (h[..., 1:, :] * p[..., 1:, :]).sum(axis=-2) / safe, 0.0)
    cond = _atom_mean_batch(ratio, q, groups, len(first))
    A1 = B & (h[..., 0, :] >= cond)
    keep = B & ~A1

    if trace is not None:
        _trace_stage(trace, tree, depths, groups, first, stage, alive, h[0], B, cond, alive & ~keep)

    h_next = h[..., 1:, :] * keep[..., None, :]
    p_next = np.where(B[..., None, :], p[..., 1:, :] / safe[..., None, :], 1.0 / (N - 1))
    A_next = _partition(h_next, p_next, depths[1:], q, anc, tree, trace, stage + 1,
                        None if alive is None else alive & keep)
    A = np.empty(h.shape, dtype=bool)
    A[..., 0, :] = A1 | ~B
    A[..., 1:, :] = A_next & keep[..., None, :]
    return A


def inductive_partition(stages: StagePayoffs, trace: bool = False) -> Partition:
    """Adapted events ``A_1..A_N`` whose pure payoff dominates the weighted one atomwise."""
    tree = stages.tree
    q = tree.path_prob[tree.leaves]
    anc = tree.ancestor[:, tree.leaves]
    log = [] if trace else None
    A = _partition(stages.h, stages.p, stages.depths, q, anc, tree, log, 1)
    return Partition(tree, stages.depths, A, log or [])


def conditional_values(stages: StagePayoffs, partition: Partition):
    """Per stage-1 atom: ``(E[sum h_i p_i | G_1], E[sum h_i 1_{A_i} | G_1])``."""
    tree = stages.tree
    q = tree.path_prob[tree.leaves]
    first = tree.at_depth(stages.depths[0])
    groups = tree.ancestor[stages.depths[0], tree.leaves] - first[0]
    randomized = _atom_mean((stages.h * stages.p).sum(axis=0), q, groups, len(first))
    pure = _atom_mean((stages.h * partition.A).sum(axis=0), q, groups, len(first))
    return randomized, pure


def stages_from_plan(h, plan: RandomizedPlan) -> StagePayoffs:
    """One stage per depth: payoff ``h`` and the plan's stopping increment at that depth."""
    tree = plan.tree
    h = check_adapted(tree, h)
    depths = tuple(range(tree.horizon + 1))
    return StagePayoffs.from_nodes(tree, depths, [h] * len(depths), [plan.increments] * len(depths))


def plan_to_rule(h, plan: RandomizedPlan, trace: list | None = None) -> StoppingRule:
    """A pure stopping rule worth at least ``plan_value(h, plan)``."""
    stages = stages_from_plan(h, plan)
    part = inductive_partition(stages, trace=trace is not None)
    if trace is not None:
        trace.extend(part.trace)
    tree = plan.tree
    anc = tree.ancestor[:, tree.leaves]
    stop_nodes = np.concatenate([anc[d][part.A[i]] for i, d in enumerate(stages.depths)])
    return StoppingRule.at_nodes(tree, np.unique(stop_nodes))


def plans_to_rules(tree: FilteredTree, h, P: np.ndarray) -> np.ndarray:
    """Batched ``plan_to_rule``: stop-flag matrix, one row per plan row of ``P``."""
    h = check_adapted(tree, h)
    P = np.atleast_2d(np.asarray(P, dtype=float))
    inc = P * _survival(tree, P)
    anc = tree.ancestor[:, tree.leaves]
    depths = tuple(range(tree.horizon + 1))
    H = np.broadcast_to(h[anc], (len(P),) + anc.shape)
    W = inc[:, anc]
    A = _partition(H, W, depths, tree.path_prob[tree.leaves], anc, tree, None, 1)
    stop = np.zeros((len(P), tree.size), dtype=bool)
    for d in depths:
        rows, cols = np.nonzero(A[:, d, :])
        stop[rows, anc[d, cols]] = True
    return stop


def atomwise_excess(tree: FilteredTree, h, P: np.ndarray) -> np.ndarray:
    """Largest ``E[sum h_i p_i | G_1] - E[sum h_i 1_{A_i} | G_1]`` over stage-1 atoms, per plan.

    Stages start at depth 1 (depth 0 for a one-level tree) so the stage-1
    sigma-algebra is nontrivial; weights are the plan increments with no
    stopping allowed before the first stage.
    """
    h = check_adapted(tree, h)
    first = 1 if tree.horizon >= 1 else 0
    P = np.array(np.atleast_2d(P), dtype=float)
    P[:, tree.depth < first] = 0.0
    inc = P * _survival(tree, P)
    anc = tree.ancestor[:, tree.leaves]
    depths = tuple(range(first, tree.horizon + 1))
    H = np.broadcast_to(h[anc[first:]], (len(P), len(depths), anc.shape[1]))
    W = inc[:, anc[first:]]
    q = tree.path_prob[tree.leaves]
    A = _partition(H, W, depths, q, anc, tree, None, 1)
    nodes = tree.at_depth(first)
    groups = anc[first] - nodes[0]
    G = np.zeros((len(q), len(nodes)))
    G[np.arange(len(q)), groups] = q
    mass = G.sum(axis=0)
    randomized = ((H * W).sum(axis=1) @ G) / mass
    pure = ((H * A).sum(axis=1) @ G) / mass
    return (randomized - pure).max(axis=1)


def derandomization_gain(h, plan: RandomizedPlan) -> float:
    """``E h_tau - plan value`` for the extracted rule; never below ``-1e-12`` in exact arithmetic."""
    return evaluate_stopped(h, plan_to_rule(h, plan)) - plan_value(h, plan)


# discretizing a path along a stopping-time grid

@dataclass(frozen=True)
class DiscretizedPath:
    path: StepPath
    discrepancy: float


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _density(seg, t):
    a, b, m, rate = seg
    if rate > 0:
        den = 1.0 if math.isinf(b) else -math.expm1(-rate * (b - a))
        return m * rate * np.exp(-rate * (t - a)) / den
    return np.full_like(t, m / (b - a))


def piecewise_discretize(h, F: CdfPath, n: int) -> DiscretizedPath:
    """Step approximation of ``h`` taking its value at the right end of each cell.

    Cells are the ``2**n`` dyadic cells of ``[0, H]`` refined by every jump
    time of ``F``; cells are left-open, right-closed and the origin keeps
    ``h(0)``. ``H`` is the last support point of ``F`` (for an unbounded
    exponential tail, the point beyond which less than ``e**-40`` mass remains).
    """
    if n < 1:
        raise ValueError("refinement level must be at least 1")
    H = F.horizon
    for a, b, m, rate in F.segments:
        if math.isinf(b) and m > 0:
            H = max(H, a + 40.0 / rate)
    if H <= 0:
        H = 1.0
    knots = np.unique(np.concatenate((np.linspace(0.0, H, 2**n + 1), F.jump_times)))
    h0 = np.asarray(h(0.0), dtype=float)
    right = np.asarray(h(knots[1:]), dtype=float)
    if not (np.all(np.isfinite(right)) and np.isfinite(h0)):
        raise ValueError("payoff path produced non-finite samples")
    path = StepPath(np.concatenate(([-1.0], knots)), np.concatenate(([h0], right)), side="right")

    gap = 0.0
    if len(F.jump_times):
        gap += float(np.dot(F.jump_masses, np.abs(h(F.jump_times) - path(F.jump_times))))
    lo_k, hi_k, vals = knots[:-1], knots[1:], right
    for seg in F.segments:
        a, b = seg[0], seg[1]
        cl = np.maximum(lo_k, a)
        cr = np.minimum(hi_k, b)
        use = cl < cr
        cl, cr, v = cl[use], cr[use], vals[use]
        half = 0.5 * (cr - cl)
        x = half[:, None] * _GL_NODES[None, :] + (0.5 * (cr + cl))[:, None]
        f = np.abs(np.asarray(h(x), dtype=float) - v[:, None]) * _density(seg, x)
        gap += float(np.sum(half * (f @ _GL_WEIGHTS)))
        if b > H:
            gap += integrate.quad(lambda t: abs(h(t) - vals[-1]) * _density(seg, np.array(t)),
                                  H, b, limit=200)[0]
    return DiscretizedPath(path, gap)
