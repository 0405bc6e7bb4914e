"""Finite filtered probability spaces realized as rooted trees.

Nodes at depth ``t`` are the atoms of the sigma-algebra at time ``t``. An
adapted process is a plain ``numpy`` array with one entry per node, indexed
by the tree's internal (breadth-first) node order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

PROB_TOL = 1e-12
DEFAULT_RULE_CAP = 10**6


class TreeError(ValueError):
    pass


class RuleCapExceeded(RuntimeError):
    def __init__(self, count: int, cap: int):
        super().__init__(f"tree admits {count} stopping rules, above the cap of {cap}")
        self.count = count
        self.cap = cap


@dataclass(frozen=True, eq=False)
class FilteredTree:
    """A time-indexed rooted tree with branch probabilities.

    Nodes are stored breadth-first, so every parent precedes its children and
    nodes of equal depth are contiguous. ``ids`` keeps the caller's labels.
    """

    parent: np.ndarray
    prob: np.ndarray
    ids: tuple = ()
    depth: np.ndarray = field(init=False, repr=False)
    path_prob: np.ndarray = field(init=False, repr=False)
    children: tuple = field(init=False, repr=False)
    ancestor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        parent = np.asarray(self.parent, dtype=np.int64)
        prob = np.asarray(self.prob, dtype=float)
        n = len(parent)
        if n == 0 or parent[0] != -1 or np.any(parent[1:] < 0):
            raise TreeError("node 0 must be the unique root")
        if np.any(parent[1:] >= np.arange(1, n)):
            raise TreeError("nodes must be ordered parents-first")
        if prob.shape != (n,):
            raise TreeError("one branch probability per node is required")
        if np.any(~np.isfinite(prob)) or np.any(prob[1:] <= 0.0):
            raise TreeError("branch probabilities must be strictly positive")

        depth = np.zeros(n, dtype=np.int64)
        for v in range(1, n):
            depth[v] = depth[parent[v]] + 1
        if np.any(np.diff(depth) < 0):
            raise TreeError("nodes must be sorted by depth")

        children = [[] for _ in range(n)]
        for v in range(1, n):
            children[parent[v]].append(v)
        children = tuple(np.array(c, dtype=np.int64) for c in children)

        T = int(depth.max())
        for v, ch in enumerate(children):
            if len(ch) == 0:
                if depth[v] != T:
                    raise TreeError(f"leaf {self._label(v)} at depth {depth[v]}, expected {T}")
            else:
                total = prob[ch].sum()
                if abs(total - 1.0) > PROB_TOL:
                    raise TreeError(
                        f"children of node {self._label(v)} have total probability {total!r}"
                    )

        path_prob = np.ones(n)
        for v in range(1, n):
            path_prob[v] = path_prob[parent[v]] * prob[v]
        prob = prob.copy()
        prob[0] = 1.0

        ancestor = np.full((T + 1, n), -1, dtype=np.int64)
        ancestor[0, :] = 0
        for v in range(1, n):
            ancestor[:, v] = ancestor[:, parent[v]]
            ancestor[depth[v], v] = v

        for name, value in [
            ("parent", parent),
            ("prob", prob),
            ("depth", depth),
            ("path_prob", path_prob),
            ("children", children),
            ("ancestor", ancestor),
        ]:
            if isinstance(value, np.ndarray):
                value.setflags(write=False)
            object.__setattr__(self, name, value)
        if not self.ids:
            object.__setattr__(self, "ids", tuple(range(n)))

    def _label(self, v):
        return self.ids[v] if self.ids else v

    @property
    def size(self) -> int:
        return len(self.parent)

    @property
    def horizon(self) -> int:
        return int(self.depth[-1])

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.depth == self.horizon)

    def at_depth(self, t: int) -> np.ndarray:
        return np.flatnonzero(self.depth == t)

    def is_leaf(self, v: int) -> bool:
        return len(self.children[v]) == 0

    def index_of(self, label) -> int:
        return self.ids.index(label)

    # construction helpers

    @classmethod
    def from_records(cls, records: Sequence[tuple]) -> "FilteredTree":
        """Build from ``(id, parent_id, branch_probability)`` triples.

        The root is the single record whose parent is ``None``; its
        probability entry is ignored. Record order is free.
        """
        by_id = {}
        kids: dict = {}
        root = None
        for rec in records:
            nid, pid, p = rec[0], rec[1], rec[2]
            if nid in by_id:
                raise TreeError(f"duplicate node id {nid!r}")
            by_id[nid] = (pid, float(p))
            if pid is None:
                if root is not None:
                    raise TreeError("more than one root")
                root = nid
            else:
                kids.setdefault(pid, []).append(nid)
        if root is None:
            raise TreeError("no root node (parent must be null for exactly one node)")
        for pid in kids:
            if pid not in by_id:
                raise TreeError(f"unknown parent id {pid!r}")

        order = [root]
        pos = {root: 0}
        i = 0
        while i < len(order):
            for c in kids.get(order[i], []):
                pos[c] = len(order)
                order.append(c)
            i += 1
        if len(order) != len(by_id):
            raise TreeError("records contain nodes unreachable from the root")
        parent = [-1] + [pos[by_id[v][0]] for v in order[1:]]
        prob = [1.0] + [by_id[v][1] for v in order[1:]]
        return cls(np.array(parent), np.array(prob), ids=tuple(order))

    @classmethod
    def from_branching(cls, branch_probs: Callable[[int, int], Sequence[float]], depth: int):
        """Grow a tree level by level; ``branch_probs(node, t)`` lists child probabilities."""
        parent, prob, dep = [-1], [1.0], [0]
        frontier = [0]
        for t in range(depth):
            nxt = []
            for v in frontier:
                for p in branch_probs(v, t):
                    parent.append(v)
                    prob.append(p)
                    dep.append(t + 1)
                    nxt.append(len(parent) - 1)
            frontier = nxt
        return cls(np.array(parent), np.array(prob))

    @classmethod
    def chain(cls, depth: int) -> "FilteredTree":
        return cls.from_branching(lambda v, t: [1.0], depth)


def random_walk_tree(depth: int, step: float = 1.0, up: float = 0.5):
    """Non-recombining +-step walk started at 0; returns ``(tree, position)``."""
    tree = FilteredTree.from_branching(lambda v, t: [up, 1.0 - up], depth)
    x = np.zeros(tree.size)
    for v in range(1, tree.size):
        first_child = tree.children[tree.parent[v]][0]
        x[v] = x[tree.parent[v]] + (step if v == first_child else -step)
    return tree, x


def random_tree(rng: np.random.Generator, max_depth: int = 4, max_branch: int = 3,
                min_depth: int = 1) -> FilteredTree:
    """Random depth and per-node branching, Dirichlet(1) branch probabilities."""
    depth = int(rng.integers(min_depth, max_depth + 1))

    def branches(v, t):
        k = int(rng.integers(1, max_branch + 1))
        p = rng.dirichlet(np.ones(k))
        # a Dirichlet draw can underflow to 0 for a component; zero branches are invalid
        p = np.maximum(p, 1e-6)
        p /= p.sum()
        return p

    return FilteredTree.from_branching(branches, depth)


def check_adapted(tree: FilteredTree, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape != (tree.size,):
        raise TreeError(f"adapted process needs {tree.size} node values, got shape {X.shape}")
    return X


# conditional expectations and the Snell envelope

def _expect_below(tree: FilteredTree, X: np.ndarray, u: int, s: int) -> np.ndarray:
    """E[X_s | atom] for every atom at depth ``u`` (u <= s), as an array over depth-u nodes."""
    nodes_s = tree.at_depth(s)
    owner = tree.ancestor[u, nodes_s]
    nodes_u = tree.at_depth(u)
    w = tree.path_prob[nodes_s]
    num = np.bincount(owner - nodes_u[0], weights=w * X[nodes_s], minlength=len(nodes_u))
    den = np.bincount(owner - nodes_u[0], weights=w, minlength=len(nodes_u))
    return num / den


def conditional_expectation(tree: FilteredTree, X, t: int, at: int | None = None) -> np.ndarray:
    """The martingale ``E[X_at | F_{min(t, u)}]`` as a process over all nodes.

    At nodes of depth >= t the value is the conditional mean of ``X`` at depth
    ``at`` given the depth-t atom containing the node; shallower nodes carry
    their own conditional mean. ``at`` defaults to the terminal depth.
    """
    X = check_adapted(tree, X)
    T = tree.horizon
    s = T if at is None else at
    if not 0 <= t <= T:
        raise TreeError(f"time index {t} outside [0, {T}]")
    if not t <= s <= T:
        raise TreeError(f"measurement depth {s} must lie in [{t}, {T}]")
    out = np.empty(tree.size)
    for u in range(0, t + 1):
        nodes_u = tree.at_depth(u)
        out[nodes_u] = _expect_below(tree, X, u, s)
    for u in range(t + 1, T + 1):
        nodes_u = tree.at_depth(u)
        out[nodes_u] = out[tree.ancestor[t, nodes_u]]
    return out


def continuation_values(tree: FilteredTree, S: np.ndarray) -> np.ndarray:
    """One-step conditional mean of ``S`` at each internal node (NaN at leaves)."""
    cont = np.full(tree.size, np.nan)
    sums = np.bincount(tree.parent[1:], weights=tree.prob[1:] * S[1:], minlength=tree.size)
    internal = tree.depth < tree.horizon
    cont[internal] = sums[internal]
    return cont


def snell_envelope(tree: FilteredTree, h) -> np.ndarray:
    h = check_adapted(tree, h)
    S = h.copy()
    for t in range(tree.horizon - 1, -1, -1):
        nodes = tree.at_depth(t)
        kids = tree.at_depth(t + 1)
        cont = np.bincount(tree.parent[kids] - nodes[0], weights=tree.prob[kids] * S[kids],
                           minlength=len(nodes))
        S[nodes] = np.maximum(h[nodes], cont)
    return S


# stopping rules

@dataclass(frozen=True, eq=False)
class StoppingRule:
    """Stop flags per node; each root-to-leaf path carries exactly one flag."""

    tree: FilteredTree
    stop: np.ndarray

    def __post_init__(self):
        stop = np.asarray(self.stop, dtype=bool)
        if stop.shape != (self.tree.size,):
            raise TreeError("stop flags must cover every node")
        hits = stop[self.tree.ancestor[:, self.tree.leaves]].sum(axis=0)
        if np.any(hits != 1):
            bad = self.tree.leaves[np.flatnonzero(hits != 1)[0]]
            raise TreeError(
                f"path to leaf {self.tree.ids[bad]!r} has {hits[hits != 1][0]} stop nodes"
            )
        stop.setflags(write=False)
        object.__setattr__(self, "stop", stop)

    @property
    def stop_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.stop)

    @classmethod
    def at_nodes(cls, tree: FilteredTree, nodes) -> "StoppingRule":
        stop = np.zeros(tree.size, dtype=bool)
        stop[np.asarray(nodes, dtype=np.int64)] = True
        return cls(tree, stop)


def count_stopping_rules(tree: FilteredTree) -> int:
    """N(leaf) = 1, N(v) = 1 + prod N(child); exact integer arithmetic."""
    N = [1] * tree.size
    for v in range(tree.size - 1, -1, -1):
        kids = tree.children[v]
        if len(kids):
            prod = 1
            for c in kids:
                prod *= N[c]
            N[v] = 1 + prod
    return N[0]


def _rules_below(tree: FilteredTree, v: int) -> Iterator[list]:
    yield [v]
    kids = tree.children[v]
    if len(kids) == 0:
        return

    def combos(i):
        if i == len(kids):
            yield []
            return
        for head in _rules_below(tree, kids[i]):
            for tail in combos(i + 1):
                yield head + tail

    yield from combos(0)


def enumerate_stopping_rules(tree: FilteredTree, cap: int = DEFAULT_RULE_CAP) -> Iterator[StoppingRule]:
    count = count_stopping_rules(tree)
    if count > cap:
        raise RuleCapExceeded(count, cap)

    def gen():
        for nodes in _rules_below(tree, 0):
            yield StoppingRule.at_nodes(tree, nodes)

    return gen()


def evaluate_stopped(h, rule: StoppingRule) -> float:
    h = check_adapted(rule.tree, h)
    idx = rule.stop_nodes
    return float(np.dot(rule.tree.path_prob[idx], h[idx]))


def optimal_rule(tree: FilteredTree, h, rtol: float = 1e-9) -> StoppingRule:
    """Stop at the first node where the payoff meets the Snell envelope (ties stop)."""
    h = check_adapted(tree, h)
    S = snell_envelope(tree, h)
    meets = h >= S - rtol * np.maximum(1.0, np.abs(S))
    meets[tree.leaves] = True
    stop = np.zeros(tree.size, dtype=bool)
    blocked = np.zeros(tree.size, dtype=bool)
    for v in range(tree.size):
        if v and (blocked[tree.parent[v]] or stop[tree.parent[v]]):
            blocked[v] = True
        elif meets[v]:
            stop[v] = True
    return StoppingRule(tree, stop)


def tree_from_records(records: Sequence[Sequence]):
    """Parse ``(id, parent_id, branch_probability, h)`` rows into ``(tree, h)``."""
    if not records:
        raise TreeError("tree definition has no nodes")
    for i, rec in enumerate(records):
        if len(rec) != 4:
            raise TreeError(f"node record {i} must have 4 fields (id, parent, prob, h)")
    tree = FilteredTree.from_records([(r[0], r[1], r[2]) for r in records])
    hv = {r[0]: float(r[3]) for r in records}
    h = np.array([hv[label] for label in tree.ids])
    if not np.all(np.isfinite(h)):
        raise TreeError("payoff values must be finite")
    return tree, h


# recombining lattices: the only tractable tree at thousands of steps

def lattice_snell(payoff: Callable[[float, np.ndarray], np.ndarray], x0: float, horizon: float,
                  steps: int, *, kind: str = "arithmetic", vol: float = 1.0,
                  rate: float = 0.0) -> float:
    """Backward induction on a recombining binomial lattice.

    ``kind="arithmetic"`` walks ``x0 +- vol*sqrt(dt)`` with probability 1/2 and
    no discounting; ``kind="geometric"`` is the Cox-Ross-Rubinstein lattice with
    continuously compounded ``rate`` used both for drift and discounting.
    """
    dt = horizon / steps
    if kind == "arithmetic":
        dx = vol * np.sqrt(dt)

        def level(k):
            return x0 + dx * (2.0 * np.arange(k + 1) - k)

        p, disc = 0.5, 1.0
    elif kind == "geometric":
        u = np.exp(vol * np.sqrt(dt))
        d = 1.0 / u
        p = (np.exp(rate * dt) - d) / (u - d)
        if not 0.0 < p < 1.0:
            raise ValueError("lattice probability outside (0, 1); refine the grid")
        disc = np.exp(-rate * dt)

        def level(k):
            j = np.arange(k + 1)
            return x0 * u ** (2.0 * j - k)
    else:
        raise ValueError(f"unknown lattice kind {kind!r}")

    V = np.asarray(payoff(horizon, level(steps)), dtype=float)
    for k in range(steps - 1, -1, -1):
        cont = disc * (p * V[1:] + (1.0 - p) * V[:-1])
        V = np.maximum(np.asarray(payoff(k * dt, level(k)), dtype=float), cont)
    return float(V[0])
