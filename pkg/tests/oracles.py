"""Reference computations that share no code with the package.

Trees are given as plain ``(parent, prob)`` lists; stopping rules are found
by trying every subset of nodes, which is only feasible for tiny trees.
"""

import itertools
import math

import numpy as np
from scipy import integrate


def leaves_and_paths(parent):
    n = len(parent)
    has_child = [False] * n
    for v in range(1, n):
        has_child[parent[v]] = True
    paths = []
    for leaf in range(n):
        if has_child[leaf]:
            continue
        path = [leaf]
        while parent[path[-1]] >= 0:
            path.append(parent[path[-1]])
        paths.append(path[::-1])
    return paths


def path_weight(parent, prob, v):
    w = 1.0
    while v > 0:
        w *= prob[v]
        v = parent[v]
    return w


def brute_force_rules(parent):
    """Every node subset that meets each root-to-leaf path exactly once."""
    paths = leaves_and_paths(parent)
    n = len(parent)
    out = []
    for flags in itertools.product((0, 1), repeat=n):
        if all(sum(flags[v] for v in p) == 1 for p in paths):
            out.append([v for v in range(n) if flags[v]])
    return out


def brute_force_value(parent, prob, h):
    best = -math.inf
    for rule in brute_force_rules(parent):
        best = max(best, sum(path_weight(parent, prob, v) * h[v] for v in rule))
    return best


def brute_force_plan_value(parent, prob, h, p):
    """Sum over paths of (leaf weight) x sum_t h * p * prod (1 - p(ancestors))."""
    total = 0.0
    for path in leaves_and_paths(parent):
        w = path_weight(parent, prob, path[-1])
        surv = 1.0
        for v in path:
            total += w * surv * p[v] * h[v]
            surv *= 1.0 - p[v]
    return total


def exp_stop_value(h, tau, n):
    """int_tau^inf h(t) n exp(-n (t - tau)) dt by plain quadrature."""
    return integrate.quad(lambda t: h(t) * n * math.exp(-n * (t - tau)), tau, math.inf,
                          epsabs=1e-14, epsrel=1e-13, limit=400)[0]


def binomial_snell_quadratic(T, steps):
    """Backward induction for g = x^2 on the +-sqrt(dt) lattice, written independently."""
    dx = math.sqrt(T / steps)
    V = [((2 * j - steps) * dx) ** 2 for j in range(steps + 1)]
    for k in range(steps - 1, -1, -1):
        V = [max(((2 * j - k) * dx) ** 2, 0.5 * (V[j] + V[j + 1])) for j in range(k + 1)]
    return V[0]


def dyadic_gap_identity(n):
    """int_0^1 |t - ceil(t 2^n) / 2^n| dt, summed cell by cell."""
    m = 2**n
    return sum(integrate.quad(lambda t, k=k: (k + 1) / m - t, k / m, (k + 1) / m)[0] for k in range(m))
