"""Experiment dispatch and CSV output.

Each experiment produces ``ResultRow``s. A row passes when
``gap <= se_mult * se + tol``; ``se_mult`` and the per-check ``tol`` are
written into the comment block above the CSV header, so the pass flag of
every row can be recomputed from the file alone.
"""

from __future__ import annotations

import csv
import io
import json
import math
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from .cdf import (CdfPath, FunctionPath, IntensityPath, StepPath, exp_decay_path,
                  exponential_approximation, integrate_time_changed, intensity_to_cdf,
                  lipschitz_test_path, stieltjes_integral)
from .config import ExperimentConfig, parse_nodes
from .derandomize import atomwise_excess, piecewise_discretize, plan_to_rule, plans_to_rules
from .diffusion import value_search
from .models import default_controls, default_families, make_model
from .plans import RandomizedPlan, plan_value, plan_values, random_plans
from .tree import (count_stopping_rules, enumerate_stopping_rules, evaluate_stopped,
                   random_tree, random_walk_tree, snell_envelope, tree_from_records)

HEADER = ["kind", "param_n", "param_delta", "grid", "paths", "value", "se", "oracle", "gap",
          "pass", "seed", "version"]


@dataclass
class ResultRow:
    kind: str
    value: float
    oracle: float
    gap: float
    tol: float
    seed: int
    se: float = 0.0
    se_mult: float = 0.0
    param_n: float | None = None
    param_delta: float | None = None
    grid: int | None = None
    paths: int | None = None
    version: str = __version__

    @property
    def passed(self) -> bool:
        return bool(self.gap <= self.se_mult * self.se + self.tol)

    def cells(self) -> list[str]:
        def fmt(x):
            if x is None:
                return ""
            if isinstance(x, (bool, np.bool_)):
                return "true" if x else "false"
            if isinstance(x, (int, np.integer)):
                return str(int(x))
            return repr(float(x))

        return [self.kind, fmt(self.param_n), fmt(self.param_delta), fmt(self.grid),
                fmt(self.paths), fmt(self.value), fmt(self.se), fmt(self.oracle), fmt(self.gap),
                fmt(self.passed), str(self.seed), self.version]


# tree substrates

def tree_corpus(cfg: ExperimentConfig):
    """``(tree, h)`` pairs: the inline or built-in tree if given, else the seeded random corpus."""
    spec = cfg.section("tree")
    if "nodes" in spec:
        return [tree_from_records(parse_nodes(spec["nodes"]))]
    if spec.get("builtin") == "random-walk-square":
        tree, x = random_walk_tree(spec.get("depth", 2))
        return [(tree, x**2)]
    c = cfg.section("corpus")
    rng = np.random.default_rng([cfg.seed, 0])
    out = []
    while len(out) < c["trees"]:
        tree = random_tree(rng, max_depth=c["max_depth"], max_branch=c["max_branch"])
        if count_stopping_rules(tree) > c["rule_cap"]:
            continue
        out.append((tree, rng.uniform(c["payoff_low"], c["payoff_high"], tree.size)))
    return out


def _plans_for(cfg, i, tree):
    rng = np.random.default_rng([cfg.seed, 1, i])
    return random_plans(tree, rng, cfg.section("numerics")["plans"])


def run_tree_equality(cfg: ExperimentConfig, trace=None, workers=1):
    tol = cfg.section("tolerance")["abs"]
    cap = cfg.section("corpus")["rule_cap"]
    rows = []
    for i, (tree, h) in enumerate(tree_corpus(cfg)):
        S = snell_envelope(tree, h)[0]
        P = _plans_for(cfg, i, tree)
        best_plan = float(plan_values(tree, h, P).max())
        rows.append(ResultRow("tree-equality:dominance", best_plan, S, max(0.0, best_plan - S), tol,
                              cfg.seed, param_n=i, paths=len(P)))
        best_rule = max(evaluate_stopped(h, r) for r in enumerate_stopping_rules(tree, cap=max(cap, 1)))
        rows.append(ResultRow("tree-equality:attainment", best_rule, S, abs(best_rule - S), tol,
                              cfg.seed, param_n=i))
        given = cfg.section("tree").get("plan")
        if given is not None and i == 0:
            v = plan_value(h, RandomizedPlan.from_dict(tree, given))
            rows.append(ResultRow("tree-equality:given-plan", v, S, max(0.0, v - S), tol,
                                  cfg.seed, param_n=i))
    return rows


def run_derandomize(cfg: ExperimentConfig, trace=None, workers=1):
    tol = cfg.section("tolerance")["abs"]
    rows = []
    for i, (tree, h) in enumerate(tree_corpus(cfg)):
        S = snell_envelope(tree, h)[0]
        P = _plans_for(cfg, i, tree)
        stops = plans_to_rules(tree, h, P)
        rule_vals = stops @ (tree.path_prob * h)
        plan_vals = plan_values(tree, h, P)
        worst = float((rule_vals - plan_vals).min())
        rows.append(ResultRow("derandomize:rule-vs-plan", worst, 0.0, max(0.0, -worst), tol,
                              cfg.seed, param_n=i, paths=len(P)))
        top = float(rule_vals.max())
        rows.append(ResultRow("derandomize:rule-vs-snell", top, S, max(0.0, top - S), tol,
                              cfg.seed, param_n=i, paths=len(P)))
        excess = float(atomwise_excess(tree, h, P).max())
        rows.append(ResultRow("derandomize:atomwise", excess, 0.0, max(0.0, excess), tol,
                              cfg.seed, param_n=i, paths=len(P)))
        if trace is not None and i == 0:
            log = []
            plan_to_rule(h, RandomizedPlan(tree, P[0]), trace=log)
            for entry in log:
                trace.write(json.dumps(entry, sort_keys=True) + "\n")
    return rows


def _exp_path(spec):
    if spec["kind"] == "exp-decay":
        return exp_decay_path()
    return lipschitz_test_path(spec["slope"], spec["horizon"], spec["offset"])


def run_exp_approx(cfg: ExperimentConfig, trace=None, workers=1):
    spec, num, tol = cfg.section("path"), cfg.section("numerics"), cfg.section("tolerance")
    h = _exp_path(spec)
    tau = float(spec["tau"])
    h_tau = float(h(tau))
    rows = []
    for n in num["n"]:
        for delta in num["delta"]:
            res = exponential_approximation(tau, n, h, delta)
            if spec["kind"] == "exp-decay":
                # int_tau^inf e^{-t} n e^{-n(t - tau)} dt
                oracle = math.exp(-tau) * n / (n + 1.0)
                gap, t = abs(res.value - oracle), tol["abs"]
            else:
                oracle = h_tau
                bound = 2 * h.bound * math.exp(-n * delta) + h.lipschitz * delta
                gap, t = abs(res.value - oracle) - bound, 0.0
            rows.append(ResultRow("exp-approx", res.value, oracle, gap, t, cfg.seed,
                                  param_n=n, param_delta=delta))
            split = res.I + res.J + res.K
            rows.append(ResultRow("exp-approx:split", split, res.value, abs(split - res.value),
                                  tol["abs"], cfg.seed, param_n=n, param_delta=delta))
            bound_K = (h.bound if h.bound is not None else float("inf")) * math.exp(-n * delta)
            rows.append(ResultRow("exp-approx:tail-bound", abs(res.K), bound_K,
                                  abs(res.K) - bound_K, tol["abs"], cfg.seed,
                                  param_n=n, param_delta=delta))
    n_max, d_min = max(num["n"]), min(num["delta"])
    res = exponential_approximation(tau, n_max, h, d_min)
    rows.append(ResultRow("exp-approx:limit", res.value, h_tau, abs(res.value - h_tau),
                          tol["limit"], cfg.seed, param_n=n_max, param_delta=d_min))
    return rows


def random_step_case(rng, max_jumps=8):
    """Random step payoff and random point-mass stopping law sharing some breakpoints."""
    k = int(rng.integers(1, max_jumps + 1))
    knots = np.unique(np.round(rng.uniform(0, 2, k + 1), 3))
    if len(knots) < 2:
        knots = np.array([0.0, 2.0])
    h = StepPath(knots, rng.uniform(-1, 1, len(knots) - 1))
    m = int(rng.integers(1, max_jumps + 1))
    times = np.concatenate((rng.choice(knots, size=min(m, len(knots)), replace=False),
                            rng.uniform(0, 2.5, m)))
    masses = rng.dirichlet(np.ones(len(times)))
    masses[-1] = 1.0 - masses[:-1].sum()
    return h, CdfPath(times, np.maximum(masses, 0.0))


def random_exponential_case(rng, index):
    if index % 2 == 0:
        F = CdfPath.exponential(float(rng.uniform(0, 1)), float(rng.uniform(0.5, 5)))
    else:
        grid = np.concatenate(([0.0], np.sort(rng.uniform(0, 2, 4)), [2.0]))
        grid = np.unique(grid)
        F = intensity_to_cdf(IntensityPath(grid, rng.uniform(0, 3, len(grid) - 1), 3.0))
    if index % 4 < 2:
        a, w = rng.uniform(-1, 1, 2)
        h = FunctionPath(lambda t, a=a, w=w: a + np.sin(3 * w * t), horizon=3.0)
    else:
        knots = np.unique(np.round(rng.uniform(0, 3, 5), 3))
        knots = knots if len(knots) >= 2 else np.array([0.0, 3.0])
        h = StepPath(knots, rng.uniform(-1, 1, len(knots) - 1))
    return h, F


def run_time_change(cfg: ExperimentConfig, trace=None, workers=1):
    num, tol = cfg.section("numerics"), cfg.section("tolerance")
    rng = np.random.default_rng([cfg.seed, 2])
    rows = []
    for i in range(num["cases"]):
        h, F = random_step_case(rng, num["max_jumps"])
        direct, changed = stieltjes_integral(h, F), integrate_time_changed(h, F)
        rows.append(ResultRow("time-change:step", direct, changed, abs(direct - changed),
                              tol["step"], cfg.seed, param_n=i))
    for i in range(num["cases"]):
        h, F = random_exponential_case(rng, i)
        direct, changed = stieltjes_integral(h, F), integrate_time_changed(h, F)
        rows.append(ResultRow("time-change:exponential", direct, changed, abs(direct - changed),
                              tol["quadrature"], cfg.seed, param_n=i))
    return rows


def random_smooth_path(rng, terms=4, slope=3.0):
    """Random trigonometric path with Lipschitz constant at most ``slope``."""
    w = rng.uniform(0.5, 6.0, terms)
    a = rng.dirichlet(np.ones(terms)) * slope / w
    ph = rng.uniform(0, 2 * np.pi, terms)
    return FunctionPath(lambda t: np.sum(a * np.sin(np.multiply.outer(t, w) + ph), axis=-1),
                        horizon=1.0, lipschitz=slope)


def run_discretize(cfg: ExperimentConfig, trace=None, workers=1):
    num, tol = cfg.section("numerics"), cfg.section("tolerance")
    rows = []
    identity = FunctionPath(lambda t: t, horizon=1.0)
    F = CdfPath.uniform(0.0, 1.0)
    for n in num["levels"]:
        d = piecewise_discretize(identity, F, n).discrepancy
        rows.append(ResultRow("discretize:linear-uniform", d, 2.0 ** (-n - 1),
                              abs(d - 2.0 ** (-n - 1)), tol["exact"], cfg.seed, param_n=n))
    rng = np.random.default_rng([cfg.seed, 3])
    n_max = max(num["levels"])
    for i in range(num["cases"]):
        h = random_smooth_path(rng)
        G = F if i % 2 == 0 else intensity_to_cdf(IntensityPath([0.0, 0.5, 1.0], rng.uniform(0, 4, 2), 4.0))
        d = piecewise_discretize(h, G, n_max).discrepancy
        rows.append(ResultRow("discretize:random-path", d, 0.0, d, tol["random"], cfg.seed,
                              param_n=n_max))
    return rows


def _search(cfg: ExperimentConfig, workers):
    spec, num = cfg.section("model"), cfg.section("numerics")
    model = make_model(spec["name"], **spec.get("params", {}))
    x0 = model.params.get("x0", 0.0)
    s = float(num["start_time"])
    stops, intensities = default_families(model, num["caps"])
    rows = value_search(model, s, x0, num["grid"], num["paths"], cfg.seed,
                        default_controls(model), stops, intensities, workers=workers)
    oracle = model.oracle(steps=num["tree_steps"], s=s, x=x0)
    return rows, oracle


def run_diffusion_compare(cfg: ExperimentConfig, trace=None, workers=1):
    num, tol = cfg.section("numerics"), cfg.section("tolerance")
    rows, oracle = _search(cfg, workers)
    last = rows[-1]
    common = dict(seed=cfg.seed, se_mult=tol["se_mult"], grid=num["grid"], paths=num["paths"],
                  param_n=last.cap)
    return [
        ResultRow("diffusion-compare:stopped", last.stopped.mean, oracle,
                  abs(last.stopped.mean - oracle), tol["bias"], se=last.stopped.se, **common),
        ResultRow("diffusion-compare:randomized", last.randomized.mean, oracle,
                  abs(last.randomized.mean - oracle), tol["bias"], se=last.randomized.se, **common),
        ResultRow("diffusion-compare:stopped-vs-randomized", last.randomized.mean, last.stopped.mean,
                  last.gap, tol["bias"], se=last.combined_se, **common),
    ]


def run_convergence(cfg: ExperimentConfig, trace=None, workers=1):
    num, tol = cfg.section("numerics"), cfg.section("tolerance")
    rows, oracle = _search(cfg, workers)
    out = []
    prev = None
    for r in rows:
        v = r.randomized.mean
        ref = v if prev is None else prev
        out.append(ResultRow("convergence:monotone", v, ref, max(0.0, ref - v), 0.0, cfg.seed,
                             grid=num["grid"], paths=num["paths"], param_n=r.cap))
        out.append(ResultRow("convergence:gap", v, oracle, abs(v - oracle), float("inf"), cfg.seed,
                             se=r.randomized.se, grid=num["grid"], paths=num["paths"],
                             param_n=r.cap))
        prev = v
    last = rows[-1]
    out.append(ResultRow("convergence:final", last.randomized.mean, oracle,
                         abs(last.randomized.mean - oracle), tol["bias"], cfg.seed,
                         se=last.randomized.se, se_mult=tol["se_mult"], grid=num["grid"],
                         paths=num["paths"], param_n=last.cap))
    return out


RUNNERS = {
    "tree-equality": run_tree_equality,
    "derandomize": run_derandomize,
    "exp-approx": run_exp_approx,
    "time-change": run_time_change,
    "discretize": run_discretize,
    "diffusion-compare": run_diffusion_compare,
    "convergence": run_convergence,
}


def run(cfg: ExperimentConfig, trace=None, workers: int = 1) -> list[ResultRow]:
    return RUNNERS[cfg.kind](cfg, trace=trace, workers=workers)


def render_csv(cfg: ExperimentConfig, rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    buf.write(f"# randstop {__version__}\n")
    buf.write("# config " + json.dumps(cfg.as_dict(), sort_keys=True) + "\n")
    buf.write("# pass iff gap <= se_mult * se + tol\n")
    seen = {}
    for r in rows:
        seen.setdefault(r.kind, (r.tol, r.se_mult))
    for kind, (tol, mult) in seen.items():
        buf.write(f"# check {kind} tol={tol!r} se_mult={mult!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in rows:
        w.writerow(r.cells())
    return buf.getvalue()


def write_csv(cfg: ExperimentConfig, rows: list[ResultRow], path) -> None:
    text = render_csv(cfg, rows)
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as fh:
            fh.write(text)


def read_csv(path):
    """Rows of an emitted CSV as dicts, plus the per-check ``(tol, se_mult)`` table."""
    checks = {}
    lines = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("# check "):
                kind, tol, mult = line[len("# check "):].split()
                checks[kind] = (float(tol.split("=")[1]), float(mult.split("=")[1]))
            elif not line.startswith("#"):
                lines.append(line)
    return list(csv.DictReader(lines)), checks
