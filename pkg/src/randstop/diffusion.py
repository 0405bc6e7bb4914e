"""Monte Carlo for optimal stopping of controlled diffusions.

Paths follow the Euler-Maruyama scheme on an equidistant grid over
``[s, T]``. All time integrals use left-endpoint values, and the survival
factor of an intensity is an exact exponential per step, so the stopping
mass of every randomized policy totals one on each path.

Paths are processed in fixed-size blocks; the noise of a path depends only on
``(seed, path index)``, and per-path payoffs are concatenated in path order
before any reduction. Results therefore do not depend on the worker count.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .rng import path_normals

log = logging.getLogger(__name__)

BLOCK = 4096
DEFAULT_MOMENT_BOUND = 1e12


class SimulationError(RuntimeError):
    pass


class DivergenceError(SimulationError):
    pass


@dataclass
class DiffusionModel:
    """Coefficients of a controlled diffusion with stopping reward.

    Coefficient callables take ``(alpha, t, x)`` with ``x`` of shape
    ``(paths, dim)`` and return ``sigma`` as ``(paths, dim, noise_dim)``,
    ``drift`` as ``(paths, dim)``, and ``discount``/``running`` as ``(paths,)``.
    ``terminal(t, x)`` is the stopping reward ``g``. ``in_control_set(n, alpha)``
    is the membership test for the truncation set ``A_n``; ``K_n(n)`` and
    ``m_n(n)`` are the growth constants declared for it.
    """

    name: str
    dim: int
    noise_dim: int
    horizon: float
    sigma: Callable
    drift: Callable
    discount: Callable
    running: Callable
    terminal: Callable
    K: float
    m: float
    K_n: Callable[[int], float]
    m_n: Callable[[int], float]
    in_control_set: Callable[[int, np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)
    oracle: Callable | None = None


@dataclass(frozen=True)
class ControlPolicy:
    """Markov feedback control ``alpha(t, x)`` declared to take values in ``A_n``."""

    rule: Callable
    n: int
    name: str = "alpha"

    def __call__(self, model: DiffusionModel, t: float, x: np.ndarray) -> np.ndarray:
        alpha = np.asarray(self.rule(t, x), dtype=float)
        if alpha.ndim == 0:
            alpha = np.full(len(x), float(alpha))
        if not np.all(model.in_control_set(self.n, alpha)):
            raise SimulationError(f"control {self.name!r} left A_{self.n} at t={t}")
        return alpha


@dataclass(frozen=True)
class StopPolicy:
    """Stop at the first grid time with ``region(t, x)`` true, else at the horizon."""

    region: Callable
    name: str = "tau"


@dataclass(frozen=True)
class IntensityPolicy:
    """Feedback stopping intensity ``rate(t, x)`` with values in ``[0, cap]``."""

    rate: Callable
    cap: float
    name: str = "r"

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        r = np.asarray(self.rate(t, x), dtype=float)
        if r.ndim == 0:
            r = np.full(len(x), float(r))
        if np.any(r < 0) or np.any(r > self.cap) or not np.all(np.isfinite(r)):
            raise SimulationError(f"intensity {self.name!r} left [0, {self.cap}] at t={t}")
        return r


def bang_bang(region: Callable, cap: float, name: str = "") -> IntensityPolicy:
    """``r = cap`` inside ``region`` and 0 outside."""
    return IntensityPolicy(lambda t, x: cap * region(t, x), cap, name or f"{cap}*1[region]")


@dataclass
class PathBundle:
    """Simulated states on the grid ``times`` (length ``steps + 1``).

    ``running[:, k]`` is ``f`` at the left end of step ``k`` (undiscounted);
    ``phi`` is the accumulated discount exponent.
    """

    times: np.ndarray
    x: np.ndarray
    phi: np.ndarray
    running: np.ndarray
    dW: np.ndarray
    seed: int
    first_path: int
    start: float
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def dt(self) -> float:
        return float((self.times[-1] - self.times[0]) / self.steps)

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @property
    def paths(self) -> int:
        return self.x.shape[0]


def time_grid(s: float, horizon: float, steps: int) -> np.ndarray:
    grid = s + (horizon - s) * np.arange(steps + 1) / steps
    grid[-1] = horizon
    return grid


def simulate_paths(model: DiffusionModel, control: ControlPolicy, s: float, x0, steps: int,
                   paths: int, seed: int, first_path: int = 0) -> PathBundle:
    """Euler-Maruyama paths ``first_path .. first_path + paths - 1`` started at ``(s, x0)``."""
    if steps < 1 or paths < 1:
        raise ValueError("steps and paths must be positive")
    if not 0 <= s <= model.horizon:
        raise ValueError(f"start time {s} outside [0, {model.horizon}]")
    times = time_grid(s, model.horizon, steps)
    dt = (model.horizon - s) / steps
    d, dp = model.dim, model.noise_dim
    dW = path_normals(seed, first_path, paths, steps, dp) * math.sqrt(dt)

    x = np.empty((paths, steps + 1, d))
    x[:, 0, :] = np.broadcast_to(np.asarray(x0, dtype=float).reshape(-1), (paths, d))
    phi = np.zeros((paths, steps + 1))
    running = np.empty((paths, steps))
    for k in range(steps):
        t, xk = times[k], x[:, k, :]
        alpha = control(model, t, xk)
        sig = np.asarray(model.sigma(alpha, t, xk), dtype=float).reshape(paths, d, dp)
        drift = np.asarray(model.drift(alpha, t, xk), dtype=float).reshape(paths, d)
        c = np.broadcast_to(np.asarray(model.discount(alpha, t, xk), dtype=float), (paths,))
        running[:, k] = model.running(alpha, t, xk)
        x[:, k + 1, :] = xk + np.einsum("pij,pj->pi", sig, dW[:, k, :]) + drift * dt
        phi[:, k + 1] = phi[:, k] + c * dt
        bad = ~np.isfinite(x[:, k + 1, :]).all(axis=1) | ~np.isfinite(phi[:, k + 1])
        if bad.any():
            j = int(np.flatnonzero(bad)[0])
            raise SimulationError(
                f"non-finite state on path {first_path + j} at step {k + 1} (t={times[k + 1]:.6g}); "
                f"previous state {xk[j].tolist()}, control {np.atleast_1d(alpha[j]).tolist()}"
            )
    return PathBundle(times, x, phi, running, dW, seed, first_path, s)


# per-path payoffs on a bundle

def _terminal(model: DiffusionModel, t, x) -> np.ndarray:
    return np.asarray(model.terminal(t, x), dtype=float)


def stopped_payoffs(model: DiffusionModel, bundle: PathBundle, stop: StopPolicy) -> np.ndarray:
    """``int_0^tau f e^{-phi} dt + g(s + tau, x_tau) e^{-phi_tau}`` per path."""
    P, M = bundle.paths, bundle.steps
    k_stop = np.full(P, M)
    alive = np.ones(P, dtype=bool)
    for k in range(M):
        hit = alive & np.asarray(stop.region(bundle.times[k], bundle.x[:, k, :]), dtype=bool)
        k_stop[hit] = k
        alive &= ~hit
        if not alive.any():
            break
    f, g = _rewards(model, bundle)
    before = np.arange(M)[None, :] < k_stop[:, None]
    run = (f * before).sum(axis=1) * bundle.dt
    return run + g[np.arange(P), k_stop]


def _intensity(bundle: PathBundle, r: IntensityPolicy) -> np.ndarray:
    return np.stack([r(bundle.times[k], bundle.x[:, k, :]) for k in range(bundle.steps)], axis=1)


def _rewards(model: DiffusionModel, bundle: PathBundle):
    """Discounted running reward and stopping reward at each left endpoint, plus terminal."""
    if "rewards" in bundle.cache:
        return bundle.cache["rewards"]
    disc = np.exp(-bundle.phi)
    f = bundle.running * disc[:, :-1]
    g = np.stack([_terminal(model, bundle.times[k], bundle.x[:, k, :]) for k in range(bundle.steps + 1)],
                 axis=1) * disc
    bundle.cache["rewards"] = (f, g)
    return f, g


def randomized_payoffs(model: DiffusionModel, bundle: PathBundle, r: IntensityPolicy) -> np.ndarray:
    """Per-path value of stopping at intensity ``r``.

    Rewards and rate are frozen at each step's left end and the survival
    factor ``exp(-int r)`` is integrated exactly over the step; the mass left at
    the horizon collects the terminal reward.
    """
    dt = bundle.dt
    rate = _intensity(bundle, r)
    f, g = _rewards(model, bundle)
    surv = np.exp(-np.concatenate((np.zeros((bundle.paths, 1)), np.cumsum(rate * dt, axis=1)), axis=1))
    stop_mass = -np.expm1(-rate * dt)
    # int_0^dt exp(-r u) du, equal to dt when r == 0
    occupation = np.where(rate > 0, stop_mass / np.where(rate > 0, rate, 1.0), dt)
    inner = (f * occupation + g[:, :-1] * stop_mass) * surv[:, :-1]
    return inner.sum(axis=1) + g[:, -1] * surv[:, -1]


def randomized_payoffs_by_parts(model: DiffusionModel, bundle: PathBundle, r: IntensityPolicy) -> np.ndarray:
    """Same quantity written as ``int (int_0^t f + g_t) r_t exp(-int_0^t r) dt`` with the
    residual mass at the horizon; an independent route for the integration-by-parts identity."""
    dt = bundle.dt
    rate = _intensity(bundle, r)
    f, g = _rewards(model, bundle)
    cum_f = np.concatenate((np.zeros((bundle.paths, 1)), np.cumsum(f * dt, axis=1)), axis=1)
    log_surv = np.concatenate((np.zeros((bundle.paths, 1)), np.cumsum(-rate * dt, axis=1)), axis=1)
    surv = np.exp(log_surv)
    rd = rate * dt
    mass = -np.expm1(-rd)
    # int_0^dt u * r exp(-r u) du = (1 - e^{-r dt}(1 + r dt)) / r
    with np.errstate(invalid="ignore", divide="ignore"):
        first_moment = np.where(rate > 0, (mass - rd * np.exp(-rd)) / np.where(rate > 0, rate, 1.0), 0.0)
    inner = ((cum_f[:, :-1] + g[:, :-1]) * mass + f * first_moment) * surv[:, :-1]
    return inner.sum(axis=1) + (cum_f[:, -1] + g[:, -1]) * surv[:, -1]


# estimators

@dataclass(frozen=True)
class Estimate:
    mean: float
    se: float
    paths: int
    moment_sup: float = float("nan")


def summarize(values: np.ndarray, moment_sup: float = float("nan")) -> Estimate:
    n = len(values)
    # constant samples have exactly zero spread; np.std would report rounding noise
    spread = n > 1 and values.max() > values.min()
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if spread else 0.0
    return Estimate(float(np.mean(values)), se, n, moment_sup)


def _blocks(paths: int, block: int):
    return [(a, min(block, paths - a)) for a in range(0, paths, block)]


def run_paths(model: DiffusionModel, control: ControlPolicy, s: float, x0, steps: int, paths: int,
              seed: int, evaluators: Sequence[Callable], workers: int = 1, block: int = BLOCK,
              moment_bound: float = DEFAULT_MOMENT_BOUND):
    """Simulate in blocks and apply ``evaluator(bundle) -> per-path array`` to each block.

    Returns ``(payoffs, moment_sup)`` where ``payoffs[i]`` is evaluator ``i``'s
    per-path output in path order, and ``moment_sup`` is the largest sample
    mean of ``(1 + |x_t|)**m_n`` over the grid.
    """
    m_n = model.m_n(control.n)

    def one(spec):
        first, count = spec
        b = simulate_paths(model, control, s, x0, steps, count, seed, first_path=first)
        with np.errstate(over="ignore"):
            moment = ((1.0 + np.linalg.norm(b.x, axis=2)) ** m_n).sum(axis=0)
        if not np.all(np.isfinite(moment)):
            # the pooled guard below would trip anyway; fail before evaluating payoffs
            raise DivergenceError(f"moment guard tripped: (1+|x_t|)^{m_n} overflows on paths "
                                  f"{first}..{first + count - 1}")
        return [np.asarray(ev(b), dtype=float) for ev in evaluators], moment

    specs = _blocks(paths, block)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, specs))
    else:
        results = [one(sp) for sp in specs]

    moment_sum = np.zeros(steps + 1)
    for _, mom in results:
        moment_sum = moment_sum + mom
    moment_sup = float(np.max(moment_sum / paths))
    if not math.isfinite(moment_sup) or moment_sup > moment_bound:
        raise DivergenceError(
            f"moment guard tripped: sup_t mean (1+|x_t|)^{m_n} = {moment_sup:.6g} exceeds {moment_bound:.6g}"
        )
    payoffs = [np.concatenate([res[0][i] for res in results]) for i in range(len(evaluators))]
    return payoffs, moment_sup


def estimate_v_stop(model, control, stop, s, x0, steps, paths, seed, workers=1, **kw) -> Estimate:
    (vals,), mom = run_paths(model, control, s, x0, steps, paths, seed,
                             [lambda b: stopped_payoffs(model, b, stop)], workers, **kw)
    return summarize(vals, mom)


def estimate_v_randomized(model, control, r, s, x0, steps, paths, seed, workers=1, **kw) -> Estimate:
    (vals,), mom = run_paths(model, control, s, x0, steps, paths, seed,
                             [lambda b: randomized_payoffs(model, b, r)], workers, **kw)
    return summarize(vals, mom)


@dataclass(frozen=True)
class SearchRow:
    cap: float
    randomized: Estimate
    randomized_policy: str
    stopped: Estimate
    stopped_policy: str

    @property
    def gap(self) -> float:
        return abs(self.randomized.mean - self.stopped.mean)

    @property
    def combined_se(self) -> float:
        return math.hypot(self.randomized.se, self.stopped.se)


def value_search(model: DiffusionModel, s: float, x0, steps: int, paths: int, seed: int,
                 controls: Sequence[ControlPolicy], stops: Sequence[StopPolicy],
                 intensities: dict, workers: int = 1, **kw) -> list[SearchRow]:
    """Best stopped and randomized values over finite candidate families.

    ``intensities`` maps each cap ``n`` to candidate intensity policies with
    values in ``[0, n]``. The family searched at cap ``n`` is the union of the
    candidates of every cap up to ``n``, so best values are nondecreasing in
    ``n``. All candidates share the same noise.
    """
    if not controls or not stops or not intensities or not any(intensities.values()):
        raise ValueError("candidate families must be nonempty")
    caps = sorted(intensities)
    all_r = [(cap, r) for cap in caps for r in intensities[cap]]

    stop_est, rand_est = [], []
    for ctl in controls:
        evals = [(lambda b, sp=sp: stopped_payoffs(model, b, sp)) for sp in stops]
        evals += [(lambda b, r=r: randomized_payoffs(model, b, r)) for _, r in all_r]
        vals, mom = run_paths(model, ctl, s, x0, steps, paths, seed, evals, workers, **kw)
        for sp, v in zip(stops, vals[:len(stops)]):
            stop_est.append((f"{ctl.name}/{sp.name}", summarize(v, mom)))
        for (cap, r), v in zip(all_r, vals[len(stops):]):
            rand_est.append((cap, f"{ctl.name}/{r.name}", summarize(v, mom)))

    best_stop = max(stop_est, key=lambda e: e[1].mean)
    rows = []
    for cap in caps:
        pool = [(name, est) for c, name, est in rand_est if c <= cap]
        best = max(pool, key=lambda e: e[1].mean)
        rows.append(SearchRow(cap, best[1], best[0], best_stop[1], best_stop[0]))
    return rows


# growth-bound spot checks

def check_growth(model: DiffusionModel, n: int, alphas: np.ndarray, rng: np.random.Generator,
                 probes: int = 256, scale: float = 10.0) -> list[str]:
    """Sample ``(t, x, y)`` and report violations of the declared growth and Lipschitz bounds."""
    alphas = np.asarray(alphas, dtype=float)
    if not np.all(model.in_control_set(n, alphas)):
        raise ValueError(f"probe controls are not in A_{n}")
    Kn, mn = model.K_n(n), model.m_n(n)
    issues = []
    for a in alphas:
        t = rng.uniform(0.0, model.horizon, probes)
        x = rng.normal(scale=scale, size=(probes, model.dim))
        y = rng.normal(scale=scale, size=(probes, model.dim))
        al = np.full(probes, a)
        nx = np.linalg.norm(x, axis=1)
        sx = np.stack([np.asarray(model.sigma(al[i:i + 1], t[i], x[i:i + 1])).reshape(model.dim, -1)
                       for i in range(probes)])
        sy = np.stack([np.asarray(model.sigma(al[i:i + 1], t[i], y[i:i + 1])).reshape(model.dim, -1)
                       for i in range(probes)])
        bx = np.stack([np.asarray(model.drift(al[i:i + 1], t[i], x[i:i + 1])).reshape(-1)
                       for i in range(probes)])
        by = np.stack([np.asarray(model.drift(al[i:i + 1], t[i], y[i:i + 1])).reshape(-1)
                       for i in range(probes)])
        cx = np.array([float(np.asarray(model.discount(al[i:i + 1], t[i], x[i:i + 1])).reshape(-1)[0])
                       for i in range(probes)])
        fx = np.array([float(np.asarray(model.running(al[i:i + 1], t[i], x[i:i + 1])).reshape(-1)[0])
                       for i in range(probes)])
        gx = np.array([float(np.asarray(model.terminal(t[i], x[i:i + 1])).reshape(-1)[0])
                       for i in range(probes)])
        size = np.linalg.norm(sx, axis=(1, 2)) + np.linalg.norm(bx, axis=1)
        lip = (np.linalg.norm(sx - sy, axis=(1, 2)) + np.linalg.norm(bx - by, axis=1)) / np.maximum(
            np.linalg.norm(x - y, axis=1), 1e-300)
        tol = 1e-9
        if np.any(size > Kn * (1 + nx) * (1 + tol)):
            issues.append(f"alpha={a}: |sigma|+|beta| exceeds K_n(1+|x|)")
        if np.any(lip > Kn * (1 + tol)):
            issues.append(f"alpha={a}: Lipschitz quotient exceeds K_n")
        if np.any(np.abs(cx) + np.abs(fx) > Kn * (1 + nx) ** mn * (1 + tol)):
            issues.append(f"alpha={a}: |c|+|f| exceeds K_n(1+|x|)^m_n")
        if np.any(np.abs(gx) > model.K * (1 + nx) ** model.m * (1 + tol)):
            issues.append("|g| exceeds K(1+|x|)^m")
    return issues
