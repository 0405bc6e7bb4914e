"""Randomized stopping in continuous time along a single path.

A stopping distribution ``F`` (right-continuous, nondecreasing, ``F(0-) = 0``,
total mass 1) is stored as point masses plus segments whose density is a
truncated exponential (``rate > 0``) or uniform (``rate == 0``). Intensities
that are piecewise constant map onto such segments exactly, so payoffs of
intensity-driven stopping integrate in closed form whenever the payoff path is
a step function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

MASS_TOL = 1e-12
QUAD_OPTS = dict(epsabs=1e-13, epsrel=1e-11, limit=500)


# payoff paths

@dataclass(frozen=True)
class StepPath:
    """Piecewise-constant path on the partition ``knots[0] < ... < knots[K]``.

    ``side="left"`` puts ``values[k]`` on ``[knots[k], knots[k+1])`` (right
    continuous); ``side="right"`` puts it on ``(knots[k], knots[k+1]]``. The
    first value extends to the left and the last value to the right.
    """

    knots: np.ndarray
    values: np.ndarray
    side: str = "left"

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if knots.ndim != 1 or len(knots) < 2 or np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing with at least two entries")
        if values.shape != (len(knots) - 1,):
            raise ValueError("need exactly one value per cell")
        if not np.all(np.isfinite(values)):
            raise ValueError("step path values must be finite")
        if self.side not in ("left", "right"):
            raise ValueError("side must be 'left' or 'right'")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "values", values)

    @property
    def horizon(self) -> float:
        return float(self.knots[-1])

    @property
    def breakpoints(self) -> np.ndarray:
        return self.knots

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.side == "left":
            k = np.searchsorted(self.knots, t, side="right") - 1
        else:
            k = np.searchsorted(self.knots, t, side="left") - 1
        k = np.clip(k, 0, len(self.values) - 1)
        out = self.values[k]
        return float(out) if out.ndim == 0 else out

    def integrate(self, F: "CdfPath") -> float:
        """Exact ``int h dF``: each cell contributes value times the F-measure of the cell."""
        inner = self.knots[1:-1]
        if self.side == "left":
            cum = np.concatenate(([0.0], [F.left_limit(s) for s in inner], [F.total]))
        else:
            cum = np.concatenate(([0.0], [F(s) for s in inner], [F.total]))
        return float(np.dot(self.values, np.diff(cum)))


@dataclass(frozen=True)
class FunctionPath:
    """A payoff path given by a vectorized function, frozen after ``horizon``."""

    fn: Callable
    horizon: float = math.inf
    breakpoints: tuple = ()
    bound: float | None = None
    lipschitz: float | None = None

    def __call__(self, t):
        t = np.minimum(np.asarray(t, dtype=float), self.horizon)
        out = np.asarray(self.fn(t), dtype=float)
        return float(out) if out.ndim == 0 else out


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise ValueError("payoff path produced non-finite samples")
    return x


# stopping distributions

@dataclass(frozen=True)
class CdfPath:
    """Stopping distribution: jumps ``(time, mass)`` plus segments ``(a, b, mass, rate)``.

    A segment spreads ``mass`` over ``[a, b)`` with density proportional to
    ``exp(-rate * (t - a))``. Segments must not overlap; ``b`` may be infinite
    only for a positive rate.
    """

    jump_times: np.ndarray = field(default_factory=lambda: np.empty(0))
    jump_masses: np.ndarray = field(default_factory=lambda: np.empty(0))
    segments: np.ndarray = field(default_factory=lambda: np.empty((0, 4)))

    def __post_init__(self):
        jt = np.asarray(self.jump_times, dtype=float).reshape(-1)
        jm = np.asarray(self.jump_masses, dtype=float).reshape(-1)
        seg = np.asarray(self.segments, dtype=float).reshape(-1, 4)
        if jt.shape != jm.shape:
            raise ValueError("jump times and masses differ in length")
        if np.any(jt < 0) or not np.all(np.isfinite(jt)):
            raise ValueError("jump times must be finite and nonnegative")
        if np.any(jm < 0) or np.any(seg[:, 2] < 0):
            raise ValueError("masses must be nonnegative")
        order = np.argsort(jt, kind="stable")
        jt, jm = jt[order], jm[order]
        seg = seg[np.argsort(seg[:, 0], kind="stable")]
        a, b, rate = seg[:, 0], seg[:, 1], seg[:, 3]
        if np.any(a < 0) or np.any(b <= a) or np.any(rate < 0):
            raise ValueError("segments need 0 <= a < b and rate >= 0")
        if np.any(np.isinf(b) & (rate <= 0)):
            raise ValueError("an unbounded segment needs a positive rate")
        if np.any(b[:-1] > a[1:]):
            raise ValueError("segments overlap")
        # a rate too small to register over the segment is a uniform density
        with np.errstate(over="ignore", invalid="ignore"):
            flat = np.isfinite(b) & (-np.expm1(-rate * (b - a)) == 0.0)
        seg[flat, 3] = 0.0
        total = jm.sum() + seg[:, 2].sum()
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"total stopping mass {total!r} differs from 1")
        object.__setattr__(self, "jump_times", jt)
        object.__setattr__(self, "jump_masses", jm)
        object.__setattr__(self, "segments", seg)

    @classmethod
    def point_mass(cls, tau: float) -> "CdfPath":
        return cls([tau], [1.0])

    @classmethod
    def uniform(cls, a: float, b: float) -> "CdfPath":
        return cls(segments=[(a, b, 1.0, 0.0)])

    @classmethod
    def exponential(cls, tau: float, rate: float) -> "CdfPath":
        """Stop after ``tau`` with constant hazard ``rate``: ``1 - exp(-rate*(t - tau))``."""
        return cls(segments=[(tau, math.inf, 1.0, rate)])

    @property
    def total(self) -> float:
        return float(self.jump_masses.sum() + self.segments[:, 2].sum())

    @property
    def horizon(self) -> float:
        ends = list(self.jump_times) + [x for x in self.segments[:, 1] if np.isfinite(x)]
        ends += list(self.segments[:, 0])
        return max(ends) if ends else 0.0

    @staticmethod
    def _fraction(a, b, rate, t):
        """Share of a segment's mass lying in ``[a, t]``."""
        if t <= a:
            return 0.0
        if t >= b:
            return 1.0
        if rate > 0:
            den = 1.0 if math.isinf(b) else -math.expm1(-rate * (b - a))
            return -math.expm1(-rate * (t - a)) / den
        return (t - a) / (b - a)

    @staticmethod
    def _fraction_inverse(a, b, rate, u):
        if rate > 0:
            den = 1.0 if math.isinf(b) else -math.expm1(-rate * (b - a))
            return a - math.log1p(-u * den) / rate
        return a + u * (b - a)

    def _continuous(self, t) -> float:
        return float(sum(m * self._fraction(a, b, r, t) for a, b, m, r in self.segments))

    def __call__(self, t: float) -> float:
        return float(self.jump_masses[self.jump_times <= t].sum()) + self._continuous(t)

    def left_limit(self, t: float) -> float:
        return float(self.jump_masses[self.jump_times < t].sum()) + self._continuous(t)


def time_change(F: CdfPath, level: float) -> float:
    """Generalized inverse ``inf{t >= 0 : F(t) >= level}``.

    Flat stretches of ``F`` resolve to their left endpoint. ``level == 0``
    returns 0 under this reading.
    """
    if not 0.0 <= level < 1.0:
        raise ValueError(f"level {level!r} outside [0, 1)")
    if F(0.0) >= level:
        return 0.0
    points = sorted(set([0.0, *F.jump_times, *F.segments[:, 0],
                         *[b for b in F.segments[:, 1] if np.isfinite(b)]]))
    prev, F_prev = 0.0, F(0.0)
    for t in points[1:] + [math.inf]:
        left = F.left_limit(t) if np.isfinite(t) else F.total
        if left >= level:
            # crossing inside (prev, t): at most one segment covers this stretch
            for a, b, m, r in F.segments:
                if a <= prev and t <= b and m > 0:
                    u = CdfPath._fraction(a, b, r, prev) + (level - F_prev) / m
                    return min(max(CdfPath._fraction_inverse(a, b, r, min(u, 1.0)), prev), t)
            return prev if np.isfinite(t) else F.horizon
        if not np.isfinite(t):
            break
        F_t = F(t)
        if F_t >= level:
            return float(t)
        prev, F_prev = t, F_t
    # rounding shortfall in the total mass: the last support point carries the level
    return F.horizon


# integrals against F

def _exp_weighted(h, start: float, rate: float, u0: float, u1: float) -> float:
    """``int_{u0}^{u1} h(start + u/rate) exp(-u) du`` with h's kinks as quadrature points."""
    if u1 <= u0:
        return 0.0
    horizon = getattr(h, "horizon", math.inf)
    u_h = rate * (horizon - start) if np.isfinite(horizon) else math.inf
    total = 0.0
    if u_h < u1:
        # h is frozen beyond its horizon
        lo = max(u0, u_h)
        h_end = _check_finite(h(horizon))
        total += h_end * (math.exp(-lo) - math.exp(-u1))
        u1 = lo
        if u1 <= u0:
            return total
    if isinstance(h, StepPath):
        cuts = [u0] + [rate * (s - start) for s in h.knots if u0 < rate * (s - start) < u1] + [u1]
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            mid = start + 0.5 * (lo + hi) / rate
            total += _check_finite(h(mid)) * (math.exp(-lo) - math.exp(-hi))
        return total

    def integrand(u):
        return _check_finite(h(start + u / rate)) * math.exp(-u)

    pts = sorted(rate * (s - start) for s in getattr(h, "breakpoints", ())
                 if u0 < rate * (s - start) < u1)
    if math.isinf(u1):
        cuts = [u0] + pts
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            total += integrate.quad(integrand, lo, hi, **QUAD_OPTS)[0]
        total += integrate.quad(integrand, cuts[-1], math.inf, **QUAD_OPTS)[0]
        return total
    total += integrate.quad(integrand, u0, u1, points=pts or None, **QUAD_OPTS)[0]
    return total


def _segment_integral(h, a, b, mass, rate) -> float:
    if mass == 0:
        return 0.0
    if rate > 0:
        span = rate * (b - a)
        den = 1.0 if math.isinf(span) else -math.expm1(-span)
        return mass / den * _exp_weighted(h, a, rate, 0.0, span)
    if isinstance(h, StepPath):
        cuts = [a] + [s for s in h.knots if a < s < b] + [b]
        return mass / (b - a) * sum(
            h(0.5 * (lo + hi)) * (hi - lo) for lo, hi in zip(cuts[:-1], cuts[1:])
        )
    pts = [s for s in getattr(h, "breakpoints", ()) if a < s < b]
    val = integrate.quad(lambda t: _check_finite(h(t)), a, b, points=pts or None, **QUAD_OPTS)[0]
    return mass / (b - a) * val


def stieltjes_integral(h, F: CdfPath) -> float:
    """Pathwise ``int_0^inf h_t dF_t``: point masses exactly, densities by quadrature."""
    if isinstance(h, StepPath):
        return h.integrate(F)
    jumps = 0.0
    if len(F.jump_times):
        jumps = float(np.dot(_check_finite(np.asarray(h(F.jump_times))), F.jump_masses))
    return jumps + sum(_segment_integral(h, *seg) for seg in F.segments)


def integrate_time_changed(h, F: CdfPath) -> float:
    """``int_0^1 h(beta(r)) dr`` computed in the level variable ``r``."""
    # levels swept by each point mass map to a single time
    spans = [(F.left_limit(t), F(t), t) for t in np.unique(F.jump_times)]
    total = sum((hi - lo) * _check_finite(h(t)) for lo, hi, t in spans)
    if len(F.segments) == 0 or F.segments[:, 2].sum() == 0:
        return float(total)
    # beta changes slope where the density changes rate
    edges = [F.left_limit(b) for b in F.segments[:, 1]] + [F(a) for a in F.segments[:, 0]]
    cuts = sorted({0.0, 1.0, *[x for s in spans for x in s[:2]], *[min(max(e, 0.0), 1.0) for e in edges]})
    kinks = [F(s) for s in getattr(h, "breakpoints", ())]
    horizon = getattr(h, "horizon", math.inf)
    if np.isfinite(horizon):
        kinks.append(F.left_limit(horizon))
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        if hi <= lo or any(a <= lo and hi <= b for a, b, _ in spans):
            continue
        pts = [k for k in kinks if lo < k < hi]
        total += integrate.quad(lambda r: _check_finite(h(time_change(F, min(r, np.nextafter(1.0, 0))))),
                                lo, hi, points=pts or None, **QUAD_OPTS)[0]
    return float(total)


# intensities

@dataclass(frozen=True)
class IntensityPath:
    """Piecewise-constant stopping rate on ``grid``; rates lie in ``[0, cap]``."""

    grid: np.ndarray
    rates: np.ndarray
    cap: float

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        rates = np.asarray(self.rates, dtype=float)
        if grid.ndim != 1 or len(grid) < 2 or grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must start at 0 and increase strictly")
        if not np.isfinite(grid[-1]):
            raise ValueError("horizon must be finite")
        if rates.shape != (len(grid) - 1,):
            raise ValueError("need one rate per grid cell")
        if np.any(rates < 0) or np.any(rates > self.cap) or not np.all(np.isfinite(rates)):
            raise ValueError(f"rates must lie in [0, {self.cap}]")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "rates", rates)

    @property
    def horizon(self) -> float:
        return float(self.grid[-1])

    def to_dict(self) -> dict:
        return {"grid": self.grid.tolist(), "rates": self.rates.tolist(), "cap": self.cap}

    @classmethod
    def from_dict(cls, d: dict) -> "IntensityPath":
        return cls(d["grid"], d["rates"], d["cap"])


def intensity_to_cdf(r: IntensityPath) -> CdfPath:
    """``F = 1 - exp(-int_0^t r)`` per cell in closed form, with the surviving
    mass placed as a point mass at the horizon."""
    dt = np.diff(r.grid)
    log_surv = np.concatenate(([0.0], np.cumsum(-r.rates * dt)))
    surv = np.exp(log_surv)
    seg = []
    for k, rate in enumerate(r.rates):
        mass = surv[k] * -math.expm1(-rate * dt[k])
        if mass > 0:
            seg.append((r.grid[k], r.grid[k + 1], mass, rate))
    seg = np.array(seg).reshape(-1, 4)
    # absorb rounding so the masses sum to one
    terminal = 1.0 - seg[:, 2].sum() if len(seg) else 1.0
    terminal = max(terminal, 0.0)
    return CdfPath([r.horizon], [terminal], seg)


# exponential approximation of a stopping time

@dataclass(frozen=True)
class ExpApproximation:
    value: float
    I: float
    J: float
    K: float


def exponential_approximation(tau: float, n: float, h, delta: float) -> ExpApproximation:
    """Payoff of stopping with hazard ``n`` from ``tau`` on, split around ``[tau, tau+delta]``.

    ``value`` is computed directly as ``int h dF`` for ``F = 1 - exp(-n(t - tau))``;
    the three pieces are computed separately so their sum is an independent check.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    if n < 1:
        raise ValueError("n must be at least 1")
    value = stieltjes_integral(h, CdfPath.exponential(tau, n))
    h_tau = _check_finite(h(tau))
    nd = n * delta
    I = h_tau * -math.expm1(-nd)
    J = _exp_weighted(h, tau, n, 0.0, nd) - I
    K = _exp_weighted(h, tau, n, nd, math.inf)
    return ExpApproximation(value, I, J, K)


def lipschitz_test_path(slope: float = 1.0, horizon: float = 2.0, offset: float = 0.0) -> FunctionPath:
    """``sin``-shaped path with Lipschitz constant ``slope`` and sup-norm ``1 + |offset|``."""
    return FunctionPath(lambda t: offset + np.sin(slope * t), horizon=horizon,
                        bound=1.0 + abs(offset), lipschitz=slope)


def exp_decay_path() -> FunctionPath:
    return FunctionPath(lambda t: np.exp(-t), bound=1.0, lipschitz=1.0)


def step_cdf(times: Sequence[float], masses: Sequence[float]) -> CdfPath:
    return CdfPath(times, masses)
