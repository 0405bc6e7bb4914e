"""Built-in diffusion models, selected by name from experiment configs."""

from __future__ import annotations

import numpy as np

from .diffusion import ControlPolicy, DiffusionModel, StopPolicy, bang_bang
from .tree import lattice_snell


def _zeros(alpha, t, x):
    return np.zeros(len(x))


def _everywhere(n, alpha):
    return np.ones(np.shape(alpha)[:1], dtype=bool)


def bm_quadratic(T: float = 1.0, x0: float = 0.0) -> DiffusionModel:
    """Brownian motion with reward ``g = x**2``; optimal to wait, value ``x0**2 + T``."""

    def oracle(steps=2000, s=0.0, x=x0):
        return lattice_snell(lambda t, y: y**2, x, T - s, steps, kind="arithmetic", vol=1.0)

    return DiffusionModel(
        name="bm-quadratic", dim=1, noise_dim=1, horizon=T,
        sigma=lambda a, t, x: np.ones((len(x), 1, 1)),
        drift=lambda a, t, x: np.zeros((len(x), 1)),
        discount=_zeros, running=_zeros,
        terminal=lambda t, x: x[..., 0] ** 2,
        K=1.0, m=2.0, K_n=lambda n: 1.0, m_n=lambda n: 2.0,
        in_control_set=_everywhere,
        params={"T": T, "x0": x0}, oracle=oracle,
    )


def gbm_put(T: float = 1.0, x0: float = 1.0, strike: float = 1.0, rate: float = 0.05,
            vol: float = 0.2) -> DiffusionModel:
    """Geometric Brownian motion discounted at ``rate`` with put reward ``(strike - x)^+``."""

    def payoff(t, y):
        return np.maximum(strike - y, 0.0)

    def oracle(steps=2000, s=0.0, x=x0):
        return lattice_snell(payoff, x, T - s, steps, kind="geometric", vol=vol, rate=rate)

    return DiffusionModel(
        name="gbm-put", dim=1, noise_dim=1, horizon=T,
        sigma=lambda a, t, x: (vol * x).reshape(-1, 1, 1),
        drift=lambda a, t, x: rate * x,
        discount=lambda a, t, x: np.full(len(x), rate),
        running=_zeros,
        terminal=lambda t, x: payoff(t, x[..., 0]),
        K=max(strike, 1.0), m=1.0,
        K_n=lambda n: max(vol + rate, rate), m_n=lambda n: 0.0,
        in_control_set=_everywhere,
        params={"T": T, "x0": x0, "strike": strike, "rate": rate, "vol": vol}, oracle=oracle,
    )


def controlled_drift_1d(T: float = 1.0, x0: float = 0.0) -> DiffusionModel:
    """Drift ``alpha`` in ``A_n = [-n, n]``, running cost ``alpha**2 / 2``, reward ``g = x``.

    The reward grows with the control, unboundedly over ``A``. For ``n >= 1``
    the best constant control is ``alpha = 1`` and stopping early never helps,
    so ``w_n(s, x) = x + (T - s) / 2``.
    """

    def oracle(steps=None, s=0.0, x=x0):
        return x + (T - s) / 2.0

    return DiffusionModel(
        name="controlled-drift-1d", dim=1, noise_dim=1, horizon=T,
        sigma=lambda a, t, x: np.ones((len(x), 1, 1)),
        drift=lambda a, t, x: np.asarray(a, dtype=float).reshape(-1, 1) * np.ones((len(x), 1)),
        discount=_zeros,
        running=lambda a, t, x: -0.5 * np.asarray(a, dtype=float) ** 2 * np.ones(len(x)),
        terminal=lambda t, x: x[..., 0],
        K=1.0, m=1.0, K_n=lambda n: max(1.0 + n, 0.5 * n * n), m_n=lambda n: 0.0,
        in_control_set=lambda n, a: np.abs(np.asarray(a, dtype=float)) <= n,
        params={"T": T, "x0": x0}, oracle=oracle,
    )


REGISTRY = {
    "bm-quadratic": bm_quadratic,
    "gbm-put": gbm_put,
    "controlled-drift-1d": controlled_drift_1d,
}


def make_model(name: str, **params) -> DiffusionModel:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(REGISTRY)}") from None
    return factory(**params)


# default candidate families

def default_controls(model: DiffusionModel, n: int = 1) -> list[ControlPolicy]:
    if model.name == "controlled-drift-1d":
        levels = [a for a in np.arange(-n, n + 0.25, 0.25) if abs(a) <= n]
        return [ControlPolicy(lambda t, x, a=a: np.full(len(x), a), n, f"alpha={a:g}") for a in levels]
    return [ControlPolicy(lambda t, x: np.zeros(len(x)), n, "alpha=0")]


def default_regions(model: DiffusionModel) -> list[tuple[str, object]]:
    """Candidate stopping regions; the empty region means 'wait until the horizon'."""
    regions = [("never", lambda t, x: np.zeros(len(x), dtype=bool))]
    T = model.horizon
    if model.name == "gbm-put":
        K = model.params["strike"]
        for b in (0.75, 0.8, 0.85, 0.9, 0.95):
            regions.append((f"x<={b * K:g}", lambda t, x, b=b: x[:, 0] <= b * K))
    else:
        for b in (0.5, 1.0, 1.5, 2.0):
            regions.append((f"|x|>={b:g}", lambda t, x, b=b: np.abs(x[:, 0]) >= b))
    for frac in (0.0, 0.5):
        regions.append((f"t>={frac * T:g}", lambda t, x, c=frac * T: np.full(len(x), t >= c)))
    return regions


def default_families(model: DiffusionModel, caps):
    """Stop policies and nested bang-bang intensities ``n * 1[region]`` over the same regions."""
    regions = default_regions(model)
    stops = [StopPolicy(fn, name) for name, fn in regions]
    intensities = {n: [bang_bang(fn, n, f"{n:g}*1[{name}]") for name, fn in regions] for n in caps}
    return stops, intensities
