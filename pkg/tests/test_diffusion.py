import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from randstop.diffusion import (ControlPolicy, DiffusionModel, DivergenceError, IntensityPolicy,
                                SimulationError, StopPolicy, bang_bang, check_growth,
                                estimate_v_randomized, estimate_v_stop, randomized_payoffs,
                                randomized_payoffs_by_parts, run_paths, simulate_paths,
                                stopped_payoffs, value_search)
from randstop.models import (bm_quadratic, controlled_drift_1d, default_controls,
                             default_families, gbm_put, make_model)
from randstop.rng import path_normals

ZERO = ControlPolicy(lambda t, x: np.zeros(len(x)), 1, "zero")
NEVER = StopPolicy(lambda t, x: np.zeros(len(x), dtype=bool), "never")


def toy_model(sigma=0.0, drift=0.0, running=0.0, discount=0.0, terminal=lambda t, x: x[..., 0],
              horizon=1.0):
    const = lambda v: (lambda a, t, x: np.full(len(x), v))  # noqa: E731
    return DiffusionModel(
        name="toy", dim=1, noise_dim=1, horizon=horizon,
        sigma=lambda a, t, x: np.full((len(x), 1, 1), sigma),
        drift=lambda a, t, x: np.full((len(x), 1), drift),
        discount=discount if callable(discount) else const(discount),
        running=const(running), terminal=terminal,
        K=10.0, m=2.0, K_n=lambda n: 10.0, m_n=lambda n: 2.0,
        in_control_set=lambda n, a: np.ones(len(a), dtype=bool),
    )


def test_frozen_paths_without_noise_or_drift():
    b = simulate_paths(toy_model(), ZERO, 0.0, 0.7, 10, 5, seed=1)
    assert np.all(b.x == 0.7)


def test_unit_drift_is_exact():
    b = simulate_paths(toy_model(drift=1.0), ZERO, 0.0, 0.0, 8, 3, seed=1)
    assert np.allclose(b.x[:, :, 0], b.times[None, :], atol=1e-15)


def test_brownian_terminal_mean():
    paths = 100_000
    b = simulate_paths(toy_model(sigma=1.0), ZERO, 0.0, 0.0, 1, paths, seed=3)
    assert abs(b.x[:, -1, 0].mean()) <= 3 * math.sqrt(1.0 / paths)


def test_time_grid_covers_window():
    b = simulate_paths(toy_model(), ZERO, 0.25, 0.0, 7, 2, seed=0)
    assert b.times[0] == 0.25 and b.times[-1] == 1.0 and len(b.times) == 8


def test_stopped_examples():
    est = estimate_v_stop(toy_model(), ZERO, NEVER, 0.0, 1.3, 10, 50, seed=0)
    assert est.mean == pytest.approx(1.3) and est.se == 0.0
    run = toy_model(running=1.0, terminal=lambda t, x: np.zeros(len(x)))
    est = estimate_v_stop(run, ZERO, NEVER, 0.2, 0.0, 10, 50, seed=0)
    assert est.mean == pytest.approx(0.8, abs=1e-14) and est.se == 0.0


def test_stopped_quadratic_mean():
    est = estimate_v_stop(bm_quadratic(), ZERO, NEVER, 0.0, 0.0, 50, 20_000, seed=5)
    assert abs(est.mean - 1.0) <= 3 * est.se


def test_randomized_examples():
    zero = IntensityPolicy(lambda t, x: np.zeros(len(x)), 1.0, "zero")
    run = toy_model(running=1.0, terminal=lambda t, x: np.zeros(len(x)))
    est = estimate_v_randomized(run, ZERO, zero, 0.0, 0.0, 10, 40, seed=0)
    assert est.mean == pytest.approx(1.0, abs=1e-14) and est.se == 0.0

    model = bm_quadratic()
    b = simulate_paths(model, ZERO, 0.0, 0.0, 20, 64, seed=9)
    assert np.array_equal(randomized_payoffs(model, b, zero), b.x[:, -1, 0] ** 2)


def test_randomized_matches_stopped_under_common_noise():
    model = bm_quadratic()
    zero = IntensityPolicy(lambda t, x: np.zeros(len(x)), 1.0)
    (r, s), _ = run_paths(model, ZERO, 0.0, 0.0, 50, 5000, 4,
                          [lambda b: randomized_payoffs(model, b, zero),
                           lambda b: stopped_payoffs(model, b, NEVER)])
    assert np.array_equal(r, s)


def test_intensity_outside_cap_aborts():
    model = bm_quadratic()
    bad = IntensityPolicy(lambda t, x: np.full(len(x), 5.0), 1.0, "bad")
    with pytest.raises(SimulationError, match="left"):
        estimate_v_randomized(model, ZERO, bad, 0.0, 0.0, 5, 10, seed=0)


def test_control_outside_set_aborts():
    model = controlled_drift_1d()
    wild = ControlPolicy(lambda t, x: np.full(len(x), 3.0), 2, "wild")
    with pytest.raises(SimulationError, match="A_2"):
        simulate_paths(model, wild, 0.0, 0.0, 5, 3, seed=0)


def test_non_finite_state_aborts_with_diagnostics():
    blow = toy_model()
    blow.drift = lambda a, t, x: np.full((len(x), 1), np.inf if t > 0.3 else 1.0)
    with pytest.raises(SimulationError, match="non-finite state on path"):
        simulate_paths(blow, ZERO, 0.0, 1.0, 10, 4, seed=0)


def test_moment_guard_aborts():
    with pytest.raises(DivergenceError, match="moment guard"):
        estimate_v_stop(bm_quadratic(x0=100.0), ZERO, NEVER, 0.0, 100.0, 5, 100, seed=0,
                        moment_bound=10.0)


def test_moment_reported():
    est = estimate_v_stop(bm_quadratic(), ZERO, NEVER, 0.0, 0.0, 20, 1000, seed=0)
    assert 1.0 <= est.moment_sup < 10.0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.5, 64), st.floats(0, 2))
def test_integration_by_parts(seed, cap, level):
    model = gbm_put()
    model.running = lambda a, t, x: np.cos(x[:, 0] + t)
    b = simulate_paths(model, ZERO, 0.0, 1.0, 40, 32, seed=seed)
    r = bang_bang(lambda t, x: x[:, 0] <= level, cap)
    assert np.allclose(randomized_payoffs(model, b, r), randomized_payoffs_by_parts(model, b, r),
                       atol=1e-8, rtol=0)


def test_discount_positivity():
    b = simulate_paths(gbm_put(), ZERO, 0.0, 1.0, 30, 200, seed=2)
    disc = np.exp(-b.phi)
    assert np.all(disc > 0) and np.all(disc <= 1) and np.all(np.diff(b.phi, axis=1) >= 0)


@pytest.mark.parametrize(
    "policy",
    [NEVER, StopPolicy(lambda t, x: np.abs(x[:, 0]) >= 0.5),
     StopPolicy(lambda t, x: np.full(len(x), t >= 0.5))],
)
def test_martingale_sanity(policy):
    model = toy_model(sigma=1.0)
    est = estimate_v_stop(model, ZERO, policy, 0.0, 0.3, 50, 20_000, seed=11)
    assert abs(est.mean - 0.3) <= 3 * est.se


def test_worker_count_does_not_change_results():
    model = bm_quadratic()
    stops, ints = default_families(model, [1, 8])
    kw = dict(controls=default_controls(model), stops=stops, intensities=ints)
    one = value_search(model, 0.0, 0.0, 20, 10_000, 7, workers=1, **kw)
    four = value_search(model, 0.0, 0.0, 20, 10_000, 7, workers=4, **kw)
    assert one == four


def test_block_size_does_not_change_results():
    model = bm_quadratic()
    ev = [lambda b: stopped_payoffs(model, b, StopPolicy(lambda t, x: np.abs(x[:, 0]) > 0.8))]
    a, _ = run_paths(model, ZERO, 0.0, 0.0, 10, 3000, 21, ev, block=4096)
    b, _ = run_paths(model, ZERO, 0.0, 0.0, 10, 3000, 21, ev, block=257)
    assert np.array_equal(a[0], b[0])


def test_path_noise_independent_of_batching():
    whole = path_normals(5, 0, 10, 4, 2)
    parts = np.concatenate([path_normals(5, 0, 3, 4, 2), path_normals(5, 3, 7, 4, 2)])
    assert np.array_equal(whole, parts)


def test_singleton_family_reproduces_estimate():
    model = bm_quadratic()
    zero = bang_bang(lambda t, x: np.zeros(len(x), dtype=bool), 1.0, "zero")
    rows = value_search(model, 0.0, 0.0, 10, 2000, 3, [ZERO], [NEVER], {1.0: [zero]})
    est = estimate_v_randomized(model, ZERO, zero, 0.0, 0.0, 10, 2000, 3)
    assert rows[0].randomized == est


def test_nested_caps_monotone():
    model = gbm_put()
    stops, ints = default_families(model, [1, 2, 4, 8, 16])
    rows = value_search(model, 0.0, 1.0, 25, 4000, 13, default_controls(model), stops, ints)
    best = [r.randomized.mean for r in rows]
    assert all(b >= a for a, b in zip(best, best[1:]))


def test_larger_family_never_lowers_best():
    model = gbm_put()
    stops, ints = default_families(model, [4])
    small = value_search(model, 0.0, 1.0, 25, 3000, 2, default_controls(model), stops[:2], {4: ints[4][:2]})
    large = value_search(model, 0.0, 1.0, 25, 3000, 2, default_controls(model), stops, ints)
    assert large[0].randomized.mean >= small[0].randomized.mean
    assert large[0].stopped.mean >= small[0].stopped.mean


def test_empty_family_rejected():
    with pytest.raises(ValueError):
        value_search(bm_quadratic(), 0.0, 0.0, 10, 10, 0, [ZERO], [], {1: []})


@pytest.mark.parametrize("name", ["bm-quadratic", "gbm-put", "controlled-drift-1d"])
def test_models_respect_declared_growth(name):
    model = make_model(name)
    issues = check_growth(model, 2, np.array([0.0, 1.0, -2.0]) if name == "controlled-drift-1d"
                          else np.array([0.0]), np.random.default_rng(0), probes=64)
    assert issues == []


def test_controlled_drift_oracle():
    model = controlled_drift_1d()
    ctl = ControlPolicy(lambda t, x: np.ones(len(x)), 1, "one")
    est = estimate_v_stop(model, ctl, NEVER, 0.0, 0.0, 20, 20_000, seed=1)
    assert abs(est.mean - model.oracle()) <= 3 * est.se + 1e-12
