import math

import numpy as np
import pytest

from clinewave.discretize import Grid2D, quadrature_weights
from clinewave.model import quadratic_model
from clinewave.simulate import (InstabilityError, SimState, SimulationError, StepScheme,
                                extinction_grid, front_position, invasion_grid, linear_fit,
                                line_eigenfunction_on, run_extinction, run_invasion, step,
                                total_mass)

from conftest import constant_model


def test_zero_stays_zero():
    p = quadratic_model(0.25, 1.0)
    g = Grid2D.with_spacing(5.0, 4.0, 0.25, 0.25)
    s = SimState(0.0, np.zeros(g.shape), g)
    for _ in range(5):
        s = step(s, p, StepScheme(0.1))
    assert not s.field.any()
    assert s.t == pytest.approx(0.5)


def _logistic_error(dt, implicit_growth=True, T=2.0):
    r0, k0, m0 = 0.8, 1.0, 0.05
    p = constant_model(r0, B=1.0, k0=k0, half=4.0)
    g = Grid2D.with_spacing(30.0, 4.0, 0.5, 0.25)
    lam, gam = line_eigenfunction_on(g, p)
    phi = gam / (quadrature_weights(g.z) @ gam)
    s = SimState(0.0, m0 * np.ones(g.n_x)[:, None] * phi[None, :], g)
    sch = StepScheme(dt, implicit_growth=implicit_growth)
    for _ in range(int(round(T / dt))):
        s = step(s, p, sch)
    m = quadrature_weights(g.z) @ s.field[g.n_x // 2]
    grow = -lam
    e = math.exp(grow * T)
    exact = m0 * e / (1 + k0 * m0 * (e - 1) / grow)
    return abs(m - exact)


@pytest.mark.parametrize("implicit_growth", [True, False])
def test_uniform_field_follows_logistic_ode(implicit_growth):
    errs = [_logistic_error(dt, implicit_growth) for dt in (0.1, 0.05, 0.025)]
    assert errs[-1] < 2e-3
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 0.85)


def test_single_step_mass_change_against_half_steps():
    """One step of dt against two of dt/2: the mass changes agree to O(dt^2)."""
    p = quadratic_model(0.25, 1.0)
    g = Grid2D.with_spacing(8.0, 6.0, 0.25, 0.25)
    X, Z = g.mesh()
    n0 = 0.3 * np.exp(-(X ** 2) / 4 - Z ** 2 / 2)
    m0 = total_mass(n0, g)
    diffs = []
    for dt in (0.1, 0.05, 0.025):
        one = step(SimState(0.0, n0, g), p, StepScheme(dt))
        half = SimState(0.0, n0, g)
        for _ in range(2):
            half = step(half, p, StepScheme(dt / 2))
        diffs.append(abs((total_mass(one.field, g) - m0) - (total_mass(half.field, g) - m0)))
    orders = np.log2(np.array(diffs[:-1]) / np.array(diffs[1:]))
    assert np.all(orders > 1.8)


def test_step_guards():
    p = quadratic_model(0.25, 1.0)
    g = Grid2D.with_spacing(4.0, 4.0, 0.5, 0.5)
    s = SimState(0.0, np.ones(g.shape), g)
    with pytest.raises(ValueError):
        step(s, p, StepScheme(1.0))
    bad = SimState(0.0, np.full(g.shape, np.nan), g)
    with pytest.raises(InstabilityError):
        step(bad, p, StepScheme(0.1))
    with pytest.raises(ValueError):
        StepScheme(0.0)


def test_positivity_after_steps():
    p = quadratic_model(0.25, 1.0)
    g = Grid2D.with_spacing(6.0, 5.0, 0.25, 0.25)
    X, Z = g.mesh()
    s = SimState(0.0, np.where(np.abs(X) < 1, 1.0, 0.0) * np.exp(-Z ** 2), g)
    for _ in range(10):
        s = step(s, p, StepScheme(0.2))
    assert s.field.min() >= 0
    assert s.clipped == 0.0


def test_front_position_interpolates():
    g = Grid2D(5.0, 1.0, 11, 3)
    f = np.zeros(g.shape)
    f[:, 1] = np.clip(1 - (g.x.nodes + 5) / 5, 0, None)  # 1 at x=-5, 0 from x=0
    assert front_position(f, g, 0.5) == pytest.approx(-2.5)
    assert math.isnan(front_position(f, g, 2.0))


def test_linear_fit_exact_line():
    fit = linear_fit(np.arange(5.0), 2 * np.arange(5.0) + 1)
    assert (fit.slope, fit.intercept, fit.r2) == pytest.approx((2, 1, 1))
    with pytest.raises(SimulationError):
        linear_fit(np.arange(2.0), np.arange(2.0))


def test_regime_guards():
    g = Grid2D.with_spacing(6.0, 5.0, 0.5, 0.5)
    with pytest.raises(SimulationError):
        run_invasion(quadratic_model(2.0, 0.0), g, StepScheme(0.1), 1.0)
    with pytest.raises(SimulationError):
        run_extinction(quadratic_model(0.25, 1.0), g, StepScheme(0.1), 1.0)


def test_extinction_zero_datum_flagged():
    p = quadratic_model(1.0, 1.0)
    g = extinction_grid(p, 0.5, 10.0)
    res = run_extinction(p, g, StepScheme(0.1), 2.0, initial=np.zeros(g.shape))
    assert math.isnan(res.rate)
    assert res.series["rejected"] == "zero initial datum"


def test_extinction_ratio_nonincreasing_short_run():
    p = quadratic_model(1.0, 1.0)
    g = extinction_grid(p, 0.5, 15.0)
    res = run_extinction(p, g, StepScheme(0.1), 6.0, output_interval=0.5)
    assert res.nonincreasing
    assert res.state.norm[-1][1] < res.state.norm[0][1]


@pytest.fixture(scope="module")
def invasion_runs():
    p = quadratic_model(0.25, 1.0)
    from clinewave.eigen import classify
    cs = classify(p).c_star
    T = 60.0
    g, x0 = invasion_grid(p, T, cs, 0.25)
    return cs, {theta: run_invasion(p, g, StepScheme(0.05), T, theta, x0=x0) for theta in (0.01, 0.05)}


def test_theta_independence(invasion_runs):
    _, runs = invasion_runs
    s1, s5 = runs[0.01].speed, runs[0.05].speed
    assert abs(s1 - s5) / s1 < 0.05


def test_invasion_speed_close_to_cstar(invasion_runs):
    cs, runs = invasion_runs
    assert runs[0.01].speed == pytest.approx(cs, rel=0.1)
    assert runs[0.01].r2 >= 0.99


def test_weak_selection_trend_towards_kpp():
    speeds = []
    for A in (0.04, 0.01):
        p = quadratic_model(A, 0.0)
        cs = 2 * math.sqrt(1 - math.sqrt(A))
        T = 30.0
        g, x0 = invasion_grid(p, T, cs, 0.4)
        res = run_invasion(p, g, StepScheme(0.05), T, 0.01, x0=x0)
        assert res.speed == pytest.approx(cs, rel=0.1)
        speeds.append(res.speed)
    assert speeds[1] > speeds[0]
    assert speeds[1] < 2.0
