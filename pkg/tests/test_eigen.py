import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import eigh_tridiagonal

from clinewave.eigen import (Extinct, Invading, Marginal, classify, closed_form_quadratic,
                             gaussian_tail_check, line_profile, minimal_speed, richardson_interval,
                             smallest_tridiagonal, solve_box_2d, solve_interval, solve_line,
                             sturm_count)
from clinewave.model import quadratic_model

from conftest import constant_model


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 200), st.integers(0, 2 ** 31))
def test_smallest_tridiagonal_matches_lapack(n, seed):
    rng = np.random.default_rng(seed)
    diag = rng.uniform(-5, 5, n)
    off = -rng.uniform(0.1, 3, n - 1)
    lam, v, res = smallest_tridiagonal(diag, off)
    ref = eigh_tridiagonal(diag, off, select="i", select_range=(0, 0))[0][0]
    assert lam == pytest.approx(ref, abs=1e-9 * max(1.0, abs(ref)))
    assert np.all(v > 0)


def test_sturm_count_counts_eigenvalues_below():
    rng = np.random.default_rng(3)
    diag, off = rng.normal(size=30), -rng.uniform(0.2, 1, 29)
    ev = eigh_tridiagonal(diag, off, eigvals_only=True)
    for x in (-2.0, 0.0, 1.5):
        assert sturm_count(diag, off * off, x) == np.count_nonzero(ev < x)


@pytest.mark.parametrize("B", [0.0, 1.0])
def test_constant_r_dirichlet(B):
    r0, b = 0.7, 3.0
    e = solve_interval(constant_model(r0, B), 0.0, b, 301)
    exact = (B * B + 1) * (math.pi / (2 * b)) ** 2 - r0
    assert e.lam == pytest.approx(exact, abs=5e-4)  # O(h^2)
    assert e.gamma[0] == e.gamma[-1] == 0.0
    assert e.gamma[e.grid.center] == 1.0
    assert np.all(e.gamma[1:-1] > 0)


def test_richardson_improves_order():
    r0, b = 0.7, 3.0
    exact = 2 * (math.pi / (2 * b)) ** 2 - r0
    p = constant_model(r0, 1.0)
    plain = abs(solve_interval(p, 0.0, b, 101).lam - exact)
    rich = abs(richardson_interval(p, 0.0, b, 101).lam - exact)
    assert rich < 1e-3 * plain


def test_quadratic_interval_b12():
    p = quadratic_model(0.25, 1.0)
    e = richardson_interval(p, 0.0, 12.0, 1201)
    assert e.lam == pytest.approx(math.sqrt(0.5) - 1, abs=1e-6)


@pytest.mark.parametrize("A,B", [(0.25, 1.0), (1.0, 0.0), (0.04, 2.0), (0.5, 0.3)])
def test_line_closed_form(A, B):
    p = quadratic_model(A, B)
    e = solve_line(p, h=0.05)
    lam, gam = closed_form_quadratic(A, B)
    assert e.lam == pytest.approx(lam, abs=1e-6)
    z = e.z
    m = np.abs(z) <= 5
    np.testing.assert_allclose(e.gamma[m], gam(z[m]), atol=1e-5)


def test_line_profile_routes_agree():
    p = quadratic_model(0.25, 1.0)
    lam_exact, f_exact = line_profile(p, 0.05)
    lam_num, f_num = line_profile(p, 0.05, exact=False, h=0.05)
    assert lam_num == pytest.approx(lam_exact, abs=1e-7)
    z = np.linspace(-4, 4, 33)
    np.testing.assert_allclose(f_num(z), f_exact(z), atol=1e-6)


def test_marginal_point_is_zero():
    assert solve_line(quadratic_model(1.0, 0.0), h=0.05).lam == pytest.approx(0.0, abs=1e-8)


def test_gaussian_tail_envelope():
    p = quadratic_model(0.25, 1.0)
    e = solve_line(p, p.delta / 2, h=0.05)
    _, _, viol = gaussian_tail_check(e, p)
    assert viol == 0


def test_box_2d_flat_potential():
    e = solve_box_2d(constant_model(0.0, 0.0), 3.0, 61)
    assert e.mu == pytest.approx(2 * (math.pi / 6) ** 2, rel=2e-3)
    assert np.all(e.upsilon[1:-1, 1:-1] > 0)


def test_box_2d_decreasing_and_above_line_value():
    p = quadratic_model(0.25, 1.0)
    mus = [solve_box_2d(p, R, 4 * int(R) * 2 + 1).mu for R in (4, 6, 8)]
    assert mus[0] > mus[1] > mus[2] > math.sqrt(0.5) - 1


def test_minimal_speed_examples():
    assert minimal_speed(-2.0, 1.0) == pytest.approx(2.0)
    assert minimal_speed(math.sqrt(0.5) - 1, 1.0) == pytest.approx(2 * math.sqrt((1 - math.sqrt(0.5)) / 2))
    assert minimal_speed(0.0, 0.5) == 0.0
    assert isinstance(minimal_speed(0.1, 0.0), Extinct)


@pytest.mark.parametrize("A,B,kind", [(2.0, 0.0, Extinct), (0.5, 0.0, Invading), (0.5, 1.0, Marginal),
                                      (1.0, 0.0, Marginal), (0.25, 1.0, Invading)])
def test_classify(A, B, kind):
    assert isinstance(classify(quadratic_model(A, B), h=0.05), kind)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 1.5), st.floats(0.0, 2.5), st.floats(3.0, 6.0), st.floats(0.0, 0.9))
def test_monotone_in_b_and_nu(A, B, b, frac):
    p = quadratic_model(A, B)
    nu = frac * p.delta
    small = solve_interval(p, nu, b, 2 * int(20 * b) + 1)
    big = solve_interval(p, nu, 1.5 * b, 2 * int(30 * b) + 1)
    assert big.lam < small.lam
    # raising nu lowers the potential, hence the eigenvalue
    assert solve_interval(p, 0.0, b, 2 * int(20 * b) + 1).lam >= small.lam - 1e-12
