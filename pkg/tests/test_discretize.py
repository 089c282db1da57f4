import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clinewave.discretize import (Grid1D, Grid2D, GridError, GridTooCoarseError, assemble_1d,
                                  assemble_2d, assemble_dx, cross_stencil_monotone,
                                  kernel_quadrature, quadrature_weights)
from clinewave.model import quadratic_model

from conftest import constant_model


def test_grid_validation():
    with pytest.raises(GridError):
        Grid1D(-1.0, 1.0, 4)
    with pytest.raises(GridError):
        Grid2D(1.0, 1.0, 5, 2)
    g = Grid1D.symmetric(3.0, 7)
    assert g.nodes[g.center] == 0.0


def test_trapezoid_weights():
    w = quadrature_weights(Grid1D(0.0, 2.0, 3))
    np.testing.assert_allclose(w, [0.5, 1.0, 0.5])
    g = Grid1D(-1.3, 2.9, 41)
    assert quadrature_weights(g).sum() == pytest.approx(4.2, abs=1e-14)


def test_gaussian_quadrature():
    g = Grid1D(-8.0, 8.0, 1601)
    val = quadrature_weights(g) @ np.exp(-g.nodes ** 2)
    assert val == pytest.approx(math.sqrt(math.pi) * math.erf(8.0), abs=1e-10)


def test_laplacian_1d_stencil():
    p = constant_model(0.0, B=0.0, half=10.0)
    op = assemble_1d(Grid1D(-2.0, 2.0, 5), p)
    np.testing.assert_allclose(op.diag, 2.0)
    np.testing.assert_allclose(op.offdiag, -1.0)
    op1 = assemble_1d(Grid1D(-2.0, 2.0, 5), constant_model(0.0, B=1.0))
    np.testing.assert_allclose(op1.diag, 4.0)
    np.testing.assert_allclose(op1.offdiag, -2.0)


def test_confined_potential_entries():
    p = quadratic_model(0.25, 1.0)
    g = Grid1D.symmetric(6.0, 61)
    nu = p.delta / 3
    op = assemble_1d(g, p, nu)
    z = g.interior
    D = p.diffusion_z / g.h ** 2
    np.testing.assert_allclose(op.diag - 2 * D, -(p.r(z) + nu * z * z), atol=1e-12)
    with pytest.raises(ValueError):
        assemble_1d(g, p, p.delta)


def _E_h(g, p, u, cross):
    """Discrete E(u) on interior nodes (the assembled operator is -E)."""
    return -assemble_2d(g, p, 0.0, cross=cross).apply(u).reshape(g.n_x - 2, g.n_z - 2)


@pytest.mark.parametrize("cross", ["seven_point", "four_point"])
@pytest.mark.parametrize("B", [0.5, 1.0])
def test_polynomial_exactness(cross, B):
    g = Grid2D(2.0, 2.0, 11, 11)
    p = quadratic_model(0.25, B)
    X, Z = g.mesh()
    np.testing.assert_allclose(_E_h(g, p, X * Z, cross), -2 * B, atol=1e-11)
    np.testing.assert_allclose(_E_h(g, p, X ** 2, cross), 2.0, atol=1e-11)
    np.testing.assert_allclose(_E_h(g, p, Z ** 2, cross), 2 * (B * B + 1), atol=1e-11)


def test_sin_sin_order():
    B = 1.0
    p = quadratic_model(0.25, B)
    errs = []
    for n in (21, 41, 81):
        g = Grid2D(2.0, 2.0, n, n)
        X, Z = g.mesh()
        u = np.sin(X) * np.sin(Z)
        exact = (-(1 + (B * B + 1)) * np.sin(X) * np.sin(Z) - 2 * B * np.cos(X) * np.cos(Z))[1:-1, 1:-1]
        errs.append(np.abs(_E_h(g, p, u, "seven_point") - exact).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9)


def test_seven_point_is_m_matrix():
    p = quadratic_model(0.25, 1.0)
    g = Grid2D.with_spacing(4.0, 3.0, 0.2, 0.2)
    assert cross_stencil_monotone(g, p.B)
    M = assemble_2d(g, p, 0.0).matrix.tocoo()
    off = M.data[M.row != M.col]
    assert np.all(off <= 0)
    assert not cross_stencil_monotone(Grid2D.with_spacing(4.0, 3.0, 0.2, 0.05), 1.0)


@pytest.mark.parametrize("c", [0.3, 0.77, 0.92])
def test_inverse_positive_with_advection(c):
    # at B hx = hz the x-neighbour weights vanish and advection makes one positive;
    # the matrix is no longer an M-matrix but its inverse stays nonnegative
    g = Grid2D.with_spacing(3.0, 2.0, 0.2, 0.2)
    M = assemble_2d(g, quadratic_model(0.25, 1.0), c).matrix.toarray()
    assert np.linalg.inv(M).min() >= -1e-14


def test_peclet_guard():
    g = Grid2D.with_spacing(4.0, 3.0, 0.5, 0.5)
    with pytest.raises(GridTooCoarseError):
        assemble_2d(g, quadratic_model(0.25, 1.0), 5.0)


def test_dx_exact_on_linear():
    g = Grid2D(2.0, 1.0, 9, 5)
    X, Z = g.mesh()
    np.testing.assert_allclose(assemble_dx(g).apply(3 * X + Z), 3.0, atol=1e-12)


def test_kernel_quadrature_constant():
    p = quadratic_model(0.25, 0.0, k=2.0)
    g = Grid1D.symmetric(3.0, 31)
    K = kernel_quadrature(g, p)
    assert K @ np.ones(g.n) == pytest.approx(np.full(g.n, 12.0))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 3.0), st.integers(2, 6), st.integers(2, 6))
def test_boundary_split_reassembles(B, mx, mz):
    """matrix @ interior + boundary @ full equals the stencil applied to the whole field."""
    g = Grid2D(1.0, 1.0, 2 * mx + 1, 2 * mz + 1)
    p = quadratic_model(0.25, B)
    rng = np.random.default_rng(mx * 10 + mz)
    u = rng.standard_normal(g.shape)
    op = assemble_2d(g, p, 0.1, cross="four_point")
    zero_bnd = u.copy()
    zero_bnd[0] = zero_bnd[-1] = 0
    zero_bnd[:, 0] = zero_bnd[:, -1] = 0
    only_bnd = u - zero_bnd
    np.testing.assert_allclose(op.apply(u), op.apply(zero_bnd) + op.boundary @ only_bnd.ravel(),
                               atol=1e-10)
