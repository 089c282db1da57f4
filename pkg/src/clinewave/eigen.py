"""Principal eigenvalues of the confined trait operator and of the 2D box.

The 1D problem is

    -(B^2+1) G'' - (r(z) + nu z^2) G = lam G,   G > 0,  G(0) = 1,

on an interval (-b, b) with Dirichlet ends, or on the whole line (obtained
as the limit of growing intervals).  Its value at ``nu = 0`` decides
extinction (``lam > 0``) against invasion (``lam < 0``) and fixes the
minimal speed ``c* = 2 sqrt(-lam / (B^2+1))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.interpolate import CubicSpline
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import splu

from .discretize import Grid1D, Grid2D, assemble_1d, assemble_2d
from .model import ModelParams, QuadraticGrowth


class EigenSolverError(RuntimeError):
    def __init__(self, msg: str, iterate: np.ndarray | None = None):
        super().__init__(msg)
        self.iterate = iterate


@dataclass(frozen=True)
class EigenPair:
    lam: float
    gamma: np.ndarray
    grid: Grid1D
    nu: float
    domain: Literal["interval", "line"] = "interval"
    residual: float = 0.0

    @property
    def z(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def b(self) -> float:
        return self.grid.hi

    def profile(self):
        """Callable interpolant of the eigenfunction (zero outside the grid)."""
        return _log_interpolant(self.z, self.gamma)


@dataclass(frozen=True)
class BoxEigenPair2D:
    mu: float
    upsilon: np.ndarray
    grid: Grid2D
    residual: float = 0.0

    @property
    def R(self) -> float:
        return self.grid.a


# --------------------------------------------------------------------------
# symmetric tridiagonal machinery

def sturm_count(diag: np.ndarray, off2: np.ndarray, x: float) -> int:
    """Number of eigenvalues strictly below ``x`` (LDL^T inertia)."""
    d = diag.tolist()
    e2 = off2.tolist()
    tiny = 1e-300
    q = d[0] - x
    count = 0
    if q < 0:
        count += 1
    elif q == 0:
        q = -tiny
    for i in range(1, len(d)):
        q = d[i] - x - e2[i - 1] / q
        if q < 0:
            count += 1
        elif q == 0:
            q = -tiny
    return count


def _gershgorin(diag, off):
    a = np.abs(off)
    rad = np.zeros_like(diag)
    rad[:-1] += a
    rad[1:] += a
    return float(np.min(diag - rad)), float(np.max(diag + rad))


def _tridiag_apply(diag, off, v):
    # difference form: for constant off-diagonals the neighbour differences
    # cancel exactly, which keeps the residual far below eps * ||T||
    if np.all(off == off[0]):
        dv = np.diff(np.concatenate(([0.0], v, [0.0])))
        return -off[0] * (dv[:-1] - dv[1:]) + (diag + 2.0 * off[0]) * v
    Tv = diag * v
    Tv[:-1] += off * v[1:]
    Tv[1:] += off * v[:-1]
    return Tv


def smallest_tridiagonal(diag: np.ndarray, off: np.ndarray, *, rtol: float = 1e-6,
                         maxiter: int = 60, residual_tol: float = 1e-10):
    """Smallest eigenpair of a symmetric tridiagonal matrix with negative off-diagonal.

    Sturm bisection brackets the eigenvalue, inverse iteration shifted to the
    bracket's lower end (where the shifted matrix is an M-matrix) recovers a
    positive eigenvector, and the Rayleigh quotient gives the eigenvalue.
    """
    n = diag.size
    off2 = off * off
    lo, hi = _gershgorin(diag, off)
    scale = max(abs(lo), abs(hi), 1.0)
    lo -= 1e-12 * scale
    # keep count(lo) == 0 and count(hi) >= 1; insist on a bracket isolating lam_1
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        k = sturm_count(diag, off2, mid)
        if k == 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= rtol * max(abs(lo), abs(hi), 1e-3) and sturm_count(diag, off2, hi) == 1:
            break
    ab = np.zeros((3, n))
    ab[0, 1:] = off
    ab[1] = diag - lo
    ab[2, :-1] = off
    v = np.ones(n)
    lam = 0.5 * (lo + hi)
    res = math.inf
    # on fine grids ||T|| ~ 1/h^2 and the residual cannot drop below a few
    # ulps of ||T||; accept that floor when it exceeds the requested tolerance
    norm_t = float(np.max(np.abs(diag) + np.abs(np.r_[off, 0.0]) + np.abs(np.r_[0.0, off])))
    tol = max(residual_tol, 64.0 * np.finfo(float).eps * norm_t)
    for _ in range(maxiter):
        v = solve_banded((1, 1), ab, v, check_finite=False)
        v /= np.max(np.abs(v))
        Tv = _tridiag_apply(diag, off, v)
        lam = float(v @ Tv / (v @ v))
        res = float(np.max(np.abs(Tv - lam * v)))
        if res <= tol:
            break
    else:
        raise EigenSolverError(f"inverse iteration stalled (residual {res:.3g})", iterate=v)
    return lam, v, res


# --------------------------------------------------------------------------
# 1D problems

def solve_interval(p: ModelParams, nu: float = 0.0, b: float = 8.0, n: int = 801,
                   *, residual_tol: float = 1e-10) -> EigenPair:
    """Principal Dirichlet eigenpair on (-b, b) with ``n`` nodes."""
    g = Grid1D.symmetric(b, n)
    op = assemble_1d(g, p, nu)
    lam, v, res = smallest_tridiagonal(op.diag, op.offdiag, residual_tol=residual_tol)
    gamma = np.zeros(n)
    gamma[1:-1] = v
    if np.any(v <= 0):
        raise EigenSolverError("eigenvector lost positivity", iterate=v)
    gamma /= gamma[g.center]
    return EigenPair(lam, gamma, g, nu, "interval", res)


def richardson_interval(p: ModelParams, nu: float, b: float, n: int) -> EigenPair:
    """One Richardson step over h: combine grids with ``n`` and ``2n - 1`` nodes.

    The returned eigenfunction lives on the coarse grid.  Where the two
    discrete tails disagree by more than the extrapolation can repair (deep in
    the Gaussian tail) the fine-grid value is kept so positivity is preserved.
    """
    coarse = solve_interval(p, nu, b, n)
    fine = solve_interval(p, nu, b, 2 * n - 1)
    lam = (4.0 * fine.lam - coarse.lam) / 3.0
    gf = fine.gamma[::2]
    gc = coarse.gamma
    gx = (4.0 * gf - gc) / 3.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = np.abs(gf - gc) <= 0.5 * gf
    gamma = np.where(ok & (gx > 0), gx, gf)
    gamma[0] = gamma[-1] = 0.0
    return EigenPair(lam, gamma, coarse.grid, nu, "interval", max(coarse.residual, fine.residual))


def _max_half_width(p: ModelParams) -> float:
    lo, hi = p.growth.z_range
    return min(-lo, hi)


def solve_line(p: ModelParams, nu: float = 0.0, tol: float = 1e-10, *, h: float = 0.02,
               b0: float = 4.0, b_max: float = 64.0, richardson: bool = True,
               tail_tol: float = 1e-10) -> EigenPair:
    """Whole-line principal eigenpair as the limit of doubling intervals.

    Stops once two successive half-widths agree to ``tol`` (relative to
    ``max(1, |lam|)``) and the eigenfunction next to the truncation boundary is
    below ``tail_tol`` of its maximum.
    """
    b_cap = min(b_max, _max_half_width(p))
    solve = richardson_interval if richardson else solve_interval

    def at(b):
        g = Grid1D.with_spacing(b, h)
        return solve(p, nu, g.hi, g.n)

    b = min(b0, b_cap)
    prev = at(b)
    while True:
        b_next = 2.0 * b
        if b_next > b_cap * (1 + 1e-12):
            if b < b_cap * (1 - 1e-12):
                b_next = b_cap
            else:
                raise EigenSolverError(
                    f"line eigenvalue not converged by b={b:g} (cap {b_cap:g})", iterate=prev.gamma)
        cur = at(b_next)
        tail = max(cur.gamma[1], cur.gamma[-2]) / cur.gamma.max()
        if abs(cur.lam - prev.lam) <= tol * max(1.0, abs(prev.lam)) and tail <= tail_tol:
            return EigenPair(cur.lam, cur.gamma, cur.grid, nu, "line", cur.residual)
        prev, b = cur, b_next


def closed_form_quadratic(A: float, B: float, rmax: float = 1.0, nu: float = 0.0):
    """Exact line eigenpair for r = rmax - A z^2 (shifted by nu z^2)."""
    Aeff = A - nu
    D = B * B + 1.0
    lam = math.sqrt(Aeff * D) - rmax
    kappa = math.sqrt(Aeff / D)
    return lam, (lambda z: np.exp(-kappa * np.asarray(z, float) ** 2 / 2.0))


def line_profile(p: ModelParams, nu: float = 0.0, *, exact: bool = True, **kw):
    """Return ``(lam, callable)`` for the line eigenpair.

    Quadratic growth profiles use the closed form unless ``exact`` is False.
    """
    if exact and isinstance(p.growth, QuadraticGrowth):
        return closed_form_quadratic(p.growth.A, p.B, p.growth.rmax, nu)
    pair = solve_line(p, nu, **kw)
    return pair.lam, pair.profile()


def _log_interpolant(z: np.ndarray, g: np.ndarray):
    pos = g > 0
    cs = CubicSpline(z[pos], np.log(g[pos]))
    lo, hi = z[pos][0], z[pos][-1]

    def f(zz):
        zz = np.asarray(zz, dtype=float)
        out = np.exp(cs(np.clip(zz, lo, hi)))
        return np.where((zz < lo) | (zz > hi), 0.0, out)

    return f


def gaussian_tail_check(pair: EigenPair, p: ModelParams):
    """Compare a line eigenfunction with its Gaussian envelope beyond zbar = sqrt(6)/delta.

    Returns ``(C, zbar, violations)`` where ``C`` is fitted at ``zbar`` so
    that ``C exp(-sqrt(delta/(B^2+1)) z^2 / (2 sqrt 6))`` touches the
    eigenfunction there.  Samples at round-off level are not counted.
    """
    zbar = math.sqrt(6.0) / p.delta
    k = math.sqrt(p.delta / p.diffusion_z) / (2.0 * math.sqrt(6.0))
    z = pair.z
    f = pair.profile()
    C = float(max(f(zbar), f(-zbar))) * math.exp(k * zbar ** 2)
    outside = np.abs(z) >= zbar
    env = C * np.exp(-k * z ** 2)
    # below ~1e-14 of the peak the eigenvector is round-off, not tail
    floor = 64.0 * np.finfo(float).eps * float(pair.gamma.max())
    viol = int(np.count_nonzero(pair.gamma[outside] > env[outside] * (1 + 1e-9) + floor))
    return C, zbar, viol


# --------------------------------------------------------------------------
# 2D box

def solve_box_2d(p: ModelParams, R: float, n: int, *, tol: float = 1e-8,
                 maxiter: int = 400, cross: str = "auto") -> BoxEigenPair2D:
    """Principal Dirichlet eigenpair of ``-E - r`` on the square (-R, R)^2.

    Shifted inverse power iteration: the shift starts below the spectrum
    (at ``-max r``) and is raised towards the Rayleigh quotient once it
    settles.  If the iterate loses positivity the solve is retried with the
    safe shift only.
    """
    g = Grid2D(R, R, n, n)
    op = assemble_2d(g, p, 0.0, include_growth=True, cross=cross)
    A = op.matrix.tocsc()
    eye = sp.identity(A.shape[0], format="csc")
    safe_shift = -float(p.growth.max_r) - 1e-3

    def iterate(accelerate: bool):
        sigma = safe_shift
        lu = splu(sp.csc_matrix(A - sigma * eye), permc_spec="MMD_AT_PLUS_A")
        v = np.ones(A.shape[0])
        mu, res = math.inf, math.inf
        for _ in range(maxiter):
            v = lu.solve(v)
            v /= v[np.argmax(np.abs(v))]
            Av = A @ v
            mu_new = float(v @ Av / (v @ v))
            res = float(np.max(np.abs(Av - mu_new * v)))
            if res <= tol:
                return mu_new, v, res
            settled = abs(mu_new - mu) <= 1e-3 * max(1.0, abs(mu_new))
            if accelerate and settled and sigma < mu_new - 2e-6 * max(1.0, abs(mu_new)):
                sigma = mu_new - 1e-6 * max(1.0, abs(mu_new))
                lu = splu(sp.csc_matrix(A - sigma * eye), permc_spec="MMD_AT_PLUS_A")
            mu = mu_new
        raise EigenSolverError(f"box eigen-iteration stalled (residual {res:.3g})", iterate=v)

    mu, v, res = iterate(accelerate=True)
    if np.any(v <= 0):
        mu, v, res = iterate(accelerate=False)
        if np.any(v <= 0):
            raise EigenSolverError("box eigenvector not positive", iterate=v)
    ups = op.to_full(v)
    i0, j0 = g.origin
    ups /= ups[i0, j0]
    return BoxEigenPair2D(mu, ups, g, res)


# --------------------------------------------------------------------------
# speed and classification

@dataclass(frozen=True)
class Extinct:
    lambda_inf: float
    label: str = field(default="extinct", init=False)


@dataclass(frozen=True)
class Marginal:
    lambda_inf: float
    label: str = field(default="marginal", init=False)


@dataclass(frozen=True)
class Invading:
    lambda_inf: float
    c_star: float
    label: str = field(default="invading", init=False)


Classification = Extinct | Marginal | Invading


def minimal_speed(lambda_inf_0: float, B: float) -> float | Extinct:
    """``c* = 2 sqrt(-lam / (B^2+1))``; an :class:`Extinct` marker when ``lam > 0``."""
    if lambda_inf_0 > 0:
        return Extinct(lambda_inf_0)
    return 2.0 * math.sqrt(-lambda_inf_0 / (B * B + 1.0))


def classify(p: ModelParams, tol: float = 1e-7, **line_kw) -> Classification:
    lam = solve_line(p, 0.0, **line_kw).lam
    if abs(lam) <= tol:
        return Marginal(lam)
    if lam > 0:
        return Extinct(lam)
    return Invading(lam, minimal_speed(lam, p.B))
