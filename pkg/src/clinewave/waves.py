"""Travelling-wave profiles of the nonlocal equation in the moving frame.

Minimal-speed waves are built in a box ``(-a, a) x (-b, b)``.  The left edge
carries the confined eigenfunction, the other edges are zero, and the speed
``c`` is an unknown fixed by ``u(0, 0) = eps``.  The solver starts from a
local logistic problem (``tau = 0``), pins the speed there by bisection, and
then continues in ``tau`` to the nonlocal equation (``tau = 1``):

    -E(u) - c u_x = (r - tau K u - gamma (1 - tau) u) u.

Faster waves (``c > c*``) come from a fixed-point iteration bracketed by
explicit sub- and supersolutions.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad, trapezoid
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import brentq
from scipy.sparse.linalg import splu

from .blocktri import BlockTridiagonalLU
from .discretize import (Grid1D, Grid2D, assemble_2d, assemble_dx, kernel_quadrature,
                         quadrature_weights)
from .eigen import Extinct, Invading, classify, line_profile, minimal_speed, solve_interval
from .model import ModelParams

log = logging.getLogger(__name__)

# fill-reducing ordering for 2D stencil matrices; far less fill than COLAMD
PERMC = "MMD_AT_PLUS_A"


class WaveSolverError(RuntimeError):
    pass


class ContinuationError(WaveSolverError):
    """Continuation in tau broke down; carries the last converged state."""

    def __init__(self, msg, last_tau, last_solution):
        super().__init__(msg)
        self.last_tau = last_tau
        self.last_solution = last_solution


class LadderError(WaveSolverError):
    def __init__(self, msg, c_history):
        super().__init__(msg)
        self.c_history = list(c_history)


class SandwichViolation(WaveSolverError):
    def __init__(self, msg, node, amount):
        super().__init__(msg)
        self.node = node
        self.amount = amount


# --------------------------------------------------------------------------
# result types

@dataclass(frozen=True)
class BoundCheck:
    """One a priori bound evaluated on a computed profile.

    ``slack`` is the amount by which ``value`` exceeds ``bound`` (zero when
    the bound holds); the check passes when the slack is within twice the
    discretization error estimate ``error``.
    """

    name: str
    value: float
    bound: float
    slack: float
    error: float

    @property
    def passed(self) -> bool:
        return self.slack <= 2.0 * self.error

    @classmethod
    def upper(cls, name, value, bound, error):
        value, bound = float(value), float(bound)
        return cls(name, value, bound, max(0.0, value - bound), float(error))

    @classmethod
    def lower(cls, name, value, bound, error):
        value, bound = float(value), float(bound)
        return cls(name, value, bound, max(0.0, bound - value), float(error))


@dataclass(frozen=True)
class DiagnosticReport:
    mass: np.ndarray
    mass_bound: float
    sup_bound: float | None
    tail_constant: float
    tail_violations: int
    speed_window: tuple[float, float]
    left_floor: float | None
    right_decay: dict
    checks: tuple[BoundCheck, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[BoundCheck]:
        return [c for c in self.checks if not c.passed]

    def summary(self) -> dict:
        return {c.name: {"value": c.value, "bound": c.bound, "slack": c.slack,
                         "error": c.error, "passed": c.passed} for c in self.checks}


@dataclass(frozen=True)
class HomotopyConfig:
    gamma: float = 1.0
    epsilon: float | None = None  # default 0.01 * M
    epsilon_ceiling: float | None = None  # default 0.1 * M
    tau_step: float = 0.25
    min_tau_step: float = 1e-4
    max_tau_step: float = 0.5
    residual_tol: float = 1e-8
    newton_tol: float = 1e-10
    max_newton: int = 15
    max_epsilon_halvings: int = 3
    small_tau: float = 0.5
    stage_one: str = "continuation"  # or "bisection"
    bisection_xtol: float = 1e-4  # the bordered Newton step then pins u(0,0) exactly

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.stage_one not in ("continuation", "bisection"):
            raise ValueError("stage_one must be 'continuation' or 'bisection'")
        if not 0 < self.min_tau_step <= self.tau_step <= self.max_tau_step <= 1:
            raise ValueError("need 0 < min_tau_step <= tau_step <= max_tau_step <= 1")


@dataclass(frozen=True)
class WaveSolution:
    c: float
    u: np.ndarray
    grid: Grid2D
    epsilon: float
    tau: float
    residual: float
    diagnostics: DiagnosticReport | None = None
    meta: dict = field(default_factory=dict)

    def interpolator(self):
        return RegularGridInterpolator((self.grid.x.nodes, self.grid.z.nodes), self.u,
                                       bounds_error=False, fill_value=0.0)


# --------------------------------------------------------------------------
# constants entering the a priori bounds

@dataclass(frozen=True)
class BoundConstants:
    """Confined eigenfunctions and the constants built from them on one grid."""

    boundary: np.ndarray  # Gamma_b^{delta/3} on the z nodes
    gamma_conf: np.ndarray  # Gamma_inf^{2 delta/3} on the z nodes
    lambda_conf: float
    C_bar: float
    gamma_conf_sup: float
    mass_gamma_conf: float  # integral over the line of Gamma_inf^{2 delta/3}
    beta: float
    max_r: float
    k_lower: float
    k_upper: float

    def sup_bound(self, gamma: float) -> float:
        """``max(2 max r / gamma, C_bar ||Gamma^{2delta/3}||)``: the local-problem bound."""
        return max(2.0 * self.max_r / gamma, self.C_bar * self.gamma_conf_sup)

    @property
    def mass_bound(self) -> float:
        return max(2.0 * self.max_r / self.k_lower, self.C_bar * self.mass_gamma_conf)


def boundary_profile(p: ModelParams, b: float, n: int) -> np.ndarray:
    """Left-edge data: the Dirichlet eigenfunction for ``nu = delta/3`` on (-b, b)."""
    return solve_interval(p, p.delta / 3.0, b, n).gamma


def bound_constants(p: ModelParams, zgrid: Grid1D) -> BoundConstants:
    nu2 = 2.0 * p.delta / 3.0
    bnd = boundary_profile(p, zgrid.hi, zgrid.n)
    lam2, prof = line_profile(p, nu2)
    z = zgrid.nodes
    g2 = np.asarray(prof(z), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(g2 > 0, bnd / g2, 0.0)
    C_bar = max(1.0, float(ratio.max()))
    zz = np.linspace(-60.0, 60.0, 24001) if math.isinf(p.growth.z_range[0]) else \
        np.linspace(*p.growth.z_range, 24001)
    gz = np.asarray(prof(zz), dtype=float)
    beta = max(1.0 / p.delta, math.sqrt(max(0.0, -3.0 * lam2 / (2.0 * p.delta))))
    return BoundConstants(
        boundary=bnd, gamma_conf=g2, lambda_conf=lam2, C_bar=C_bar,
        gamma_conf_sup=float(gz.max()), mass_gamma_conf=float(trapezoid(gz, zz)),
        beta=beta, max_r=float(p.growth.max_r),
        k_lower=float(p.kernel.lower), k_upper=float(p.kernel.upper))


# --------------------------------------------------------------------------
# discrete problem

class _BoxProblem:
    """Residual and Jacobian of the tau-family on a fixed box grid."""

    def __init__(self, p: ModelParams, g: Grid2D, gamma: float, left: np.ndarray,
                 cross: str = "auto"):
        self.p, self.g, self.gamma = p, g, gamma
        self.op0 = assemble_2d(g, p, 0.0, cross=cross, check_peclet=False)
        self.dx = assemble_dx(g)
        self.m = g.n_z - 2
        self.N = g.n_x - 2
        self.r = np.tile(np.asarray(p.r(g.z.interior), dtype=float), self.N)
        Kw = kernel_quadrature(g.z, p)
        self.K = Kw[1:-1, 1:-1]
        self.bc = np.zeros(g.shape)
        self.bc[0, :] = left
        self.origin = (g.n_x // 2 - 1) * self.m + (g.n_z // 2 - 1)
        self._bnd0 = self.op0.boundary @ self.bc.ravel()
        self._bndx = self.dx.boundary @ self.bc.ravel()

    def full(self, U):
        u = self.bc.copy()
        u[1:-1, 1:-1] = U.reshape(self.N, self.m)
        return u

    def check_peclet(self, c):
        if abs(c) * self.g.hx / 2.0 >= 1.0:
            raise WaveSolverError(f"speed {c:g} too large for hx={self.g.hx:g} (cell Peclet >= 1)")

    def nonlocal_term(self, U):
        return (U.reshape(self.N, self.m) @ self.K.T).ravel()

    def residual(self, U, c, tau):
        lin = self.op0.matrix @ U + self._bnd0 - c * (self.dx.matrix @ U + self._bndx)
        KU = self.nonlocal_term(U) if tau else 0.0
        return lin - (self.r - tau * KU - self.gamma * (1.0 - tau) * U) * U

    def d_dc(self, U):
        return -(self.dx.matrix @ U + self._bndx)

    def sparse_jacobian(self, U, c, tau):
        KU = self.nonlocal_term(U) if tau else 0.0
        diag = -(self.r - tau * KU - 2.0 * self.gamma * (1.0 - tau) * U)
        return self.op0.matrix - c * self.dx.matrix + sp.diags(diag)

    def factor(self, U, c, tau):
        S = self.sparse_jacobian(U, c, tau)
        if tau == 0:
            return _SparseLU(S)
        dense = tau * U.reshape(self.N, self.m)[:, :, None] * self.K[None, :, :]
        return BlockTridiagonalLU(S, self.m, dense)


class _SparseLU:
    def __init__(self, A):
        self._lu = splu(sp.csc_matrix(A), permc_spec=PERMC)

    def solve(self, rhs):
        return self._lu.solve(np.asarray(rhs, dtype=float))


def _newton_fixed_c(prob: _BoxProblem, U, c, tau, tol, maxit=80, dt0=1.0):
    """Newton at fixed speed, globalized by pseudo-transient continuation.

    Each step solves ``(J + I/dt) dU = -F``; ``dt`` grows with the residual
    ratio (switched evolution relaxation), so far from the solution the
    iteration behaves like implicit time stepping towards the steady state
    and close to it like Newton.  Steps producing negative values are
    retried with a smaller ``dt``.
    """
    dt = dt0
    F = prob.residual(U, c, tau)
    res = float(np.max(np.abs(F)))
    floor = -1e-12 * max(1.0, float(np.max(np.abs(U))))
    for _ in range(maxit):
        if res <= tol:
            return U, res
        J = prob.sparse_jacobian(U, c, tau)
        while True:
            shift = 0.0 if dt >= 1e12 else 1.0 / dt
            if tau:
                dense = tau * U.reshape(prob.N, prob.m)[:, :, None] * prob.K[None, :, :]
                fac = BlockTridiagonalLU(J + shift * sp.identity(U.size), prob.m, dense)
            else:
                fac = _SparseLU(J + shift * sp.identity(U.size))
            trial = U - fac.solve(F)
            if trial.min() >= floor or dt < 1e-6:
                break
            dt /= 10.0
        Ft = prob.residual(trial, c, tau)
        rt = float(np.max(np.abs(Ft)))
        dt = min(1e12, dt * min(100.0, max(0.5, res / max(rt, 1e-300))))
        U, F, res = trial, Ft, rt
    if res <= tol:
        return U, res
    raise WaveSolverError(f"Newton did not converge (residual {res:.3g})")


# --------------------------------------------------------------------------
# local problem (tau = 0)

@dataclass(frozen=True)
class LocalSolution:
    c: float
    u: np.ndarray
    grid: Grid2D
    sweeps: int
    decreasing_in_x: bool


def _local_problem(p, g, gamma, consts=None, cross="auto"):
    consts = consts or bound_constants(p, g.z)
    return _BoxProblem(p, g, gamma, consts.boundary, cross=cross), consts


def _monotone_sweeps(prob: _BoxProblem, c, start, tol, max_sweeps, polish_at):
    """Shifted monotone scheme ``(L_c + s) u_{k+1} = (r - gamma u_k + s) u_k``.

    With ``s >= 2 gamma start - min r`` the right-hand side is nondecreasing
    in ``u_k`` on ``[0, start]``, so iterates from the constant supersolution
    decrease monotonically.  One factorization serves every sweep.
    """
    shift = max(0.0, 2.0 * prob.gamma * start - float(prob.r.min()))
    U = np.full(prob.N * prob.m, float(start))
    A = prob.op0.matrix - c * prob.dx.matrix + shift * sp.identity(U.size)
    lu = splu(sp.csc_matrix(A), permc_spec=PERMC)
    bnd = prob._bnd0 - c * prob._bndx
    prev = math.inf
    stall = 0
    for k in range(1, max_sweeps + 1):
        Unew = lu.solve((prob.r - prob.gamma * U + shift) * U - bnd)
        d = float(np.max(np.abs(Unew - U)))
        U = Unew
        if d <= polish_at * max(1.0, float(U.max())):
            return U, k
        if d < prev:
            stall = 0
        else:
            stall += 1
            if stall >= 50:
                raise WaveSolverError(f"monotone iteration stalled after {k} sweeps (|du|={d:.3g})")
        prev = d
    if polish_at <= tol:
        raise WaveSolverError(f"monotone iteration did not converge in {max_sweeps} sweeps")
    return U, max_sweeps


def solve_local(p: ModelParams, g: Grid2D, c: float, gamma: float = 1.0, *,
                tol: float = 1e-10, max_sweeps: int = 2000, polish: bool = True,
                initial: np.ndarray | None = None, consts: BoundConstants | None = None,
                cross: str = "auto", fallback: bool = True) -> LocalSolution:
    """Local logistic problem at fixed speed ``c``.

    The monotone scheme starts from the constant supersolution
    ``max(2 max r / gamma, C_bar ||Gamma^{2delta/3}||)`` and decreases towards
    the solution.  With ``polish`` the last stretch is done by Newton, which
    converges to the same (unique) positive solution.  ``initial`` (full
    field) skips the sweeps and goes straight to Newton; if that fails the
    monotone scheme is used.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    prob, consts = _local_problem(p, g, gamma, consts, cross)
    prob.check_peclet(c)
    U, sweeps = None, 0
    if initial is not None:
        try:
            U0 = np.asarray(initial, float)[1:-1, 1:-1].ravel()
            U, _ = _newton_fixed_c(prob, U0, c, 0.0, tol)
            if U.min() < 0:
                U = None
        except WaveSolverError:
            U = None
        if U is None and not fallback:
            raise WaveSolverError(f"Newton from the given initial profile failed at c={c:g}")
    if U is None:
        start = consts.sup_bound(gamma)
        U, sweeps = _monotone_sweeps(prob, c, start, tol, max_sweeps,
                                     1e-4 if polish else tol)
        if polish:
            U, _ = _newton_fixed_c(prob, U, c, 0.0, tol)
    u = prob.full(np.maximum(U, 0.0))
    dec = bool(np.all(np.diff(u[:, g.n_z // 2]) < 0))
    if not dec:
        log.warning("local solution at c=%g is not strictly decreasing in x", c)
    return LocalSolution(c, u, g, sweeps, dec)


# --------------------------------------------------------------------------
# continuation in tau

def _bordered_newton(prob: _BoxProblem, U, c, tau, eps, cfg: HomotopyConfig,
                     row: tuple[float, float] = (0.0, 1.0)):
    """Newton on (u, c) with one linear constraint ``a c + b u(0,0) = eps``.

    ``row = (a, b)``; the default pins ``u(0,0) = eps``.  Two solves with the
    same factorization give the update: ``y1 = J^-1 F``, ``y2 = J^-1 F_c``,
    ``dc = (b y1_o - g) / (a - b y2_o)`` and ``du = -y1 - dc y2``.
    Returns ``(U, c, residual)`` or ``None`` on failure.
    """
    o = prob.origin
    a, b = row

    def constraint(U_, c_):
        return a * c_ + b * U_[o] - eps

    mt = math.inf
    for _ in range(cfg.max_newton):
        F = prob.residual(U, c, tau)
        gval = constraint(U, c)
        res = float(np.max(np.abs(F)))
        fac = prob.factor(U, c, tau)
        y = fac.solve(np.column_stack([F, prob.d_dc(U)]))
        y1, y2 = y[:, 0], y[:, 1]
        den = a - b * y2[o]
        if abs(den) < 1e-300:
            return None
        dc = (b * y1[o] - gval) / den
        dU = -y1 - dc * y2
        step, merit = 1.0, max(res, abs(gval))
        while True:
            Ut, ct = U + step * dU, c + step * dc
            if abs(ct) * prob.g.hx / 2.0 < 1.0:
                Ft = prob.residual(Ut, ct, tau)
                mt = max(float(np.max(np.abs(Ft))), abs(constraint(Ut, ct)))
                if mt < merit or mt <= cfg.residual_tol:
                    break
            step /= 2
            if step < 1.0 / 256:
                return None
        U, c = Ut, ct
        small = float(np.max(np.abs(step * dU))) <= cfg.newton_tol * max(1.0, float(np.max(np.abs(U))))
        if mt <= cfg.residual_tol and (small or mt <= 1e-2 * cfg.residual_tol):
            break
    else:
        if not mt <= cfg.residual_tol:
            return None
    if U.min() < -1e-12 * max(1.0, float(U.max())):
        return None
    return U, c, mt


def _stage_one(p, g, gamma, eps, consts, c_star, xtol, cross):
    """Speed at tau = 0 such that the local solution has u(0,0) = eps.

    Local solutions at new speeds are warm-started by Newton from the
    nearest speed already solved, inserting intermediate speeds when the
    jump is too large; the monotone scheme is the last resort.
    """
    i0, j0 = g.origin
    cache: dict[float, LocalSolution] = {}

    def newton_from(c, src, depth):
        try:
            return solve_local(p, g, c, gamma, initial=cache[src].u, consts=consts,
                               cross=cross, fallback=False)
        except WaveSolverError:
            if depth == 0:
                return None
            mid = 0.5 * (c + src)
            s = newton_from(mid, src, depth - 1)
            if s is None:
                return None
            cache[mid] = s
            return newton_from(c, mid, depth - 1)

    def solve_at(c):
        s = None
        if cache:
            s = newton_from(c, min(cache, key=lambda k: abs(k - c)), 4)
        if s is None:
            s = solve_local(p, g, c, gamma, consts=consts, cross=cross)
        cache[c] = s
        return s.u[i0, j0] - eps

    c_max = 0.999 * 2.0 / g.hx
    lo, hi = 0.0, min(max(c_star, 0.1), c_max)
    f_lo = solve_at(lo)
    if f_lo <= 0:
        raise WaveSolverError(f"epsilon={eps:g} exceeds the standing local profile u(0,0)={f_lo + eps:g}")
    f_hi = solve_at(hi)
    while f_hi > 0:
        if hi >= c_max:
            raise WaveSolverError("could not bracket the tau=0 speed below the Peclet limit")
        lo, hi = hi, min(2.0 * hi, c_max)
        f_hi = solve_at(hi)
    c0 = brentq(solve_at, lo, hi, xtol=xtol)
    return c0, cache[min(cache, key=lambda k: abs(k - c0))]


def _stage_one_continuation(p, g, gamma, eps, consts, cfg, prob, cross):
    """Speed at tau = 0 by following the local branch until u(0,0) = eps.

    The branch ``c -> (u_c, c)`` of local solutions starts at the standing
    profile (c = 0), where ``u_c(0,0)`` is flat in ``c``, and turns nearly
    vertical close to the critical speed of the box.  Pseudo-arclength in
    the scaled plane ``(c / c_ref, u(0,0) / e0)`` follows both parts; once
    ``u(0,0)`` drops below ``eps`` the normalization is imposed directly.
    """
    loc = solve_local(p, g, 0.0, gamma, consts=consts, cross=cross)
    i0, j0 = g.origin
    o = prob.origin
    e0 = float(loc.u[i0, j0])
    if eps >= e0:
        raise WaveSolverError(f"epsilon={eps:g} exceeds the standing local profile u(0,0)={e0:g}")
    c_ref = max(0.1, 2.0 * math.sqrt(max(0.0, float(consts.max_r)) / p.diffusion_z))
    U, c = loc.u[1:-1, 1:-1].ravel().copy(), 0.0
    pts = [(U, c)]
    tangent = np.array([1.0, 0.0])  # (dc, du_o) in scaled units
    ds = 0.1
    for _ in range(2000):
        Up, cp = pts[-1]
        xp = np.array([cp / c_ref, Up[o] / e0])
        guess = xp + ds * tangent
        if len(pts) >= 2:
            Uq, cq = pts[-2]
            dist = np.hypot((cp - cq) / c_ref, (Up[o] - Uq[o]) / e0)
            Ug = Up + (ds / dist) * (Up - Uq)
        else:
            Ug = Up
        # constraint: tangent . (x - xp) = ds, written as a c + b u_o = rhs
        a, b = tangent[0] / c_ref, tangent[1] / e0
        rhs = ds + tangent @ xp
        out = _bordered_newton(prob, Ug, guess[0] * c_ref, 0.0, rhs, cfg, row=(a, b))
        if out is None:
            ds /= 2
            if ds < 1e-6:
                raise WaveSolverError("tau=0 branch following stalled")
            continue
        Un, cn, _ = out
        xn = np.array([cn / c_ref, Un[o] / e0])
        t = xn - xp
        tangent = t / np.hypot(*t)
        pts.append((Un, cn))
        if Un[o] <= eps:
            # interpolate between the last two points, then pin u(0,0) = eps
            w = (Up[o] - eps) / (Up[o] - Un[o])
            Ug = Up + w * (Un - Up)
            cg = cp + w * (cn - cp)
            out = _bordered_newton(prob, Ug, cg, 0.0, eps, cfg)
            if out is None:
                ds /= 4
                pts.pop()
                continue
            return out[1], out[0]
        ds = min(0.2, 1.5 * ds)
    raise WaveSolverError("tau=0 branch following did not reach the normalization value")


def solve_box_homotopy(p: ModelParams, g: Grid2D, cfg: HomotopyConfig = HomotopyConfig(), *,
                       classification=None, cross: str = "auto") -> WaveSolution:
    """Minimal-speed wave in the box ``g`` with normalization ``u(0,0) = eps``."""
    cls = classification or classify(p)
    if not isinstance(cls, Invading):
        raise WaveSolverError(f"no travelling wave: population is {cls.label}")
    consts = bound_constants(p, g.z)
    M = consts.sup_bound(cfg.gamma)
    eps = cfg.epsilon if cfg.epsilon is not None else 0.01 * M
    ceiling = cfg.epsilon_ceiling if cfg.epsilon_ceiling is not None else 0.1 * M
    if eps > ceiling:
        raise ValueError(f"epsilon={eps:g} above ceiling {ceiling:g}")
    prob = _BoxProblem(p, g, cfg.gamma, consts.boundary, cross=cross)

    last = None
    for attempt in range(cfg.max_epsilon_halvings + 1):
        if cfg.stage_one == "bisection":
            c0, loc = _stage_one(p, g, cfg.gamma, eps, consts, cls.c_star, cfg.bisection_xtol, cross)
            U = loc.u[1:-1, 1:-1].ravel().copy()
        else:
            c0, U = _stage_one_continuation(p, g, cfg.gamma, eps, consts, cfg, prob, cross)
        out = _bordered_newton(prob, U, c0, 0.0, eps, cfg)
        if out is None:
            raise WaveSolverError("Newton polish of the tau=0 solution failed")
        U, c, _ = out
        tau, dtau = 0.0, cfg.tau_step
        history = [(0.0, U, c)]
        failed = False
        while tau < 1.0:
            t_new = min(1.0, tau + dtau)
            if len(history) >= 2:
                (t1, U1, c1), (t2, U2, c2) = history[-2], history[-1]
                w = (t_new - t2) / (t2 - t1)
                Ug, cg = U2 + w * (U2 - U1), c2 + w * (c2 - c1)
            else:
                Ug, cg = U, c
            out = _bordered_newton(prob, Ug, cg, t_new, eps, cfg)
            if out is None and len(history) >= 2:
                out = _bordered_newton(prob, U, c, t_new, eps, cfg)
            if out is None:
                dtau /= 2
                if dtau < cfg.min_tau_step:
                    failed = True
                    break
                continue
            U, c, _ = out
            tau = t_new
            history.append((tau, U, c))
            log.info("tau=%.4g c=%.6g", tau, c)
            dtau = min(cfg.max_tau_step, 1.5 * dtau)
        if not failed:
            break
        last = WaveSolution(c, prob.full(U), g, eps, tau, float(np.max(np.abs(prob.residual(U, c, tau)))))
        if tau >= cfg.small_tau or attempt == cfg.max_epsilon_halvings:
            raise ContinuationError(
                f"continuation stalled at tau={tau:.4g} (step below {cfg.min_tau_step:g})", tau, last)
        eps /= 2.0
        log.warning("continuation failed at tau=%.3g; retrying with epsilon=%g", tau, eps)

    res = float(np.max(np.abs(prob.residual(U, c, 1.0))))
    u = prob.full(np.maximum(U, 0.0))
    diag = box_diagnostics(p, g, u, c, eps, cls.c_star, consts, cfg.gamma)
    return WaveSolution(c, u, g, eps, 1.0, res, diag,
                        meta={"c_tau0": c0, "tau_steps": len(history) - 1, "M": M})


def _interpolate_to(sol: WaveSolution, g: Grid2D) -> np.ndarray:
    """Previous profile on a new grid; to the left of the old box the old left column is kept."""
    X, Z = g.mesh()
    old = sol.grid
    Xc = np.maximum(X, -old.a)
    Zc = np.clip(Z, -old.b, old.b)
    vals = sol.interpolator()(np.stack([Xc, Zc], axis=-1))
    vals[X > old.a] = 0.0
    vals[np.abs(Z) > old.b] = 0.0
    return vals


def refine_to_strip(p: ModelParams, ladder: Sequence[Grid2D], cfg: HomotopyConfig = HomotopyConfig(),
                    *, tol: float = 0.01, cross: str = "auto") -> WaveSolution:
    """Minimal-speed estimate on a ladder of growing boxes.

    The first rung is solved by continuation; later rungs start Newton at
    ``tau = 1`` from the interpolated previous profile (falling back to
    continuation).  Stops once ``c`` changes by less than ``tol`` (relative)
    and the profile on ``x = 0`` by less than ``tol`` of its maximum.
    """
    if not ladder:
        raise ValueError("empty ladder")
    cls = classify(p)
    if not isinstance(cls, Invading):
        raise WaveSolverError(f"no travelling wave: population is {cls.label}")
    history = []
    sol = solve_box_homotopy(p, ladder[0], cfg, classification=cls, cross=cross)
    history.append(sol.c)
    for g in ladder[1:]:
        consts = bound_constants(p, g.z)
        prob = _BoxProblem(p, g, cfg.gamma, consts.boundary, cross=cross)
        guess = _interpolate_to(sol, g)
        guess[0, :] = consts.boundary
        out = _bordered_newton(prob, guess[1:-1, 1:-1].ravel(), sol.c, 1.0, sol.epsilon, cfg)
        if out is None:
            log.info("warm start failed on rung a=%g b=%g; continuing from tau=0", g.a, g.b)
            new = solve_box_homotopy(p, g, replace(cfg, epsilon=sol.epsilon),
                                     classification=cls, cross=cross)
        else:
            U, c, res = out
            u = prob.full(np.maximum(U, 0.0))
            diag = box_diagnostics(p, g, u, c, sol.epsilon, cls.c_star, consts, cfg.gamma)
            new = WaveSolution(c, u, g, sol.epsilon, 1.0,
                               float(np.max(np.abs(prob.residual(U, c, 1.0)))), diag)
        history.append(new.c)
        z = np.linspace(-min(g.b, sol.grid.b), min(g.b, sol.grid.b), 201)
        pts0 = np.column_stack([np.zeros_like(z), z])
        du = np.max(np.abs(new.interpolator()(pts0) - sol.interpolator()(pts0)))
        dc = abs(new.c - sol.c)
        sol = new
        if dc <= tol * abs(new.c) and du <= tol * float(new.u.max()):
            return replace(sol, meta={**sol.meta, "c_history": history})
    raise LadderError(f"strip ladder not converged; speeds {history}", history)


# --------------------------------------------------------------------------
# diagnostics

def _error_scale(u: np.ndarray) -> float:
    """Size of the leading truncation term: undivided second differences / 12."""
    dxx = np.abs(u[2:, :] - 2 * u[1:-1, :] + u[:-2, :]).max() if u.shape[0] > 2 else 0.0
    dzz = np.abs(u[:, 2:] - 2 * u[:, 1:-1] + u[:, :-2]).max() if u.shape[1] > 2 else 0.0
    return float(max(dxx, dzz)) / 12.0


def _left_floor(g: Grid2D, u: np.ndarray) -> float:
    """Largest nu with u >= nu on (-a, 0] x [-nu, nu] (restricted to grid nodes)."""
    x, z = g.x.nodes, g.z.nodes
    left = u[x <= 1e-12 * g.a]
    best = 0.0
    for zj in np.unique(np.abs(z)):
        if zj == 0:
            continue
        m = float(left[:, np.abs(z) <= zj + 1e-12].min())
        best = max(best, min(m, zj))
    return best


def _tail_check(u, g, consts: BoundConstants, edge_ratio: float):
    z = g.z.nodes
    inside = np.abs(z) <= consts.beta
    g2 = consts.gamma_conf
    gmin = float(g2[inside].min()) if inside.any() else float(g2.max())
    M_bar = max(edge_ratio, float(u.max()) / gmin)
    env = M_bar * g2[None, :]
    excess = float(np.max(u - env))
    viol = int(np.count_nonzero(u > env * (1 + 1e-12)))
    return M_bar, excess, viol


def _right_decay(g, u):
    x = g.x.nodes
    i0 = g.n_x // 2
    iq = int(np.argmin(np.abs(x - 0.75 * g.a)))
    w = quadrature_weights(g.z)
    mass = u @ w
    return {"x": float(x[iq]), "sup": float(u[iq].max()), "sup_at_0": float(u[i0].max()),
            "mass": float(mass[iq]), "mass_at_0": float(mass[i0])}


def box_diagnostics(p, g, u, c, eps, c_star, consts: BoundConstants, gamma) -> DiagnosticReport:
    err = _error_scale(u)
    wz = quadrature_weights(g.z)
    mass = u @ wz
    err_mass = err * 2.0 * g.b
    mb = consts.mass_bound
    M = consts.sup_bound(gamma)
    edge = consts.C_bar
    M_bar, excess, viol = _tail_check(u, g, consts, edge)
    floor = _left_floor(g, u)
    rd = _right_decay(g, u)
    i0, j0 = g.origin
    err_c = max(c_star, 1.0) * max(g.hx, g.hz) ** 2
    checks = (
        BoundCheck.upper("mass", mass.max(), mb, err_mass),
        BoundCheck.upper("sup", u.max(), M, err),
        BoundCheck.upper("gaussian_tail", excess, 0.0, err),
        BoundCheck.upper("normalization", abs(u[i0, j0] - eps), 0.0, 1e-9),
        BoundCheck.lower("speed_positive", c, 0.0, 0.0),
        BoundCheck.upper("speed_below_cstar", c, c_star, err_c),
        BoundCheck.lower("left_floor", floor, 0.0, 0.0),
        BoundCheck.upper("right_decay_sup", rd["sup"], 0.1 * rd["sup_at_0"], err),
        BoundCheck.upper("right_decay_mass", rd["mass"], 0.1 * rd["mass_at_0"], err_mass),
    )
    if floor <= 0:
        checks = checks[:6] + (BoundCheck("left_floor", 0.0, 0.0, 1.0, 0.0),) + checks[7:]
    return DiagnosticReport(mass, mb, M, M_bar, viol, (0.0, c_star), floor, rd, checks)


# --------------------------------------------------------------------------
# faster waves: explicit barriers

def _root_mu(c: float, c_star: float, D: float) -> float:
    q = c_star ** 2 * D / 4.0
    s = c * math.sqrt(D)
    disc = s * s - 4.0 * q
    return (-s + math.sqrt(max(disc, 0.0))) / 2.0


def decay_rate(p: ModelParams, c: float, *, lam: float | None = None) -> float:
    """Largest root mu < 0 of ``mu^2 + c sqrt(B^2+1) mu + c*^2 (B^2+1) / 4``."""
    lam = line_profile(p)[0] if lam is None else lam
    cs = minimal_speed(lam, p.B)
    if isinstance(cs, Extinct):
        raise ValueError("extinction regime: no minimal speed")
    if not c > cs:
        raise ValueError(f"c={c:g} must exceed c*={cs:g}")
    return _root_mu(c, cs, p.diffusion_z)


def supersolution_w(p: ModelParams, c: float, x, y):
    """``w(x, y) = exp(mu x) Gamma(sqrt(B^2+1) y)`` in the rotated frame."""
    mu = decay_rate(p, c)
    _, prof = line_profile(p)
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    return np.exp(mu * x) * prof(math.sqrt(p.diffusion_z) * y)


@dataclass(frozen=True)
class SubsolutionParams:
    mu: float
    eps: float
    rho: float
    C: float
    A: float
    A_min: float

    @property
    def positive_from(self) -> float:
        """h > 0 exactly for x > ln(A) / eps."""
        return math.log(self.A) / self.eps


def _rho(mu, eps, c, c_star, D):
    m = mu - eps
    return -(m * m + c * math.sqrt(D) * m + c_star ** 2 * D / 4.0)


def tilted_mass(p: ModelParams, mu: float) -> float:
    """``int exp(mu B z / sqrt(B^2+1)) Gamma(z) dz`` over the line."""
    _, prof = line_profile(p)
    s = mu * p.B / math.sqrt(p.diffusion_z)
    lo, hi = p.growth.z_range
    lo, hi = (max(lo, -80.0), min(hi, 80.0))
    val, _ = quad(lambda z: math.exp(s * z) * float(prof(z)), lo, hi, limit=400)
    return val


def subsolution_params(p: ModelParams, c: float, b: float, eps: float | None = None,
                       A: float | None = None) -> SubsolutionParams:
    """Admissible constants of the subsolution for half-width ``b``.

    ``eps`` must make ``rho > 0`` and keep ``mu + eps < 0``; ``A`` must exceed
    the threshold that puts ``{h > 0}`` inside the region where the
    subsolution inequality holds.
    """
    lam, _ = line_profile(p)
    cs = minimal_speed(lam, p.B)
    mu = decay_rate(p, c, lam=lam)
    D = p.diffusion_z
    gap = 2.0 * mu + c * math.sqrt(D)  # rho = eps * gap - eps^2
    if eps is None:
        eps = 0.5 * min(-mu, gap)
    if not mu + eps < 0:
        raise ValueError(f"need mu + eps < 0 (mu={mu:g}, eps={eps:g})")
    rho = _rho(mu, eps, c, cs, D)
    if not rho > 0:
        raise ValueError(f"need rho > 0 for eps={eps:g} (rho={rho:g})")
    C = p.kernel.upper * tilted_mass(p, mu)
    x_good = math.log(rho / C) / mu + p.B * b / math.sqrt(D)
    A_min = max(1.0, math.exp(eps * x_good))
    if A is None:
        A = A_min * (1.0 + 1e-9) if A_min > 1.0 else 1.0 + 1e-9
    if not A > 1.0:
        raise ValueError("need A > 1")
    if A < A_min:
        raise ValueError(f"A={A:g} below threshold {A_min:g}: {{h > 0}} leaves the good region")
    return SubsolutionParams(mu, eps, rho, C, A, A_min)


def subsolution_h(p: ModelParams, c: float, A_coeff: float, eps_exp: float, x, y):
    """``h(x, y) = (exp(mu x)/A - exp((mu - eps) x)) Gamma(sqrt(B^2+1) y)``."""
    mu = decay_rate(p, c)
    if not mu + eps_exp < 0:
        raise ValueError(f"need mu + eps < 0 (mu={mu:g}, eps={eps_exp:g})")
    lam, prof = line_profile(p)
    cs = minimal_speed(lam, p.B)
    if not _rho(mu, eps_exp, c, cs, p.diffusion_z) > 0:
        raise ValueError("need rho > 0: eps too large for this speed")
    if not A_coeff > 1:
        raise ValueError("need A > 1")
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    return (np.exp(mu * x) / A_coeff - np.exp((mu - eps_exp) * x)) * prof(math.sqrt(p.diffusion_z) * y)


def _sheared(p: ModelParams, X, Z):
    D = p.diffusion_z
    return math.sqrt(D) * X + p.B * Z / math.sqrt(D)


def barriers_xz(p: ModelParams, c: float, g: Grid2D, sub: SubsolutionParams):
    """``(h0, w)`` evaluated at the (x, z) nodes of ``g``."""
    X, Z = g.mesh()
    s = _sheared(p, X, Z)
    _, prof = line_profile(p)
    G = prof(Z)
    w = np.exp(sub.mu * s) * G
    h = (np.exp(sub.mu * s) / sub.A - np.exp((sub.mu - sub.eps) * s)) * G
    return np.maximum(h, 0.0), w


@dataclass(frozen=True)
class FastWaveConfig:
    eps_exp: float | None = None
    A: float | None = None
    damping: float = 0.5
    tol: float = 1e-11
    maxiter: int = 500
    sandwich_rtol: float = 1e-6
    residual_tol: float = 1e-8


def solve_fast_wave(p: ModelParams, c: float, g: Grid2D, cfg: FastWaveConfig = FastWaveConfig(),
                    *, cross: str = "auto") -> WaveSolution:
    """Wave with speed ``c > c*`` by Picard iteration between the barriers.

    Each iterate solves the linear problem ``(L_c - r + K v*) v = 0`` with the
    boundary values of ``h0``, is relaxed by ``damping`` and clipped to
    ``[h0, w]``.  The sandwich is checked on the (x, z) nodes; an unclipped
    iterate leaving it by more than ``sandwich_rtol`` (relative to ``w``)
    raises :class:`SandwichViolation`.
    """
    lam, _ = line_profile(p)
    cs = minimal_speed(lam, p.B)
    if isinstance(cs, Extinct):
        raise WaveSolverError("extinction regime: no travelling wave")
    if not c > cs:
        raise ValueError(f"c={c:g} must exceed c*={cs:g}")
    sub = subsolution_params(p, c, g.b, cfg.eps_exp, cfg.A)
    h0, w = barriers_xz(p, c, g, sub)
    op = assemble_2d(g, p, c, include_growth=True, cross=cross)
    N, m = g.n_x - 2, g.n_z - 2
    K = kernel_quadrature(g.z, p)[1:-1, 1:-1]
    bnd = op.boundary @ h0.ravel()
    lo, hi = h0[1:-1, 1:-1].ravel(), w[1:-1, 1:-1].ravel()
    scale = np.maximum(hi, 1e-300)
    V = lo.copy()
    A = op.matrix.tocsr()
    for k in range(1, cfg.maxiter + 1):
        pot = (V.reshape(N, m) @ K.T).ravel()
        Vn = splu(sp.csc_matrix(A + sp.diags(pot)), permc_spec=PERMC).solve(-bnd)
        over = (Vn - hi) / scale
        under = (lo - Vn) / scale
        worst = max(float(over.max()), float(under.max()))
        if worst > cfg.sandwich_rtol:
            idx = int(np.argmax(np.maximum(over, under)))
            i, j = divmod(idx, m)
            raise SandwichViolation(
                f"iterate {k} leaves [h0, w] by {worst:.3g} (relative) at node ({i + 1}, {j + 1})",
                (i + 1, j + 1), worst)
        Vn = (1.0 - cfg.damping) * V + cfg.damping * Vn
        Vn = np.clip(Vn, lo, hi)
        d = float(np.max(np.abs(Vn - V)))
        V = Vn
        if d <= cfg.tol * max(1.0, float(V.max())):
            break
    else:
        raise WaveSolverError(f"Picard iteration did not converge in {cfg.maxiter} steps (|dv|={d:.3g})")
    u = h0.copy()
    u[1:-1, 1:-1] = V.reshape(N, m)
    pot = (V.reshape(N, m) @ K.T).ravel()
    res = float(np.max(np.abs(A @ V + bnd + pot * V)))
    diag = fast_diagnostics(p, g, u, c, cs, sub, h0, w)
    i0, j0 = g.origin
    return WaveSolution(c, u, g, float(u[i0, j0]), 1.0, res, diag,
                        meta={"iterations": k, "mu": sub.mu, "eps_exp": sub.eps, "A": sub.A,
                              "A_min": sub.A_min, "h_positive_from": sub.positive_from})


def fast_diagnostics(p, g, u, c, c_star, sub: SubsolutionParams, h0, w) -> DiagnosticReport:
    err = _error_scale(u)
    wz = quadrature_weights(g.z)
    mass = u @ wz
    err_mass = err * 2.0 * g.b
    x = g.x.nodes
    C_mass = tilted_mass(p, sub.mu)
    mb = max(2.0 * p.growth.max_r / p.kernel.lower, C_mass)
    consts = bound_constants(p, g.z)
    with np.errstate(divide="ignore", invalid="ignore"):
        edge_vals = np.concatenate([u[0], u[-1], u[:, 0], u[:, -1]])
        edge_g = np.concatenate([consts.gamma_conf] * 2 + [np.full(g.n_x, consts.gamma_conf[0])] * 2)
        edge_ratio = float(np.max(np.where(edge_g > 0, edge_vals / edge_g, 0.0)))
    M_bar, excess, viol = _tail_check(u, g, consts, edge_ratio)
    rd = _right_decay(g, u)
    upper_excess = float(np.max(u - w))
    lower_excess = float(np.max(h0 - u))
    checks = (
        BoundCheck.upper("mass", mass[x <= 0].max() if np.any(x <= 0) else 0.0, mb, err_mass),
        BoundCheck.upper("mass_right", mass[x >= 0].max(), C_mass, err_mass),
        BoundCheck.upper("exponential_bound", upper_excess, 0.0, err),
        BoundCheck.upper("sandwich_lower", lower_excess, 0.0, err),
        BoundCheck.upper("gaussian_tail", excess, 0.0, err),
        BoundCheck.lower("speed_above_cstar", c, c_star, 0.0),
        BoundCheck.upper("right_decay_sup", rd["sup"], 0.1 * rd["sup_at_0"], err),
        BoundCheck.upper("right_decay_mass", rd["mass"], 0.1 * rd["mass_at_0"], err_mass),
    )
    return DiagnosticReport(mass, mb, None, M_bar, viol, (c_star, math.inf), None, rd, checks)


def w_residual(p: ModelParams, c: float, g: Grid2D, *, cross: str = "auto") -> float:
    """Sup norm of the discrete ``L w`` on interior nodes, ``w`` in (x, z) variables."""
    mu = decay_rate(p, c)
    _, prof = line_profile(p)
    X, Z = g.mesh()
    W = np.exp(mu * _sheared(p, X, Z)) * prof(Z)
    op = assemble_2d(g, p, c, include_growth=True, cross=cross)
    return float(np.max(np.abs(op.apply(W) / W[1:-1, 1:-1].ravel())))


# --------------------------------------------------------------------------
# change of frame

def rotate_frame(u: np.ndarray, g: Grid2D, B: float, x_nodes, y_nodes):
    """``v(x, y) = u((x - B y)/sqrt(B^2+1), sqrt(B^2+1) y)`` by bilinear interpolation.

    Returns ``(v, outside)``; sample points outside ``g`` are clamped to its
    edge and flagged in ``outside``.
    """
    D = B * B + 1.0
    Xq, Yq = np.meshgrid(np.asarray(x_nodes, float), np.asarray(y_nodes, float), indexing="ij")
    xs = (Xq - B * Yq) / math.sqrt(D)
    zs = math.sqrt(D) * Yq
    return _sample(u, g, xs, zs)


def unrotate_frame(v: np.ndarray, x_nodes, y_nodes, B: float, g: Grid2D):
    """Inverse of :func:`rotate_frame`: ``u(x, z) = v(sqrt(D) x + B z/sqrt(D), z/sqrt(D))``."""
    D = B * B + 1.0
    X, Z = g.mesh()
    xs = math.sqrt(D) * X + B * Z / math.sqrt(D)
    ys = Z / math.sqrt(D)
    x_nodes = np.asarray(x_nodes, float)
    y_nodes = np.asarray(y_nodes, float)
    interp = RegularGridInterpolator((x_nodes, y_nodes), v, method="linear")
    outside = (xs < x_nodes[0]) | (xs > x_nodes[-1]) | (ys < y_nodes[0]) | (ys > y_nodes[-1])
    pts = np.stack([np.clip(xs, x_nodes[0], x_nodes[-1]), np.clip(ys, y_nodes[0], y_nodes[-1])], -1)
    return interp(pts), outside


def _sample(u, g: Grid2D, xs, zs):
    x, z = g.x.nodes, g.z.nodes
    outside = (xs < x[0]) | (xs > x[-1]) | (zs < z[0]) | (zs > z[-1])
    interp = RegularGridInterpolator((x, z), u, method="linear")
    pts = np.stack([np.clip(xs, x[0], x[-1]), np.clip(zs, z[0], z[-1])], -1)
    return interp(pts), outside
