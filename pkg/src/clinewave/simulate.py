"""Time-dependent solutions of the moving-frame equation

    d_t n - E(n) = (r(z) - int k(z, z') n(x, z') dz') n

on a truncated box with homogeneous Dirichlet data.  Linear terms are
implicit and the nonlocal competition explicit, so every step is one
triangular solve with a factorization reused across steps.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .discretize import Grid2D, assemble_2d, cross_stencil_monotone, kernel_quadrature, \
    quadrature_weights
from .eigen import Extinct, Invading, classify, solve_interval
from .model import ModelParams


class SimulationError(RuntimeError):
    pass


class InstabilityError(SimulationError):
    pass


class DomainTooSmallError(SimulationError):
    pass


class UnderflowError(SimulationError):
    pass


@dataclass(frozen=True)
class StepScheme:
    """Semi-implicit step.

    ``implicit_growth=True`` treats ``E + r`` implicitly and only the
    competition term explicitly; this is positivity preserving whenever
    ``dt max r < 1``.  With ``False`` only ``E`` is implicit (growth explicit),
    which needs ``dt <= 1 / max(-r)`` on the box to avoid clipping.
    """

    dt: float
    implicit_growth: bool = True
    cross: str = "auto"
    boundary: str = "dirichlet"
    blowup: float = 1e6
    clip_tol: float = 1e-12

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.boundary != "dirichlet":
            raise ValueError("only homogeneous Dirichlet boundaries are supported")


@dataclass(frozen=True)
class SimState:
    t: float
    field: np.ndarray
    grid: Grid2D
    front: tuple[tuple[float, float], ...] = ()
    norm: tuple[tuple[float, float], ...] = ()
    clipped: float = 0.0  # total mass removed by clipping so far

    def __post_init__(self):
        if self.field.shape != self.grid.shape:
            raise ValueError("field shape does not match the grid")


def total_mass(field: np.ndarray, g: Grid2D) -> float:
    return float(quadrature_weights(g.x) @ field @ quadrature_weights(g.z))


@functools.lru_cache(maxsize=8)
def _factorized(g: Grid2D, p: ModelParams, dt: float, implicit_growth: bool, cross: str):
    op = assemble_2d(g, p, 0.0, include_growth=implicit_growth, cross=cross)
    n = op.matrix.shape[0]
    A = sp.identity(n, format="csc") + dt * op.matrix
    return splu(sp.csc_matrix(A), permc_spec="MMD_AT_PLUS_A"), op


def _check_scheme(g: Grid2D, p: ModelParams, sch: StepScheme):
    if sch.implicit_growth and sch.dt * float(p.growth.max_r) >= 1.0:
        raise ValueError("implicit growth needs dt * max r < 1 for a monotone step")
    if sch.cross == "auto" and p.B and not cross_stencil_monotone(g, p.B):
        # the four-point cross stencil is not monotone: positivity relies on clipping
        pass


def step(s: SimState, p: ModelParams, sch: StepScheme) -> SimState:
    """One semi-implicit step; negative values are clipped and the clipped mass recorded."""
    g = s.grid
    n = s.field
    if not np.all(np.isfinite(n)):
        raise InstabilityError("non-finite values in the field")
    _check_scheme(g, p, sch)
    lu, op = _factorized(g, p, sch.dt, sch.implicit_growth, sch.cross)
    K = kernel_quadrature(g.z, p)
    inner = n[1:-1, 1:-1]
    comp = (n @ K.T)[1:-1, 1:-1]
    if sch.implicit_growth:
        rhs = inner * (1.0 - sch.dt * comp)
    else:
        r = np.asarray(p.r(g.z.interior), dtype=float)
        rhs = inner * (1.0 + sch.dt * (r[None, :] - comp))
    new = lu.solve(rhs.ravel())
    out = np.zeros_like(n)
    out[1:-1, 1:-1] = new.reshape(inner.shape)
    neg = out < 0
    clipped = 0.0
    if neg.any():
        clipped = -total_mass(np.where(neg, out, 0.0), g)
        out[neg] = 0.0
        mass = total_mass(out, g)
        if clipped > sch.clip_tol * max(mass, 1e-300):
            raise InstabilityError(
                f"clipped mass {clipped:.3g} exceeds {sch.clip_tol:g} of total {mass:.3g}; reduce dt")
    if out.max() > sch.blowup:
        raise InstabilityError(f"sup {out.max():.3g} > {sch.blowup:g}; reduce dt")
    return replace(s, t=s.t + sch.dt, field=out, clipped=s.clipped + clipped)


# --------------------------------------------------------------------------
# domains and initial data

def trait_half_width(p: ModelParams, level: float = 1e-12) -> float:
    """z-extent where the confined Gaussian envelope drops below ``level``.

    Uses ``Gamma^{2 delta/3}`` of a quadratic profile; tabulated profiles
    use their own range.
    """
    lo, hi = p.growth.z_range
    if math.isfinite(lo):
        return min(-lo, hi)
    A = p.growth.A - 2.0 * p.delta / 3.0
    kappa = math.sqrt(A / p.diffusion_z)
    return math.sqrt(2.0 * math.log(1.0 / level) / kappa)


def smooth_plateau(x: np.ndarray, left: float, right: float, width: float = 1.0) -> np.ndarray:
    return 0.25 * (1 + np.tanh((x - left) / width)) * (1 - np.tanh((x - right) / width))


def line_eigenfunction_on(g: Grid2D, p: ModelParams) -> tuple[float, np.ndarray]:
    """Dirichlet eigenpair on the z nodes of ``g`` (the discrete ``Gamma``)."""
    pair = solve_interval(p, 0.0, g.b, g.n_z)
    return pair.lam, pair.gamma


# --------------------------------------------------------------------------
# fits

@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r2: float
    n: int


def linear_fit(t: np.ndarray, y: np.ndarray) -> LinearFit:
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    if t.size < 3:
        raise SimulationError("fewer than three points in the fit window")
    A = np.column_stack([t, np.ones_like(t)])
    (slope, icpt), *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = slope * t + icpt
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return LinearFit(float(slope), float(icpt), r2, int(t.size))


def front_position(field: np.ndarray, g: Grid2D, theta: float) -> float:
    """Rightmost ``x`` with ``n(x, 0) >= theta``, linearly interpolated; NaN if none."""
    col = field[:, g.n_z // 2]
    idx = np.nonzero(col >= theta)[0]
    if idx.size == 0:
        return math.nan
    i = int(idx[-1])
    x = g.x.nodes
    if i == g.n_x - 1:
        return float(x[i])
    f0, f1 = col[i], col[i + 1]
    return float(x[i] + (f0 - theta) / (f0 - f1) * (x[i + 1] - x[i]))


# --------------------------------------------------------------------------
# runs

@dataclass(frozen=True)
class InvasionResult:
    state: SimState
    speed: float
    r2: float
    c_star: float
    theta: float
    series: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExtinctionResult:
    state: SimState
    rate: float
    r2: float
    lambda_inf: float
    nonincreasing: bool
    series: dict = field(default_factory=dict)


def invasion_grid(p: ModelParams, T: float, c_star: float, h: float = 0.25,
                  left: float = 15.0, margin: float = 12.0) -> tuple[Grid2D, float]:
    """Symmetric box long enough for the front to travel ``c* T``; returns (grid, x0)."""
    a = 0.5 * (left + c_star * T + margin)
    b = trait_half_width(p)
    g = Grid2D.with_spacing(a, b, h, h)
    return g, -g.a + left


def _record(times, series, s, g, extra):
    times.append(s.t)
    series["t"].append(s.t)
    series["mass"].append(total_mass(s.field, g))
    for k, v in extra.items():
        series[k].append(v)


def run_invasion(p: ModelParams, g: Grid2D, sch: StepScheme, T: float, theta: float = 0.01, *,
                 x0: float | None = None, amplitude: float = 0.1, output_interval: float = 0.5,
                 initial: np.ndarray | None = None, edge_margin: float = 5.0) -> InvasionResult:
    """Spread from a compact bump and fit the front speed on the last half of [0, T].

    The default initial datum is ``amplitude * plateau(x <= x0) * Gamma(z)``.
    """
    cls = classify(p)
    if not isinstance(cls, Invading):
        raise SimulationError(f"run_invasion needs an invading population, got {cls.label}")
    _, gam = line_eigenfunction_on(g, p)
    X, _ = g.mesh()
    if x0 is None:
        x0 = -g.a + 0.2 * (2 * g.a)
    if initial is None:
        initial = amplitude * smooth_plateau(X, -g.a + 3.0, x0) * gam[None, :]
    s = SimState(0.0, np.asarray(initial, float), g)
    nsteps = int(round(T / sch.dt))
    every = max(1, int(round(output_interval / sch.dt)))
    series = {"t": [], "front": [], "sup_ratio": [], "mass": []}
    fronts = []
    inner = gam > 0

    def ratio(f):
        return float(np.max(f[:, inner] / gam[inner]))

    for k in range(1, nsteps + 1):
        s = step(s, p, sch)
        if k % every == 0 or k == nsteps:
            xf = front_position(s.field, g, theta)
            if xf > g.a - edge_margin:
                raise DomainTooSmallError(f"front reached x={xf:.3g} at t={s.t:.3g} (box a={g.a:g})")
            fronts.append((s.t, xf))
            _record([], series, s, g, {"front": xf, "sup_ratio": ratio(s.field)})
    s = replace(s, front=tuple(fronts))
    t = np.array([f[0] for f in fronts])
    x = np.array([f[1] for f in fronts])
    win = (t >= 0.5 * T) & np.isfinite(x)
    fit = linear_fit(t[win], x[win])
    return InvasionResult(s, fit.slope, fit.r2, cls.c_star, theta, series)


def extinction_grid(p: ModelParams, h: float = 0.25, a: float = 40.0) -> Grid2D:
    return Grid2D.with_spacing(a, trait_half_width(p), h, h)


def run_extinction(p: ModelParams, g: Grid2D, sch: StepScheme, T: float, *,
                   output_interval: float = 0.25, initial: np.ndarray | None = None,
                   plateau: float | None = None, slack: float = 1e-10) -> ExtinctionResult:
    """Decay of ``sup n / Gamma`` and its exponential rate on the last half of [0, T].

    ``Gamma`` is the discrete Dirichlet eigenfunction on the simulation's z
    nodes.  The default initial datum is ``Gamma(z)`` times a smooth plateau
    in ``x`` covering most of the box.
    """
    cls = classify(p)
    if not isinstance(cls, Extinct):
        raise SimulationError(f"run_extinction needs an extinct regime, got {cls.label}")
    _, gam = line_eigenfunction_on(g, p)
    inner = gam > 0
    X, _ = g.mesh()
    if initial is None:
        half = plateau if plateau is not None else 0.6 * g.a
        initial = smooth_plateau(X, -half, half) * gam[None, :]
    s = SimState(0.0, np.asarray(initial, float), g)
    if not np.any(s.field > 0):
        return ExtinctionResult(s, math.nan, math.nan, cls.lambda_inf, True,
                                {"t": [], "sup_ratio": [], "mass": [], "rejected": "zero initial datum"})

    def ratio(f):
        return float(np.max(f[:, inner] / gam[inner]))

    nsteps = int(round(T / sch.dt))
    every = max(1, int(round(output_interval / sch.dt)))
    series = {"t": [0.0], "sup_ratio": [ratio(s.field)], "mass": [total_mass(s.field, g)]}
    norms = [(0.0, series["sup_ratio"][0])]
    for k in range(1, nsteps + 1):
        s = step(s, p, sch)
        if k % every == 0 or k == nsteps:
            q = ratio(s.field)
            if q <= 0 or not math.isfinite(q):
                raise UnderflowError(f"field underflowed at t={s.t:.3g}; shorten T")
            norms.append((s.t, q))
            _record([], series, s, g, {"sup_ratio": q})
    s = replace(s, norm=tuple(norms))
    t = np.array([v[0] for v in norms])
    q = np.array([v[1] for v in norms])
    noninc = bool(np.all(np.diff(q) <= slack * np.maximum(q[:-1], 1.0)))
    win = t >= 0.5 * T
    fit = linear_fit(t[win], np.log(q[win]))
    return ExtinctionResult(s, -fit.slope, fit.r2, cls.lambda_inf, noninc, series)
