"""Finite-difference grids and operators.

Unknowns on 2D grids are ordered with the trait index fastest, i.e. the
flat index of node ``(i, j)`` (x index ``i``, z index ``j``) is
``i * n_z + j``.  Dirichlet values are never unknowns: assembled matrices act
on interior nodes only and carry a separate coupling block to the boundary.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .model import ModelParams


class GridError(ValueError):
    pass


class GridTooCoarseError(GridError):
    """Cell Peclet number too large for centred advection."""


@dataclass(frozen=True)
class Grid1D:
    lo: float
    hi: float
    n: int

    def __post_init__(self):
        if not self.hi > self.lo:
            raise GridError("need hi > lo")
        if self.n < 3 or self.n % 2 == 0:
            raise GridError("node count must be odd and >= 3")

    @classmethod
    def symmetric(cls, b: float, n: int) -> "Grid1D":
        return cls(-b, b, n)

    @classmethod
    def with_spacing(cls, b: float, h: float) -> "Grid1D":
        """Symmetric grid on (-b, b) with spacing exactly ``h`` (b rounded to a multiple)."""
        m = max(1, int(round(b / h)))
        return cls(-m * h, m * h, 2 * m + 1)

    @property
    def h(self) -> float:
        return (self.hi - self.lo) / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.lo, self.hi, self.n)

    @property
    def interior(self) -> np.ndarray:
        return self.nodes[1:-1]

    @property
    def center(self) -> int:
        """Index of the node nearest to 0."""
        return int(np.argmin(np.abs(self.nodes)))


@dataclass(frozen=True)
class Grid2D:
    a: float
    b: float
    n_x: int
    n_z: int

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise GridError("box half-widths must be positive")
        for n in (self.n_x, self.n_z):
            if n < 3 or n % 2 == 0:
                raise GridError("node counts must be odd and >= 3")

    @classmethod
    def with_spacing(cls, a: float, b: float, hx: float, hz: float) -> "Grid2D":
        mx = max(1, int(round(a / hx)))
        mz = max(1, int(round(b / hz)))
        return cls(mx * hx, mz * hz, 2 * mx + 1, 2 * mz + 1)

    @property
    def x(self) -> Grid1D:
        return Grid1D(-self.a, self.a, self.n_x)

    @property
    def z(self) -> Grid1D:
        return Grid1D(-self.b, self.b, self.n_z)

    @property
    def hx(self) -> float:
        return 2 * self.a / (self.n_x - 1)

    @property
    def hz(self) -> float:
        return 2 * self.b / (self.n_z - 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_x, self.n_z)

    @property
    def origin(self) -> tuple[int, int]:
        return (self.n_x // 2, self.n_z // 2)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x.nodes, self.z.nodes, indexing="ij")

    def interior_mask(self) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[1:-1, 1:-1] = True
        return m

    def refined(self, factor: int = 2) -> "Grid2D":
        return Grid2D(self.a, self.b, factor * (self.n_x - 1) + 1, factor * (self.n_z - 1) + 1)


def quadrature_weights(g: Grid1D) -> np.ndarray:
    """Trapezoid weights on the nodes of ``g``; they sum to ``hi - lo``."""
    w = np.full(g.n, g.h)
    w[0] = w[-1] = 0.5 * g.h
    # remove the rounding drift so the sum is exact to the last bit we can get
    w *= (g.hi - g.lo) / w.sum()
    return w


@dataclass(frozen=True)
class OperatorMatrix:
    """Assembled operator on interior unknowns.

    ``matrix`` acts on interior values; ``boundary`` maps the full nodal
    field (flattened, boundary values included, interior ignored) to the
    contribution of Dirichlet data, so that the full operator applied to a
    field ``u`` is ``matrix @ u_int + boundary @ u_full``.
    """

    matrix: sp.csr_matrix
    boundary: sp.csr_matrix
    interior: np.ndarray
    shape: tuple[int, ...]
    coefficients: dict = field(default_factory=dict)
    diag: np.ndarray | None = None
    offdiag: np.ndarray | None = None

    def apply(self, u_full: np.ndarray) -> np.ndarray:
        """Operator applied to a full nodal field, returned on interior nodes."""
        flat = np.asarray(u_full, dtype=float).ravel()
        return self.matrix @ flat[self.interior] + self.boundary @ flat

    def to_full(self, values: np.ndarray) -> np.ndarray:
        """Scatter interior values into a zero full field."""
        out = np.zeros(int(np.prod(self.shape)))
        out[self.interior] = values
        return out.reshape(self.shape)


def assemble_1d(g: Grid1D, p: ModelParams, nu: float = 0.0) -> OperatorMatrix:
    """-(B^2+1) d_zz - (r(z) + nu z^2) with homogeneous Dirichlet ends."""
    if nu < 0:
        raise ValueError("nu must be >= 0")
    if nu >= p.delta:
        raise ValueError(f"nu={nu:g} >= delta={p.delta:g}: confinement lost")
    z = g.interior
    D = p.diffusion_z / g.h ** 2
    potential = np.asarray(p.r(z), dtype=float) + nu * z * z
    diag = 2.0 * D - potential
    off = np.full(z.size - 1, -D)
    M = sp.diags([off, diag, off], [-1, 0, 1], format="csr")
    n = g.n
    bnd = sp.csr_matrix((z.size, n))
    return OperatorMatrix(
        matrix=M, boundary=bnd, interior=np.arange(1, n - 1), shape=(n,),
        coefficients={"B": p.B, "nu": nu, "r": potential - nu * z * z},
        diag=diag, offdiag=off,
    )


def _split(full: sp.csr_matrix, interior: np.ndarray):
    """Split columns of a full-grid operator into interior and boundary parts."""
    ntot = full.shape[1]
    keep = np.ones(ntot, dtype=bool)
    keep[interior] = False
    A = full[:, interior].tocsr()
    D = sp.diags(keep.astype(float), format="csr")
    return A, (full @ D).tocsr()


def _full_index(g: Grid2D) -> np.ndarray:
    return np.arange(g.n_x * g.n_z).reshape(g.shape)


def cross_stencil_monotone(g: Grid2D, B: float) -> bool:
    """Whether the seven-point cross-derivative stencil keeps an M-matrix."""
    if B == 0:
        return True
    hx, hz = g.hx, g.hz
    return B * hx <= hz * (1 + 1e-12) and B * hz <= (B * B + 1) * hx * (1 + 1e-12)


def _stencil_entries(g: Grid2D, B: float, c: float, cross: str):
    """Offsets (di, dj) -> coefficient of -E(u) - c u_x."""
    hx, hz = g.hx, g.hz
    D = B * B + 1.0
    e = {(0, 0): 2.0 / hx ** 2 + 2.0 * D / hz ** 2,
         (1, 0): -1.0 / hx ** 2, (-1, 0): -1.0 / hx ** 2,
         (0, 1): -D / hz ** 2, (0, -1): -D / hz ** 2}
    if B != 0:
        if cross == "four_point":
            # +2B u_xz with u_xz ~ (u++ - u+- - u-+ + u--) / (4 hx hz)
            s = 2.0 * B / (4.0 * hx * hz)
            for k, v in {(1, 1): s, (-1, -1): s, (1, -1): -s, (-1, 1): -s}.items():
                e[k] = e.get(k, 0.0) + v
        elif cross == "seven_point":
            # u_xz ~ -(u+- + u-+ - u+0 - u-0 - u0+ - u0- + 2u00) / (2 hx hz);
            # for B > 0 this keeps every off-diagonal entry of -E non-positive
            s = 2.0 * B / (2.0 * hx * hz)
            for k, v in {(1, -1): -s, (-1, 1): -s, (1, 0): s, (-1, 0): s,
                         (0, 1): s, (0, -1): s, (0, 0): -2 * s}.items():
                e[k] = e.get(k, 0.0) + v
        else:
            raise ValueError(f"unknown cross stencil {cross!r}")
    if c != 0:
        e[(1, 0)] -= c / (2.0 * hx)
        e[(-1, 0)] += c / (2.0 * hx)
    return e


def resolve_cross(g: Grid2D, B: float, cross: str) -> str:
    if cross == "auto":
        return "seven_point" if cross_stencil_monotone(g, B) else "four_point"
    return cross


def assemble_2d(g: Grid2D, p: ModelParams, c: float = 0.0, *,
                include_growth: bool = False, cross: str = "auto",
                check_peclet: bool = True) -> OperatorMatrix:
    """Discrete ``-E(u) - c u_x`` (optionally ``- r(z) u``) on interior nodes.

    ``cross`` selects the mixed-derivative stencil: ``"four_point"``,
    ``"seven_point"`` or ``"auto"`` (seven-point whenever it keeps the
    matrix monotone for the given spacing, four-point otherwise).
    """
    if check_peclet and abs(c) * g.hx / 2.0 >= 1.0:
        raise GridTooCoarseError(
            f"cell Peclet |c| hx / 2 = {abs(c) * g.hx / 2:.3g} >= 1; refine the x grid")
    cross = resolve_cross(g, p.B, cross)
    entries = _stencil_entries(g, p.B, c, cross)
    idx = _full_index(g)
    nx, nz = g.shape
    ii, jj = np.meshgrid(np.arange(1, nx - 1), np.arange(1, nz - 1), indexing="ij")
    rows_full = idx[ii, jj].ravel()
    rows, cols, vals = [], [], []
    for (di, dj), v in entries.items():
        if v == 0.0:
            continue
        rows.append(rows_full)
        cols.append(idx[ii + di, jj + dj].ravel())
        vals.append(np.full(rows_full.size, v))
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    if include_growth:
        rz = np.asarray(p.r(g.z.nodes), dtype=float)
        rows = np.concatenate([rows, rows_full])
        cols = np.concatenate([cols, rows_full])
        vals = np.concatenate([vals, -rz[jj.ravel()]])

    interior = idx[1:-1, 1:-1].ravel()
    pos = -np.ones(nx * nz, dtype=np.int64)
    pos[interior] = np.arange(interior.size)
    full = sp.csr_matrix((vals, (pos[rows], cols)), shape=(interior.size, nx * nz))
    A, Bfull = _split(full, interior)
    return OperatorMatrix(
        matrix=A, boundary=Bfull, interior=interior, shape=g.shape,
        coefficients={"B": p.B, "c": c, "cross": cross, "include_growth": include_growth},
    )


def assemble_dx(g: Grid2D) -> OperatorMatrix:
    """Centred first derivative in x on interior nodes."""
    idx = _full_index(g)
    nx, nz = g.shape
    ii, jj = np.meshgrid(np.arange(1, nx - 1), np.arange(1, nz - 1), indexing="ij")
    r = np.arange(ii.size)
    s = 1.0 / (2.0 * g.hx)
    full = sp.csr_matrix(
        (np.concatenate([np.full(r.size, s), np.full(r.size, -s)]),
         (np.concatenate([r, r]), np.concatenate([idx[ii + 1, jj].ravel(), idx[ii - 1, jj].ravel()]))),
        shape=(r.size, nx * nz))
    interior = idx[1:-1, 1:-1].ravel()
    A, Bfull = _split(full, interior)
    return OperatorMatrix(matrix=A, boundary=Bfull, interior=interior, shape=g.shape)


def kernel_quadrature(g: Grid1D, p: ModelParams) -> np.ndarray:
    """Matrix ``Kw`` with ``(Kw @ u)[j] ~ int k(z_j, z') u(z') dz'``."""
    w = quadrature_weights(g)
    return p.kernel.matrix(g.nodes) * w[None, :]
