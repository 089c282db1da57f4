"""Model coefficients for the space/trait population under a cline.

The moving-frame equation is

    d_t n - [n_xx + (B^2+1) n_zz - 2B n_xz] = (r(z) - int k(z,z') n(z') dz') n

with growth profile ``r``, competition kernel ``k`` and cline slope ``B``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline


class ModelError(ValueError):
    pass


class TraitRangeError(ModelError):
    """Raised when a tabulated profile is evaluated outside its samples."""


class ExtinctionRegimeError(ModelError):
    """No invasion speed exists: the population goes extinct."""


@dataclass(frozen=True)
class QuadraticGrowth:
    """r(z) = rmax - A z^2 with confinement constant ``delta``."""

    rmax: float
    A: float
    delta: float | None = None

    def __post_init__(self):
        if not self.rmax > 0 or not self.A > 0:
            raise ModelError("QuadraticGrowth needs rmax > 0 and A > 0")
        if self.delta is None:
            object.__setattr__(self, "delta", largest_delta(self))
        if not self.delta > 0:
            raise ModelError("delta must be positive")

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        return self.rmax - self.A * z * z

    @property
    def max_r(self) -> float:
        return self.rmax

    @property
    def z_range(self) -> tuple[float, float]:
        return (-math.inf, math.inf)


@dataclass(frozen=True)
class TabulatedGrowth:
    """Piecewise-cubic growth profile through ``(z, r)`` samples.

    Evaluation outside the sample range raises :class:`TraitRangeError`.
    """

    z: tuple[float, ...]
    r: tuple[float, ...]
    delta: float
    _spline: CubicSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        r = np.asarray(self.r, dtype=float)
        if z.ndim != 1 or z.shape != r.shape or z.size < 4:
            raise ModelError("tabulated profile needs >= 4 matching (z, r) samples")
        if np.any(np.diff(z) <= 0):
            raise ModelError("tabulated z samples must be strictly increasing")
        if not self.delta > 0:
            raise ModelError("delta must be positive")
        object.__setattr__(self, "z", tuple(z))
        object.__setattr__(self, "r", tuple(r))
        object.__setattr__(self, "_spline", CubicSpline(z, r, bc_type="natural"))

    @classmethod
    def from_samples(cls, samples: Sequence[tuple[float, float]], delta: float):
        zs, rs = zip(*samples)
        return cls(tuple(zs), tuple(rs), delta)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        lo, hi = self.z[0], self.z[-1]
        tol = 1e-12 * max(1.0, hi - lo)
        if np.any(z < lo - tol) or np.any(z > hi + tol):
            raise TraitRangeError(f"trait outside tabulated range [{lo}, {hi}]")
        return self._spline(np.clip(z, lo, hi))

    @property
    def max_r(self) -> float:
        zz = np.linspace(self.z[0], self.z[-1], 20 * len(self.z) + 1)
        return float(np.max(self._spline(zz)))

    @property
    def z_range(self) -> tuple[float, float]:
        return (self.z[0], self.z[-1])


GrowthProfile = QuadraticGrowth | TabulatedGrowth


@dataclass(frozen=True)
class ConstantKernel:
    value: float = 1.0

    def __post_init__(self):
        if not self.value > 0:
            raise ModelError("kernel value must be positive")

    @property
    def lower(self) -> float:
        return self.value

    @property
    def upper(self) -> float:
        return self.value

    def matrix(self, z: np.ndarray, zp: np.ndarray | None = None) -> np.ndarray:
        zp = z if zp is None else zp
        return np.full((np.size(z), np.size(zp)), self.value)


@dataclass(frozen=True)
class FunctionKernel:
    """k(z, z') given by a vectorised callable with declared bounds."""

    lower: float
    upper: float
    func: Callable[[np.ndarray, np.ndarray], np.ndarray] = field(compare=False)

    def __post_init__(self):
        if not 0 < self.lower <= self.upper:
            raise ModelError("kernel bounds need 0 < lower <= upper")

    def matrix(self, z: np.ndarray, zp: np.ndarray | None = None) -> np.ndarray:
        zp = z if zp is None else zp
        Z, Zp = np.meshgrid(np.asarray(z, float), np.asarray(zp, float), indexing="ij")
        return np.asarray(self.func(Z, Zp), dtype=float)


Kernel = ConstantKernel | FunctionKernel


@dataclass(frozen=True)
class ModelParams:
    growth: GrowthProfile
    kernel: Kernel = ConstantKernel(1.0)
    B: float = 0.0

    def __post_init__(self):
        if not self.B >= 0:
            raise ModelError("cline slope B must be >= 0")

    @property
    def delta(self) -> float:
        return self.growth.delta

    @property
    def diffusion_z(self) -> float:
        return self.B * self.B + 1.0

    def r(self, z):
        return self.growth(z)


def quadratic_model(A: float, B: float, k: float = 1.0, rmax: float = 1.0,
                    delta: float | None = None) -> ModelParams:
    return ModelParams(QuadraticGrowth(rmax, A, delta), ConstantKernel(k), B)


def eval_r(growth: GrowthProfile, z):
    return growth(z)


def largest_delta(growth: QuadraticGrowth) -> float:
    """Largest delta with rmax - A z^2 <= 1/delta - delta z^2 for all z."""
    return min(growth.A, 1.0 / growth.rmax)


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    detail: str


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[Check, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]


def operative_z_range(p: ModelParams) -> tuple[float, float]:
    lo, hi = p.growth.z_range
    if math.isinf(lo) or math.isinf(hi):
        # beyond this the confinement bound forces r < 0 with margin
        zb = 2.0 * math.sqrt(6.0) / p.delta
        return (-zb, zb)
    return (lo, hi)


def validate_assumptions(p: ModelParams, n_kernel: int = 101) -> ValidationReport:
    checks = []
    g = p.growth
    d = g.delta
    if isinstance(g, QuadraticGrowth):
        ok_a = d <= g.A
        ok_r = g.rmax <= 1.0 / d
        checks.append(Check("confinement_quadratic", ok_a,
                            f"delta={d:g} {'<=' if ok_a else '>'} A={g.A:g}"))
        checks.append(Check("confinement_peak", ok_r,
                            f"rmax={g.rmax:g} {'<=' if ok_r else '>'} 1/delta={1 / d:g}"))
    else:
        z = np.asarray(g.z)
        excess = np.asarray(g.r) - (1.0 / d - d * z * z)
        ok = bool(np.all(excess <= 1e-12))
        checks.append(Check("confinement_samples", ok,
                            f"max excess over 1/delta - delta z^2: {excess.max():.3g}"))
    checks.append(Check("slope_nonnegative", p.B >= 0, f"B={p.B:g}"))

    lo, hi = operative_z_range(p)
    zz = np.linspace(lo, hi, n_kernel)
    K = p.kernel.matrix(zz)
    kmin, kmax = float(K.min()), float(K.max())
    ok_k = p.kernel.lower <= kmin and kmax <= p.kernel.upper and p.kernel.lower > 0
    checks.append(Check("kernel_bounds", ok_k,
                        f"k in [{kmin:g}, {kmax:g}] vs declared "
                        f"[{p.kernel.lower:g}, {p.kernel.upper:g}]"))
    return ValidationReport(tuple(checks))


@dataclass(frozen=True)
class BioParams:
    """Parameters of the unscaled quadratic-selection model."""

    sigma_x: float
    sigma_m: float
    r_max: float
    V_s: float
    b_cline: float
    K_cap: float

    def __post_init__(self):
        for name in ("sigma_x", "sigma_m", "r_max", "V_s", "b_cline", "K_cap"):
            if not getattr(self, name) > 0:
                raise ModelError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class ScaleFactors:
    time: float
    space: float
    trait: float

    @property
    def speed(self) -> float:
        """Dimensionless speed per unit of original speed."""
        return self.space / self.time


def rescale_bio(b: BioParams) -> tuple[ModelParams, ScaleFactors]:
    A = b.sigma_m ** 2 / (4.0 * b.r_max ** 2 * b.V_s)
    B = b.sigma_x / b.sigma_m * b.b_cline
    params = ModelParams(QuadraticGrowth(1.0, A), ConstantKernel(1.0 / (b.K_cap * b.r_max)), B)
    s = math.sqrt(2.0 * b.r_max)
    return params, ScaleFactors(time=b.r_max, space=s / b.sigma_x, trait=s / b.sigma_m)


def speed_original_units(b: BioParams, c_star: float | None = None) -> float:
    """Minimal spreading speed expressed in the original units.

    If ``c_star`` (dimensionless) is given, it is cross-checked against the
    closed form to relative 1e-12.
    """
    beta2 = (b.b_cline * b.sigma_x / b.sigma_m) ** 2 + 1.0
    sel = b.sigma_m / (2.0 * b.r_max * math.sqrt(b.V_s)) * math.sqrt(beta2)
    if sel > 1.0 + 1e-12:
        raise ExtinctionRegimeError("A(B^2+1) > 1: no invasion speed")
    speed = math.sqrt(2.0 * b.r_max) * b.sigma_x * math.sqrt(max(1.0 - sel, 0.0)) / math.sqrt(beta2)
    if c_star is not None:
        _, sc = rescale_bio(b)
        other = c_star / sc.speed
        if not math.isclose(other, speed, rel_tol=1e-12, abs_tol=1e-300):
            raise ModelError(f"speed conversion mismatch: {other!r} vs {speed!r}")
    return speed
