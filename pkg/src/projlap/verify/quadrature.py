"""Tensor-product composite Simpson quadrature, bump densities, scalar products."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Union

import numpy as np

from .. import expr as ex
from ..errors import SupportError, ValidationError
from ..expr import Expr
from ..geom import Density, base_variables

WEIGHT_TOL = 1e-12


def simpson_weights(lo: float, hi: float, points: int) -> np.ndarray:
    if points < 3 or points % 2 == 0:
        raise ValidationError(f"Simpson's rule needs an odd number of points >= 3, got {points}")
    h = (hi - lo) / (points - 1)
    w = np.ones(points)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


@dataclass(frozen=True)
class QuadratureSpec:
    """Box over the base variables x1..xn with ``points`` Simpson nodes per axis."""

    box: tuple[tuple[float, float], ...]
    points: int = 101
    rule: str = "simpson"

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in self.box)
        object.__setattr__(self, "box", box)
        if self.rule != "simpson":
            raise ValidationError(f"unsupported quadrature rule {self.rule!r}")
        if self.points < 11 or self.points % 2 == 0:
            raise ValidationError(f"grid points per axis must be odd and >= 11, got {self.points}")
        for lo, hi in box:
            if not lo < hi:
                raise ValidationError(f"empty quadrature interval [{lo}, {hi}]")

    @property
    def n(self) -> int:
        return len(self.box)

    def with_points(self, points: int) -> "QuadratureSpec":
        return QuadratureSpec(self.box, points, self.rule)

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, self.points) for lo, hi in self.box]

    def grid(self) -> dict[int, np.ndarray]:
        """Mesh arrays keyed by chart variable (1..n)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return dict(zip(base_variables(self.n), mesh))

    def weights(self) -> np.ndarray:
        ws = [simpson_weights(lo, hi, self.points) for lo, hi in self.box]
        out = ws[0]
        for w in ws[1:]:
            out = np.multiply.outer(out, w)
        return out

    def integrate(self, values: np.ndarray) -> float:
        return float(np.sum(self.weights() * values))


@dataclass(frozen=True)
class BumpDensity:
    """amplitude · exp(−s/(1−r²)) · factor, r = |x − center|/radius, times |Dx|^weight.

    ``s`` is ``sharpness``; larger values give a flatter edge and a more
    Gaussian interior, which Simpson's rule integrates far more accurately.
    ``factor`` is an optional smooth expression multiplier (used to form
    products with ordinary densities).
    """

    center: tuple[float, ...]
    radius: float
    weight: Fraction = Fraction(0)
    amplitude: float = 1.0
    factor: Optional[Expr] = None
    sharpness: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "weight", ex.as_fraction(self.weight))
        if not self.radius > 0:
            raise ValidationError("bump radius must be positive")
        if not self.sharpness > 0:
            raise ValidationError("bump sharpness must be positive")

    @property
    def n(self) -> int:
        return len(self.center)

    def inside(self, q: QuadratureSpec) -> bool:
        return all(lo < c - self.radius and c + self.radius < hi
                   for c, (lo, hi) in zip(self.center, q.box))

    def __mul__(self, other):
        if isinstance(other, Density):
            f = other.coeff if self.factor is None else ex.mul(self.factor, other.coeff)
            return BumpDensity(self.center, self.radius, self.weight + other.weight,
                               self.amplitude, f, self.sharpness)
        return NotImplemented

    __rmul__ = __mul__

    def _u(self, grid: dict[int, np.ndarray]):
        xs = [grid[v] for v in base_variables(self.n)]
        diffs = [x - c for x, c in zip(xs, self.center)]
        u = sum(d * d for d in diffs) / self.radius**2
        return diffs, u

    def _profile(self, grid):
        diffs, u = self._u(grid)
        inside = u < 1.0
        safe = np.where(inside, 1.0 - u, 1.0)
        val = np.where(inside, self.amplitude * np.exp(-self.sharpness / safe), 0.0)
        return diffs, u, inside, safe, val

    def values(self, grid: dict[int, np.ndarray]) -> np.ndarray:
        val = self._profile(grid)[-1]
        if self.factor is not None:
            val = val * ex.evaluate_batch(self.factor, grid)
        return val

    def gradient(self, grid) -> list[np.ndarray]:
        """First derivatives of the bare bump (``factor`` must be None)."""
        self._require_bare()
        diffs, u, inside, safe, val = self._profile(grid)
        g1 = np.where(inside, -self.sharpness / safe**2, 0.0)
        return [val * g1 * 2.0 * d / self.radius**2 for d in diffs]

    def hessian(self, grid) -> list[list[np.ndarray]]:
        self._require_bare()
        diffs, u, inside, safe, val = self._profile(grid)
        g1 = np.where(inside, -self.sharpness / safe**2, 0.0)
        g2 = np.where(inside, -2.0 * self.sharpness / safe**3, 0.0)
        r2 = self.radius**2
        du = [2.0 * d / r2 for d in diffs]
        n = self.n
        out = [[None] * n for _ in range(n)]
        for i in range(n):
            for j in range(i, n):
                h = val * ((g1 * g1 + g2) * du[i] * du[j] + (g1 * 2.0 / r2 if i == j else 0.0))
                out[i][j] = out[j][i] = h
        return out

    def _require_bare(self):
        if self.factor is not None:
            raise ValidationError("derivatives are only available for bare bumps")


DensityLike = Union[Density, BumpDensity]


def _values(d: DensityLike, grid) -> np.ndarray:
    if isinstance(d, BumpDensity):
        return d.values(grid)
    return ex.evaluate_batch(d.coeff, grid)


def _require_support(q: QuadratureSpec, *ds: DensityLike):
    bumps = [d for d in ds if isinstance(d, BumpDensity)]
    if not bumps:
        raise SupportError("at least one factor must be a compactly supported bump")
    for b in bumps:
        if b.n != q.n:
            raise ValidationError("bump dimension does not match the quadrature box")
    if not any(b.inside(q) for b in bumps):
        raise SupportError("bump support escapes the quadrature box")


def integrate_product(q: QuadratureSpec, *ds: DensityLike) -> float:
    _require_support(q, *ds)
    grid = q.grid()
    vals = np.ones_like(next(iter(grid.values())))
    for d in ds:
        vals = vals * _values(d, grid)
    return q.integrate(vals)


def scalar_product(d1: DensityLike, d2: DensityLike, q: QuadratureSpec) -> float:
    """∫ φψ when the weights add up to 1, otherwise 0."""
    if abs(float(d1.weight + d2.weight) - 1.0) > WEIGHT_TOL:
        return 0.0
    return integrate_product(q, d1, d2)


def modified_scalar_product(d1: DensityLike, d2: DensityLike, rho: DensityLike,
                            q: QuadratureSpec) -> float:
    """∫ φψρ when the weights of φ, ψ and ρ add up to 1, otherwise 0."""
    if abs(float(d1.weight + d2.weight + rho.weight) - 1.0) > WEIGHT_TOL:
        return 0.0
    return integrate_product(q, d1, d2, rho)
