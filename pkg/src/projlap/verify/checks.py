"""Individual verification checks and their reports."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .. import expr as ex
from ..expr import SampleDomain
from ..generators import random_monomial_density
from ..geom import Density
from ..operators import (
    DensityBracket,
    DensityOperator,
    bracket_value,
    canonical_operator,
    generated_bracket,
    generator_densities,
)
from .quadrature import BumpDensity, QuadratureSpec

SELF_ADJOINT_TOL = {2: 1e-4, 3: 1e-3}
DEFAULT_GRID = {2: 101, 3: 41}


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst_defect: float
    tolerance: float
    seed: int
    details: dict = field(default_factory=dict)

    @property
    def status(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def as_dict(self) -> dict:
        return {
            "check-name": self.name,
            "status": self.status,
            "worst-defect": self.worst_defect,
            "tolerance": self.tolerance,
            "seed": self.seed,
            **({"details": self.details} if self.details else {}),
        }


# -- self-adjointness -----------------------------------------------------------

class _GridOperator:
    """Operator coefficients evaluated once on a quadrature grid."""

    def __init__(self, op: DensityOperator, grid: dict[int, np.ndarray]):
        self.op = op
        self.grid = grid
        n = op.n
        ev = lambda e: np.broadcast_to(ex.evaluate_batch(e, grid), grid[1].shape)
        self.S = [[ev(op.S[i][j]) for j in range(n)] for i in range(n)]
        self.gamma = [ev(g) for g in op.gamma]
        self.a = [ev(a) for a in op.a]
        self.theta = ev(op.theta)
        self.b = ev(op.b)
        self.c = ev(op.c)

    def apply_bump(self, bump: BumpDensity) -> np.ndarray:
        mu = float(bump.weight)
        n = self.op.n
        val = bump.values(self.grid)
        grad = bump.gradient(self.grid)
        hess = bump.hessian(self.grid)
        out = (mu * mu * self.theta + mu * self.b + self.c) * val
        for i in range(n):
            out = out + (self.a[i] + 2.0 * mu * self.gamma[i]) * grad[i]
            for j in range(n):
                out = out + self.S[i][j] * hess[i][j]
        return out


BUMP_SHARPNESS = 4.0
# Peak bump value per dimension; 3D grids are coarser, so a smaller peak keeps
# the relative defect of exact operators under tolerance.
BUMP_AMPLITUDE = {2: 3.0, 3: 1.0}


def random_bump_pair(rng: random.Random, q: QuadratureSpec, mu, nu,
                     amplitude: float = 1.0,
                     sharpness: float = BUMP_SHARPNESS) -> tuple[BumpDensity, BumpDensity]:
    """Two overlapping bumps with peak value ``amplitude``, both strictly inside the box.

    Radii are 30-36% of the smallest box width and the centres are 15-25%
    of it apart in a random direction.  With the default sharpness this keeps
    the Simpson error of exact operators well below 1e-4 at 101 points per axis.
    """
    scale = min(hi - lo for lo, hi in q.box)
    r1 = scale * rng.uniform(0.30, 0.36)
    r2 = scale * rng.uniform(0.30, 0.36)
    dist = scale * rng.uniform(0.15, 0.25)
    direction = np.asarray([rng.gauss(0.0, 1.0) for _ in q.box])
    direction /= np.linalg.norm(direction)
    offset = 0.5 * dist * direction
    margin = max(r1, r2) * 1.02 + 0.5 * dist
    mid = np.asarray([rng.uniform(lo + margin, hi - margin) for lo, hi in q.box])
    peak = amplitude * float(np.exp(sharpness))
    pair = (BumpDensity(tuple(mid - offset), r1, mu, peak, sharpness=sharpness),
            BumpDensity(tuple(mid + offset), r2, nu, peak, sharpness=sharpness))
    assert all(b.inside(q) for b in pair)
    return pair


def self_adjoint_defects(op: DensityOperator, mu, q: QuadratureSpec, pairs: int = 5,
                         seed: int = 0, rho: Optional[Density] = None,
                         amplitude: Optional[float] = None) -> list[float]:
    """|⟨Δφ,ψ⟩ − ⟨φ,Δψ⟩| / (1 + |⟨Δφ,ψ⟩|) for random bump pairs.

    φ has weight μ, ψ has weight 1 − μ − λ (− σ when the product is
    weighted by ρ|Dx|^σ).
    """
    if q.n != op.n:
        raise ValueError("quadrature box and operator dimensions differ")
    mu = ex.as_fraction(mu)
    sigma = rho.weight if rho is not None else Fraction(0)
    nu = 1 - mu - op.weight - sigma
    if amplitude is None:
        amplitude = BUMP_AMPLITUDE.get(op.n, 1.0)
    rng = random.Random(seed)
    grid = q.grid()
    gop = _GridOperator(op, grid)
    rho_vals = ex.evaluate_batch(rho.coeff, grid) if rho is not None else 1.0
    w = q.weights()
    out = []
    for _ in range(pairs):
        phi, psi = random_bump_pair(rng, q, mu, nu, amplitude)
        lhs = float(np.sum(w * gop.apply_bump(phi) * psi.values(grid) * rho_vals))
        rhs = float(np.sum(w * phi.values(grid) * gop.apply_bump(psi) * rho_vals))
        out.append(abs(lhs - rhs) / (1.0 + abs(lhs)))
    return out


def check_self_adjoint(op: DensityOperator, mu, q: QuadratureSpec, pairs: int = 5, seed: int = 0,
                       rho: Optional[Density] = None, tol: Optional[float] = None,
                       amplitude: Optional[float] = None, name: str = "self_adjoint") -> CheckResult:
    tol = tol if tol is not None else SELF_ADJOINT_TOL.get(op.n, 1e-3)
    defects = self_adjoint_defects(op, mu, q, pairs, seed, rho, amplitude)
    worst = max(defects) if defects else 0.0
    return CheckResult(name, worst <= tol, worst, tol, seed, {
        "mu": str(ex.as_fraction(mu)), "grid": q.points, "pairs": pairs, "defects": defects,
        "expression_size": sum(ex.size(e) for e in (op.theta, op.b, *op.a, *op.gamma)),
    })


def check_quadrature_convergence(op: DensityOperator, mu, q: QuadratureSpec, refinements: int = 2,
                                 pairs: int = 5, seed: int = 0, rho: Optional[Density] = None,
                                 floor: float = 1e-10,
                                 name: str = "quadrature_convergence") -> CheckResult:
    """Doubling the grid must shrink the self-adjointness defect at least 4x.

    Only meaningful for operators that are self-adjoint in exact arithmetic.
    Once a defect is under ``floor`` it counts as converged.  The reported
    defect is the largest ratio new/old seen, with tolerance 1/4.
    """
    history = []
    points = q.points
    for _ in range(refinements + 1):
        history.append(max(self_adjoint_defects(op, mu, q.with_points(points), pairs, seed, rho)))
        points = 2 * points - 1
    worst = 0.0
    for old, new in zip(history, history[1:]):
        if old < floor or new < floor:
            break
        worst = max(worst, new / old)
    return CheckResult(name, worst <= 0.25, worst, 0.25, seed,
                       {"mu": str(ex.as_fraction(mu)), "grid": q.points, "defects": history})


# -- generation and biderivation --------------------------------------------------

def _density_defect(x: Density, y: Density, domain: SampleDomain) -> float:
    if x.weight != y.weight:
        return float("inf")
    return ex.defect(x.coeff, y.coeff, domain)


def check_generates(op: DensityOperator, B: DensityBracket, domain: SampleDomain,
                    pairs: int = 10, seed: int = 0, name: str = "generates") -> CheckResult:
    """generated_bracket(op) against B on generator pairs and random monomial densities."""
    rng = random.Random(seed)
    gens = generator_densities(B.n)
    tests = [(gens[i], gens[j]) for i in range(len(gens)) for j in range(i, len(gens))]
    tests += [(random_monomial_density(rng, B.n), random_monomial_density(rng, B.n))
              for _ in range(pairs)]
    worst = 0.0
    for d1, d2 in tests:
        worst = max(worst, _density_defect(generated_bracket(op, d1, d2), bracket_value(B, d1, d2), domain))
    return CheckResult(name, worst <= domain.tol, worst, domain.tol, seed,
                       {"pairs": len(tests), "samples": domain.k})


BracketFn = Callable[[Density, Density], Density]


def check_biderivation(B: DensityBracket, domain: SampleDomain, triples: int = 10, seed: int = 0,
                       bracket: Optional[BracketFn] = None, name: str = "biderivation") -> CheckResult:
    """{a, bc} = {a,b}c + b{a,c} and {a,b} = {b,a} on random monomial densities.

    The bracket defaults to the one generated by ``canonical_operator(B)``.
    """
    if bracket is None:
        op = canonical_operator(B)
        bracket = lambda x, y: generated_bracket(op, x, y)
    rng = random.Random(seed)
    worst = 0.0
    for _ in range(triples):
        a, b, c = (random_monomial_density(rng, B.n) for _ in range(3))
        lhs = bracket(a, b * c)
        rhs_coeff = ex.add(ex.mul(bracket(a, b).coeff, c.coeff), ex.mul(b.coeff, bracket(a, c).coeff))
        rhs = Density(rhs_coeff, a.weight + b.weight + c.weight + B.weight)
        worst = max(worst, _density_defect(lhs, rhs, domain))
        worst = max(worst, _density_defect(bracket(a, b), bracket(b, a), domain))
        expected_weight = a.weight + b.weight + B.weight
        if bracket(a, b).weight != expected_weight:
            worst = float("inf")
    return CheckResult(name, worst <= domain.tol, worst, domain.tol, seed,
                       {"triples": triples, "samples": domain.k})
