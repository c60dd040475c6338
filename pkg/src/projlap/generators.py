"""Seeded random geometric objects for property checks.

Everything here is polynomial or exponential in the chart variables so
that it is defined on the whole sample box and on the image of every
generated transition.  Transitions are built from triangular pieces whose
inverses are explicit, and always have positive Jacobian determinant.
"""

from __future__ import annotations

import random
from fractions import Fraction
from typing import Optional, Sequence

from . import expr as ex
from .expr import Expr
from .geom import (
    ChartTransition,
    Connection,
    Density,
    ProjectiveClass,
    TensorDensity2,
    base_variables,
    projective_class,
    symmetric2,
    symmetric3,
)
from .operators import resonances


def _rat(rng: random.Random, lo: int = -3, hi: int = 3, den: int = 4) -> Fraction:
    return Fraction(rng.randint(lo, hi), rng.randint(1, den))


def random_polynomial(rng: random.Random, variables: Sequence[int], degree: int = 2,
                      terms: int = 3, constant: bool = True) -> Expr:
    out = []
    if constant:
        out.append(ex.const(_rat(rng)))
    for _ in range(terms):
        mono = [ex.power(ex.var(v), rng.randint(0, degree)) for v in variables]
        out.append(ex.mul(ex.const(_rat(rng)), *mono))
    return ex.add(*out)


def random_connection(rng: random.Random, n: int, degree: int = 2) -> Connection:
    vs = base_variables(n)
    return Connection(symmetric3(n, lambda k, i, j: random_polynomial(rng, vs, degree, terms=2)))


def random_projective_class(rng: random.Random, n: int, degree: int = 2) -> ProjectiveClass:
    return projective_class(random_connection(rng, n, degree))


def random_omega(rng: random.Random, n: int, degree: int = 2) -> tuple[Expr, ...]:
    vs = base_variables(n)
    return tuple(random_polynomial(rng, vs, degree, terms=2) for _ in range(n))


def random_tensor(rng: random.Random, n: int, weight=0, degree: int = 2) -> TensorDensity2:
    vs = base_variables(n)
    return TensorDensity2(symmetric2(n, lambda i, j: random_polynomial(rng, vs, degree, terms=2)), weight)


def random_density(rng: random.Random, n: int, weight=None, degree: int = 2) -> Density:
    vs = base_variables(n)
    if weight is None:
        weight = _rat(rng, -4, 4, 3)
    coeff = random_polynomial(rng, vs, degree, terms=3)
    if rng.random() < 0.5:
        coeff = ex.mul(coeff, ex.exp(ex.mul(ex.const(_rat(rng, -2, 2, 2)), ex.var(rng.choice(vs)))))
    return Density(coeff, weight)


def random_monomial_density(rng: random.Random, n: int, weight=None) -> Density:
    vs = base_variables(n)
    if weight is None:
        weight = _rat(rng, -4, 4, 3)
    mono = [ex.power(ex.var(v), rng.randint(0, 3)) for v in vs]
    return Density(ex.mul(ex.const(_rat(rng, 1, 3, 2)), *mono), weight)


def random_weight(rng: random.Random, n: int, margin: Fraction = Fraction(1, 10)) -> Fraction:
    """A rational weight in [-2, 2] at least ``margin`` away from both resonances."""
    while True:
        w = Fraction(rng.randint(-24, 24), 12)
        if all(abs(w - r) >= margin for r in resonances(n)):
            return w


def _solve_down(n: int, pieces) -> tuple[list[Expr], list[Expr]]:
    """Lower-triangular shear x̄_k = x_k + p_k(x_1..x_{k-1}) and its inverse."""
    vs = base_variables(n)
    fwd = [ex.var(vs[0])]
    inv = [ex.var(vs[0])]
    for k in range(1, n):
        p = pieces[k]
        fwd.append(ex.add(ex.var(vs[k]), p))
        earlier = dict(zip(vs[:k], inv))
        inv.append(ex.sub(ex.var(vs[k]), ex.substitute(p, earlier)))
    return fwd, inv


def shear_down(rng: random.Random, n: int) -> ChartTransition:
    vs = base_variables(n)
    pieces = [None] + [random_polynomial(rng, vs[:k], 2, terms=1, constant=False) for k in range(1, n)]
    fwd, inv = _solve_down(n, pieces)
    return ChartTransition(tuple(fwd), tuple(inv))


def shear_up(rng: random.Random, n: int) -> ChartTransition:
    """x̄_k = x_k + q_k(x_{k+1}..x_n)."""
    vs = base_variables(n)
    fwd: list[Optional[Expr]] = [None] * n
    inv: list[Optional[Expr]] = [None] * n
    fwd[n - 1] = inv[n - 1] = ex.var(vs[n - 1])
    for k in range(n - 2, -1, -1):
        q = random_polynomial(rng, vs[k + 1:], 2, terms=1, constant=False)
        fwd[k] = ex.add(ex.var(vs[k]), q)
        later = {vs[j]: inv[j] for j in range(k + 1, n)}
        inv[k] = ex.sub(ex.var(vs[k]), ex.substitute(q, later))
    return ChartTransition(tuple(fwd), tuple(inv))


def affine_scaling(rng: random.Random, n: int) -> ChartTransition:
    vs = base_variables(n)
    fwd, inv = [], []
    for v in vs:
        s = Fraction(rng.randint(1, 4), rng.randint(1, 3))
        t = Fraction(rng.randint(-2, 2), 4)
        x = ex.var(v)
        fwd.append(ex.add(ex.mul(ex.const(s), x), ex.const(t)))
        inv.append(ex.mul(ex.const(1 / s), ex.sub(x, ex.const(t))))
    return ChartTransition(tuple(fwd), tuple(inv))


def exponential_stretch(rng: random.Random, n: int) -> ChartTransition:
    """x̄_1 = exp(c x_1); a nonconstant Jacobian with log in the inverse."""
    vs = base_variables(n)
    c = Fraction(rng.randint(1, 3), 2)
    x1 = ex.var(vs[0])
    fwd = [ex.exp(ex.mul(ex.const(c), x1))] + [ex.var(v) for v in vs[1:]]
    inv = [ex.mul(ex.const(1 / c), ex.log(x1))] + [ex.var(v) for v in vs[1:]]
    return ChartTransition(tuple(fwd), tuple(inv))


def random_transition(rng: random.Random, n: int, exponential: bool = True) -> ChartTransition:
    """Composite of scaling and shears, finished by an exponential stretch.

    The stretch is applied last so that the first step of the inverse is the
    logarithm of a new coordinate, which is positive on the default box.
    """
    t = affine_scaling(rng, n)
    pieces = [shear_down(rng, n), shear_up(rng, n)]
    rng.shuffle(pieces)
    for piece in pieces:
        t = t.compose(piece)
    if exponential:
        t = t.compose(exponential_stretch(rng, n))
    return t
