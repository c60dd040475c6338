import math
from fractions import Fraction

import numpy as np
import pytest

from projlap import expr as ex
from projlap.errors import DimensionTooSmallError, NonpositiveJacobianError
from projlap.generators import random_connection, random_density, random_projective_class, random_transition
from projlap.geom import (
    ChartTransition,
    Density,
    ProjectiveClass,
    projective_class,
    symmetric3,
    transform_connection,
    transform_density,
)
from projlap.thomas import (
    embed_density,
    induced_projective_class,
    lift_connection,
    tilde_transition,
    weight_operator,
)

from conftest import box, transition


def flat(arr):
    return list(np.ravel(np.array(arr, dtype=object)))


def values(arr, point):
    if isinstance(arr, ex.Expr):
        return ex.evaluate(arr, point)
    return np.array([values(a, point) for a in arr])


# -- lift_connection -------------------------------------------------------------------

@pytest.mark.parametrize("n", [2, 3])
def test_lift_of_zero_class(n):
    lifted = lift_connection(ProjectiveClass.zero(n))
    c = lifted.coeffs
    N = n + 1
    for a in range(N):
        for b in range(N):
            for d in range(N):
                if (b == 0 and a == d) or (d == 0 and a == b):
                    assert c[a][b][d] == ex.const(Fraction(-1, n + 1))
                else:
                    assert c[a][b][d].is_zero(), (a, b, d)


def _curvature_oracle(p: ProjectiveClass, point, h=1e-6):
    """((n+1)/(n−1))(∂_sΠ^s_ij − Π^p_qiΠ^q_pj) from einsum and central differences."""
    n = p.n
    P = values(p.coeffs, point)
    div = np.zeros((n, n))
    for s in range(n):
        up, down = dict(point), dict(point)
        up[s + 1] += h
        down[s + 1] -= h
        div += (values(p.coeffs[s], up) - values(p.coeffs[s], down)) / (2 * h)
    quad = np.einsum("pqi,qpj->ij", P, P)
    return (n + 1) / (n - 1) * (div - quad)


def test_lift_constant_class_curvature():
    # only Π^1_12 = Π^1_21 = c: the quadratic term leaves −3c² in the (2,2) slot
    c = Fraction(3, 7)
    coeffs = symmetric3(2, lambda k, i, j: ex.const(c) if (k, i, j) == (0, 0, 1) else ex.ZERO)
    lifted = lift_connection(ProjectiveClass(coeffs))
    block = values([[lifted.coeffs[0][i + 1][j + 1] for j in range(2)] for i in range(2)], {})
    assert np.allclose(block, _curvature_oracle(ProjectiveClass(coeffs), {1: 0.5, 2: 0.5}), atol=1e-9)
    assert block[1, 1] == pytest.approx(-3 * float(c) ** 2)


@pytest.mark.parametrize("n", [2, 3])
def test_lift_curvature_against_oracle(rng, n):
    p = random_projective_class(rng, n)
    lifted = lift_connection(p)
    point = {v: 0.25 + 0.2 * v for v in range(n + 1)}
    got = values([[lifted.coeffs[0][i + 1][j + 1] for j in range(n)] for i in range(n)], point)
    assert np.allclose(got, _curvature_oracle(p, point), rtol=1e-6, atol=1e-6)
    base = values([[[lifted.coeffs[k + 1][i + 1][j + 1] for j in range(n)] for i in range(n)] for k in range(n)], point)
    assert np.allclose(base, values(p.coeffs, point))


def test_lift_needs_dimension_two():
    with pytest.raises(DimensionTooSmallError):
        lift_connection(ProjectiveClass(((( ex.ZERO,),),)))


@pytest.mark.parametrize("n", [2, 3])
def test_lift_law(rng, n):
    """The lifted connection transforms as a connection under the lifted transition."""
    d = box(n, tol=1e-7)
    gamma = random_connection(rng, n)
    for _ in range(2):
        t = random_transition(rng, n)
        t.validate(d)
        tt = tilde_transition(t, d)
        moved = transform_connection(lift_connection(projective_class(gamma)), tt.full)
        direct = lift_connection(projective_class(transform_connection(gamma, t)))
        assert ex.defect_many(list(zip(flat(moved.coeffs), flat(direct.coeffs))), d) <= 1e-7


# -- induced_projective_class -------------------------------------------------------------

def test_induced_constants_n2():
    big = induced_projective_class(ProjectiveClass.zero(2))
    assert big.coeffs[1][1][0] == ex.const(Fraction(-1, 12))
    assert big.coeffs[2][0][2] == ex.const(Fraction(-1, 12))
    assert big.coeffs[0][0][0] == ex.const(Fraction(1, 6))
    assert big.coeffs[1][2][0].is_zero()
    for i in range(3):
        assert big.coeffs[0][i][0].is_zero() or i == 0
        assert big.coeffs[i][0][0].is_zero() or i == 0
        for j in range(1, 3):
            if i > 0:
                assert big.coeffs[0][i][j].is_zero()


@pytest.mark.parametrize("n", [2, 3])
def test_induced_equals_class_of_lift(rng, n):
    d = box(n)
    for _ in range(3):
        p = random_projective_class(rng, n)
        a = induced_projective_class(p)
        b = projective_class(lift_connection(p))
        assert ex.defect_many(list(zip(flat(a.coeffs), flat(b.coeffs))), d) <= 1e-9
        assert a.trace_defect(d) <= 1e-9


# -- tilde_transition ----------------------------------------------------------------------

def test_identity_lift_keeps_fibre():
    tt = tilde_transition(ChartTransition.identity(2))
    assert ex.equal_prob(tt.full.forward[0], ex.var(0), box(2))


def test_scaling_shifts_fibre_by_log_four():
    tt = tilde_transition(transition(("2*x1", "2*x2"), ("x1/2", "x2/2")))
    assert ex.equal_prob(tt.full.forward[0], ex.add(ex.var(0), ex.log(ex.const(4))), box(2))
    assert ex.evaluate(tt.log_jacobian, {1: 0.4, 2: 0.9}) == pytest.approx(math.log(4))


@pytest.mark.parametrize("n", [2, 3])
def test_lifted_jacobian_equals_base_jacobian(rng, n):
    d = box(n)
    t = random_transition(rng, n)
    tt = tilde_transition(t, d)
    assert ex.defect(tt.full.jacobian_det(), t.jacobian_det(), d) <= 1e-9
    assert tt.full.validate(d) <= 1e-9


def test_negative_jacobian_rejected():
    flip = transition(("x2", "x1"), ("x2", "x1"))
    with pytest.raises(NonpositiveJacobianError):
        tilde_transition(flip, box(2))


# -- embed_density -------------------------------------------------------------------------

def test_embed_weight_zero_unchanged():
    phi = ex.parse("x1*x2 + 1")
    assert embed_density(Density(phi, 0)) is phi


def test_embed_volume_form():
    e = embed_density(Density(ex.ONE, 1))
    assert ex.equal_prob(e, ex.exp(ex.var(0)), box(2))
    assert ex.equal_prob(weight_operator(e), e, box(2))


def test_weight_eigenvector(rng):
    d = box(2)
    for _ in range(5):
        dens = random_density(rng, 2)
        e = embed_density(dens)
        assert ex.equal_prob(weight_operator(e), ex.mul(ex.const(dens.weight), e), d)


@pytest.mark.parametrize("n", [2, 3])
def test_embed_commutes_with_chart_change(rng, n):
    d = box(n, tol=1e-9)
    t = random_transition(rng, n)
    tt = tilde_transition(t, d)
    for _ in range(3):
        dens = random_density(rng, n)
        lhs = tt.full.pull_to_new(embed_density(dens))
        rhs = embed_density(transform_density(dens, t))
        assert ex.equal_prob(lhs, rhs, d)
