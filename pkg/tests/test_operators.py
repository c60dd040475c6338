import warnings
from fractions import Fraction

import numpy as np
import pytest
import sympy

from projlap import expr as ex
from projlap.errors import (
    DimensionError,
    NearResonanceWarning,
    NonpositiveDensityError,
    ResonantWeightError,
    ShiftedResonanceError,
    WeightError,
)
from projlap.generators import (
    random_connection,
    random_density,
    random_monomial_density,
    random_polynomial,
    random_projective_class,
    random_tensor,
    random_weight,
)
from projlap.geom import Density, ProjectiveClass, TensorDensity2, projective_class, projective_laplacian, upper_connection
from projlap.operators import (
    DensityBracket,
    DensityOperator,
    apply,
    bracket_value,
    canonical_operator,
    extend_bracket,
    flat_density_bracket,
    gamma_theta,
    generated_bracket,
    generator_densities,
    lemma_operator,
    main_operator,
    pencil_display,
    resonances,
    rho_sigma_operator,
    tilde_operator_via_lift,
)

from conftest import box, connection, tensor

X = sympy.symbols("x0:4")


def flat(*parts):
    out = []
    for p in parts:
        if isinstance(p, ex.Expr):
            out.append(p)
        else:
            out.extend(flat(*p))
    return out


def operator_exprs(op: DensityOperator):
    return flat(op.S, op.gamma, op.theta, op.a, op.b, op.c)


def same_operator(x: DensityOperator, y: DensityOperator, d, tol=None) -> bool:
    d = d if tol is None else d.with_(tol=tol)
    return x.weight == y.weight and ex.equal_prob_many(list(zip(operator_exprs(x), operator_exprs(y))), d)


def to_sympy(e: ex.Expr):
    return sympy.sympify(ex.to_plain(e).replace("^", "**"), locals={f"x{i}": s for i, s in enumerate(X)})


def sympy_close(e: ex.Expr, target, point) -> bool:
    want = float(target.subs({X[k]: v for k, v in point.items()}))
    return abs(ex.evaluate(e, point) - want) <= 1e-9 * (1 + abs(want))


POINTS = [{1: 0.3, 2: 0.8}, {1: 1.1, 2: 0.45}, {1: 0.6, 2: 1.05}]


# -- apply -------------------------------------------------------------------------------

def test_apply_harmonic():
    op = DensityOperator(TensorDensity2.identity(2).components, (0, 0), 0, (0, 0), 0, 0, 0)
    out = apply(op, Density(ex.parse("x1*x2"), 0))
    assert out.weight == 0 and ex.equal_prob(out.coeff, ex.ZERO, box(2))


def test_apply_theta_on_volume():
    zero2 = ((0, 0), (0, 0))
    op = DensityOperator(zero2, (0, 0), 1, (0, 0), 0, 0, 0)
    out = apply(op, Density(ex.ONE, 1))
    assert out.weight == 1 and ex.equal_prob(out.coeff, ex.ONE, box(2))


def test_apply_dimension_mismatch():
    op = DensityOperator.zero(2)
    with pytest.raises(DimensionError):
        apply(op, Density(ex.parse("x3"), 0))


def test_apply_contract_against_sympy(rng):
    """On φ|Dx|^μ: S∂∂φ + (a + 2μγ)∂φ + (μ²θ + μb + c)φ."""
    vs = (1, 2)
    parts = [random_polynomial(rng, vs, 2) for _ in range(9)]
    S = ((parts[0], parts[1]), (parts[1], parts[2]))
    op = DensityOperator(S, parts[3:5], parts[5], parts[6:8], parts[8], ex.parse("x1 - x2"), Fraction(1, 3))
    phi = ex.parse("exp(x1)*x2^2 + x1")
    mu = Fraction(-5, 4)
    p = to_sympy(phi)
    s = [[to_sympy(S[i][j]) for j in range(2)] for i in range(2)]
    x = X[1:3]
    want = sum(s[i][j] * sympy.diff(p, x[i], x[j]) for i in range(2) for j in range(2))
    want += sum((to_sympy(op.a[i]) + 2 * mu * to_sympy(op.gamma[i])) * sympy.diff(p, x[i]) for i in range(2))
    want += (mu**2 * to_sympy(op.theta) + mu * to_sympy(op.b) + to_sympy(op.c)) * p
    out = apply(op, Density(phi, mu))
    assert out.weight == mu + Fraction(1, 3)
    for pt in POINTS:
        assert sympy_close(out.coeff, want, pt)


# -- generated_bracket ----------------------------------------------------------------------

def test_zero_operator_generates_zero(rng):
    op = DensityOperator.zero(2)
    for _ in range(3):
        a, b = random_density(rng, 2), random_density(rng, 2)
        assert ex.equal_prob(generated_bracket(op, a, b).coeff, ex.ZERO, box(2))


def test_principal_part_generates_s_bracket(rng):
    s = random_tensor(rng, 2)
    z = (ex.ZERO, ex.ZERO)
    op = DensityOperator(s.components, z, 0, z, 0, 0, 0)
    f, g = ex.parse("x1^2*x2 + exp(x2)"), ex.parse("sin(x1) + x2^3")
    out = generated_bracket(op, Density(f, 0), Density(g, 0))
    x = X[1:3]
    want = sum(to_sympy(s.components[i][j]) * sympy.diff(to_sympy(f), x[i]) * sympy.diff(to_sympy(g), x[j])
               for i in range(2) for j in range(2))
    for pt in POINTS:
        assert sympy_close(out.coeff, want, pt)


@pytest.mark.parametrize("n", [2, 3])
def test_canonical_operator_generates_bracket(rng, n):
    d = box(n)
    vs = tuple(range(1, n + 1))
    B = DensityBracket(random_tensor(rng, n).components, tuple(random_polynomial(rng, vs) for _ in vs),
                       random_polynomial(rng, vs), random_weight(rng, n), vs)
    op = canonical_operator(B)
    gens = generator_densities(n)
    for a in gens:
        for b in gens:
            lhs, rhs = generated_bracket(op, a, b), bracket_value(B, a, b)
            assert lhs.weight == rhs.weight and ex.equal_prob(lhs.coeff, rhs.coeff, d)
    # {x^i, x^j} = S^ij, {x^i, |Dx|} = γ^i, {|Dx|, |Dx|} = θ
    assert ex.equal_prob(bracket_value(B, gens[0], gens[1]).coeff, B.S[0][1], d)
    assert ex.equal_prob(bracket_value(B, gens[0], gens[-1]).coeff, B.gamma[0], d)
    assert ex.equal_prob(bracket_value(B, gens[-1], gens[-1]).coeff, B.theta, d)


def test_first_order_shift_generates_same_bracket(rng):
    d = box(2)
    s = random_tensor(rng, 2, Fraction(1, 2))
    p = random_projective_class(rng, 2)
    op = main_operator(s, p)
    shifted = op.replace(a=tuple(ex.add(a, ex.parse("x1*x2 - 3")) for a in op.a), b=ex.add(op.b, ex.parse("x2")))
    for _ in range(5):
        a, b = random_monomial_density(rng, 2), random_monomial_density(rng, 2)
        assert ex.equal_prob(generated_bracket(op, a, b).coeff, generated_bracket(shifted, a, b).coeff, d)


# -- canonical_operator ------------------------------------------------------------------------

def test_canonical_constant_tensor_has_no_first_order():
    B = DensityBracket(TensorDensity2.identity(2).components, (0, 0), 0, 0)
    op = canonical_operator(B)
    assert all(a.is_zero() for a in op.a) and op.b.is_zero() and op.c.is_zero()


def test_canonical_weight_one_drops_gamma(rng):
    d = box(2)
    vs = (1, 2)
    s = random_tensor(rng, 2)
    B = DensityBracket(s.components, tuple(random_polynomial(rng, vs) for _ in vs), random_polynomial(rng, vs), 1)
    op = canonical_operator(B)
    for i in range(2):
        div = ex.add(*(ex.diff(s.components[i][j], j + 1) for j in range(2)))
        assert ex.equal_prob(op.a[i], div, d)


# -- gamma_theta --------------------------------------------------------------------------------

def test_gamma_theta_weight_zero_is_upper_connection(rng):
    s = random_tensor(rng, 3)
    p = random_projective_class(rng, 3)
    g, _ = gamma_theta(s, p)
    assert ex.equal_prob_many(list(zip(g, upper_connection(s, p))), box(3))


def test_gamma_theta_constant_tensor_flat():
    g, t = gamma_theta(TensorDensity2.identity(2, Fraction(1, 2)), ProjectiveClass.zero(2))
    assert all(x.is_zero() for x in g) and t.is_zero()


def test_gamma_theta_prefactors_at_weight_one():
    # n=2, λ=1: γ = (3/2)(∂_j S^ij), θ = 3 ∂_s γ^s when Π = 0
    s = tensor(2, {"1,1": "x1^2"}, 1)
    g, t = gamma_theta(s, ProjectiveClass.zero(2))
    d = box(2)
    assert ex.equal_prob(g[0], ex.parse("3*x1"), d)
    assert ex.equal_prob(g[1], ex.ZERO, d)
    assert ex.equal_prob(t, ex.const(9), d)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_resonant_weights_raise(n):
    for r, which in zip(resonances(n), ("(n+2)/(n+1)", "(n+3)/(n+1)")):
        with pytest.raises(ResonantWeightError) as info:
            gamma_theta(TensorDensity2.identity(n, r), ProjectiveClass.zero(n))
        assert info.value.which == which and info.value.resonance == r


def test_near_resonance_warns():
    w = Fraction(4, 3) + Fraction(1, 10**8)
    with pytest.warns(NearResonanceWarning, match="resonance"):
        gamma_theta(TensorDensity2.identity(2, w), ProjectiveClass.zero(2))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        gamma_theta(TensorDensity2.identity(2, Fraction(1, 2)), ProjectiveClass.zero(2))


# -- main_operator ----------------------------------------------------------------------------

def test_main_operator_flat_constant():
    op = main_operator(TensorDensity2.identity(2), ProjectiveClass.zero(2))
    assert all(e.is_zero() for e in flat(op.gamma, op.theta, op.a, op.b, op.c))


@pytest.mark.parametrize("n", [2, 3])
def test_main_operator_weight_zero_is_projective_laplacian(rng, n):
    s = random_tensor(rng, n)
    p = random_projective_class(rng, n)
    op = main_operator(s, p)
    lap = projective_laplacian(s, p)
    for _ in range(3):
        f = random_polynomial(rng, tuple(range(1, n + 1)), 3, terms=4)
        assert ex.equal_prob(apply(op, Density(f, 0)).coeff, lap.apply(f), box(n))


def test_main_operator_is_constant_free_and_extends(rng):
    s = random_tensor(rng, 2, Fraction(-1, 2))
    op = main_operator(s, random_projective_class(rng, 2))
    assert op.c.is_zero()
    assert ex.equal_prob(apply(op, Density(ex.ONE, 0)).coeff, ex.ZERO, box(2))
    assert op.S == s.components


@pytest.mark.parametrize("n", [2, 3])
def test_cross_construction(rng, n):
    d = box(n, tol=1e-8)
    s = random_tensor(rng, n, random_weight(rng, n))
    p = random_projective_class(rng, n)
    g, t = gamma_theta(s, p)
    B = DensityBracket(s.components, g, t, s.weight)
    op = main_operator(s, p)
    assert same_operator(tilde_operator_via_lift(B, p), lemma_operator(B, p), d)
    assert same_operator(op, canonical_operator(B), d)
    assert same_operator(op, lemma_operator(B, p), d)


def test_lift_construction_flat_bracket_constants():
    s = tensor(2, {"1,1": "x1^2", "1,2": "x2", "2,2": "x1*x2"})
    B = DensityBracket(s.components, (0, 0), 0, 0)
    op = tilde_operator_via_lift(B, ProjectiveClass.zero(2))
    d = box(2)
    for i in range(2):
        div = ex.add(*(ex.diff(s.components[i][j], j + 1) for j in range(2)))
        assert ex.equal_prob(op.a[i], ex.mul(ex.const(Fraction(2, 6)), div), d)
    assert ex.equal_prob(op.b, ex.ZERO, d)


def test_lift_construction_zero_bracket():
    zero = DensityBracket(((0, 0), (0, 0)), (0, 0), 0, Fraction(1, 5))
    op = tilde_operator_via_lift(zero, ProjectiveClass.zero(2))
    assert all(e.is_zero() for e in operator_exprs(op))


@pytest.mark.parametrize("mu", [Fraction(-1), Fraction(0), Fraction(1, 3), Fraction(1), Fraction(2), Fraction(-7, 3)])
def test_pencil_matches_display(rng, mu):
    s = random_tensor(rng, 2, Fraction(2, 5))
    p = random_projective_class(rng, 2)
    op = main_operator(s, p)
    g, t = gamma_theta(s, p)
    B = DensityBracket(s.components, g, t, s.weight)
    phi = random_density(rng, 2).coeff
    assert ex.equal_prob(apply(op, Density(phi, mu)).coeff, pencil_display(B, p, mu).apply(phi), box(2))


def test_generated_bracket_symmetric_with_additive_weight(rng):
    s = random_tensor(rng, 2, Fraction(1, 2))
    op = main_operator(s, random_projective_class(rng, 2))
    for _ in range(4):
        a, b = random_monomial_density(rng, 2), random_monomial_density(rng, 2)
        ab, ba = generated_bracket(op, a, b), generated_bracket(op, b, a)
        assert ab.weight == ba.weight == a.weight + b.weight + s.weight
        assert ex.equal_prob(ab.coeff, ba.coeff, box(2))


# -- extend_bracket ----------------------------------------------------------------------------

def test_extend_trivial():
    B = extend_bracket(TensorDensity2.identity(2), ProjectiveClass.zero(2))
    assert all(g.is_zero() for g in B.gamma) and B.theta.is_zero() and B.weight == 0


def test_extend_volume_bracket_is_upper_connection(rng):
    s = random_tensor(rng, 2)
    p = random_projective_class(rng, 2)
    B = extend_bracket(s, p)
    up = upper_connection(s, p)
    vol = Density(ex.ONE, 1)
    for i, x in enumerate(generator_densities(2)[:2]):
        out = bracket_value(B, x, vol)
        assert out.weight == 1 and ex.equal_prob(out.coeff, up[i], box(2))


def test_extend_restricts_to_function_bracket(rng):
    s = random_tensor(rng, 2)
    B = extend_bracket(s, random_projective_class(rng, 2))
    op = canonical_operator(B)
    f, g = ex.parse("x1^2*x2"), ex.parse("exp(x1) - x2")
    want = ex.add(*(ex.mul(s.components[i][j], ex.diff(f, i + 1), ex.diff(g, j + 1)) for i in range(2) for j in range(2)))
    assert ex.equal_prob(generated_bracket(op, Density(f, 0), Density(g, 0)).coeff, want, box(2))


def test_extend_needs_weight_zero():
    with pytest.raises(WeightError):
        extend_bracket(TensorDensity2.identity(2, 1), ProjectiveClass.zero(2))


# -- rho_sigma_operator ---------------------------------------------------------------------------

def test_rho_sigma_trivial_density_is_main(rng):
    s = random_tensor(rng, 2, Fraction(1, 2))
    p = random_projective_class(rng, 2)
    assert same_operator(rho_sigma_operator(s, p, Density(ex.ONE, 0), 0), main_operator(s, p), box(2))


def test_rho_sigma_gamma_shift():
    # σ = 0, ρ = exp(x1): γ gains ((n+1)/(n+3−λ(n+1))) · ((n+4)/(n+2)) S^i1, and (n+4)/(n+2) = 3/2 at n = 2
    s = tensor(2, {"1,1": "1 + x1^2", "1,2": "x1*x2", "2,2": "2 - x2"}, Fraction(1, 2))
    p = projective_class(connection(2, {"1,1,1": "x2", "2,1,2": "x1"}))
    rho = Density(ex.parse("exp(x1)"), 0)
    op = rho_sigma_operator(s, p, rho, 0)
    g, _ = gamma_theta(s, p)
    k = Fraction(3) / (5 - Fraction(1, 2) * 3)
    for i in range(2):
        want = ex.add(g[i], ex.mul(ex.const(Fraction(3, 2) * k), s.components[i][0]))
        assert ex.equal_prob(op.gamma[i], want, box(2))


def test_rho_sigma_is_constant_free(rng):
    s = random_tensor(rng, 2, Fraction(1, 3))
    op = rho_sigma_operator(s, random_projective_class(rng, 2), Density(ex.parse("1 + x1^2"), Fraction(1, 4)))
    assert ex.equal_prob(apply(op, Density(ex.ONE, 0)).coeff, ex.ZERO, box(2))


def test_rho_sigma_errors():
    s = TensorDensity2.identity(2)
    p = ProjectiveClass.zero(2)
    with pytest.raises(NonpositiveDensityError):
        rho_sigma_operator(s, p, Density(ex.parse("x1 - 1"), 0), 0, domain=box(2))
    with pytest.raises(NonpositiveDensityError):
        rho_sigma_operator(s, p, Density(ex.const(-2), 0), 0)
    # λ_eff = 0 + (6/4)σ = 4/3 at σ = 8/9
    with pytest.raises(ShiftedResonanceError):
        rho_sigma_operator(s, p, Density(ex.ONE, Fraction(8, 9)))


# -- flat_density_bracket ------------------------------------------------------------------------

def test_flat_bracket_constant_density():
    B = flat_density_bracket(TensorDensity2.identity(2), Density(ex.const(3), 1))
    assert all(g.is_zero() for g in B.gamma) and B.theta.is_zero()


def test_flat_bracket_exponential_density():
    B = flat_density_bracket(TensorDensity2.identity(2), Density(ex.parse("exp(x1)"), 1))
    d = box(2)
    assert ex.equal_prob(B.gamma[0], ex.const(-1), d)
    assert ex.equal_prob(B.gamma[1], ex.ZERO, d)
    assert ex.equal_prob(B.theta, ex.ONE, d)


def test_flat_bracket_differs_from_extension():
    s = tensor(2, {"1,1": "1 + x1^2", "1,2": "x1*x2/2", "2,2": "2 - x2 + x1*x2"})
    p = projective_class(connection(2, {"1,1,1": "x2", "1,2,2": "1 - x1"}))
    fb = flat_density_bracket(s, Density(ex.parse("1 + x1^2 + x2"), 1))
    eb = extend_bracket(s, p)
    pt = {1: 0.5, 2: 0.7}
    assert any(abs(ex.evaluate(a, pt) - ex.evaluate(b, pt)) > 1e-3 for a, b in zip(fb.gamma, eb.gamma))


def test_flat_bracket_preconditions():
    with pytest.raises(WeightError):
        flat_density_bracket(TensorDensity2.identity(2), Density(ex.ONE, 0))
    with pytest.raises(WeightError):
        flat_density_bracket(TensorDensity2.identity(2, 1), Density(ex.ONE, 1))
    with pytest.raises(NonpositiveDensityError):
        flat_density_bracket(TensorDensity2.identity(2), Density(ex.parse("x2 - 2"), 1), box(2))


def test_types_reject_bad_shapes():
    with pytest.raises(DimensionError):
        DensityBracket(TensorDensity2.identity(2).components, (0,), 0)
    with pytest.raises(DimensionError):
        main_operator(TensorDensity2.identity(2), ProjectiveClass.zero(3))


def test_random_weights_avoid_resonances(rng):
    for _ in range(50):
        w = random_weight(rng, 2)
        assert all(abs(w - r) >= Fraction(1, 10) for r in resonances(2))
    assert np.isfinite(float(random_weight(rng, 3)))
    assert random_connection(rng, 2).n == 2
