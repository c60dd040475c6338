from fractions import Fraction

import numpy as np
import pytest

from projlap import expr as ex
from projlap.errors import (
    DimensionError,
    DimensionTooSmallError,
    NonpositiveJacobianError,
    ValidationError,
    WeightError,
)
from projlap.generators import random_connection, random_omega, random_polynomial, random_tensor, random_transition
from projlap.geom import (
    ChartTransition,
    Connection,
    Density,
    ProjectiveClass,
    TensorDensity2,
    projective_class,
    projective_laplacian,
    transform_connection,
    transform_density,
    transform_tensor_density,
    upper_connection,
)

from conftest import box, connection, tensor, transition

SCALE2 = (("2*x1", "2*x2"), ("x1/2", "x2/2"))
QUADRATIC = (("x1", "x2 + x1^2"), ("x1", "x2 - x1^2"))


def values(arr, point):
    """Evaluate a nested array of expressions at one point into a numpy array."""
    if isinstance(arr, ex.Expr):
        return ex.evaluate(arr, point)
    return np.array([values(a, point) for a in arr])


def assert_zero(e, d):
    assert ex.equal_prob(e, ex.ZERO, d)


# -- projective_class -----------------------------------------------------------------

def test_flat_connection_has_zero_class(dom2):
    p = projective_class(Connection.zero(2))
    for e in np.ravel(np.array(p.coeffs, dtype=object)):
        assert e.is_zero()


def test_omega_shift_has_zero_class(dom2):
    shifted = Connection.zero(2).omega_shift([ex.parse("x2"), ex.ZERO])
    # traces of the shift are (n+1)ω
    first, _ = projective_class(shifted).traces()
    tr = [ex.add(*(shifted.coeffs[s][s][j] for s in range(2))) for j in range(2)]
    assert ex.equal_prob(tr[0], ex.parse("3*x2"), dom2)
    for e in np.ravel(np.array(projective_class(shifted).coeffs, dtype=object)):
        assert_zero(e, dom2)


def test_single_component_class(dom2):
    p = projective_class(connection(2, {"1,1,1": "x2"}))
    expected = {(0, 0, 0): "x2/3", (1, 0, 1): "-x2/3", (1, 1, 0): "-x2/3"}
    for k in range(2):
        for i in range(2):
            for j in range(2):
                want = ex.parse(expected.get((k, i, j), "0"))
                assert ex.equal_prob(p.coeffs[k][i][j], want, dom2), (k, i, j)


@pytest.mark.parametrize("n", [2, 3])
def test_trace_free(rng, n):
    d = box(n)
    for _ in range(5):
        assert projective_class(random_connection(rng, n)).trace_defect(d) <= 1e-9


@pytest.mark.parametrize("n", [2, 3])
def test_projective_equivalence(rng, n):
    d = box(n)
    gamma = random_connection(rng, n)
    p = projective_class(gamma)
    for _ in range(3):
        q = projective_class(gamma.omega_shift(random_omega(rng, n)))
        pairs = [(a, b) for a, b in zip(np.ravel(np.array(p.coeffs, dtype=object)),
                                        np.ravel(np.array(q.coeffs, dtype=object)))]
        assert ex.equal_prob_many(pairs, d)


def test_projective_class_needs_dimension_two():
    with pytest.raises(DimensionTooSmallError):
        projective_class(Connection(((( ex.var(1),),),)))


def test_connection_must_be_symmetric():
    x = ex.var(1)
    with pytest.raises(ValidationError):
        Connection((((ex.ZERO, x), (ex.ZERO, ex.ZERO)), ((ex.ZERO, ex.ZERO), (ex.ZERO, ex.ZERO))))


def test_validated_class_rejects_trace(dom2):
    gamma = connection(2, {"1,1,1": "x2"})
    with pytest.raises(ValidationError):
        ProjectiveClass.validated(gamma.coeffs, dom2)
    ProjectiveClass.validated(projective_class(gamma).coeffs, dom2)


# -- transitions -------------------------------------------------------------------

def test_transition_validation(dom2):
    t = transition(*QUADRATIC)
    assert t.validate(dom2) <= 1e-12
    bad = transition(("x1", "x2 + x1^2"), ("x1", "x2 + x1^2"))
    with pytest.raises(ValidationError):
        bad.validate(dom2)
    flip = transition(("-x1", "x2"), ("-x1", "x2"))
    with pytest.raises(NonpositiveJacobianError):
        flip.validate(dom2, box(2, interval=(-1.2, 1.2)))


# -- transform_connection -------------------------------------------------------------

def test_identity_transition_keeps_connection(dom2):
    gamma = connection(2, {"1,1,2": "x1*x2", "2,2,2": "exp(x1)"})
    moved = transform_connection(gamma, ChartTransition.identity(2))
    for a, b in zip(np.ravel(np.array(gamma.coeffs, dtype=object)), np.ravel(np.array(moved.coeffs, dtype=object))):
        assert ex.equal_prob(a, b, dom2)


def test_affine_map_keeps_flat_connection(dom2):
    t = transition(("2*x1 + x2", "x2 + 1"), ("(x1 - x2 + 1)/2", "x2 - 1"))
    moved = transform_connection(Connection.zero(2), t)
    for e in np.ravel(np.array(moved.coeffs, dtype=object)):
        assert_zero(e, dom2)


def test_quadratic_map_gives_inhomogeneous_term(dom2):
    # x2 = x̄2 − x̄1², so only ∂²x2/∂x̄1² = −2 survives, and ∂x̄2/∂x2 = 1.
    moved = transform_connection(Connection.zero(2), transition(*QUADRATIC))
    for k in range(2):
        for i in range(2):
            for j in range(2):
                want = ex.const(-2) if (k, i, j) == (1, 0, 0) else ex.ZERO
                assert ex.equal_prob(moved.coeffs[k][i][j], want, dom2)


# -- tensor and density laws ------------------------------------------------------------

def test_tensor_identity_transition(dom2):
    s = tensor(2, {"1,1": "1 + x1^2", "1,2": "x1*x2"}, Fraction(1, 2))
    moved = transform_tensor_density(s, ChartTransition.identity(2))
    for i in range(2):
        for j in range(2):
            assert ex.equal_prob(moved.components[i][j], s.components[i][j], dom2)


def test_tensor_weight_zero_is_plain_tensor_law(dom2):
    s = tensor(2, {"1,1": "1", "2,2": "1"})
    moved = transform_tensor_density(s, transition(*QUADRATIC))
    # (∂x̄/∂x) δ (∂x̄/∂x)^T with ∂x̄/∂x = [[1,0],[2x1,1]], x1 = x̄1
    want = {(0, 0): "1", (0, 1): "2*x1", (1, 1): "4*x1^2 + 1"}
    for (i, j), text in want.items():
        assert ex.equal_prob(moved.components[i][j], ex.parse(text), dom2)


def test_tensor_weight_one_scaling(dom2):
    s = TensorDensity2.identity(2, 1)
    moved = transform_tensor_density(s, transition(*SCALE2))
    for i in range(2):
        for j in range(2):
            assert ex.equal_prob(moved.components[i][j], s.components[i][j], dom2)


def test_density_weight_zero_is_pullback(dom2):
    d = Density(ex.parse("x1*x2^2"), 0)
    moved = transform_density(d, transition(*QUADRATIC))
    assert ex.equal_prob(moved.coeff, ex.parse("x1*(x2 - x1^2)^2"), dom2)


def test_density_weight_one_scaling(dom2):
    d = Density(ex.parse("1 + x1"), 1)
    moved = transform_density(d, transition(*SCALE2))
    assert ex.equal_prob(moved.coeff, ex.parse("(1 + x1/2)/4"), dom2)


def test_density_identity_transition(dom2):
    d = Density(ex.parse("exp(x1)*x2"), Fraction(-2, 3))
    moved = transform_density(d, ChartTransition.identity(2))
    assert ex.equal_prob(moved.coeff, d.coeff, dom2)


def test_density_rejects_fibre_variable():
    with pytest.raises(ValidationError):
        Density(ex.parse("x0 + x1"), 0)


# -- projective Laplacian and upper connection -------------------------------------------

def test_euclidean_laplacian(dom2):
    lap = projective_laplacian(TensorDensity2.identity(2), ProjectiveClass.zero(2))
    assert ex.equal_prob(lap.apply(ex.parse("x1^2 + x2^2")), ex.const(4), dom2)


def test_laplacian_first_order_constant(dom2):
    s = tensor(2, {"1,1": "x1", "2,2": "x1"})
    lap = projective_laplacian(s, ProjectiveClass.zero(2))
    assert ex.equal_prob(lap.first[0], ex.const(Fraction(2, 5)), dom2)
    assert_zero(lap.first[1], dom2)


def _contraction_oracle(s: TensorDensity2, p: ProjectiveClass, point, h=1e-6):
    """(2/(n+3))∂_jS^ij − ((n+1)/(n+3))S^jkΠ^i_jk by loops and central differences."""
    n = s.n
    S = values(s.components, point)
    P = values(p.coeffs, point)
    div = np.zeros(n)
    for i in range(n):
        for j in range(n):
            up, down = dict(point), dict(point)
            up[j + 1] += h
            down[j + 1] -= h
            div[i] += (ex.evaluate(s.components[i][j], up) - ex.evaluate(s.components[i][j], down)) / (2 * h)
    contr = np.zeros(n)
    for i in range(n):
        for j in range(n):
            for k in range(n):
                contr[i] += S[j, k] * P[i, j, k]
    return 2 / (n + 3) * div - (n + 1) / (n + 3) * contr


def test_laplacian_curved_against_loop_oracle(dom2):
    p = projective_class(connection(2, {"1,1,1": "x2"}))
    lap = projective_laplacian(TensorDensity2.identity(2), p)
    assert ex.equal_prob(lap.first[0], ex.parse("-x2/5"), dom2)
    assert_zero(lap.first[1], dom2)
    for point in ({1: 0.3, 2: 0.8}, {1: 1.1, 2: 0.25}):
        assert np.allclose([ex.evaluate(a, point) for a in lap.first], _contraction_oracle(
            TensorDensity2.identity(2), p, point), atol=1e-9)


@pytest.mark.parametrize("n", [2, 3])
def test_laplacian_random_against_loop_oracle(rng, n):
    s = random_tensor(rng, n)
    p = projective_class(random_connection(rng, n))
    lap = projective_laplacian(s, p)
    point = {v: 0.2 + 0.17 * v for v in range(1, n + 1)}
    got = np.array([ex.evaluate(a, point) for a in lap.first])
    assert np.allclose(got, _contraction_oracle(s, p, point), rtol=1e-7, atol=1e-7)


def test_upper_connection_constant_tensor(dom2):
    for g in upper_connection(TensorDensity2.identity(2), ProjectiveClass.zero(2)):
        assert g.is_zero()


def test_upper_connection_constant(dom2):
    g = upper_connection(tensor(2, {"1,1": "x1", "2,2": "x1"}), ProjectiveClass.zero(2))
    assert ex.equal_prob(g[0], ex.const(Fraction(3, 5)), dom2)
    assert_zero(g[1], dom2)


def test_laplacian_rejects_weight_and_mismatch():
    with pytest.raises(WeightError):
        projective_laplacian(TensorDensity2.identity(2, 1), ProjectiveClass.zero(2))
    with pytest.raises(WeightError):
        upper_connection(TensorDensity2.identity(2, 1), ProjectiveClass.zero(2))
    with pytest.raises(DimensionError):
        projective_laplacian(TensorDensity2.identity(2), ProjectiveClass.zero(3))


def test_tensor_must_be_symmetric():
    with pytest.raises(ValidationError):
        TensorDensity2(((ex.ONE, ex.var(1)), (ex.ZERO, ex.ONE)))


@pytest.mark.parametrize("n", [2, 3])
def test_laplacian_naturality(rng, n):
    d = box(n)
    gamma = random_connection(rng, n)
    s = random_tensor(rng, n)
    t = random_transition(rng, n)
    t.validate(d)
    lap = projective_laplacian(s, projective_class(gamma))
    lap_bar = projective_laplacian(transform_tensor_density(s, t), projective_class(transform_connection(gamma, t)))
    f = random_polynomial(rng, tuple(range(1, n + 1)), 3, terms=4)
    # the random transition maps the box into itself only roughly; sample the image
    image = box(n, tol=1e-7)
    assert ex.defect(lap_bar.apply(t.pull_to_new(f)), t.pull_to_new(lap.apply(f)), image) <= 1e-7


def test_locally_projective_reduction(rng):
    s = random_tensor(rng, 3)
    lap = projective_laplacian(s, ProjectiveClass.zero(3))
    for i in range(3):
        div = ex.add(*(ex.diff(s.components[i][j], j + 1) for j in range(3)))
        assert ex.equal_prob(lap.first[i], ex.mul(ex.const(Fraction(2, 6)), div), box(3))
