"""Charts, transformation laws, connections and projective classes.

Index conventions: a rank-3 array ``c[k][i][j]`` holds the coefficient with
upper index k and lower indices i, j.  Array position p refers to the chart
variable ``variables[p]``; on the base manifold that is x1..xn, on the
Thomas bundle x0..xn (x0 first).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import expr as ex
from .errors import (
    DimensionError,
    DimensionTooSmallError,
    NonpositiveJacobianError,
    ValidationError,
    WeightError,
)
from .expr import Expr, SampleDomain

Array2 = tuple[tuple[Expr, ...], ...]
Array3 = tuple[tuple[tuple[Expr, ...], ...], ...]


def base_variables(n: int) -> tuple[int, ...]:
    return tuple(range(1, n + 1))


def _as_expr(e) -> Expr:
    if isinstance(e, Expr):
        return e
    if isinstance(e, str):
        return ex.parse(e)
    return ex.const(e)


def _array2(rows) -> Array2:
    return tuple(tuple(_as_expr(e) for e in row) for row in rows)


def _array3(blocks) -> Array3:
    return tuple(_array2(b) for b in blocks)


def zeros3(n: int) -> Array3:
    return tuple(tuple(tuple(ex.ZERO for _ in range(n)) for _ in range(n)) for _ in range(n))


def symmetric3(n: int, fn) -> Array3:
    """Build c[k][i][j] = fn(k, i, j) for i <= j and mirror, so symmetry is structural."""
    out = [[[None] * n for _ in range(n)] for _ in range(n)]
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                out[k][i][j] = out[k][j][i] = fn(k, i, j)
    return _array3(out)


def symmetric2(n: int, fn) -> Array2:
    out = [[None] * n for _ in range(n)]
    for i in range(n):
        for j in range(i, n):
            out[i][j] = out[j][i] = fn(i, j)
    return _array2(out)


def determinant(m: Sequence[Sequence[Expr]]) -> Expr:
    """Leibniz expansion; fine for the small dimensions used here."""
    n = len(m)
    terms = []
    for perm in itertools.permutations(range(n)):
        inversions = sum(1 for a in range(n) for b in range(a + 1, n) if perm[a] > perm[b])
        factors = [m[r][perm[r]] for r in range(n)]
        if any(f.is_zero() for f in factors):
            continue
        t = ex.mul(*factors)
        terms.append(ex.neg(t) if inversions % 2 else t)
    return ex.add(*terms)


def jacobian_power(jac: Expr, exponent: Fraction) -> Expr:
    """``jac ** exponent`` for a positive Jacobian determinant."""
    exponent = ex.as_fraction(exponent)
    if exponent == 0:
        return ex.ONE
    if exponent.denominator == 1:
        return ex.power(jac, int(exponent))
    return ex.exp(ex.mul(ex.const(exponent), ex.log(jac)))


# -- chart transitions -------------------------------------------------------

@dataclass(frozen=True)
class ChartTransition:
    """Coordinate change x̄ = f(x) with explicit inverse x = g(x̄).

    Both maps are written in the same variable slots: ``forward[p]`` is
    x̄^{variables[p]} as a function of the old coordinates, ``inverse[p]`` is
    x^{variables[p]} as a function of the new ones.
    """

    forward: tuple[Expr, ...]
    inverse: tuple[Expr, ...]
    variables: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        fwd = tuple(_as_expr(e) for e in self.forward)
        inv = tuple(_as_expr(e) for e in self.inverse)
        if len(fwd) != len(inv):
            raise DimensionError("forward and inverse maps have different lengths")
        variables = self.variables if self.variables is not None else base_variables(len(fwd))
        variables = tuple(variables)
        if len(variables) != len(fwd):
            raise DimensionError("variables do not match the map dimension")
        allowed = set(variables)
        for e in fwd + inv:
            stray = e.free_vars() - allowed
            if stray:
                raise ValidationError(f"transition uses variables {sorted(stray)} outside the chart")
        object.__setattr__(self, "forward", fwd)
        object.__setattr__(self, "inverse", inv)
        object.__setattr__(self, "variables", variables)

    @classmethod
    def identity(cls, n: int) -> "ChartTransition":
        vs = [ex.var(v) for v in base_variables(n)]
        return cls(tuple(vs), tuple(vs))

    @property
    def n(self) -> int:
        return len(self.forward)

    def pull_to_new(self, e: Expr) -> Expr:
        """Rewrite an expression in old coordinates as a function of the new ones."""
        return ex.substitute(e, dict(zip(self.variables, self.inverse)))

    def forward_jacobian(self) -> Array2:
        """∂x̄^a/∂x^i in old coordinates."""
        return tuple(tuple(ex.diff(f, v) for v in self.variables) for f in self.forward)

    def forward_jacobian_new(self) -> Array2:
        """∂x̄^a/∂x^i rewritten in new coordinates."""
        cache = getattr(self, "_fjn", None)
        if cache is None:
            cache = tuple(tuple(self.pull_to_new(e) for e in row) for row in self.forward_jacobian())
            object.__setattr__(self, "_fjn", cache)
        return cache

    def inverse_jacobian(self) -> Array2:
        """∂x^i/∂x̄^a in new coordinates."""
        return tuple(tuple(ex.diff(g, v) for v in self.variables) for g in self.inverse)

    def jacobian_det(self) -> Expr:
        """det ∂x̄/∂x in old coordinates."""
        return determinant(self.forward_jacobian())

    def jacobian_det_new(self) -> Expr:
        """J = det ∂x̄/∂x rewritten in the new coordinates."""
        cache = getattr(self, "_jdn", None)
        if cache is None:
            cache = self.pull_to_new(self.jacobian_det())
            object.__setattr__(self, "_jdn", cache)
        return cache

    def validate(self, domain: SampleDomain, target: Optional[SampleDomain] = None) -> float:
        """Check g∘f = id, f∘g = id and det > 0; returns the worst round-trip defect.

        ``domain`` samples old coordinates, ``target`` (default ``domain``)
        samples new ones.
        """
        target = target or domain
        worst = 0.0
        sub_f = dict(zip(self.variables, self.forward))
        sub_g = dict(zip(self.variables, self.inverse))
        for v, g in zip(self.variables, self.inverse):
            worst = max(worst, ex.defect(ex.substitute(g, sub_f), ex.var(v), domain))
        for v, f in zip(self.variables, self.forward):
            worst = max(worst, ex.defect(ex.substitute(f, sub_g), ex.var(v), target))
        if worst > max(domain.tol, target.tol):
            raise ValidationError(f"inverse map does not invert the forward map (defect {worst:.3g})")
        det_vals = ex.evaluate_batch(self.jacobian_det(), domain.points())
        if np.any(det_vals <= 0):
            raise NonpositiveJacobianError(
                f"Jacobian determinant not positive on the sample domain (min {det_vals.min():.3g})"
            )
        return worst

    def compose(self, then: "ChartTransition") -> "ChartTransition":
        """The transition ``then ∘ self``."""
        if then.variables != self.variables:
            raise DimensionError("cannot compose transitions on different charts")
        fwd = tuple(ex.substitute(f, dict(zip(self.variables, self.forward))) for f in then.forward)
        inv = tuple(ex.substitute(g, dict(zip(self.variables, then.inverse))) for g in self.inverse)
        return ChartTransition(fwd, inv, self.variables)


# -- geometric objects ---------------------------------------------------------

def _check_square3(c: Array3, n: int, what: str):
    if len(c) != n or any(len(r) != n or any(len(x) != n for x in r) for r in c):
        raise DimensionError(f"{what} must be an n x n x n array with n={n}")


@dataclass(frozen=True)
class Connection:
    """Torsion-free linear connection coefficients Γ^k_ij."""

    coeffs: Array3
    variables: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        c = _array3(self.coeffs)
        n = len(c)
        _check_square3(c, n, "connection")
        object.__setattr__(self, "coeffs", c)
        vs = tuple(self.variables) if self.variables is not None else base_variables(n)
        if len(vs) != n:
            raise DimensionError("variables do not match connection dimension")
        object.__setattr__(self, "variables", vs)
        for k in range(n):
            for i in range(n):
                for j in range(i + 1, n):
                    if c[k][i][j] is not c[k][j][i]:
                        raise ValidationError(
                            f"coefficients not symmetric in lower indices at ({k},{i},{j})"
                        )

    @classmethod
    def zero(cls, n: int) -> "Connection":
        return cls(zeros3(n))

    @property
    def n(self) -> int:
        return len(self.coeffs)

    def __getitem__(self, kij):
        k, i, j = kij
        return self.coeffs[k][i][j]

    def omega_shift(self, omega: Sequence) -> "Connection":
        """Γ + (δ^k_i ω_j + δ^k_j ω_i): projectively equivalent to Γ."""
        om = [_as_expr(w) for w in omega]
        if len(om) != self.n:
            raise DimensionError("ω has the wrong length")

        def fn(k, i, j):
            extra = []
            if k == i:
                extra.append(om[j])
            if k == j:
                extra.append(om[i])
            return ex.add(self.coeffs[k][i][j], *extra)

        return Connection(symmetric3(self.n, fn), self.variables)


@dataclass(frozen=True)
class ProjectiveClass:
    """Trace-free symmetric coefficients Π^k_ij of a projective class.

    Symmetry is checked structurally at construction; the trace conditions
    need sampling, see :meth:`trace_defect` and :meth:`validated`.
    """

    coeffs: Array3
    variables: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        Connection.__post_init__(self)

    @classmethod
    def zero(cls, n: int) -> "ProjectiveClass":
        return cls(zeros3(n))

    @classmethod
    def validated(cls, coeffs, domain: SampleDomain, variables=None) -> "ProjectiveClass":
        p = cls(coeffs, variables)
        worst = p.trace_defect(domain)
        if worst > domain.tol:
            raise ValidationError(f"projective class is not trace free (defect {worst:.3g})")
        return p

    @property
    def n(self) -> int:
        return len(self.coeffs)

    def __getitem__(self, kij):
        k, i, j = kij
        return self.coeffs[k][i][j]

    def traces(self) -> tuple[tuple[Expr, ...], tuple[Expr, ...]]:
        """(Σ_s Π^s_sj, Σ_s Π^s_is) as expressions."""
        n = self.n
        first = tuple(ex.add(*(self.coeffs[s][s][j] for s in range(n))) for j in range(n))
        second = tuple(ex.add(*(self.coeffs[s][i][s] for s in range(n))) for i in range(n))
        return first, second

    def trace_defect(self, domain: SampleDomain) -> float:
        first, second = self.traces()
        return ex.defect_many([(t, ex.ZERO) for t in first + second], domain)

    def as_connection(self) -> Connection:
        """Π is itself a torsion-free connection representing its own class."""
        return Connection(self.coeffs, self.variables)


@dataclass(frozen=True)
class TensorDensity2:
    """Symmetric contravariant S^ij such that S^ij |Dx|^weight is a tensor."""

    components: Array2
    weight: Fraction = Fraction(0)
    variables: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        s = _array2(self.components)
        n = len(s)
        if any(len(r) != n for r in s):
            raise DimensionError("tensor density must be a square array")
        for i in range(n):
            for j in range(i + 1, n):
                if s[i][j] is not s[j][i]:
                    raise ValidationError(f"S is not symmetric at ({i},{j})")
        object.__setattr__(self, "components", s)
        object.__setattr__(self, "weight", ex.as_fraction(self.weight))
        vs = tuple(self.variables) if self.variables is not None else base_variables(n)
        if len(vs) != n:
            raise DimensionError("variables do not match tensor dimension")
        object.__setattr__(self, "variables", vs)

    @classmethod
    def identity(cls, n: int, weight=0) -> "TensorDensity2":
        return cls(symmetric2(n, lambda i, j: ex.ONE if i == j else ex.ZERO), weight)

    @property
    def n(self) -> int:
        return len(self.components)

    def __getitem__(self, ij):
        i, j = ij
        return self.components[i][j]

    def with_weight(self, weight) -> "TensorDensity2":
        return TensorDensity2(self.components, weight, self.variables)


@dataclass(frozen=True)
class Density:
    """φ(x)|Dx|^weight with φ in the base variables only."""

    coeff: Expr
    weight: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "coeff", _as_expr(self.coeff))
        object.__setattr__(self, "weight", ex.as_fraction(self.weight))
        if 0 in self.coeff.free_vars():
            raise ValidationError("density coefficients may not depend on the fibre coordinate x0")

    def __mul__(self, other: "Density") -> "Density":
        if not isinstance(other, Density):
            return NotImplemented
        return Density(ex.mul(self.coeff, other.coeff), self.weight + other.weight)

    def scale(self, c) -> "Density":
        return Density(ex.mul(_as_expr(c), self.coeff), self.weight)

    def __add__(self, other: "Density") -> "Density":
        if other.weight != self.weight:
            raise WeightError("cannot add densities of different weights")
        return Density(ex.add(self.coeff, other.coeff), self.weight)

    def __sub__(self, other: "Density") -> "Density":
        if other.weight != self.weight:
            raise WeightError("cannot subtract densities of different weights")
        return Density(ex.sub(self.coeff, other.coeff), self.weight)


def _require_dim(*objs, minimum: int = 2):
    n = objs[0].n
    for o in objs[1:]:
        if o.n != n:
            raise DimensionError(f"dimension mismatch: {n} vs {o.n}")
    for o in objs:
        if getattr(o, "variables", None) is not None and o.variables != objs[0].variables:
            raise DimensionError("objects live on different charts")
    if n < minimum:
        raise DimensionTooSmallError(f"dimension must be at least {minimum}, got {n}")
    return n


# -- operations ---------------------------------------------------------------

def projective_class(c: Connection) -> ProjectiveClass:
    """Π^k_ij = Γ^k_ij − (δ^k_i Γ^s_sj + δ^k_j Γ^s_is)/(n+1)."""
    n = _require_dim(c)
    g = c.coeffs
    tr1 = [ex.add(*(g[s][s][j] for s in range(n))) for j in range(n)]
    tr2 = [ex.add(*(g[s][i][s] for s in range(n))) for i in range(n)]
    inv = ex.const(Fraction(1, n + 1))

    def fn(k, i, j):
        corr = []
        if k == i:
            corr.append(tr1[j])
        if k == j:
            corr.append(tr2[i])
        if not corr:
            return g[k][i][j]
        return ex.sub(g[k][i][j], ex.mul(inv, ex.add(*corr)))

    return ProjectiveClass(symmetric3(n, fn), c.variables)


def transform_connection(c: Connection, t: ChartTransition) -> Connection:
    """Γ̄^c_ab = (∂x̄^c/∂x^k)(∂x^i/∂x̄^a)(∂x^j/∂x̄^b)Γ^k_ij + (∂x̄^c/∂x^k)∂²x^k/∂x̄^a∂x̄^b."""
    n = c.n
    if t.n != n or t.variables != c.variables:
        raise DimensionError("transition and connection live on different charts")
    fj = t.forward_jacobian_new()
    gj = t.inverse_jacobian()
    vs = t.variables
    gamma = [[[t.pull_to_new(c.coeffs[k][i][j]) for j in range(n)] for i in range(n)] for k in range(n)]
    second = [[[ex.diff(ex.diff(t.inverse[k], vs[a]), vs[b]) for b in range(n)] for a in range(n)] for k in range(n)]

    def fn(cc, a, b):
        terms = []
        for k in range(n):
            if fj[cc][k].is_zero():
                continue
            inner = [second[k][a][b]]
            for i in range(n):
                if gj[i][a].is_zero():
                    continue
                for j in range(n):
                    if gj[j][b].is_zero() or gamma[k][i][j].is_zero():
                        continue
                    inner.append(ex.mul(gj[i][a], gj[j][b], gamma[k][i][j]))
            terms.append(ex.mul(fj[cc][k], ex.add(*inner)))
        return ex.add(*terms)

    return Connection(symmetric3(n, fn), c.variables)


def transform_tensor_density(s: TensorDensity2, t: ChartTransition) -> TensorDensity2:
    """S̄^ab = J^{-λ}(∂x̄^a/∂x^i)(∂x̄^b/∂x^j)S^ij in the new coordinates."""
    n = s.n
    if t.n != n or t.variables != s.variables:
        raise DimensionError("transition and tensor live on different charts")
    fj = t.forward_jacobian_new()
    factor = jacobian_power(t.jacobian_det_new(), -s.weight)
    comps = [[t.pull_to_new(s.components[i][j]) for j in range(n)] for i in range(n)]

    def fn(a, b):
        terms = []
        for i in range(n):
            for j in range(n):
                if fj[a][i].is_zero() or fj[b][j].is_zero() or comps[i][j].is_zero():
                    continue
                terms.append(ex.mul(fj[a][i], fj[b][j], comps[i][j]))
        return ex.mul(factor, ex.add(*terms))

    return TensorDensity2(symmetric2(n, fn), s.weight, s.variables)


def transform_density(d: Density, t: ChartTransition) -> Density:
    """φ̄ = J^{-μ} φ in the new coordinates."""
    factor = jacobian_power(t.jacobian_det_new(), -d.weight)
    return Density(ex.mul(factor, t.pull_to_new(d.coeff)), d.weight)


def ricci_part(p: ProjectiveClass) -> Array2:
    """R_ij = ∂_s Π^s_ij − Π^p_qi Π^q_pj (symmetric in i, j)."""
    n = p.n
    vs = p.variables
    c = p.coeffs

    def fn(i, j):
        div_term = [ex.diff(c[s][i][j], vs[s]) for s in range(n)]
        quad = [ex.mul(c[a][b][i], c[b][a][j]) for a in range(n) for b in range(n)
                if not (c[a][b][i].is_zero() or c[b][a][j].is_zero())]
        return ex.sub(ex.add(*div_term), ex.add(*quad))

    return symmetric2(n, fn)


def divergence(s: Array2, variables: Sequence[int]) -> tuple[Expr, ...]:
    """∂_j S^ij."""
    n = len(s)
    return tuple(ex.add(*(ex.diff(s[i][j], variables[j]) for j in range(n))) for i in range(n))


def contract_projective(s: Array2, c: Array3) -> tuple[Expr, ...]:
    """S^jk Π^i_jk."""
    n = len(s)
    out = []
    for i in range(n):
        terms = [ex.mul(s[j][k], c[i][j][k]) for j in range(n) for k in range(n)
                 if not (s[j][k].is_zero() or c[i][j][k].is_zero())]
        out.append(ex.add(*terms))
    return tuple(out)


@dataclass(frozen=True)
class SecondOrderOperator:
    """S^ij ∂_i∂_j + A^i ∂_i + C acting on functions of the chart variables."""

    second: Array2
    first: tuple[Expr, ...]
    zero: Expr = ex.ZERO
    variables: tuple[int, ...] = ()

    @property
    def n(self) -> int:
        return len(self.first)

    def apply(self, f: Expr) -> Expr:
        vs = self.variables
        grads = [ex.diff(f, v) for v in vs]
        terms = []
        for i in range(self.n):
            for j in range(self.n):
                if not self.second[i][j].is_zero():
                    terms.append(ex.mul(self.second[i][j], ex.diff(grads[i], vs[j])))
        for i in range(self.n):
            if not self.first[i].is_zero():
                terms.append(ex.mul(self.first[i], grads[i]))
        terms.append(ex.mul(self.zero, f))
        return ex.add(*terms)


def laplacian_first_order(s: Array2, c: Array3, variables: Sequence[int]) -> tuple[Expr, ...]:
    """A^i = (2/(N+3))∂_j S^ij − ((N+1)/(N+3)) S^jk Π^i_jk, N the number of variables."""
    n = len(s)
    dv = divergence(s, variables)
    cp = contract_projective(s, c)
    a = ex.const(Fraction(2, n + 3))
    b = ex.const(Fraction(n + 1, n + 3))
    return tuple(ex.sub(ex.mul(a, dv[i]), ex.mul(b, cp[i])) for i in range(n))


def projective_laplacian(s: TensorDensity2, p: ProjectiveClass) -> SecondOrderOperator:
    """The projective Laplacian S^ij∂_i∂_j + A^i∂_i on functions."""
    _require_dim(s, p)
    if s.weight != 0:
        raise WeightError(f"the projective Laplacian needs a weight-0 tensor, got weight {s.weight}")
    first = laplacian_first_order(s.components, p.coeffs, p.variables)
    return SecondOrderOperator(s.components, first, ex.ZERO, p.variables)


def upper_connection(s: TensorDensity2, p: ProjectiveClass) -> tuple[Expr, ...]:
    """Γ^i = ((n+1)/(n+3))(∂_j S^ij + S^jk Π^i_jk)."""
    n = _require_dim(s, p)
    if s.weight != 0:
        raise WeightError(f"upper connection needs a weight-0 tensor, got weight {s.weight}")
    dv = divergence(s.components, p.variables)
    cp = contract_projective(s.components, p.coeffs)
    k = ex.const(Fraction(n + 1, n + 3))
    return tuple(ex.mul(k, ex.add(dv[i], cp[i])) for i in range(n))
