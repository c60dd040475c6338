"""Second-order operators and brackets on the algebra of densities.

An operator of weight λ is stored in the normal form

    Δ = |Dx|^λ (S^ij ∂_i∂_j + 2γ^i w ∂_i + θ w² + a^i ∂_i + b w + c)

where w is the weight operator.  On a density of weight μ the weight
operator acts as multiplication by μ, which gives the pencil Δ_μ.
A bracket of weight λ is stored through its values on generators:
S^ij = {x^i, x^j}, γ^i = {x^i, |Dx|}, θ = {|Dx|, |Dx|}.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import expr as ex
from .errors import (
    DimensionError,
    DimensionTooSmallError,
    NearResonanceWarning,
    NonpositiveDensityError,
    ResonantWeightError,
    ShiftedResonanceError,
    WeightError,
)
from .expr import Expr, SampleDomain
from .geom import (
    Array2,
    Density,
    ProjectiveClass,
    SecondOrderOperator,
    TensorDensity2,
    base_variables,
    contract_projective,
    divergence,
    laplacian_first_order,
    ricci_part,
    symmetric2,
)
from .thomas import FIBRE, induced_projective_class

log = logging.getLogger(__name__)

RESONANCE_TOL = 1e-12
NEAR_RESONANCE_TOL = 1e-6


def _exprs(seq) -> tuple[Expr, ...]:
    return tuple(e if isinstance(e, Expr) else ex.parse(e) if isinstance(e, str) else ex.const(e)
                 for e in seq)


def _expr(e) -> Expr:
    return _exprs([e])[0]


@dataclass(frozen=True)
class DensityBracket:
    S: Array2
    gamma: tuple[Expr, ...]
    theta: Expr
    weight: Fraction = Fraction(0)
    variables: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        s = TensorDensity2(self.S, self.weight, self.variables)
        object.__setattr__(self, "S", s.components)
        object.__setattr__(self, "weight", s.weight)
        object.__setattr__(self, "variables", s.variables)
        object.__setattr__(self, "gamma", _exprs(self.gamma))
        object.__setattr__(self, "theta", _expr(self.theta))
        if len(self.gamma) != s.n:
            raise DimensionError("γ has the wrong length")

    @property
    def n(self) -> int:
        return len(self.S)

    @property
    def tensor(self) -> TensorDensity2:
        return TensorDensity2(self.S, self.weight, self.variables)

    def __call__(self, d1: Density, d2: Density) -> Density:
        return bracket_value(self, d1, d2)


@dataclass(frozen=True)
class DensityOperator:
    S: Array2
    gamma: tuple[Expr, ...]
    theta: Expr
    a: tuple[Expr, ...]
    b: Expr
    c: Expr
    weight: Fraction = Fraction(0)
    variables: Optional[tuple[int, ...]] = None

    def __post_init__(self):
        s = TensorDensity2(self.S, self.weight, self.variables)
        object.__setattr__(self, "S", s.components)
        object.__setattr__(self, "weight", s.weight)
        object.__setattr__(self, "variables", s.variables)
        for name in ("gamma", "a"):
            vals = _exprs(getattr(self, name))
            if len(vals) != s.n:
                raise DimensionError(f"{name} has the wrong length")
            object.__setattr__(self, name, vals)
        for name in ("theta", "b", "c"):
            object.__setattr__(self, name, _expr(getattr(self, name)))

    @property
    def n(self) -> int:
        return len(self.S)

    @classmethod
    def zero(cls, n: int, weight=0) -> "DensityOperator":
        z = tuple(ex.ZERO for _ in range(n))
        return cls(symmetric2(n, lambda i, j: ex.ZERO), z, ex.ZERO, z, ex.ZERO, ex.ZERO, weight)

    def components(self) -> dict[str, object]:
        return {"S": self.S, "gamma": self.gamma, "theta": self.theta,
                "a": self.a, "b": self.b, "c": self.c}

    def replace(self, **kw) -> "DensityOperator":
        fields = dict(S=self.S, gamma=self.gamma, theta=self.theta, a=self.a, b=self.b,
                      c=self.c, weight=self.weight, variables=self.variables)
        fields.update(kw)
        return DensityOperator(**fields)

    def __call__(self, d: Density) -> Density:
        return apply(self, d)


# -- application --------------------------------------------------------------

def pencil_coefficient(op: DensityOperator, mu, phi: Expr) -> Expr:
    """Coefficient of Δ(φ|Dx|^μ), i.e. the pencil member Δ_μ applied to φ."""
    mu = ex.as_fraction(mu)
    vs = op.variables
    n = op.n
    grads = [ex.diff(phi, v) for v in vs]
    m = ex.const(mu)
    terms = []
    for i in range(n):
        for j in range(n):
            if not op.S[i][j].is_zero():
                terms.append(ex.mul(op.S[i][j], ex.diff(grads[i], vs[j])))
    for i in range(n):
        first = ex.add(op.a[i], ex.mul(ex.const(2 * mu), op.gamma[i]))
        if not first.is_zero():
            terms.append(ex.mul(first, grads[i]))
    zero = ex.add(ex.mul(ex.const(mu * mu), op.theta), ex.mul(m, op.b), op.c)
    terms.append(ex.mul(zero, phi))
    return ex.add(*terms)


def apply(op: DensityOperator, d: Density) -> Density:
    """Apply to φ|Dx|^μ; the result has weight μ + λ."""
    stray = d.coeff.free_vars() - set(op.variables)
    if stray:
        raise DimensionError(f"density uses variables {sorted(stray)} outside the operator's chart")
    return Density(pencil_coefficient(op, d.weight, d.coeff), d.weight + op.weight)


def bracket_value(B: DensityBracket, d1: Density, d2: Density) -> Density:
    """{φ|Dx|^μ, ψ|Dx|^ν} = (S^ij∂φ∂ψ + γ^i(μφ∂_iψ + νψ∂_iφ) + μνθφψ)|Dx|^{μ+ν+λ}."""
    vs = B.variables
    n = B.n
    phi, psi = d1.coeff, d2.coeff
    mu, nu = d1.weight, d2.weight
    gp = [ex.diff(phi, v) for v in vs]
    gq = [ex.diff(psi, v) for v in vs]
    terms = []
    for i in range(n):
        for j in range(n):
            terms.append(ex.mul(B.S[i][j], gp[i], gq[j]))
        terms.append(ex.mul(B.gamma[i], ex.add(ex.mul(ex.const(mu), phi, gq[i]),
                                                ex.mul(ex.const(nu), psi, gp[i]))))
    terms.append(ex.mul(ex.const(mu * nu), B.theta, phi, psi))
    return Density(ex.add(*terms), mu + nu + B.weight)


def generated_bracket(op: DensityOperator, d1: Density, d2: Density) -> Density:
    """Half the deviation Δ(ab) − aΔ(b) − Δ(a)b + abΔ(1) of Δ from a derivation.

    The factor 1/2 makes the operator with principal part S^ij∂_i∂_j
    generate the bracket with {x^i, x^j} = S^ij.
    """
    one = Density(ex.ONE, 0)
    prod = d1 * d2
    dev = ex.add(
        apply(op, prod).coeff,
        ex.neg(ex.mul(d1.coeff, apply(op, d2).coeff)),
        ex.neg(ex.mul(apply(op, d1).coeff, d2.coeff)),
        ex.mul(prod.coeff, apply(op, one).coeff),
    )
    return Density(ex.mul(ex.const(Fraction(1, 2)), dev), d1.weight + d2.weight + op.weight)


def generator_densities(n: int) -> list[Density]:
    """x^1, ..., x^n (weight 0) and |Dx| (weight 1)."""
    return [Density(ex.var(v), 0) for v in base_variables(n)] + [Density(ex.ONE, 1)]


# -- constructions --------------------------------------------------------------

def canonical_operator(B: DensityBracket) -> DensityOperator:
    """The constant-free self-adjoint operator generating ``B``.

    a^i = ∂_j S^ij + (λ−1)γ^i,  b = ∂_i γ^i + (λ−1)θ,  c = 0.
    """
    lam1 = ex.const(B.weight - 1)
    dv = divergence(B.S, B.variables)
    a = tuple(ex.add(dv[i], ex.mul(lam1, B.gamma[i])) for i in range(B.n))
    dg = ex.add(*(ex.diff(B.gamma[i], B.variables[i]) for i in range(B.n)))
    b = ex.add(dg, ex.mul(lam1, B.theta))
    return DensityOperator(B.S, B.gamma, B.theta, a, b, ex.ZERO, B.weight, B.variables)


def resonances(n: int) -> tuple[Fraction, Fraction]:
    """The excluded weights ((n+2)/(n+1), (n+3)/(n+1))."""
    return Fraction(n + 2, n + 1), Fraction(n + 3, n + 1)


def check_weight(weight, n: int, error=ResonantWeightError, label: str = "weight") -> None:
    """Raise on a resonant weight; warn when it is within 1e-6 of one.

    Exact rational comparison is used when the weight is rational, the
    1e-12 tolerance only guards floats that were rounded on the way in.
    """
    w = ex.as_fraction(weight)
    first, second = resonances(n)
    for which, r in (("(n+3)/(n+1)", second), ("(n+2)/(n+1)", first)):
        gap = abs(float(w - r))
        if w == r or gap <= RESONANCE_TOL:
            raise error(w, r, n, which)
        if gap <= NEAR_RESONANCE_TOL:
            msg = f"{label} {float(w)!r} is within {gap:.2e} of the resonance {which} = {r} (n={n})"
            log.warning(msg)
            warnings.warn(msg, NearResonanceWarning, stacklevel=3)


def _require_pair(S: TensorDensity2, p: ProjectiveClass) -> int:
    if S.n != p.n or S.variables != p.variables:
        raise DimensionError("tensor density and projective class live on different charts")
    if S.n < 2:
        raise DimensionTooSmallError(f"dimension must be at least 2, got {S.n}")
    return S.n


def _gamma_theta(S: TensorDensity2, p: ProjectiveClass, lam_eff: Fraction,
                 dlog_rho: Optional[Sequence[Expr]] = None):
    n = S.n
    vs = S.variables
    s = S.components
    dv = divergence(s, vs)
    cp = contract_projective(s, p.coeffs)
    shift = ex.const(Fraction(n + 4, n + 2))
    k1 = ex.const(Fraction(n + 1) / (n + 3 - lam_eff * (n + 1)))
    gamma = []
    for i in range(n):
        inner = [dv[i], cp[i]]
        if dlog_rho is not None:
            inner.append(ex.mul(shift, ex.add(*(ex.mul(s[i][j], dlog_rho[j]) for j in range(n)))))
        gamma.append(ex.mul(k1, ex.add(*inner)))
    r = ricci_part(p)
    sr = ex.add(*(ex.mul(s[i][j], r[i][j]) for i in range(n) for j in range(n)))
    k2 = ex.const(Fraction(n + 1) / (n + 2 - lam_eff * (n + 1)))
    inner = [ex.add(*(ex.diff(gamma[i], vs[i]) for i in range(n))),
             ex.mul(ex.const(Fraction(n + 1, n - 1)), sr)]
    if dlog_rho is not None:
        inner.append(ex.mul(shift, ex.add(*(ex.mul(gamma[i], dlog_rho[i]) for i in range(n)))))
    theta = ex.mul(k2, ex.add(*inner))
    return tuple(gamma), theta


def gamma_theta(S: TensorDensity2, p: ProjectiveClass) -> tuple[tuple[Expr, ...], Expr]:
    """γ^i and θ making the lifted Laplacian self-adjoint and constant-free.

    γ^i = ((n+1)/(n+3−λ(n+1)))(∂_j S^ij + S^jk Π^i_jk)
    θ   = ((n+1)/(n+2−λ(n+1)))(∂_s γ^s + ((n+1)/(n−1)) S^ij R_ij)
    """
    n = _require_pair(S, p)
    check_weight(S.weight, n)
    return _gamma_theta(S, p, S.weight)


def lemma_operator(B: DensityBracket, p: ProjectiveClass) -> DensityOperator:
    """The lifted Laplacian for an arbitrary bracket, written in base coordinates."""
    n = B.n
    if p.n != n or p.variables != B.variables:
        raise DimensionError("bracket and projective class live on different charts")
    if n < 2:
        raise DimensionTooSmallError(f"dimension must be at least 2, got {n}")
    lam = B.weight
    vs = B.variables
    dv = divergence(B.S, vs)
    cp = contract_projective(B.S, p.coeffs)
    c_div = ex.const(Fraction(2, n + 4))
    c_gam = ex.const(Fraction(2 * (lam + n * lam + 1)) / ((n + 1) * (n + 4)))
    c_pi = ex.const(Fraction(n + 2, n + 4))
    a = tuple(ex.add(ex.mul(c_div, dv[i]), ex.mul(c_gam, B.gamma[i]), ex.neg(ex.mul(c_pi, cp[i])))
              for i in range(n))
    r = ricci_part(p)
    sr = ex.add(*(ex.mul(B.S[i][j], r[i][j]) for i in range(n) for j in range(n)))
    dg = ex.add(*(ex.diff(B.gamma[k], vs[k]) for k in range(n)))
    c_theta = ex.const(Fraction(2 * lam + 2 * lam * n - n) / ((n + 1) * (n + 4)))
    c_r = ex.const(Fraction((n + 1) * (n + 2), (n - 1) * (n + 4)))
    b = ex.add(ex.mul(c_div, dg), ex.mul(c_theta, B.theta), ex.neg(ex.mul(c_r, sr)))
    return DensityOperator(B.S, B.gamma, B.theta, a, b, ex.ZERO, lam, vs)


def pencil_display(B: DensityBracket, p: ProjectiveClass, mu) -> SecondOrderOperator:
    """The member of weight ``mu`` of the pencil defined by ``lemma_operator(B, p)``.

    Built term by term with μ already substituted for the weight operator,
    so it serves as an independent route to ``apply(lemma_operator(B, p), ·)``.
    """
    n = B.n
    if p.n != n or p.variables != B.variables:
        raise DimensionError("bracket and projective class live on different charts")
    if n < 2:
        raise DimensionTooSmallError(f"dimension must be at least 2, got {n}")
    lam = B.weight
    mu = ex.as_fraction(mu)
    vs = B.variables
    dv = divergence(B.S, vs)
    cp = contract_projective(B.S, p.coeffs)
    gamma_coeff = Fraction(2 * (lam + n * lam + 1)) / ((n + 1) * (n + 4)) + 2 * mu
    first = tuple(ex.add(ex.mul(ex.const(Fraction(2, n + 4)), dv[i]),
                         ex.mul(ex.const(gamma_coeff), B.gamma[i]),
                         ex.mul(ex.const(Fraction(-(n + 2), n + 4)), cp[i]))
                  for i in range(n))
    r = ricci_part(p)
    sr = ex.add(*(ex.mul(B.S[i][j], r[i][j]) for i in range(n) for j in range(n)))
    dg = ex.add(*(ex.diff(B.gamma[k], vs[k]) for k in range(n)))
    theta_coeff = mu * (Fraction(2 * lam + 2 * lam * n - n) / ((n + 1) * (n + 4)) + mu)
    zero = ex.add(ex.mul(ex.const(2 * mu / (n + 4)), dg),
                  ex.mul(ex.const(theta_coeff), B.theta),
                  ex.mul(ex.const(-mu * Fraction((n + 1) * (n + 2), (n - 1) * (n + 4))), sr))
    return SecondOrderOperator(B.S, first, zero, vs)


def main_operator(S: TensorDensity2, p: ProjectiveClass) -> DensityOperator:
    """The canonical weight-λ operator on densities extending S^ij."""
    gamma, theta = gamma_theta(S, p)
    return canonical_operator(DensityBracket(S.components, gamma, theta, S.weight, S.variables))


def lifted_tensor(B: DensityBracket) -> Array2:
    """S̃ on the Thomas bundle: e^{λx0} times [[θ, γ^j], [γ^i, S^ij]]."""
    n = B.n
    scale = ex.exp(ex.mul(ex.const(B.weight), ex.var(FIBRE)))

    def fn(a, b):
        if a == 0 and b == 0:
            core = B.theta
        elif a == 0:
            core = B.gamma[b - 1]
        elif b == 0:
            core = B.gamma[a - 1]
        else:
            core = B.S[a - 1][b - 1]
        return ex.mul(scale, core)

    return symmetric2(n + 1, fn)


def tilde_operator_via_lift(B: DensityBracket, p: ProjectiveClass) -> DensityOperator:
    """Apply the projective Laplacian on the Thomas bundle and read off the normal form.

    Every coefficient of the (n+1)-dimensional Laplacian is e^{λx0} times a
    function on the base, so the normal form is recovered by setting x0 = 0.
    """
    if p.n != B.n or p.variables != B.variables:
        raise DimensionError("bracket and projective class live on different charts")
    big_p = induced_projective_class(p)
    big_s = lifted_tensor(B)
    first = laplacian_first_order(big_s, big_p.coeffs, big_p.variables)
    at_zero = {FIBRE: ex.ZERO}
    n = B.n

    def strip(e: Expr) -> Expr:
        return ex.substitute(e, at_zero)

    S = symmetric2(n, lambda i, j: strip(big_s[i + 1][j + 1]))
    gamma = tuple(strip(big_s[0][i + 1]) for i in range(n))
    theta = strip(big_s[0][0])
    a = tuple(strip(first[i + 1]) for i in range(n))
    b = strip(first[0])
    return DensityOperator(S, gamma, theta, a, b, ex.ZERO, B.weight, B.variables)


def extend_bracket(S: TensorDensity2, p: ProjectiveClass) -> DensityBracket:
    """Canonical extension of the bracket {f, g} = S^ij ∂_i f ∂_j g to all densities."""
    if S.weight != 0:
        raise WeightError(f"bracket extension needs a weight-0 tensor, got weight {S.weight}")
    gamma, theta = gamma_theta(S, p)
    return DensityBracket(S.components, gamma, theta, 0, S.variables)


def effective_weight(weight, sigma, n: int) -> Fraction:
    return ex.as_fraction(weight) + Fraction(n + 4, n + 2) * ex.as_fraction(sigma)


def _check_positive(rho: Density, domain: Optional[SampleDomain]):
    if isinstance(rho.coeff, ex.Const):
        if rho.coeff.value <= 0:
            raise NonpositiveDensityError(f"ρ = {rho.coeff.value} is not positive")
        return
    if domain is not None:
        vals = ex.evaluate_batch(rho.coeff, domain.points())
        if np.any(vals <= 0):
            raise NonpositiveDensityError(f"ρ is not positive on the sample domain (min {vals.min():.3g})")


def rho_sigma_gamma_theta(S: TensorDensity2, p: ProjectiveClass, rho: Density, sigma=None,
                          domain: Optional[SampleDomain] = None):
    """γ, θ for the operator self-adjoint with respect to ⟨φ, ψ⟩ = ∫ φψρ."""
    n = _require_pair(S, p)
    sigma = rho.weight if sigma is None else ex.as_fraction(sigma)
    _check_positive(rho, domain)
    lam_eff = effective_weight(S.weight, sigma, n)
    check_weight(lam_eff, n, error=ShiftedResonanceError, label="effective weight")
    lr = ex.log(rho.coeff)
    dlog = [ex.diff(lr, v) for v in S.variables]
    return _gamma_theta(S, p, lam_eff, dlog)


def rho_sigma_operator(S: TensorDensity2, p: ProjectiveClass, rho: Density, sigma=None,
                       domain: Optional[SampleDomain] = None) -> DensityOperator:
    """Member of the family indexed by densities ρ|Dx|^σ; σ defaults to ρ's weight."""
    gamma, theta = rho_sigma_gamma_theta(S, p, rho, sigma, domain)
    B = DensityBracket(S.components, gamma, theta, S.weight, S.variables)
    return lemma_operator(B, p)


def flat_density_bracket(S: TensorDensity2, rho: Density,
                         domain: Optional[SampleDomain] = None) -> DensityBracket:
    """Bracket built from the flat volume connection γ_i = −∂_i log ρ of a 1-density ρ."""
    if S.weight != 0:
        raise WeightError(f"needs a weight-0 tensor, got weight {S.weight}")
    if rho.weight != 1:
        raise WeightError(f"ρ must be a density of weight 1, got {rho.weight}")
    _check_positive(rho, domain)
    n = S.n
    lr = ex.log(rho.coeff)
    low = [ex.neg(ex.diff(lr, v)) for v in S.variables]
    up = tuple(ex.add(*(ex.mul(S.components[i][j], low[j]) for j in range(n))) for i in range(n))
    theta = ex.add(*(ex.mul(up[i], low[i]) for i in range(n)))
    return DensityBracket(S.components, up, theta, 0, S.variables)
