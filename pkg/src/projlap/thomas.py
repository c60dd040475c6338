"""Thomas bundle calculus: the extra coordinate x0 with x̄0 = x0 + log J.

Arrays on the bundle are (n+1)-dimensional with the fibre index stored
first, i.e. position 0 is x0 and positions 1..n are the base variables.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from . import expr as ex
from .errors import DimensionTooSmallError, NonpositiveJacobianError, ValidationError
from .expr import Expr, SampleDomain
from .geom import (
    ChartTransition,
    Connection,
    Density,
    ProjectiveClass,
    ricci_part,
)

FIBRE = 0


def _bundle_variables(p: ProjectiveClass) -> tuple[int, ...]:
    if FIBRE in p.variables:
        raise ValidationError("projective class already uses the fibre coordinate x0")
    if p.n < 2:
        raise DimensionTooSmallError(f"the Thomas lift needs n >= 2, got {p.n}")
    return (FIBRE,) + p.variables


def _curvature_block(p: ProjectiveClass) -> tuple[tuple[Expr, ...], ...]:
    n = p.n
    factor = ex.const(Fraction(n + 1, n - 1))
    r = ricci_part(p)
    return tuple(tuple(ex.mul(factor, r[i][j]) for j in range(n)) for i in range(n))


def lift_connection(p: ProjectiveClass) -> Connection:
    """The linear connection on the Thomas bundle induced by ``p``.

    Nonzero components: Γ̃^k_ij = Π^k_ij,
    Γ̃^a_0b = Γ̃^a_b0 = −δ^a_b/(n+1) and
    Γ̃^0_ij = ((n+1)/(n−1))(∂_sΠ^s_ij − Π^p_qiΠ^q_pj).
    """
    variables = _bundle_variables(p)
    n = p.n
    N = n + 1
    fibre = ex.const(Fraction(-1, n + 1))
    curv = _curvature_block(p)
    out = [[[ex.ZERO] * N for _ in range(N)] for _ in range(N)]
    for a in range(N):
        out[a][0][a] = fibre
        out[a][a][0] = fibre
    for k in range(n):
        for i in range(n):
            for j in range(n):
                out[k + 1][i + 1][j + 1] = p.coeffs[k][i][j]
    for i in range(n):
        for j in range(n):
            out[0][i + 1][j + 1] = curv[i][j]
    return Connection(tuple(tuple(tuple(r) for r in blk) for blk in out), variables)


def induced_projective_class(p: ProjectiveClass) -> ProjectiveClass:
    """Projective class on the Thomas bundle, written out component by component."""
    variables = _bundle_variables(p)
    n = p.n
    N = n + 1
    mixed = ex.const(Fraction(-1, (n + 1) * (n + 2)))
    corner = ex.const(Fraction(n, (n + 1) * (n + 2)))
    curv = _curvature_block(p)
    out = [[[ex.ZERO] * N for _ in range(N)] for _ in range(N)]
    for k in range(n):
        for i in range(n):
            for j in range(n):
                out[k + 1][i + 1][j + 1] = p.coeffs[k][i][j]
        out[k + 1][k + 1][0] = mixed
        out[k + 1][0][k + 1] = mixed
    for i in range(n):
        for j in range(n):
            out[0][i + 1][j + 1] = curv[i][j]
    out[0][0][0] = corner
    return ProjectiveClass(tuple(tuple(tuple(r) for r in blk) for blk in out), variables)


@dataclass(frozen=True)
class TildeTransition:
    """A base transition together with its extension to the Thomas bundle."""

    base: ChartTransition
    full: ChartTransition
    log_jacobian: Expr

    @property
    def n(self) -> int:
        return self.base.n


def tilde_transition(t: ChartTransition, domain: Optional[SampleDomain] = None) -> TildeTransition:
    """Extend ``t`` by x̄0 = x0 + log J_f.

    The Jacobian determinant must be positive; when ``domain`` is given
    this is checked at its sample points (a sign change raises
    :class:`NonpositiveJacobianError`).
    """
    if FIBRE in t.variables:
        raise ValidationError("base transition already uses x0")
    det = t.jacobian_det()
    if domain is not None:
        vals = ex.evaluate_batch(det, domain.points())
        if np.any(vals <= 0):
            raise NonpositiveJacobianError(
                f"Jacobian determinant not positive on the sample domain (min {vals.min():.3g})"
            )
    log_j = ex.log(det)
    x0 = ex.var(FIBRE)
    forward = (ex.add(x0, log_j),) + t.forward
    inverse = (ex.sub(x0, t.pull_to_new(log_j)),) + t.inverse
    full = ChartTransition(forward, inverse, (FIBRE,) + t.variables)
    return TildeTransition(t, full, log_j)


def embed_density(d: Density) -> Expr:
    """φ|Dx|^μ viewed as the function φ·e^{μ x0} on the Thomas bundle."""
    if d.weight == 0:
        return d.coeff
    return ex.mul(d.coeff, ex.exp(ex.mul(ex.const(d.weight), ex.var(FIBRE))))


def weight_operator(f: Expr) -> Expr:
    """∂/∂x0, whose eigenvalue on an embedded density is its weight."""
    return ex.diff(f, FIBRE)
