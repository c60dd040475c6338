"""The invariance battery: every identity the constructions must satisfy, run on one scenario."""

from __future__ import annotations

import logging
import random
import time
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Callable, Optional, Sequence

import numpy as np

from .. import expr as ex
from ..errors import NearResonanceWarning, ProjlapError
from ..expr import Expr, SampleDomain
from ..generators import (
    random_connection,
    random_density,
    random_monomial_density,
    random_omega,
    random_polynomial,
    random_transition,
)
from ..geom import (
    ChartTransition,
    Density,
    ProjectiveClass,
    divergence,
    projective_class,
    projective_laplacian,
    transform_connection,
    transform_density,
    transform_tensor_density,
    upper_connection,
)
from ..operators import (
    DensityBracket,
    DensityOperator,
    apply,
    canonical_operator,
    extend_bracket,
    flat_density_bracket,
    gamma_theta,
    generated_bracket,
    lemma_operator,
    main_operator,
    pencil_display,
    rho_sigma_operator,
    tilde_operator_via_lift,
)
from ..thomas import (
    embed_density,
    induced_projective_class,
    lift_connection,
    tilde_transition,
    weight_operator,
)
from .checks import (
    SELF_ADJOINT_TOL,
    CheckResult,
    check_biderivation,
    check_generates,
    check_quadrature_convergence,
    self_adjoint_defects,
)

log = logging.getLogger(__name__)

DEFAULT_WEIGHTS = (Fraction(-1), Fraction(0), Fraction(1, 3), Fraction(1), Fraction(2))
PROBE_SHIFT = Fraction(1, 10)
# The probe must be flagged well above the self-adjointness tolerance: 1e-2 in
# two dimensions, twice the (coarser-grid) tolerance otherwise.
PROBE_THRESHOLD = {2: 1e-2}
# Identity checks whose expressions go through long cancellation chains get
# looser default tolerances; everything else uses the sample domain's.
CHECK_TOLERANCES = {
    "lift_law": 1e-7,
    "coordinate_invariance": 1e-6,
    "cross_construction": 1e-8,
    "tilde_jacobian": 1e-6,
}


@dataclass
class BatteryReport:
    scenario: str
    seed: int
    results: list[CheckResult] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failures(self) -> list[CheckResult]:
        return [r for r in self.results if not r.passed]

    def as_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "status": "PASS" if self.passed else "FAIL",
            "seconds": round(self.seconds, 3),
            "warnings": list(self.warnings),
            "checks": [r.as_dict() for r in self.results],
        }


def _pairs(xs: Sequence[Expr], ys: Sequence[Expr]) -> list[tuple[Expr, Expr]]:
    return list(zip(xs, ys))


def _flat(a) -> list[Expr]:
    if isinstance(a, Expr):
        return [a]
    out = []
    for x in a:
        out.extend(_flat(x))
    return out


def _operator_pairs(x: DensityOperator, y: DensityOperator) -> list[tuple[Expr, Expr]]:
    return _pairs(_flat([x.S, x.gamma, x.theta, x.a, x.b, x.c]),
                  _flat([y.S, y.gamma, y.theta, y.a, y.b, y.c]))


class _Context:
    """Lazily built objects shared between checks of one battery run."""

    def __init__(self, scenario, seed: int, tol: Optional[float]):
        self.sc = scenario
        self.seed = seed
        self.tol_override = tol
        self.n = scenario.n
        self.domain: SampleDomain = scenario.domain.with_(seed=seed)
        self.S = scenario.tensor
        self.S0 = scenario.tensor.with_weight(0)
        self.P: ProjectiveClass = scenario.projective
        self.weights = tuple(scenario.weights) or DEFAULT_WEIGHTS

    def rng(self, salt: str) -> random.Random:
        return random.Random(f"{self.seed}:{salt}")

    def tol(self, name: str) -> float:
        if self.tol_override is not None:
            return self.tol_override
        return max(self.domain.tol, CHECK_TOLERANCES.get(name, 0.0))

    @cached_property
    def transitions(self) -> list[tuple[str, ChartTransition, SampleDomain]]:
        out = [(t.name, t.transition, t.target.with_(seed=self.seed)) for t in self.sc.transitions]
        rng = self.rng("transitions")
        for k in range(self.sc.random_transitions):
            t = random_transition(rng, self.n)
            t.validate(self.domain)
            out.append((f"random{k + 1}", t, self.domain))
        return out

    @cached_property
    def densities(self) -> list[Density]:
        ds = list(self.sc.densities)
        rng = self.rng("densities")
        while len(ds) < 5:
            ds.append(random_density(rng, self.n))
        return ds

    @cached_property
    def functions(self) -> list[Expr]:
        rng = self.rng("functions")
        fs = [d.coeff for d in self.sc.densities]
        fs += [random_polynomial(rng, self.P.variables, 3, terms=4) for _ in range(3)]
        return fs

    @cached_property
    def gamma_theta(self):
        return gamma_theta(self.S, self.P)

    @cached_property
    def bracket(self) -> DensityBracket:
        g, t = self.gamma_theta
        return DensityBracket(self.S.components, g, t, self.S.weight, self.S.variables)

    @cached_property
    def main(self) -> DensityOperator:
        return main_operator(self.S, self.P)

    @cached_property
    def rho_op(self) -> DensityOperator:
        return rho_sigma_operator(self.S, self.P, self.sc.rho, domain=self.domain)

    def transformed_class(self, t: ChartTransition) -> ProjectiveClass:
        return projective_class(transform_connection(self.sc.representative, t))


def _result(ctx: _Context, name: str, worst: float, **details) -> CheckResult:
    tol = ctx.tol(name)
    return CheckResult(name, worst <= tol, worst, tol, ctx.seed, details)


# -- geometry ---------------------------------------------------------------------

def _transitions_valid(ctx):
    worst = 0.0
    for _, t, target in ctx.transitions:
        worst = max(worst, t.validate(ctx.domain, target))
    return _result(ctx, "transitions_valid", worst, transitions=len(ctx.transitions))


def _trace_free(ctx):
    worst = ctx.P.trace_defect(ctx.domain)
    rng = ctx.rng("trace_free")
    for _ in range(10):
        worst = max(worst, projective_class(random_connection(rng, ctx.n)).trace_defect(ctx.domain))
    return _result(ctx, "trace_free", worst, random_connections=10)


def _projective_equivalence(ctx):
    rng = ctx.rng("omega")
    rep = ctx.sc.representative
    worst = 0.0
    for _ in range(10):
        shifted = projective_class(rep.omega_shift(random_omega(rng, ctx.n)))
        worst = max(worst, ex.defect_many(_pairs(_flat(shifted.coeffs), _flat(ctx.P.coeffs)), ctx.domain))
    return _result(ctx, "projective_equivalence", worst, shifts=10)


def _laplacian_naturality(ctx):
    lap = projective_laplacian(ctx.S0, ctx.P)
    worst = 0.0
    for _, t, target in ctx.transitions:
        lap_bar = projective_laplacian(transform_tensor_density(ctx.S0, t), ctx.transformed_class(t))
        for f in ctx.functions:
            worst = max(worst, ex.defect(lap_bar.apply(t.pull_to_new(f)), t.pull_to_new(lap.apply(f)), target))
    return _result(ctx, "laplacian_naturality", worst, functions=len(ctx.functions))


def _locally_projective_reduction(ctx):
    lap = projective_laplacian(ctx.S0, ProjectiveClass.zero(ctx.n))
    expected = [ex.mul(ex.const(Fraction(2, ctx.n + 3)), d) for d in divergence(ctx.S.components, ctx.P.variables)]
    worst = ex.defect_many(_pairs(lap.first, expected), ctx.domain)
    return _result(ctx, "locally_projective_reduction", worst)


def _lambda0_reduction(ctx):
    B0 = extend_bracket(ctx.S0, ctx.P)
    worst = ex.defect_many(_pairs(B0.gamma, upper_connection(ctx.S0, ctx.P)), ctx.domain)
    op0 = main_operator(ctx.S0, ctx.P)
    lap = projective_laplacian(ctx.S0, ctx.P)
    for f in ctx.functions:
        worst = max(worst, ex.defect(apply(op0, Density(f, 0)).coeff, lap.apply(f), ctx.domain))
    return _result(ctx, "lambda0_reduction", worst)


# -- Thomas bundle ----------------------------------------------------------------

def _lift_law(ctx):
    lifted = lift_connection(ctx.P)
    worst = 0.0
    for _, t, target in ctx.transitions:
        tt = tilde_transition(t, ctx.domain)
        moved = transform_connection(lifted, tt.full)
        direct = lift_connection(ctx.transformed_class(t))
        worst = max(worst, ex.defect_many(_pairs(_flat(moved.coeffs), _flat(direct.coeffs)), target))
    return _result(ctx, "lift_law", worst)


def _induced_class_composition(ctx):
    a = induced_projective_class(ctx.P)
    b = projective_class(lift_connection(ctx.P))
    worst = ex.defect_many(_pairs(_flat(a.coeffs), _flat(b.coeffs)), ctx.domain)
    return _result(ctx, "induced_class_composition", worst)


def _numeric_log_jacobian(t: ChartTransition, points: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """log|det ∂f/∂x| from central differences of the forward map."""
    n = t.n
    cols = []
    for j, v in enumerate(t.variables):
        up, down = points.copy(), points.copy()
        up[:, v] += h
        down[:, v] -= h
        cols.append([(ex.evaluate_batch(f, up) - ex.evaluate_batch(f, down)) / (2 * h) for f in t.forward])
    jac = np.empty((points.shape[0], n, n))
    for j in range(n):
        for i in range(n):
            jac[:, i, j] = cols[j][i]
    return np.log(np.abs(np.linalg.det(jac)))


def _tilde_jacobian(ctx):
    worst = 0.0
    pts = ctx.domain.points()
    for _, t, _target in ctx.transitions:
        tt = tilde_transition(t, ctx.domain)
        full_det = tt.full.jacobian_det()
        worst = max(worst, ex.defect(full_det, t.jacobian_det(), ctx.domain))
        symbolic = ex.evaluate_batch(tt.log_jacobian, pts)
        numeric = _numeric_log_jacobian(t, pts)
        worst = max(worst, float(np.max(np.abs(symbolic - numeric) / (1 + np.abs(numeric)))))
        shifted = ex.sub(tt.full.forward[0], ex.var(0))
        worst = max(worst, ex.defect(shifted, tt.log_jacobian, ctx.domain))
    return _result(ctx, "tilde_jacobian", worst)


def _embed_chart_consistency(ctx):
    worst = 0.0
    for _, t, target in ctx.transitions:
        tt = tilde_transition(t, ctx.domain)
        for d in ctx.densities:
            lhs = tt.full.pull_to_new(embed_density(d))
            rhs = embed_density(transform_density(d, t))
            worst = max(worst, ex.defect(lhs, rhs, target))
    return _result(ctx, "embed_chart_consistency", worst)


def _weight_eigenvector(ctx):
    worst = 0.0
    for d in ctx.densities:
        e = embed_density(d)
        worst = max(worst, ex.defect(weight_operator(e), ex.mul(ex.const(d.weight), e), ctx.domain))
    return _result(ctx, "weight_eigenvector", worst)


# -- operators ---------------------------------------------------------------------

def _generation(ctx):
    res = check_generates(ctx.main, ctx.bracket, ctx.domain, seed=ctx.seed)
    rng = ctx.rng("first_order")
    extra = tuple(ex.add(a, random_polynomial(rng, ctx.P.variables, 2)) for a in ctx.main.a)
    shifted = ctx.main.replace(a=extra, b=ex.add(ctx.main.b, random_polynomial(rng, ctx.P.variables, 2)))
    res2 = check_generates(shifted, ctx.bracket, ctx.domain, seed=ctx.seed)
    return _result(ctx, "generation", max(res.worst_defect, res2.worst_defect),
                   pairs=res.details["pairs"], with_first_order_shift=True)


def _constant_free(ctx):
    one = Density(ex.ONE, 0)
    ops = [ctx.main, canonical_operator(ctx.bracket)]
    if ctx.sc.rho is not None:
        ops.append(ctx.rho_op)
    worst = 0.0
    for op in ops:
        worst = max(worst, ex.defect(apply(op, one).coeff, ex.ZERO, ctx.domain))
        worst = max(worst, ex.defect(op.c, ex.ZERO, ctx.domain))
    return _result(ctx, "constant_free", worst, operators=len(ops))


def _cross_construction(ctx):
    B = ctx.bracket
    lifted = tilde_operator_via_lift(B, ctx.P)
    pairs = _operator_pairs(lifted, lemma_operator(B, ctx.P))
    pairs += _operator_pairs(ctx.main, lemma_operator(B, ctx.P))
    pairs += _operator_pairs(ctx.main, canonical_operator(B))
    rng = ctx.rng("generic_bracket")
    vs = ctx.P.variables
    generic = DensityBracket(ctx.S.components, tuple(random_polynomial(rng, vs, 2) for _ in vs),
                             random_polynomial(rng, vs, 2), ctx.S.weight, vs)
    pairs += _operator_pairs(tilde_operator_via_lift(generic, ctx.P), lemma_operator(generic, ctx.P))
    return _result(ctx, "cross_construction", ex.defect_many(pairs, ctx.domain), components=len(pairs))


def _pencil(ctx):
    rng = ctx.rng("pencil")
    mus = list(ctx.weights) + [Fraction(rng.randint(-30, 30), rng.randint(1, 7)) for _ in range(5)]
    worst = 0.0
    for k, mu in enumerate(mus):
        phi = ctx.densities[k % len(ctx.densities)].coeff
        lhs = apply(ctx.main, Density(phi, mu)).coeff
        rhs = pencil_display(ctx.bracket, ctx.P, mu).apply(phi)
        worst = max(worst, ex.defect(lhs, rhs, ctx.domain))
    return _result(ctx, "pencil", worst, weights=[str(m) for m in mus])


def _coordinate_invariance(ctx):
    worst = 0.0
    for _, t, target in ctx.transitions:
        op_bar = main_operator(transform_tensor_density(ctx.S, t), ctx.transformed_class(t))
        for d in ctx.densities:
            lhs = apply(op_bar, transform_density(d, t)).coeff
            rhs = transform_density(apply(ctx.main, d), t).coeff
            worst = max(worst, ex.defect(lhs, rhs, target))
    return _result(ctx, "coordinate_invariance", worst,
                   transitions=len(ctx.transitions), densities=len(ctx.densities))


def _bracket_symmetry_weight(ctx):
    rng = ctx.rng("symmetry")
    worst = 0.0
    for _ in range(10):
        a, b = random_monomial_density(rng, ctx.n), random_monomial_density(rng, ctx.n)
        ab, ba = generated_bracket(ctx.main, a, b), generated_bracket(ctx.main, b, a)
        if ab.weight != ba.weight or ab.weight != a.weight + b.weight + ctx.S.weight:
            worst = float("inf")
            break
        worst = max(worst, ex.defect(ab.coeff, ba.coeff, ctx.domain))
    return _result(ctx, "bracket_symmetry_weight", worst)


def _biderivation(ctx):
    worst = check_biderivation(ctx.bracket, ctx.domain, seed=ctx.seed).worst_defect
    rho = ctx.sc.rho
    flat = rho is not None and rho.weight == 1 and ctx.S.weight == 0
    if flat:
        fb = flat_density_bracket(ctx.S, rho, ctx.domain)
        worst = max(worst, check_biderivation(fb, ctx.domain, seed=ctx.seed).worst_defect)
    return _result(ctx, "biderivation", worst, includes_flat_bracket=flat)


def _self_adjoint_runs(ctx, op, rho=None) -> list[float]:
    q = ctx.sc.quadrature
    return [max(self_adjoint_defects(op, mu, q, pairs=5, seed=ctx.seed, rho=rho)) for mu in ctx.weights[:3]]


def _quadrature_result(ctx, name, worst, tol, **details):
    return CheckResult(name, worst <= tol, worst, tol, ctx.seed,
                       {"grid": ctx.sc.quadrature.points, "pairs": 5, **details})


def _self_adjoint(ctx):
    tol = SELF_ADJOINT_TOL.get(ctx.n, 1e-3)
    runs = _self_adjoint_runs(ctx, ctx.main)
    return _quadrature_result(ctx, "self_adjoint", max(runs), tol,
                              weights=[str(m) for m in ctx.weights[:3]], defects=runs)


def probe_threshold(n: int) -> float:
    return PROBE_THRESHOLD.get(n, 2 * SELF_ADJOINT_TOL.get(n, 1e-3))


def _probe(op: DensityOperator) -> DensityOperator:
    return op.replace(a=tuple(ex.add(a, ex.const(PROBE_SHIFT)) for a in op.a))


def _perturbation_probe(ctx):
    """The check passes when the corrupted operator is detected, i.e. its defect is large."""
    runs = _self_adjoint_runs(ctx, _probe(ctx.main))
    worst = min(runs)
    need = probe_threshold(ctx.n)
    return CheckResult("perturbation_probe", worst >= need, worst, need, ctx.seed,
                       {"bound": "lower", "shift": str(PROBE_SHIFT), "defects": runs,
                        "grid": ctx.sc.quadrature.points})


def _quadrature_convergence(ctx):
    q = ctx.sc.quadrature
    start = q.with_points(max(11, (q.points // 2) | 1))
    res = check_quadrature_convergence(ctx.main, ctx.weights[0], start,
                                       refinements=2 if ctx.n == 2 else 1, seed=ctx.seed)
    return res


def _rho_sigma_reduction(ctx):
    trivial = rho_sigma_operator(ctx.S, ctx.P, Density(ex.ONE, 0), 0)
    worst = ex.defect_many(_operator_pairs(trivial, ctx.main), ctx.domain)
    return _result(ctx, "rho_sigma_reduction", worst)


def _rho_sigma_canonical_form(ctx):
    """a = ∂S + S∂log ρ + (λ+σ−1)γ and b = ∂γ + γ·∂log ρ + (λ+σ−1)θ."""
    op = ctx.rho_op
    vs = op.variables
    lr = ex.log(ctx.sc.rho.coeff)
    dl = [ex.diff(lr, v) for v in vs]
    k = ex.const(op.weight + ctx.sc.rho.weight - 1)
    dv = divergence(op.S, vs)
    n = op.n
    a = [ex.add(dv[i], *(ex.mul(op.S[i][j], dl[j]) for j in range(n)), ex.mul(k, op.gamma[i])) for i in range(n)]
    b = ex.add(*(ex.diff(op.gamma[i], vs[i]) for i in range(n)),
               *(ex.mul(op.gamma[i], dl[i]) for i in range(n)), ex.mul(k, op.theta))
    worst = ex.defect_many(_pairs(op.a, a) + [(op.b, b)], ctx.domain)
    return _result(ctx, "rho_sigma_canonical_form", worst)


def _rho_sigma_self_adjoint(ctx):
    tol = SELF_ADJOINT_TOL.get(ctx.n, 1e-3)
    runs = _self_adjoint_runs(ctx, ctx.rho_op, rho=ctx.sc.rho)
    return _quadrature_result(ctx, "rho_sigma_self_adjoint", max(runs), tol, defects=runs,
                              sigma=str(ctx.sc.rho.weight))


CheckFn = Callable[[_Context], CheckResult]

BASE_CHECKS: dict[str, CheckFn] = {
    "transitions_valid": _transitions_valid,
    "trace_free": _trace_free,
    "projective_equivalence": _projective_equivalence,
    "laplacian_naturality": _laplacian_naturality,
    "locally_projective_reduction": _locally_projective_reduction,
    "lambda0_reduction": _lambda0_reduction,
    "lift_law": _lift_law,
    "induced_class_composition": _induced_class_composition,
    "tilde_jacobian": _tilde_jacobian,
    "embed_chart_consistency": _embed_chart_consistency,
    "weight_eigenvector": _weight_eigenvector,
}

OPERATOR_CHECKS: dict[str, CheckFn] = {
    "generation": _generation,
    "constant_free": _constant_free,
    "cross_construction": _cross_construction,
    "pencil": _pencil,
    "coordinate_invariance": _coordinate_invariance,
    "bracket_symmetry_weight": _bracket_symmetry_weight,
    "biderivation": _biderivation,
    "self_adjoint": _self_adjoint,
    "perturbation_probe": _perturbation_probe,
    "quadrature_convergence": _quadrature_convergence,
}

RHO_CHECKS: dict[str, CheckFn] = {
    "rho_sigma_reduction": _rho_sigma_reduction,
    "rho_sigma_canonical_form": _rho_sigma_canonical_form,
    "rho_sigma_self_adjoint": _rho_sigma_self_adjoint,
}

ALL_CHECKS = {**BASE_CHECKS, **OPERATOR_CHECKS, **RHO_CHECKS, "error_contract": None}
TRANSITION_CHECKS = {"transitions_valid", "laplacian_naturality", "lift_law", "tilde_jacobian",
                     "embed_chart_consistency", "coordinate_invariance"}


def _error_matches(err: BaseException, expected: str) -> bool:
    return any(cls.__name__ in (expected, expected + "Error") for cls in type(err).__mro__)


def _error_contract(scenario, seed: int) -> CheckResult:
    """The expected error must be raised by loading or by the operator constructions."""
    expected = scenario.expect_error
    err = getattr(scenario, "error", None)
    if err is None:
        try:
            main_operator(scenario.tensor, scenario.projective)
            if scenario.rho is not None:
                rho_sigma_operator(scenario.tensor, scenario.projective, scenario.rho, domain=scenario.domain)
        except ProjlapError as exc:
            err = exc
    ok = err is not None and _error_matches(err, expected)
    return CheckResult("error_contract", ok, 0.0 if ok else 1.0, 0.0, seed, {
        "expected": expected,
        "raised": type(err).__name__ if err is not None else None,
        "message": str(err) if err is not None else None,
    })


def _selected(scenario, only: Optional[Sequence[str]]) -> list[str]:
    requested = list(only) if only else list(scenario.checks)
    unknown = [c for c in requested if c not in ALL_CHECKS]
    if unknown:
        raise ValueError(f"unknown checks: {', '.join(unknown)}")
    names = list(BASE_CHECKS) + list(OPERATOR_CHECKS)
    if scenario.rho is not None:
        names += list(RHO_CHECKS)
    if requested:
        names = [c for c in names if c in requested]
    return names


def run_invariance_battery(scenario, seed: Optional[int] = None, tol: Optional[float] = None,
                           grid: Optional[int] = None,
                           checks: Optional[Sequence[str]] = None) -> BatteryReport:
    """Run every applicable property check on ``scenario`` and aggregate the results.

    ``tol`` overrides the tolerance of the sampled identity checks (the
    quadrature checks keep their own); ``grid`` overrides the quadrature
    points per axis.  Scenarios declaring ``expect_error`` only run the
    error contract.
    """
    seed = scenario.seed if seed is None else seed
    report = BatteryReport(scenario.name, seed)
    started = time.perf_counter()
    if scenario.expect_error is not None:
        report.results.append(_error_contract(scenario, seed))
        report.seconds = time.perf_counter() - started
        return report
    if grid is not None:
        scenario = scenario.with_grid(grid)
    ctx = _Context(scenario, seed, tol)
    names = _selected(scenario, checks)
    if not ctx.transitions:
        names = [c for c in names if c not in TRANSITION_CHECKS]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", NearResonanceWarning)
        for name in names:
            fn = ALL_CHECKS[name]
            t0 = time.perf_counter()
            try:
                res = fn(ctx)
            except ProjlapError as exc:
                res = CheckResult(name, False, float("inf"), ctx.tol(name), seed,
                                  {"error": f"{type(exc).__name__}: {exc}"})
            res.details.setdefault("seconds", round(time.perf_counter() - t0, 3))
            log.info("%s %s worst=%.3g", res.status, name, res.worst_defect)
            report.results.append(res)
    report.warnings = sorted({str(w.message) for w in caught if issubclass(w.category, NearResonanceWarning)})
    report.seconds = time.perf_counter() - started
    return report
