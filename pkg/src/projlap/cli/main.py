"""Command line interface: ``projlap <command> --scenario FILE [options]``.

Exit codes: 0 success, 1 a verification check failed, 2 invalid input,
3 a precondition of a construction is violated (resonant weight,
nonpositive density or Jacobian, wrong weight).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional, Sequence, TextIO

from .. import expr as ex
from ..errors import (
    EvaluationDomainError,
    PreconditionError,
    ProjlapError,
)
from ..expr import Expr
from ..operators import (
    DensityBracket,
    DensityOperator,
    extend_bracket,
    flat_density_bracket,
    gamma_theta,
    main_operator,
    rho_sigma_operator,
)
from ..thomas import induced_projective_class, lift_connection
from ..verify.battery import ALL_CHECKS, run_invariance_battery
from . import scenario as scn

EXIT_OK, EXIT_CHECK_FAILED, EXIT_INVALID, EXIT_PRECONDITION = 0, 1, 2, 3
FORMATS = ("plain", "latex", "report")

log = logging.getLogger("projlap")


class Listing:
    """Collects named coefficient expressions and renders them in one format."""

    def __init__(self, fmt: str):
        self.fmt = fmt
        self.sections: list[tuple[str, list[tuple[str, str, object]]]] = []
        self.meta: dict[str, object] = {}

    def section(self, title: str) -> list:
        rows: list = []
        self.sections.append((title, rows))
        return rows

    @staticmethod
    def add(rows: list, plain_name: str, latex_name: str, value):
        rows.append((plain_name, latex_name, value))

    def render(self) -> str:
        if self.fmt == "report":
            doc = dict(self.meta)
            for title, rows in self.sections:
                doc[title] = {name: _plain_value(v) for name, _, v in rows}
            return json.dumps(doc, indent=2, sort_keys=False)
        lines = [f"# {k}: {v}" for k, v in self.meta.items()]
        for title, rows in self.sections:
            lines.append(f"[{title}]")
            for name, latex_name, v in rows:
                if self.fmt == "latex":
                    val = ex.to_latex(v) if isinstance(v, Expr) else str(v)
                    lines.append(f"{latex_name} = {val}")
                else:
                    lines.append(f"{name} = {_plain_value(v)}")
        return "\n".join(lines)


def _plain_value(v):
    if isinstance(v, Expr):
        return ex.to_plain(v)
    if isinstance(v, Fraction):
        return str(v)
    return v


def _idx(*ks: int) -> str:
    return "".join(str(k) for k in ks)


def _add_rank3(listing: Listing, rows: list, symbol: str, latex: str, coeffs, offset: int,
               skip_zero: bool = True):
    n = len(coeffs)
    for k in range(n):
        for i in range(n):
            for j in range(i, n):
                e = coeffs[k][i][j]
                if skip_zero and e.is_zero():
                    continue
                a, b, c = k + offset, i + offset, j + offset
                listing.add(rows, f"{symbol}^{a}_{_idx(b, c)}", f"{latex}^{{{a}}}_{{{_idx(b, c)}}}", e)


def _add_operator(listing: Listing, title: str, op: DensityOperator):
    rows = listing.section(title)
    n = op.n
    listing.add(rows, "weight", "\\lambda", op.weight)
    for i in range(n):
        for j in range(i, n):
            listing.add(rows, f"S^{_idx(i + 1, j + 1)}", f"S^{{{_idx(i + 1, j + 1)}}}", op.S[i][j])
    for i in range(n):
        listing.add(rows, f"gamma^{i + 1}", f"\\gamma^{{{i + 1}}}", op.gamma[i])
    listing.add(rows, "theta", "\\theta", op.theta)
    for i in range(n):
        listing.add(rows, f"a^{i + 1}", f"a^{{{i + 1}}}", op.a[i])
    listing.add(rows, "b", "b", op.b)
    listing.add(rows, "c", "c", op.c)


def _add_bracket(listing: Listing, title: str, B: DensityBracket):
    rows = listing.section(title)
    n = B.n
    listing.add(rows, "weight", "\\lambda", B.weight)
    for i in range(n):
        for j in range(i, n):
            listing.add(rows, f"S^{_idx(i + 1, j + 1)}", f"S^{{{_idx(i + 1, j + 1)}}}", B.S[i][j])
    for i in range(n):
        listing.add(rows, f"gamma^{i + 1}", f"\\gamma^{{{i + 1}}}", B.gamma[i])
    listing.add(rows, "theta", "\\theta", B.theta)


# -- commands ----------------------------------------------------------------------

def cmd_project(sc, args) -> tuple[str, int]:
    listing = Listing(args.format)
    listing.meta.update(scenario=sc.name, dimension=sc.n)
    rows = listing.section("projective_class")
    _add_rank3(listing, rows, "Pi", "\\Pi", sc.projective.coeffs, 1)
    defect = sc.projective.trace_defect(sc.domain)
    ok = defect <= sc.domain.tol
    checks = listing.section("trace_check")
    listing.add(checks, "worst_trace_defect", "\\text{trace defect}", defect)
    listing.add(checks, "status", "\\text{status}", "PASS" if ok else "FAIL")
    return listing.render(), EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_lift(sc, args) -> tuple[str, int]:
    listing = Listing(args.format)
    listing.meta.update(scenario=sc.name, dimension=sc.n, fibre_index=0)
    _add_rank3(listing, listing.section("lifted_connection"), "Gamma", "\\tilde\\Gamma",
               lift_connection(sc.projective).coeffs, 0)
    _add_rank3(listing, listing.section("induced_projective_class"), "Pi", "\\tilde\\Pi",
               induced_projective_class(sc.projective).coeffs, 0)
    return listing.render(), EXIT_OK


def cmd_extend(sc, args) -> tuple[str, int]:
    listing = Listing(args.format)
    listing.meta.update(scenario=sc.name, dimension=sc.n)
    _add_operator(listing, "operator", main_operator(sc.tensor, sc.projective))
    if sc.rho is not None:
        op = rho_sigma_operator(sc.tensor, sc.projective, sc.rho, domain=sc.domain)
        listing.meta.update(rho=ex.to_plain(sc.rho.coeff), sigma=str(sc.rho.weight))
        _add_operator(listing, "rho_sigma_operator", op)
    return listing.render(), EXIT_OK


def cmd_bracket(sc, args) -> tuple[str, int]:
    listing = Listing(args.format)
    listing.meta.update(scenario=sc.name, dimension=sc.n)
    if sc.weight == 0:
        _add_bracket(listing, "extended_bracket", extend_bracket(sc.tensor, sc.projective))
    else:
        g, t = gamma_theta(sc.tensor, sc.projective)
        B = DensityBracket(sc.tensor.components, g, t, sc.weight, sc.tensor.variables)
        _add_bracket(listing, "generated_bracket", B)
    if sc.rho is not None and sc.rho.weight == 1 and sc.weight == 0:
        _add_bracket(listing, "flat_volume_bracket", flat_density_bracket(sc.tensor, sc.rho, sc.domain))
    return listing.render(), EXIT_OK


def cmd_emit(sc, args) -> tuple[str, int]:
    listing = Listing(args.format)
    listing.meta.update(scenario=sc.name, dimension=sc.n, weight=str(sc.weight))
    _add_operator(listing, "operator", main_operator(sc.tensor, sc.projective))
    return listing.render(), EXIT_OK


def _verify_text(report) -> str:
    lines = [f"scenario {report.scenario} (seed {report.seed}): {'PASS' if report.passed else 'FAIL'}"]
    width = max((len(r.name) for r in report.results), default=10)
    for r in report.results:
        bound = ">=" if r.details.get("bound") == "lower" else "<="
        lines.append(f"  {r.status}  {r.name:<{width}}  worst {r.worst_defect:.3e} "
                     f"(need {bound} {r.tolerance:.1e})")
        if "error" in r.details:
            lines.append(f"        {r.details['error']}")
        if r.name == "error_contract":
            lines.append(f"        expected {r.details['expected']}, raised {r.details['raised']}")
    for w in report.warnings:
        lines.append(f"  warning: {w}")
    lines.append(f"  {len(report.failures())} failed of {len(report.results)} in {report.seconds:.1f}s")
    return "\n".join(lines)


def cmd_verify(sc, args) -> tuple[str, int]:
    report = run_invariance_battery(sc, seed=args.seed, tol=args.tol, grid=args.grid,
                                    checks=args.check or None)
    if args.report:
        Path(args.report).write_text(json.dumps(report.as_dict(), indent=2) + "\n", "utf-8")
    if args.format == "report":
        text = json.dumps(report.as_dict(), indent=2)
    else:
        text = _verify_text(report)
    return text, EXIT_OK if report.passed else EXIT_CHECK_FAILED


COMMANDS: dict[str, tuple[Callable, str]] = {
    "project": (cmd_project, "projective class of the scenario's connection, with the trace check"),
    "lift": (cmd_lift, "lifted connection and induced projective class on the Thomas bundle"),
    "extend": (cmd_extend, "canonical operator on densities (and the rho-weighted variant)"),
    "bracket": (cmd_bracket, "bracket on densities extending S"),
    "verify": (cmd_verify, "run the invariance battery"),
    "emit": (cmd_emit, "coefficient listing of the canonical operator"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="projlap",
        description="Canonical operators and brackets on densities of projectively connected manifolds.",
        epilog=f"Bundled scenarios: {', '.join(scn.shipped_scenarios())}. "
               "The sample interval default can be overridden with PROJLAP_SAMPLE_DOMAIN='lo,hi'.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--scenario", required=True, help="scenario file or bundled scenario name")
        p.add_argument("--seed", type=int, default=None, help="seed for sampling and random test objects")
        p.add_argument("--tol", type=float, default=None, help="tolerance for sampled identities")
        p.add_argument("--grid", type=int, default=None, help="quadrature points per axis")
        p.add_argument("--format", choices=FORMATS, default="plain")
        p.add_argument("--report", metavar="PATH", help="write a JSON report to PATH (verify)")
        p.add_argument("--check", action="append", choices=sorted(ALL_CHECKS), metavar="NAME",
                       help="run only this check (verify; repeatable)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _prepare(sc, args):
    if isinstance(sc, scn.DeferredScenario):
        return sc
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    if args.tol is not None:
        sc = sc.with_tolerance(args.tol)
    if args.grid is not None:
        sc = sc.with_grid(args.grid)
    return sc


def _exit_code(exc: ProjlapError) -> int:
    if isinstance(exc, (PreconditionError, EvaluationDomainError)):
        return EXIT_PRECONDITION
    return EXIT_INVALID


def run(argv: Optional[Sequence[str]] = None, out: TextIO = sys.stdout, err: TextIO = sys.stderr) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=err)
    fn, _ = COMMANDS[args.command]
    try:
        sc = _prepare(scn.load(args.scenario), args)
        if isinstance(sc, scn.DeferredScenario) and args.command != "verify":
            raise sc.error
        if args.command != "verify" and getattr(sc, "expect_error", None) is not None:
            log.info("scenario declares expect_error=%s", sc.expect_error)
        text, code = fn(sc, args)
    except ProjlapError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=err)
        return _exit_code(exc)
    print(text, file=out)
    return code


def main() -> None:
    sys.exit(run())
