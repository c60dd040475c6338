"""Scenario files: YAML documents validated against ``scenario.schema.json``.

A scenario fixes a chart of dimension n, one of a connection or a
projective class, a tensor density S with its weight, optionally a positive
density ρ, test densities, chart transitions with explicit inverses, and
the sampling and quadrature settings used by the checks.

Sparse rank-2 and rank-3 arrays are written as maps from 1-based index
strings ("i,j" or "k,i,j") to expressions.  Only one of each symmetric pair
needs to be given; listing both with different values is an error.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional, Union

import jsonschema
import yaml

from .. import expr as ex
from ..errors import DimensionTooSmallError, ProjlapError, ValidationError
from ..expr import Expr, SampleDomain
from ..expr.identity import DEFAULT_K, DEFAULT_TOL, default_interval
from ..geom import (
    ChartTransition,
    Connection,
    Density,
    ProjectiveClass,
    TensorDensity2,
    projective_class,
    symmetric2,
    symmetric3,
)
from ..verify.quadrature import QuadratureSpec

SCHEMA_RESOURCE = "scenario.schema.json"


@dataclass(frozen=True)
class TransitionSpec:
    name: str
    transition: ChartTransition
    target: SampleDomain


@dataclass(frozen=True)
class Scenario:
    name: str
    n: int
    tensor: TensorDensity2
    projective: ProjectiveClass
    connection: Optional[Connection] = None
    rho: Optional[Density] = None
    densities: tuple[Density, ...] = ()
    transitions: tuple[TransitionSpec, ...] = ()
    domain: Optional[SampleDomain] = None
    quadrature: Optional[QuadratureSpec] = None
    weights: tuple[Fraction, ...] = ()
    checks: tuple[str, ...] = ()
    expect_error: Optional[str] = None
    seed: int = 0
    description: str = ""
    source: Optional[Path] = None
    random_transitions: int = 0

    @property
    def weight(self) -> Fraction:
        return self.tensor.weight

    @property
    def representative(self) -> Connection:
        """A connection in the projective class: the given one, else Π itself."""
        return self.connection if self.connection is not None else self.projective.as_connection()

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed, domain=self.domain.with_(seed=seed))

    def with_tolerance(self, tol: float) -> "Scenario":
        return replace(self, domain=self.domain.with_(tol=tol),
                       transitions=tuple(replace(t, target=t.target.with_(tol=tol))
                                         for t in self.transitions))

    def with_grid(self, points: int) -> "Scenario":
        return replace(self, quadrature=self.quadrature.with_points(points))


class ScenarioError(ValidationError):
    """A scenario file is malformed or violates an invariant."""


class DeferredScenario:
    """A scenario whose construction raised a precondition error.

    Scenarios that declare ``expect_error`` are allowed to fail while
    loading; the failure is kept so that the error contract can be checked.
    """

    def __init__(self, name: str, error: ProjlapError, expect_error: Optional[str],
                 raw: Mapping[str, Any], source: Optional[Path] = None):
        self.name = name
        self.error = error
        self.expect_error = expect_error
        self.raw = raw
        self.source = source
        self.seed = int(raw.get("seed", 0))


def load_schema() -> dict:
    text = resources.files("projlap.scenarios").joinpath(SCHEMA_RESOURCE).read_text("utf-8")
    return json.loads(text)


def shipped_scenarios() -> dict[str, Path]:
    """Name -> path of the scenario files bundled with the package."""
    root = resources.files("projlap.scenarios")
    out = {}
    for entry in root.iterdir():
        if entry.name.endswith(".yaml"):
            out[entry.name[:-5]] = Path(str(entry))
    return dict(sorted(out.items()))


def resolve_path(name_or_path: Union[str, Path]) -> Path:
    """Accept a file path or the name of a bundled scenario such as ``curved_n2``."""
    p = Path(name_or_path)
    if p.exists():
        return p
    shipped = shipped_scenarios()
    if str(name_or_path) in shipped:
        return shipped[str(name_or_path)]
    raise ScenarioError(f"no scenario file or bundled scenario named {str(name_or_path)!r}")


def load(name_or_path: Union[str, Path]) -> Union[Scenario, DeferredScenario]:
    path = resolve_path(name_or_path)
    try:
        raw = yaml.safe_load(path.read_text("utf-8"))
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: not valid YAML: {exc}") from exc
    return from_mapping(raw, source=path)


def from_mapping(raw: Any, source: Optional[Path] = None) -> Union[Scenario, DeferredScenario]:
    where = f"{source}: " if source else ""
    try:
        jsonschema.validate(raw, load_schema())
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ScenarioError(f"{where}schema violation at {loc}: {exc.message}") from exc
    expect = raw.get("expect_error")
    try:
        return _build(raw, source)
    except ScenarioError:
        raise
    except ProjlapError as exc:
        if expect is None:
            if isinstance(exc, ValidationError):
                raise ScenarioError(f"{where}{exc}") from exc
            raise
        return DeferredScenario(raw["name"], exc, expect, raw, source)


# -- builders ------------------------------------------------------------------

def _rational(value, what: str) -> Fraction:
    try:
        if isinstance(value, str):
            value = value.replace(" ", "")
        return ex.as_fraction(value)
    except (ValueError, TypeError, ZeroDivisionError) as exc:
        raise ScenarioError(f"{what}: {value!r} is not a rational number") from exc


def _expression(value, n: int, what: str) -> Expr:
    text = str(value)
    try:
        e = ex.parse(text, max_var=n)
    except ProjlapError as exc:
        raise ScenarioError(f"{what}: {exc}") from exc
    if 0 in e.free_vars():
        raise ScenarioError(f"{what}: base quantities may not use the fibre coordinate x0")
    return e


def _indices(key: str, rank: int, n: int, what: str) -> tuple[int, ...]:
    idx = tuple(int(s) for s in key.split(","))
    if len(idx) != rank or any(not 1 <= i <= n for i in idx):
        raise ScenarioError(f"{what}: index {key!r} out of range for n={n}")
    return tuple(i - 1 for i in idx)


def _sparse2(entries: Mapping[str, Any], n: int, what: str):
    filled: dict[tuple[int, int], Expr] = {}
    for key, value in entries.items():
        i, j = _indices(key, 2, n, what)
        e = _expression(value, n, f"{what}[{key}]")
        slot = (min(i, j), max(i, j))
        if slot in filled and filled[slot] is not e:
            raise ScenarioError(f"{what}: conflicting values for the symmetric pair {key!r}")
        filled[slot] = e
    return symmetric2(n, lambda i, j: filled.get((i, j), ex.ZERO))


def _sparse3(entries: Mapping[str, Any], n: int, what: str):
    filled: dict[tuple[int, int, int], Expr] = {}
    for key, value in entries.items():
        k, i, j = _indices(key, 3, n, what)
        e = _expression(value, n, f"{what}[{key}]")
        slot = (k, min(i, j), max(i, j))
        if slot in filled and filled[slot] is not e:
            raise ScenarioError(f"{what}: conflicting values for the symmetric pair {key!r}")
        filled[slot] = e
    return symmetric3(n, lambda k, i, j: filled.get((k, i, j), ex.ZERO))


def _intervals(raw, count: int, what: str) -> tuple[tuple[float, float], ...]:
    if len(raw) != count:
        raise ScenarioError(f"{what}: expected {count} intervals, got {len(raw)}")
    out = tuple((float(lo), float(hi)) for lo, hi in raw)
    for lo, hi in out:
        if not lo < hi:
            raise ScenarioError(f"{what}: empty interval [{lo}, {hi}]")
    return out


def _domain(raw: Mapping[str, Any], n: int) -> SampleDomain:
    """Sample box over x0..xn (the fibre coordinate gets the first interval)."""
    if "intervals" in raw and "interval" in raw:
        raise ScenarioError("sample_domain: give either 'interval' or 'intervals', not both")
    if "intervals" in raw:
        base = _intervals(raw["intervals"], n, "sample_domain.intervals")
        ivs = (base[0],) + base
    else:
        iv = tuple(raw.get("interval", default_interval()))
        ivs = tuple(iv for _ in range(n + 1))
    return SampleDomain(ivs, k=int(raw.get("samples", DEFAULT_K)),
                        tol=float(raw.get("tolerance", DEFAULT_TOL)), seed=int(raw.get("seed", 0)))


def _build(raw: Mapping[str, Any], source: Optional[Path]) -> Scenario:
    n = raw["dimension"]
    if n < 2:
        raise DimensionTooSmallError(f"dimension must be at least 2, got {n}")
    domain = _domain(raw.get("sample_domain", {}), n)

    has_conn, has_proj = "connection" in raw, "projective_class" in raw
    if has_conn == has_proj:
        raise ScenarioError("exactly one of 'connection' and 'projective_class' is required")
    connection = None
    if has_conn:
        connection = Connection(_sparse3(raw["connection"], n, "connection"))
        proj = projective_class(connection)
    else:
        proj = ProjectiveClass.validated(_sparse3(raw["projective_class"], n, "projective_class"), domain)

    t = raw["tensor"]
    tensor = TensorDensity2(_sparse2(t["components"], n, "tensor.components"),
                            _rational(t.get("weight", 0), "tensor.weight"))

    rho = None
    if "rho" in raw:
        r = raw["rho"]
        rho = Density(_expression(r["coefficient"], n, "rho.coefficient"),
                      _rational(r.get("weight", 0), "rho.weight"))

    densities = tuple(
        Density(_expression(d["coefficient"], n, f"densities[{k}]"),
                _rational(d.get("weight", 0), f"densities[{k}].weight"))
        for k, d in enumerate(raw.get("densities", []))
    )

    transitions = []
    for k, spec in enumerate(raw.get("transitions", [])):
        what = f"transitions[{k}]"
        if len(spec["forward"]) != n or len(spec["inverse"]) != n:
            raise ScenarioError(f"{what}: forward and inverse need {n} components each")
        tr = ChartTransition(tuple(_expression(e, n, f"{what}.forward") for e in spec["forward"]),
                             tuple(_expression(e, n, f"{what}.inverse") for e in spec["inverse"]))
        target = domain
        if "target_domain" in spec:
            base = _intervals(spec["target_domain"], n, f"{what}.target_domain")
            target = domain.with_(intervals=(base[0],) + base)
        tr.validate(domain, target)
        transitions.append(TransitionSpec(spec.get("name", f"t{k + 1}"), tr, target))

    q = raw.get("quadrature", {})
    box = _intervals(q["box"], n, "quadrature.box") if "box" in q else domain.intervals[1:]
    quadrature = QuadratureSpec(box, int(q.get("points", 101 if n == 2 else 41)))

    weights = tuple(_rational(w, "weights") for w in raw.get("weights", []))
    return Scenario(
        name=raw["name"], n=n, tensor=tensor, projective=proj, connection=connection, rho=rho,
        densities=densities, transitions=tuple(transitions), domain=domain, quadrature=quadrature,
        weights=weights, checks=tuple(raw.get("checks", [])), expect_error=raw.get("expect_error"),
        seed=int(raw.get("seed", 0)), description=raw.get("description", ""), source=source,
        random_transitions=int(raw.get("random_transitions", 0)),
    )
