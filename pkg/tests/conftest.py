import random

import pytest

from projlap import expr as ex
from projlap.expr import SampleDomain
from projlap.geom import ChartTransition, Connection, TensorDensity2, symmetric2, symmetric3


def box(n: int, k: int = 20, tol: float = 1e-9, seed: int = 0, interval=(0.2, 1.2)) -> SampleDomain:
    """Sample domain over x0..xn with one interval for every variable."""
    return SampleDomain.uniform(n + 1, interval, k=k, tol=tol, seed=seed)


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def dom2():
    return box(2)


@pytest.fixture
def dom3():
    return box(3)


def _key(text: str) -> tuple[int, ...]:
    return tuple(int(s) - 1 for s in text.split(","))


def connection(n: int, entries: dict):
    """Connection from 1-based sparse entries like {"1,1,2": "x2"}; the symmetric partner is filled in."""
    table = {}
    for key, text in entries.items():
        k, i, j = _key(key)
        table[(k, min(i, j), max(i, j))] = ex.parse(text)
    return Connection(symmetric3(n, lambda k, i, j: table.get((k, i, j), ex.ZERO)))


def tensor(n: int, entries: dict, weight=0):
    table = {}
    for key, text in entries.items():
        i, j = _key(key)
        table[(min(i, j), max(i, j))] = ex.parse(text)
    return TensorDensity2(symmetric2(n, lambda i, j: table.get((i, j), ex.ZERO)), weight)


def transition(forward, inverse):
    return ChartTransition(tuple(ex.parse(f) for f in forward), tuple(ex.parse(g) for g in inverse))


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record():
    """Print one PASS/FAIL line for an acceptance criterion, then assert it."""
    def _record(label: str, ok: bool, measured: str):
        line = f"{'PASS' if ok else 'FAIL'}  {label}: {measured}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
        assert ok, line
    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
