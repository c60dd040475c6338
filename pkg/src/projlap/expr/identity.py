"""Probabilistic identity testing by seeded point sampling."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from ..errors import ValidationError
from .core import Expr, evaluate_batch

DEFAULT_INTERVAL = (0.2, 1.2)
DEFAULT_K = 20
DEFAULT_TOL = 1e-9
DOMAIN_ENV_VAR = "PROJLAP_SAMPLE_DOMAIN"


def default_interval() -> tuple[float, float]:
    """The per-variable sampling interval, overridable via ``PROJLAP_SAMPLE_DOMAIN="lo,hi"``."""
    raw = os.environ.get(DOMAIN_ENV_VAR)
    if not raw:
        return DEFAULT_INTERVAL
    try:
        lo, hi = (float(s) for s in raw.split(","))
    except ValueError as exc:
        raise ValidationError(f"{DOMAIN_ENV_VAR} must be 'lo,hi', got {raw!r}") from exc
    return lo, hi


@dataclass(frozen=True)
class SampleDomain:
    """Box of per-variable intervals for x0..xN plus sampling parameters."""

    intervals: tuple[tuple[float, float], ...]
    k: int = DEFAULT_K
    tol: float = DEFAULT_TOL
    seed: int = 0

    def __post_init__(self):
        ivs = tuple((float(lo), float(hi)) for lo, hi in self.intervals)
        object.__setattr__(self, "intervals", ivs)
        for j, (lo, hi) in enumerate(ivs):
            if not lo <= hi:
                raise ValidationError(f"empty sampling interval for x{j}: [{lo}, {hi}]")
        if self.k < 1:
            raise ValidationError("sample count k must be at least 1")
        if not self.tol > 0:
            raise ValidationError("tolerance must be positive")

    @classmethod
    def uniform(cls, nvars: int, interval: Optional[tuple[float, float]] = None, **kw) -> "SampleDomain":
        """Same interval for variables x0..x{nvars-1}."""
        iv = interval if interval is not None else default_interval()
        return cls(tuple(iv for _ in range(nvars)), **kw)

    @property
    def nvars(self) -> int:
        return len(self.intervals)

    def with_(self, **kw) -> "SampleDomain":
        params = dict(intervals=self.intervals, k=self.k, tol=self.tol, seed=self.seed)
        params.update(kw)
        return SampleDomain(**params)

    def points(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        lo = np.array([iv[0] for iv in self.intervals])
        hi = np.array([iv[1] for iv in self.intervals])
        return lo + (hi - lo) * rng.random((self.k, self.nvars))


def _check_vars(exprs: Iterable[Expr], d: SampleDomain):
    for e in exprs:
        bad = [v for v in e.free_vars() if v >= d.nvars]
        if bad:
            raise ValidationError(f"sample domain has no interval for x{max(bad)}")


def defect(e1: Expr, e2: Expr, d: SampleDomain) -> float:
    """Worst value of |a-b| / (1 + max(|a|,|b|)) over the sample points."""
    _check_vars((e1, e2), d)
    pts = d.points()
    a = evaluate_batch(e1, pts)
    b = evaluate_batch(e2, pts)
    return float(np.max(np.abs(a - b) / (1.0 + np.maximum(np.abs(a), np.abs(b)))))


def equal_prob(e1: Expr, e2: Expr, d: SampleDomain) -> bool:
    """Decide e1 == e2 by agreement at ``d.k`` seeded random points.

    Domain errors at a sample point propagate as
    :class:`~projlap.errors.EvaluationDomainError`.
    """
    return defect(e1, e2, d) <= d.tol


def defect_many(pairs: Sequence[tuple[Expr, Expr]], d: SampleDomain) -> float:
    """Largest :func:`defect` over a sequence of expression pairs (0.0 if empty)."""
    worst = 0.0
    for e1, e2 in pairs:
        worst = max(worst, defect(e1, e2, d))
    return worst


def equal_prob_many(pairs: Sequence[tuple[Expr, Expr]], d: SampleDomain) -> bool:
    return defect_many(pairs, d) <= d.tol
