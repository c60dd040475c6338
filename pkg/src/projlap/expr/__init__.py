"""Scalar expressions: parse, differentiate exactly, evaluate, compare by sampling."""

from .core import (
    ONE,
    ZERO,
    Add,
    Const,
    Div,
    Expr,
    Func,
    Mul,
    Pow,
    Var,
    add,
    as_fraction,
    const,
    cos,
    diff,
    div,
    evaluate,
    evaluate_batch,
    exp,
    log,
    mul,
    neg,
    power,
    sin,
    size,
    sub,
    substitute,
    to_latex,
    to_plain,
    total,
    var,
)
from .identity import (
    SampleDomain,
    defect,
    defect_many,
    equal_prob,
    equal_prob_many,
)
from .parser import parse, tokenize

__all__ = [
    "ONE", "ZERO", "Add", "Const", "Div", "Expr", "Func", "Mul", "Pow", "Var",
    "add", "as_fraction", "const", "cos", "diff", "div", "evaluate", "evaluate_batch",
    "exp", "log", "mul", "neg", "power", "sin", "size", "sub", "substitute",
    "to_latex", "to_plain", "total", "var",
    "SampleDomain", "defect", "defect_many", "equal_prob", "equal_prob_many",
    "parse", "tokenize",
]
