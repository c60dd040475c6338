"""Immutable scalar expression DAG over chart variables x0, x1, ..., xN.

Nodes are hash-consed: structurally equal expressions built through the
constructors below are the same Python object, so identity doubles as
structural equality and derivative/evaluation caches are shared across the
whole DAG.  Only light simplification is performed (constant folding,
0*e -> 0, e+0 -> e, 1*e -> e); equality of non-identical expressions is
decided by sampling, see :mod:`projlap.expr.identity`.
"""

from __future__ import annotations

import threading
import weakref
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from ..errors import EvaluationDomainError

Number = Union[int, Fraction]

_FUNCS = ("exp", "log", "sin", "cos")

_intern_table: "weakref.WeakValueDictionary[tuple, Expr]" = weakref.WeakValueDictionary()
_intern_lock = threading.Lock()


def _intern(cls, key, init):
    full_key = (cls.__name__,) + key
    with _intern_lock:
        node = _intern_table.get(full_key)
        if node is None:
            node = object.__new__(cls)
            init(node)
            node._dcache = {}
            node._free = None
            _intern_table[full_key] = node
    return node


def as_fraction(value) -> Fraction:
    """Exact rational for ints, Fractions, decimal strings and floats.

    Floats go through ``repr`` so that 0.1 becomes 1/10 rather than its
    binary expansion.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, Rational)):
        return Fraction(value)
    if isinstance(value, float):
        if not np.isfinite(value):
            raise ValueError(f"non-finite constant {value!r}")
        return Fraction(repr(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"cannot convert {type(value).__name__} to an exact rational")


class Expr:
    __slots__ = ("_dcache", "_free", "__weakref__")

    # -- arithmetic sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return add(self, neg(_coerce(other)))

    def __rsub__(self, other):
        return add(_coerce(other), neg(self))

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __pow__(self, k):
        if isinstance(k, Const) and k.value.denominator == 1:
            k = int(k.value)
        if not isinstance(k, int):
            raise TypeError("only integer exponents are supported")
        return power(self, k)

    def __neg__(self):
        return neg(self)

    def __pos__(self):
        return self

    # -- structure --------------------------------------------------------
    @property
    def children(self) -> tuple["Expr", ...]:
        return ()

    def free_vars(self) -> frozenset[int]:
        if self._free is None:
            acc: set[int] = set()
            for c in self.children:
                acc |= c.free_vars()
            self._free = frozenset(acc)
        return self._free

    def is_zero(self) -> bool:
        return isinstance(self, Const) and self.value == 0

    def is_one(self) -> bool:
        return isinstance(self, Const) and self.value == 1

    def diff(self, v: int) -> "Expr":
        return diff(self, v)

    def __str__(self) -> str:
        return to_plain(self)

    def __repr__(self) -> str:
        return f"Expr({to_plain(self)!r})"

    def __reduce__(self):
        from .parser import parse

        return (parse, (to_plain(self),))


class Const(Expr):
    __slots__ = ("value",)

    def __new__(cls, value):
        v = as_fraction(value)

        def init(node):
            node.value = v

        return _intern(cls, (v,), init)

    def _diff(self, v):
        return ZERO


class Var(Expr):
    __slots__ = ("index",)

    def __new__(cls, index: int):
        if not isinstance(index, int) or index < 0:
            raise ValueError(f"variable index must be a nonnegative int, got {index!r}")

        def init(node):
            node.index = index

        return _intern(cls, (index,), init)

    def free_vars(self):
        return frozenset((self.index,))

    def _diff(self, v):
        return ONE if v == self.index else ZERO


class Add(Expr):
    __slots__ = ("terms",)

    def __new__(cls, terms: tuple[Expr, ...]):
        def init(node):
            node.terms = terms

        return _intern(cls, terms, init)

    @property
    def children(self):
        return self.terms

    def _diff(self, v):
        return add(*(diff(t, v) for t in self.terms))


class Mul(Expr):
    __slots__ = ("factors",)

    def __new__(cls, factors: tuple[Expr, ...]):
        def init(node):
            node.factors = factors

        return _intern(cls, factors, init)

    @property
    def children(self):
        return self.factors

    def _diff(self, v):
        out = []
        fs = self.factors
        for i, f in enumerate(fs):
            if v not in f.free_vars():
                continue
            out.append(mul(*fs[:i], diff(f, v), *fs[i + 1:]))
        return add(*out)


class Div(Expr):
    __slots__ = ("num", "den")

    def __new__(cls, num: Expr, den: Expr):
        def init(node):
            node.num = num
            node.den = den

        return _intern(cls, (num, den), init)

    @property
    def children(self):
        return (self.num, self.den)

    def _diff(self, v):
        dn = diff(self.num, v)
        if v not in self.den.free_vars():
            return div(dn, self.den)
        dd = diff(self.den, v)
        return div(add(mul(dn, self.den), neg(mul(self.num, dd))), power(self.den, 2))


class Pow(Expr):
    __slots__ = ("base", "exponent")

    def __new__(cls, base: Expr, exponent: int):
        def init(node):
            node.base = base
            node.exponent = exponent

        return _intern(cls, (base, exponent), init)

    @property
    def children(self):
        return (self.base,)

    def _diff(self, v):
        k = self.exponent
        return mul(Const(k), power(self.base, k - 1), diff(self.base, v))


class Func(Expr):
    __slots__ = ("name", "arg")

    def __new__(cls, name: str, arg: Expr):
        if name not in _FUNCS:
            raise ValueError(f"unknown function {name!r}")

        def init(node):
            node.name = name
            node.arg = arg

        return _intern(cls, (name, arg), init)

    @property
    def children(self):
        return (self.arg,)

    def _diff(self, v):
        du = diff(self.arg, v)
        if self.name == "exp":
            return mul(self, du)
        if self.name == "log":
            return div(du, self.arg)
        if self.name == "sin":
            return mul(cos(self.arg), du)
        return neg(mul(sin(self.arg), du))


ZERO = Const(0)
ONE = Const(1)
# module-level references keep the two hottest constants alive in the weak table
_PINNED = (ZERO, ONE)


def _coerce(x) -> Expr:
    if isinstance(x, Expr):
        return x
    return Const(x)


def const(value) -> Const:
    return Const(value)


def var(index: int) -> Var:
    return Var(index)


# -- simplifying constructors -------------------------------------------------

def add(*terms) -> Expr:
    flat: list[Expr] = []
    c = Fraction(0)
    for t in terms:
        t = _coerce(t)
        parts = t.terms if isinstance(t, Add) else (t,)
        for p in parts:
            if isinstance(p, Const):
                c += p.value
            else:
                flat.append(p)
    if c != 0:
        flat.append(Const(c))
    if not flat:
        return ZERO
    if len(flat) == 1:
        return flat[0]
    return Add(tuple(flat))


def mul(*factors) -> Expr:
    flat: list[Expr] = []
    c = Fraction(1)
    for f in factors:
        f = _coerce(f)
        parts = f.factors if isinstance(f, Mul) else (f,)
        for p in parts:
            if isinstance(p, Const):
                c *= p.value
                if c == 0:
                    return ZERO
            else:
                flat.append(p)
    if c != 1:
        flat.insert(0, Const(c))
    if not flat:
        return ONE
    if len(flat) == 1:
        return flat[0]
    return Mul(tuple(flat))


def neg(e) -> Expr:
    return mul(Const(-1), e)


def sub(a, b) -> Expr:
    return add(a, neg(_coerce(b)))


def div(a, b) -> Expr:
    a, b = _coerce(a), _coerce(b)
    if isinstance(b, Const):
        if b.value == 0:
            raise EvaluationDomainError("division by the constant 0")
        return mul(Const(1 / b.value), a)
    if a.is_zero():
        return ZERO
    return Div(a, b)


def power(base, k: int) -> Expr:
    base = _coerce(base)
    if k == 0:
        return ONE
    if k == 1:
        return base
    if isinstance(base, Const):
        if base.value == 0 and k < 0:
            raise EvaluationDomainError("0 raised to a negative power")
        return Const(base.value ** k)
    if isinstance(base, Pow):
        return power(base.base, base.exponent * k)
    return Pow(base, k)


def exp(u) -> Expr:
    u = _coerce(u)
    if u.is_zero():
        return ONE
    return Func("exp", u)


def log(u) -> Expr:
    u = _coerce(u)
    if isinstance(u, Const):
        if u.value <= 0:
            raise EvaluationDomainError(f"log of nonpositive constant {u.value}")
        if u.value == 1:
            return ZERO
    if isinstance(u, Func) and u.name == "exp":
        return u.arg
    return Func("log", u)


def sin(u) -> Expr:
    u = _coerce(u)
    if u.is_zero():
        return ZERO
    return Func("sin", u)


def cos(u) -> Expr:
    u = _coerce(u)
    if u.is_zero():
        return ONE
    return Func("cos", u)


def total(exprs: Iterable) -> Expr:
    return add(*exprs)


# -- calculus -----------------------------------------------------------------

def diff(e: Expr, v: int) -> Expr:
    """Exact partial derivative of ``e`` with respect to variable ``x{v}``."""
    if v not in e.free_vars():
        return ZERO
    cached = e._dcache.get(v)
    if cached is None:
        cached = e._diff(v)
        e._dcache[v] = cached
    return cached


def substitute(e: Expr, mapping: Mapping[int, Expr]) -> Expr:
    """Simultaneously replace variables by expressions."""
    mapping = {k: _coerce(v) for k, v in mapping.items()}
    keys = frozenset(mapping)
    memo: dict[int, Expr] = {}

    def go(node: Expr) -> Expr:
        if not (node.free_vars() & keys):
            return node
        hit = memo.get(id(node))
        if hit is not None:
            return hit
        if isinstance(node, Var):
            out = mapping[node.index]
        elif isinstance(node, Add):
            out = add(*(go(t) for t in node.terms))
        elif isinstance(node, Mul):
            out = mul(*(go(f) for f in node.factors))
        elif isinstance(node, Div):
            out = div(go(node.num), go(node.den))
        elif isinstance(node, Pow):
            out = power(go(node.base), node.exponent)
        elif isinstance(node, Func):
            out = _FUNC_CTORS[node.name](go(node.arg))
        else:  # pragma: no cover - Const has no free vars
            out = node
        memo[id(node)] = out
        return out

    return go(e)


_FUNC_CTORS = {"exp": exp, "log": log, "sin": sin, "cos": cos}


def size(e: Expr) -> int:
    """Number of distinct nodes in the DAG rooted at ``e``."""
    seen: set[int] = set()
    stack = [e]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.extend(node.children)
    return len(seen)


# -- evaluation ---------------------------------------------------------------

def evaluate_batch(e: Expr, points) -> np.ndarray:
    """Evaluate at many points at once.

    ``points`` is either a 2-D array of shape (k, N+1) whose column j holds
    the values of ``xj``, or a mapping from variable index to a 1-D array
    (or scalar).  Returns a float array of shape (k,) (or the broadcast
    shape of the mapping values).
    """
    if isinstance(points, Mapping):
        cols = {int(k): np.asarray(v, dtype=float) for k, v in points.items()}
        shape = np.broadcast_shapes(*(c.shape for c in cols.values())) if cols else ()
    else:
        arr = np.asarray(points, dtype=float)
        if arr.ndim != 2:
            raise ValueError("points must be a (k, nvars) array or a mapping")
        cols = {j: arr[:, j] for j in range(arr.shape[1])}
        shape = (arr.shape[0],)
    missing = e.free_vars() - set(cols)
    if missing:
        raise EvaluationDomainError(f"no value supplied for variables {sorted(missing)}")

    memo: dict[int, np.ndarray] = {}

    def go(node: Expr):
        hit = memo.get(id(node))
        if hit is not None:
            return hit
        if isinstance(node, Const):
            out = float(node.value)
        elif isinstance(node, Var):
            out = cols[node.index]
        elif isinstance(node, Add):
            out = go(node.terms[0])
            for t in node.terms[1:]:
                out = out + go(t)
        elif isinstance(node, Mul):
            out = go(node.factors[0])
            for f in node.factors[1:]:
                out = out * go(f)
        elif isinstance(node, Div):
            den = go(node.den)
            if np.any(np.asarray(den) == 0):
                raise EvaluationDomainError(f"division by zero in {to_plain(node)}")
            out = go(node.num) / den
        elif isinstance(node, Pow):
            b = go(node.base)
            if node.exponent < 0 and np.any(np.asarray(b) == 0):
                raise EvaluationDomainError(f"zero raised to a negative power in {to_plain(node)}")
            out = b ** float(node.exponent) if node.exponent < 0 else b ** node.exponent
        else:
            a = go(node.arg)
            if node.name == "exp":
                out = np.exp(a)
            elif node.name == "log":
                if np.any(np.asarray(a) <= 0):
                    raise EvaluationDomainError(f"log of nonpositive value in {to_plain(node)}")
                out = np.log(a)
            elif node.name == "sin":
                out = np.sin(a)
            else:
                out = np.cos(a)
        memo[id(node)] = out
        return out

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        result = np.broadcast_to(np.asarray(go(e), dtype=float), shape).copy()
    if not np.all(np.isfinite(result)):
        raise EvaluationDomainError(f"non-finite value while evaluating {to_plain(e)[:120]}")
    return result


def evaluate(e: Expr, point: Union[Sequence[float], Mapping[int, float]]) -> float:
    """Evaluate at a single point given as a sequence indexed by variable or a mapping."""
    if not isinstance(point, Mapping):
        point = {j: v for j, v in enumerate(point)}
    out = evaluate_batch(e, {k: np.asarray([v], dtype=float) for k, v in point.items()})
    return float(np.ravel(out)[0])


# -- printing -----------------------------------------------------------------

_PREC_ADD, _PREC_MUL, _PREC_UNARY, _PREC_POW, _PREC_ATOM = 1, 2, 3, 4, 5


def _frac_plain(v: Fraction) -> str:
    return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


def _plain(e: Expr) -> tuple[str, int]:
    if isinstance(e, Const):
        v = e.value
        if v < 0:
            return "-" + _frac_plain(-v), _PREC_UNARY
        return _frac_plain(v), (_PREC_ATOM if v.denominator == 1 else _PREC_MUL)
    if isinstance(e, Var):
        return f"x{e.index}", _PREC_ATOM
    if isinstance(e, Func):
        return f"{e.name}({_plain(e.arg)[0]})", _PREC_ATOM
    if isinstance(e, Pow):
        s, p = _plain(e.base)
        if p < _PREC_ATOM:
            s = f"({s})"
        k = e.exponent
        return (f"{s}^{k}" if k > 0 else f"{s}^({k})"), _PREC_POW
    if isinstance(e, Add):
        out = ""
        for i, t in enumerate(e.terms):
            s, p = _plain(t)
            if i == 0:
                out = s
            elif s.startswith("-"):
                rest = s[1:]
                # "-a/b*x" is safe to split, "-(x)" style only arises from consts
                out += " - " + rest
            else:
                out += " + " + s
        return out, _PREC_ADD
    if isinstance(e, Mul):
        fs = list(e.factors)
        sign = ""
        parts = []
        if isinstance(fs[0], Const):
            c = fs[0].value
            fs = fs[1:]
            if c == -1:
                sign = "-"
            elif c < 0:
                sign = "-"
                parts.append(_frac_plain(-c))
            else:
                parts.append(_frac_plain(c))
        for f in fs:
            s, p = _plain(f)
            if p < _PREC_POW:
                s = f"({s})"
            parts.append(s)
        return sign + "*".join(parts), (_PREC_UNARY if sign else _PREC_MUL)
    if isinstance(e, Div):
        n, pn = _plain(e.num)
        d, pd = _plain(e.den)
        if pn < _PREC_MUL:
            n = f"({n})"
        if pd < _PREC_POW:
            d = f"({d})"
        return f"{n}/{d}", _PREC_MUL
    raise TypeError(type(e))


def to_plain(e: Expr) -> str:
    """Render in the input grammar; ``parse(to_plain(e))`` reproduces ``e``'s values."""
    return _plain(e)[0]


def _frac_latex(v: Fraction) -> str:
    if v.denominator == 1:
        return str(v.numerator)
    return f"\\frac{{{v.numerator}}}{{{v.denominator}}}"


def _latex(e: Expr) -> tuple[str, int]:
    if isinstance(e, Const):
        v = e.value
        if v < 0:
            return "-" + _frac_latex(-v), _PREC_UNARY
        return _frac_latex(v), _PREC_ATOM
    if isinstance(e, Var):
        return f"x^{{{e.index}}}", _PREC_ATOM
    if isinstance(e, Func):
        inner = _latex(e.arg)[0]
        if e.name == "exp":
            return f"e^{{{inner}}}", _PREC_ATOM
        return f"\\{e.name}\\left({inner}\\right)", _PREC_ATOM
    if isinstance(e, Pow):
        s, p = _latex(e.base)
        if p < _PREC_ATOM or isinstance(e.base, Var):
            s = f"\\left({s}\\right)"
        return f"{s}^{{{e.exponent}}}", _PREC_POW
    if isinstance(e, Add):
        out = ""
        for i, t in enumerate(e.terms):
            s, _ = _latex(t)
            if i and s.startswith("-"):
                out += " - " + s[1:]
            elif i:
                out += " + " + s
            else:
                out = s
        return out, _PREC_ADD
    if isinstance(e, Mul):
        fs = list(e.factors)
        sign = ""
        parts = []
        if isinstance(fs[0], Const):
            c = fs[0].value
            fs = fs[1:]
            if c < 0:
                sign, c = "-", -c
            if c != 1:
                parts.append(_frac_latex(c))
        for f in fs:
            s, p = _latex(f)
            if p < _PREC_POW:
                s = f"\\left({s}\\right)"
            parts.append(s)
        return sign + " ".join(parts), (_PREC_UNARY if sign else _PREC_MUL)
    if isinstance(e, Div):
        return f"\\frac{{{_latex(e.num)[0]}}}{{{_latex(e.den)[0]}}}", _PREC_ATOM
    raise TypeError(type(e))


def to_latex(e: Expr) -> str:
    return _latex(e)[0]
