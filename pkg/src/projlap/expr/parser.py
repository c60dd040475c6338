"""Recursive-descent parser for the scalar expression grammar.

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := ('-' | '+') unary | power
    power   := atom ('^' unary)?          # right associative, integer exponent
    atom    := number | 'x' digits | func '(' expr ')' | '(' expr ')'
    func    := 'exp' | 'log' | 'sin' | 'cos'

Numbers are integers or decimals (optionally with an exponent part); ``p/q``
is ordinary division and folds to an exact rational.
"""

from __future__ import annotations

import re
from fractions import Fraction
from typing import NamedTuple, Optional

from ..errors import ExprSyntaxError, UnknownIdentifierError
from . import core
from .core import Const, Expr

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()])
    """,
    re.VERBOSE,
)

_VAR_RE = re.compile(r"x(\d+)\Z")


class Token(NamedTuple):
    kind: str
    text: str
    pos: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {text[pos]!r}", text, pos)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, max_var: Optional[int]):
        self.text = text
        self.tokens = tokenize(text)
        self.i = 0
        self.max_var = max_var

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def error(self, message: str, tok: Optional[Token] = None):
        tok = tok or self.tok
        raise ExprSyntaxError(message, self.text, tok.pos)

    def accept(self, text: str) -> bool:
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text: str):
        if not self.accept(text):
            found = self.tok.text or "end of input"
            self.error(f"expected {text!r}, found {found!r}")

    def parse(self) -> Expr:
        if self.tok.kind == "end":
            self.error("empty expression")
        e = self.expr()
        if self.tok.kind != "end":
            self.error(f"unexpected token {self.tok.text!r}")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while True:
            if self.accept("+"):
                e = core.add(e, self.term())
            elif self.accept("-"):
                e = core.sub(e, self.term())
            else:
                return e

    def term(self) -> Expr:
        e = self.unary()
        while True:
            if self.accept("*"):
                e = core.mul(e, self.unary())
            elif self.tok.kind == "op" and self.tok.text == "/":
                tok = self.tok
                self.i += 1
                rhs = self.unary()
                if rhs.is_zero():
                    self.error("division by literal zero", tok)
                e = core.div(e, rhs)
            else:
                return e

    def unary(self) -> Expr:
        if self.accept("-"):
            return core.neg(self.unary())
        if self.accept("+"):
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.text == "^":
            tok = self.tok
            self.i += 1
            exponent = self.unary()
            if not (isinstance(exponent, Const) and exponent.value.denominator == 1):
                self.error("exponent must be an integer constant", tok)
            k = int(exponent.value)
            if base.is_zero() and k < 0:
                self.error("zero raised to a negative power", tok)
            return core.power(base, k)
        return base

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Const(Fraction(tok.text))
        if tok.kind == "ident":
            self.i += 1
            if tok.text in ("exp", "log", "sin", "cos"):
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                if tok.text == "log" and isinstance(arg, Const) and arg.value <= 0:
                    self.error("log of a nonpositive constant", tok)
                return core._FUNC_CTORS[tok.text](arg)
            m = _VAR_RE.match(tok.text)
            if m is None:
                raise UnknownIdentifierError(f"unknown identifier {tok.text!r}", self.text, tok.pos)
            index = int(m.group(1))
            if self.max_var is not None and index > self.max_var:
                raise UnknownIdentifierError(
                    f"variable {tok.text} out of range (max x{self.max_var})", self.text, tok.pos
                )
            return core.Var(index)
        if self.accept("("):
            e = self.expr()
            self.expect(")")
            return e
        found = tok.text or "end of input"
        self.error(f"unexpected {found!r}")


def parse(text: str, max_var: Optional[int] = None) -> Expr:
    """Parse ``text`` into an :class:`Expr`.

    ``max_var`` restricts the admissible variables to ``x0 .. x{max_var}``.
    Raises :class:`ExprSyntaxError` (with the offending position) or
    :class:`UnknownIdentifierError`.
    """
    if not isinstance(text, str):
        raise TypeError(f"expected a string, got {type(text).__name__}")
    return _Parser(text, max_var).parse()
