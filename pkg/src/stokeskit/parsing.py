"""Recursive-descent parser for factor and operator expressions.

Accepts sums of products of numbers, ``i``, ``x`` (with integer or ``(p/q)``
exponents) and, for operators, ``D`` standing for d/dx.  ``D`` must be the
rightmost atom of a product: ``x^3*D`` is accepted, ``D*x`` is not.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

from .factors import ExponentialFactor, GaussRational, ONE


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


_TOKEN = re.compile(r"\s*(?:(\d+(?:\.\d*)?|\.\d+)|([A-Za-z]+)|(.))")


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    out: list[_Tok] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            break
        if m.group(1) is not None:
            out.append(_Tok("num", m.group(1), m.start(1)))
        elif m.group(2) is not None:
            word = m.group(2)
            if word not in ("x", "i", "D"):
                raise ParseError(f"unknown symbol {word!r}", m.start(2))
            out.append(_Tok(word, word, m.start(2)))
        elif m.group(3) is not None:
            ch = m.group(3)
            if ch not in "+-*/^()":
                raise ParseError(f"unexpected character {ch!r}", m.start(3))
            out.append(_Tok(ch, ch, m.start(3)))
        pos = m.end()
    out.append(_Tok("end", "", len(text)))
    return out


class _Op:
    """Operator value: ``{D-power: coefficient factor}``."""

    __slots__ = ("parts",)

    def __init__(self, parts: dict[int, ExponentialFactor]):
        self.parts = {k: v for k, v in parts.items() if v}

    @classmethod
    def func(cls, f: ExponentialFactor) -> "_Op":
        return cls({0: f})

    def is_function(self) -> bool:
        return all(k == 0 for k in self.parts)

    def function(self) -> ExponentialFactor:
        return self.parts.get(0, ExponentialFactor.zero())

    def add(self, other: "_Op", sign: int) -> "_Op":
        out = dict(self.parts)
        for k, v in other.parts.items():
            cur = out.get(k, ExponentialFactor.zero())
            out[k] = cur + v if sign > 0 else cur - v
        return _Op(out)

    def mul(self, other: "_Op", pos: int) -> "_Op":
        if not self.is_function() and not (other.is_function() and _is_constant(other.function())):
            raise ParseError("D must be the rightmost factor of a product", pos)
        if not self.is_function():
            return _Op({k: v * other.function() for k, v in self.parts.items()})
        f = self.function()
        return _Op({k: f * v for k, v in other.parts.items()})


def _is_constant(f: ExponentialFactor) -> bool:
    return all(k == 0 for k, _ in f.terms)


class _Parser:
    def __init__(self, text: str, allow_d: bool):
        self.toks = _tokenize(text)
        self.i = 0
        self.allow_d = allow_d

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def take(self, kind: str | None = None) -> _Tok:
        t = self.toks[self.i]
        if kind is not None and t.kind != kind:
            raise ParseError(f"expected {kind!r}, found {t.text or 'end of input'!r}", t.pos)
        self.i += 1
        return t

    def parse(self) -> _Op:
        if self.peek().kind == "end":
            raise ParseError("empty expression", 0)
        v = self.expr()
        t = self.peek()
        if t.kind != "end":
            raise ParseError(f"unexpected {t.text!r}", t.pos)
        return v

    def expr(self) -> _Op:
        sign = 1
        if self.peek().kind in "+-":
            sign = -1 if self.take().kind == "-" else 1
        v = self.term()
        if sign < 0:
            v = _Op({}).add(v, -1)
        while self.peek().kind in ("+", "-"):
            s = 1 if self.take().kind == "+" else -1
            v = v.add(self.term(), s)
        return v

    def term(self) -> _Op:
        v = self.power()
        while self.peek().kind in ("*", "/"):
            op = self.take()
            rhs = self.power()
            if op.kind == "*":
                v = v.mul(rhs, op.pos)
            else:
                if not rhs.is_function() or len(rhs.function().terms) != 1:
                    raise ParseError("can only divide by a monomial", op.pos)
                f = rhs.function()
                k, c = f.terms[0]
                inv = ExponentialFactor.make(f.ram, {-k: ONE / c})
                v = v.mul(_Op.func(inv), op.pos)
        return v

    def power(self) -> _Op:
        t = self.peek()
        base = self.atom()
        if self.peek().kind != "^":
            return base
        caret = self.take()
        e = self.exponent()
        if t.kind == "D":
            if e.denominator != 1 or e < 0:
                raise ParseError("D exponent must be a non-negative integer", caret.pos)
            return _Op({int(e): ExponentialFactor.constant(1)})
        if not base.is_function():
            raise ParseError("cannot raise an operator expression to a power", caret.pos)
        f = base.function()
        if len(f.terms) == 1:
            k, c = f.terms[0]
            new_e = Fraction(k, f.ram) * e
            if e.denominator != 1 and c != ONE:
                raise ParseError("fractional power of a non-unit coefficient", caret.pos)
            coeff = c ** int(e) if e.denominator == 1 else c
            return _Op.func(ExponentialFactor.monomial(coeff, new_e))
        if e.denominator != 1 or e < 0:
            raise ParseError("sums can only be raised to non-negative integer powers", caret.pos)
        out = ExponentialFactor.constant(1)
        for _ in range(int(e)):
            out = out * f
        return _Op.func(out)

    def exponent(self) -> Fraction:
        t = self.peek()
        if t.kind == "(":
            self.take()
            sign = -1 if self.peek().kind == "-" and self.take() else 1
            num = self._int()
            den = 1
            if self.peek().kind == "/":
                self.take()
                den = self._int()
                if den == 0:
                    raise ParseError("zero denominator in exponent", t.pos)
            self.take(")")
            return Fraction(sign * num, den)
        sign = 1
        if t.kind == "-":
            self.take()
            sign = -1
        return Fraction(sign * self._int())

    def _int(self) -> int:
        t = self.peek()
        if t.kind != "num":
            raise ParseError("exponent must be an integer or (p/q)", t.pos)
        if not t.text.isdigit():
            raise ParseError("non-rational or non-integer exponent", t.pos)
        self.take()
        return int(t.text)

    def atom(self) -> _Op:
        t = self.take()
        if t.kind == "num":
            return _Op.func(ExponentialFactor.constant(Fraction(t.text)))
        if t.kind == "i":
            return _Op.func(ExponentialFactor.constant(GaussRational(0, 1)))
        if t.kind == "x":
            return _Op.func(ExponentialFactor.monomial(ONE, 1))
        if t.kind == "D":
            if not self.allow_d:
                raise ParseError("D is only allowed in operator expressions", t.pos)
            return _Op({1: ExponentialFactor.constant(1)})
        if t.kind == "(":
            v = self.expr()
            self.take(")")
            return v
        raise ParseError(f"unexpected {t.text or 'end of input'!r}", t.pos)


def parse_factor(text: str) -> ExponentialFactor:
    """Parse an exponential factor such as ``"(2+1*i)*x^-3 + x^-1"``."""
    return _Parser(text, allow_d=False).parse().function()


def parse_puiseux(text: str) -> ExponentialFactor:
    return parse_factor(text)


def parse_operator(text: str) -> dict[int, ExponentialFactor]:
    """Parse ``"x^5*D^2 - 1"`` into ``{2: x^5, 0: -1}``."""
    return dict(_Parser(text, allow_d=True).parse().parts)
