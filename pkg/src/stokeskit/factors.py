"""Exponential factors: finite Puiseux polynomials with Gaussian-rational coefficients.

A factor ``phi`` with ramification ``m`` and terms ``{k: c_k}`` stands for
``sum_k c_k * x**(k/m)``.  All arithmetic is exact; floats only appear in
:func:`evaluate`.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Union

RationalLike = Union[int, Fraction, str]


def _frac(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, float):
        raise TypeError("float coefficients are not exact; pass a Fraction or string")
    return Fraction(v)


def _exact_sqrt(q: Fraction) -> Fraction | None:
    if q < 0:
        return None
    n, d = math.isqrt(q.numerator), math.isqrt(q.denominator)
    if n * n == q.numerator and d * d == q.denominator:
        return Fraction(n, d)
    return None


@dataclass(frozen=True)
class GaussRational:
    """Exact complex number ``re + i*im`` with rational parts."""

    re: Fraction = Fraction(0)
    im: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "re", _frac(self.re))
        object.__setattr__(self, "im", _frac(self.im))

    @classmethod
    def coerce(cls, v) -> "GaussRational":
        if isinstance(v, GaussRational):
            return v
        if isinstance(v, complex):
            raise TypeError("complex floats are not exact")
        return cls(_frac(v), Fraction(0))

    def __bool__(self) -> bool:
        return bool(self.re) or bool(self.im)

    def __add__(self, o):
        o = GaussRational.coerce(o)
        return GaussRational(self.re + o.re, self.im + o.im)

    __radd__ = __add__

    def __neg__(self):
        return GaussRational(-self.re, -self.im)

    def __sub__(self, o):
        return self + (-GaussRational.coerce(o))

    def __rsub__(self, o):
        return GaussRational.coerce(o) - self

    def __mul__(self, o):
        o = GaussRational.coerce(o)
        return GaussRational(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)

    __rmul__ = __mul__

    def conjugate(self) -> "GaussRational":
        return GaussRational(self.re, -self.im)

    def norm(self) -> Fraction:
        return self.re * self.re + self.im * self.im

    def __truediv__(self, o):
        o = GaussRational.coerce(o)
        n = o.norm()
        if n == 0:
            raise ZeroDivisionError("division by zero Gaussian rational")
        p = self * o.conjugate()
        return GaussRational(p.re / n, p.im / n)

    def __rtruediv__(self, o):
        return GaussRational.coerce(o) / self

    def __pow__(self, n: int):
        if n < 0:
            return GaussRational(1) / (self ** -n)
        out = GaussRational(1)
        base = self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    def __complex__(self) -> complex:
        return complex(float(self.re), float(self.im))

    def sqrt(self) -> "GaussRational | None":
        """Exact square root in Q(i) (principal branch), or None if irrational."""
        if not self:
            return GaussRational(0)
        r = _exact_sqrt(self.norm())
        if r is None:
            return None
        a = _exact_sqrt((r + self.re) / 2)
        b = _exact_sqrt((r - self.re) / 2)
        if a is None or b is None:
            return None
        if self.im < 0:
            b = -b
        root = GaussRational(a, b)
        return root if root * root == self else None

    def __repr__(self) -> str:
        return f"GaussRational({self.re}, {self.im})"

    def __str__(self) -> str:
        if self.im == 0:
            return str(self.re)
        if self.re == 0:
            return f"{self.im}*i"
        sign = "+" if self.im > 0 else "-"
        return f"{self.re}{sign}{abs(self.im)}*i"


ZERO = GaussRational(0)
ONE = GaussRational(1)


def exact_arg_over_pi(c: GaussRational) -> Fraction | None:
    """``arg(c)/pi`` in [0, 2) when it is rational, else None.

    For Gaussian rationals the argument is a rational multiple of pi exactly
    when c points along one of the eight multiples of pi/4.
    """
    if not c:
        raise ValueError("argument of zero")
    a, b = c.re, c.im
    if b == 0:
        return Fraction(0) if a > 0 else Fraction(1)
    if a == 0:
        return Fraction(1, 2) if b > 0 else Fraction(3, 2)
    if abs(a) == abs(b):
        table = {(1, 1): Fraction(1, 4), (-1, 1): Fraction(3, 4),
                 (-1, -1): Fraction(5, 4), (1, -1): Fraction(7, 4)}
        return table[(1 if a > 0 else -1, 1 if b > 0 else -1)]
    return None


@dataclass(frozen=True)
class ExponentialFactor:
    """``sum_k c_k x^(k/ram)`` in canonical form.

    Construct through :meth:`make`, which drops zero coefficients and
    minimizes ``ram``.  Also used as the coefficient type of differential
    operators (a Laurent polynomial is a factor with ``ram == 1``).
    """

    ram: int
    terms: tuple  # sorted tuple of (k, GaussRational)

    @classmethod
    def make(cls, ram: int, terms: Mapping[int, object] | Iterable) -> "ExponentialFactor":
        if ram < 1:
            raise ValueError("ramification must be a positive integer")
        items = terms.items() if isinstance(terms, Mapping) else terms
        acc: dict[int, GaussRational] = {}
        for k, c in items:
            c = GaussRational.coerce(c)
            acc[int(k)] = acc.get(int(k), ZERO) + c
        acc = {k: c for k, c in acc.items() if c}
        if not acc:
            return cls(1, ())
        g = ram
        for k in acc:
            g = math.gcd(g, k)
        return cls(ram // g, tuple(sorted((k // g, c) for k, c in acc.items())))

    @classmethod
    def zero(cls) -> "ExponentialFactor":
        return cls(1, ())

    @classmethod
    def constant(cls, c) -> "ExponentialFactor":
        return cls.make(1, {0: c})

    @classmethod
    def monomial(cls, coeff, exponent: Fraction | int) -> "ExponentialFactor":
        e = Fraction(exponent)
        return cls.make(e.denominator, {e.numerator: coeff})

    @classmethod
    def from_exponents(cls, mapping: Mapping[Fraction, GaussRational]) -> "ExponentialFactor":
        """Build from ``{rational exponent: coefficient}``."""
        m = 1
        for e in mapping:
            m = math.lcm(m, Fraction(e).denominator)
        return cls.make(m, {int(Fraction(e) * m): c for e, c in mapping.items()})

    # -- views -------------------------------------------------------------
    @property
    def coeffs(self) -> dict[int, GaussRational]:
        return dict(self.terms)

    def exponent_map(self) -> dict[Fraction, GaussRational]:
        return {Fraction(k, self.ram): c for k, c in self.terms}

    def is_zero(self) -> bool:
        return not self.terms

    def __bool__(self) -> bool:
        return bool(self.terms)

    def valuation(self) -> Fraction:
        if not self.terms:
            raise ValueError("valuation of the zero factor")
        return Fraction(self.terms[0][0], self.ram)

    def leading(self) -> GaussRational:
        return self.terms[0][1] if self.terms else ZERO

    @property
    def order(self) -> Fraction:
        """Pole order ``max(0, -min k / m)``."""
        if not self.terms:
            return Fraction(0)
        return max(Fraction(0), -Fraction(self.terms[0][0], self.ram))

    def pole_part(self) -> "ExponentialFactor":
        return ExponentialFactor.make(self.ram, {k: c for k, c in self.terms if k < 0})

    # -- arithmetic --------------------------------------------------------
    def _lift(self, m: int) -> dict[int, GaussRational]:
        s = m // self.ram
        return {k * s: c for k, c in self.terms}

    def __add__(self, other: "ExponentialFactor") -> "ExponentialFactor":
        return combine(self, other, 1)

    def __sub__(self, other: "ExponentialFactor") -> "ExponentialFactor":
        return combine(self, other, -1)

    def __neg__(self) -> "ExponentialFactor":
        return ExponentialFactor(self.ram, tuple((k, -c) for k, c in self.terms))

    def scale(self, c) -> "ExponentialFactor":
        c = GaussRational.coerce(c)
        return ExponentialFactor.make(self.ram, {k: c * v for k, v in self.terms})

    def __mul__(self, other) -> "ExponentialFactor":
        if not isinstance(other, ExponentialFactor):
            return self.scale(other)
        m = math.lcm(self.ram, other.ram)
        a, b = self._lift(m), other._lift(m)
        out: dict[int, GaussRational] = {}
        for ka, ca in a.items():
            for kb, cb in b.items():
                out[ka + kb] = out.get(ka + kb, ZERO) + ca * cb
        return ExponentialFactor.make(m, out)

    __rmul__ = __mul__

    def shift(self, e: Fraction | int) -> "ExponentialFactor":
        """Multiply by ``x**e``."""
        return self * ExponentialFactor.monomial(ONE, e)

    def derivative(self) -> "ExponentialFactor":
        out = {}
        for k, c in self.terms:
            if k:
                # d/dx x^(k/m) = (k/m) x^(k/m - 1)
                out[k - self.ram] = c * Fraction(k, self.ram)
        return ExponentialFactor.make(self.ram, out)

    def antiderivative(self) -> "ExponentialFactor":
        """Termwise integral; the ``x**-1`` term must be absent."""
        out = {}
        for k, c in self.terms:
            if k == -self.ram:
                raise ValueError("x^-1 term has no Puiseux antiderivative")
            out[k + self.ram] = c / Fraction(k + self.ram, self.ram)
        return ExponentialFactor.make(self.ram, out)

    def __str__(self) -> str:
        return render(self)

    def __repr__(self) -> str:
        return f"ExponentialFactor({render(self)!r})"


def combine(a: ExponentialFactor, b: ExponentialFactor, sign: int = 1) -> ExponentialFactor:
    """Return ``a + sign*b`` over the lcm of the two ramifications."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    m = math.lcm(a.ram, b.ram)
    out = a._lift(m)
    for k, c in b._lift(m).items():
        out[k] = out.get(k, ZERO) + (c if sign == 1 else -c)
    return ExponentialFactor.make(m, out)


def principal_part(phi: ExponentialFactor) -> tuple[Fraction, GaussRational, ExponentialFactor]:
    """Pole order, leading pole coefficient (0 if holomorphic) and the pole terms."""
    order = phi.order
    leading = phi.leading() if order > 0 else ZERO
    return order, leading, phi.pole_part()


def ramify_pullback(phi: ExponentialFactor, m: int) -> ExponentialFactor:
    """``phi(y**m)`` as a factor in ``y``."""
    if m < 1:
        raise ValueError("pullback order must be >= 1")
    return ExponentialFactor.make(phi.ram, {k * m: c for k, c in phi.terms})


def rotate(phi: ExponentialFactor, turns: int = 1) -> list[tuple[Fraction, complex]]:
    """Numeric terms of ``phi`` continued ``turns`` times around 0 (theta -> theta + 2 pi turns)."""
    return [(Fraction(k, phi.ram), complex(c) * cmath.exp(2j * math.pi * turns * k / phi.ram))
            for k, c in phi.terms]


def evaluate(phi: ExponentialFactor, x: complex | None = None, *,
             rho: float | None = None, theta: float | None = None) -> complex:
    """Numeric value of ``phi``.

    Pass either ``x`` (principal branch, ``theta = arg x``) or the polar pair
    ``rho``, ``theta``; ``theta`` is not reduced mod 2*pi so ramified factors
    can be followed across sheets.
    """
    if x is not None:
        rho, theta = abs(x), cmath.phase(x)
    if rho is None or theta is None:
        raise TypeError("evaluate needs x or (rho, theta)")
    if rho == 0:
        if phi.order > 0:
            raise ZeroDivisionError("evaluation of a factor with a pole at x = 0")
        return complex(dict(phi.terms).get(0, ZERO))
    total = 0j
    m = phi.ram
    log_rho = math.log(rho)
    for k, c in phi.terms:
        e = k / m
        total += complex(c) * cmath.exp(e * log_rho + 1j * e * theta)
    return total


# -- rendering and JSON ------------------------------------------------------

def _render_rational(q: Fraction) -> str:
    return str(q.numerator) if q.denominator == 1 else f"{q.numerator}/{q.denominator}"


def _render_exponent(e: Fraction) -> str:
    if e.denominator == 1:
        return str(e.numerator)
    return f"({e.numerator}/{e.denominator})"


def render(phi: ExponentialFactor, var: str = "x") -> str:
    """Canonical text form, parseable by :func:`parse_factor`."""
    if not phi.terms:
        return "0"
    parts: list[tuple[str, str]] = []
    for k, c in phi.terms:
        e = Fraction(k, phi.ram)
        if c.im == 0:
            neg = c.re < 0
            mag = abs(c.re)
            coeff = "" if (mag == 1 and e != 0) else _render_rational(mag)
        else:
            neg = False
            sign = "+" if c.im > 0 else "-"
            coeff = f"({_render_rational(c.re)}{sign}{_render_rational(abs(c.im))}*i)"
        if e == 0:
            mono = ""
        elif e == 1:
            mono = var
        else:
            mono = f"{var}^{_render_exponent(e)}"
        body = "*".join(p for p in (coeff, mono) if p)
        parts.append(("-" if neg else "+", body))
    out = ("-" if parts[0][0] == "-" else "") + parts[0][1]
    for s, body in parts[1:]:
        out += f" {s} {body}"
    return out


def rational_to_json(q: Fraction) -> str:
    return _render_rational(q)


def factor_to_json(phi: ExponentialFactor) -> dict:
    return {"ram": phi.ram,
            "terms": [[k, rational_to_json(c.re), rational_to_json(c.im)] for k, c in phi.terms]}


def factor_from_json(obj) -> ExponentialFactor:
    if isinstance(obj, str):
        from .parsing import parse_factor
        return parse_factor(obj)
    return ExponentialFactor.make(int(obj["ram"]),
                                  [(int(k), GaussRational(Fraction(re), Fraction(im)))
                                   for k, re, im in obj["terms"]])
