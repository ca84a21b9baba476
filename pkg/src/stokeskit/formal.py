"""Newton polygons, slopes and formal decompositions of rank <= 2 connections.

Operators are ``P = sum_i a_i(x) D^i`` with Puiseux-polynomial coefficients
(:class:`~stokeskit.factors.ExponentialFactor` doubles as the coefficient
type).  The Newton polygon uses the points ``(i, v(a_i) - i)``; positive
slopes are pole orders of exponential factors.
"""
from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, Union

from .factors import (ExponentialFactor, GaussRational, ONE, ZERO, factor_from_json,
                      factor_to_json, render, rotate)
from .parsing import parse_factor, parse_operator

Number = Union[GaussRational, complex]


class FormalError(ArithmeticError):
    """Input outside the class handled by the formal decomposition."""


# -- operators ----------------------------------------------------------------

@dataclass(frozen=True)
class DifferentialOperator:
    coeffs: tuple  # tuple of ExponentialFactor, index i <-> D^i

    @classmethod
    def make(cls, coeffs) -> "DifferentialOperator":
        if isinstance(coeffs, dict):
            n = max((k for k, v in coeffs.items() if v), default=-1)
            seq = [coeffs.get(i, ExponentialFactor.zero()) for i in range(n + 1)]
        else:
            seq = list(coeffs)
            while seq and not seq[-1]:
                seq.pop()
        if not seq:
            raise FormalError("zero operator")
        return cls(tuple(seq))

    @classmethod
    def parse(cls, text: str) -> "DifferentialOperator":
        return cls.make(parse_operator(text))

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    def __getitem__(self, i: int) -> ExponentialFactor:
        return self.coeffs[i] if 0 <= i < len(self.coeffs) else ExponentialFactor.zero()

    def twist(self, dphi: ExponentialFactor) -> "DifferentialOperator":
        """Conjugate by ``e^phi``: returns ``e^-phi P e^phi`` given ``phi'``."""
        power = {0: ExponentialFactor.constant(1)}
        out: dict[int, ExponentialFactor] = {}
        for i, a in enumerate(self.coeffs):
            if a:
                for j, b in power.items():
                    out[j] = out.get(j, ExponentialFactor.zero()) + a * b
            nxt: dict[int, ExponentialFactor] = {}
            for j, b in power.items():
                for k, v in ((j, b.derivative() + dphi * b), (j + 1, b)):
                    nxt[k] = nxt.get(k, ExponentialFactor.zero()) + v
            power = nxt
        return DifferentialOperator.make(out)

    def pullback(self, m: int) -> "DifferentialOperator":
        """Operator in ``y`` satisfied by ``f(y^m)`` when ``P f = 0``."""
        # d/dx = (1/(m y^(m-1))) d/dy; build (d/dx)^i in y by iteration.
        from .factors import ramify_pullback
        step = ExponentialFactor.monomial(GaussRational(Fraction(1, m)), 1 - m)
        power = {0: ExponentialFactor.constant(1)}
        out: dict[int, ExponentialFactor] = {}
        for i, a in enumerate(self.coeffs):
            a_y = ramify_pullback(a, m)
            for j, b in power.items():
                out[j] = out.get(j, ExponentialFactor.zero()) + a_y * b
            nxt: dict[int, ExponentialFactor] = {}
            for j, b in power.items():
                for k, v in ((j, step * b.derivative()), (j + 1, step * b)):
                    nxt[k] = nxt.get(k, ExponentialFactor.zero()) + v
            power = nxt
        return DifferentialOperator.make(out)

    def scale_variable(self, lam: GaussRational) -> "DifferentialOperator":
        """Operator for ``f(lam*x)``; only valid for integer exponents."""
        out = {}
        for i, a in enumerate(self.coeffs):
            if a.ram != 1:
                raise FormalError("variable scaling needs integer exponents")
            out[i] = ExponentialFactor.make(1, {k: c * lam ** (k) * lam ** i for k, c in a.terms})
        return DifferentialOperator.make(out)

    def to_json(self) -> dict:
        return {str(i): render(a) for i, a in enumerate(self.coeffs) if a}

    def __str__(self) -> str:
        parts = []
        for i in range(self.order, -1, -1):
            a = self.coeffs[i]
            if a:
                d = "" if i == 0 else ("D" if i == 1 else f"D^{i}")
                parts.append(f"({render(a)})" + (f"*{d}" if d else ""))
        return " + ".join(parts)


@dataclass(frozen=True)
class NewtonPolygon:
    vertices: tuple  # (i, height) as Fractions
    slopes: tuple  # (slope, length)
    edges: tuple  # (slope, i_start, i_end, height_start)


def _height(P: DifferentialOperator, i: int) -> Fraction:
    return P[i].valuation() - i


def newton_polygon(P: DifferentialOperator) -> NewtonPolygon:
    """Lower Newton polygon with a horizontal edge for the regular part."""
    pts = [(i, _height(P, i)) for i in range(P.order + 1) if P[i]]
    if not pts:
        raise FormalError("zero operator")
    hmin = min(h for _, h in pts)
    i0 = max(i for i, h in pts if h == hmin)
    vertices = []
    slopes = []
    edges = []
    if i0 > 0:
        vertices.append((Fraction(0), hmin))
        slopes.append((Fraction(0), Fraction(i0)))
        edges.append((Fraction(0), 0, i0, hmin))
    hull: list[tuple[int, Fraction]] = []
    for p in (q for q in pts if q[0] >= i0):
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            # pop hull[-1] if it lies on or above the chord hull[-2] -> p
            if (y2 - y1) * (p[0] - x1) >= (p[1] - y1) * (x2 - x1):
                hull.pop()
            else:
                break
        hull.append(p)
    for i, h in hull:
        vertices.append((Fraction(i), h))
    for (xa, ya), (xb, yb) in zip(hull, hull[1:]):
        s = (yb - ya) / (xb - xa)
        slopes.append((s, Fraction(xb - xa)))
        edges.append((s, xa, xb, ya))
    return NewtonPolygon(tuple(vertices), tuple(slopes), tuple(edges))


def ramification_order(slopes) -> int:
    """Least ``m`` with ``m * slope`` integral for every slope."""
    m = 1
    for s in slopes:
        s = s[0] if isinstance(s, tuple) else s
        m = math.lcm(m, Fraction(s).denominator)
    return m


# -- small exact root finding -----------------------------------------------

def _poly_roots(coeffs: Sequence[GaussRational]) -> list:
    """Roots (with multiplicity) of ``sum c_k z^k``; exact for degree <= 2 when possible."""
    c = list(coeffs)
    while c and not c[-1]:
        c.pop()
    deg = len(c) - 1
    if deg <= 0:
        return []
    if deg == 1:
        return [-c[0] / c[1]]
    if deg == 2:
        a, b, cc = c[2], c[1], c[0]
        disc = b * b - 4 * a * cc
        r = disc.sqrt()
        if r is not None:
            return [(-b + r) / (2 * a), (-b - r) / (2 * a)]
        rc = cmath.sqrt(complex(disc))
        return [(-complex(b) + rc) / (2 * complex(a)), (-complex(b) - rc) / (2 * complex(a))]
    import numpy as np
    return list(np.roots([complex(v) for v in reversed(c)]))


def _group(roots: list) -> list[tuple[object, int]]:
    out: list[list] = []
    for r in roots:
        for entry in out:
            if _same(entry[0], r):
                entry[1] += 1
                break
        else:
            out.append([r, 1])
    return [(r, k) for r, k in out]


def _same(a, b) -> bool:
    if isinstance(a, GaussRational) and isinstance(b, GaussRational):
        return a == b
    return abs(complex(a) - complex(b)) < 1e-12 * max(1.0, abs(complex(a)))


def _falling(lam, i: int):
    out = ONE if isinstance(lam, GaussRational) else 1 + 0j
    for j in range(i):
        out = out * (lam - j)
    return out


def indicial_polynomial(P: DifferentialOperator) -> list[GaussRational]:
    """Coefficients (in the monomial basis) of the indicial polynomial of the slope-0 edge."""
    poly = newton_polygon(P)
    if not poly.edges or poly.edges[0][0] != 0:
        raise FormalError("operator has no regular part")
    _, ia, ib, h = poly.edges[0]
    total = [ZERO] * (ib + 1)
    for i in range(ib + 1):
        if P[i] and _height(P, i) == h:
            # expand falling factorial lam(lam-1)...(lam-i+1) into monomials
            ff = [ONE]
            for j in range(i):
                nxt = [ZERO] * (len(ff) + 1)
                for k, v in enumerate(ff):
                    nxt[k + 1] = nxt[k + 1] + v
                    nxt[k] = nxt[k] - v * j
                ff = nxt
            lc = P[i].leading()
            for k, v in enumerate(ff):
                total[k] = total[k] + lc * v
    return total


def normalize_exponent(lam) -> complex:
    """Representative with real part in [0, 1)."""
    if isinstance(lam, GaussRational):
        n = math.floor(lam.re)
        return complex(lam - n)
    lam = complex(lam)
    return lam - math.floor(lam.real + 1e-13)


# -- formal types ------------------------------------------------------------

@dataclass(frozen=True)
class FormalItem:
    factor: ExponentialFactor
    rank: int
    exponents: tuple  # complex, normalized to Re in [0, 1)

    def key(self):
        return (render(self.factor.pole_part()), self.rank,
                tuple(sorted((round(z.real, 12), round(z.imag, 12)) for z in self.exponents)))


@dataclass(frozen=True)
class FormalType:
    items: tuple
    ramification: int = 1

    @property
    def rank(self) -> int:
        return sum(it.rank for it in self.items)

    def factors(self) -> list[ExponentialFactor]:
        return [it.factor for it in self.items]

    def blocks(self) -> list[range]:
        out, start = [], 0
        for it in self.items:
            out.append(range(start, start + it.rank))
            start += it.rank
        return out

    def same_as(self, other: "FormalType") -> bool:
        return sorted(i.key() for i in self.items) == sorted(i.key() for i in other.items)

    def deck_permutation(self) -> list[int]:
        """Item index reached by each item's factor after one turn around 0."""
        perm = []
        for it in self.items:
            rot = dict(rotate(it.factor.pole_part()))
            for j, other in enumerate(self.items):
                cand = {Fraction(k, other.factor.ram): complex(c)
                        for k, c in other.factor.pole_part().terms}
                if cand.keys() == rot.keys() and all(abs(cand[e] - rot[e]) < 1e-12 for e in rot):
                    if other.rank != it.rank:
                        raise FormalError("Galois-conjugate factors with different ranks")
                    perm.append(j)
                    break
            else:
                raise FormalError(f"factor {render(it.factor)} has no Galois conjugate in the list")
        return perm

    def formal_monodromy(self):
        """Block matrix of exp(2 pi i lambda), with the deck permutation for ramified factors."""
        import numpy as np
        n = self.rank
        M = np.zeros((n, n), dtype=complex)
        blocks = self.blocks()
        perm = self.deck_permutation()
        for j, it in enumerate(self.items):
            tgt = blocks[perm[j]]
            for a, lam in enumerate(it.exponents):
                M[tgt[a], blocks[j][a]] = cmath.exp(2j * math.pi * lam)
        return M

    def to_json(self) -> dict:
        return {"ramification": self.ramification,
                "items": [{"factor": render(it.factor), "factor_json": factor_to_json(it.factor),
                           "rank": it.rank,
                           "exponents": [[z.real, z.imag] for z in it.exponents]}
                          for it in self.items]}

    @classmethod
    def from_json(cls, obj) -> "FormalType":
        items = []
        m = 1
        for it in obj["items"]:
            f = factor_from_json(it.get("factor_json", it["factor"]))
            rank = int(it.get("rank", 1))
            exps = it.get("exponents", [[0.0, 0.0]] * rank)
            items.append(make_item(f, rank, [complex(e[0], e[1]) if isinstance(e, list)
                                             else complex(e) for e in exps]))
            m = math.lcm(m, f.ram)
        return cls(tuple(items), int(obj.get("ramification", m)))


def make_item(factor: ExponentialFactor, rank: int, exponents) -> FormalItem:
    exps = tuple(normalize_exponent(e) for e in exponents)
    if len(exps) != rank:
        raise ValueError("one exponent per rank is required")
    return FormalItem(factor, rank, exps)


# -- connection specs ------------------------------------------------------------

@dataclass(frozen=True)
class Operator:
    op: DifferentialOperator

    @property
    def rank(self) -> int:
        return self.op.order


@dataclass(frozen=True)
class System:
    matrix: tuple  # tuple of tuples of ExponentialFactor

    def __post_init__(self):
        r = len(self.matrix)
        if r == 0 or r > 2 or any(len(row) != r for row in self.matrix):
            raise FormalError("systems must be square of size 1 or 2")

    @property
    def rank(self) -> int:
        return len(self.matrix)

    @classmethod
    def from_strings(cls, rows) -> "System":
        return cls(tuple(tuple(parse_factor(str(e)) for e in row) for row in rows))

    def is_diagonal(self) -> bool:
        return all(not self.matrix[i][j] for i in range(self.rank) for j in range(self.rank) if i != j)


@dataclass(frozen=True)
class FormalSum:
    items: tuple  # FormalItem

    @property
    def rank(self) -> int:
        return sum(it.rank for it in self.items)

    def as_system_entries(self) -> list[ExponentialFactor]:
        """Diagonal entries ``phi' + lambda/x`` realizing this formal sum (exact exponents only)."""
        out = []
        for it in self.items:
            for lam in it.exponents:
                re, im = Fraction(lam.real).limit_denominator(10**6), Fraction(lam.imag).limit_denominator(10**6)
                out.append(it.factor.derivative() + ExponentialFactor.monomial(GaussRational(re, im), -1))
        return out


ConnectionSpec = Union[Operator, System, FormalSum]


def system_to_operator(A) -> tuple[DifferentialOperator, int]:
    """Cyclic-vector reduction of a 2x2 system ``u' = A u``.

    Returns the operator satisfied by component ``c`` and ``c`` itself.
    """
    (a11, a12), (a21, a22) = A
    c = 0
    if not a12:
        if not a21:
            raise FormalError("diagonal system has no cyclic first/second component")
        (a11, a12), (a21, a22) = (a22, a21), (a12, a11)
        c = 1
    d = DifferentialOperator.make({
        2: a12,
        1: -(a12 * a11) - a12.derivative() - a22 * a12,
        0: -(a12 * a11.derivative()) + a12.derivative() * a11 - a21 * a12 * a12 + a22 * a12 * a11,
    })
    return d, c


# -- formal decomposition --------------------------------------------------------

@dataclass
class FormalSolution:
    """One item of the decomposition together with the data needed to seed it."""

    factor: ExponentialFactor
    multiplicity: int
    roots: list  # raw indicial roots (GaussRational or complex)
    twisted: DifferentialOperator


def _char_roots(P: DifferentialOperator, s: Fraction, ia: int, ib: int, h: Fraction):
    coeffs = [ZERO] * (ib - ia + 1)
    for i in range(ia, ib + 1):
        if P[i] and _height(P, i) == h + s * (i - ia):
            coeffs[i - ia] = P[i].leading()
    return _group(_poly_roots(coeffs))


def formal_solutions(P: DifferentialOperator) -> list[FormalSolution]:
    """Decompose ``P`` by iterated leading-term twisting."""
    poly = newton_polygon(P)
    top = max((s for s, _ in poly.slopes), default=Fraction(0))
    budget = int(top * ramification_order(poly.slopes)) + P.order
    counter = [0]
    out: list[FormalSolution] = []

    def follow(Q: DifferentialOperator, phi: ExponentialFactor, s_max, mu: int):
        qp = newton_polygon(Q)
        window = [e for e in qp.edges if s_max is None or e[0] < s_max]
        if sum(e[2] - e[1] for e in window) != mu:
            raise FormalError("twisting did not lower the slope; input outside the supported class")
        for s, ia, ib, h in window:
            if s == 0:
                lam_poly = indicial_polynomial(Q)
                out.append(FormalSolution(phi, ib - ia, _poly_roots(lam_poly), Q))
                continue
            for kappa, mult in _char_roots(Q, s, ia, ib, h):
                if not isinstance(kappa, GaussRational):
                    raise FormalError(f"irrational characteristic root {kappa} on slope {s}")
                counter[0] += 1
                if counter[0] > budget:
                    raise FormalError("twist loop did not converge within the iteration bound")
                # u = y'/y ~ kappa x^(-s-1)  ->  phi gains -kappa/s x^(-s)
                dphi = ExponentialFactor.monomial(kappa, -s - 1)
                step = ExponentialFactor.monomial(-kappa / GaussRational(s), -s)
                follow(Q.twist(dphi), phi + step, s, mult)

    follow(P, ExponentialFactor.zero(), None, P.order)
    return out


def _items_from_solutions(sols: list[FormalSolution]) -> tuple[FormalItem, ...]:
    return tuple(make_item(s.factor, s.multiplicity, s.roots) for s in sols)


def formal_type(C) -> FormalType:
    """Formal decomposition (exponential factors, ranks, exponents) of a connection."""
    if isinstance(C, DifferentialOperator):
        C = Operator(C)
    if isinstance(C, FormalSum):
        m = 1
        for it in C.items:
            m = math.lcm(m, it.factor.ram)
        return FormalType(tuple(C.items), m)
    if C.rank > 2:
        raise FormalError("automatic decomposition is limited to rank <= 2")
    if isinstance(C, Operator):
        items = _items_from_solutions(formal_solutions(C.op))
    else:
        items = []
        for _, sols in connection_solutions(C):
            items.extend(_items_from_solutions(sols))
        items = tuple(items)
    m = 1
    for it in items:
        m = math.lcm(m, it.factor.ram)
    return FormalType(_merge_items(items), m)


def _merge_items(items) -> tuple:
    return tuple(items)


def connection_solutions(C) -> list[tuple[int | None, list[FormalSolution]]]:
    """Formal solutions grouped by the scalar equation they come from.

    Each entry is ``(component, solutions)``: for operators the component is
    None; for diagonal systems each diagonal entry gives a rank-1 equation for
    that component; otherwise the cyclic component of the reduction.
    """
    if isinstance(C, DifferentialOperator):
        C = Operator(C)
    if isinstance(C, Operator):
        return [(None, formal_solutions(C.op))]
    if isinstance(C, FormalSum):
        C = formal_sum_system(C)
    if C.rank == 1 or C.is_diagonal():
        out = []
        for k in range(C.rank):
            a = C.matrix[k][k]
            op = DifferentialOperator.make({1: ExponentialFactor.constant(1), 0: -a})
            out.append((k, formal_solutions(op)))
        return out
    op, c = system_to_operator(C.matrix)
    return [(c, formal_solutions(op))]


def formal_sum_system(F: FormalSum) -> System:
    entries = F.as_system_entries()
    n = len(entries)
    return System(tuple(tuple(entries[i] if i == j else ExponentialFactor.zero() for j in range(n))
                        for i in range(n)))


def dual(C):
    """Dual connection: ``u' = -A^T u`` (for rank 1, the negated equation)."""
    if isinstance(C, System):
        r = C.rank
        return System(tuple(tuple(-C.matrix[j][i] for j in range(r)) for i in range(r)))
    if isinstance(C, Operator) and C.op.order == 1:
        a1, a0 = C.op[1], C.op[0]
        # y' = -(a0/a1) y  ->  dual y' = (a0/a1) y, i.e. a1 D - a0 - a1'
        return Operator(DifferentialOperator.make({1: a1, 0: -a0 - a1.derivative()}))
    raise FormalError("dual is implemented for systems and rank-1 operators")


def connection_from_json(obj) -> ConnectionSpec:
    if "operator" in obj:
        op = obj["operator"]
        if isinstance(op, str):
            return Operator(DifferentialOperator.parse(op))
        return Operator(DifferentialOperator.make({int(k): parse_factor(str(v)) for k, v in op.items()}))
    if "system" in obj:
        return System.from_strings(obj["system"])
    if "formal" in obj:
        return FormalSum(FormalType.from_json(obj["formal"]).items)
    raise ValueError("connection JSON needs 'operator', 'system' or 'formal'")
