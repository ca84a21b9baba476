"""Desk-scale model of sublevel families ``{Re(t + phi) < c}`` and their Hom combinatorics.

Entry ``(i, j)`` of a Hom shape means a morphism from summand ``j`` to
summand ``i``.  Over a sector ``S`` such a morphism exists (for ``c' >> c``)
exactly when the fiberwise half-planes nest, i.e. when
``Re(phi_i - phi_j)`` is bounded above on the germ of ``S`` at 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .factors import ExponentialFactor, evaluate, render
from .geometry import Direction, Sector, dominance, stokes_directions, TWO_PI


class _Infinity:
    """The point at infinity of the projective line."""

    def __repr__(self):
        return "INF"


INF = _Infinity()


def _eval_point(phi: ExponentialFactor, x) -> complex:
    if isinstance(x, tuple):
        rho, theta = x
        return evaluate(phi, rho=rho, theta=theta)
    return evaluate(phi, complex(x))


def _is_zero_point(x) -> bool:
    if isinstance(x, tuple):
        return x[0] == 0
    return x == 0


def sublevel_contains(phi: ExponentialFactor, c: float, x, t) -> bool:
    """Is ``(x, t)`` in ``{x in U, t in C, Re(t + phi(x)) < c}``?

    ``x`` is a complex number or a polar pair ``(rho, theta)``; either
    coordinate may be :data:`INF`.
    """
    if x is INF or t is INF or _is_zero_point(x):
        return False
    return (complex(t) + _eval_point(phi, x)).real < c


@dataclass(frozen=True)
class SublevelFamily:
    factor: ExponentialFactor

    def contains(self, c: float, x, t) -> bool:
        return sublevel_contains(self.factor, c, x, t)

    def threshold(self, x) -> float:
        """Largest ``Re t`` excluded at ``x``: ``(x, t)`` lies in level ``c`` iff ``Re t < c - threshold``."""
        return _eval_point(self.factor, x).real


# -- Hom shapes ------------------------------------------------------------

def _check_points(delta: ExponentialFactor, lo: float, hi: float) -> list[Direction]:
    """Closed-arc sample points where the dominance pattern can change."""
    m = delta.ram
    period = TWO_PI * m
    crossings = []
    for d in stokes_directions(delta):
        n0 = math.floor((lo - d.theta) / period) - 1
        for n in range(n0, n0 + int((hi - lo) / period) + 4):
            e = d.shifted(n * m)
            if lo - 1e-12 <= e.theta <= hi + 1e-12:
                crossings.append(e)
    crossings.sort()

    def snap(theta: float) -> Direction:
        for e in crossings:
            if abs(e.theta - theta) <= 1e-12:
                return e
        return Direction(theta)

    pts = [snap(lo), snap(hi)]
    inner = [e for e in crossings if lo + 1e-12 < e.theta < hi - 1e-12]
    pts.extend(inner)
    marks = [lo] + [e.theta for e in inner] + [hi]
    pts.extend(Direction(0.5 * (a + b)) for a, b in zip(marks, marks[1:]))
    return pts


def hom_exists(source: ExponentialFactor, target: ExponentialFactor, S: Sector) -> bool:
    """Whether ``C_{Re(t+source)<c} -> C_{Re(t+target)<c'}`` exists over ``S`` for ``c' >> c``.

    Decided from the lexicographic dominance of ``target - source`` on the
    closed arc; true whenever the pole parts agree.
    """
    delta = target - source
    if delta.order == 0:
        return True
    return all(dominance(delta, p) <= 0 for p in _check_points(delta, S.lo, S.hi))


def _grid_values(phi: ExponentialFactor, rho: float, thetas: np.ndarray) -> np.ndarray:
    """``phi(rho e^{i theta})`` on a grid of directions, on the branch continued from theta = 0."""
    out = np.zeros(len(thetas), dtype=complex)
    for k, c in phi.terms:
        e = k / phi.ram
        out += complex(c) * float(rho) ** e * np.exp(1j * e * thetas)
    return out


def hom_exists_bruteforce(source: ExponentialFactor, target: ExponentialFactor, S: Sector,
                          radii: Sequence[float] | None = None, n_theta: int = 256,
                          ladder: Sequence[float] = (1.0, 10.0, 100.0, 1000.0)) -> bool:
    """Grid oracle for :func:`hom_exists`.

    At each radius compute the offset ``c' - c`` needed for the half-plane
    inclusions at every grid direction of the closed sector.  The inclusion
    stabilizes when the rung of ``ladder`` that suffices at the outermost
    radius still suffices at the innermost one.
    """
    if radii is None:
        radii = np.geomspace(min(0.1, S.rho_max), 1e-3, 9)
    radii = sorted(radii, reverse=True)
    delta = target - source
    thetas = np.linspace(S.lo, S.hi, n_theta)
    needed = [float(_grid_values(delta, rho, thetas).real.max()) for rho in radii]
    rung = next((r for r in ladder if needed[0] <= r), None)
    if rung is None:
        return False
    return needed[-1] <= rung


@dataclass(frozen=True)
class HomShape:
    n: int
    allowed: frozenset
    tag: str

    def to_json(self) -> dict:
        return {"n": self.n, "allowed": [list(p) for p in sorted(self.allowed, key=_pair_order)],
                "tag": self.tag}

    def matrix(self) -> np.ndarray:
        M = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.allowed:
            M[i - 1, j - 1] = True
        return M


def _pair_order(p):
    i, j = p
    return (i != j, i, j) if i == j else (1, i, j)


def _tag(n: int, allowed: frozenset) -> str:
    off = [(i, j) for i, j in allowed if i != j]
    if not off:
        return "diag"
    if len(allowed) == n * n:
        return "full"
    if all(i < j for i, j in off):
        return "upper-like"
    if all(i > j for i, j in off):
        return "lower-like"
    return "other"


def hom_shape(factors: Sequence[ExponentialFactor], S: Sector) -> HomShape:
    n = len(factors)
    if n < 1:
        raise ValueError("need at least one factor")
    allowed = frozenset((i + 1, j + 1) for i in range(n) for j in range(n)
                        if i == j or hom_exists(factors[j], factors[i], S))
    return HomShape(n, allowed, _tag(n, allowed))


# -- constructible description ----------------------------------------------

@dataclass(frozen=True)
class Stratum:
    kind: str  # "sublevel", "x=0,t!=inf", "x!=0,t=inf", "x!=0,t!=inf", "point"
    factor: ExponentialFactor | None = None

    def describe(self) -> str:
        if self.kind == "sublevel":
            return f"C_{{Re(t+phi)<?}}, phi = {render(self.factor)}"
        return {"x=0,t!=inf": "C_{x=0, t!=inf}", "x!=0,t=inf": "C_{x!=0, t=inf}",
                "x!=0,t!=inf": "C_{x!=0, t!=inf}"}.get(self.kind, self.kind)

    def contains(self, x, t, c: float | None = None) -> bool:
        if self.kind == "sublevel":
            return sublevel_contains(self.factor, c, x, t)
        x0 = x is not INF and _is_zero_point(x)
        t_inf = t is INF
        return {"x=0,t!=inf": x0 and not t_inf, "x!=0,t=inf": (not x0) and t_inf,
                "x!=0,t!=inf": (not x0) and not t_inf}[self.kind]


@dataclass(frozen=True)
class ConstructibleDescription:
    entries: tuple  # (degree, Stratum, rank)
    ramified: bool = False

    def degree(self, k: int) -> list:
        return [(s, r) for d, s, r in self.entries if d == k]

    def to_json(self) -> dict:
        out: dict = {}
        for k in sorted({d for d, _, _ in self.entries}):
            out[f"H{k}"] = [{"stratum": s.kind, "sheaf": s.describe(), "rank": r,
                             **({"phi": render(s.factor)} if s.factor is not None else {})}
                            for s, r in self.degree(k)]
        out["otherwise"] = 0
        if self.ramified:
            out["note"] = "ramified factor: degree-1 strata reported untwisted"
        return out


def phi_exponential(phi: ExponentialFactor) -> ConstructibleDescription:
    """Cohomology sheaves of the tempered solutions of ``E^phi`` twisted by ``e^t``.

    Degree 0 is the sublevel family of ``t + phi``; degree 1 is
    ``C_{x=0, t!=inf} + C_{x!=0, t=inf}``; all other degrees vanish.
    """
    if phi.order == 0:
        raise ValueError("phi must have an effective pole at 0")
    return ConstructibleDescription(
        ((0, Stratum("sublevel", phi), 1),
         (1, Stratum("x=0,t!=inf"), 1),
         (1, Stratum("x!=0,t=inf"), 1)),
        ramified=phi.ram > 1)
