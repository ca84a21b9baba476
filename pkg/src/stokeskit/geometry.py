"""Stokes directions, curves, lines and sector covers for exponential factors."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import mpmath

from .factors import ExponentialFactor, GaussRational, evaluate, exact_arg_over_pi

TWO_PI = 2 * math.pi


class GeometryError(ArithmeticError):
    pass


class NoStokesDirections(GeometryError):
    """Raised for a difference with no pole (no Stokes phenomenon)."""


class CurveTrackingError(GeometryError):
    def __init__(self, message: str, rho: float):
        super().__init__(f"{message} at rho={rho:.6g}")
        self.rho = rho


@dataclass(frozen=True, order=True)
class Direction:
    theta: float
    exact: Fraction | None = field(default=None, compare=False)

    @classmethod
    def from_pi(cls, q: Fraction) -> "Direction":
        q = Fraction(q)
        return cls(float(q) * math.pi, q)

    def shifted(self, turns: int) -> "Direction":
        if self.exact is not None:
            return Direction.from_pi(self.exact + 2 * turns)
        return Direction(self.theta + TWO_PI * turns)

    def reduced(self, period_turns: int = 1) -> "Direction":
        if self.exact is not None:
            return Direction.from_pi(self.exact % (2 * period_turns))
        return Direction(self.theta % (TWO_PI * period_turns))

    def label(self) -> str | None:
        return pi_string(self.exact) if self.exact is not None else None

    def same(self, other: "Direction", tol: float = 1e-12) -> bool:
        if self.exact is not None and other.exact is not None:
            return self.exact == other.exact
        return abs(self.theta - other.theta) < tol


def pi_string(q: Fraction) -> str:
    if q == 0:
        return "0"
    num = "" if abs(q.numerator) == 1 else str(abs(q.numerator))
    sign = "-" if q < 0 else ""
    body = f"{num}pi"
    return sign + (body if q.denominator == 1 else f"{body}/{q.denominator}")


def _as_direction(theta) -> Direction:
    return theta if isinstance(theta, Direction) else Direction(float(theta))


def stokes_directions(delta: ExponentialFactor) -> list[Direction]:
    """Directions on the ``delta.ram``-fold cover where the leading term of ``delta`` is imaginary.

    There are ``2 * ord * ram`` of them in ``[0, 2 pi ram)``, spaced ``pi / ord``.
    """
    order = delta.order
    if order == 0:
        raise NoStokesDirections("difference has no pole; there are no Stokes directions")
    m = delta.ram
    c = delta.leading()
    count = int(2 * order * m)
    argq = exact_arg_over_pi(c)
    out = []
    if argq is not None:
        for k in range(count):
            q = ((argq - Fraction(1, 2) - k) / order) % (2 * m)
            out.append(Direction.from_pi(q))
    else:
        arg = math.atan2(float(c.im), float(c.re))
        for k in range(count):
            out.append(Direction(((arg - math.pi / 2 - k * math.pi) / float(order)) % (TWO_PI * m)))
    return sorted(out)


def base_directions(delta: ExponentialFactor) -> list[Direction]:
    """Stokes directions of ``delta`` reduced to the base circle ``[0, 2 pi)``."""
    out: list[Direction] = []
    for d in stokes_directions(delta):
        r = d.reduced()
        if not any(r.same(o) for o in out):
            out.append(r)
    return sorted(out)


def _term_sign(c: GaussRational, k_over_m: Fraction, theta: Direction) -> int:
    # sign of Re(c * e^{i k theta / m})
    argq = exact_arg_over_pi(c)
    if argq is not None and theta.exact is not None:
        t = (argq + k_over_m * theta.exact) % 2
        if t in (Fraction(1, 2), Fraction(3, 2)):
            return 0
        return 1 if (t < Fraction(1, 2) or t > Fraction(3, 2)) else -1
    if theta.exact is not None:
        with mpmath.workdps(40):
            ang = mpmath.pi * mpmath.mpf(k_over_m.numerator * theta.exact.numerator) / (
                k_over_m.denominator * theta.exact.denominator)
            val = (mpmath.mpf(c.re.numerator) / c.re.denominator) * mpmath.cos(ang) - (
                mpmath.mpf(c.im.numerator) / c.im.denominator) * mpmath.sin(ang)
            scale = mpmath.sqrt(mpmath.mpf(c.norm().numerator) / c.norm().denominator)
            if abs(val) < scale * mpmath.mpf("1e-30"):
                return 0
            return 1 if val > 0 else -1
    z = complex(c)
    val = (z * complex(math.cos(float(k_over_m) * theta.theta),
                       math.sin(float(k_over_m) * theta.theta))).real
    if abs(val) <= 1e-12 * abs(z):
        return 0
    return 1 if val > 0 else -1


def dominance(delta: ExponentialFactor, theta) -> int:
    """Sign of ``Re delta(rho e^{i theta})`` as ``rho -> 0+``, decided term by term."""
    theta = _as_direction(theta)
    for k, c in delta.terms:
        if k >= 0:
            break
        s = _term_sign(c, Fraction(k, delta.ram), theta)
        if s:
            return s
    return 0


def stokes_curve(delta: ExponentialFactor, rho_grid: Sequence[float],
                 xtol: float = 1e-12) -> list[list[tuple[float, float]]]:
    """Track each Stokes curve ``Re delta = 0`` through the radii of ``rho_grid``.

    Returns one polyline of ``(rho, theta)`` per Stokes direction, in the order
    of ``rho_grid``.  Tracking starts at the smallest radius, seeded at the
    Stokes direction, and continues outward.
    """
    from scipy.optimize import brentq

    dirs = stokes_directions(delta)
    radii = sorted(set(float(r) for r in rho_grid))
    if not radii or radii[0] <= 0:
        raise ValueError("radii must be positive")
    half = math.pi / float(delta.order) / 4

    def f(theta, rho):
        return evaluate(delta, rho=rho, theta=theta).real

    curves = []
    for d in dirs:
        theta = d.theta
        track = {}
        for rho in radii:
            lo, hi = theta - half, theta + half
            flo, fhi = f(lo, rho), f(hi, rho)
            if flo == 0:
                theta = lo
            elif fhi == 0:
                theta = hi
            elif flo * fhi > 0:
                raise CurveTrackingError(f"lost the Stokes curve from direction {d.theta:.6f}", rho)
            else:
                theta = brentq(f, lo, hi, args=(rho,), xtol=xtol, rtol=8.9e-16)
            track[rho] = theta
        curves.append([(float(r), track[float(r)]) for r in rho_grid])
    # collisions between neighbouring curves mean the disc must be shrunk
    for a, b in zip(curves, curves[1:]):
        for (rho, ta), (_, tb) in zip(a, b):
            if abs(ta - tb) < 1e-9:
                raise CurveTrackingError("two Stokes curves collide", rho)
    return curves


@dataclass(frozen=True)
class Sector:
    lo: float
    hi: float
    rho_max: float = 1.0

    def __post_init__(self):
        if not self.hi > self.lo:
            raise ValueError("sector needs lo < hi")

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, theta: float, period: float = TWO_PI) -> bool:
        """Open-arc membership, with ``theta`` taken modulo ``period``."""
        t = self.lo + ((theta - self.lo) % period)
        return self.lo < t < self.hi

    def intersect_next(self, other: "Sector") -> "Sector":
        """Overlap with the counterclockwise neighbour ``other`` (already lifted)."""
        return Sector(max(self.lo, other.lo), min(self.hi, other.hi), min(self.rho_max, other.rho_max))

    def shifted(self, turns: int) -> "Sector":
        return Sector(self.lo + TWO_PI * turns, self.hi + TWO_PI * turns, self.rho_max)

    def to_json(self) -> dict:
        return {"lo": self.lo, "hi": self.hi, "rho_max": self.rho_max}


def sector_cover(lines: Sequence[Direction | float], eps: float | None = None,
                 period: float = TWO_PI, rho_max: float = 1.0) -> list[Sector]:
    """Open sectors, one around each line, overlapping strictly between lines.

    ``S_i`` runs from the midpoint of ``(L_{i-1}, L_i)`` minus ``eps`` to the
    midpoint of ``(L_i, L_{i+1})`` plus ``eps``; ``eps`` defaults to a quarter
    of the smallest gap.
    """
    thetas = sorted(_as_direction(t).theta for t in lines)
    n = len(thetas)
    if n == 0:
        raise GeometryError("no Stokes lines: a single sector covers the disc")
    for a, b in zip(thetas, thetas[1:]):
        if b - a <= 0:
            raise GeometryError("lines must be pairwise distinct")
    if n == 1:
        L = thetas[0]
        e = period / 8 if eps is None else eps
        # one sector around the line plus a complementary line-free one
        return [Sector(L - period / 4, L + period / 4, rho_max),
                Sector(L + period / 4 - e, L + 3 * period / 4 + e, rho_max)]
    gaps = [thetas[(i + 1) % n] - thetas[i] + (period if i == n - 1 else 0) for i in range(n)]
    e = min(gaps) / 4 if eps is None else eps
    out = []
    for i in range(n):
        prev = thetas[i - 1] - (period if i == 0 else 0)
        nxt = thetas[i + 1] if i + 1 < n else thetas[0] + period
        out.append(Sector(0.5 * (prev + thetas[i]) - e, 0.5 * (thetas[i] + nxt) + e, rho_max))
    return out


def overlaps(cover: Sequence[Sector], period: float = TWO_PI) -> list[Sector]:
    """``S_k  intersect  S_{k+1}`` for each k, with ``S_{N+1} = S_1`` lifted by one turn."""
    n = len(cover)
    out = []
    for k in range(n):
        nxt = cover[k + 1] if k + 1 < n else Sector(cover[0].lo + period, cover[0].hi + period,
                                                     cover[0].rho_max)
        out.append(cover[k].intersect_next(nxt))
    return out


@dataclass(frozen=True)
class StokesDiagram:
    factors: tuple  # ExponentialFactor per item
    pairs: tuple  # (i, j, delta, directions on cover)
    lines: tuple  # Direction on [0, 2 pi)
    line_pairs: tuple  # per line, tuple of (i, j)
    cover: tuple  # Sector

    @property
    def overlaps(self) -> list[Sector]:
        return overlaps(self.cover)

    def to_json(self) -> dict:
        return {
            "directions": [d.theta for d in self.lines],
            "exact": [d.label() for d in self.lines],
            "lines": [{"theta": d.theta, "exact": d.label(), "pairs": [list(p) for p in ps]}
                      for d, ps in zip(self.lines, self.line_pairs)],
            "sectors": [s.to_json() for s in self.cover],
        }


def stokes_diagram(factors: Sequence[ExponentialFactor], rho_max: float = 1.0) -> StokesDiagram:
    """Pairwise differences, merged Stokes lines on the base circle, and their sector cover."""
    factors = tuple(factors)
    pairs = []
    lines: list[Direction] = []
    refs: list[list[tuple[int, int]]] = []
    for i in range(len(factors)):
        for j in range(i + 1, len(factors)):
            delta = factors[i] - factors[j]
            if delta.order == 0:
                continue
            dirs = stokes_directions(delta)
            pairs.append((i + 1, j + 1, delta, tuple(dirs)))
            for d in base_directions(delta):
                for idx, L in enumerate(lines):
                    if L.same(d):
                        refs[idx].append((i + 1, j + 1))
                        break
                else:
                    lines.append(d)
                    refs.append([(i + 1, j + 1)])
    order = sorted(range(len(lines)), key=lambda k: lines[k].theta)
    lines_sorted = tuple(lines[k] for k in order)
    refs_sorted = tuple(tuple(refs[k]) for k in order)
    cover = tuple(sector_cover(lines_sorted, rho_max=rho_max)) if lines_sorted else ()
    return StokesDiagram(factors, tuple(pairs), lines_sorted, refs_sorted, cover)
