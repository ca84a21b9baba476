"""Numerical Stokes matrices for rank <= 2 connections.

Each sector gets a fundamental matrix seeded by the truncated formal
solutions at a small radius on its Stokes line, where the exponentials are
balanced.  It is then transported radially out to a matching radius and
along that circle to the neighbouring overlap.  ``A_k = Y_{k+1}^{-1} Y_k``
is read off at the overlap bisector.
"""
from __future__ import annotations

import cmath
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np
from scipy.integrate import solve_ivp

from .factors import ExponentialFactor, GaussRational, evaluate
from .formal import (DifferentialOperator, FormalError, FormalSum, Operator, System,
                     connection_solutions, formal_sum_system, formal_type, newton_polygon)
from .geometry import TWO_PI
from .stokesdata import StokesDataError, StokesStructure, normal_form, validate
from .geometry import stokes_diagram


# Local step tolerances sit below the requested accuracy: Stokes multipliers are read
# off next to columns that are larger by the exponential separation at rho_match.
_STEP_TOL = 0.01


class IntegrationError(ArithmeticError):
    def __init__(self, message: str, arclength: float):
        super().__init__(f"{message} (arclength reached: {arclength:.6g})")
        self.arclength = arclength


@dataclass(frozen=True)
class IntegrationConfig:
    rtol: float = 1e-10
    atol: float = 1e-12
    rho_seed: float | None = None
    n_asym: int = 80
    rho_match: float | None = None
    max_step: float = math.inf
    separation: float = 26.0

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")
        if self.rho_seed is not None and self.rho_match is not None and not (
                0 < self.rho_seed < self.rho_match):
            raise ValueError("need 0 < rho_seed < rho_match")
        if self.n_asym < 0:
            raise ValueError("n_asym must be >= 0")

    @property
    def tol(self) -> float:
        return self.rtol


@dataclass(frozen=True, eq=False)
class FundamentalMatrix:
    sector: int
    rho: float
    theta: float
    Y: np.ndarray


# -- coefficient evaluation ------------------------------------------------------

def _compile(phi: ExponentialFactor):
    """``(exponent, coeff)`` pairs for fast evaluation from ``log x``."""
    return [(k / phi.ram, complex(c)) for k, c in phi.terms]


def _eval_compiled(terms, logx: complex) -> complex:
    return sum(c * cmath.exp(e * logx) for e, c in terms) if terms else 0j


def _as_spec(C):
    if isinstance(C, DifferentialOperator):
        return Operator(C)
    if isinstance(C, FormalSum):
        return formal_sum_system(C)
    return C


def _matrix_function(C):
    """``logx -> A(x)`` for the first-order system equivalent to ``C``."""
    C = _as_spec(C)
    if isinstance(C, Operator):
        P = C.op
        n = P.order
        coeffs = [_compile(P[i]) for i in range(n + 1)]

        def A(logx):
            lead = _eval_compiled(coeffs[n], logx)
            M = np.zeros((n, n), dtype=complex)
            for i in range(n - 1):
                M[i, i + 1] = 1
            for i in range(n):
                M[n - 1, i] = -_eval_compiled(coeffs[i], logx) / lead
            return M
        return A, n
    entries = [[_compile(a) for a in row] for row in C.matrix]
    n = len(entries)

    def A(logx):
        return np.array([[_eval_compiled(t, logx) for t in row] for row in entries], dtype=complex)
    return A, n


def singular_radii(C) -> list[float]:
    """Moduli of singular points other than 0 (zeros of the leading operator coefficient)."""
    C = _as_spec(C)
    if not isinstance(C, Operator):
        return []
    lead = C.op[C.op.order]
    if lead.ram != 1 or len(lead.terms) < 2:
        return []
    k0 = lead.terms[0][0]
    deg = lead.terms[-1][0] - k0
    poly = [0j] * (deg + 1)
    for k, c in lead.terms:
        poly[deg - (k - k0)] = complex(c)
    return sorted(abs(r) for r in np.roots(poly) if abs(r) > 1e-14)


# -- paths -------------------------------------------------------------------

@dataclass(frozen=True)
class Radial:
    theta: float
    rho0: float
    rho1: float

    def reversed(self):
        return Radial(self.theta, self.rho1, self.rho0)

    def length(self) -> float:
        return abs(self.rho1 - self.rho0)


@dataclass(frozen=True)
class Arc:
    rho: float
    theta0: float
    theta1: float

    def reversed(self):
        return Arc(self.rho, self.theta1, self.theta0)

    def length(self) -> float:
        return self.rho * abs(self.theta1 - self.theta0)


@dataclass(frozen=True)
class Line:
    z0: complex
    z1: complex

    def reversed(self):
        return Line(self.z1, self.z0)

    def length(self) -> float:
        return abs(self.z1 - self.z0)


def polyline(points: Sequence[complex]) -> list[Line]:
    return [Line(complex(a), complex(b)) for a, b in zip(points, points[1:])]


def reverse_path(path) -> list:
    return [s.reversed() for s in reversed(path)]


def _segment_system(seg, A, n, log_start: complex):
    """Parameter interval, ``s -> log x`` and ``s -> dx/ds`` for one segment."""
    if isinstance(seg, Radial):
        e = cmath.exp(1j * seg.theta)
        return (seg.rho0, seg.rho1), (lambda s: math.log(s) + 1j * seg.theta), (lambda s: e)
    if isinstance(seg, Arc):
        lr = math.log(seg.rho)
        return ((seg.theta0, seg.theta1), (lambda s: lr + 1j * s),
                (lambda s: 1j * seg.rho * cmath.exp(1j * s)))
    z0, dz = seg.z0, seg.z1 - seg.z0
    if min(abs(z0 + t * dz) for t in np.linspace(0, 1, 65)) == 0:
        raise ValueError("path passes through 0")
    return (0.0, 1.0), (lambda s: log_start + cmath.log((z0 + s * dz) / z0)), (lambda s: dz)


def _segment_log_start(seg, prev_log: complex | None) -> complex:
    if isinstance(seg, Radial):
        return math.log(seg.rho0) + 1j * seg.theta
    if isinstance(seg, Arc):
        return math.log(seg.rho) + 1j * seg.theta0
    if prev_log is not None and abs(cmath.exp(prev_log) - seg.z0) < 1e-12 * max(1, abs(seg.z0)):
        return prev_log
    return cmath.log(seg.z0)


def integrate(C, path, Y0, cfg: IntegrationConfig | None = None):
    """Transport the fundamental matrix ``Y0`` along ``path``.

    ``path`` is a list of :class:`Radial`, :class:`Arc` and :class:`Line`
    segments, or a sequence of complex vertices.  Returns the matrix at the
    end point.
    """
    Z, L, _ = _transport(C, path, Y0, cfg)
    return Z * cmath.exp(L)


def _transport(C, path, Y0, cfg):
    """Gauge-normalized transport: returns ``(Z, L, trace_integral)`` with ``Y = Z e^L``."""
    cfg = cfg or IntegrationConfig()
    if path and not isinstance(path[0], (Radial, Arc, Line)):
        path = polyline(path)
    A, n = _matrix_function(C)
    Y = np.array(Y0, dtype=complex).reshape(n, -1)
    k = Y.shape[1]
    # carry a scalar gauge e^L so the transported frame stays of order one
    scale = float(np.abs(Y).max()) or 1.0
    Z = Y / scale
    L = complex(math.log(scale))
    trace_integral = 0j
    eye = np.eye(n)
    done = 0.0
    log_prev = None
    for seg in path:
        log0 = _segment_log_start(seg, log_prev)
        (s0, s1), logx, dxds = _segment_system(seg, A, n, log0)
        if s0 == s1:
            continue

        def rhs(s, y):
            M = A(logx(s))
            tau = np.trace(M) / n
            dx = dxds(s)
            dz = ((M - tau * eye) @ y[:-1].reshape(n, k)) * dx
            return np.concatenate([dz.ravel(), [tau * dx]])

        y0 = np.concatenate([Z.ravel(), [0j]])
        # overflow shows up as a failed status below
        with np.errstate(all="ignore"):
            sol = solve_ivp(rhs, (s0, s1), y0, method="DOP853", rtol=cfg.rtol * _STEP_TOL,
                            atol=cfg.atol * _STEP_TOL, max_step=cfg.max_step)
        if sol.status != 0:
            frac = abs(sol.t[-1] - s0) / abs(s1 - s0)
            raise IntegrationError(sol.message, done + frac * seg.length())
        Z = sol.y[:-1, -1].reshape(n, k)
        L += sol.y[-1, -1]
        trace_integral += n * sol.y[-1, -1]
        nz = float(np.abs(Z).max())
        if nz > 0:
            Z = Z / nz
            L += math.log(nz)
        done += seg.length()
        log_prev = logx(s1)
    return Z, L, trace_integral


def numeric_monodromy(C, rho: float, cfg: IntegrationConfig | None = None,
                      theta0: float = 0.0) -> np.ndarray:
    """``Y(theta0 + 2 pi) Y(theta0)^{-1}`` for a frame transported around ``|x| = rho``."""
    _, n = _matrix_function(C)
    return integrate(C, [Arc(rho, theta0, theta0 + TWO_PI)], np.eye(n), cfg)


def monodromy_charpoly(C, rho: float, cfg: IntegrationConfig | None = None,
                       theta0: float = 0.0) -> np.ndarray:
    """Characteristic polynomial of the monodromy around ``|x| = rho`` (highest degree first).

    The trace comes from the transported frame.  The determinant comes from
    Liouville's formula ``exp(oint tr A dx)``, which stays accurate when the
    eigenvalues are far apart in modulus.
    """
    _, n = _matrix_function(C)
    Z, L, tr_int = _transport(C, [Arc(rho, theta0, theta0 + TWO_PI)], np.eye(n), cfg or IntegrationConfig())
    M = Z * cmath.exp(L)
    if n == 1:
        return np.array([1, -M[0, 0]])
    if n == 2:
        return np.array([1, -np.trace(M), cmath.exp(tr_int)])
    return np.poly(M)


def charpoly_distance(p, q) -> float:
    """Largest coefficient difference, relative to ``max(1, |coefficient|)``."""
    p, q = np.asarray(p, dtype=complex), np.asarray(q, dtype=complex)
    return float(np.max(np.abs(p - q) / np.maximum(1.0, np.maximum(np.abs(p), np.abs(q)))))


# -- asymptotic seeds ----------------------------------------------------------

def _series_coefficients(Q: DifferentialOperator, lam, n_max: int):
    """Coefficients ``a_n`` of ``x^lam sum a_n x^{n/m}`` annihilated by ``Q``.

    Returns ``(m, coeffs, resonant)`` with exact coefficients when ``lam`` is
    exact; on an obstructed resonance the series is cut to ``a_0``.
    """
    m = 1
    for a in Q.coeffs:
        m = math.lcm(m, a.ram)
    h = newton_polygon(Q).edges[0][3]
    shifts: dict[int, list] = {}
    for i, a in enumerate(Q.coeffs):
        for k, c in a.terms:
            j = (Fraction(k, a.ram) - i - h) * m
            if j.denominator != 1 or j < 0:
                raise FormalError("operator is not in the expected normal position")
            shifts.setdefault(int(j), []).append((i, c))
    exact = isinstance(lam, GaussRational)
    if not exact:
        shifts = {j: [(i, complex(c)) for i, c in v] for j, v in shifts.items()}
    one = GaussRational.coerce(1) if exact else 1 + 0j

    def G(j, mu):
        total = GaussRational.coerce(0) if exact else 0j
        for i, c in shifts.get(j, []):
            ff = one
            for r in range(i):
                ff = ff * (mu - r)
            total = total + c * ff
        return total

    def step(n):
        return GaussRational(Fraction(n, m)) if exact else n / m

    coeffs = [one]
    for N in range(1, n_max + 1):
        rhs = GaussRational.coerce(0) if exact else 0j
        for j in range(1, N + 1):
            if j in shifts and coeffs[N - j]:
                rhs = rhs - coeffs[N - j] * G(j, lam + step(N - j))
        d = G(0, lam + step(N))
        if (not d) if exact else abs(d) < 1e-12:
            if (not rhs) if exact else abs(rhs) < 1e-12:
                coeffs.append(GaussRational.coerce(0) if exact else 0j)
                continue
            return m, [one], True
        coeffs.append(rhs / d)
    return m, coeffs, False


@dataclass
class _ScalarSeed:
    """``e^factor x^lam sum_n coeffs[n] x^(n/m)``."""

    factor: ExponentialFactor
    lam: complex
    m: int
    coeffs: list
    resonant: bool
    exact: list = field(default_factory=list, repr=False)
    lam_exact: object = None

    def values(self, rho: float, theta: float, order: int, n_cap: int | None = None):
        """``(y, y', ...)`` up to ``order - 1`` derivatives, with optimal truncation."""
        logx = math.log(rho) + 1j * theta
        if not any(self.coeffs):
            return [0j] * order, 0
        base = cmath.exp(evaluate(self.factor, rho=rho, theta=theta) + self.lam * logx)
        coeffs = self.coeffs if n_cap is None else self.coeffs[:n_cap + 1]
        terms = [(a, self.lam + n / self.m, abs(a * cmath.exp((n / self.m) * logx)))
                 for n, a in enumerate(coeffs) if a != 0]
        last_nz = max(n for n, a in enumerate(self.coeffs) if a != 0)
        if n_cap is None and 2 * last_nz >= len(self.coeffs):
            # divergent tail: cut at the smallest term
            best = min(range(len(terms)), key=lambda i: terms[i][2])
            terms = terms[:best + 1]
        terms = [(a, mu) for a, mu, _ in terms]
        # w = sum a x^mu (times x^-lam folded into base)
        w = sum(a * cmath.exp((mu - self.lam) * logx) for a, mu in terms)
        out = [base * w]
        if order > 1:
            dw = sum(a * mu * cmath.exp((mu - self.lam - 1) * logx) for a, mu in terms)
            dphi = evaluate(self.factor.derivative(), rho=rho, theta=theta)
            out.append(base * (dphi * w + dw))
        if order > 2:
            raise FormalError("seeds are implemented for order <= 2")
        return out, len(terms)

    def remainder(self, rho: float, theta: float) -> float:
        """Relative size of the smallest series term, an estimate of the truncation error."""
        nz = [n for n, a in enumerate(self.coeffs) if a != 0]
        if not nz or 2 * nz[-1] < len(self.coeffs):
            return 0.0
        lead = abs(self.coeffs[nz[0]]) * rho ** (nz[0] / self.m)
        return min(abs(self.coeffs[n]) * rho ** (n / self.m) for n in nz) / lead


def _scalar_seeds(sols, n_asym: int) -> list[_ScalarSeed]:
    out = []
    for s in sols:
        roots = list(s.roots)
        if len(roots) != s.multiplicity:
            raise FormalError("indicial roots do not match the multiplicity")
        for a, b in zip(roots, roots[1:]):
            if abs(complex(a) - complex(b)) < 1e-12:
                raise FormalError("logarithmic formal solutions are not supported")
        for lam in roots:
            m, coeffs, res = _series_coefficients(s.twisted, lam, n_asym)
            out.append(_ScalarSeed(s.factor, complex(lam), m, [complex(c) for c in coeffs], res,
                                   coeffs, lam))
    return out


def _other_component(seed: _ScalarSeed, a_diag: ExponentialFactor,
                     a_off: ExponentialFactor) -> _ScalarSeed:
    """Series of ``(u' - a_diag u) / a_off`` for the formal solution ``u`` of ``seed``.

    Done on the coefficients, so the cancellation of the leading exponential
    parts is exact instead of happening in floating point at the seed point.
    """
    exact = isinstance(seed.lam_exact, GaussRational)
    conv = GaussRational.coerce if exact else complex
    zero = conv(0)
    lam = seed.lam_exact if exact else seed.lam
    coeffs = seed.exact if exact else seed.coeffs
    P = seed.factor.derivative() - a_diag
    pterms = [(Fraction(k, P.ram), conv(c)) for k, c in P.terms]
    M = math.lcm(seed.m, P.ram, a_off.ram)
    top = Fraction(len(coeffs) - 1, seed.m)
    valid = top + min([e for e, _ in pterms] + [Fraction(-1)])
    B: dict[Fraction, object] = {}
    for n, a in enumerate(coeffs):
        if not a:
            continue
        e = Fraction(n, seed.m)
        for pe, pc in pterms:
            B[e + pe] = B.get(e + pe, zero) + pc * a
        B[e - 1] = B.get(e - 1, zero) + a * (lam + conv(e))
    B = {e: c for e, c in B.items() if e <= valid and (c if exact else abs(c) > 0)}
    if not B:
        return _ScalarSeed(seed.factor, seed.lam, M, [0j], seed.resonant)
    b0 = min(B)
    length = int((max(B) - b0) * M) + 1
    Bj = [B.get(b0 + Fraction(j, M), zero) for j in range(length)]
    e0 = Fraction(a_off.terms[0][0], a_off.ram)
    Pk = {int((Fraction(k, a_off.ram) - e0) * M): conv(c) for k, c in a_off.terms}
    Q = []
    for j in range(length):
        acc = Bj[j]
        for k, c in Pk.items():
            if 0 < k <= j:
                acc = acc - c * Q[j - k]
        Q.append(acc / Pk[0])
    shift = b0 - e0
    return _ScalarSeed(seed.factor, seed.lam + float(shift), M, [complex(q) for q in Q],
                       seed.resonant, Q, (lam + conv(shift)) if exact else None)


class _Seeder:
    """Seed columns for a connection, ordered like the items of its formal type."""

    def __init__(self, C, n_asym: int):
        self.spec = _as_spec(C)
        self.n_asym = n_asym
        groups = connection_solutions(self.spec)
        self.groups = [(c, _scalar_seeds(sols, n_asym)) for c, sols in groups]
        self.resonant = any(s.resonant for _, seeds in self.groups for s in seeds)
        self.partners = []
        C = self.spec
        if isinstance(C, System) and C.rank == 2 and not C.is_diagonal():
            comp, seeds = self.groups[0]
            o = 1 - comp
            self.partners = [_other_component(sd, C.matrix[comp][comp], C.matrix[comp][o])
                             for sd in seeds]

    def remainder(self, rho: float, theta: float) -> float:
        seeds = [s for _, group in self.groups for s in group] + self.partners
        return max(s.remainder(rho, theta) for s in seeds)

    def __call__(self, rho: float, theta: float, n_cap: int | None = None):
        C = self.spec
        cols, used = [], []
        if isinstance(C, Operator):
            n = C.op.order
            for s in self.groups[0][1]:
                v, k = s.values(rho, theta, n, n_cap)
                cols.append(v)
                used.append(k)
            return np.array(cols, dtype=complex).T, used
        r = C.rank
        logx = math.log(rho) + 1j * theta
        if r == 1 or C.is_diagonal():
            for comp, seeds in self.groups:
                for s in seeds:
                    v, k = s.values(rho, theta, 1, n_cap)
                    col = np.zeros(r, dtype=complex)
                    col[comp] = v[0]
                    cols.append(col)
                    used.append(k)
            return np.array(cols, dtype=complex).T, used
        comp, seeds = self.groups[0]
        for s, partner in zip(seeds, self.partners):
            (u,), k = s.values(rho, theta, 1, n_cap)
            (v,), _ = partner.values(rho, theta, 1, n_cap)
            cols.append([u, v] if comp == 0 else [v, u])
            used.append(k)
        return np.array(cols, dtype=complex).T, used


def asymptotic_seed(C, theta: float, rho: float, N: int = 8) -> np.ndarray:
    """Truncated formal solutions (at most ``N`` correction terms) evaluated at ``rho e^{i theta}``.

    Columns follow the items of ``formal_type(C)``; for operators the rows are
    ``y, y', ...``.
    """
    Y, _ = _Seeder(C, N)(rho, theta)
    return Y


# -- Stokes matrices -----------------------------------------------------------

def default_rho_seed(formal, separation: float = 26.0) -> float | None:
    """Radius at which every pairwise leading separation ``|c| rho^-ord`` reaches ``separation``."""
    best = None
    factors = formal.factors()
    for i in range(len(factors)):
        for j in range(i + 1, len(factors)):
            d = factors[i] - factors[j]
            if d.order == 0:
                continue
            r = (abs(complex(d.leading())) / separation) ** (1 / float(d.order))
            best = r if best is None else min(best, r)
    return best


def _thread_count(jobs: int) -> int:
    cap = os.environ.get("STOKESKIT_THREADS")
    try:
        limit = int(cap) if cap else (os.cpu_count() or 1)
    except ValueError:
        limit = 1
    return max(1, min(jobs, limit))


def _anchors(diagram) -> list[float]:
    out = []
    for S in diagram.cover:
        inside = [L.theta + TWO_PI * t for L in diagram.lines for t in (-1, 0, 1)
                  if S.lo < L.theta + TWO_PI * t < S.hi]
        out.append(min(inside, key=lambda a: abs(a - S.mid)) if inside else S.mid)
    return out


def stokes_matrices(C, cfg: IntegrationConfig | None = None,
                    diagnostics: dict | None = None) -> StokesStructure:
    """Stokes structure of ``C`` computed numerically.

    ``diagnostics``, if given, receives the raw matrices, the largest
    off-shape magnitude and the radii used.
    """
    cfg = cfg or IntegrationConfig()
    F = formal_type(C)
    if F.rank > 2:
        raise FormalError("numerical Stokes matrices are limited to rank <= 2")
    diagram = stokes_diagram(F.factors())
    n_sec = len(diagram.cover)
    if n_sec == 0:
        if diagnostics is not None:
            diagnostics.update(raw=[], off_shape=0.0, rho_seed=None, rho_match=None)
        return StokesStructure(F, diagram, (), 1)
    seeder = _Seeder(C, cfg.n_asym)
    rho_seed = cfg.rho_seed
    if rho_seed is None:
        rho_seed = default_rho_seed(F, cfg.separation)
        # shrink until the optimal-truncation remainder is far below the tolerance
        for _ in range(12):
            if seeder.remainder(rho_seed, 0.0) <= 1e-3 * cfg.tol:
                break
            rho_seed *= 0.85
    rho_match = cfg.rho_match
    if rho_match is None:
        # where the leading separation has decayed to about 2, at most a decade out
        rho_match = min(10 * rho_seed, max(default_rho_seed(F, 2.0), 2 * rho_seed))
    others = singular_radii(C)
    if others and cfg.rho_match is None:
        rho_match = min(rho_match, 0.5 * others[0])
    if not rho_match > rho_seed:
        raise StokesDataError("matching radius does not exceed the seeding radius")
    anchors = _anchors(diagram)
    anchors.append(anchors[0] + TWO_PI)
    mids = [S.mid for S in diagram.overlaps]

    def job(j: int):
        Y0, used = seeder(rho_seed, anchors[j])
        Yr = integrate(C, [Radial(anchors[j], rho_seed, rho_match)], Y0, cfg)
        res = {}
        if j >= 1:
            res[j - 1] = integrate(C, [Arc(rho_match, anchors[j], mids[j - 1])], Yr, cfg)
        if j < n_sec:
            res[j] = integrate(C, [Arc(rho_match, anchors[j], mids[j])], Yr, cfg)
        return j, res, used

    with ThreadPoolExecutor(max_workers=_thread_count(n_sec + 1)) as pool:
        results = sorted(pool.map(job, range(n_sec + 1)), key=lambda r: r[0])
    at = {j: res for j, res, _ in results}
    raw = [np.linalg.solve(at[k + 1][k], at[k][k]) for k in range(n_sec)]
    cleaned = []
    for A in raw:
        B = A.copy()
        B[np.abs(B) < 10 * cfg.tol * max(1.0, float(np.abs(A).max()))] = 0
        cleaned.append(B)
    S = StokesStructure(F, diagram, tuple(cleaned), 1)
    from .stokesdata import block_mask, overlap_for
    off = 0.0
    for k, A in enumerate(raw):
        mask = block_mask(F, overlap_for(diagram, k))
        if (~mask).any():
            off = max(off, float(np.abs(A[~mask]).max()))
    if diagnostics is not None:
        diagnostics.update(raw=raw, off_shape=off, rho_seed=rho_seed, rho_match=rho_match,
                           terms_used=[u for _, _, u in results], resonant=seeder.resonant,
                           fundamental=[FundamentalMatrix(k + 1, rho_match, mids[k], at[k][k])
                                        for k in range(n_sec)])
    bad = validate(S)
    if bad:
        raise StokesDataError("numerical Stokes matrices fail validation; "
                              "try a smaller rho_seed or a larger n_asym", bad, raw)
    return normal_form(S)
