import cmath
import math
import random

import mpmath as mp
import numpy as np
import pytest

import _gen
from stokeskit.formal import DifferentialOperator, System, formal_type
from stokeskit.numstokes import (
    Arc,
    IntegrationConfig,
    IntegrationError,
    Line,
    Radial,
    asymptotic_seed,
    charpoly_distance,
    integrate,
    monodromy_charpoly,
    numeric_monodromy,
    polyline,
    reverse_path,
    stokes_matrices,
)
from stokeskit.stokesdata import StokesDataError, block_mask, glue_monodromy, overlap_for, validate

PI = math.pi
AIRY = DifferentialOperator.parse("x^5*D^2 - 1")
RANK1 = DifferentialOperator.parse("x^3*D + 1")
DIAG = System.from_strings([["-x^-3", "0"], ["0", "0"]])


def op(text):
    return DifferentialOperator.parse(text)


# -- asymptotic_seed -------------------------------------------------------------------

def test_seed_closed_form_rank1():
    # exp(1/(2x^2)) at x = 0.5 is e^2
    Y = asymptotic_seed(RANK1, 0.0, 0.5, 0)
    assert Y.shape == (1, 1)
    assert Y[0, 0] == pytest.approx(math.exp(2), rel=1e-12)


@pytest.mark.parametrize("lam", [0.5, -1.25, 2.0])
@pytest.mark.parametrize("N", [0, 3, 8])
def test_seed_euler_is_exact_power(lam, N):
    P = op(f"x*D - ({lam})") if lam >= 0 else op(f"x*D + {-lam}")
    rho, theta = 0.7, 1.1
    want = cmath.exp(lam * (math.log(rho) + 1j * theta))
    assert asymptotic_seed(P, theta, rho, N)[0, 0] == pytest.approx(want, rel=1e-14)


def test_seed_diagonal_system_is_direct_sum():
    Y = asymptotic_seed(DIAG, 0.4, 0.3, 5)
    a = asymptotic_seed(RANK1, 0.4, 0.3, 5)[0, 0]
    assert Y[0, 1] == 0 and Y[1, 0] == 0
    assert Y[0, 0] == pytest.approx(a, rel=1e-12)
    assert Y[1, 1] == pytest.approx(1)


def test_seed_resonance_falls_back_to_leading_term():
    # exponents 2 and -1 differ by 3 and the x term obstructs the series of x^-1
    x = 0.5 * cmath.exp(0.2j)
    Y8 = asymptotic_seed(op("x^2*D^2 - 2 + x"), 0.2, 0.5, 8)
    assert Y8[0, 1] == pytest.approx(1 / x, rel=1e-14)
    assert Y8[1, 1] == pytest.approx(-1 / x ** 2, rel=1e-14)


def test_seed_series_matches_integration():
    # two seeds of the same recessive solution, transported to a common point, agree
    cfg = IntegrationConfig()
    theta = 0.0  # Re(2/3 x^-3/2) > 0 here: the (-2/3) item is recessive
    Y1 = asymptotic_seed(AIRY, theta, 0.08, 80)
    Y2 = asymptotic_seed(AIRY, theta, 0.12, 80)
    T = integrate(AIRY, [Radial(theta, 0.08, 0.12)], Y1, cfg)
    F = formal_type(AIRY)
    rec = [k for k, it in enumerate(F.items) if complex(it.factor.leading()).real < 0][0]
    assert T[:, rec] == pytest.approx(Y2[:, rec], rel=1e-9)


# -- integrate -------------------------------------------------------------------------

def test_integrate_exponential():
    P = op("D - 1")
    Y = integrate(P, [1.0, 2.0], np.eye(1))
    assert Y[0, 0] == pytest.approx(math.e, abs=1e-9)


def test_integrate_euler_loop():
    Y = integrate(op("x*D - 1/2"), [Arc(1.0, 0.0, 2 * PI)], np.eye(1))
    assert abs(Y[0, 0] + 1) < 1e-9


def test_integrate_reversal_inverts():
    # radii stay >= 0.5 so the round trip itself is well conditioned
    path = [Radial(0.3, 0.5, 0.9), Arc(0.9, 0.3, 2.0)] + polyline([0.9 * cmath.exp(2j), 0.5 + 0.5j])
    for C in (AIRY, op("x^3*D^2 + D - 1"), DIAG):
        n = 2
        Y = integrate(C, path, np.eye(n))
        back = integrate(C, reverse_path(path), Y)
        assert np.allclose(back, np.eye(n), atol=1e-8)


def test_integrate_is_deterministic():
    path = [Arc(0.4, 0.0, 3.0)]
    a = integrate(AIRY, path, np.eye(2))
    b = integrate(AIRY, path, np.eye(2))
    assert np.array_equal(a, b)


def test_integrate_reports_arclength_on_failure():
    # the dominant Airy solution overflows well before x = 1e-4
    with pytest.raises(IntegrationError) as info:
        integrate(AIRY, [Line(1.0, 1e-4)], np.eye(2))
    assert 0.5 < info.value.arclength < 1.0
    with pytest.raises(ValueError):
        integrate(AIRY, [Line(1.0, 0.0)], np.eye(2))


def test_config_invariants():
    with pytest.raises(ValueError):
        IntegrationConfig(rtol=0)
    with pytest.raises(ValueError):
        IntegrationConfig(rho_seed=0.5, rho_match=0.2)


# -- numeric_monodromy ---------------------------------------------------------------

def test_monodromy_euler():
    M = numeric_monodromy(op("x*D - 1/2"), 1.0)
    assert abs(M[0, 0] + 1) < 1e-9


def test_monodromy_single_valued():
    assert abs(numeric_monodromy(RANK1, 0.7)[0, 0] - 1) < 1e-8


@pytest.mark.parametrize("C", [AIRY, op("x^3*D^2 + D - 1"), op("x^2*D^2 + x*D - 1/4 + x")])
def test_monodromy_class_is_homotopy_invariant(C):
    ref = monodromy_charpoly(C, 0.5)
    for rho, theta0 in ((0.3, 0.0), (0.8, 1.0), (0.5, -2.5)):
        assert charpoly_distance(monodromy_charpoly(C, rho, theta0=theta0), ref) < 1e-7
        M = numeric_monodromy(C, rho, theta0=theta0)
        assert charpoly_distance(np.poly(M), ref) < 1e-7


# -- stokes_matrices -----------------------------------------------------------------

def test_stokes_diagonal_system_is_trivial():
    S = stokes_matrices(DIAG)
    assert S.matrices
    for A in S.matrices:
        assert np.allclose(A, np.eye(2), atol=1e-8)


def test_stokes_single_factor_has_no_lines():
    S = stokes_matrices(RANK1)
    assert S.matrices == () and S.diagram.lines == ()
    assert glue_monodromy(S) == pytest.approx(np.eye(1))


def test_stokes_airy_unipotent():
    diag = {}
    S = stokes_matrices(AIRY, diagnostics=diag)
    assert len(S.matrices) == 3
    assert validate(S, normalized=True) == []
    for k, A in enumerate(S.matrices):
        mask = block_mask(S.formal, overlap_for(S.diagram, k))
        assert mask.sum() == 3  # one-sided triangular
        assert abs(A[~mask].item()) == 0
    assert diag["off_shape"] < 1e3 * IntegrationConfig().tol


def _airy_connection_multiplier():
    """Stokes constant of the Airy-type equation from Bessel functions, with no ODE integration.

    Solutions of x^5 y'' = y are e^{t/2} K_{1/3}((2/3) e^{-3t/2}) with t = log x.
    r_k(t) = e^{5 pi i k/6} U(t - 2 pi i k/3) are recessive in consecutive sectors,
    and r_{-1} = r_1 - s r_0.  Returns s from Wronskians.
    """
    mp.mp.dps = 30
    nu = mp.mpf(1) / 3

    def K(logz):
        # continuation of K_nu past the principal sheet
        m = int(mp.nint(mp.im(logz) / mp.pi))
        z0 = mp.exp(logz - 1j * mp.pi * m)
        return (mp.exp(-1j * m * nu * mp.pi) * mp.besselk(nu, z0)
                - 1j * mp.pi * mp.sin(m * nu * mp.pi) / mp.sin(nu * mp.pi) * mp.besseli(nu, z0))

    def r(k):
        return lambda t: mp.exp(5j * mp.pi * k / 6) * mp.exp((t - 2j * mp.pi * k / 3) / 2) * K(
            mp.log(mp.mpf(2) / 3) - mp.mpf(3) / 2 * (t - 2j * mp.pi * k / 3))

    def W(f, g, t):
        return f(t) * mp.diff(g, t) - g(t) * mp.diff(f, t)

    t = mp.log(mp.mpf("0.5")) + 0.3j
    return complex(-W(r(-1), r(1), t) / W(r(0), r(1), t))


def test_stokes_airy_multiplier_matches_bessel_oracle():
    s = _airy_connection_multiplier()
    S = stokes_matrices(AIRY)
    for k, A in enumerate(S.matrices):
        mask = block_mask(S.formal, overlap_for(S.diagram, k))
        (i, j), = [tuple(p) for p in np.argwhere(mask & ~np.eye(2, dtype=bool))]
        # the package orders items as (-2/3, +2/3) and stores -s on every overlap
        assert A[i, j] == pytest.approx(-s, abs=1e-8)
    assert s == pytest.approx(1j, abs=1e-20)


def coupled_cases(n=10, seed=99):
    rng = random.Random(seed)
    return [_gen.coupled_system(rng) for _ in range(n)]


@pytest.mark.parametrize("C", [DIAG, RANK1, AIRY], ids=["diagonal", "rank1", "airy"])
def test_monodromy_identity_examples(C):
    S = stokes_matrices(C)
    d = charpoly_distance(np.poly(glue_monodromy(S)), monodromy_charpoly(C, 0.5))
    assert d < 1e-6


def test_monodromy_identity_random_coupled():
    tol = IntegrationConfig().tol
    for C in coupled_cases():
        diag = {}
        S = stokes_matrices(C, diagnostics=diag)
        assert diag["off_shape"] < 1e3 * tol
        rho = 0.5 * diag["rho_match"]
        d = charpoly_distance(np.poly(glue_monodromy(S)), monodromy_charpoly(C, rho))
        assert d < 1e-6, (C, d)
        # something nontrivial is being compared
        assert any(np.abs(A - np.eye(2)).max() > 1e-3 for A in S.matrices)


@pytest.mark.parametrize("C", [AIRY] + coupled_cases(3, seed=5), ids=["airy", "c0", "c1", "c2"])
def test_seeding_robustness(C):
    diag = {}
    base = stokes_matrices(C, diagnostics=diag)
    for cfg in (IntegrationConfig(rho_seed=diag["rho_seed"] / 2),
                IntegrationConfig(n_asym=IntegrationConfig().n_asym + 2)):
        other = stokes_matrices(C, cfg)
        for A, B in zip(base.matrices, other.matrices):
            assert np.abs(A - B).max() < 1e-6


def test_bad_seed_radius_is_reported():
    # a seed radius far too large leaves a huge truncation error
    with pytest.raises(StokesDataError) as info:
        stokes_matrices(coupled_cases(1, seed=5)[0], IntegrationConfig(rho_seed=1.5, rho_match=3.0,
                                                                       n_asym=2))
    assert info.value.raw is not None


def test_thread_count_does_not_change_results(monkeypatch):
    out = []
    for threads in ("1", "4"):
        monkeypatch.setenv("STOKESKIT_THREADS", threads)
        out.append(stokes_matrices(AIRY).matrices)
    for A, B in zip(*out):
        assert np.array_equal(A, B)
