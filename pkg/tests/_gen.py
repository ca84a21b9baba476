"""Random inputs shared by the test modules."""
from __future__ import annotations

import random
from fractions import Fraction

import numpy as np

from stokeskit.factors import ExponentialFactor, GaussRational, render
from stokeskit.formal import FormalType, make_item
from stokeskit.stokesdata import block_mask, make_structure, overlap_for
from stokeskit.geometry import stokes_diagram


def gauss(rng: random.Random, lo=-3, hi=3) -> GaussRational:
    return GaussRational(Fraction(rng.randint(lo, hi)), Fraction(rng.randint(lo, hi)))


def pole_factor(rng: random.Random, max_ord: int = 3) -> ExponentialFactor:
    r = rng.randint(1, max_ord)
    c = gauss(rng)
    while not c:
        c = gauss(rng)
    terms = {-r: c}
    for k in range(-r + 1, 0):
        if rng.random() < 0.4:
            terms[k] = gauss(rng)
    return ExponentialFactor.make(1, terms)


def random_formal(rng: random.Random, max_items: int = 3, max_rank: int = 4) -> FormalType:
    n_items = rng.randint(1, min(max_items, max_rank))
    ranks = [1] * n_items
    for _ in range(rng.randint(0, max_rank - n_items)):
        ranks[rng.randrange(n_items)] += 1
    items, seen = [], set()
    for m in ranks:
        f = ExponentialFactor.zero() if not seen and rng.random() < 0.3 else pole_factor(rng)
        if render(f.pole_part()) in seen:
            continue
        seen.add(render(f.pole_part()))
        lams = [complex(rng.choice([0, 0.5, 0.25]), rng.choice([0, 0.3])) for _ in range(m)]
        items.append(make_item(f, m, lams))
    return FormalType(tuple(items), 1)


def random_structure(rng: random.Random, max_items: int = 3, max_rank: int = 4,
                     unipotent: bool = False):
    """A valid structure: random entries wherever the overlap Hom shape allows them."""
    formal = random_formal(rng, max_items, max_rank)
    diagram = stokes_diagram(formal.factors())
    n = formal.rank
    nrng = np.random.default_rng(rng.randrange(2 ** 32))
    mats = []
    for pos in range(len(diagram.cover)):
        mask = block_mask(formal, overlap_for(diagram, pos))
        A = (nrng.normal(size=(n, n)) + 1j * nrng.normal(size=(n, n))) * mask
        for b in formal.blocks():
            idx = np.ix_(list(b), list(b))
            A[idx] = np.eye(len(b)) if unipotent else A[idx] + 3 * np.eye(len(b))
        mats.append(A)
    return make_structure(formal, mats)


def coupled_system(rng: random.Random, max_ord: int = 2):
    """``diag(phi_i' + lambda_i/x)`` plus holomorphic monomials in both off-diagonal slots."""
    from stokeskit.formal import System
    while True:
        f1, f2 = pole_factor(rng, max_ord), ExponentialFactor.zero()
        if rng.random() < 0.5:
            f2 = pole_factor(rng, max_ord)
        if (f1 - f2).order > 0:
            break
    lams = [GaussRational(Fraction(rng.choice([0, 1, 1, 3]), 4), Fraction(rng.choice([0, 1]), 5))
            for _ in range(2)]
    diag = [f.derivative() + ExponentialFactor.monomial(lam, -1) for f, lam in zip((f1, f2), lams)]
    off = [ExponentialFactor.monomial(GaussRational(Fraction(rng.randint(1, 4), 2),
                                                    Fraction(rng.randint(-2, 2), 2)),
                                      rng.randint(0, 2)) for _ in range(2)]
    return System(((diag[0], off[0]), (off[1], diag[1])))
