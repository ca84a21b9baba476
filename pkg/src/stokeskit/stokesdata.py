"""Stokes structures: gluing matrices over a sector cover plus formal data.

Convention: with sectorial trivializations ``alpha_k``, the Stokes matrix at
overlap ``S_k  intersect  S_{k+1}`` is ``A_k = alpha_{k+1}^{-1} alpha_k`` and
the total monodromy is ``Mf @ A_N @ ... @ A_1``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .formal import FormalType
from .geometry import Sector, StokesDiagram, stokes_diagram, TWO_PI
from .sheafmodel import hom_shape


class StokesDataError(ValueError):
    def __init__(self, message: str, violations=None, raw=None):
        super().__init__(message)
        self.violations = violations or []
        self.raw = raw


@dataclass(frozen=True, eq=False)
class StokesStructure:
    formal: FormalType
    diagram: StokesDiagram
    matrices: tuple
    base_index: int = 1
    formal_monodromy: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.formal.rank

    @property
    def mf(self) -> np.ndarray:
        if self.formal_monodromy is not None:
            return np.asarray(self.formal_monodromy, dtype=complex)
        return self.formal.formal_monodromy()

    def to_json(self) -> dict:
        return {
            "formal": self.formal.to_json(),
            "lines": [d.theta for d in self.diagram.lines],
            "exact_lines": [d.label() for d in self.diagram.lines],
            "sectors": [s.to_json() for s in self.diagram.cover],
            "matrices": [matrix_to_json(A) for A in self.matrices],
            "base": self.base_index,
            "formal_monodromy": matrix_to_json(self.mf),
        }


def matrix_to_json(A) -> list:
    A = np.asarray(A, dtype=complex)
    return [[[float(z.real), float(z.imag)] for z in row] for row in A]


def matrix_from_json(obj) -> np.ndarray:
    rows = []
    for row in obj:
        rows.append([complex(z[0], z[1]) if isinstance(z, (list, tuple)) else complex(z) for z in row])
    return np.array(rows, dtype=complex)


def make_structure(formal: FormalType, matrices: Sequence, base_index: int = 1,
                   formal_monodromy=None, rho_max: float = 1.0) -> StokesStructure:
    diagram = stokes_diagram(formal.factors(), rho_max=rho_max)
    mats = tuple(np.array(A, dtype=complex) for A in matrices)
    if len(mats) != len(diagram.cover):
        raise StokesDataError(f"expected {len(diagram.cover)} matrices, got {len(mats)}")
    mf = None if formal_monodromy is None else np.array(formal_monodromy, dtype=complex)
    return StokesStructure(formal, diagram, mats, base_index, mf)


def structure_from_json(obj) -> StokesStructure:
    formal = FormalType.from_json(obj["formal"])
    mats = [matrix_from_json(A) for A in obj.get("matrices", [])]
    mf = obj.get("formal_monodromy")
    return make_structure(formal, mats, int(obj.get("base", 1)),
                          None if mf is None else matrix_from_json(mf))


# -- shapes -------------------------------------------------------------------

def overlap_for(diagram: StokesDiagram, position: int, base_index: int = 1) -> Sector:
    """Overlap sector carried by the stored matrix at ``position`` (0-based)."""
    n = len(diagram.cover)
    k = base_index - 1 + position
    turns, idx = divmod(k, n)
    return diagram.overlaps[idx].shifted(turns)


def block_mask(formal: FormalType, S: Sector) -> np.ndarray:
    """Boolean mask of entries allowed by the Hom shape of the items over ``S``."""
    shape = hom_shape(formal.factors(), S)
    blocks = formal.blocks()
    n = formal.rank
    mask = np.zeros((n, n), dtype=bool)
    for i, j in shape.allowed:
        mask[np.ix_(list(blocks[i - 1]), list(blocks[j - 1]))] = True
    return mask


def _block_diag_part(A: np.ndarray, formal: FormalType) -> np.ndarray:
    D = np.zeros_like(A)
    for b in formal.blocks():
        idx = np.ix_(list(b), list(b))
        D[idx] = A[idx]
    return D


def validate(S: StokesStructure, tol: float = 1e-12, normalized: bool = False) -> list[dict]:
    """Invariant violations of ``S`` (empty when valid).

    Checks invertibility and the overlap Hom shape of every matrix; with
    ``normalized`` also that diagonal blocks are identities.
    """
    out = []
    n = S.size
    if len(S.matrices) != len(S.diagram.cover):
        out.append({"matrix": None, "reason": "matrix count does not match the sector cover"})
        return out
    blocks = S.formal.blocks()
    for pos, A in enumerate(S.matrices):
        label = pos + 1
        if A.shape != (n, n):
            out.append({"matrix": label, "reason": f"shape {A.shape} != {(n, n)}"})
            continue
        scale = max(1.0, float(np.abs(A).max()))
        sv = np.linalg.svd(A, compute_uv=False)
        if sv[-1] <= tol * scale:
            out.append({"matrix": label, "reason": "not invertible"})
        mask = block_mask(S.formal, overlap_for(S.diagram, pos, S.base_index))
        for bi, rows in enumerate(blocks):
            for bj, cols in enumerate(blocks):
                idx = np.ix_(list(rows), list(cols))
                if not mask[idx].all() and np.abs(A[idx]).max() > tol * scale:
                    out.append({"matrix": label, "block": [bi + 1, bj + 1],
                                "reason": "entry outside the overlap Hom shape"})
                if normalized and bi == bj and np.abs(A[idx] - np.eye(len(rows))).max() > tol * scale:
                    out.append({"matrix": label, "block": [bi + 1, bj + 1],
                                "reason": "diagonal block is not the identity"})
    return out


def glue_monodromy(S: StokesStructure, check: bool = True) -> np.ndarray:
    """``Mf @ A_N @ ... @ A_1``, traversing the cover counterclockwise from the base sector."""
    if check:
        bad = validate(S, tol=1e-9)
        if bad:
            raise StokesDataError("invalid Stokes structure", bad)
    M = np.eye(S.size, dtype=complex)
    for A in S.matrices:
        M = A @ M
    return S.mf @ M


# -- trivializations ------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Trivialization:
    sector: int  # 1-based
    matrix: np.ndarray


def extract_from_cover(trivializations: Sequence[Trivialization], formal: FormalType,
                       closing: np.ndarray | None = None, formal_monodromy=None,
                       tol: float = 1e-9) -> StokesStructure:
    """``A_i = alpha_{i+1}^{-1} alpha_i`` around the cover.

    ``closing`` is the trivialization of the first sector after one
    counterclockwise turn; it defaults to ``alpha_1`` itself.
    """
    diagram = stokes_diagram(formal.factors())
    n = len(diagram.cover)
    alphas = sorted(trivializations, key=lambda t: t.sector)
    if [t.sector for t in alphas] != list(range(1, n + 1)):
        raise StokesDataError(f"need one trivialization for each of the {n} sectors")
    mats = [np.asarray(t.matrix, dtype=complex) for t in alphas]
    end = mats[0] if closing is None else np.asarray(closing, dtype=complex)
    chain = mats + [end]
    A = [np.linalg.solve(chain[k + 1], chain[k]) for k in range(n)]
    S = StokesStructure(formal, diagram, tuple(A), 1,
                        None if formal_monodromy is None else np.asarray(formal_monodromy, complex))
    bad = validate(S, tol=tol)
    if bad:
        raise StokesDataError("trivializations are inconsistent with the overlap Hom shapes", bad)
    return S


def trivializations_from(S: StokesStructure) -> tuple[list[Trivialization], np.ndarray]:
    """``alpha_1 = I``, ``alpha_{k+1} = alpha_k A_k^{-1}``; returns the cover and the closing matrix."""
    S1 = rebase(S, 1)
    alpha = np.eye(S.size, dtype=complex)
    out = []
    for k, A in enumerate(S1.matrices):
        out.append(Trivialization(k + 1, alpha))
        alpha = alpha @ np.linalg.inv(A)
    return out, alpha


# -- re-basing, normal form, equivalence ----------------------------------------

def rebase(S: StokesStructure, new_base: int) -> StokesStructure:
    """Same structure with the reference trivialization moved to sector ``new_base``."""
    n = len(S.matrices)
    if n == 0:
        return replace(S, base_index=1)
    if not 1 <= new_base <= n:
        raise ValueError("base index out of range")
    mf = S.mf
    mf_inv = np.linalg.inv(mf)
    b = S.base_index
    # recover A_1..A_N at base 1
    base1 = [None] * n
    for pos, B in enumerate(S.matrices):
        k = b - 1 + pos
        if k < n:
            base1[k] = B
        else:
            base1[k - n] = mf @ B @ mf_inv
    out = []
    for pos in range(n):
        k = new_base - 1 + pos
        out.append(base1[k] if k < n else mf_inv @ base1[k - n] @ mf)
    return StokesStructure(S.formal, S.diagram, tuple(out), new_base, S.formal_monodromy)


def normal_form(S: StokesStructure) -> StokesStructure:
    """Unipotent representative: diagonal blocks absorbed right to left, residue folded into Mf."""
    S1 = rebase(S, 1)
    if not S1.matrices:
        return S1
    h = np.eye(S.size, dtype=complex)
    out = []
    for A in S1.matrices:
        D = _block_diag_part(A @ h, S.formal)
        out.append(np.linalg.solve(D, A @ h))
        h = D
    for k, A in enumerate(out):
        for b in S.formal.blocks():
            idx = np.ix_(list(b), list(b))
            A[idx] = np.eye(len(b))
    return StokesStructure(S.formal, S.diagram, tuple(out), 1, S1.mf @ h)


def _block_perm_matrix(formal: FormalType, perm: Sequence[int]) -> np.ndarray:
    """Permutation P with ``(P^-1 A P)`` reordering items so that new item k is old item perm[k]."""
    blocks = formal.blocks()
    order = [i for k in perm for i in blocks[k]]
    n = formal.rank
    P = np.zeros((n, n))
    for new, old in enumerate(order):
        P[old, new] = 1.0
    return P


def _conjugator_exists(mats1, mats2, formal: FormalType, tol: float) -> bool:
    n = formal.rank
    basis = []
    for b in formal.blocks():
        for r in b:
            for c in b:
                E = np.zeros((n, n), dtype=complex)
                E[r, c] = 1
                basis.append(E)
    cols = []
    for E in basis:
        cols.append(np.concatenate([(E @ A1 - A2 @ E).ravel() for A1, A2 in zip(mats1, mats2)]))
    L = np.array(cols).T
    scale = max(1.0, max(float(np.abs(A).max()) for A in list(mats1) + list(mats2)))
    _, sv, vh = np.linalg.svd(L)
    null = [vh[k].conj() for k in range(len(basis)) if k >= len(sv) or sv[k] <= tol * scale]
    if not null:
        return False
    rng = np.random.default_rng(12345)
    for _ in range(8):
        w = rng.normal(size=len(null)) + 1j * rng.normal(size=len(null))
        coef = sum(wk * v for wk, v in zip(w, null))
        h = sum(c * E for c, E in zip(coef, basis))
        svh = np.linalg.svd(h, compute_uv=False)
        if svh[-1] > 1e-6 * svh[0]:
            resid = max(float(np.abs(h @ A1 - A2 @ h).max()) for A1, A2 in zip(mats1, mats2))
            if resid <= tol * scale * max(1.0, svh[0]) * 10:
                return True
    return False


def equivalent(S1: StokesStructure, S2: StokesStructure, tol: float = 1e-9) -> bool:
    """Same Stokes data up to block-diagonal change of trivialization, re-basing and item order."""
    if not S1.formal.same_as(S2.formal):
        raise StokesDataError("formal types differ")
    l1 = [d.theta for d in S1.diagram.lines]
    l2 = [d.theta for d in S2.diagram.lines]
    if len(l1) != len(l2) or any(abs(a - b) > 1e-9 for a, b in zip(l1, l2)):
        raise StokesDataError("Stokes diagrams differ")
    N1, N2 = normal_form(S1), normal_form(S2)
    items1, items2 = S1.formal.items, S2.formal.items
    for perm in itertools.permutations(range(len(items2))):
        if any(items2[perm[k]].key() != items1[k].key() for k in range(len(items1))):
            continue
        P = _block_perm_matrix(S2.formal, perm)
        Pi = P.T
        mats2 = [Pi @ A @ P for A in N2.matrices] + [Pi @ N2.mf @ P]
        if any(np.asarray(a).shape != np.asarray(b).shape for a, b in zip(N1.matrices, mats2)):
            continue
        mats1 = list(N1.matrices) + [N1.mf]
        if _conjugator_exists(mats1, mats2, S1.formal, tol):
            return True
    return False
