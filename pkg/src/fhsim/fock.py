"""Sector-restricted fermionic Fock space and matrix-free operator action.

Global mode ordering: up-spin modes for sites 0..N-1 first, then
down-spin modes N..2N-1.  Same-spin hops therefore only ever cross
same-spin modes, and their Jordan-Wigner sign is the parity of the
occupied sites strictly between the two bond sites.

A basis state is a pair of bit words (up_word, down_word); the flat
amplitude index is up_index * n_down_words + down_index, so the
amplitude vector reshapes to a (D_up, D_down) matrix on which up-spin
terms act on rows and down-spin terms on columns.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb
from pathlib import Path

import numpy as np

from .lattice import Bond, LatticeGeometry, build_geometry

UP, DOWN = 0, 1

DIMENSION_CAP = 10**7


class BasisError(ValueError):
    """Raised on sector/dimension problems or basis mismatches."""


@dataclass(frozen=True)
class SpinSector:
    n_up: int
    n_down: int

    def validate(self, n_sites: int) -> None:
        if not (0 <= self.n_up <= n_sites and 0 <= self.n_down <= n_sites):
            raise BasisError(f"sector {self} invalid for {n_sites} sites")


def _spin_words(n_sites: int, n_part: int) -> np.ndarray:
    words = []
    for occ in itertools.combinations(range(n_sites), n_part):
        w = 0
        for s in occ:
            w |= 1 << s
        words.append(w)
    return np.array(sorted(words), dtype=np.uint64)


def _occupations(words: np.ndarray, n_sites: int) -> np.ndarray:
    occ = np.zeros((len(words), n_sites), dtype=np.float64)
    for s in range(n_sites):
        occ[:, s] = (words >> np.uint64(s)) & np.uint64(1)
    return occ


class FockBasis:
    """Occupation basis of one (n_up, n_down) sector with O(1) lookup."""

    def __init__(self, geometry: LatticeGeometry, sector: SpinSector,
                 dimension_cap: int = DIMENSION_CAP):
        sector.validate(geometry.n_sites)
        n = geometry.n_sites
        dim = comb(n, sector.n_up) * comb(n, sector.n_down)
        if dim > dimension_cap:
            raise BasisError(f"dimension {dim} exceeds cap {dimension_cap}")
        self.geometry = geometry
        self.sector = sector
        self.up_words = _spin_words(n, sector.n_up)
        self.down_words = _spin_words(n, sector.n_down)
        self.occ_up = _occupations(self.up_words, n)
        self.occ_down = _occupations(self.down_words, n)
        self.dim = len(self.up_words) * len(self.down_words)
        self._hop_cache: dict = {}
        self._pair_cache: dict = {}

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.up_words), len(self.down_words)

    def index(self, up_word: int, down_word: int) -> int:
        iu = int(np.searchsorted(self.up_words, np.uint64(up_word)))
        idn = int(np.searchsorted(self.down_words, np.uint64(down_word)))
        if (iu >= len(self.up_words) or self.up_words[iu] != up_word
                or idn >= len(self.down_words) or self.down_words[idn] != down_word):
            raise BasisError("configuration outside sector")
        return iu * len(self.down_words) + idn

    def config(self, k: int) -> tuple[int, int]:
        iu, idn = divmod(k, len(self.down_words))
        return int(self.up_words[iu]), int(self.down_words[idn])

    # -- cached structure maps ------------------------------------------------

    def hop_map(self, bond: Bond, spin: int):
        """(src, dst, sign) index arrays realizing c^+_i c_j (j -> i), i<j."""
        i, j = bond
        if i > j:
            i, j = j, i
        key = (i, j, spin)
        if key not in self._hop_cache:
            words = self.up_words if spin == UP else self.down_words
            bi, bj = np.uint64(1 << i), np.uint64(1 << j)
            between = np.uint64(((1 << j) - 1) ^ ((1 << (i + 1)) - 1))
            src = np.nonzero(((words & bj) != 0) & ((words & bi) == 0))[0]
            flipped = words[src] ^ (bi | bj)
            dst = np.searchsorted(words, flipped)
            sign = 1.0 - 2.0 * (np.bitwise_count(words[src] & between) & 1)
            self._hop_cache[key] = (src, dst.astype(np.intp), sign.astype(np.float64))
        return self._hop_cache[key]

    def bond_blocks(self, bond: Bond, spin: int):
        """Index structure of a two-mode bond gate: singles, doubles, parity."""
        i, j = bond
        if i > j:
            i, j = j, i
        key = ("blk", i, j, spin)
        if key not in self._hop_cache:
            words = self.up_words if spin == UP else self.down_words
            bi, bj = np.uint64(1 << i), np.uint64(1 << j)
            between = np.uint64(((1 << j) - 1) ^ ((1 << (i + 1)) - 1))
            occ_i = (words & bi) != 0
            occ_j = (words & bj) != 0
            only_i = np.nonzero(occ_i & ~occ_j)[0]
            partner = np.searchsorted(words, words[only_i] ^ (bi | bj)).astype(np.intp)
            both = np.nonzero(occ_i & occ_j)[0]
            eta = 1.0 - 2.0 * (np.bitwise_count(words[only_i] & between) & 1)
            self._hop_cache[key] = (only_i, partner, eta.astype(np.float64), both)
        return self._hop_cache[key]

    def updown_matrix(self, weights: np.ndarray) -> np.ndarray:
        """(D_up, D_down) matrix of sum_{a,b} W[a,b] n_{a,up} n_{b,down}."""
        key = weights.tobytes()
        if key not in self._pair_cache:
            self._pair_cache[key] = self.occ_up @ weights @ self.occ_down.T
        return self._pair_cache[key]

    def same_spin_pair_vector(self, pairs, spin: int) -> np.ndarray:
        """Vector of sum_{(a,b) in pairs} n_a n_b over one spin's words."""
        occ = self.occ_up if spin == UP else self.occ_down
        out = np.zeros(occ.shape[0])
        for a, b in pairs:
            out += occ[:, a] * occ[:, b]
        return out

    def number_vector(self, weights: np.ndarray, spin: int) -> np.ndarray:
        occ = self.occ_up if spin == UP else self.occ_down
        return occ @ weights


class StateVector:
    """Complex amplitudes over a FockBasis."""

    def __init__(self, basis: FockBasis, amplitudes: np.ndarray | None = None):
        self.basis = basis
        if amplitudes is None:
            amplitudes = np.zeros(basis.dim, dtype=np.complex128)
        amplitudes = np.asarray(amplitudes, dtype=np.complex128)
        if amplitudes.shape != (basis.dim,):
            raise BasisError("amplitude length does not match basis dimension")
        self.amplitudes = amplitudes

    def copy(self) -> "StateVector":
        return StateVector(self.basis, self.amplitudes.copy())

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def normalized(self) -> "StateVector":
        n = self.norm()
        if n == 0.0:
            raise BasisError("cannot normalize the zero state")
        return StateVector(self.basis, self.amplitudes / n)

    def as_matrix(self) -> np.ndarray:
        return self.amplitudes.reshape(self.basis.shape)


def basis_state(basis: FockBasis, up_word: int, down_word: int) -> StateVector:
    psi = StateVector(basis)
    psi.amplitudes[basis.index(up_word, down_word)] = 1.0
    return psi


def enumerate_basis(geometry: LatticeGeometry, sector: SpinSector,
                    dimension_cap: int = DIMENSION_CAP) -> FockBasis:
    return FockBasis(geometry, sector, dimension_cap)


def overlap(a: StateVector, b: StateVector) -> complex:
    if a.basis is not b.basis and (
            a.basis.geometry != b.basis.geometry or a.basis.sector != b.basis.sector):
        raise BasisError("overlap requires states on the same basis")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


CSR_DIM_CAP = 500_000


class SectorOperator:
    """Hermitian operator compiled to vectorized row/column actions.

    hops: list of (spin, src, dst, signed coefficients); each entry applies
    coeff * c^+_dst c_src plus the Hermitian transpose (real coefficients).
    diag: (D_up, D_down) real matrix added elementwise.

    For moderate dimensions the action is additionally compiled to one CSR
    matrix on first use; the matrix is cached on the instance, so reusing
    one operator across many applications amortizes the build.
    """

    def __init__(self, basis: FockBasis, hops, diag: np.ndarray | None):
        self.basis = basis
        self.hops = hops
        self.diag = diag
        self._csr = None

    def _build_csr(self):
        from scipy.sparse import csr_matrix
        du, dd = self.basis.shape
        dim = self.basis.dim
        rows, cols, data = [], [], []
        col_ids = np.arange(dd, dtype=np.intp)
        row_ids = np.arange(du, dtype=np.intp) * dd
        for spin, src, dst, coeff in self.hops:
            if spin == UP:
                r = (dst[:, None] * dd + col_ids[None, :]).ravel()
                c = (src[:, None] * dd + col_ids[None, :]).ravel()
                d = np.repeat(coeff, dd)
            else:
                r = (row_ids[None, :] + dst[:, None]).ravel()
                c = (row_ids[None, :] + src[:, None]).ravel()
                d = np.tile(coeff, (du, 1)).T.ravel()
            rows.append(r)
            cols.append(c)
            data.append(d)
            rows.append(c)
            cols.append(r)
            data.append(d)
        if self.diag is not None:
            idx = np.arange(dim, dtype=np.intp)
            rows.append(idx)
            cols.append(idx)
            data.append(self.diag.ravel())
        if not rows:
            return csr_matrix((dim, dim), dtype=np.float64)
        return csr_matrix((np.concatenate(data),
                           (np.concatenate(rows), np.concatenate(cols))),
                          shape=(dim, dim))

    def apply(self, amplitudes: np.ndarray) -> np.ndarray:
        if self.basis.dim <= CSR_DIM_CAP:
            if self._csr is None:
                self._csr = self._build_csr()
            return self._csr @ amplitudes
        a = amplitudes.reshape(self.basis.shape)
        out = np.zeros_like(a)
        if self.diag is not None:
            np.multiply(self.diag, a, out=out)
        for spin, src, dst, coeff in self.hops:
            if spin == UP:
                out[dst, :] += coeff[:, None] * a[src, :]
                out[src, :] += coeff[:, None] * a[dst, :]
            else:
                out[:, dst] += coeff[None, :] * a[:, src]
                out[:, src] += coeff[None, :] * a[:, dst]
        return out.reshape(amplitudes.shape)

    def apply_state(self, state: StateVector) -> StateVector:
        return StateVector(self.basis, self.apply(state.amplitudes))

    def expectation(self, state: StateVector) -> float:
        val = np.vdot(state.amplitudes, self.apply(state.amplitudes))
        return float(val.real)

    def matrix_element(self, bra: StateVector, ket: StateVector) -> complex:
        return complex(np.vdot(bra.amplitudes, self.apply(ket.amplitudes)))

    def dense(self) -> np.ndarray:
        eye = np.eye(self.basis.dim, dtype=np.complex128)
        cols = [self.apply(eye[:, k]) for k in range(self.basis.dim)]
        return np.column_stack(cols)


def expectation(state: StateVector, operator: SectorOperator) -> float:
    return operator.expectation(state)


def apply_bond_unitary(state: StateVector, bond: Bond, spin: int,
                       u: np.ndarray, in_place: bool = False) -> StateVector:
    """Apply a two-mode Gaussian gate with single-particle matrix u.

    u is given in the (p, q) mode basis with p < q the sorted bond sites.
    Empty pairs are untouched, doubly occupied pairs pick up det(u), and
    the singly occupied pair rotates with the Jordan-Wigner parity of the
    modes between p and q folded into the off-diagonal elements.
    """
    psi = state if in_place else state.copy()
    a = psi.amplitudes.reshape(psi.basis.shape)
    only_i, partner, eta, both = psi.basis.bond_blocks(bond, spin)
    det = u[0, 0] * u[1, 1] - u[0, 1] * u[1, 0]
    if spin == UP:
        vi = a[only_i, :].copy()
        vj = a[partner, :].copy()
        a[only_i, :] = u[0, 0] * vi + (eta[:, None] * u[0, 1]) * vj
        a[partner, :] = (eta[:, None] * u[1, 0]) * vi + u[1, 1] * vj
        a[both, :] *= det
    else:
        vi = a[:, only_i].copy()
        vj = a[:, partner].copy()
        a[:, only_i] = u[0, 0] * vi + (eta[None, :] * u[0, 1]) * vj
        a[:, partner] = (eta[None, :] * u[1, 0]) * vi + u[1, 1] * vj
        a[:, both] *= det
    return psi


def save_state(state: StateVector, path: str | Path) -> None:
    g, s = state.basis.geometry, state.basis.sector
    np.savez(path, amplitudes=state.amplitudes, rows=g.rows, cols=g.cols,
             n_up=s.n_up, n_down=s.n_down)


def load_state(path: str | Path) -> StateVector:
    data = np.load(path)
    geometry = build_geometry(int(data["rows"]), int(data["cols"]))
    basis = FockBasis(geometry, SpinSector(int(data["n_up"]), int(data["n_down"])))
    return StateVector(basis, data["amplitudes"])
