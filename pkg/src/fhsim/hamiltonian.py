"""Parametrized Hamiltonians: local/extended Fermi-Hubbard and gate generators.

All couplings are dimensionless in units of the reference tunneling t.
Specs are Hermitian by construction: every bond coupling multiplies the
symmetrized hop c^+_i c_j + c^+_j c_i, and all diagonal weights are real.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import Bond, GeometryError, LatticeGeometry
from .fock import DOWN, UP, FockBasis, SectorOperator


class ParameterError(ValueError):
    """Raised for invalid protocol/coupling parameters."""


def _norm_bond(b) -> Bond:
    i, j = b
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class HamiltonianSpec:
    """Bond-resolved tunnelings plus diagonal interaction/potential terms.

    H = - sum_{b,s} t_b (c^+ c + h.c.) - sum_{b',s} tp_b' (c^+ c + h.c.)
        + U sum_i n_iu n_id + V sum_<ij> n_i n_j + sum_{i,s} mu_{i,s} n_{i,s}
    """

    geometry: LatticeGeometry
    bond_tunnelings: dict[Bond, float] = field(default_factory=dict)
    u: float = 0.0
    v: float = 0.0
    mu: np.ndarray | None = None          # shape (2, n_sites): [up, down]
    nnn: dict[Bond, float] = field(default_factory=dict)

    def __post_init__(self):
        nn = set(self.geometry.nn_bonds)
        for b in self.bond_tunnelings:
            if _norm_bond(b) not in nn:
                raise ParameterError(f"{b} is not a NN bond of the geometry")
        nnn = set(self.geometry.nnn_bonds)
        for b in self.nnn:
            if _norm_bond(b) not in nnn:
                raise ParameterError(f"{b} is not a NNN bond of the geometry")
        if self.mu is not None and self.mu.shape != (2, self.geometry.n_sites):
            raise ParameterError("mu must have shape (2, n_sites)")

    # -- algebra --------------------------------------------------------------

    def scaled(self, factor: float) -> "HamiltonianSpec":
        return HamiltonianSpec(
            self.geometry,
            {b: factor * t for b, t in self.bond_tunnelings.items()},
            factor * self.u, factor * self.v,
            None if self.mu is None else factor * self.mu,
            {b: factor * t for b, t in self.nnn.items()},
        )

    def plus(self, other: "HamiltonianSpec") -> "HamiltonianSpec":
        if other.geometry != self.geometry:
            raise ParameterError("cannot add specs on different geometries")
        bt = dict(self.bond_tunnelings)
        for b, t in other.bond_tunnelings.items():
            bt[b] = bt.get(b, 0.0) + t
        nnn = dict(self.nnn)
        for b, t in other.nnn.items():
            nnn[b] = nnn.get(b, 0.0) + t
        mu = None
        if self.mu is not None or other.mu is not None:
            mu = np.zeros((2, self.geometry.n_sites))
            if self.mu is not None:
                mu += self.mu
            if other.mu is not None:
                mu += other.mu
        return HamiltonianSpec(self.geometry, bt, self.u + other.u,
                               self.v + other.v, mu, nnn)

    def with_nnn(self, tprime: float) -> "HamiltonianSpec":
        return self.plus(nnn_hamiltonian(self.geometry, tprime))

    def with_v(self, v: float) -> "HamiltonianSpec":
        return HamiltonianSpec(self.geometry, dict(self.bond_tunnelings),
                               self.u, self.v + v, self.mu, dict(self.nnn))

    def diagonal_part(self) -> "HamiltonianSpec":
        return HamiltonianSpec(self.geometry, {}, self.u, self.v, self.mu, {})

    def hop_part(self) -> "HamiltonianSpec":
        return HamiltonianSpec(self.geometry, dict(self.bond_tunnelings),
                               0.0, 0.0, None, dict(self.nnn))

    def is_diagonal(self) -> bool:
        return not self.bond_tunnelings and not self.nnn

    # -- compilation ----------------------------------------------------------

    def operator(self, basis: FockBasis) -> SectorOperator:
        if basis.geometry != self.geometry:
            raise ParameterError("basis geometry does not match spec")
        hops = []
        for bonds in (self.bond_tunnelings, self.nnn):
            for b, t in bonds.items():
                if t == 0.0:
                    continue
                b = _norm_bond(b)
                for spin in (UP, DOWN):
                    src, dst, sign = basis.hop_map(b, spin)
                    hops.append((spin, src, dst, (-t) * sign))
        diag = self._diagonal_matrix(basis)
        return SectorOperator(basis, hops, diag)

    def _diagonal_matrix(self, basis: FockBasis) -> np.ndarray | None:
        n = self.geometry.n_sites
        d_up = np.zeros(basis.shape[0])
        d_dn = np.zeros(basis.shape[1])
        mixed = None
        have = False
        if self.mu is not None and np.any(self.mu):
            d_up += basis.number_vector(self.mu[UP], UP)
            d_dn += basis.number_vector(self.mu[DOWN], DOWN)
            have = True
        if self.u != 0.0:
            mixed = self.u * basis.updown_matrix(np.eye(n))
            have = True
        if self.v != 0.0:
            bonds = self.geometry.nn_bonds
            d_up += self.v * basis.same_spin_pair_vector(bonds, UP)
            d_dn += self.v * basis.same_spin_pair_vector(bonds, DOWN)
            w = np.zeros((n, n))
            for a, b in bonds:
                w[a, b] += self.v
                w[b, a] += self.v
            cross = basis.updown_matrix(w)
            mixed = cross if mixed is None else mixed + cross
            have = True
        if not have:
            return None
        diag = d_up[:, None] + d_dn[None, :]
        if mixed is not None:
            diag = diag + mixed
        return diag


# -- chemical-potential patterns ----------------------------------------------

def staggered_mu(geometry: LatticeGeometry, mu: float) -> np.ndarray:
    """-mu (-1)^(x+y) (n_up - n_down): the antiferromagnetic pinning field."""
    signs = np.array([geometry.parity(s) for s in range(geometry.n_sites)],
                     dtype=float)
    return np.stack([-mu * signs, mu * signs])


def uniform_mu(geometry: LatticeGeometry, mu: float) -> np.ndarray:
    return np.full((2, geometry.n_sites), mu, dtype=float)


def site_mu(geometry: LatticeGeometry, sites, value: float) -> np.ndarray:
    out = np.zeros((2, geometry.n_sites))
    for s in sites:
        out[:, s] = value
    return out


def _mu_from_pattern(geometry, pattern, value) -> np.ndarray | None:
    if pattern is None or value == 0.0:
        return None
    if pattern == "uniform":
        return uniform_mu(geometry, value)
    if pattern == "staggered-spin":
        return staggered_mu(geometry, value)
    raise ParameterError(f"unknown mu pattern {pattern!r}")


# -- model builders -------------------------------------------------------------

def fh_local(geometry: LatticeGeometry, t: float = 1.0, u: float = 0.0,
             mu_pattern: str | None = None, mu_value: float = 0.0,
             bonds=None) -> HamiltonianSpec:
    """Local FH model with uniform NN tunneling on the given bonds (default all)."""
    if bonds is None:
        bonds = geometry.nn_bonds
    return HamiltonianSpec(
        geometry, {(_norm_bond(b)): t for b in bonds}, u, 0.0,
        _mu_from_pattern(geometry, mu_pattern, mu_value), {})


def nnn_hamiltonian(geometry: LatticeGeometry, tprime: float,
                    orientation: int | None = None) -> HamiltonianSpec:
    """NNN tunneling; orientation 1/2 selects one diagonal family."""
    if orientation is None:
        bonds = geometry.nnn_bonds
    elif orientation in (1, 2):
        bonds = geometry.bonds(f"nnn-diag-{orientation}")
    else:
        raise ParameterError("orientation must be 1, 2 or None")
    return HamiltonianSpec(geometry, {}, 0.0, 0.0, None,
                           {b: tprime for b in bonds})


def resource_step_hamiltonian(step: int, geometry: LatticeGeometry,
                              t: float = 1.0, u: float = 8.0,
                              mu: float = 10.0,
                              ttilde: float = 1.0,
                              dimer_bonds=None) -> HamiltonianSpec:
    """Quench generators of the staged half-filled preparation.

    step 0: staggered pinning field only; step 1: dimer-restricted hops
    plus U plus the pinning field; step 2: adds rung hops ttilde; step 3:
    intra-plaquette hops t and inter-plaquette hops ttilde.
    """
    if step not in (0, 1, 2, 3):
        raise ParameterError(f"invalid protocol step {step}")
    if step >= 2 and (geometry.rows != 2 or geometry.cols % 2):
        raise ParameterError("steps 2 and 3 need a 2xL ladder with even L")
    if step == 0:
        return HamiltonianSpec(geometry, {}, 0.0, 0.0,
                               staggered_mu(geometry, mu), {})
    if dimer_bonds is None:
        dimer_bonds = geometry.bonds("dimer")
    if step == 1:
        return HamiltonianSpec(geometry, {b: t for b in dimer_bonds}, u, 0.0,
                               staggered_mu(geometry, mu), {})
    if step == 2:
        bt = {b: t for b in dimer_bonds}
        for b in geometry.bonds("rung"):
            bt[b] = ttilde
        return HamiltonianSpec(geometry, bt, u, 0.0, None, {})
    bt = {b: t for b in geometry.bonds("intra-plaquette")}
    for b in geometry.bonds("inter-plaquette"):
        bt[b] = ttilde
    return HamiltonianSpec(geometry, bt, u, 0.0, None, {})


def doped_protocol_hamiltonian(geometry: LatticeGeometry, ttilde: float,
                               delta: float, link_set, empty_sites,
                               t: float = 1.0, u: float = 8.0,
                               mu_empty: float = 4.0) -> HamiltonianSpec:
    """Connector generator for doped stripes: weak links plus empty-site bias."""
    links = {_norm_bond(b) for b in link_set}
    nn = set(geometry.nn_bonds)
    if not links <= nn:
        raise ParameterError("link_set must be a subset of the NN bonds")
    bt = {b: (ttilde if b in links else t) for b in geometry.nn_bonds}
    return HamiltonianSpec(geometry, bt, u, 0.0,
                           site_mu(geometry, empty_sites, delta * mu_empty), {})


def fswap_hamiltonian(geometry: LatticeGeometry, bond: Bond,
                      t: float = 1.0) -> HamiltonianSpec:
    """Generator whose quench for T = pi/(2t) swaps the atomic states of a bond."""
    i, j = _norm_bond(bond)
    mu = np.zeros((2, geometry.n_sites))
    mu[:, i] = -3.0 * t
    mu[:, j] = -3.0 * t
    return HamiltonianSpec(geometry, {(i, j): t}, 0.0, 0.0, mu, {})


def fswap_layer_hamiltonian(geometry: LatticeGeometry, bonds,
                            t: float = 1.0) -> HamiltonianSpec:
    """Sum of fSWAP generators over site-disjoint bonds."""
    sites = [s for b in bonds for s in b]
    if len(set(sites)) != len(sites):
        raise ParameterError("fSWAP layer bonds must be site-disjoint")
    mu = np.zeros((2, geometry.n_sites))
    for s in sites:
        mu[:, s] = -3.0 * t
    return HamiltonianSpec(geometry, {_norm_bond(b): t for b in bonds},
                           0.0, 0.0, mu, {})


def ft_hamiltonian(geometry: LatticeGeometry, bond: Bond, theta: float,
                   mu1: float, mu2: float) -> HamiltonianSpec:
    """Single-bond tunneling/detuning generator used to compile basis rotations.

    mu1 attaches to the first site of the bond as given, mu2 to the second.
    """
    i, j = bond
    mu = np.zeros((2, geometry.n_sites))
    mu[:, i] = -mu1
    mu[:, j] = -mu2
    return HamiltonianSpec(geometry, {_norm_bond(bond): theta}, 0.0, 0.0, mu, {})
