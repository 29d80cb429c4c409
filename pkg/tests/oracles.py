"""Independent dense Jordan-Wigner oracle used to validate the sector engine.

Everything here is built from explicit 2^(2N) x 2^(2N) mode operators, with
no reference to the package's hop maps or sign conventions beyond the global
mode ordering (up modes 0..N-1 by site, then down modes N..2N-1).
"""

from __future__ import annotations

import numpy as np

_SM = np.array([[0.0, 1.0], [0.0, 0.0]])   # sigma^- : annihilates |1>
_Z = np.diag([1.0, -1.0])
_I2 = np.eye(2)


def annihilation_ops(n_modes: int) -> list[np.ndarray]:
    """Dense JW annihilation operators; mode 0 is the least significant bit.

    Basis index bit p holds the occupation of mode p, matching the package's
    word encoding.  The JW string acts on modes below p.
    """
    ops = []
    for p in range(n_modes):
        mats = []
        for q in range(n_modes - 1, -1, -1):   # kron builds from the top mode down
            if q > p:
                mats.append(_I2)
            elif q == p:
                mats.append(_SM)
            else:
                mats.append(_Z)
        full = mats[0]
        for m in mats[1:]:
            full = np.kron(full, m)
        ops.append(full)
    return ops


def dense_spec_matrix(spec, n_sites: int) -> np.ndarray:
    """Full-Fock dense matrix of a HamiltonianSpec (2 spins, 2N modes)."""
    n_modes = 2 * n_sites
    a = annihilation_ops(n_modes)
    num = [op.conj().T @ op for op in a]
    dim = 2 ** n_modes
    h = np.zeros((dim, dim), dtype=complex)

    def hop_matrix(i, j, t):
        out = np.zeros((dim, dim), dtype=complex)
        for spin_off in (0, n_sites):
            ci, cj = a[i + spin_off], a[j + spin_off]
            h_ij = ci.conj().T @ cj
            out += -t * (h_ij + h_ij.conj().T)
        return out

    for (i, j), t in spec.bond_tunnelings.items():
        h += hop_matrix(i, j, t)
    for (i, j), t in spec.nnn.items():
        h += hop_matrix(i, j, t)
    if spec.u:
        for s in range(n_sites):
            h += spec.u * num[s] @ num[s + n_sites]
    if spec.v:
        for (i, j) in spec.geometry.nn_bonds:
            ni = num[i] + num[i + n_sites]
            nj = num[j] + num[j + n_sites]
            h += spec.v * ni @ nj
    if spec.mu is not None:
        for s in range(n_sites):
            h += spec.mu[0][s] * num[s] + spec.mu[1][s] * num[s + n_sites]
    return h


def sector_indices(basis) -> np.ndarray:
    """Full-Fock indices of the sector basis states, in basis order."""
    n = basis.geometry.n_sites
    idx = []
    for k in range(basis.dim):
        up, dn = basis.config(k)
        idx.append(up | (dn << n))
    return np.array(idx)


def dense_sector_matrix(spec, basis) -> np.ndarray:
    """Dense sector-projected matrix in the package's basis ordering."""
    h = dense_spec_matrix(spec, basis.geometry.n_sites)
    idx = sector_indices(basis)
    return h[np.ix_(idx, idx)]
