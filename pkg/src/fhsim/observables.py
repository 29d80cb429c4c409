"""Spin correlators, structure factor and charge profile of a state.

The structure factor follows the ladder reading of the x-axis formula:
connected same-leg correlators, averaged over the legs,

    S_m(k) = (1/rows) sum_y sum_{x,x'} e^{ik(x-x')} [<Sz_xy Sz_x'y> - <Sz_xy><Sz_x'y>]

on the discrete grid k = 2 pi m / cols.  This is the power spectrum of the
per-leg spin fluctuations, so it is real and non-negative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fock import StateVector


@dataclass
class ObservableReport:
    sz_mean: np.ndarray          # <Sz_i> per site
    sz_corr: np.ndarray          # <Sz_i Sz_j> matrix
    k_grid: np.ndarray
    structure_factor: np.ndarray
    density_profile: np.ndarray  # rung-summed <n_x>
    energy: float | None = None


def _sz_site_matrix(state: StateVector) -> np.ndarray:
    """(dim, n_sites) matrix of Sz eigenvalues per configuration."""
    basis = state.basis
    du, dd = basis.shape
    up = basis.occ_up[:, None, :]      # (Du, 1, N)
    dn = basis.occ_down[None, :, :]    # (1, Dd, N)
    return (0.5 * (up - dn)).reshape(du * dd, -1)


def spin_correlations(state: StateVector):
    """(<Sz_i>, <Sz_i Sz_j>) from the diagonal Sz operators."""
    p = np.abs(state.amplitudes) ** 2
    sz = _sz_site_matrix(state)
    mean = p @ sz
    corr = (sz * p[:, None]).T @ sz
    return mean, corr


def structure_factor(state: StateVector):
    """(k grid, S_m(k)) along x; connected, same-leg, leg-averaged."""
    geometry = state.basis.geometry
    rows, cols = geometry.rows, geometry.cols
    mean, corr = spin_correlations(state)
    conn = corr - np.outer(mean, mean)
    ks = 2.0 * np.pi * np.arange(cols) / cols
    out = np.zeros(cols)
    for m, k in enumerate(ks):
        phase = np.exp(1j * k * np.arange(cols))
        acc = 0.0
        for y in range(rows):
            sites = [geometry.site(x, y) for x in range(cols)]
            block = conn[np.ix_(sites, sites)]
            acc += np.real(phase.conj() @ block @ phase)
        out[m] = acc / rows
    return ks, out


def density_profile(state: StateVector) -> np.ndarray:
    """Rung-summed site occupations <n_x> along the ladder."""
    basis = state.basis
    geometry = basis.geometry
    p = np.abs(state.amplitudes) ** 2
    du, dd = basis.shape
    up = basis.occ_up[:, None, :]
    dn = basis.occ_down[None, :, :]
    n = (up + dn).reshape(du * dd, -1)
    site_density = p @ n
    return np.array([
        sum(site_density[geometry.site(x, y)] for y in range(geometry.rows))
        for x in range(geometry.cols)
    ])


def dominant_wavelength(profile: np.ndarray) -> float:
    """Wavelength of the strongest nonzero Fourier mode of a profile."""
    f = np.fft.rfft(profile - profile.mean())
    mags = np.abs(f)
    mags[0] = 0.0
    m = int(np.argmax(mags))
    if m == 0:
        return float("inf")
    return len(profile) / m


def observable_report(state: StateVector, energy: float | None = None) -> ObservableReport:
    mean, corr = spin_correlations(state)
    ks, sm = structure_factor(state)
    return ObservableReport(mean, corr, ks, sm, density_profile(state), energy)
