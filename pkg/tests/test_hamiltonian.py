import numpy as np
import pytest

from conftest import random_state
from oracles import dense_sector_matrix

from fhsim.lattice import build_geometry
from fhsim.fock import FockBasis, SpinSector, basis_state
from fhsim.hamiltonian import (HamiltonianSpec, ParameterError,
                               doped_protocol_hamiltonian, fh_local,
                               fswap_hamiltonian, ft_hamiltonian,
                               nnn_hamiltonian, resource_step_hamiltonian,
                               staggered_mu)
from fhsim.circuits import doped_stripe_layout


def test_fh_local_term_counts():
    g = build_geometry(2, 4)
    spec = fh_local(g, t=1.0, u=8.0)
    assert len(spec.bond_tunnelings) == 10     # x2 spins when applied
    assert spec.u == 8.0
    assert spec.mu is None


def test_tight_binding_dimer():
    g = build_geometry(1, 2)
    basis = FockBasis(g, SpinSector(1, 0))
    h = fh_local(g, t=1.0, u=0.0).operator(basis).dense()
    assert np.linalg.eigvalsh(h)[0] == pytest.approx(-1.0)


def test_large_staggered_field_has_neel_ground_state():
    g = build_geometry(2, 2)
    basis = FockBasis(g, SpinSector(2, 2))
    spec = resource_step_hamiltonian(0, g, mu=50.0)
    vals, vecs = np.linalg.eigh(spec.operator(basis).dense())
    up = sum(1 << s for s in range(4) if g.parity(s) == 1)
    dn = sum(1 << s for s in range(4) if g.parity(s) == -1)
    k = basis.index(up, dn)
    assert abs(vecs[k, 0]) == pytest.approx(1.0)
    assert vals[1] - vals[0] > 1.0     # nondegenerate


def _specs_equal(a: HamiltonianSpec, b: HamiltonianSpec) -> bool:
    if set(a.bond_tunnelings) != set(b.bond_tunnelings):
        return False
    if any(abs(a.bond_tunnelings[k] - b.bond_tunnelings[k]) > 1e-12
           for k in a.bond_tunnelings):
        return False
    mu_a = np.zeros((2, a.geometry.n_sites)) if a.mu is None else a.mu
    mu_b = np.zeros((2, b.geometry.n_sites)) if b.mu is None else b.mu
    return (a.u == b.u and a.v == b.v and np.allclose(mu_a, mu_b)
            and a.nnn == b.nnn)


def test_step1_with_zero_t_is_pinning_field():
    g = build_geometry(2, 4)
    s1 = resource_step_hamiltonian(1, g, t=0.0, u=0.0, mu=10.0)
    s0 = resource_step_hamiltonian(0, g, mu=10.0)
    basis = FockBasis(g, SpinSector(4, 4))
    d = s1.operator(basis).dense() - s0.operator(basis).dense()
    assert np.abs(d).max() < 1e-12


def test_step2_with_equal_couplings_is_intra_plaquette_fh():
    g = build_geometry(2, 4)
    s2 = resource_step_hamiltonian(2, g, t=1.0, u=8.0, ttilde=1.0)
    ref = fh_local(g, 1.0, 8.0, bonds=g.bonds("intra-plaquette"))
    assert _specs_equal(s2, ref)


def test_step3_with_equal_couplings_is_full_fh():
    g = build_geometry(2, 4)
    s3 = resource_step_hamiltonian(3, g, t=1.0, u=8.0, ttilde=1.0)
    assert _specs_equal(s3, fh_local(g, 1.0, 8.0))


def test_step_validation():
    g = build_geometry(2, 4)
    with pytest.raises(ParameterError):
        resource_step_hamiltonian(5, g)
    with pytest.raises(ParameterError):
        resource_step_hamiltonian(2, build_geometry(2, 3))


def test_doped_uniform_limit():
    g = build_geometry(2, 6)
    layout = doped_stripe_layout(g, doping=1 / 3)
    spec = doped_protocol_hamiltonian(g, ttilde=1.0, delta=0.0,
                                      link_set=layout.link_bonds,
                                      empty_sites=layout.empty_sites)
    assert _specs_equal(spec, fh_local(g, 1.0, 8.0))


def test_doped_stripe_pattern():
    g = build_geometry(2, 6)
    layout = doped_stripe_layout(g, doping=1 / 3)
    assert layout.empty_columns == (1, 4)      # non-consecutive rungs
    assert len(layout.empty_sites) == 4
    spec = doped_protocol_hamiltonian(g, 1.0, 1.0, layout.link_bonds,
                                      layout.empty_sites)
    for s in range(g.n_sites):
        want = 4.0 if s in layout.empty_sites else 0.0
        assert spec.mu[0][s] == want and spec.mu[1][s] == want


def test_doped_bad_links_rejected():
    g = build_geometry(2, 6)
    with pytest.raises(ParameterError):
        doped_protocol_hamiltonian(g, 1.0, 1.0, [(0, 7)], [2])


def test_fswap_single_particle_spectrum():
    g = build_geometry(1, 2)
    basis = FockBasis(g, SpinSector(1, 0))
    h = fswap_hamiltonian(g, (0, 1)).operator(basis).dense()
    assert np.allclose(np.linalg.eigvalsh(h), [-4.0, -2.0])


def test_ft_diagonal_at_zero_hopping():
    g = build_geometry(1, 2)
    basis = FockBasis(g, SpinSector(1, 1))
    h = ft_hamiltonian(g, (0, 1), 0.0, 1.0, 2.0).operator(basis).dense()
    assert np.abs(h - np.diag(np.diag(h))).max() < 1e-14


def test_free_fermion_band_energy():
    """U=0 ground energy equals the filled single-particle band sum."""
    g = build_geometry(2, 3)
    spec = fh_local(g, 1.0, 0.0)
    n = g.n_sites
    single = np.zeros((n, n))
    for (i, j), t in spec.bond_tunnelings.items():
        single[i, j] = single[j, i] = -t
    bands = np.linalg.eigvalsh(single)
    from fhsim.optimize import exact_ground_state
    for (nu, nd) in [(3, 3), (2, 1)]:
        gs = exact_ground_state(spec, SpinSector(nu, nd))
        expect = bands[:nu].sum() + bands[:nd].sum()
        assert gs.energy == pytest.approx(expect, abs=1e-8)


def test_spec_algebra_and_validation():
    g = build_geometry(2, 2)
    spec = fh_local(g, 1.0, 8.0)
    ext = spec.with_nnn(-0.25).with_v(2.0)
    assert len(ext.nnn) == 2 and ext.v == 2.0
    assert ext.hop_part().u == 0.0
    assert ext.diagonal_part().is_diagonal()
    with pytest.raises(ParameterError):
        HamiltonianSpec(g, {(0, 3): 1.0})     # (0,3) is a diagonal, not NN
    with pytest.raises(ParameterError):
        nnn_hamiltonian(g, 0.1, orientation=3)


def test_all_builders_hermitian_and_number_conserving():
    rng = np.random.default_rng(2)
    g = build_geometry(2, 2)
    basis = FockBasis(g, SpinSector(2, 1))
    specs = [
        fh_local(g, 1.2, 8.0, "staggered-spin", 3.0),
        resource_step_hamiltonian(1, g, 0.7, 5.0, 2.0),
        resource_step_hamiltonian(2, g, 1.0, 8.0, ttilde=0.4),
        fswap_hamiltonian(g, (0, 1)),
        ft_hamiltonian(g, (0, 1), 0.3, 0.5, -0.7),
        nnn_hamiltonian(g, -0.25),
    ]
    for spec in specs:
        h = dense_sector_matrix(spec, basis)
        assert np.abs(h - h.conj().T).max() < 1e-12
        mine = spec.operator(basis).dense()
        assert np.abs(mine - h).max() < 1e-12
