import numpy as np
import pytest

from conftest import random_state

from fhsim.lattice import build_geometry
from fhsim.fock import FockBasis, SpinSector, StateVector
from fhsim.hamiltonian import fh_local
from fhsim.circuits import plaquette_product_state
from fhsim.evolve import propagate_imag, propagate_real
from fhsim.optimize import exact_ground_state
from fhsim.qite import (ConditioningError, QiteConfig, QiteTrace, ShotConfig,
                        default_generators, exact_ite_reference, export_trace,
                        load_trace, measure_g_b, qlanczos_approx,
                        qlanczos_complete, regularized_solve, varqite_run)


@pytest.fixture(scope="module")
def dimer():
    g = build_geometry(1, 2)
    basis = FockBasis(g, SpinSector(1, 1))
    target = fh_local(g, 1.0, 8.0)
    return g, basis, target


def test_g_b_finite_differences(dimer):
    """g and b vs centered finite differences of the parametrized state."""
    g, basis, target = dimer
    psi = random_state(basis, 7)
    gens = default_generators(target)
    ops = [spec.operator(basis) for _, spec in gens]
    h_op = target.operator(basis)
    gmat, bvec, _ = measure_g_b(psi, gens, target)

    step = 1e-5

    def state_at(theta):
        out = psi
        for (name, spec), th in zip(gens, theta):
            if th >= 0:
                out = propagate_real(out, spec, th, tol=1e-12)
            else:
                out = propagate_real(out, spec.scaled(-1.0), -th, tol=1e-12)
        return out.amplitudes

    d = len(gens)
    derivs = []
    for mu in range(d):
        e = np.zeros(d)
        e[mu] = step
        derivs.append((state_at(e) - state_at(-e)) / (2 * step))
    # b_mu = -dE/dtheta_mu / 2
    for mu in range(d):
        e = np.zeros(d)
        e[mu] = step
        def energy(theta):
            v = state_at(theta)
            return np.vdot(v, h_op.apply(v)).real
        grad = (energy(e) - energy(-e)) / (2 * step)
        assert bvec[mu] == pytest.approx(-grad / 2, rel=1e-6, abs=1e-8)
    # g_uv = Re<d_u psi|d_v psi> - Re[<d_u psi|psi><psi|d_v psi>]
    for u in range(d):
        for v in range(d):
            ref = (np.vdot(derivs[u], derivs[v]).real
                   - (np.vdot(derivs[u], psi.amplitudes)
                      * np.vdot(psi.amplitudes, derivs[v])).real)
            assert gmat[u, v] == pytest.approx(ref, rel=1e-6, abs=1e-8)


def test_b_vanishes_on_real_states(dimer):
    """Time-reversal-invariant states are fixed points of the update."""
    g, basis, target = dimer
    rng = np.random.default_rng(3)
    v = rng.normal(size=basis.dim)
    psi = StateVector(basis, v / np.linalg.norm(v) + 0j)
    _, bvec, _ = measure_g_b(psi, default_generators(target), target)
    assert np.abs(bvec).max() < 1e-12


def test_b_zero_on_generator_eigenstate(dimer):
    g, basis, target = dimer
    gs = exact_ground_state(target, basis.sector, basis)
    _, bvec, _ = measure_g_b(gs.states[0], default_generators(target), target)
    assert np.abs(bvec).max() < 1e-10


def test_g_diagonal_is_variance_and_psd(dimer):
    g, basis, target = dimer
    psi = random_state(basis, 11)
    gens = default_generators(target)
    gmat, _, _ = measure_g_b(psi, gens, target)
    assert np.allclose(gmat, gmat.T)
    for k, (_, spec) in enumerate(gens):
        op = spec.operator(basis)
        hpsi = op.apply(psi.amplitudes)
        var = np.vdot(hpsi, hpsi).real - op.expectation(psi) ** 2
        assert gmat[k, k] == pytest.approx(var, abs=1e-10)
        assert gmat[k, k] >= -1e-10
    assert np.linalg.eigvalsh(gmat).min() >= -1e-8


def test_ground_state_is_fixed_point(dimer):
    g, basis, target = dimer
    gs = exact_ground_state(target, basis.sector, basis)
    trace = varqite_run(gs.states[0], target, QiteConfig(dtau=0.1, n_steps=5))
    assert np.abs(np.array(trace.thetas)).max() < 1e-6
    assert np.ptp(trace.energies) < 1e-8


def test_varqite_tracks_exact_ite(dimer):
    g, basis, target = dimer
    gs = exact_ground_state(target, basis.sector, basis)
    psi0 = propagate_real(gs.states[0], target.hop_part(), 0.1)
    trace = varqite_run(psi0, target, QiteConfig(dtau=0.02, n_steps=25))
    ref = exact_ite_reference(psi0, target, 0.02, 25)
    assert np.abs(np.array(trace.energies) - ref).max() < 2e-4
    assert trace.monotone


def test_exact_ite_monotone_and_flat_on_eigenstate(dimer):
    g, basis, target = dimer
    gs = exact_ground_state(target, basis.sector, basis)
    flat = exact_ite_reference(gs.states[0], target, 0.1, 10)
    assert np.ptp(flat) < 1e-10
    x = random_state(basis, 13)
    curve = exact_ite_reference(x, target, 0.1, 30)
    assert all(a >= b - 1e-10 for a, b in zip(curve, curve[1:]))
    assert curve[-1] == pytest.approx(gs.energy, abs=1e-4)


def test_ite_reaches_ground_state_2x2():
    g = build_geometry(2, 2)
    basis = FockBasis(g, SpinSector(2, 2))
    target = fh_local(g, 1.0, 8.0)
    gs = exact_ground_state(target, basis.sector, basis)
    x = random_state(basis, 17)
    curve = exact_ite_reference(x, target, 0.5, 120)
    assert curve[-1] == pytest.approx(gs.energy, abs=1e-8)


def test_regularized_solve_and_conditioning_error():
    g = np.array([[1.0, 0.0], [0.0, 1e-12]])
    b = np.array([1.0, 1.0])
    x = regularized_solve(g, b, 1e-6, 1e-8)
    assert x[0] == pytest.approx(1.0, rel=1e-5)
    assert abs(x[1]) < 1e-3        # the near-null direction is suppressed
    with pytest.raises(ConditioningError):
        regularized_solve(np.zeros((2, 2)), b, 0.0, 1e-8)


def test_c_chain_matches_decay_factors(dimer):
    """The first-order normalization recursion vs recorded decay factors."""
    g, basis, target = dimer
    op = target.operator(basis)
    psi = random_state(basis, 19)
    dtau = 0.02
    trace = QiteTrace(dtau, ["Ht", "HU"])
    log_decay = [0.0]
    cur = psi.normalized()
    e0 = op.expectation(cur)
    for k in range(20):
        trace.record(k * dtau, op.expectation(cur), 0.0, [0, 0], None, None)
        cur, decay = propagate_imag(cur, target, dtau, operator=op)
        log_decay.append(log_decay[-1] + np.log(decay))
    # chain c_alpha ~ prod 1/decay up to the energy-shift anchor
    c_model = 0.5 * np.asarray(trace.log_c2)
    c_ref = -np.asarray(log_decay[:-1]) - dtau * e0 * np.arange(20)
    assert np.abs(np.diff(c_model) - np.diff(c_ref)).max() < 5 * dtau**2


def _ite_trace(psi0, target, dtau, n):
    es, states = exact_ite_reference(psi0, target, dtau, n, keep_states=True)
    tr = QiteTrace(dtau, ["Ht", "HU"])
    tr.states = states
    for k in range(n + 1):
        tr.record(k * dtau, float(es[k]), 0.0, [0.0, 0.0], None, None)
    return tr


def test_qlanczos_single_record(dimer):
    g, basis, target = dimer
    psi = random_state(basis, 23)
    tr = _ite_trace(psi, target, 0.1, 0)
    assert qlanczos_approx(tr).energy == pytest.approx(tr.energies[0])
    assert qlanczos_complete(tr, target).energy == pytest.approx(tr.energies[0],
                                                                 abs=1e-10)


def test_qlanczos_never_worse_than_best_sample(dimer):
    g, basis, target = dimer
    psi = random_state(basis, 29)
    tr = _ite_trace(psi, target, 0.1, 12)
    best = min(tr.energies)
    assert qlanczos_approx(tr).energy <= best + 1e-8
    assert qlanczos_complete(tr, target).energy <= best + 1e-8


def test_qlanczos_sanity_above_ground_energy(dimer):
    g, basis, target = dimer
    gs = exact_ground_state(target, basis.sector, basis)
    psi = random_state(basis, 31)
    tr = _ite_trace(psi, target, 0.1, 16)
    assert qlanczos_approx(tr).energy >= gs.energy - 1e-6
    assert qlanczos_complete(tr, target).energy >= gs.energy - 1e-6


def test_qlanczos_approx_complete_converge_together():
    g = build_geometry(2, 2)
    basis = FockBasis(g, SpinSector(2, 2))
    target = fh_local(g, 1.0, 8.0)
    psi0 = propagate_real(plaquette_product_state(g, 32.0, basis),
                          target.hop_part(), 0.1)
    gaps = []
    for dtau in (0.2, 0.1, 0.05):
        tr = _ite_trace(psi0, target, dtau, int(round(0.8 / dtau)))
        gaps.append(abs(qlanczos_approx(tr).energy
                        - qlanczos_complete(tr, target).energy))
    assert gaps[0] > gaps[1] > gaps[2]
    slope = np.log2(gaps[0] / gaps[2]) / 2
    assert 0.7 <= slope <= 1.3


def test_target_resource_separation():
    """Adding V to the target changes measurements, not the generators."""
    g = build_geometry(2, 2)
    basis = FockBasis(g, SpinSector(2, 2))
    local = fh_local(g, 1.0, 8.0)
    extended = local.with_v(2.0)
    gens_local = default_generators(local)
    gens_ext = default_generators(extended)
    assert [n for n, _ in gens_ext] == [n for n, _ in gens_local]
    for (_, a), (_, b) in zip(gens_local, gens_ext):
        assert a.bond_tunnelings == b.bond_tunnelings
        assert a.u == b.u and a.v == b.v == 0.0
    psi = random_state(basis, 37)
    _, b_loc, _ = measure_g_b(psi, gens_local, local)
    _, b_ext, _ = measure_g_b(psi, gens_ext, extended)
    assert not np.allclose(b_loc, b_ext)    # measured objects do change


def test_seed_quench_recorded_in_time(dimer):
    g, basis, target = dimer
    gs = exact_ground_state(target, basis.sector, basis)
    cfg = QiteConfig(dtau=0.05, n_steps=2, seed_quench=(0.2, 0.1))
    trace = varqite_run(gs.states[0], target, cfg)
    assert trace.physical_time >= 0.3


def test_trace_export_roundtrip(tmp_path, dimer):
    g, basis, target = dimer
    psi0 = propagate_real(exact_ground_state(target, basis.sector,
                                             basis).states[0],
                          target.hop_part(), 0.2)
    trace = varqite_run(psi0, target, QiteConfig(dtau=0.05, n_steps=4))
    export_trace(trace, tmp_path / "trace")
    back = load_trace(tmp_path / "trace")
    assert back.dtau == trace.dtau
    assert np.allclose(back.energies, trace.energies)
    assert np.allclose(back.log_c2, trace.log_c2)
    assert np.allclose(back.thetas, trace.thetas)
    assert qlanczos_approx(back).energy == pytest.approx(
        qlanczos_approx(trace).energy)


def test_stored_state_guard(dimer):
    g, basis, target = dimer
    psi = random_state(basis, 41)
    cfg = QiteConfig(dtau=0.01, n_steps=60, store_states=True, max_stored=50)
    with pytest.raises(Exception):
        varqite_run(psi, target, cfg)
