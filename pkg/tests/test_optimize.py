import numpy as np
import pytest

from conftest import random_state

from fhsim.lattice import build_geometry
from fhsim.fock import FockBasis, SpinSector, basis_state
from fhsim.hamiltonian import HamiltonianSpec, fh_local, staggered_mu
from fhsim.circuits import (VariationalCircuit, dimer_stage_circuit,
                            initial_state)
from fhsim.optimize import (OptimizerConfig, exact_ground_state, merit_report,
                            minimize_energy)


def test_dimer_analytic_ground_energy():
    g = build_geometry(1, 2)
    gs = exact_ground_state(fh_local(g, 1.0, 8.0), SpinSector(1, 1))
    assert gs.energy == pytest.approx((8 - np.sqrt(80)) / 2, abs=1e-10)
    assert gs.energy == pytest.approx(-0.47214, abs=1e-5)


def test_mott_limit():
    g = build_geometry(2, 2)
    gs = exact_ground_state(fh_local(g, 1.0, 1e3), SpinSector(2, 2))
    assert -0.1 < gs.energy < 0.0


def test_pinned_neel_ground_state():
    g = build_geometry(2, 2)
    spec = HamiltonianSpec(g, {}, 0.0, 0.0, staggered_mu(g, 2.0))
    gs = exact_ground_state(spec, SpinSector(2, 2))
    basis = gs.states[0].basis
    up = sum(1 << s for s in range(4) if g.parity(s) == 1)
    dn = sum(1 << s for s in range(4) if g.parity(s) == -1)
    assert abs(gs.states[0].amplitudes[basis.index(up, dn)]) == pytest.approx(1.0)


def test_degenerate_subspace_detection():
    """t = 0 at U = 0: every configuration is degenerate at E = 0."""
    g = build_geometry(1, 2)
    spec = HamiltonianSpec(g, {})
    gs = exact_ground_state(spec, SpinSector(1, 1))
    assert len(gs.states) == 4
    x = random_state(gs.states[0].basis, 0)
    assert gs.projection_norm(x) == pytest.approx(1.0, abs=1e-10)


def test_iterative_solver_matches_dense():
    g = build_geometry(2, 4)
    spec = fh_local(g, 1.0, 8.0)
    gs = exact_ground_state(spec, SpinSector(4, 4))     # dim 4900 -> eigsh
    assert gs.energy == pytest.approx(-3.0259193, abs=1e-5)


def test_merit_zero_on_ground_state():
    g = build_geometry(1, 2)
    spec = fh_local(g, 1.0, 8.0)
    gs = exact_ground_state(spec, SpinSector(1, 1))
    rep = merit_report(gs.states[0], spec, gs, 1.0)
    assert rep.residual < 1e-10 and rep.infidelity < 1e-10


def test_zero_parameter_circuit_returns_initial_merit():
    g = build_geometry(1, 2)
    basis = FockBasis(g, SpinSector(1, 1))
    psi = initial_state("neel", g, basis)
    spec = fh_local(g, 1.0, 8.0)
    res = minimize_energy(VariationalCircuit(()), psi, spec)
    ref = merit_report(psi, spec, exact_ground_state(spec, basis.sector, basis))
    assert res.report.energy == pytest.approx(ref.energy)
    assert res.report.infidelity == pytest.approx(ref.infidelity)


def test_monotone_best_history_and_restart_determinism():
    g = build_geometry(1, 2)
    basis = FockBasis(g, SpinSector(1, 1))
    psi = initial_state("neel", g, basis)
    spec = fh_local(g, 1.0, 8.0)
    cfg = OptimizerConfig(restarts=2, max_evaluations=300, seed=42)
    res1 = minimize_energy(dimer_stage_circuit(g, 2), psi, spec, cfg)
    hist = res1.best_energy_history
    assert all(a >= b - 1e-15 for a, b in zip(hist, hist[1:]))
    res2 = minimize_energy(dimer_stage_circuit(g, 2), psi, spec, cfg)
    assert np.array_equal(res1.parameters, res2.parameters)


def test_budget_exhaustion_flagged():
    g = build_geometry(1, 2)
    basis = FockBasis(g, SpinSector(1, 1))
    psi = initial_state("neel", g, basis)
    cfg = OptimizerConfig(restarts=1, max_evaluations=10, polish_rounds=0)
    res = minimize_energy(dimer_stage_circuit(g, 3), psi, fh_local(g, 1.0, 8.0),
                          cfg)
    assert not res.report.converged
    assert res.report.n_evaluations <= 2 * 10 + 4
