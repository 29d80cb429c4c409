import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fhsim.lattice import build_geometry
from fhsim.fock import FockBasis, SpinSector, StateVector
from fhsim.hamiltonian import fh_local
from fhsim.circuits import (apply_circuit, dimer_stage_circuit, initial_state,
                            plaquette_stage_circuit)
from fhsim.optimize import minimize_energy, stage_optimizer_config

CACHE_FILE = Path(__file__).parent / ".tile_cache.json"


def random_state(basis, seed=0) -> StateVector:
    rng = np.random.default_rng(seed)
    v = rng.normal(size=basis.dim) + 1j * rng.normal(size=basis.dim)
    return StateVector(basis, v / np.linalg.norm(v))


@pytest.fixture(scope="session")
def tile_params():
    """Stage-1/2 tile parameters at U/t = 8, optimized once per session."""
    if CACHE_FILE.exists():
        d = json.loads(CACHE_FILE.read_text())
        return {k: np.array(v) for k, v in d.items()}
    g1 = build_geometry(1, 2)
    b1 = FockBasis(g1, SpinSector(1, 1))
    r1 = minimize_energy(dimer_stage_circuit(g1, 3),
                         initial_state("neel", g1, b1),
                         fh_local(g1, 1.0, 8.0),
                         stage_optimizer_config("dimer", 11))
    g2 = build_geometry(2, 2)
    b2 = FockBasis(g2, SpinSector(2, 2))
    s1 = apply_circuit(initial_state("neel", g2, b2),
                       dimer_stage_circuit(g2, 3), r1.parameters)
    r2 = minimize_energy(plaquette_stage_circuit(g2, 8.0, 3), s1,
                         fh_local(g2, 1.0, 8.0),
                         stage_optimizer_config("plaquette", 7))
    out = {"dimer": r1.parameters, "plaquette": r2.parameters}
    CACHE_FILE.write_text(json.dumps({k: list(map(float, v))
                                      for k, v in out.items()}))
    return out
