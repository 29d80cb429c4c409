"""Variational quench circuits, initial-state recipes and protocol programs.

A circuit layer is one global quench exp(-i T H(couplings)).  The reference
tunneling inside each quench is frozen at 1 (units of t), so the layer's
duration T is itself the canonical hopping coordinate T*t and the remaining
variational couplings enter through the products T*lambda.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.linalg import eigh

from .lattice import Bond, GeometryError, LatticeGeometry, build_geometry
from .fock import FockBasis, SpinSector, StateVector, basis_state
from .hamiltonian import (
    HamiltonianSpec,
    ParameterError,
    doped_protocol_hamiltonian,
    fh_local,
    resource_step_hamiltonian,
)
from .evolve import DEFAULT_TOL, Schedule, Segment, propagate_real, run_schedule


@dataclass(frozen=True)
class CircuitLayer:
    label: str
    builder: object                      # couplings -> HamiltonianSpec
    fixed: dict[str, float]
    variable: tuple[str, ...]            # includes "T" unless frozen in fixed

    @property
    def n_parameters(self) -> int:
        return len(self.variable)

    def values(self, params) -> dict[str, float]:
        v = dict(self.fixed)
        v.update(zip(self.variable, params))
        return v

    def apply(self, state: StateVector, params, tol: float = DEFAULT_TOL) -> StateVector:
        v = self.values(params)
        duration = v.pop("T")
        if duration == 0.0:
            return state.copy()
        spec = self.builder(**v)
        if duration < 0:
            # a reversed quench is a forward quench of the sign-flipped
            # generator, still inside the native gate set
            return propagate_real(state, spec.scaled(-1.0), -duration, tol)
        return propagate_real(state, spec, duration, tol)


@dataclass(frozen=True)
class VariationalCircuit:
    layers: tuple[CircuitLayer, ...]

    @property
    def n_parameters(self) -> int:
        return sum(l.n_parameters for l in self.layers)

    def split(self, params) -> list[np.ndarray]:
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_parameters,):
            raise ParameterError(
                f"expected {self.n_parameters} parameters, got {params.shape}")
        out, k = [], 0
        for l in self.layers:
            out.append(params[k:k + l.n_parameters])
            k += l.n_parameters
        return out

    def physical_time(self, params) -> float:
        total = 0.0
        for layer, p in zip(self.layers, self.split(params)):
            total += abs(layer.values(p)["T"])
        return total


def apply_circuit(state: StateVector, circuit: VariationalCircuit, params,
                  tol: float = DEFAULT_TOL) -> StateVector:
    psi = state
    for layer, p in zip(circuit.layers, circuit.split(params)):
        psi = layer.apply(psi, p, tol)
    return psi


# -- layer builders ---------------------------------------------------------------

def dimer_stage_circuit(geometry: LatticeGeometry, depth: int = 3,
                        dimer_bonds=None) -> VariationalCircuit:
    """Stage-1 quenches: dimer hops t=1, variable (T, U, mu)."""
    bonds = tuple(dimer_bonds) if dimer_bonds is not None else geometry.bonds("dimer")

    def build(u, mu):
        return resource_step_hamiltonian(1, geometry, t=1.0, u=u, mu=mu,
                                         dimer_bonds=bonds)

    layer = CircuitLayer("dimer-quench", build, {}, ("T", "u", "mu"))
    return VariationalCircuit((layer,) * depth)


def plaquette_stage_circuit(geometry: LatticeGeometry, u: float = 8.0,
                            depth: int = 3, dimer_bonds=None,
                            rung_bonds=None) -> VariationalCircuit:
    """Stage-2 quenches: frozen dimer hops and U, variable (T, ttilde) on rungs."""
    dimers = tuple(dimer_bonds) if dimer_bonds is not None else geometry.bonds("dimer")
    rungs = tuple(rung_bonds) if rung_bonds is not None else geometry.bonds("rung")

    def build(ttilde):
        bt = {b: 1.0 for b in dimers}
        for b in rungs:
            bt[b] = ttilde
        return HamiltonianSpec(geometry, bt, u, 0.0, None, {})

    layer = CircuitLayer("plaquette-quench", build, {}, ("T", "ttilde"))
    return VariationalCircuit((layer,) * depth)


def fusion_stage_circuit(geometry: LatticeGeometry, u: float = 8.0,
                         depth: int = 3) -> VariationalCircuit:
    """Stage-3 quenches: frozen intra-plaquette hops and U, variable inter coupling."""

    def build(ttilde):
        return resource_step_hamiltonian(3, geometry, t=1.0, u=u, ttilde=ttilde)

    layer = CircuitLayer("fusion-quench", build, {}, ("T", "ttilde"))
    return VariationalCircuit((layer,) * depth)


def doped_link_circuit(geometry: LatticeGeometry, link_bonds, empty_sites,
                       u: float = 8.0, depth: int = 2,
                       mu_empty: float = 4.0) -> VariationalCircuit:
    """Connector quenches of the doped protocol, variable (T, ttilde, Delta)."""
    links = tuple(link_bonds)
    empties = tuple(empty_sites)

    def build(ttilde, delta):
        return doped_protocol_hamiltonian(geometry, ttilde, delta, links,
                                          empties, t=1.0, u=u, mu_empty=mu_empty)

    layer = CircuitLayer("link-quench", build, {}, ("T", "ttilde", "delta"))
    return VariationalCircuit((layer,) * depth)


def generator_circuit(generators: list[tuple[str, HamiltonianSpec]]) -> VariationalCircuit:
    """One layer exp(-i theta H) per named generator; theta is the parameter."""
    layers = []
    for name, spec in generators:
        layers.append(CircuitLayer(name, lambda spec=spec: spec, {}, ("T",)))
    return VariationalCircuit(tuple(layers))


# -- initial states ---------------------------------------------------------------

def neel_words(geometry: LatticeGeometry) -> tuple[int, int]:
    up = dn = 0
    for s in range(geometry.n_sites):
        if geometry.parity(s) == 1:
            up |= 1 << s
        else:
            dn |= 1 << s
    return up, dn


@dataclass(frozen=True)
class StripeLayout:
    """Doped-stripe bookkeeping for a 2xL ladder."""
    empty_columns: tuple[int, ...]
    empty_sites: tuple[int, ...]
    link_bonds: tuple[Bond, ...]
    dimer_bonds: tuple[Bond, ...]      # stage-1 tiles: edge rungs + plaquette dimers
    plaquette_rungs: tuple[Bond, ...]  # stage-2 couplers inside plaquette tiles


def doped_stripe_layout(geometry: LatticeGeometry,
                        empty_columns=None, doping: float | None = None) -> StripeLayout:
    """Stripe pattern of emptied rungs with wavelength 1/doping.

    Default placement puts empty rungs at columns c with c mod (1/doping)
    == (1/doping) - 2, symmetric about the ladder center for 2x6 at 1/3.
    """
    if geometry.rows != 2:
        raise GeometryError("stripe layouts need a 2-leg ladder")
    if empty_columns is None:
        if doping is None:
            raise ParameterError("need empty_columns or doping")
        lam = 1.0 / doping
        if abs(lam - round(lam)) > 1e-9:
            raise ParameterError("1/doping must be an integer column count")
        lam = int(round(lam))
        empty_columns = [c for c in range(geometry.cols) if c % lam == lam - 2]
    empty_columns = tuple(sorted(empty_columns))
    empty = set(empty_columns)
    if any(c < 0 or c >= geometry.cols for c in empty):
        raise ParameterError("empty column out of range")
    empty_sites = tuple(geometry.site(c, y) for c in empty_columns for y in (0, 1))

    links = []
    for c in empty:
        for cn in (c - 1, c + 1):
            if 0 <= cn < geometry.cols and cn not in empty:
                for y in (0, 1):
                    a, b = geometry.site(cn, y), geometry.site(c, y)
                    links.append((min(a, b), max(a, b)))
    # occupied column runs: length-1 runs are rung dimers, length-2 runs plaquettes
    runs, run = [], []
    for c in range(geometry.cols):
        if c in empty:
            if run:
                runs.append(run)
            run = []
        else:
            run.append(c)
    if run:
        runs.append(run)
    dimers, rungs = [], []
    for run in runs:
        if len(run) == 1:
            c = run[0]
            dimers.append((geometry.site(c, 0), geometry.site(c, 1)))
        elif len(run) == 2:
            for y in (0, 1):
                a, b = geometry.site(run[0], y), geometry.site(run[1], y)
                dimers.append((min(a, b), max(a, b)))
            for c in run:
                rungs.append((geometry.site(c, 0), geometry.site(c, 1)))
        else:
            raise ParameterError(
                f"occupied run {run} is not a dimer or 2x2 plaquette tile")
    return StripeLayout(empty_columns, empty_sites, tuple(sorted(links)),
                        tuple(dimers), tuple(rungs))


_plaquette_gs_cache: dict[float, dict] = {}


def _plaquette_gs(u: float) -> dict:
    """Exact 2x2 half-filled FH ground state amplitudes keyed by words."""
    if u not in _plaquette_gs_cache:
        tile = build_geometry(2, 2)
        basis = FockBasis(tile, SpinSector(2, 2))
        h = fh_local(tile, t=1.0, u=u).operator(basis).dense()
        vals, vecs = eigh(h)
        amp = vecs[:, 0]
        amps = {}
        for k in range(basis.dim):
            if abs(amp[k]) > 1e-14:
                amps[basis.config(k)] = complex(amp[k])
        _plaquette_gs_cache[u] = {"amps": amps, "energy": float(vals[0])}
    return _plaquette_gs_cache[u]


def plaquette_product_state(geometry: LatticeGeometry, u: float,
                            basis: FockBasis | None = None) -> StateVector:
    """Tensor product of exact 2x2 FH ground states over the plaquette tiling.

    Every plaquette carries a fixed (2,2) particle content, so the fermionic
    reordering sign between the tiled and the global mode ordering is one
    overall constant and is dropped.
    """
    if geometry.rows != 2 or geometry.cols % 2:
        raise GeometryError("plaquette product needs a 2xL ladder, L even")
    n_plaq = geometry.cols // 2
    tile = _plaquette_gs(u)["amps"]
    if basis is None:
        basis = FockBasis(geometry, SpinSector(geometry.n_sites // 2,
                                               geometry.n_sites // 2))
    psi = StateVector(basis)
    items = list(tile.items())

    def rec(p, up, dn, amp):
        if p == n_plaq:
            psi.amplitudes[basis.index(up, dn)] = amp
            return
        for (tu, td), a in items:
            rec(p + 1, up | (tu << (4 * p)), dn | (td << (4 * p)), amp * a)

    rec(0, 0, 0, 1.0 + 0.0j)
    return psi


def initial_state(recipe, geometry: LatticeGeometry,
                  basis: FockBasis | None = None) -> StateVector:
    """Build a named product initial state.

    recipe: "neel", {"kind": "doped-stripe", "empty_columns"/"doping": ...} or
    {"kind": "plaquette-product", "u": U}.
    """
    if isinstance(recipe, str):
        recipe = {"kind": recipe}
    kind = recipe["kind"]
    if kind == "neel":
        up, dn = neel_words(geometry)
    elif kind == "doped-stripe":
        layout = doped_stripe_layout(geometry, recipe.get("empty_columns"),
                                     recipe.get("doping"))
        up, dn = neel_words(geometry)
        for s in layout.empty_sites:
            up &= ~(1 << s)
            dn &= ~(1 << s)
    elif kind == "plaquette-product":
        return plaquette_product_state(geometry, float(recipe["u"]), basis)
    else:
        raise ParameterError(f"unknown initial-state recipe {kind!r}")
    if basis is None:
        basis = FockBasis(geometry, SpinSector(bin(up).count("1"),
                                               bin(dn).count("1")))
    else:
        want = SpinSector(bin(up).count("1"), bin(dn).count("1"))
        if basis.sector != want:
            raise ParameterError(f"recipe sector {want} != basis {basis.sector}")
    return basis_state(basis, up, dn)


# -- protocol programs -------------------------------------------------------------

@dataclass
class Stage:
    name: str
    target: HamiltonianSpec
    circuit: VariationalCircuit | None = None
    parameters: np.ndarray | None = None
    schedule: Schedule | None = None
    schedule_builder: object = None
    schedule_dt: float = 0.01

    def is_circuit(self) -> bool:
        return self.circuit is not None


@dataclass
class ProtocolProgram:
    geometry: LatticeGeometry
    initial_recipe: object
    stages: list[Stage]
    target: HamiltonianSpec


@dataclass
class StageResult:
    name: str
    state: StateVector
    physical_time: float


def run_program(program: ProtocolProgram, basis: FockBasis | None = None,
                tol: float = DEFAULT_TOL) -> list[StageResult]:
    psi = initial_state(program.initial_recipe, program.geometry, basis)
    results = [StageResult("initial", psi, 0.0)]
    for stage in program.stages:
        if stage.is_circuit():
            if stage.parameters is None:
                raise ParameterError(f"stage {stage.name!r} has no parameters; "
                                     "optimize it or load a pre-compiled set")
            psi = apply_circuit(psi, stage.circuit, stage.parameters, tol)
            dt_phys = stage.circuit.physical_time(stage.parameters)
        else:
            psi = run_schedule(psi, stage.schedule_builder, stage.schedule,
                               stage.schedule_dt, tol)
            dt_phys = stage.schedule.total_time
        results.append(StageResult(stage.name, psi, dt_phys))
    return results


def build_hyva_program(geometry: LatticeGeometry, filling: str, u: float = 8.0,
                       mode: str = "fully-variational", depth: int = 3,
                       ramp_times=None, doped_layout: StripeLayout | None = None,
                       mu0: float = 10.0) -> ProtocolProgram:
    """Assemble the staged preparation program.

    filling "half": dimer stage, plaquette stage, fusion stage; the last two
    may be replaced by adiabatic ramps (modes "hyva-1-2", "hyva-2-3").
    filling "doped": tile stage(s) plus the link connector, variational or
    as the two-segment adiabatic fusion (mode "hyva").
    """
    if geometry.rows != 2 or geometry.cols % 2:
        raise GeometryError("HyVA programs need a 2xL ladder with even L")
    ramp_times = ramp_times or {}

    if filling == "half":
        target = fh_local(geometry, t=1.0, u=u)
        dimer_target = fh_local(geometry, t=1.0, u=u,
                                bonds=geometry.bonds("dimer"))
        plaq_target = fh_local(geometry, t=1.0, u=u,
                               bonds=geometry.bonds("intra-plaquette"))
        stages = [Stage("dimer", dimer_target,
                        circuit=dimer_stage_circuit(geometry, depth))]
        if mode == "hyva-1-2":
            t2 = float(ramp_times.get("stage2", 5.0))

            def build2(ttilde):
                return resource_step_hamiltonian(2, geometry, t=1.0, u=u,
                                                 ttilde=ttilde)

            stages.append(Stage("plaquette", plaq_target,
                                schedule=Schedule((Segment(t2, {"ttilde": 0.0},
                                                           {"ttilde": 1.0}),)),
                                schedule_builder=build2))
        else:
            stages.append(Stage("plaquette", plaq_target,
                                circuit=plaquette_stage_circuit(geometry, u, depth)))
        if mode == "hyva-2-3":
            t3 = float(ramp_times.get("stage3", 5.0))

            def build3(ttilde):
                return resource_step_hamiltonian(3, geometry, t=1.0, u=u,
                                                 ttilde=ttilde)

            stages.append(Stage("fusion", target,
                                schedule=Schedule((Segment(t3, {"ttilde": 0.0},
                                                           {"ttilde": 1.0}),)),
                                schedule_builder=build3))
        else:
            stages.append(Stage("fusion", target,
                                circuit=fusion_stage_circuit(geometry, u, depth)))
        return ProtocolProgram(geometry, "neel", stages, target)

    if filling == "doped":
        layout = doped_layout or doped_stripe_layout(geometry, doping=1.0 / 3.0)
        recipe = {"kind": "doped-stripe", "empty_columns": list(layout.empty_columns)}
        target = fh_local(geometry, t=1.0, u=u)
        tile_bonds = layout.dimer_bonds
        dimer_target = fh_local(geometry, t=1.0, u=u, bonds=tile_bonds)
        tile_target = fh_local(geometry, t=1.0, u=u,
                               bonds=tile_bonds + layout.plaquette_rungs)
        stages = [Stage("tile-dimer", dimer_target,
                        circuit=dimer_stage_circuit(geometry, depth,
                                                    dimer_bonds=tile_bonds))]
        if layout.plaquette_rungs:
            stages.append(Stage("tile-plaquette", tile_target,
                                circuit=plaquette_stage_circuit(
                                    geometry, u, depth, dimer_bonds=tile_bonds,
                                    rung_bonds=layout.plaquette_rungs)))
        if mode == "hyva":
            t1 = float(ramp_times.get("link", 10.0))
            t2 = float(ramp_times.get("mu", 10.0))

            def build_link(ttilde, delta):
                return doped_protocol_hamiltonian(geometry, ttilde, delta,
                                                  layout.link_bonds,
                                                  layout.empty_sites, t=1.0, u=u)

            sched = Schedule((
                Segment(t1, {"ttilde": 0.0, "delta": 1.0},
                        {"ttilde": 1.0, "delta": 1.0}),
                Segment(t2, {"ttilde": 1.0, "delta": 1.0},
                        {"ttilde": 1.0, "delta": 0.0}),
            ))
            stages.append(Stage("link", target, schedule=sched,
                                schedule_builder=build_link))
        else:
            stages.append(Stage("link", target,
                                circuit=doped_link_circuit(
                                    geometry, layout.link_bonds,
                                    layout.empty_sites, u,
                                    depth=int(ramp_times.get("link_depth", 2)))))
        return ProtocolProgram(geometry, recipe, stages, target)

    raise ParameterError(f"unknown filling {filling!r}")


# -- pre-compiled parameter cache ---------------------------------------------------

def _data_file() -> Path:
    return Path(resources.files("fhsim") / "data" / "precompiled.json")


def load_precompiled(key: str, path: str | Path | None = None):
    p = Path(path) if path is not None else _data_file()
    if not p.exists():
        return None
    entry = json.loads(p.read_text()).get(key)
    return None if entry is None else np.array(entry["params"])


def store_precompiled(key: str, params, merit: dict | None = None,
                      path: str | Path | None = None) -> None:
    p = Path(path) if path is not None else _data_file()
    data = json.loads(p.read_text()) if p.exists() else {}
    data[key] = {"params": list(map(float, params)), "merit": merit or {}}
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(data, indent=1, sort_keys=True))


def precompiled_key(tile: str, u: float, depth: int) -> str:
    return f"{tile}:u={u:g}:d={depth}"
