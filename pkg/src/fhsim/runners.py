"""Protocol orchestration for the CLI: each run writes one output bundle.

Bundle layout (fixed names, diff-able):
    manifest.json     resolved config + package version + seed
    summary.json      final merits, physical time, run counts
    merit.csv         merit time series (stage, T, energy, eps, infidelity)
    *.csv             observable curves
    state.npz         final state snapshot
    trace.csv / trace_matrices.json     VarQITE exports
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .lattice import build_geometry
from .fock import FockBasis, SpinSector, StateVector, load_state, save_state
from .hamiltonian import (HamiltonianSpec, ParameterError, fh_local,
                          staggered_mu)
from .circuits import (ProtocolProgram, Stage, apply_circuit, build_hyva_program,
                       doped_stripe_layout, initial_state, load_precompiled,
                       precompiled_key, store_precompiled)
from .evolve import (Schedule, Segment, adiabatic_trotter_nnn, propagate_real,
                     run_schedule)
from .optimize import (GroundState, exact_ground_state, merit_report,
                       minimize_energy, stage_optimizer_config)
from .observables import dominant_wavelength, observable_report
from .qite import (QiteConfig, ShotConfig, export_trace, load_trace,
                   qlanczos_approx, qlanczos_complete, varqite_run)
from .measure import plan_settings, sample_and_estimate
from .config import RunConfig


class RunError(RuntimeError):
    """Numeric/protocol failure inside a run (CLI exit code 3)."""


def _write_csv(path: Path, header, rows) -> None:
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in row])


def _write_observables(out: Path, state: StateVector, energy: float | None = None):
    rep = observable_report(state, energy)
    n = len(rep.sz_mean)
    _write_csv(out / "spin_correlations.csv", ["i", "j", "szsz", "szi", "szj"],
               [(i, j, float(rep.sz_corr[i, j]), float(rep.sz_mean[i]),
                 float(rep.sz_mean[j])) for i in range(n) for j in range(n)])
    _write_csv(out / "structure_factor.csv", ["k", "s_m"],
               [(float(k), float(s)) for k, s in
                zip(rep.k_grid, rep.structure_factor)])
    _write_csv(out / "density_profile.csv", ["x", "n_x"],
               [(x, float(v)) for x, v in enumerate(rep.density_profile)])
    return rep


def _geometry(config: RunConfig):
    geo = config.section("geometry")
    return build_geometry(int(geo["rows"]), int(geo["cols"]))


def _target_spec(config: RunConfig, geometry) -> HamiltonianSpec:
    c = config.section("couplings")
    spec = fh_local(geometry, t=float(c["t"]), u=float(c["u"]))
    if c["v"]:
        spec = spec.with_v(float(c["v"]))
    if c["tprime"]:
        spec = spec.with_nnn(float(c["tprime"]))
    return spec


def _sector(config: RunConfig, geometry, recipe=None) -> SpinSector:
    sec = config.section("sector")
    if sec["n_up"] is not None and sec["n_down"] is not None:
        return SpinSector(int(sec["n_up"]), int(sec["n_down"]))
    probe = initial_state(recipe or "neel", geometry)
    return probe.basis.sector


def _optimizer_overrides(config: RunConfig) -> dict:
    opt = config.section("optimizer")
    out = {k: opt[k] for k in ("restarts", "max_evaluations", "init_low",
                               "init_high", "polish_rounds") if opt[k] is not None}
    for k in ("restarts", "max_evaluations", "polish_rounds"):
        if k in out:
            out[k] = int(out[k])
    return out


def _resolve_stage_parameters(program: ProtocolProgram, config: RunConfig,
                              out_dir: Path, basis: FockBasis,
                              cache_path=None) -> dict:
    """Fill circuit-stage parameters: tile stages from the pre-compiled cache
    (optimizing and storing on a miss), ladder-level stages by fresh VQE."""
    seed = int(config.section("optimizer")["seed"])
    overrides = _optimizer_overrides(config)
    u = float(config.section("couplings")["u"])
    depth = int(config.section("protocol")["depth"])
    info = {}
    psi = initial_state(program.initial_recipe, program.geometry, basis)
    for stage in program.stages:
        if not stage.is_circuit():
            psi = run_schedule(psi, stage.schedule_builder, stage.schedule,
                               stage.schedule_dt)
            continue
        if stage.parameters is None:
            tile = {"dimer": "dimer", "tile-dimer": "dimer",
                    "plaquette": "plaquette", "tile-plaquette": "plaquette"}.get(stage.name)
            params = None
            if tile is not None:
                key = precompiled_key(tile, u, depth)
                params = load_precompiled(key, cache_path)
                if params is None:
                    params = _optimize_tile(tile, u, depth, seed, overrides)
                    store_precompiled(key, params, path=out_dir / "precompiled.json")
                    try:
                        store_precompiled(key, params)
                    except OSError:
                        pass
                info[stage.name] = {"source": "pre-compiled", "key": key}
            else:
                kind = "fusion" if stage.name == "fusion" else "link"
                cfg = stage_optimizer_config(kind, seed, **overrides)
                res = minimize_energy(stage.circuit, psi, stage.target, cfg,
                                      tol=1e-7)
                params = res.parameters
                info[stage.name] = {"source": "vqe",
                                    "energy": res.report.energy,
                                    "evaluations": res.report.n_evaluations}
            stage.parameters = np.asarray(params, dtype=float)
        psi = apply_circuit(psi, stage.circuit, stage.parameters)
    return info


def _optimize_tile(tile: str, u: float, depth: int, seed: int,
                   overrides: dict) -> np.ndarray:
    from .circuits import dimer_stage_circuit, plaquette_stage_circuit
    if tile == "dimer":
        g = build_geometry(1, 2)
        basis = FockBasis(g, SpinSector(1, 1))
        psi = initial_state("neel", g, basis)
        circ = dimer_stage_circuit(g, depth)
        target = fh_local(g, 1.0, u)
        cfg = stage_optimizer_config("dimer", seed, **overrides)
        return minimize_energy(circ, psi, target, cfg).parameters
    g = build_geometry(2, 2)
    basis = FockBasis(g, SpinSector(2, 2))
    psi = initial_state("neel", g, basis)
    dkey = precompiled_key("dimer", u, depth)
    dparams = load_precompiled(dkey)
    if dparams is None:
        dparams = _optimize_tile("dimer", u, depth, seed, overrides)
        try:
            store_precompiled(dkey, dparams)
        except OSError:
            pass
    psi = apply_circuit(psi, dimer_stage_circuit(g, depth), dparams)
    circ = plaquette_stage_circuit(g, u, depth)
    target = fh_local(g, 1.0, u)
    cfg = stage_optimizer_config("plaquette", seed, **overrides)
    return minimize_energy(circ, psi, target, cfg).parameters


# -- protocol runners ------------------------------------------------------------

def run_exact_gs(config: RunConfig, out: Path) -> dict:
    geometry = _geometry(config)
    target = _target_spec(config, geometry)
    sector = _sector(config, geometry)
    basis = FockBasis(geometry, sector)
    ground = exact_ground_state(target, sector, basis)
    _write_csv(out / "energy.csv", ["quantity", "value"],
               [("ground_energy", ground.energy),
                ("degeneracy", len(ground.states))])
    rep = _write_observables(out, ground.states[0], ground.energy)
    save_state(ground.states[0], out / "state.npz")
    return {"protocol": "exact-gs", "energy": ground.energy,
            "degeneracy": len(ground.states),
            "stripe_wavelength": dominant_wavelength(rep.density_profile)}


def run_hyva(config: RunConfig, out: Path) -> dict:
    geometry = _geometry(config)
    proto = config.section("protocol")
    u = float(config.section("couplings")["u"])
    layout = None
    if proto["filling"] == "doped":
        layout = doped_stripe_layout(
            geometry, proto["empty_columns"],
            float(proto["doping"]) if proto["doping"] else None)
    program = build_hyva_program(geometry, proto["filling"], u,
                                 mode=proto["mode"], depth=int(proto["depth"]),
                                 ramp_times=proto["ramp_times"],
                                 doped_layout=layout)
    basis = FockBasis(geometry, _sector(config, geometry, program.initial_recipe))
    ground = exact_ground_state(program.target, basis.sector, basis)
    stage_info = _resolve_stage_parameters(program, config, out, basis)

    merit_rows = []
    t_cum = 0.0

    psi = initial_state(program.initial_recipe, geometry, basis)
    rep0 = merit_report(psi, program.target, ground, 0.0)
    merit_rows.append(("initial", 0.0, rep0.energy, rep0.residual, rep0.infidelity))
    samples = max(1, int(proto["merit_samples"]))
    for stage in program.stages:
        if stage.is_circuit():
            psi = apply_circuit(psi, stage.circuit, stage.parameters)
            t_cum += stage.circuit.physical_time(stage.parameters)
            rep = merit_report(psi, program.target, ground, t_cum)
            merit_rows.append((stage.name, t_cum, rep.energy, rep.residual,
                               rep.infidelity))
        else:
            base = t_cum
            stride = max(1, int(round(stage.schedule.total_time
                                      / stage.schedule_dt / samples)))
            counter = [0]

            def observer(elapsed, state, _stage=stage, _base=base, _c=counter):
                _c[0] += 1
                if _c[0] % stride == 0:
                    rep = merit_report(state, program.target, ground,
                                       _base + elapsed)
                    merit_rows.append((_stage.name, _base + elapsed, rep.energy,
                                       rep.residual, rep.infidelity))

            psi = run_schedule(psi, stage.schedule_builder, stage.schedule,
                               stage.schedule_dt, observer=observer)
            t_cum = base + stage.schedule.total_time
            rep = merit_report(psi, program.target, ground, t_cum)
            merit_rows.append((stage.name, t_cum, rep.energy, rep.residual,
                               rep.infidelity))

    baseline = None
    if proto["baseline_time"]:
        baseline = run_adiabatic_baseline(
            config, geometry, basis, program.target, ground,
            float(proto["baseline_time"]), out)

    _write_csv(out / "merit.csv",
               ["stage", "time", "energy", "eps", "infidelity"], merit_rows)
    rep_obs = _write_observables(out, psi, merit_rows[-1][2])
    save_state(psi, out / "state.npz")
    final = merit_rows[-1]
    summary = {"protocol": "hyva", "mode": proto["mode"],
               "filling": proto["filling"], "energy": final[2],
               "eps": final[3], "infidelity": final[4],
               "physical_time": final[1], "ground_energy": ground.energy,
               "stages": stage_info,
               "stripe_wavelength": dominant_wavelength(rep_obs.density_profile)}
    if baseline:
        summary["baseline"] = baseline
    return summary


def run_adiabatic_baseline(config, geometry, basis, target, ground: GroundState,
                           total_time: float, out: Path) -> dict:
    """H(0) -> FH ramp: first fifth raises t and U, the rest lowers mu."""
    u = float(config.section("couplings")["u"])
    mu0 = float(config.section("couplings")["mu0"])
    dt = float(config.section("protocol")["dt"])

    def builder(t, u_val, mu):
        spec = fh_local(geometry, t=t, u=u_val)
        return HamiltonianSpec(geometry, spec.bond_tunnelings, u_val, 0.0,
                               staggered_mu(geometry, mu), {})

    sched = Schedule((
        Segment(total_time / 5, {"t": 0.0, "u_val": 0.0, "mu": mu0},
                {"t": 1.0, "u_val": u, "mu": mu0}),
        Segment(4 * total_time / 5, {"t": 1.0, "u_val": u, "mu": mu0},
                {"t": 1.0, "u_val": u, "mu": 0.0}),
    ))
    psi0 = initial_state("neel", geometry, basis)
    psi = run_schedule(psi0, builder, sched, dt)
    rep = merit_report(psi, target, ground, total_time)
    save_state(psi, out / "baseline_state.npz")
    return {"time": total_time, "energy": rep.energy, "eps": rep.residual,
            "infidelity": rep.infidelity}


def _varqite_setup(config: RunConfig):
    geometry = _geometry(config)
    target = _target_spec(config, geometry)
    proto = config.section("protocol")
    recipe = proto["initial_state"] or {"kind": "plaquette-product", "u": 32.0}
    basis = FockBasis(geometry, _sector(config, geometry, recipe))
    psi0 = initial_state(recipe, geometry, basis)
    shots = None
    sh = config.section("shots")
    if sh["enabled"]:
        shots = ShotConfig(int(sh["m"]), int(sh["parallel_factor"]),
                           int(sh["seed"]))
    seed_quench = proto["seed_quench"]
    qcfg = QiteConfig(
        dtau=float(proto["dtau"]), n_steps=int(proto["n_steps"]),
        g_regularization=float(proto["g_regularization"]),
        svd_cutoff=float(proto["svd_cutoff"]), shots=shots,
        store_states=bool(proto["store_states"]) or bool(proto["qlanczos"]),
        seed_quench=tuple(seed_quench) if seed_quench else None)
    return geometry, target, basis, psi0, qcfg


def run_varqite(config: RunConfig, out: Path) -> dict:
    geometry, target, basis, psi0, qcfg = _varqite_setup(config)
    ground = exact_ground_state(target, basis.sector, basis)
    trace = varqite_run(psi0, target, qcfg)
    export_trace(trace, out / "trace")
    n = geometry.n_sites
    _write_csv(out / "merit.csv", ["stage", "time", "energy", "eps", "infidelity"],
               [(f"tau={tau:g}", trace.physical_time, e,
                 abs(e - ground.energy) / n, "")
                for tau, e in zip(trace.taus, trace.energies)])
    summary = {"protocol": "varqite", "ground_energy": ground.energy,
               "energy": float(np.min(trace.energies)),
               "eps": float((np.min(trace.energies) - ground.energy) / n),
               "physical_time": trace.physical_time,
               "runs_total": trace.runs_total,
               "runs_per_step": (trace.runs_per_step[0]
                                 if trace.runs_per_step else 0),
               "monotone": trace.monotone}
    which = config.section("protocol")["qlanczos"] or []
    if which:
        summary["qlanczos"] = _qlanczos_summaries(trace, target, qcfg, which, n,
                                                  ground.energy)
    if trace.states is not None:
        save_state(trace.states[-1], out / "state.npz")
    return summary


def _qlanczos_summaries(trace, target, qcfg, which, n_sites, e_gs) -> dict:
    out = {}
    if "approx" in which:
        res = qlanczos_approx(trace)
        out["approx"] = {"energy": res.energy,
                         "eps": (res.energy - e_gs) / n_sites,
                         "kept": res.pair.kept_indices}
    if "complete" in which:
        res = qlanczos_complete(trace, target, qcfg.shots)
        out["complete"] = {"energy": res.energy,
                           "eps": (res.energy - e_gs) / n_sites,
                           "kept": res.pair.kept_indices}
    return out


def run_qlanczos(config: RunConfig, out: Path) -> dict:
    proto = config.section("protocol")
    if proto["trace"]:
        trace = load_trace(proto["trace"])
        geometry = _geometry(config)
        target = _target_spec(config, geometry)
        which = proto["qlanczos"] or ["approx"]
        if "complete" in which and trace.states is None:
            raise RunError("stored trace has no states for complete QLanczos")
        summary = {"protocol": "qlanczos", "source": proto["trace"]}
        if "approx" in which:
            res = qlanczos_approx(trace)
            summary["approx"] = {"energy": res.energy,
                                 "kept": res.pair.kept_indices}
        (out / "qlanczos.json").write_text(json.dumps(summary, indent=1))
        return summary
    config.section("protocol")["qlanczos"] = proto["qlanczos"] or ["approx",
                                                                   "complete"]
    summary = run_varqite(config, out)
    summary["protocol"] = "qlanczos"
    (out / "qlanczos.json").write_text(json.dumps(summary.get("qlanczos", {}),
                                                  indent=1))
    return summary


def run_trotter_nnn(config: RunConfig, out: Path) -> dict:
    geometry = _geometry(config)
    proto = config.section("protocol")
    couplings = config.section("couplings")
    tprime = float(couplings["tprime"])
    if tprime == 0.0:
        raise RunError("trotter-nnn needs a nonzero couplings.tprime")
    fh = fh_local(geometry, t=float(couplings["t"]), u=float(couplings["u"]))
    target = fh.with_nnn(tprime)

    if proto["state_file"]:
        psi0 = load_state(proto["state_file"])
        basis = psi0.basis
    else:
        sub = RunConfig(json.loads(json.dumps(config.data)))
        sub.section("protocol")["name"] = "hyva"
        hy_summary = run_hyva(sub, out)
        psi0 = load_state(out / "state.npz")
        basis = psi0.basis
    ground_fh = exact_ground_state(fh, basis.sector, basis)
    ground = exact_ground_state(target, basis.sector, basis)
    f_before_fh = ground_fh.projection_norm(psi0)
    f_before = ground.projection_norm(psi0)
    result = adiabatic_trotter_nnn(psi0, fh, tprime,
                                   float(proto["t_trotter"]),
                                   float(proto["trotter_dt"]),
                                   compiled=bool(proto["compiled_nnn"]))
    f_after = ground.projection_norm(result.state)
    rep = merit_report(result.state, target, ground, result.nominal_time)
    _write_csv(out / "merit.csv", ["stage", "time", "energy", "eps", "infidelity"],
               [("initial", 0.0, "", "", 1.0 - f_before),
                ("trotter", result.nominal_time, rep.energy, rep.residual,
                 rep.infidelity)])
    rep_obs = _write_observables(out, result.state, rep.energy)
    save_state(result.state, out / "state.npz")
    return {"protocol": "trotter-nnn", "fidelity_initial_fh": f_before_fh,
            "fidelity_initial": f_before, "fidelity_final": f_after,
            "energy": rep.energy, "eps": rep.residual,
            "infidelity": rep.infidelity,
            "physical_time": result.nominal_time,
            "gross_time": result.gross_time,
            "ground_energy": ground.energy,
            "stripe_wavelength": dominant_wavelength(rep_obs.density_profile)}


def run_measure(config: RunConfig, out: Path) -> dict:
    geometry = _geometry(config)
    target = _target_spec(config, geometry)
    proto = config.section("protocol")
    sh = config.section("shots")
    if proto["state_file"]:
        psi = load_state(proto["state_file"])
    else:
        recipe = proto["initial_state"] or "neel"
        psi = initial_state(recipe, geometry)
    names = proto["observables"] or ["Ht", "HU", "Ht2", "HtHU_re", "HtHU_im"]
    rows = []
    results = {}
    exact = not sh["enabled"]
    for k, name in enumerate(names):
        settings = plan_settings(name, target)
        est = sample_and_estimate(psi, settings, int(sh["m"]), int(sh["seed"]),
                                  int(sh["parallel_factor"]), exact=exact,
                                  stream_offset=1000 * k)
        rows.append((name, est.mean, est.stderr, est.shots, est.n_settings,
                     est.runs))
        results[name] = {"mean": est.mean, "stderr": est.stderr,
                         "settings": est.n_settings, "runs": est.runs}
    _write_csv(out / "estimates.csv",
               ["observable", "mean", "stderr", "shots", "settings", "runs"],
               rows)
    return {"protocol": "measure", "estimates": results,
            "runs_total": sum(r[5] for r in rows)}


RUNNERS = {
    "exact-gs": run_exact_gs,
    "hyva": run_hyva,
    "varqite": run_varqite,
    "qlanczos": run_qlanczos,
    "trotter-nnn": run_trotter_nnn,
    "measure": run_measure,
}


def execute(config: RunConfig, out_dir: str | Path) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = config.section("protocol")["name"]
    if name not in RUNNERS:
        raise ParameterError(f"unknown protocol {name!r}")
    manifest = {"config": config.data, "version": __version__,
                "protocol": name}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1,
                                                  sort_keys=True))
    t0 = time.perf_counter()
    summary = RUNNERS[name](config, out)
    summary["wall_time"] = time.perf_counter() - t0
    summary["target"] = _target_signature(config)
    (out / "summary.json").write_text(json.dumps(summary, indent=1,
                                                 sort_keys=True))
    return summary


def _target_signature(config: RunConfig) -> dict:
    return {"geometry": dict(config.section("geometry")),
            "couplings": dict(config.section("couplings"))}


def compare(dir_a: str | Path, dir_b: str | Path):
    """Aligned protocol comparison of two run bundles with the same target."""
    a = json.loads((Path(dir_a) / "summary.json").read_text())
    b = json.loads((Path(dir_b) / "summary.json").read_text())
    if a.get("target") != b.get("target"):
        raise ValueError("run bundles target different models")
    rows = []
    for key in ("eps", "infidelity", "physical_time", "runs_total", "energy"):
        va, vb = a.get(key), b.get(key)
        if va is None and vb is None:
            continue
        better = ""
        if isinstance(va, (int, float)) and isinstance(vb, (int, float)):
            if va != vb:
                better = "a" if va < vb else "b"
        rows.append((key, va, vb, better))
    return rows
