"""Real- and imaginary-time propagation, schedules, and the NNN compiler.

Propagation uses an adaptive Hermitian Lanczos exponential: the Krylov
subspace grows until the standard residual estimate drops below tol, and
the interval is split recursively if the cap on the subspace dimension is
hit first.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lattice import GeometryError, LatticeGeometry
from .fock import DOWN, UP, FockBasis, SectorOperator, StateVector, apply_bond_unitary
from .hamiltonian import (
    HamiltonianSpec,
    ParameterError,
    fh_local,
    fswap_layer_hamiltonian,
    nnn_hamiltonian,
)

DEFAULT_TOL = 1e-9
MAX_KRYLOV = 40

FSWAP_U = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)


class PropagationError(RuntimeError):
    """Raised when the Krylov exponential fails to converge."""


def state_distance(a: StateVector, b: StateVector) -> float:
    """Global-phase-invariant distance sqrt(1 - |<a|b>|^2) for unit vectors."""
    ov = abs(np.vdot(a.amplitudes, b.amplitudes))
    return float(np.sqrt(max(0.0, 1.0 - min(ov, 1.0) ** 2)))


def _lanczos_step(apply_h, v: np.ndarray, scale: complex, tol: float,
                  max_krylov: int):
    """exp(scale*H) v for one interval; returns (vector, converged)."""
    norm0 = np.linalg.norm(v)
    if norm0 == 0.0:
        return v.copy(), True
    dim = v.shape[0]
    m_cap = min(max_krylov, dim)
    V = np.empty((m_cap, dim), dtype=np.complex128)
    alphas = np.empty(m_cap)
    betas = np.empty(m_cap)
    V[0] = v / norm0
    w = apply_h(V[0])
    alphas[0] = np.vdot(V[0], w).real
    w = w - alphas[0] * V[0]
    m = 1
    while True:
        beta = np.linalg.norm(w)
        T = np.diag(alphas[:m]) + np.diag(betas[:m - 1], 1) + np.diag(betas[:m - 1], -1)
        evals, evecs = np.linalg.eigh(T)
        small = evecs @ (np.exp(scale * evals) * evecs[0].conj())
        # residual relative to the solution scale: imaginary time shrinks or
        # grows the solution norm exponentially, so an absolute test lies
        err = abs(beta * small[m - 1]) / max(np.linalg.norm(small), 1e-300)
        if beta <= 1e-13 * max(1.0, np.abs(alphas[:m]).max()):
            return norm0 * (small @ V[:m]), True
        if err <= tol or m == m_cap:
            return norm0 * (small @ V[:m]), err <= tol
        betas[m - 1] = beta
        V[m] = w / beta
        w = apply_h(V[m])
        alphas[m] = np.vdot(V[m], w).real
        w = w - alphas[m] * V[m] - beta * V[m - 1]
        # full reorthogonalization keeps the basis usable out to m ~ 40
        w = w - (V[:m + 1].conj() @ w) @ V[:m + 1]
        m += 1


def _expm_apply(apply_h, v: np.ndarray, scale: complex, tol: float,
                max_krylov: int, depth: int = 0) -> np.ndarray:
    if depth > 30:
        raise PropagationError("Krylov interval splitting did not converge")
    out, ok = _lanczos_step(apply_h, v, scale, tol, max_krylov)
    if ok:
        return out
    half = scale / 2.0
    mid = _expm_apply(apply_h, v, half, tol / 2.0, max_krylov, depth + 1)
    return _expm_apply(apply_h, mid, half, tol / 2.0, max_krylov, depth + 1)


def propagate_real(state: StateVector, spec: HamiltonianSpec, t_final: float,
                   tol: float = DEFAULT_TOL,
                   operator: SectorOperator | None = None) -> StateVector:
    """exp(-i H T)|state> via the adaptive Krylov exponential."""
    if t_final < 0:
        raise ParameterError("propagation time must be >= 0")
    if t_final == 0.0:
        return state.copy()
    op = operator if operator is not None else spec.operator(state.basis)
    amps = _expm_apply(op.apply, state.amplitudes, -1j * t_final, tol, MAX_KRYLOV)
    return StateVector(state.basis, amps)


def propagate_imag(state: StateVector, spec: HamiltonianSpec, dtau: float,
                   tol: float = DEFAULT_TOL,
                   operator: SectorOperator | None = None):
    """Normalized exp(-dtau H)|state> and the norm-decay factor 1/c."""
    if dtau <= 0:
        raise ParameterError("imaginary-time step must be > 0")
    op = operator if operator is not None else spec.operator(state.basis)
    amps = _expm_apply(op.apply, state.amplitudes, complex(-dtau), tol, MAX_KRYLOV)
    decay = float(np.linalg.norm(amps))
    if decay == 0.0:
        raise PropagationError("imaginary-time step annihilated the state")
    return StateVector(state.basis, amps / decay), decay


# -- schedules ------------------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    duration: float
    start: dict[str, float]
    end: dict[str, float]

    def couplings_at(self, s: float) -> dict[str, float]:
        """Linear interpolation at fraction s in [0, 1]."""
        return {k: self.start[k] + (self.end[k] - self.start[k]) * s
                for k in self.start}


@dataclass(frozen=True)
class Schedule:
    segments: tuple[Segment, ...]

    def __post_init__(self):
        for seg in self.segments:
            if seg.duration <= 0:
                raise ParameterError("segment durations must be > 0")
            if set(seg.start) != set(seg.end):
                raise ParameterError("segment coupling keys must match")

    @property
    def total_time(self) -> float:
        return sum(seg.duration for seg in self.segments)


def run_schedule(state: StateVector, builder, schedule: Schedule, dt: float = 0.01,
                 tol: float = DEFAULT_TOL, observer=None) -> StateVector:
    """Piecewise-frozen propagation with midpoint couplings per micro-step.

    builder maps a coupling dict to a HamiltonianSpec.  observer, if given,
    is called as observer(elapsed_time, state) after every micro-step.
    """
    if dt <= 0:
        raise ParameterError("micro-step must be > 0")
    psi = state
    elapsed = 0.0
    for seg in schedule.segments:
        n_steps = max(1, int(round(seg.duration / dt)))
        h = seg.duration / n_steps
        for k in range(n_steps):
            mid = (k + 0.5) / n_steps
            spec = builder(**seg.couplings_at(mid))
            psi = propagate_real(psi, spec, h, tol)
            elapsed += h
            if observer is not None:
                observer(elapsed, psi)
    return psi


# -- compiled sequences -----------------------------------------------------------

@dataclass(frozen=True)
class SequenceStep:
    label: str
    spec: HamiltonianSpec
    duration: float
    fswap_bonds: tuple = ()       # non-empty marks an exact fSWAP layer


@dataclass(frozen=True)
class CompiledSequence:
    steps: tuple[SequenceStep, ...]

    @property
    def total_time(self) -> float:
        return sum(s.duration for s in self.steps)

    def to_pulses(self) -> list[dict]:
        out = []
        for s in self.steps:
            out.append({
                "generator": s.label,
                "duration": s.duration,
                "tunnelings": {f"{b[0]}-{b[1]}": t
                               for b, t in s.spec.bond_tunnelings.items()},
                "u": s.spec.u,
                "mu_nonzero": bool(s.spec.mu is not None and np.any(s.spec.mu)),
            })
        return out


def apply_sequence(state: StateVector, seq: CompiledSequence,
                   tol: float = DEFAULT_TOL, exact_fswap: bool = True) -> StateVector:
    """Run a compiled sequence of quenches.

    fSWAP layers are applied through their exact two-mode gates by default;
    exact_fswap=False forces the generic Krylov path (same unitary, slower).
    """
    psi = state
    for step in seq.steps:
        if step.fswap_bonds and exact_fswap:
            psi = psi.copy()
            for b in step.fswap_bonds:
                for spin in (UP, DOWN):
                    apply_bond_unitary(psi, b, spin, FSWAP_U, in_place=True)
        else:
            psi = propagate_real(psi, step.spec, step.duration, tol)
    return psi


def compile_fswap(geometry: LatticeGeometry, bonds, t: float = 1.0) -> CompiledSequence:
    """fSWAP on one bond or a disjoint layer of bonds: quench for pi/(2t)."""
    if bonds and isinstance(bonds[0], int):
        bonds = [tuple(bonds)]
    bonds = tuple(tuple(b) for b in bonds)
    spec = fswap_layer_hamiltonian(geometry, bonds, t)
    return CompiledSequence((SequenceStep("fswap", spec, np.pi / (2 * t), bonds),))


def _ladder_orientation_quench(geometry: LatticeGeometry, orientation: int):
    """Swap layer and staircase NN pattern realizing one diagonal family."""
    rungs_odd = [b for b in geometry.bonds("rung")
                 if geometry.coords(b[0])[0] % 2 == 1]
    quench = []
    for x in range(geometry.cols - 1):
        y = x % 2 if orientation == 1 else 1 - (x % 2)
        quench.append((geometry.site(x, y), geometry.site(x + 1, y)))
    return rungs_odd, [(_min_max(b)) for b in quench]


def _min_max(b):
    i, j = b
    return (i, j) if i < j else (j, i)


def compile_nnn_step(geometry: LatticeGeometry, tprime: float, t_prime_time: float,
                     orientation: int | None = None,
                     t: float = 1.0) -> CompiledSequence:
    """Realize exp(-i H_t'(orientation) T') from NN quenches and fSWAPs.

    The NN quench runs for T = |t' T'|/t with tunneling sign(t' T') t, so
    t T = t' T'.  With orientation=None both diagonal families are compiled
    back to back (exact only where the two families commute, e.g. a single
    plaquette; staged protocols compile them separately).
    """
    if not geometry.nnn_bonds:
        raise GeometryError("geometry has no NNN bonds")
    if geometry.rows != 2:
        raise ParameterError("NNN compilation is implemented for 2xL ladders")
    if orientation is None:
        seq1 = compile_nnn_step(geometry, tprime, t_prime_time, 1, t)
        seq2 = compile_nnn_step(geometry, tprime, t_prime_time, 2, t)
        return CompiledSequence(seq1.steps + seq2.steps)
    theta = tprime * t_prime_time
    swap_bonds, quench_bonds = _ladder_orientation_quench(geometry, orientation)
    steps = []
    if swap_bonds:
        steps += list(compile_fswap(geometry, swap_bonds, t).steps)
    if theta != 0.0:
        duration = abs(theta) / t
        coupling = t if theta > 0 else -t
        spec = fh_local(geometry, t=coupling, u=0.0, bonds=quench_bonds)
        steps.append(SequenceStep(f"nn-staircase-{orientation}", spec, duration))
    if swap_bonds:
        steps += list(compile_fswap(geometry, swap_bonds, t).steps)
    return CompiledSequence(tuple(steps))


# -- adiabatic Trotter introduction of NNN tunneling ------------------------------

@dataclass
class TrotterResult:
    state: StateVector
    nominal_time: float       # FH time + nominal NNN durations (2 T_trotter)
    gross_time: float         # includes the fSWAP overhead of compiled steps


def adiabatic_trotter_nnn(state: StateVector, fh_spec: HamiltonianSpec,
                          tprime_final: float, t_trotter: float, dt: float,
                          tol: float = DEFAULT_TOL, compiled: bool = True,
                          observer=None) -> TrotterResult:
    """Symmetrized Trotter ramp of NNN tunneling on top of frozen FH dynamics.

    Per step k: half-FH, half-orientation-1, full-orientation-2,
    half-orientation-1, half-FH, with ramped NNN durations
    dT_k = (T_k + T_{k-1}) dt / (2 T_trotter).
    """
    n_steps = int(round(t_trotter / dt))
    if n_steps < 1 or abs(n_steps * dt - t_trotter) > 1e-9:
        raise ParameterError("dt must divide t_trotter")
    geometry = state.basis.geometry
    basis = state.basis
    fh_op = fh_spec.operator(basis)
    h1 = nnn_hamiltonian(geometry, tprime_final, orientation=1)
    h2 = nnn_hamiltonian(geometry, tprime_final, orientation=2)
    op1 = h1.operator(basis) if not compiled else None
    op2 = h2.operator(basis) if not compiled else None
    psi = state
    nominal = 0.0
    gross = 0.0
    for k in range(1, n_steps + 1):
        dtk = (2 * k - 1) * dt * dt / (2.0 * t_trotter)
        psi = propagate_real(psi, fh_spec, dt / 2.0, tol, operator=fh_op)
        if compiled:
            for orient, tau in ((1, dtk / 2), (2, dtk), (1, dtk / 2)):
                seq = compile_nnn_step(geometry, tprime_final, tau, orient)
                psi = apply_sequence(psi, seq, tol)
                gross += seq.total_time
        else:
            psi = propagate_real(psi, h1, dtk / 2.0, tol, operator=op1)
            psi = propagate_real(psi, h2, dtk, tol, operator=op2)
            psi = propagate_real(psi, h1, dtk / 2.0, tol, operator=op1)
            gross += 2 * dtk
        psi = propagate_real(psi, fh_spec, dt / 2.0, tol, operator=fh_op)
        nominal += dt + 2 * dtk
        gross += dt
        if observer is not None:
            observer(k * dt, psi)
    return TrotterResult(psi, nominal, gross)
