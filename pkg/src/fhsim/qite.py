"""Variational imaginary-time evolution and QLanczos post-processing.

Each VarQITE step measures the metric g and gradient b at zero circuit
angle on the current state, solves the regularized linear system, applies
one quench per generator with angle dtau * (g^+ b), and re-anchors.

The measured update has an exact fixed point on any time-reversal-invariant
state: with real generators and a real target, Im<H_mu H> vanishes on real
amplitude vectors, so a state prepared with exactly real amplitudes never
moves.  Experimentally prepared states are quench-built and complex; the
optional seed_quench emulates that by one short native quench per generator
before the first step.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fock import FockBasis, StateVector
from .hamiltonian import HamiltonianSpec, ParameterError
from .evolve import DEFAULT_TOL, propagate_imag, propagate_real
from .measure import GBMeasurement

DEFAULT_G_REGULARIZATION = 1e-6
DEFAULT_SVD_CUTOFF = 1e-8
S_EIGENVALUE_DROP = 1e-10
S_THIN_OVERLAP = 0.999
MAX_STORED_STATES = 50


class ConditioningError(RuntimeError):
    """Raised when g or the Krylov overlap matrix is numerically unusable."""


@dataclass
class ShotConfig:
    shots: int = 2000
    parallel_factor: int = 10
    seed: int = 0


@dataclass
class QiteConfig:
    dtau: float = 0.1
    n_steps: int = 20
    g_regularization: float = DEFAULT_G_REGULARIZATION
    svd_cutoff: float = DEFAULT_SVD_CUTOFF
    shots: ShotConfig | None = None
    store_states: bool = False
    max_stored: int = MAX_STORED_STATES
    seed_quench: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.dtau <= 0:
            raise ParameterError("dtau must be > 0")


def default_generators(target: HamiltonianSpec) -> list[tuple[str, HamiltonianSpec]]:
    """Native generator pair {Ht, HU} extracted from the target couplings."""
    if target.u == 0.0:
        raise ParameterError("target has no U term for the HU generator")
    hop = target.hop_part()
    if hop.nnn:
        hop = HamiltonianSpec(target.geometry, dict(hop.bond_tunnelings))
    return [("Ht", hop),
            ("HU", HamiltonianSpec(target.geometry, {}, target.u))]


def measure_g_b(state: StateVector, generators, target: HamiltonianSpec,
                shot_mode: ShotConfig | None = None, step: int = 0,
                _bundle: GBMeasurement | None = None):
    """Metric g_{uv} = Re<Hu Hv> - <Hu><Hv> and gradient b_u = Im<Hu H>.

    Exact mode contracts operators directly; shot mode routes every object
    through the occupation-basis measurement settings.
    """
    if shot_mode is not None:
        names = [n for n, _ in generators]
        if names != ["Ht", "HU"]:
            raise ParameterError("shot mode supports the native {Ht, HU} pair")
        bundle = _bundle if _bundle is not None else GBMeasurement(target)
        est = bundle.estimate(state, shot_mode.shots, shot_mode.seed,
                              shot_mode.parallel_factor, step)
        return est.g, est.b, est
    basis = state.basis
    ops = [spec.operator(basis) for _, spec in generators]
    h_op = target.operator(basis)
    gen_states = [op.apply(state.amplitudes) for op in ops]
    h_state = h_op.apply(state.amplitudes)
    n = len(ops)
    means = np.array([np.vdot(state.amplitudes, v).real for v in gen_states])
    g = np.empty((n, n))
    b = np.empty(n)
    for i in range(n):
        b[i] = np.vdot(gen_states[i], h_state).imag
        for j in range(i, n):
            g[i, j] = g[j, i] = (np.vdot(gen_states[i], gen_states[j]).real
                                 - means[i] * means[j])
    energy = float(np.vdot(state.amplitudes, h_state).real)
    return g, b, energy


def regularized_solve(g: np.ndarray, b: np.ndarray, regularization: float,
                      cutoff: float) -> np.ndarray:
    """g^+ b with a diagonal shift and an absolute singular-value cutoff."""
    g_reg = g + regularization * np.eye(len(b))
    u, s, vt = np.linalg.svd(g_reg)
    keep = s > cutoff
    if not np.any(keep):
        raise ConditioningError("metric tensor is singular beyond regularization")
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return vt.T @ (inv * (u.T @ b))


@dataclass
class QiteTrace:
    """Per-step record of a VarQITE run; index 0 is the initial state.

    thetas[k] holds the quench angles applied to move from state k to k+1
    (zeros on the final record).  The normalization chain starts at c = 1
    and uses energies shifted by the first recorded energy: the Krylov
    overlap ratios are invariant under constant Hamiltonian shifts, and the
    shift keeps the first-order recursion inside its validity window.
    """
    dtau: float
    generator_names: list[str]
    taus: list[float] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)
    energy_stderrs: list[float] = field(default_factory=list)
    thetas: list[list[float]] = field(default_factory=list)
    g_matrices: list = field(default_factory=list)
    b_vectors: list = field(default_factory=list)
    log_c2: list[float] = field(default_factory=list)
    states: list[StateVector] | None = None
    physical_time: float = 0.0
    runs_total: int = 0
    runs_per_step: list[int] = field(default_factory=list)
    monotone: bool = True

    @property
    def n_records(self) -> int:
        return len(self.taus)

    @property
    def energy_shift(self) -> float:
        return self.energies[0] if self.energies else 0.0

    def c_chain(self) -> np.ndarray:
        return np.exp(0.5 * np.asarray(self.log_c2))

    def record(self, tau, energy, stderr, theta, g, b):
        if not self.taus:
            self.log_c2.append(0.0)   # c = 1 anchors the chain
        else:
            shifted = self.energies[-1] - self.energy_shift
            if 2.0 * self.dtau * shifted >= 1.0:
                raise ConditioningError(
                    "dtau too large for the normalization recursion")
            self.log_c2.append(self.log_c2[-1]
                               - np.log1p(-2.0 * self.dtau * shifted))
            if energy > self.energies[-1] + 1e-12:
                self.monotone = False
        self.taus.append(tau)
        self.energies.append(energy)
        self.energy_stderrs.append(stderr)
        self.thetas.append(list(theta))
        self.g_matrices.append(None if g is None else np.asarray(g).tolist())
        self.b_vectors.append(None if b is None else np.asarray(b).tolist())


def varqite_run(initial_state: StateVector, target: HamiltonianSpec,
                config: QiteConfig, generators=None,
                tol: float = DEFAULT_TOL) -> QiteTrace:
    """Iteratively re-anchored variational imaginary-time evolution."""
    generators = generators if generators is not None else default_generators(target)
    basis = initial_state.basis
    gen_ops = [(name, spec, spec.operator(basis)) for name, spec in generators]
    h_op = target.operator(basis)
    bundle = GBMeasurement(target) if config.shots is not None else None

    psi = initial_state
    trace = QiteTrace(config.dtau, [n for n, _ in generators])
    if config.store_states:
        trace.states = []

    if config.seed_quench is not None:
        if len(config.seed_quench) != len(generators):
            raise ParameterError("seed_quench needs one angle per generator")
        for (name, spec, op), theta in zip(gen_ops, config.seed_quench):
            if theta == 0.0:
                continue
            if theta > 0:
                psi = propagate_real(psi, spec, theta, tol, operator=op)
            else:
                psi = propagate_real(psi, spec.scaled(-1.0), -theta, tol)
            trace.physical_time += abs(theta)

    for step in range(config.n_steps + 1):
        out = measure_g_b(psi, generators, target, config.shots, step, bundle)
        if config.shots is None:
            g, b, energy = out
            stderr, runs = 0.0, 0
        else:
            g, b, est = out
            energy, stderr, runs = est.energy, est.energy_stderr, est.runs
        trace.runs_total += runs
        trace.runs_per_step.append(runs)
        trace.record(step * config.dtau, energy, stderr,
                     np.zeros(len(gen_ops)), g, b)
        if trace.states is not None:
            if len(trace.states) >= config.max_stored:
                raise ParameterError(
                    f"stored-state guard: more than {config.max_stored} states")
            trace.states.append(psi.copy())
        if step == config.n_steps:
            break
        theta = config.dtau * regularized_solve(g, b, config.g_regularization,
                                                config.svd_cutoff)
        trace.thetas[-1] = list(theta)
        for (name, spec, op), th in zip(gen_ops, theta):
            if th == 0.0:
                continue
            if th > 0:
                psi = propagate_real(psi, spec, th, tol, operator=op)
            else:
                psi = propagate_real(psi, spec.scaled(-1.0), -th, tol)
            trace.physical_time += abs(th)
    return trace


def exact_ite_reference(initial_state: StateVector, target: HamiltonianSpec,
                        dtau: float, n_steps: int, tol: float = DEFAULT_TOL,
                        keep_states: bool = False):
    """Normalized imaginary-time trajectory energies (index 0 = initial)."""
    op = target.operator(initial_state.basis)
    psi = initial_state.normalized()
    energies = [op.expectation(psi)]
    states = [psi.copy()] if keep_states else None
    for _ in range(n_steps):
        psi, _ = propagate_imag(psi, target, dtau, tol, operator=op)
        energies.append(op.expectation(psi))
        if keep_states:
            states.append(psi.copy())
    return (np.array(energies), states) if keep_states else np.array(energies)


# -- QLanczos -----------------------------------------------------------------------

@dataclass
class KrylovPair:
    s_matrix: np.ndarray
    h_matrix: np.ndarray
    kept_indices: list[int]
    s_eigenvalues: np.ndarray
    n_dropped: int


@dataclass
class QLanczosResult:
    energy: float
    pair: KrylovPair


def _thin_indices(candidates, overlap) -> list[int]:
    """Keep indices whose pairwise chain overlaps stay below the threshold.

    The final candidate is always retained so the best sampled state stays
    in the span; near-duplicates are handled by the eigenvalue filter.
    """
    kept = [candidates[0]]
    for idx in candidates[1:]:
        if overlap(kept[-1], idx) < S_THIN_OVERLAP:
            kept.append(idx)
    last = candidates[-1]
    if kept[-1] != last:
        kept.append(last)
    return kept


def _solve_generalized(s_mat: np.ndarray, h_mat: np.ndarray):
    vals, vecs = np.linalg.eigh(s_mat)
    keep = vals > S_EIGENVALUE_DROP * vals.max()
    n_dropped = int(len(vals) - keep.sum())
    if not np.any(keep):
        raise ConditioningError("all Krylov overlap directions discarded")
    w = vecs[:, keep] / np.sqrt(vals[keep])
    reduced = w.conj().T @ h_mat @ w
    energy = float(np.linalg.eigvalsh(reduced)[0])
    return energy, vals, n_dropped


def qlanczos_approx(trace: QiteTrace) -> QLanczosResult:
    """Krylov energy from the c-chain and measured energies alone.

    Keeps every second trace record (odd alpha in one-based labelling), so
    all pairwise midpoints land on recorded steps.
    """
    if trace.n_records < 1:
        raise ParameterError("trace has no records")
    log_c2 = np.asarray(trace.log_c2)
    energies = np.asarray(trace.energies)
    candidates = list(range(0, trace.n_records, 2))

    def s_elem(a, b):
        m = (a + b) // 2
        return float(np.exp(0.5 * log_c2[a] + 0.5 * log_c2[b] - log_c2[m]))

    kept = _thin_indices(candidates, s_elem)
    k = len(kept)
    s_mat = np.empty((k, k))
    h_mat = np.empty((k, k))
    for x in range(k):
        for y in range(k):
            s_mat[x, y] = s_elem(kept[x], kept[y])
            h_mat[x, y] = s_mat[x, y] * energies[(kept[x] + kept[y]) // 2]
    energy, vals, dropped = _solve_generalized(s_mat, h_mat)
    return QLanczosResult(energy, KrylovPair(s_mat, h_mat, kept, vals, dropped))


def qlanczos_complete(trace: QiteTrace, target: HamiltonianSpec,
                      shot_mode: ShotConfig | None = None) -> QLanczosResult:
    """Krylov energy from stored-state inner products.

    Shot mode emulates the compute-uncompute estimate of |S_ab| (a binomial
    draw of the reference-configuration probability after the inverse
    circuit); phases come from the exact overlaps, and the Hamiltonian
    matrix elements are taken exact, as the shot study targets S.
    """
    if trace.states is None:
        raise ParameterError("complete QLanczos needs stored states")
    candidates = list(range(0, trace.n_records, 2))
    states = trace.states
    op = target.operator(states[0].basis)

    def exact_overlap(a, b):
        return complex(np.vdot(states[a].amplitudes, states[b].amplitudes))

    kept = _thin_indices(candidates, lambda a, b: abs(exact_overlap(a, b)))
    k = len(kept)
    s_mat = np.empty((k, k), dtype=complex)
    h_mat = np.empty((k, k), dtype=complex)
    rng = (np.random.default_rng((shot_mode.seed, 77))
           if shot_mode is not None else None)
    for x in range(k):
        h_x = op.apply(states[kept[x]].amplitudes)
        for y in range(k):
            ov = exact_overlap(kept[x], kept[y])
            if rng is not None and x != y:
                p_hat = rng.binomial(shot_mode.shots, min(1.0, abs(ov) ** 2))
                mag = np.sqrt(p_hat / shot_mode.shots)
                ov = mag * (ov / abs(ov) if abs(ov) > 0 else 1.0)
            s_mat[x, y] = ov
            h_mat[x, y] = np.vdot(h_x, states[kept[y]].amplitudes)
    s_mat = 0.5 * (s_mat + s_mat.conj().T)
    h_mat = 0.5 * (h_mat + h_mat.conj().T)
    energy, vals, dropped = _solve_generalized(s_mat, h_mat)
    return QLanczosResult(energy, KrylovPair(s_mat, h_mat, kept, vals, dropped))


# -- trace export -------------------------------------------------------------------

def export_trace(trace: QiteTrace, stem: str | Path) -> tuple[Path, Path]:
    """Write scalars to <stem>.csv and matrices to <stem>_matrices.json."""
    stem = Path(stem)
    csv_path = stem.with_suffix(".csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        names = trace.generator_names
        writer.writerow(["step", "tau", "energy", "energy_stderr", "log_c2"]
                        + [f"theta_{n}" for n in names])
        for k in range(trace.n_records):
            writer.writerow([k, repr(trace.taus[k]), repr(trace.energies[k]),
                             repr(trace.energy_stderrs[k]), repr(trace.log_c2[k])]
                            + [repr(v) for v in trace.thetas[k]])
    side_path = Path(str(stem) + "_matrices.json")
    side_path.write_text(json.dumps({
        "dtau": trace.dtau,
        "generators": trace.generator_names,
        "physical_time": trace.physical_time,
        "runs_total": trace.runs_total,
        "runs_per_step": trace.runs_per_step,
        "monotone": trace.monotone,
        "g": trace.g_matrices,
        "b": trace.b_vectors,
    }, indent=1))
    return csv_path, side_path


def load_trace(stem: str | Path) -> QiteTrace:
    stem = Path(stem)
    side = json.loads(Path(str(stem) + "_matrices.json").read_text())
    trace = QiteTrace(side["dtau"], side["generators"])
    trace.physical_time = side["physical_time"]
    trace.runs_total = side["runs_total"]
    trace.runs_per_step = list(side.get("runs_per_step", []))
    trace.monotone = side["monotone"]
    trace.g_matrices = side["g"]
    trace.b_vectors = side["b"]
    with open(stem.with_suffix(".csv")) as fh:
        for row in csv.DictReader(fh):
            trace.taus.append(float(row["tau"]))
            trace.energies.append(float(row["energy"]))
            trace.energy_stderrs.append(float(row["energy_stderr"]))
            trace.thetas.append([float(row[f"theta_{n}"])
                                 for n in side["generators"]])
            trace.log_c2.append(float(row["log_c2"]))
    return trace
