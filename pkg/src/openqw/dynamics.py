"""Slow-quench evolutions of the walk: unitary, disorder-averaged and Lindblad-dephased."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import stats

from .errors import GapClosureError, InvalidArgumentError
from .fields import DensityField, StateField
from .geometry import berry_phase, holonomy_angle, uhlmann_phase
from .walk import PAULI, BlochField, MomentumGrid, ThetaPair, bloch_decompose, step_unitaries

# Flat-band start and the default nontrivial target.  The target was picked by
# scanning the Berry-phase-pi region for endpoints whose straight ramp from the
# flat band crosses exactly one gap-closing line (see README).
DEFAULT_THETA_I = ThetaPair(0.0, np.pi)
DEFAULT_THETA_F = ThetaPair(3.4, -2.25)
DEFAULT_STEPS = 13
DEFAULT_DELTA_THETA1 = 0.2
DEFAULT_REALIZATIONS = 21
LINDBLAD_SUBSTEPS = 16

FLAT_BAND_GROUND = np.array([1.0, -1.0j]) / np.sqrt(2)


@dataclass(frozen=True)
class QuenchSchedule:
    """Linear ramp theta(t) = theta_i + (theta_f - theta_i) t / N, t = 1..N."""

    theta_i: ThetaPair
    theta_f: ThetaPair
    steps: int

    def __post_init__(self):
        if int(self.steps) != self.steps or self.steps < 1:
            raise InvalidArgumentError(f"steps must be a positive integer, got {self.steps!r}")

    @property
    def velocity(self) -> float:
        return 1.0 / self.steps

    def angles(self, t: int) -> ThetaPair:
        if t == 0:
            return self.theta_i
        if t == self.steps:
            return self.theta_f
        s = t * self.velocity
        a, b = self.theta_i.as_array(), self.theta_f.as_array()
        return ThetaPair(*(a + (b - a) * s))


def default_schedule(steps: int = DEFAULT_STEPS) -> QuenchSchedule:
    return QuenchSchedule(DEFAULT_THETA_I, DEFAULT_THETA_F, steps)


@dataclass(frozen=True)
class DisorderConfig:
    """Spectral disorder on theta1: offsets drawn from [-delta, +delta].

    Quasi-static by default (one offset per realization for the whole run).
    ``resample_per_step`` draws a fresh random offset at every step instead.
    """

    delta_theta1: float = DEFAULT_DELTA_THETA1
    n_realizations: int = DEFAULT_REALIZATIONS
    sampling: str = "uniform-grid"
    seed: int = 0
    resample_per_step: bool = False

    def __post_init__(self):
        if not np.isfinite(self.delta_theta1) or self.delta_theta1 < 0:
            raise InvalidArgumentError("delta_theta1 must be a non-negative number")
        if int(self.n_realizations) != self.n_realizations or self.n_realizations < 1:
            raise InvalidArgumentError("n_realizations must be a positive integer")
        if self.sampling not in ("uniform-grid", "random"):
            raise InvalidArgumentError(f"unknown sampling {self.sampling!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidArgumentError("seed must fit in 64 unsigned bits")

    def stream(self, realization: int) -> np.random.Generator:
        """Counter-based stream for one realization, independent of execution order."""
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(self.seed), realization])))

    def offsets(self, steps: int) -> np.ndarray:
        """theta1 offsets with shape (n_realizations, steps)."""
        n, d = self.n_realizations, self.delta_theta1
        if self.resample_per_step:
            return np.stack([self.stream(r).uniform(-d, d, steps) for r in range(n)])
        if self.sampling == "uniform-grid":
            base = np.linspace(-d, d, n) if n > 1 else np.zeros(1)
        else:
            base = np.array([self.stream(r).uniform(-d, d) for r in range(n)])
        return np.repeat(base[:, None], steps, axis=1)


@dataclass(frozen=True)
class NoiseConfig:
    """Dephasing rate per unit step time.

    ``gamma`` is a scalar, one rate per momentum node (M,), or a time-resolved
    table (N, M) giving gamma_k(t) for steps t = 1..N.
    """

    gamma: object = 0.0

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim > 2 or not np.all(np.isfinite(g)) or np.any(g < 0):
            raise InvalidArgumentError("gamma must be finite, non-negative and at most 2-D")

    def rates(self, t: int, grid: MomentumGrid) -> np.ndarray:
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim == 2:
            return g[t - 1]
        return np.broadcast_to(g, (grid.size,))


@dataclass
class TrajectoryRecord:
    """Fields at t = 0..N (index = step) with the instantaneous Hamiltonians.

    ``hamiltonians[t]`` is None where the gap closes at some grid node.
    """

    schedule: QuenchSchedule
    fields: list
    hamiltonians: list
    critical_step: int | None
    mode: str
    diagnostics: dict = dc_field(default_factory=dict)
    realizations: np.ndarray | None = None

    @property
    def final(self):
        return self.fields[-1]


@dataclass
class OccupationField:
    grid: MomentumGrid
    ntilde_z: np.ndarray

    def __post_init__(self):
        self.ntilde_z = np.asarray(self.ntilde_z, dtype=float)
        if self.ntilde_z.shape != (self.grid.size,):
            raise InvalidArgumentError("occupation array does not match the grid")

    @property
    def excitation_density(self) -> float:
        """Mean upper-band population (1 + n_z) / 2 over the zone."""
        return float(np.mean((1 + self.ntilde_z) / 2))


@dataclass
class ScalingResult:
    velocities: np.ndarray
    excitation_densities: np.ndarray
    uhlmann_phases: np.ndarray
    uhlmann_magnitudes: np.ndarray
    exponent: float
    exponent_ci: tuple
    r_squared: float


def initial_ground_state(grid: MomentumGrid) -> StateField:
    """(1, -i)/sqrt(2) at every node: the flat-band ground state, i.e. the
    momentum image of the localized |x=0> (|H> - i|V>)/sqrt(2)."""
    return StateField(grid, np.tile(FLAT_BAND_GROUND, (grid.size, 1)))


def _instantaneous(schedule: QuenchSchedule, grid: MomentumGrid, t: int):
    p = schedule.angles(t)
    E, n, closed = bloch_decompose(step_unitaries(p.theta1, p.theta2, grid.k))
    return E, n, closed


def hamiltonian_sequence(schedule: QuenchSchedule, grid: MomentumGrid):
    """Instantaneous Bloch fields for t = 0..N, plus the closed-gap node masks."""
    hams, masks = [], []
    for t in range(schedule.steps + 1):
        E, n, closed = _instantaneous(schedule, grid, t)
        masks.append(closed)
        hams.append(None if np.any(closed) else BlochField(grid, E, n))
    return hams, masks


def critical_step(hamiltonians) -> int | None:
    """First step whose lower-band Berry phase differs from the preceding valid step."""
    prev = None
    for t, h in enumerate(hamiltonians):
        if h is None:
            continue
        q = berry_phase(StateField(h.grid, h.lower_band())).quantized()
        if prev is not None and q != prev:
            return t
        prev = q
    return None


def _check_init(init: StateField) -> MomentumGrid:
    init.validate()
    return init.grid


def _evolve(schedule: QuenchSchedule, psi0: np.ndarray, k: np.ndarray, offsets=None) -> np.ndarray:
    """Spinor trajectory (N+1, M, 2) of one realization."""
    out = np.empty((schedule.steps + 1,) + psi0.shape, dtype=complex)
    out[0] = psi0
    psi = psi0
    for t in range(1, schedule.steps + 1):
        p = schedule.angles(t)
        th1 = p.theta1 if offsets is None else p.theta1 + offsets[t - 1]
        U = step_unitaries(th1, p.theta2, k)
        psi = np.einsum("kij,kj->ki", U, psi)
        out[t] = psi
    return out


def unitary_quench(schedule: QuenchSchedule, init: StateField) -> TrajectoryRecord:
    grid = _check_init(init)
    traj = _evolve(schedule, init.psi, grid.k)
    hams, masks = hamiltonian_sequence(schedule, grid)
    return TrajectoryRecord(
        schedule,
        [StateField(grid, traj[t]) for t in range(schedule.steps + 1)],
        hams,
        critical_step(hams),
        "unitary",
        {"gap_closed_nodes": [np.flatnonzero(m).tolist() for m in masks]},
    )


def disorder_ensemble_quench(
    schedule: QuenchSchedule,
    disorder: DisorderConfig,
    init: StateField,
    threads: int = 1,
    keep_realizations: bool = False,
) -> TrajectoryRecord:
    """Average of unitary runs with theta1 offset per realization.

    The reduction always runs in realization order, so the result does not
    depend on ``threads``.
    """
    grid = _check_init(init)
    k = grid.k
    if disorder.delta_theta1 == 0:
        # every realization is the clean run; evolve it once
        offsets = np.zeros((1, schedule.steps))
    else:
        offsets = disorder.offsets(schedule.steps)

    def one(r):
        return _evolve(schedule, init.psi, k, offsets[r])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            runs = list(pool.map(one, range(len(offsets))))
    else:
        runs = [one(r) for r in range(len(offsets))]
    rho = np.zeros((schedule.steps + 1, grid.size, 2, 2), dtype=complex)
    for traj in runs:
        rho += np.einsum("tki,tkj->tkij", traj, traj.conj())
    if len(runs) > 1:
        rho /= len(runs)
    hams, masks = hamiltonian_sequence(schedule, grid)
    return TrajectoryRecord(
        schedule,
        [DensityField(grid, rho[t]) for t in range(schedule.steps + 1)],
        hams,
        critical_step(hams),
        "ensemble",
        {"gap_closed_nodes": [np.flatnonzero(m).tolist() for m in masks], "offsets": offsets},
        np.stack([traj[-1] for traj in runs]) if keep_realizations else None,
    )


def _dephase(rho: np.ndarray, sz: np.ndarray, p: np.ndarray) -> np.ndarray:
    return (1 - p)[:, None, None] * rho + p[:, None, None] * (sz @ rho @ sz)


def _lindblad_step(rho, E, n, closed, gamma, substeps):
    """One walk step of d rho/dt = -i[H, rho] + gamma (sz rho sz - rho), unit duration.

    Exact unitary substep followed by the exact dephasing channel, repeated
    ``substeps`` times.  Nodes with a closed gap have no dephasing axis and are
    evolved with the step unitary alone (E = 0 or pi there, so U = +/-I).
    """
    dt = 1.0 / substeps
    nn = np.where(closed[:, None], 0.0, n)
    sz = np.einsum("ka,aij->kij", nn, PAULI)
    cu = np.where(closed, np.cos(E), np.cos(E * dt))
    su = np.where(closed, 0.0, np.sin(E * dt))
    Us = cu[:, None, None] * np.eye(2) - 1j * su[:, None, None] * sz
    p = np.where(closed, 0.0, (1 - np.exp(-2 * gamma * dt)) / 2)
    for s in range(substeps):
        if closed.any() and s > 0:
            Us = np.where(closed[:, None, None], np.eye(2), Us)
        rho = Us @ rho @ Us.conj().transpose(0, 2, 1)
        rho = _dephase(rho, sz, p)
    return rho


def lindblad_quench(
    schedule: QuenchSchedule, noise: NoiseConfig, init: StateField, substeps: int = LINDBLAD_SUBSTEPS
) -> TrajectoryRecord:
    grid = _check_init(init)
    rho = init.to_density().rho
    fields = [DensityField(grid, rho)]
    unitary_nodes = []
    for t in range(1, schedule.steps + 1):
        E, n, closed = _instantaneous(schedule, grid, t)
        rho = _lindblad_step(rho, E, n, closed, noise.rates(t, grid), substeps)
        fields.append(DensityField(grid, rho))
        unitary_nodes.append(np.flatnonzero(closed).tolist())
    hams, _ = hamiltonian_sequence(schedule, grid)
    return TrajectoryRecord(
        schedule, fields, hams, critical_step(hams), "lindblad", {"unitary_only_nodes": unitary_nodes}
    )


def eigenbasis_coherence(rho: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Length of the Bloch-vector component transverse to n (off-diagonal weight in the H eigenbasis)."""
    r = np.einsum("aij,kji->ka", PAULI, rho).real
    return np.linalg.norm(r - np.einsum("ka,ka->k", r, n)[:, None] * n, axis=1)


def calibrate_dephasing(
    schedule: QuenchSchedule,
    disorder: DisorderConfig,
    init: StateField,
    mode: str = "per-step",
    reference: TrajectoryRecord | None = None,
) -> NoiseConfig:
    """Fit Lindblad dephasing rates to the coherence decay of a disorder ensemble.

    ``per-step``: gamma_k(t) from the closed form
        |c_ens(t)| = |c_lind(t-1)| exp(-2 gamma),
    where c is the coherence in the eigenbasis of step t; unitary substeps do not
    change |c| in that basis, so this matches the coherence magnitude exactly
    whenever the ensemble decays (gamma is clipped at 0 otherwise).
    ``per-k``: one constant rate per node, least squares on |c(t)| over all steps.
    """
    grid = _check_init(init)
    ref = reference or disorder_ensemble_quench(schedule, disorder, init)
    target = [eigenbasis_coherence(f.rho, _instantaneous(schedule, grid, t)[1]) if t else None
              for t, f in enumerate(ref.fields)]
    if mode == "per-step":
        rho = init.to_density().rho
        table = np.zeros((schedule.steps, grid.size))
        for t in range(1, schedule.steps + 1):
            E, n, closed = _instantaneous(schedule, grid, t)
            before = eigenbasis_coherence(rho, np.where(closed[:, None], 0.0, n))
            with np.errstate(divide="ignore", invalid="ignore"):
                g = -0.5 * np.log(target[t] / before)
            g = np.where(np.isfinite(g) & ~closed, np.maximum(g, 0.0), 0.0)
            table[t - 1] = g
            rho = _lindblad_step(rho, E, n, closed, g, LINDBLAD_SUBSTEPS)
        return NoiseConfig(table)
    if mode == "per-k":
        candidates = np.linspace(0.0, 3.0, 601)
        cost = np.zeros((candidates.size, grid.size))
        for i, g in enumerate(candidates):
            run = lindblad_quench(schedule, NoiseConfig(g), init)
            for t in range(1, schedule.steps + 1):
                n = _instantaneous(schedule, grid, t)[1]
                cost[i] += (eigenbasis_coherence(run.fields[t].rho, np.nan_to_num(n)) - np.nan_to_num(target[t])) ** 2
        return NoiseConfig(candidates[np.argmin(cost, axis=0)])
    raise InvalidArgumentError(f"unknown calibration mode {mode!r}")


def trace_distances(a: DensityField, b: DensityField) -> np.ndarray:
    """Per-node trace distance; for qubits half the Bloch-vector separation."""
    return 0.5 * np.linalg.norm(a.bloch_vectors() - b.bloch_vectors(), axis=1)


def band_occupation(rho: DensityField, h: BlochField) -> OccupationField:
    """n~_z(k) = Tr(rho_k n_k.sigma)."""
    if rho.grid != h.grid:
        raise InvalidArgumentError("density and Hamiltonian grids differ")
    return OccupationField(rho.grid, np.einsum("ka,ka->k", rho.bloch_vectors(), h.n))


def dephased_reference(hf: BlochField, occ: OccupationField) -> DensityField:
    """rho_k = (1 + n~_z(k) n_k.sigma) / 2: the state fully dephased in the eigenbasis of hf."""
    if hf.grid != occ.grid:
        raise InvalidArgumentError("grids differ")
    if np.any(np.abs(occ.ntilde_z) > 1 + 1e-10):
        raise InvalidArgumentError("|n~_z| exceeds 1")
    return DensityField.from_bloch(hf.grid, occ.ntilde_z[:, None] * hf.n)


def scaling_study(
    steps_list,
    disorder: DisorderConfig,
    grid: MomentumGrid,
    theta_i: ThetaPair = DEFAULT_THETA_I,
    theta_f: ThetaPair = DEFAULT_THETA_F,
    threads: int = 1,
) -> ScalingResult:
    """Final excitation density and Uhlmann holonomy versus quench velocity 1/N.

    The exponent is the least-squares slope of log(excitation) against log(velocity),
    with a 95% t-interval.
    """
    steps_list = [int(s) for s in steps_list]
    if len(set(steps_list)) < 3:
        raise InvalidArgumentError("scaling study needs at least three distinct velocities")
    init = initial_ground_state(grid)
    vel, eps, phases, mags = [], [], [], []
    for N in steps_list:
        rec = disorder_ensemble_quench(QuenchSchedule(theta_i, theta_f, N), disorder, init, threads=threads)
        hf = rec.hamiltonians[-1]
        if hf is None:
            raise GapClosureError("final Hamiltonian is gapless on the grid")
        ph = uhlmann_phase(rec.final)
        vel.append(1.0 / N)
        eps.append(band_occupation(rec.final, hf).excitation_density)
        phases.append(ph.value)
        mags.append(holonomy_angle(ph.diagnostics["holonomy"]))
    vel, eps = np.array(vel), np.array(eps)
    fit = stats.linregress(np.log(vel), np.log(eps))
    dof = len(vel) - 2
    half = stats.t.ppf(0.975, dof) * fit.stderr if dof > 0 else np.inf
    return ScalingResult(
        vel, eps, np.array(phases), np.array(mags), float(fit.slope),
        (float(fit.slope - half), float(fit.slope + half)), float(fit.rvalue**2),
    )


def real_to_momentum(psi_x: np.ndarray, grid: MomentumGrid) -> StateField:
    """psi_k = sum_x exp(-ikx) psi_x for a spinor on sites x = -L..L (rows of psi_x).

    With M >= 2L+1 nodes the transform is invertible and
    sum_x |psi_x|^2 = mean_k |psi_k|^2.
    """
    psi_x = np.asarray(psi_x, dtype=complex)
    if psi_x.ndim != 2 or psi_x.shape[1] != 2 or psi_x.shape[0] % 2 == 0:
        raise InvalidArgumentError("expected a (2L+1, 2) spinor array")
    if np.linalg.norm(psi_x) == 0:
        raise InvalidArgumentError("zero-norm state")
    L = psi_x.shape[0] // 2
    if grid.size < psi_x.shape[0]:
        raise InvalidArgumentError("grid has fewer nodes than sites; transform is not invertible")
    x = np.arange(-L, L + 1)
    phase = np.exp(-1j * np.outer(grid.k, x))
    return StateField(grid, phase @ psi_x)


def momentum_to_real(field: StateField, half_width: int) -> np.ndarray:
    """Inverse of ``real_to_momentum``: psi_x = (1/M) sum_k exp(ikx) psi_k, x = -L..L."""
    if field.grid.size < 2 * half_width + 1:
        raise InvalidArgumentError("grid too small for the requested number of sites")
    if np.linalg.norm(field.psi) == 0:
        raise InvalidArgumentError("zero-norm state")
    x = np.arange(-half_width, half_width + 1)
    phase = np.exp(1j * np.outer(x, field.grid.k))
    return phase @ field.psi / field.grid.size


def real_space_density(record: TrajectoryRecord) -> np.ndarray:
    """Real-space density matrix of the final ensemble state in the basis
    index = 2 * (x + N) + spin, spin 0 = H (up), 1 = V (down)."""
    if record.realizations is None:
        raise InvalidArgumentError("record was produced without keep_realizations=True")
    N = record.schedule.steps
    grid = record.fields[0].grid
    dim = 2 * (2 * N + 1)
    rho = np.zeros((dim, dim), dtype=complex)
    for psi_k in record.realizations:
        v = momentum_to_real(StateField(grid, psi_k), N).reshape(-1)
        rho += np.outer(v, v.conj())
    return rho / len(record.realizations)
