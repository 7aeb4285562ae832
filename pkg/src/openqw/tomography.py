"""Projection-measurement simulation and state reconstruction for a walker on sites -N..N.

Hilbert-space index of |s, x> is ``2 * (x + N) + s`` with s = 0 for H and 1 for V.

Families: family ``i`` (delay i = -N..N) holds the interference projectors
(|H,x> +- |V,x+i>)/sqrt2 and (|H,x> +- i|V,x+i>)/sqrt2 for every x with both
sites on the lattice.  The delay-0 family also holds the computational
projectors |H,x>, |V,x>.  Projectors sharing a ``basis`` label are mutually
orthogonal; each basis in a family captures the same total probability mass.

Count model: a shot of family f goes into one of its B_f bases uniformly at
random and is recorded only if it lands on a listed projector, so the marginal
of projector m is Binomial(shots, p_m / B_f) ("binomial" mode, losses kept as
an unrecorded bin).  "multinomial" mode conditions on detection, so counts per
family sum to ``shots``.  "poisson" draws independent Poisson(shots p_m / B_f).
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConvergenceError, DegenerateMomentumWeightError, InvalidArgumentError
from .fields import DensityField, StateField
from .geometry import GeometricPhase, berry_phase, uhlmann_phase
from .walk import MomentumGrid

PHASE_TAGS = ("H", "V", "plus", "minus", "plus_i", "minus_i")
_COEFF = {"plus": 1.0, "minus": -1.0, "plus_i": 1j, "minus_i": -1j}
_BASIS = {"H": "Z", "V": "Z", "plus": "X", "minus": "X", "plus_i": "Y", "minus_i": "Y"}
COUNT_MODELS = ("multinomial", "binomial", "poisson")
RESTARTS = 10
ITERATION_BUDGET = 50_000


@dataclass(frozen=True)
class Projector:
    tag: str
    x: int
    x_prime: int

    @property
    def basis(self) -> str:
        return _BASIS[self.tag]


@dataclass
class ProjectionSetting:
    family_id: int
    projectors: list

    @property
    def n_bases(self) -> int:
        return len({p.basis for p in self.projectors})


def projector_vector(p: Projector, N: int) -> np.ndarray:
    if p.tag not in PHASE_TAGS:
        raise InvalidArgumentError(f"unknown projector tag {p.tag!r}")
    if not (-N <= p.x <= N and -N <= p.x_prime <= N):
        raise InvalidArgumentError(f"projector {p} leaves the lattice -{N}..{N}")
    v = np.zeros(2 * (2 * N + 1), dtype=complex)
    if p.tag in ("H", "V"):
        if p.x != p.x_prime:
            raise InvalidArgumentError(f"computational projector {p} must have x == x_prime")
        v[2 * (p.x + N) + (p.tag == "V")] = 1.0
        return v
    v[2 * (p.x + N)] = 1 / np.sqrt(2)
    v[2 * (p.x_prime + N) + 1] = _COEFF[p.tag] / np.sqrt(2)
    return v


def projection_settings(N: int) -> list:
    if int(N) != N or N < 1:
        raise InvalidArgumentError("N must be a positive integer")
    out = []
    for i in range(-N, N + 1):
        projs = []
        if i == 0:
            for x in range(-N, N + 1):
                projs += [Projector("H", x, x), Projector("V", x, x)]
        for x in range(-N, N + 1):
            if -N <= x + i <= N:
                projs += [Projector(t, x, x + i) for t in ("plus", "minus", "plus_i", "minus_i")]
        out.append(ProjectionSetting(i, projs))
    return out


def _as_density(state) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    if state.ndim == 1:
        nrm = np.linalg.norm(state)
        if abs(nrm - 1) > 1e-8:
            raise InvalidArgumentError("pure state is not normalized")
        return np.outer(state, state.conj())
    if state.ndim != 2 or state.shape[0] != state.shape[1]:
        raise InvalidArgumentError("state must be a vector or a square matrix")
    if abs(np.trace(state) - 1) > 1e-8:
        raise InvalidArgumentError("density matrix does not have unit trace")
    return state


def _sites(dim: int) -> int:
    if dim % 2 or (dim // 2) % 2 == 0:
        raise InvalidArgumentError(f"dimension {dim} is not 2(2N+1)")
    return (dim // 2 - 1) // 2


def born_probabilities(state, setting: ProjectionSetting) -> np.ndarray:
    """p_m = <m|rho|m> for every projector of the setting."""
    rho = _as_density(state)
    N = _sites(rho.shape[0])
    V = np.stack([projector_vector(p, N) for p in setting.projectors])
    return _probabilities(V, rho)


def _probabilities(V: np.ndarray, rho: np.ndarray) -> np.ndarray:
    return np.clip(np.einsum("md,de,me->m", V.conj(), rho, V).real, 0.0, None)


@dataclass
class CountDataset:
    settings: list
    counts: list
    shots: int
    seed: int
    model: str = "multinomial"

    def __post_init__(self):
        if self.model not in COUNT_MODELS:
            raise InvalidArgumentError(f"unknown count model {self.model!r}")
        self.counts = [np.asarray(c, dtype=np.int64) for c in self.counts]

    @property
    def N(self) -> int:
        return (len(self.settings) - 1) // 2

    def records(self):
        """One dict per (family, projector), in setting order."""
        for s, c in zip(self.settings, self.counts):
            for p, n in zip(s.projectors, c):
                yield {"family_id": s.family_id, "x": p.x, "x_prime": p.x_prime, "phase_tag": p.tag,
                       "counts": n.item(), "shots": self.shots}

    @classmethod
    def from_records(cls, rows, seed: int = 0, model: str = "multinomial") -> "CountDataset":
        fams: dict = {}
        shots = None
        for r in rows:
            fid = int(r["family_id"])
            fams.setdefault(fid, ([], []))
            fams[fid][0].append(Projector(str(r["phase_tag"]), int(r["x"]), int(r["x_prime"])))
            fams[fid][1].append(int(r["counts"]))
            if shots is not None and int(r["shots"]) != shots:
                raise InvalidArgumentError("records disagree on shots")
            shots = int(r["shots"])
        if not fams:
            raise InvalidArgumentError("no records")
        order = sorted(fams)
        return cls([ProjectionSetting(f, fams[f][0]) for f in order], [fams[f][1] for f in order], shots, seed, model)


def simulate_counts(state, settings, shots: int, seed: int, model: str = "multinomial") -> CountDataset:
    """Shot-noise counts, one independent stream per family.

    ``shots=None`` is not accepted; use ``expected_counts`` for noiseless data.
    """
    if int(shots) != shots or shots < 1:
        raise InvalidArgumentError("shots must be a positive integer")
    if model not in COUNT_MODELS:
        raise InvalidArgumentError(f"unknown count model {model!r}")
    rho = _as_density(state)
    counts = []
    for j, s in enumerate(settings):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), j])))
        q = born_probabilities(rho, s) / s.n_bases
        if model == "multinomial":
            counts.append(rng.multinomial(shots, q / q.sum()))
        elif model == "binomial":
            counts.append(rng.multinomial(shots, np.append(q, max(0.0, 1 - q.sum())))[:-1])
        else:
            counts.append(rng.poisson(shots * q))
    return CountDataset(list(settings), counts, int(shots), int(seed), model)


def expected_counts(state, settings, shots: int, model: str = "multinomial") -> CountDataset:
    """Noise-free (real-valued) counts; used for exact-data round trips."""
    rho = _as_density(state)
    counts = []
    for s in settings:
        q = born_probabilities(rho, s) / s.n_bases
        counts.append(shots * (q / q.sum() if model == "multinomial" else q))
    ds = CountDataset(list(settings), [np.zeros(len(c), dtype=np.int64) for c in counts], int(shots), -1, model)
    ds.counts = [np.asarray(c, dtype=float) for c in counts]
    return ds


class _Likelihood:
    """Log-likelihood of a dataset as a function of rho, with its matrix gradient."""

    def __init__(self, data: CountDataset):
        N = data.N
        self.dim = 2 * (2 * N + 1)
        vecs, fam, nb = [], [], []
        for j, s in enumerate(data.settings):
            for p in s.projectors:
                vecs.append(projector_vector(p, N))
                fam.append(j)
            nb.append(s.n_bases)
        self.V = np.stack(vecs)
        self.family = np.array(fam)
        self.n_bases = np.array(nb, dtype=float)[self.family]
        self.n = np.concatenate([np.asarray(c, dtype=float) for c in data.counts])
        self.shots = float(data.shots)
        self.model = data.model
        self.n_fam = len(data.settings)
        self.fam_total = np.bincount(self.family, self.n, minlength=self.n_fam)

    def probabilities(self, rho):
        return _probabilities(self.V, rho)

    def value_and_weights(self, rho):
        """(log L, dlogL/dq_m)."""
        q = self.probabilities(rho) / self.n_bases
        qs = np.maximum(q, 1e-300)
        pos = self.n > 0
        if self.model == "multinomial":
            tot = np.bincount(self.family, q, minlength=self.n_fam)
            L = np.sum(self.n[pos] * np.log(qs[pos])) - np.sum(self.fam_total * np.log(np.maximum(tot, 1e-300)))
            w = self.n / qs - (self.fam_total / tot)[self.family]
        elif self.model == "binomial":
            tot = np.bincount(self.family, q, minlength=self.n_fam)
            lost = self.shots - self.fam_total
            rest = np.maximum(1 - tot, 1e-300)
            L = np.sum(self.n[pos] * np.log(qs[pos])) + np.sum(lost * np.log(rest))
            w = self.n / qs - (lost / rest)[self.family]
        else:
            L = np.sum(self.n[pos] * np.log(qs[pos])) - self.shots * np.sum(q)
            w = self.n / qs - self.shots
        w = np.where(pos | (q > 0), w, 0.0) / self.n_bases
        return float(L), w

    def gradient_matrix(self, w):
        """G = sum_m w_m |m><m|."""
        return (self.V.T * w) @ self.V.conj()


def log_likelihood(data: CountDataset, rho) -> float:
    return _Likelihood(data).value_and_weights(_as_density(rho))[0]


@dataclass
class ReconstructionResult:
    state: np.ndarray
    kind: str
    neg_log_likelihood: float
    iterations: int
    fidelity: float | None = None
    diagnostics: dict = dc_field(default_factory=dict)

    def density(self) -> np.ndarray:
        return np.outer(self.state, self.state.conj()) if self.kind == "pure" else self.state


def _rho_of(T):
    rho = T.conj().T @ T
    return rho / np.trace(rho).real


def _gradient(lik: _Likelihood, T, rho, w):
    """d logL / d conj(T) for rho = T^dag T / Tr(T^dag T)."""
    G = lik.gradient_matrix(w)
    t = np.trace(T.conj().T @ T).real
    return 2 * (T @ G - np.trace(G @ rho).real * T) / t


def _ascend(lik: _Likelihood, T, max_iter, tol, history):
    """Gradient ascent in T along Polak-Ribiere conjugate directions with Armijo
    backtracking.  A step is accepted only if it raises the likelihood, and the
    direction falls back to the plain gradient whenever it stops being uphill.

    Stops when ``patience`` consecutive steps each gain less than ``tol`` times
    the total count (likelihood is extensive in the counts).
    """
    scale = tol * max(1.0, float(np.sum(lik.n)))
    rho = _rho_of(T)
    L, w = lik.value_and_weights(rho)
    grad = _gradient(lik, T, rho, w)
    direction = grad
    step, it, quiet, patience = 1e-3, 0, 0, 20
    while it < max_iter:
        it += 1
        slope = np.vdot(grad, direction).real
        if slope <= 0:
            direction, slope = grad, np.vdot(grad, grad).real
        if slope == 0:
            return T, L, it, True
        while True:
            T_new = T + step * direction
            rho_new = _rho_of(T_new)
            L_new, w_new = lik.value_and_weights(rho_new)
            if L_new >= L + 1e-4 * step * slope:
                break
            step *= 0.5
            if step < 1e-30:
                return T, L, it, True
        gain = L_new - L
        nrm = np.sqrt(np.trace(T_new.conj().T @ T_new).real)
        T, rho, L, w = T_new / nrm, rho_new, L_new, w_new
        direction = direction / nrm
        g_new = _gradient(lik, T, rho, w)
        beta = max(0.0, np.vdot(g_new, g_new - grad).real / np.vdot(grad, grad).real)
        grad, direction = g_new, g_new + beta * direction
        history.append(L)
        step *= 1.5
        quiet = quiet + 1 if gain <= scale else 0
        if quiet >= patience:
            return T, L, it, True
    return T, L, it, False


def mle_density(
    data: CountDataset,
    rank: int | None = None,
    restarts: int = RESTARTS,
    max_iter: int = ITERATION_BUDGET,
    tol: float = 1e-12,
    seed: int = 0,
    truth=None,
    init=None,
    gauge_probes: int = 0,
) -> ReconstructionResult:
    """Maximum-likelihood density matrix rho = T^dag T / Tr(T^dag T), T of shape (rank, d).

    The first start is ``init`` (or the maximally mixed state for full rank, a
    random T otherwise); further restarts use seeded random T.  ``max_iter`` is
    the total iteration budget shared by all restarts.
    """
    lik = _Likelihood(data)
    d = lik.dim
    r = d if rank is None else int(rank)
    if r < 1:
        raise InvalidArgumentError("rank cap must be at least 1")
    r = min(r, d)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x7051])))
    starts = []
    if init is not None:
        w, v = np.linalg.eigh(_as_density(init))
        idx = np.argsort(w)[::-1][:r]
        starts.append((v[:, idx] * np.sqrt(np.clip(w[idx], 1e-6, None))).conj().T)
    elif r == d:
        starts.append(np.eye(d, dtype=complex))
    while len(starts) < max(1, restarts):
        starts.append(rng.normal(size=(r, d)) + 1j * rng.normal(size=(r, d)))
    L0 = lik.value_and_weights(_rho_of(starts[0]))[0]
    budget = int(max_iter)
    per = max(1, budget // len(starts))
    best, used, converged_any, runs = None, 0, False, []
    for T0 in starts:
        history = [lik.value_and_weights(_rho_of(T0))[0]]
        T, L, it, conv = _ascend(lik, T0, per, tol, history)
        used += it
        converged_any |= conv
        runs.append({"log_likelihood": L, "iterations": it, "converged": conv,
                     "monotone": bool(np.all(np.diff(history) >= 0))})
        if best is None or L > best[1]:
            best = (T, L, history)
    rho = _rho_of(best[0])
    result = ReconstructionResult(
        rho, "density", -best[1], used,
        fidelity(rho, truth) if truth is not None else None,
        {"rank": r, "initial_log_likelihood": L0, "restarts": runs, "history": np.array(best[2])},
    )
    if gauge_probes:
        result.diagnostics["gauge_orbit_distance"] = gauge_orbit_distance(data, rho, gauge_probes, seed)
    if not converged_any:
        raise ConvergenceError(f"no restart converged within {budget} iterations", best=result)
    return result


def fit_wavefunction(data: CountDataset, restarts: int = RESTARTS, max_iter: int = ITERATION_BUDGET,
                     seed: int = 0, truth=None) -> ReconstructionResult:
    """Pure-state fit: the rank-1 case of ``mle_density`` returned as amplitudes.

    Global phase is fixed by making the largest-magnitude amplitude real positive.
    """
    try:
        res = mle_density(data, rank=1, restarts=restarts, max_iter=max_iter, seed=seed)
    except ConvergenceError as err:
        err.best = _to_pure(err.best, truth)
        raise
    return _to_pure(res, truth)


def _to_pure(res: ReconstructionResult, truth):
    w, v = np.linalg.eigh(res.state)
    psi = v[:, -1]
    j = int(np.argmax(np.abs(psi)))
    psi = psi * np.exp(-1j * np.angle(psi[j]))
    psi[j] = abs(psi[j])
    return ReconstructionResult(
        psi, "pure", res.neg_log_likelihood, res.iterations,
        fidelity(psi, truth) if truth is not None else None, res.diagnostics,
    )


def _sqrtm_psd(rho):
    w, v = np.linalg.eigh(rho)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def fidelity(a, b) -> float:
    """Uhlmann fidelity (Tr sqrt(sqrt(a) b sqrt(a)))^2; vectors are treated as pure states."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    if a.ndim == 1 and b.ndim == 1:
        return float(abs(np.vdot(a, b)) ** 2)
    if a.ndim == 1:
        return float(np.vdot(a, b @ a).real)
    if b.ndim == 1:
        return float(np.vdot(b, a @ b).real)
    s = _sqrtm_psd(a)
    w = np.linalg.eigvalsh(s @ b @ s)
    return float(np.sum(np.sqrt(np.clip(w, 0, None))) ** 2)


def measurement_null_space(data: CountDataset) -> np.ndarray:
    """Hermitian matrices X (stacked) with <m|X|m> = 0 for every projector."""
    lik = _Likelihood(data)
    d = lik.dim
    basis = []
    for i in range(d):
        for j in range(i, d):
            E = np.zeros((d, d), dtype=complex)
            E[i, j] = E[j, i] = 1.0
            basis.append(E if i == j else E / np.sqrt(2))
            if i != j:
                F = np.zeros((d, d), dtype=complex)
                F[i, j], F[j, i] = -1j / np.sqrt(2), 1j / np.sqrt(2)
                basis.append(F)
    B = np.stack(basis)
    A = np.einsum("md,bde,me->mb", lik.V.conj(), B, lik.V).real
    _, s, vh = np.linalg.svd(A)
    rank = int(np.sum(s > 1e-10 * s[0]))
    return np.einsum("nb,bde->nde", vh[rank:], B)


def gauge_orbit_distance(data: CountDataset, rho, probes: int = 32, seed: int = 0) -> float:
    """Largest trace distance to rho among states rho + eps X, X in the measurement
    null space, that remain positive: all have exactly rho's likelihood."""
    null = measurement_null_space(data)
    if len(null) == 0:
        return 0.0
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0x9A])))
    best = 0.0
    dirs = list(null[: min(len(null), probes)])
    for _ in range(probes):
        c = rng.normal(size=len(null))
        dirs.append(np.einsum("n,nde->de", c / np.linalg.norm(c), null))
    w0, v0 = np.linalg.eigh(rho)
    for X in dirs:
        for sign in (1.0, -1.0):
            lo, hi = 0.0, 2.0
            for _ in range(50):
                mid = (lo + hi) / 2
                if np.linalg.eigvalsh(rho + sign * mid * X)[0] >= -1e-12:
                    lo = mid
                else:
                    hi = mid
            best = max(best, 0.5 * lo * np.sum(np.abs(np.linalg.eigvalsh(X))))
    return float(best)


def momentum_blocks(rho_x: np.ndarray, grid: MomentumGrid) -> np.ndarray:
    """rho_k = sum_{x,y} exp(-ik(x-y)) rho_{(x,.),(y,.)}: unnormalized 2x2 blocks per node."""
    d = rho_x.shape[0]
    N = _sites(d)
    x = np.arange(-N, N + 1)
    blocks = rho_x.reshape(2 * N + 1, 2, 2 * N + 1, 2)
    ph = np.exp(-1j * np.outer(grid.k, x))
    return np.einsum("kx,xsyt,ky->kst", ph, blocks, ph.conj())


def phase_from_reconstruction(result: ReconstructionResult, grid: MomentumGrid) -> GeometricPhase:
    """Momentum-resolved phase of a reconstruction.

    ``rho_k`` is a trigonometric polynomial of degree 2N, so any grid gives exact
    node values; grids finer than the 2N+1 site count only refine the discretized
    connection.  Pure fits give a Berry phase, density fits an Uhlmann phase.
    """
    blocks = momentum_blocks(result.density(), grid)
    tr = np.trace(blocks, axis1=1, axis2=2).real
    if np.min(tr) < 1e-9:
        j = int(np.argmin(tr))
        raise DegenerateMomentumWeightError(f"momentum node {j} carries weight {tr[j]:.3g}")
    rho_k = blocks / tr[:, None, None]
    rho_k = 0.5 * (rho_k + rho_k.conj().transpose(0, 2, 1))
    if result.kind == "pure":
        N = _sites(result.state.shape[0])
        x = np.arange(-N, N + 1)
        psi = np.exp(-1j * np.outer(grid.k, x)) @ result.state.reshape(2 * N + 1, 2)
        psi /= np.linalg.norm(psi, axis=1)[:, None]
        return berry_phase(StateField(grid, psi))
    return uhlmann_phase(DensityField(grid, rho_k))
