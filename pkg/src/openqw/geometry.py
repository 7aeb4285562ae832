"""Berry and Uhlmann phases of momentum-space fields.

Two routes exist for each invariant so that one can check the other:

* Berry phase: gauge-invariant product of neighbour overlaps (``berry_phase``)
  and a Riemann sum of the Berry connection in a smooth periodic gauge
  (``berry_phase_riemann``).
* Uhlmann phase: ordered product of ``exp(A_j dk)`` with the commutator
  connection ``A = [d_k rho, rho]`` (``uhlmann_phase``) and the discrete
  Uhlmann parallel transport built from polar decompositions
  (``uhlmann_phase_polar_oracle``).
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Sequence

import numpy as np

from .errors import GapClosureError, GridTooCoarseError, InvalidArgumentError, RankDeficiencyError
from .fields import DensityField, StateField
from .walk import PAULI, BlochField, MomentumGrid

QUANTIZATION_TOL = 0.05 * np.pi
POLAR_REGULARIZATION = 1e-6


def wrap_phase(x):
    """Reduce angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=float), 2 * np.pi)


def phase_distance(a, b):
    """Distance between two angles on the circle."""
    return np.abs(wrap_phase(np.asarray(a) - np.asarray(b)))


@dataclass
class GeometricPhase:
    value: float
    method: str
    diagnostics: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.value = float(wrap_phase(self.value))
        if not np.isfinite(self.value):
            raise InvalidArgumentError("geometric phase is not finite")

    def quantized(self, tol: float = QUANTIZATION_TOL):
        """0.0 or pi when within ``tol`` of either, otherwise None."""
        for target in (0.0, np.pi):
            if phase_distance(self.value, target) <= tol:
                return target
        return None


@dataclass
class UhlmannConnectionField:
    grid: MomentumGrid
    A: np.ndarray


def berry_phase(field: StateField) -> GeometricPhase:
    """Discrete Berry phase -Im sum_j ln(<psi_j|psi_j+1> / |<psi_j|psi_j+1>|), periodic closure."""
    field.validate()
    psi = field.psi
    ov = np.einsum("ki,ki->k", psi.conj(), np.roll(psi, -1, axis=0))
    mags = np.abs(ov)
    if np.min(mags) < 1e-12:
        j = int(np.argmin(mags))
        raise GridTooCoarseError(f"overlap between nodes {j} and {(j + 1) % len(ov)} vanishes")
    # product of unit phases rather than a sum of logs: stays exact for quantized cases
    total = np.prod(ov / mags)
    return GeometricPhase(-np.angle(total), "fukui", {"min_overlap": float(np.min(mags))})


def chiral_angle(n: np.ndarray) -> np.ndarray:
    """Angle alpha with (n_y, n_z) = |.| (sin alpha, cos alpha)."""
    return np.arctan2(n[:, 1], n[:, 2])


def winding_number(field: BlochField) -> int:
    """Signed number of turns of (n_y, n_z) around the origin across the zone."""
    n = field.n
    if np.max(np.abs(n[:, 0])) > 1e-9:
        raise InvalidArgumentError("winding number needs a chiral (n_x = 0) field")
    r = np.hypot(n[:, 1], n[:, 2])
    if np.min(r) < 1e-9:
        raise GapClosureError("(n_y, n_z) passes through the origin")
    alpha = chiral_angle(n)
    steps = wrap_phase(np.diff(np.append(alpha, alpha[0])))
    return int(np.rint(np.sum(steps) / (2 * np.pi)))


def berry_phase_riemann(field: BlochField) -> GeometricPhase:
    """Riemann sum of i<psi|d_k psi> for the lower band of a chiral field.

    The lower band is written in the periodic gauge
    psi = exp(i alpha/2) (sin(alpha/2), -i cos(alpha/2)) with alpha unwrapped
    along the zone, and the connection is differentiated numerically.
    Meant for fine grids (~1e5 nodes); accuracy is O(dk^2).
    """
    n = field.n
    if np.max(np.abs(n[:, 0])) > 1e-9:
        raise InvalidArgumentError("Riemann Berry phase needs a chiral (n_x = 0) field")
    alpha = np.unwrap(chiral_angle(n))
    # continue alpha past k = pi so the central difference closes periodically
    turn = alpha[-1] + wrap_phase(alpha[0] - alpha[-1]) - alpha[0]
    ext = np.concatenate([[alpha[-1] - turn], alpha, [alpha[0] + turn]])

    def spinor(a):
        return np.exp(0.5j * a)[:, None] * np.stack([np.sin(a / 2), -1j * np.cos(a / 2)], axis=1)

    psi = spinor(ext)
    dk = field.grid.dk
    dpsi = (psi[2:] - psi[:-2]) / (2 * dk)
    conn = 1j * np.einsum("ki,ki->k", psi[1:-1].conj(), dpsi)
    total = np.sum(conn.real) * dk
    return GeometricPhase(total, "riemann", {"imag_residual": float(np.max(np.abs(conn.imag)))})


def _density_derivative(rho: np.ndarray, dk: float) -> np.ndarray:
    return (np.roll(rho, -1, axis=0) - np.roll(rho, 1, axis=0)) / (2 * dk)


def uhlmann_connection(field: DensityField) -> UhlmannConnectionField:
    """A_j = [(rho_{j+1} - rho_{j-1}) / (2 dk), rho_j] with periodic indexing."""
    rho = field.rho
    d = _density_derivative(rho, field.grid.dk)
    return UhlmannConnectionField(field.grid, d @ rho - rho @ d)


def _expm_traceless_antihermitian(A: np.ndarray, t: float) -> np.ndarray:
    """exp(A t) for stacked 2x2 A = i a.sigma (+ a negligible trace part)."""
    c0 = np.trace(A, axis1=1, axis2=2) / 2
    a = (np.einsum("aij,kji->ka", PAULI, A) / 2j).real
    mag = np.linalg.norm(a, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(mag[:, None] > 0, a / np.where(mag > 0, mag, 1.0)[:, None], 0.0)
    rot = np.cos(mag * t)[:, None, None] * np.eye(2) + 1j * np.sin(mag * t)[:, None, None] * np.einsum(
        "ka,aij->kij", unit, PAULI
    )
    return np.exp(c0 * t)[:, None, None] * rot


def _ordered_product(factors: np.ndarray, ordering: str) -> np.ndarray:
    V = np.eye(2, dtype=complex)
    if ordering == "forward":
        for F in factors:  # node k0 acts first, later nodes multiply from the left
            V = F @ V
    elif ordering == "reverse":
        for F in factors:
            V = V @ F
    else:
        raise InvalidArgumentError(f"unknown ordering {ordering!r}")
    return V


def holonomy_angle(V: np.ndarray) -> float:
    """Rotation angle |U| of an SU(2) holonomy V = cos|U| + i sin|U| u.sigma."""
    return float(np.arccos(np.clip(np.trace(V).real / 2, -1.0, 1.0)))


def uhlmann_phase(field: DensityField, ordering: str = "forward") -> GeometricPhase:
    """arg Tr(rho_{k0} V) with V the path-ordered exponential of the commutator connection."""
    field.validate()
    conn = uhlmann_connection(field)
    factors = _expm_traceless_antihermitian(conn.A, field.grid.dk)
    V = _ordered_product(factors, ordering)
    tr = np.trace(field.rho[0] @ V)
    return GeometricPhase(
        np.angle(tr),
        "pathordered",
        {"trace_magnitude": float(abs(tr)), "holonomy": V, "holonomy_angle": holonomy_angle(V), "ordering": ordering},
    )


def _sqrt_psd(rho: np.ndarray):
    w, v = np.linalg.eigh(rho)
    return (v * np.sqrt(np.clip(w, 0, None))[:, None, :]) @ v.conj().transpose(0, 2, 1), w


def uhlmann_phase_polar_oracle(
    field: DensityField, regularize: bool = False, orientation: str = "forward"
) -> GeometricPhase:
    """Uhlmann phase from discrete parallel transport of amplitudes sqrt(rho) U.

    Each edge contributes the unitary factor W_j of the polar decomposition
    sqrt(rho_{j+1}) sqrt(rho_j) = P_j W_j.  Nodes must be full rank; with
    ``regularize=True`` every node is first mixed as (1-eps) rho + eps I/2.
    """
    field.validate()
    rho = field.rho
    eps = 0.0
    if regularize:
        eps = POLAR_REGULARIZATION
        rho = (1 - eps) * rho + eps * np.eye(2) / 2
    root, w = _sqrt_psd(rho)
    low = np.min(w, axis=1)
    if np.min(low) <= 1e-8:
        j = int(np.argmin(low))
        raise RankDeficiencyError(f"node {j} has minimum eigenvalue {low[j]:.3g}", node=j)
    nxt = np.roll(root, -1, axis=0)
    if orientation == "forward":
        Mj = nxt @ root
    elif orientation == "reverse":
        Mj = root @ nxt
    else:
        raise InvalidArgumentError(f"unknown orientation {orientation!r}")
    u, _, vh = np.linalg.svd(Mj)
    W = u @ vh
    V = _ordered_product(W, "forward")
    tr = np.trace(rho[0] @ V)
    return GeometricPhase(
        np.angle(tr),
        "polar",
        {"trace_magnitude": float(abs(tr)), "holonomy": V, "regularization": eps, "orientation": orientation},
    )


@dataclass
class PhaseSeries:
    steps: np.ndarray
    phases: np.ndarray
    method: str
    mean_purity: np.ndarray
    excitation: np.ndarray | None = None
    commutator_norm: np.ndarray | None = None


def _tag_step(err: Exception, step: int) -> Exception:
    err.step = step
    if err.args:
        err.args = (f"step {step}: {err.args[0]}",) + err.args[1:]
    return err


def phase_series(
    trajectory: Sequence, hamiltonians: Sequence[BlochField | None] | None = None, steps=None
) -> PhaseSeries:
    """Per-step Berry (StateField) or Uhlmann (DensityField) phases plus purity diagnostics.

    With ``hamiltonians`` the upper-band population and the Frobenius norm of
    [rho_k, H_k] (median over k) are recorded too; missing entries give NaN.
    """
    trajectory = list(trajectory)
    if not trajectory:
        raise InvalidArgumentError("empty trajectory")
    grid = trajectory[0].grid
    if any(f.grid != grid for f in trajectory):
        raise InvalidArgumentError("all fields in a trajectory must share one grid")
    pure = isinstance(trajectory[0], StateField)
    steps = np.arange(len(trajectory)) if steps is None else np.asarray(steps)
    phases, purity, exc, comm = [], [], [], []
    for i, f in enumerate(trajectory):
        try:
            ph = berry_phase(f) if isinstance(f, StateField) else uhlmann_phase(f)
        except Exception as err:  # re-raised with the step attached
            raise _tag_step(err, int(steps[i]))
        phases.append(ph.value)
        dens = f.to_density() if isinstance(f, StateField) else f
        purity.append(float(np.mean(dens.purity())))
        h = hamiltonians[i] if hamiltonians is not None else None
        if h is None:
            exc.append(np.nan)
            comm.append(np.nan)
        else:
            nz = np.einsum("ka,ka->k", dens.bloch_vectors(), h.n)
            exc.append(float(np.mean((1 + nz) / 2)))
            comm.append(float(np.median(commutator_norms(dens, h))))
    return PhaseSeries(
        steps,
        np.array(phases),
        "fukui" if pure else "pathordered",
        np.array(purity),
        np.array(exc) if hamiltonians is not None else None,
        np.array(comm) if hamiltonians is not None else None,
    )


def commutator_norms(rho: DensityField, h: BlochField) -> np.ndarray:
    """Frobenius norm of [rho_k, H_k] at every node, H_k = E_k n_k.sigma."""
    H = h.hamiltonians()
    c = rho.rho @ H - H @ rho.rho
    return np.linalg.norm(c, axis=(1, 2))
