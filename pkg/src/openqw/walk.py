"""Split-step walk operators in momentum space and their Bloch Hamiltonians.

Conventions used throughout the package:

* ``|k> = sum_x exp(ikx) |x>``, so the spin-up shift acts as ``diag(exp(-ik), 1)``
  and the spin-down shift as ``diag(1, exp(ik))``.
* ``R(theta) = exp(-i theta sigma_y / 2)`` (a real rotation matrix).
* The step unitary is written ``U_k = exp(-i E_k n_k . sigma)`` with ``E_k`` in
  ``[0, pi]``; the lower band is the ``-1`` eigenvector of ``n_k . sigma``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GapClosureError, InvalidArgumentError

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = np.stack([SIGMA_X, SIGMA_Y, SIGMA_Z])
IDENTITY = np.eye(2, dtype=complex)

GAP_TOL = 1e-9


@dataclass(frozen=True)
class ThetaPair:
    """Coin angles (theta1, theta2) in radians.

    Values are kept exactly as given, because straight-line ramps between two
    pairs depend on the representative; ``reduced()`` gives the canonical one.
    """

    theta1: float
    theta2: float

    def __post_init__(self):
        if not (np.isfinite(self.theta1) and np.isfinite(self.theta2)):
            raise InvalidArgumentError(f"non-finite coin angles {self.theta1!r}, {self.theta2!r}")
        object.__setattr__(self, "theta1", float(self.theta1))
        object.__setattr__(self, "theta2", float(self.theta2))

    def reduced(self) -> "ThetaPair":
        """Representative in [-2pi, 2pi) of each angle (the step operator is 4pi-periodic)."""
        wrap = lambda a: (a + 2 * np.pi) % (4 * np.pi) - 2 * np.pi
        return ThetaPair(wrap(self.theta1), wrap(self.theta2))

    def as_array(self) -> np.ndarray:
        return np.array([self.theta1, self.theta2])


@dataclass(frozen=True)
class MomentumGrid:
    """Uniform grid k_j = -pi + 2 pi j / M, j = 0..M-1, covering the zone once."""

    size: int

    def __post_init__(self):
        if int(self.size) != self.size or self.size < 8:
            raise InvalidArgumentError(f"momentum grid needs an integer size >= 8, got {self.size!r}")
        object.__setattr__(self, "size", int(self.size))

    @property
    def k(self) -> np.ndarray:
        return -np.pi + 2 * np.pi * np.arange(self.size) / self.size

    @property
    def dk(self) -> float:
        return 2 * np.pi / self.size

    def negated_index(self) -> np.ndarray:
        """Index of the node holding -k_j for every j."""
        return (-np.arange(self.size)) % self.size


def _check_angle(theta):
    theta = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(theta)):
        raise InvalidArgumentError(f"non-finite rotation angle {theta!r}")
    return theta


def coin_rotation(theta) -> np.ndarray:
    """R_y(theta) = [[cos(theta/2), -sin(theta/2)], [sin(theta/2), cos(theta/2)]].

    Broadcasts over array input, returning shape ``theta.shape + (2, 2)``.
    """
    theta = _check_angle(theta)
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    out = np.empty(theta.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    return out


def shift_up_k(k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    out = np.zeros(k.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = np.exp(-1j * k)
    out[..., 1, 1] = 1.0
    return out


def shift_down_k(k) -> np.ndarray:
    k = np.asarray(k, dtype=float)
    out = np.zeros(k.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = 1.0
    out[..., 1, 1] = np.exp(1j * k)
    return out


def step_unitaries(theta1, theta2, k) -> np.ndarray:
    """Vectorized U_k = R(theta1/2) S_down R(theta2) S_up R(theta1/2) over an array of k.

    ``theta1`` may be a scalar or broadcast against ``k`` (used for disorder).
    """
    k = np.asarray(k, dtype=float)
    half = coin_rotation(np.broadcast_to(np.asarray(theta1, dtype=float) / 2, k.shape))
    mid = coin_rotation(np.asarray(theta2, dtype=float))
    return half @ shift_down_k(k) @ mid @ shift_up_k(k) @ half


def step_unitary_k(params: ThetaPair, k: float) -> np.ndarray:
    if not np.isfinite(k) or not (-np.pi <= k < np.pi):
        raise InvalidArgumentError(f"momentum {k!r} outside [-pi, pi)")
    return step_unitaries(params.theta1, params.theta2, np.array(k))


def bloch_decompose(U: np.ndarray):
    """Split stacked SU(2) matrices into (E, n, closed).

    ``closed`` flags nodes with |sin E| < GAP_TOL, where n is returned as NaN.
    E is computed with atan2, which agrees with arccos(Re Tr U / 2) but keeps
    full precision near the band edges.
    """
    U = np.asarray(U, dtype=complex)
    a = np.trace(U, axis1=-2, axis2=-1).real / 2
    # U = a I - i b.sigma  =>  i Tr(sigma_a U) = 2 b_a
    b = (1j * np.einsum("aij,...ji->...a", PAULI, U)).real / 2
    sinE = np.linalg.norm(b, axis=-1)
    E = np.arctan2(sinE, a)
    closed = sinE < GAP_TOL
    with np.errstate(invalid="ignore", divide="ignore"):
        n = np.where(closed[..., None], np.nan, b / np.where(closed, 1.0, sinE)[..., None])
    return E, n, closed


def effective_hamiltonian_k(U: np.ndarray):
    """(E, n) with U = exp(-i E n.sigma), E in [0, pi]."""
    U = np.asarray(U, dtype=complex)
    if U.shape != (2, 2):
        raise InvalidArgumentError(f"expected a 2x2 matrix, got shape {U.shape}")
    if np.linalg.norm(U.conj().T @ U - IDENTITY, 2) > 1e-10:
        raise InvalidArgumentError("matrix is not unitary within 1e-10")
    if abs(np.linalg.det(U) - 1) > 1e-10:
        raise InvalidArgumentError("step operator must have unit determinant")
    E, n, closed = bloch_decompose(U)
    if closed:
        raise GapClosureError(f"gap closed: E = {float(E):.3g}", quasienergy=float(E))
    return float(E), n


def hamiltonian_matrices(E: np.ndarray, n: np.ndarray) -> np.ndarray:
    """H_k = E_k n_k . sigma for stacked inputs."""
    return E[..., None, None] * np.einsum("...a,aij->...ij", n, PAULI)


@dataclass
class BlochField:
    grid: MomentumGrid
    E: np.ndarray
    n: np.ndarray

    def __post_init__(self):
        self.E = np.asarray(self.E, dtype=float)
        self.n = np.asarray(self.n, dtype=float)
        M = self.grid.size
        if self.E.shape != (M,) or self.n.shape != (M, 3):
            raise InvalidArgumentError("Bloch field arrays do not match the grid")
        if np.any(np.abs(np.linalg.norm(self.n, axis=1) - 1) > 1e-10):
            raise InvalidArgumentError("Bloch vectors are not unit length within 1e-10")

    def unitaries(self) -> np.ndarray:
        """exp(-i E n.sigma) at every node."""
        nsig = np.einsum("ka,aij->kij", self.n, PAULI)
        return np.cos(self.E)[:, None, None] * IDENTITY - 1j * np.sin(self.E)[:, None, None] * nsig

    def hamiltonians(self) -> np.ndarray:
        return hamiltonian_matrices(self.E, self.n)

    def lower_band(self) -> np.ndarray:
        """Lower-band spinors, shape (M, 2), in a fixed analytic gauge."""
        return lower_eigenvectors(self.n)


def lower_eigenvectors(n: np.ndarray) -> np.ndarray:
    """-1 eigenvectors of n.sigma for stacked unit vectors.

    Uses (-sin(t/2) e^{-i p}, cos(t/2)) for n = (sin t cos p, sin t sin p, cos t),
    which is regular everywhere on the sphere except for the phase at the poles.
    """
    n = np.asarray(n, dtype=float)
    t = np.arccos(np.clip(n[..., 2], -1.0, 1.0))
    p = np.arctan2(n[..., 1], n[..., 0])
    out = np.empty(n.shape[:-1] + (2,), dtype=complex)
    out[..., 0] = -np.sin(t / 2) * np.exp(-1j * p)
    out[..., 1] = np.cos(t / 2)
    return out


def bloch_field(params: ThetaPair, grid: MomentumGrid) -> BlochField:
    k = grid.k
    E, n, closed = bloch_decompose(step_unitaries(params.theta1, params.theta2, k))
    if np.any(closed):
        j = int(np.argmax(closed))
        raise GapClosureError(
            f"gap closes at k = {k[j]:.6g} for {params}", quasienergy=float(E[j]), momentum=float(k[j])
        )
    return BlochField(grid, E, n)


@dataclass
class SymmetryReport:
    chiral_ok: bool
    chiral_deviation: float
    phs_ok: bool
    phs_deviation: float
    trs_ok: bool
    trs_deviation: float
    gap_min: float


def symmetry_check(field: BlochField, tol: float = 1e-9) -> SymmetryReport:
    """Deviation of a Bloch field from the walk's three symmetries.

    chiral:  Gamma = sigma_x, Gamma H_k Gamma = -H_k          -> n_x = 0
    PHS:     C = K,           C H_k C^-1 = -H_{-k}             -> n(-k) = (-n_x, n_y, -n_z)(k)
    TRS:     T = sigma_x K,   T H_k T^-1 = H_{-k}              -> n(-k) = (n_x, n_y, -n_z)(k)
    """
    n = field.n
    neg = n[field.grid.negated_index()]
    chiral = float(np.max(np.abs(n[:, 0])))
    phs = float(np.max(np.linalg.norm(neg - n * np.array([-1.0, 1.0, -1.0]), axis=1)))
    trs = float(np.max(np.linalg.norm(neg - n * np.array([1.0, 1.0, -1.0]), axis=1)))
    gap = float(np.min(np.minimum(field.E, np.pi - field.E)))
    return SymmetryReport(chiral < tol, chiral, phs < tol, phs, trs < tol, trs, gap)


def quasienergy_gap(params: ThetaPair, grid: MomentumGrid) -> float:
    """min_k min(E_k, pi - E_k); returns 0 rather than raising on closure."""
    U = step_unitaries(params.theta1, params.theta2, grid.k)
    E, _, _ = bloch_decompose(U)
    return float(np.min(np.minimum(E, np.pi - E)))
