"""Per-momentum spinor and density-matrix fields."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .walk import PAULI, MomentumGrid


@dataclass
class StateField:
    """A 2-component spinor at every node of a momentum grid.

    Walk states are normalized node by node; ``validate()`` checks that.
    Fourier images of arbitrary real-space states need not be.
    """

    grid: MomentumGrid
    psi: np.ndarray

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=complex)
        if self.psi.shape != (self.grid.size, 2):
            raise InvalidArgumentError(f"psi has shape {self.psi.shape}, expected ({self.grid.size}, 2)")

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.psi, axis=1)

    def validate(self, tol: float = 1e-10) -> "StateField":
        if np.any(np.abs(self.norms() - 1) > tol):
            raise InvalidArgumentError("spinor field is not normalized at every node")
        return self

    def to_density(self) -> "DensityField":
        return DensityField(self.grid, np.einsum("ki,kj->kij", self.psi, self.psi.conj()))


@dataclass
class DensityField:
    grid: MomentumGrid
    rho: np.ndarray

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=complex)
        if self.rho.shape != (self.grid.size, 2, 2):
            raise InvalidArgumentError(f"rho has shape {self.rho.shape}, expected ({self.grid.size}, 2, 2)")

    def validate(self, tol: float = 1e-10) -> "DensityField":
        rho = self.rho
        if np.max(np.abs(rho - rho.conj().transpose(0, 2, 1))) > tol:
            raise InvalidArgumentError("density field is not Hermitian")
        if np.max(np.abs(np.trace(rho, axis1=1, axis2=2) - 1)) > tol:
            raise InvalidArgumentError("density field does not have unit trace")
        if np.min(np.linalg.eigvalsh(rho)) < -tol:
            raise InvalidArgumentError("density field has negative eigenvalues")
        return self

    def bloch_vectors(self) -> np.ndarray:
        """r_k with rho_k = (1 + r_k . sigma) / 2."""
        return np.einsum("aij,kji->ka", PAULI, self.rho).real

    def purity(self) -> np.ndarray:
        """Tr rho_k^2 per node."""
        return np.einsum("kij,kji->k", self.rho, self.rho).real

    @classmethod
    def from_bloch(cls, grid: MomentumGrid, r: np.ndarray) -> "DensityField":
        r = np.asarray(r, dtype=float)
        rho = 0.5 * (np.eye(2) + np.einsum("ka,aij->kij", r, PAULI))
        return cls(grid, rho)
