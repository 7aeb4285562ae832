"""(theta1, theta2) phase diagram: gap and Berry phase on a grid, boundary location."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import GapClosureError, GridTooCoarseError
from .fields import StateField
from .geometry import berry_phase
from .walk import MomentumGrid, ThetaPair, bloch_decompose, bloch_field, quasienergy_gap, step_unitaries


@dataclass
class PhaseDiagram:
    theta1: np.ndarray  # (R,)
    theta2: np.ndarray  # (R,)
    gap: np.ndarray  # (R, R), [i, j] <-> (theta1[i], theta2[j])
    berry: np.ndarray  # NaN where the gap closes on the grid


def cell_centres(resolution: int, lo: float = -np.pi, hi: float = np.pi) -> np.ndarray:
    return lo + (np.arange(resolution) + 0.5) * (hi - lo) / resolution


def default_axes(resolution: int):
    """theta1 at cell centres, theta2 at cell edges of [-pi, pi).

    The half-cell stagger keeps every node off the diagonals |theta1| = |theta2|,
    where the gap closes.
    """
    return cell_centres(resolution), -np.pi + np.arange(resolution) * 2 * np.pi / resolution


def lower_band_berry_phase(params: ThetaPair, grid: MomentumGrid) -> float:
    f = bloch_field(params, grid)
    return berry_phase(StateField(grid, f.lower_band())).value


def phase_diagram(theta1, theta2, grid: MomentumGrid) -> PhaseDiagram:
    R1, R2 = len(theta1), len(theta2)
    gap = np.empty((R1, R2))
    berry = np.full((R1, R2), np.nan)
    for i, a in enumerate(theta1):
        for j, b in enumerate(theta2):
            p = ThetaPair(a, b)
            gap[i, j] = quasienergy_gap(p, grid)
            try:
                berry[i, j] = lower_band_berry_phase(p, grid)
            except (GapClosureError, GridTooCoarseError):
                pass
    return PhaseDiagram(np.asarray(theta1, float), np.asarray(theta2, float), gap, berry)


@dataclass
class BoundaryPoint:
    theta1: float
    theta2: float
    gap: float
    quasienergy: float  # 0 or pi: where the gap closes
    momentum: float


def segment_gap_minimum(a: ThetaPair, b: ThetaPair, grid: MomentumGrid, samples: int = 17) -> BoundaryPoint:
    """Minimum of the quasienergy gap along the straight segment a -> b."""
    pa, pb = a.as_array(), b.as_array()
    gap = lambda s: quasienergy_gap(ThetaPair(*(pa + s * (pb - pa))), grid)
    s = np.linspace(0, 1, samples)
    g = np.array([gap(x) for x in s])
    j = int(np.argmin(g))
    lo, hi = s[max(j - 1, 0)], s[min(j + 1, samples - 1)]
    res = minimize_scalar(gap, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    s_min = res.x if res.fun < g[j] else s[j]
    p = pa + s_min * (pb - pa)
    E, _, _ = bloch_decompose(step_unitaries(p[0], p[1], grid.k))
    dist = np.minimum(E, np.pi - E)
    kj = int(np.argmin(dist))
    return BoundaryPoint(float(p[0]), float(p[1]), float(dist[kj]), 0.0 if E[kj] < np.pi / 2 else float(np.pi),
                         float(grid.k[kj]))


@dataclass
class AdjacencyAudit:
    pairs_checked: int
    violations: list
    boundary: list


def adjacency_audit(diagram: PhaseDiagram, grid: MomentumGrid, threshold: float = 1e-3) -> AdjacencyAudit:
    """Every pair of neighbouring cells with different Berry phase must have a gap
    closing (gap < threshold) on the segment joining them.

    Along each row and column, cells without a Berry phase (gap closed on the
    grid) are skipped, so the segment then spans the gapless cells.
    """
    B = diagram.berry
    violations, boundary, checked = [], [], 0
    R1, R2 = B.shape
    pairs = []
    for i in range(R1):
        ok = np.flatnonzero(~np.isnan(B[i]))
        pairs += [((i, a), (i, b)) for a, b in zip(ok[:-1], ok[1:])]
    for j in range(R2):
        ok = np.flatnonzero(~np.isnan(B[:, j]))
        pairs += [((a, j), (b, j)) for a, b in zip(ok[:-1], ok[1:])]
    for (i, j), (i2, j2) in pairs:
        if abs(np.angle(np.exp(1j * (B[i, j] - B[i2, j2])))) < np.pi / 2:
            continue
        checked += 1
        pt = segment_gap_minimum(
            ThetaPair(diagram.theta1[i], diagram.theta2[j]),
            ThetaPair(diagram.theta1[i2], diagram.theta2[j2]),
            grid,
        )
        boundary.append(pt)
        if pt.gap >= threshold:
            violations.append(((i, j), (i2, j2), pt.gap))
    return AdjacencyAudit(checked, violations, boundary)
