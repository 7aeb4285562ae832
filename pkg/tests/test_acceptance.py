"""Acceptance criteria.  Each test prints one PASS/FAIL line and asserts it.

Run alone with ``pytest tests/test_acceptance.py -v -s`` to see the report lines
in order.  Tolerances are the pinned acceptance values.
"""
import numpy as np
import pytest

from openqw import cli
from openqw import dynamics as dyn
from openqw.diagram import adjacency_audit, default_axes, phase_diagram
from openqw.fields import DensityField, StateField
from openqw.geometry import (
    berry_phase,
    commutator_norms,
    phase_distance,
    phase_series,
    uhlmann_phase,
    uhlmann_phase_polar_oracle,
)
from openqw.tomography import mle_density, phase_from_reconstruction, projection_settings, simulate_counts
from openqw.walk import MomentumGrid, ThetaPair, bloch_field

QUANT_TOL = 1e-9  # criterion 1
BOUNDARY_GAP = 1e-3  # criterion 2
UNITARY_BERRY_TOL = 1e-6  # criterion 3
PHASE_TOL = 0.05 * np.pi  # criteria 4 and 9
PURE_REDUCTION_TOL = 2e-3  # criterion 5
ORACLE_TOL = 1e-3  # criterion 6
COMMUTATOR_TARGET = 0.01  # criterion 7
SLOPE_RANGE = (0.35, 0.65)  # criterion 8
FIDELITY_TARGET = 0.99  # criterion 9
TRACE_DISTANCE_TOL = 0.05  # criterion 10
EXPERIMENTAL_PHI_U = (0.951, 0.016)  # measured Phi_U(t_f)/pi, context only


def report(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {number:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def default_ensemble():
    g = MomentumGrid(256)
    return dyn.disorder_ensemble_quench(dyn.default_schedule(), dyn.DisorderConfig(), dyn.initial_ground_state(g))


def test_c01_berry_quantization(capsys):
    t1, t2 = default_axes(64)
    pd = phase_diagram(t1, t2, MomentumGrid(256))
    keep = pd.gap >= 0.05
    b = pd.berry[keep]
    dev = np.minimum(phase_distance(b, 0.0), phase_distance(b, np.pi))
    ok = bool(np.all(np.isfinite(b)) and dev.max() < QUANT_TOL)
    report(capsys, 1, "Berry quantization", ok,
           f"{keep.sum()} gapped cells of 4096, max distance to {{0, pi}} = {dev.max():.2e} (tol {QUANT_TOL:g})")


def test_c02_phase_boundaries(capsys):
    g = MomentumGrid(512)
    t1, t2 = default_axes(64)
    audit = adjacency_audit(phase_diagram(t1, t2, g), g, BOUNDARY_GAP)
    at_edges = all(b.quasienergy in (0.0, float(np.pi)) and b.gap < BOUNDARY_GAP for b in audit.boundary)
    ok = audit.pairs_checked > 0 and not audit.violations and at_edges
    report(capsys, 2, "Phase boundaries", ok,
           f"{audit.pairs_checked} differing neighbour pairs, {len(audit.violations)} violations, "
           f"max boundary gap {max(b.gap for b in audit.boundary):.1e}, closings at E in "
           f"{sorted({round(b.quasienergy, 6) for b in audit.boundary})}")


def test_c03_unitary_no_go(capsys):
    rec = dyn.unitary_quench(dyn.default_schedule(), dyn.initial_ground_state(MomentumGrid(256)))
    phases = np.abs([berry_phase(f).value for f in rec.fields])
    ok = phases.max() < UNITARY_BERRY_TOL and rec.critical_step is not None
    report(capsys, 3, "Unitary no-go", ok,
           f"max |Phi_B(t)| = {phases.max():.1e} over {len(phases)} steps, t_c = {rec.critical_step}")


def test_c04_mixed_state_invariant(capsys, default_ensemble):
    rec = default_ensemble
    phi = phase_series(rec.fields).phases
    tc = rec.critical_step
    before = np.abs(phi[:tc])
    final = phase_distance(phi[-1], np.pi)
    plateau = phase_distance(phi[-3:], np.pi)
    ok_before, ok_final, ok_plateau = before.max() < PHASE_TOL, final <= PHASE_TOL, plateau.max() <= PHASE_TOL
    detail = (f"t_c = {tc}; max |Phi_U| before t_c = {before.max() / np.pi:.4f} pi ({'ok' if ok_before else 'no'}); "
              f"|Phi_U(t_f) - pi| = {final / np.pi:.4f} pi ({'ok' if ok_final else 'no'}); "
              f"last 3 steps Phi_U/pi = {np.round(phi[-3:] / np.pi, 3).tolist()} ({'ok' if ok_plateau else 'no'}); "
              f"experiment {EXPERIMENTAL_PHI_U[0]} +- {EXPERIMENTAL_PHI_U[1]}")
    report(capsys, 4, "Mixed-state invariant", ok_before and ok_final and ok_plateau, detail)


def test_c05_pure_state_reduction(capsys):
    g = MomentumGrid(512)
    worst = 0.0
    for p in (ThetaPair(3.4, -2.25), ThetaPair(1.57, 0.0), ThetaPair(0.3, 1.4), ThetaPair(-2.5, 0.5)):
        f = bloch_field(p, g)
        psi = StateField(g, f.lower_band())
        worst = max(worst, phase_distance(uhlmann_phase(psi.to_density()).value, berry_phase(psi).value))
    report(capsys, 5, "Pure-state reduction", worst < PURE_REDUCTION_TOL,
           f"max |Phi_U - Phi_B| = {worst:.2e} at M = 512 (tol {PURE_REDUCTION_TOL:g})")


def _chiral(g, r):
    k = g.k
    return DensityField.from_bloch(g, r * np.stack([np.zeros(g.size), np.sin(k), np.cos(k)], axis=1))


def _smooth(g, r0, a):
    k = g.k
    r = (r0 + a * np.cos(k))[:, None]
    th, ph = 1.0 + 0.5 * np.sin(k), k + 0.3 * np.sin(2 * k)
    return DensityField.from_bloch(g, r * np.stack(
        [np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=1))


def test_c06_oracle_equivalence(capsys):
    g = MomentumGrid(1024)
    hf = bloch_field(ThetaPair(3.4, -2.25), g)
    quantized = {
        "winding band, purity 0.8": _chiral(g, np.sqrt(0.8)),
        "winding band, r = 0.5": _chiral(g, 0.5),
        "winding band, r = 0.3": _chiral(g, 0.3),
        "dephased H_f, n_z = -0.95": dyn.dephased_reference(hf, dyn.OccupationField(g, np.full(g.size, -0.95))),
        "dephased H_f, n_z = -0.4": dyn.dephased_reference(hf, dyn.OccupationField(g, np.full(g.size, -0.4))),
    }
    generic = {f"tilted loop r0 = {r0}": _smooth(g, r0, a) for r0, a in ((0.3, 0.1), (0.5, 0.2), (0.9, 0.05))}

    def gap(fields):
        return max(phase_distance(uhlmann_phase(f).value, uhlmann_phase_polar_oracle(f).value) for f in fields.values())

    dq, dg = gap(quantized), gap(generic)
    report(capsys, 6, "Oracle equivalence", max(dq, dg) < ORACLE_TOL,
           f"max |path-ordered - polar| at M = 1024: {dq:.1e} on {len(quantized)} quantized-phase fields, "
           f"{dg:.2e} on {len(generic)} generic smooth full-rank fields (tol {ORACLE_TOL:g})")


def test_c07_symmetry_restoration(capsys):
    g = MomentumGrid(256)
    init = dyn.initial_ground_state(g)
    hf = bloch_field(dyn.DEFAULT_THETA_F, g)
    med = []
    for n in (3, 21, 201):
        rec = dyn.disorder_ensemble_quench(dyn.default_schedule(), dyn.DisorderConfig(n_realizations=n), init)
        med.append(float(np.median(commutator_norms(rec.final, hf))))
    monotone = med[0] > med[1] > med[2]
    ok = monotone and med[2] < COMMUTATOR_TARGET
    report(capsys, 7, "Symmetry restoration", ok,
           f"median ||[rho_k, H_f]|| at n = 3, 21, 201: {', '.join(f'{m:.4f}' for m in med)} "
           f"(monotone decrease: {'yes' if monotone else 'no'}; target < {COMMUTATOR_TARGET} at n = 201)")


def test_c08_scaling(capsys):
    res = dyn.scaling_study([8, 16, 32, 64], dyn.DisorderConfig(), MomentumGrid(256))
    ok = SLOPE_RANGE[0] <= res.exponent <= SLOPE_RANGE[1]
    report(capsys, 8, "Scaling", ok,
           f"slope {res.exponent:.3f} (95% CI {res.exponent_ci[0]:.3f}..{res.exponent_ci[1]:.3f}, "
           f"R^2 {res.r_squared:.3f}); excitation {np.round(res.excitation_densities, 4).tolist()}")


def test_c09_tomography_round_trip(capsys):
    N = 5
    g = MomentumGrid(256)
    sched = dyn.QuenchSchedule(dyn.DEFAULT_THETA_I, dyn.DEFAULT_THETA_F, N)
    rec = dyn.disorder_ensemble_quench(sched, dyn.DisorderConfig(), dyn.initial_ground_state(g), keep_realizations=True)
    truth = dyn.real_space_density(rec)
    direct = uhlmann_phase(rec.final).value
    data = simulate_counts(truth, projection_settings(N), 10**5, seed=2024)
    res = mle_density(data, rank=4, truth=truth, seed=2024)
    phi = phase_from_reconstruction(res, g).value
    dphi = phase_distance(phi, direct)
    ok = res.fidelity >= FIDELITY_TARGET and dphi <= PHASE_TOL
    report(capsys, 9, "Tomography round trip", ok,
           f"fidelity {res.fidelity:.4f} (target {FIDELITY_TARGET}); Phi_U reconstructed {phi / np.pi:.4f} pi vs "
           f"direct {direct / np.pi:.4f} pi, difference {dphi / np.pi:.4f} pi")


def test_c10_channel_consistency(capsys, default_ensemble):
    g = default_ensemble.fields[0].grid
    init = dyn.initial_ground_state(g)
    noise = dyn.calibrate_dephasing(dyn.default_schedule(), dyn.DisorderConfig(), init, reference=default_ensemble)
    lind = dyn.lindblad_quench(dyn.default_schedule(), noise, init)
    td = np.array([dyn.trace_distances(a, b).max() for a, b in zip(default_ensemble.fields, lind.fields)])
    report(capsys, 10, "Channel consistency", bool(td.max() < TRACE_DISTANCE_TOL),
           f"max per-node trace distance {td.max():.4f} (worst step {int(np.argmax(td))}, tol {TRACE_DISTANCE_TOL})")


def test_c11_determinism(capsys, tmp_path):
    cfg = tmp_path / "run.yaml"
    cfg.write_text("grid: 128\ndisorder:\n  sampling: random\n  n_realizations: 9\n")
    tcfg = tmp_path / "tomo.yaml"
    tcfg.write_text("grid: 64\ntomography:\n  steps: 2\n  rank: 2\n  shots: 1000\n  restarts: 2\n")
    same = []
    for cmd, conf, table in (("quench", cfg, "quench.csv"), ("tomography", tcfg, "tomography.csv"),
                             ("tomography", tcfg, "counts.csv")):
        blobs = []
        for run in range(2):
            out = tmp_path / f"{cmd}{run}"
            assert cli.main([cmd, "--config", str(conf), "--out", str(out), "--seed", "12345",
                             "--threads", str(run + 1)]) == 0
            blobs.append((out / table).read_bytes())
        same.append(blobs[0] == blobs[1])
    report(capsys, 11, "Determinism", all(same), f"byte-identical tables: {same}")
