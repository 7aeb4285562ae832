"""openqw command line: phase-diagram, quench, scaling and tomography pipelines."""
from __future__ import annotations

import argparse
import datetime as _dt
import os
import sys
import time

import numpy as np

from . import dynamics as dyn
from .config import ConfigError, load_config
from .diagram import adjacency_audit, cell_centres, default_axes, phase_diagram
from .errors import (
    ConvergenceError,
    DegenerateMomentumWeightError,
    GapClosureError,
    GridTooCoarseError,
    InvalidArgumentError,
    RankDeficiencyError,
)
from .geometry import phase_series
from .outputs import write_density_dump, write_manifest, write_table
from .tomography import (
    expected_counts,
    fit_wavefunction,
    mle_density,
    phase_from_reconstruction,
    projection_settings,
    simulate_counts,
)
from .walk import MomentumGrid, ThetaPair

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
DEFAULT_RANGE = [-float(np.pi), float(np.pi)]
NUMERICAL_ERRORS = (GapClosureError, GridTooCoarseError, RankDeficiencyError, ConvergenceError,
                    DegenerateMomentumWeightError)


def _schedule(cfg, steps=None):
    return dyn.QuenchSchedule(ThetaPair(*cfg["theta_i"]), ThetaPair(*cfg["theta_f"]), steps or cfg["steps"])


def _disorder(cfg):
    d = cfg["disorder"]
    return dyn.DisorderConfig(d["delta_theta1"], d["n_realizations"], d["sampling"], cfg["seed"], d["resample_per_step"])


def _path(cfg, name):
    return os.path.join(cfg["out"], name)


def cmd_phase_diagram(cfg):
    p = cfg["phase_diagram"]
    R = p["resolution"]
    if p["theta1_range"] == DEFAULT_RANGE and p["theta2_range"] == DEFAULT_RANGE:
        t1, t2 = default_axes(R)
    else:
        t1 = cell_centres(R, *p["theta1_range"])
        t2 = cell_centres(R, *p["theta2_range"])
    pd = phase_diagram(t1, t2, MomentumGrid(cfg["grid"]))
    rows = [(t1[i], t2[j], pd.gap[i, j], pd.berry[i, j]) for i in range(R) for j in range(R)]
    files = [write_table(_path(cfg, "phase_diagram.csv"), ["theta1", "theta2", "gap", "berry_phase"], rows)]
    fine = phase_diagram(t1, t2, MomentumGrid(p["boundary_grid"])) if p["boundary_grid"] != cfg["grid"] else pd
    audit = adjacency_audit(fine, MomentumGrid(p["boundary_grid"]), p["gap_threshold"])
    files.append(write_table(
        _path(cfg, "boundary.csv"),
        ["theta1", "theta2", "gap", "quasienergy", "momentum"],
        [(b.theta1, b.theta2, b.gap, b.quasienergy, b.momentum) for b in audit.boundary],
    ))
    files.append(write_table(_path(cfg, "audit.csv"), ["pairs_checked", "violations"],
                             [(audit.pairs_checked, len(audit.violations))]))
    return files


def run_quench(cfg):
    grid = MomentumGrid(cfg["grid"])
    sched = _schedule(cfg)
    init = dyn.initial_ground_state(grid)
    mode = cfg["mode"]
    if mode == "quench-unitary":
        return dyn.unitary_quench(sched, init)
    if mode == "quench-ensemble":
        return dyn.disorder_ensemble_quench(sched, _disorder(cfg), init, threads=cfg["threads"])
    g = cfg["noise"]["gamma"]
    if g == "calibrated":
        noise = dyn.calibrate_dephasing(sched, _disorder(cfg), init, mode=cfg["noise"]["calibration"])
    else:
        noise = dyn.NoiseConfig(np.asarray(g, dtype=float))
    return dyn.lindblad_quench(sched, noise, init)


def cmd_quench(cfg):
    rec = run_quench(cfg)
    series = phase_series(rec.fields, rec.hamiltonians)
    name = "phi_B" if rec.mode == "unitary" else "phi_U"
    rows = [
        (int(t), series.phases[t], series.phases[t] / np.pi, series.mean_purity[t], series.excitation[t],
         series.commutator_norm[t])
        for t in range(len(series.steps))
    ]
    files = [write_table(_path(cfg, "quench.csv"),
                         ["t", name, name + "_over_pi", "mean_purity", "excitation", "commutator_norm"], rows)]
    files.append(write_table(_path(cfg, "quench_summary.csv"), ["mode", "steps", "critical_step"],
                             [(rec.mode, rec.schedule.steps, "" if rec.critical_step is None else rec.critical_step)]))
    if cfg["dump_density"]:
        for t, f in enumerate(rec.fields):
            rho = f.rho if hasattr(f, "rho") else f.to_density().rho
            files.append(write_density_dump(_path(cfg, f"rho_t{t:04d}.bin"), f.grid.k, rho, t))
    return files


def cmd_scaling(cfg):
    res = dyn.scaling_study(cfg["scaling"]["steps"], _disorder(cfg), MomentumGrid(cfg["grid"]),
                            ThetaPair(*cfg["theta_i"]), ThetaPair(*cfg["theta_f"]), threads=cfg["threads"])
    rows = [(round(1 / v), v, e, p, m) for v, e, p, m in
            zip(res.velocities, res.excitation_densities, res.uhlmann_phases, res.uhlmann_magnitudes)]
    return [
        write_table(_path(cfg, "scaling.csv"),
                    ["steps", "velocity", "excitation_density", "phi_U", "uhlmann_magnitude"], rows),
        write_table(_path(cfg, "scaling_fit.csv"), ["exponent", "ci_low", "ci_high", "r_squared"],
                    [(res.exponent, res.exponent_ci[0], res.exponent_ci[1], res.r_squared)]),
    ]


def tomography_roundtrip(cfg):
    """Truth state, counts, reconstruction and phases for the tomography pipeline."""
    t = cfg["tomography"]
    N = t["steps"]
    grid = MomentumGrid(max(cfg["grid"], 2 * N + 1))
    sched = _schedule(cfg, N)
    init = dyn.initial_ground_state(grid)
    if t["state"] == "ensemble":
        rec = dyn.disorder_ensemble_quench(sched, _disorder(cfg), init, threads=cfg["threads"], keep_realizations=True)
        truth = dyn.real_space_density(rec)
    else:
        rec = dyn.unitary_quench(sched, init)
        truth = dyn.momentum_to_real(rec.final, N).reshape(-1)
    settings = projection_settings(N)
    if t["exact"]:
        data = expected_counts(truth, settings, t["shots"], t["count_model"])
    else:
        data = simulate_counts(truth, settings, t["shots"], cfg["seed"], t["count_model"])
    if t["state"] == "unitary":
        result = fit_wavefunction(data, restarts=t["restarts"], max_iter=t["max_iter"], seed=cfg["seed"], truth=truth)
    else:
        result = mle_density(data, rank=t["rank"], restarts=t["restarts"], max_iter=t["max_iter"], seed=cfg["seed"],
                             truth=truth, gauge_probes=t["gauge_probes"])
    phase_grid = MomentumGrid(t["phase_grid"] or max(2 * N + 1, 8))
    phi_rec = phase_from_reconstruction(result, phase_grid)
    truth_result = type(result)(truth, result.kind, 0.0, 0)
    phi_direct = phase_from_reconstruction(truth_result, phase_grid)
    return data, result, phi_rec, phi_direct, phase_grid


def cmd_tomography(cfg):
    data, result, phi_rec, phi_direct, phase_grid = tomography_roundtrip(cfg)
    files = [write_table(_path(cfg, "counts.csv"), ["family_id", "x", "x_prime", "phase_tag", "counts", "shots"],
                         [tuple(r.values()) for r in data.records()])]
    files.append(write_table(
        _path(cfg, "tomography.csv"),
        ["fidelity", "phi_reconstructed", "phi_direct", "phase_grid", "neg_log_likelihood", "iterations", "rank",
         "gauge_orbit_distance"],
        [(result.fidelity, phi_rec.value, phi_direct.value, phase_grid.size, result.neg_log_likelihood,
          result.iterations, result.diagnostics.get("rank", 1), result.diagnostics.get("gauge_orbit_distance", ""))],
    ))
    return files


COMMANDS = {"phase-diagram": cmd_phase_diagram, "quench": cmd_quench, "scaling": cmd_scaling,
            "tomography": cmd_tomography}


def build_parser():
    ap = argparse.ArgumentParser(prog="openqw", description=__doc__)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="YAML run configuration")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--threads", type=int)
    ap.add_argument("--grid", type=int, help="momentum grid size M")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.command, args.config,
                          {"seed": args.seed, "out": args.out, "threads": args.threads, "grid": args.grid})
    except (ConfigError, InvalidArgumentError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"cannot read config: {err}", file=sys.stderr)
        return EXIT_CONFIG
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    t0 = time.perf_counter()
    try:
        os.makedirs(cfg["out"], exist_ok=True)
        files = COMMANDS[args.command](cfg)
        write_manifest(cfg["out"], cfg, files, started, time.perf_counter() - t0)
    except NUMERICAL_ERRORS as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except InvalidArgumentError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"I/O error: {err.filename or cfg['out']}: {err.strerror or err}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


def main_exit():
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
