import json
import os

import numpy as np
import pytest
import yaml

from openqw import cli
from openqw.config import ConfigError, DEFAULTS, load_config
from openqw.outputs import read_density_dump, read_table, sha256

CONFIGS = os.path.join(os.path.dirname(__file__), "..", "configs")


def write_cfg(tmp_path, body, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(body))
    return str(p)


def run(tmp_path, command, body, out="out", extra=()):
    cfg = write_cfg(tmp_path, body)
    out_dir = str(tmp_path / out)
    return cli.main([command, "--config", cfg, "--out", out_dir, *extra]), out_dir


def test_defaults_recorded_and_unknown_keys_rejected(tmp_path):
    cfg = load_config("quench")
    assert cfg["mode"] == "quench-ensemble" and cfg["disorder"]["n_realizations"] == 21
    with pytest.raises(ConfigError):
        load_config("quench", write_cfg(tmp_path, {"stepz": 3}))
    with pytest.raises(ConfigError):
        load_config("quench", write_cfg(tmp_path, {"disorder": {"width": 3}}))
    with pytest.raises(ConfigError):
        load_config("quench", write_cfg(tmp_path, {"mode": "scaling"}))
    with pytest.raises(ConfigError):
        load_config("quench", write_cfg(tmp_path, {"steps": 0}))
    assert set(DEFAULTS) >= {"grid", "seed", "out", "threads"}


def test_env_overrides_config_and_flags_override_env(tmp_path, monkeypatch):
    path = write_cfg(tmp_path, {"seed": 1, "grid": 64})
    monkeypatch.setenv("OPENQW_SEED", "7")
    monkeypatch.setenv("OPENQW_GRID", "32")
    cfg = load_config("quench", path, {"grid": 16})
    assert cfg["seed"] == 7 and cfg["grid"] == 16
    monkeypatch.setenv("OPENQW_THREADS", "many")
    with pytest.raises(ConfigError):
        load_config("quench", path)


def test_exit_codes(tmp_path):
    code, _ = run(tmp_path, "quench", {"bogus": 1})
    assert code == cli.EXIT_CONFIG
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code = cli.main(["quench", "--config", write_cfg(tmp_path, {"grid": 16, "steps": 2}), "--out", str(blocker)])
    assert code == cli.EXIT_IO
    code, _ = run(tmp_path, "scaling", {"grid": 16, "theta_f": [1.0, 1.0], "scaling": {"steps": [2, 4, 8]}})
    assert code == cli.EXIT_NUMERICAL
    assert cli.main(["quench", "--config", str(tmp_path / "missing.yaml")]) == cli.EXIT_CONFIG


def test_quench_outputs_and_manifest(tmp_path):
    code, out = run(tmp_path, "quench", {"mode": "quench-unitary", "grid": 64, "dump_density": True})
    assert code == 0
    rows = read_table(os.path.join(out, "quench.csv"))
    assert list(rows[0]) == ["t", "phi_B", "phi_B_over_pi", "mean_purity", "excitation", "commutator_norm"]
    assert len(rows) == 14 and max(abs(float(r["phi_B"])) for r in rows) < 1e-6
    man = json.load(open(os.path.join(out, "manifest.json")))
    assert man["config"]["theta_f"] == [3.4, -2.25]
    for name, digest in man["files"].items():
        assert sha256(os.path.join(out, name)) == digest
    k, rho, step = read_density_dump(os.path.join(out, "rho_t0013.bin"))
    assert step == 13 and rho.shape == (64, 2, 2) and np.allclose(np.trace(rho, axis1=1, axis2=2), 1)


def test_quench_tables_byte_identical(tmp_path):
    body = {"grid": 64, "disorder": {"sampling": "random", "n_realizations": 7}}
    _, a = run(tmp_path, "quench", body, out="a")
    _, b = run(tmp_path, "quench", body, out="b", extra=("--threads", "2"))
    assert open(os.path.join(a, "quench.csv"), "rb").read() == open(os.path.join(b, "quench.csv"), "rb").read()


def test_lindblad_mode_runs(tmp_path):
    code, out = run(tmp_path, "quench", {"mode": "quench-lindblad", "grid": 64, "noise": {"gamma": 0.1}})
    assert code == 0
    assert "phi_U" in read_table(os.path.join(out, "quench.csv"))[0]


def test_phase_diagram_table(tmp_path):
    code, out = run(tmp_path, "phase-diagram", {"grid": 128, "phase_diagram": {"resolution": 64, "boundary_grid": 128}})
    assert code == 0
    rows = read_table(os.path.join(out, "phase_diagram.csv"))
    assert len(rows) == 4096 and list(rows[0]) == ["theta1", "theta2", "gap", "berry_phase"]
    for r in rows:
        b = float(r["berry_phase"])
        if float(r["gap"]) > 0.05:
            assert min(abs(b), abs(abs(b) - np.pi)) < 1e-9
    assert read_table(os.path.join(out, "audit.csv"))[0]["violations"] == "0"


def test_scaling_fit_file(tmp_path):
    code, out = run(tmp_path, "scaling", {"grid": 128})
    assert code == 0
    fit = read_table(os.path.join(out, "scaling_fit.csv"))[0]
    assert 0.35 <= float(fit["exponent"]) <= 0.65


def test_tomography_exact_pure_round_trip(tmp_path):
    body = {"grid": 64, "tomography": {"steps": 2, "state": "unitary", "exact": True, "restarts": 3}}
    code, out = run(tmp_path, "tomography", body)
    assert code == 0
    row = read_table(os.path.join(out, "tomography.csv"))[0]
    assert abs(float(row["fidelity"]) - 1) < 1e-6
    counts = read_table(os.path.join(out, "counts.csv"))
    assert list(counts[0]) == ["family_id", "x", "x_prime", "phase_tag", "counts", "shots"]


def test_shipped_configs_validate():
    for name, cmd in [("default_quench", "quench"), ("default_unitary", "quench"), ("default_lindblad", "quench"),
                      ("scaling", "scaling"), ("tomography", "tomography"), ("phase_diagram", "phase-diagram")]:
        load_config(cmd, os.path.join(CONFIGS, name + ".yaml"))


def test_default_ensemble_final_row(tmp_path):
    code = cli.main(["quench", "--config", os.path.join(CONFIGS, "default_quench.yaml"), "--out", str(tmp_path)])
    assert code == 0
    last = read_table(os.path.join(tmp_path, "quench.csv"))[-1]
    # phase compared on the circle, so -0.992 sits 0.008 from 1
    assert abs(np.angle(np.exp(1j * np.pi * (float(last["phi_U_over_pi"]) - 1)))) / np.pi < 0.05


def test_tomography_rank2_state_fidelity(tmp_path):
    body = {"grid": 64, "tomography": {"steps": 2, "state": "ensemble", "rank": 2, "shots": 100000, "restarts": 4}}
    code, out = run(tmp_path, "tomography", body)
    assert code == 0
    assert float(read_table(os.path.join(out, "tomography.csv"))[0]["fidelity"]) >= 0.99
