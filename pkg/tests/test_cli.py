import csv
import json
from pathlib import Path

import numpy as np
import pytest

from bondimpact.cli import main, validate_config

REPO = Path(__file__).resolve().parents[1]


def small_curve_config(**over):
    cfg = {
        "model": {"kind": "vasicek", "k": 0.20, "theta": 0.10, "sigma": 0.05, "r0": 0.01},
        "maturities": [1, 2, 5, 10, 15],
        "traded_maturity": 5.0,
        "impact": {"kappa": 0.01, "alpha": 1.0, "beta": 1.0, "rho": 2.0, "gamma": 1.0, "y": 0.01},
        "speed": {"kind": "constant", "c": -2.0, "tau_days": 10},
        "horizon_years": 1.0,
        "n_steps": 365,
        "n_paths": 400,
        "seed": 77,
        "snapshot_days": [5, 270],
    }
    cfg.update(over)
    return cfg


def test_selftest_exit_zero(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out


def test_validate_config_reports_violations():
    bad = small_curve_config()
    bad["speed"]["tau_days"] = 6 * 365  # tau beyond the traded maturity
    violations = validate_config(bad, "simulate-curve")
    assert violations
    assert any("tau" in v for v in violations)


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = small_curve_config()
    cfg["unexpected"] = 1
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    code = main(["simulate-curve", "--config", str(path), "--out", str(tmp_path / "out")])
    assert code == 2
    assert "unexpected" in capsys.readouterr().err


def test_kernel_exponent_violation_exit_2(tmp_path, capsys):
    cfg = small_curve_config()
    cfg["impact"]["alpha"] = 0.5
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["simulate-curve", "--config", str(path), "--out", str(tmp_path / "out")]) == 2
    assert "alpha" in capsys.readouterr().err


def test_simulate_curve_outputs_and_determinism(tmp_path):
    cfg = small_curve_config(rho_sweep=[1.0, 4.0], k_sweep=[0.01, 0.20])
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))

    outs = []
    for name, threads in (("a", "1"), ("b", "4"), ("c", "16")):
        out = tmp_path / name
        code = main(["--threads", threads, "simulate-curve", "--config", str(path), "--out", str(out)])
        assert code == 0
        outs.append(out)

    expected = [
        "yield_curves_t5.csv",
        "yield_curves_t270.csv",
        "bond_paths_T5.csv",
        "bond_paths_T15.csv",
        "crossing_times.csv",
        "rho_sweep.csv",
        "k_sweep.csv",
        "meta.json",
    ]
    for fname in expected:
        assert (outs[0] / fname).exists(), fname
    for fname in expected:
        if fname == "meta.json":
            continue  # timings differ; everything else must be byte-identical
        ref = (outs[0] / fname).read_bytes()
        assert (outs[1] / fname).read_bytes() == ref, fname
        assert (outs[2] / fname).read_bytes() == ref, fname

    meta = json.loads((outs[0] / "meta.json").read_text())
    assert set(meta) >= {"config_hash", "seed", "version", "exclusion_counts", "timings"}
    meta_b = json.loads((outs[1] / "meta.json").read_text())
    assert meta_b["config_hash"] == meta["config_hash"]


def test_simulate_curve_rerun_reproduces_bytes(tmp_path):
    cfg = small_curve_config(n_paths=300)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate-curve", "--config", str(path), "--out", str(a)]) == 0
    assert main(["simulate-curve", "--config", str(path), "--out", str(b)]) == 0
    assert (a / "bond_paths_T5.csv").read_bytes() == (b / "bond_paths_T5.csv").read_bytes()


def test_price_eurodollar(tmp_path, capsys):
    out = tmp_path / "ed"
    code = main([
        "price-eurodollar", "--k", "0.2", "--theta", "0.1", "--sigma", "0.05", "--r0", "0.01",
        "--lam", "0.0", "--lam-tilde", "0.5", "--expiry", "0.25", "--maturity", "0.5",
        "--notional", "1000000", "--n-paths", "20000", "--seed", "3", "--out", str(out),
    ])
    assert code == 0
    with open(out / "eurodollar.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:4] == ["closed_form", "mc_price", "mc_se", "n_paths"]
    closed, mc_price, mc_se = (float(rows[1][i]) for i in range(3))
    assert abs(mc_price - closed) < 4 * mc_se


def test_optexec_benchmark_report(tmp_path):
    out = tmp_path / "exec"
    code = main([
        "optexec", "--config", str(REPO / "configs" / "execution_benchmark.json"), "--out", str(out),
    ])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["relative_gap"] <= 1e-3
    assert report["foc_sup_residual"] < 1e-6 * 0.9
    assert report["admissibility"]["ok"]
    with open(out / "schedule.csv") as fh:
        header = next(csv.reader(fh))
    assert header == ["t", "v", "X", "Upsilon", "Z"]


def test_hjm_check(tmp_path, capsys):
    from tests.test_hjm import build_condition_lattice

    lattice, gamma = build_condition_lattice(lambda t: 0.25, jf_scale=1e-3, n_T=501)
    lat_path = tmp_path / "lattice.csv"
    lattice.to_csv(lat_path)
    gamma_path = tmp_path / "gamma.csv"
    with open(gamma_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "gamma"])
        for t, g in zip(lattice.t_grid, gamma):
            w.writerow([repr(float(t)), repr(float(g))])
    assert main(["hjm-check", "--lattice", str(lat_path), "--gamma", str(gamma_path)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["sup_residual"] < 1e-4
