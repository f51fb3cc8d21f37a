"""End-to-end tests of the batch front end.

Exit-code contract: 0 assertions pass, 1 assertion failed after a completed
run, 2 config error, 3 numerical failure with an error.json diagnostic.
"""

import json
import subprocess
import sys
from importlib import resources

import jsonschema
import numpy as np
import pytest

import cdrive.cli as cli
from cdrive.cli import main
from cdrive.errors import NumericalError


def write_config(tmp_path, name, cfg):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def box_expansion(**extra):
    cfg = {
        "kind": "classical_trajectory",
        "system": {"kind": "box"},
        "schedule": {"shape": "linear", "lam_start": 1.0, "lam_end": 2.0,
                     "duration": 0.05},
        "initial": {"energy": 2.0},
        "assertions": {"omega_drift": 1e-7},
    }
    cfg.update(extra)
    return cfg


def load_report(out):
    return json.loads((out / "report.json").read_text())


def test_run_cd_on_passes(tmp_path):
    p = write_config(tmp_path, "c.json", box_expansion())
    out = tmp_path / "out"
    assert main(["run", p, "--out", str(out)]) == 0
    rep = load_report(out)
    assert rep["passed"] is True
    assert rep["metrics"]["omega_drift"] < 1e-7
    assert rep["numerics"]["dt"] is not None  # resolved value, not the null default
    header = (out / "trajectory.csv").read_text().splitlines()[0]
    assert header == "t,q,p,H0,omega"


def test_run_report_matches_shipped_schema(tmp_path):
    p = write_config(tmp_path, "c.json", box_expansion())
    out = tmp_path / "out"
    main(["run", p, "--out", str(out)])
    schema = json.loads(
        resources.files("cdrive.schemas").joinpath("report-v1.json").read_text()
    )
    rep = load_report(out)
    jsonschema.validate(rep, schema)
    assert rep["schema_version"] == "cdrive-report-v1"


def test_run_bare_fails_assertion(tmp_path):
    p = write_config(tmp_path, "c.json", box_expansion(cd_enabled=False))
    out = tmp_path / "out"
    assert main(["run", p, "--out", str(out)]) == 1
    rep = load_report(out)  # run completed, report still written
    assert rep["passed"] is False
    assert rep["metrics"]["omega_drift"] > 1e-2
    row = rep["assertions"][0]
    assert row["name"] == "omega_drift" and row["passed"] is False


def test_run_seed_override_controls_csv_bytes(tmp_path):
    p = write_config(tmp_path, "c.json", box_expansion())
    outs = [tmp_path / f"o{i}" for i in range(3)]
    main(["run", p, "--out", str(outs[0]), "--seed", "7"])
    main(["run", p, "--out", str(outs[1]), "--seed", "7"])
    main(["run", p, "--out", str(outs[2]), "--seed", "8"])
    a, b, c = [(o / "trajectory.csv").read_bytes() for o in outs]
    assert a == b
    assert a != c


def test_inconsistent_rates_rejected(tmp_path):
    cfg = box_expansion()
    cfg["schedule"] = {"shape": "tabulated", "times": [0.0, 0.5, 1.0],
                       "values": [1.0, 1.5, 2.0], "rates": [0.0, 0.0, 0.0]}
    p = write_config(tmp_path, "c.json", cfg)
    out = tmp_path / "out"
    assert main(["run", p, "--out", str(out)]) == 2
    assert not (out / "report.json").exists()


def test_consistent_rates_accepted(tmp_path):
    ts = np.linspace(0.0, 0.5, 41)
    cfg = box_expansion()
    cfg["schedule"] = {"shape": "tabulated", "times": list(ts),
                       "values": list(1.0 + 2.0 * ts), "rates": [2.0] * 41}
    p = write_config(tmp_path, "c.json", cfg)
    assert main(["run", p, "--out", str(tmp_path / "out")]) == 0


def test_config_rejections(tmp_path):
    bad = box_expansion()
    bad["bogus"] = 1
    assert main(["run", write_config(tmp_path, "a.json", bad),
                 "--out", str(tmp_path / "o1")]) == 2

    bad = box_expansion(assertions={"no_such_metric": 1.0})
    assert main(["run", write_config(tmp_path, "b.json", bad),
                 "--out", str(tmp_path / "o2")]) == 2

    bad = box_expansion(initial={})  # trajectory kind needs a shell energy
    assert main(["run", write_config(tmp_path, "d.json", bad),
                 "--out", str(tmp_path / "o3")]) == 2

    assert main(["run", str(tmp_path / "missing.json"),
                 "--out", str(tmp_path / "o4")]) == 2


def test_numerical_failure_writes_diagnostic(tmp_path, monkeypatch):
    def boom(cfg, out):
        raise NumericalError("solver fell over")

    monkeypatch.setitem(cli._RUNNERS, "classical_trajectory", boom)
    p = write_config(tmp_path, "c.json", box_expansion())
    out = tmp_path / "out"
    assert main(["run", p, "--out", str(out)]) == 3
    diag = json.loads((out / "error.json").read_text())
    assert diag["error"] == "NumericalError"
    assert "solver fell over" in diag["message"]


def test_bad_thread_cap_is_config_error(tmp_path, monkeypatch):
    monkeypatch.setenv("CDRIVE_THREADS", "zero")
    p = write_config(tmp_path, "c.json", box_expansion())
    assert main(["compare", p, "--out", str(tmp_path / "out")]) == 2


def test_compare_quantum_grid(tmp_path):
    p = write_config(tmp_path, "c.json", {
        "kind": "quantum_grid",
        "system": {"kind": "power_law", "b": 2},
        "schedule": {"shape": "smoothstep", "lam_start": 1.0, "lam_end": 2.0,
                     "duration": 0.889},
        "numerics": {"n_points": 256, "dt": 5e-4},
        "assertions": {"fidelity_on": 0.999, "fidelity_off": 0.99},
    })
    out = tmp_path / "out"
    assert main(["compare", p, "--out", str(out)]) == 0
    rep = load_report(out)
    assert rep["mode"] == "compare" and rep["cd_enabled"] is None
    assert rep["compare"]["on"]["min_fidelity"] > 0.999
    assert rep["compare"]["off"]["final_fidelity"] < 0.99
    assert rep["compare"]["gaps"]["fidelity_gap"] > 0.04
    for arm in ("on", "off"):
        assert (out / arm / "trajectory.csv").exists()
        assert (out / arm / "spectrum.csv").read_text().startswith(
            "level,energy_start,energy_end"
        )


def test_compare_static_schedule_gives_identical_arms(tmp_path):
    p = write_config(tmp_path, "c.json", {
        "kind": "quantum_basis",
        "system": {"kind": "box"},
        "schedule": {"shape": "hold", "value": 1.0, "duration": 0.5},
        "numerics": {"n_levels": 16, "dt": 1e-3},
    })
    out = tmp_path / "out"
    assert main(["compare", p, "--out", str(out)]) == 0
    rep = load_report(out)
    assert rep["compare"]["gaps"]["fidelity_gap"] == 0.0
    on = (out / "on" / "trajectory.csv").read_bytes()
    off = (out / "off" / "trajectory.csv").read_bytes()
    assert on == off


def test_compare_box_gas_ks_gap(tmp_path):
    p = write_config(tmp_path, "c.json", {
        "kind": "classical_ensemble",
        "system": {"kind": "box"},
        "schedule": {"shape": "linear", "lam_start": 1.0, "lam_end": 2.0,
                     "duration": 0.05},
        "initial": {"gas_momentum": 25.0},
        "numerics": {"n_particles": 2000},
        "snapshots": [0.0, 0.025, 0.05],
        "assertions": {"ks_gap": 0.08},
    })
    out = tmp_path / "out"
    assert main(["compare", p, "--out", str(out)]) == 0
    rep = load_report(out)
    assert rep["compare"]["gaps"]["ks_gap"] > 0.08
    assert rep["compare"]["off"]["ks_max"] > 0.1
    # one csv per snapshot per arm
    for k in range(3):
        assert (out / "on" / f"ensemble_{k}.csv").exists()


def test_generator_check_numeric(tmp_path):
    p = write_config(tmp_path, "c.json", {
        "kind": "generator_check",
        "system": {"kind": "power_law", "b": 4},
        "schedule": {"shape": "hold", "value": 1.0, "duration": 1.0},
        "generator": "numeric",
        "shells": [1.0, 2.0],
        "assertions": {"bracket_residual": 1e-3, "average_residual": 1e-6},
    })
    out = tmp_path / "out"
    assert main(["run", p, "--out", str(out)]) == 0
    res = load_report(out)["metrics"]["generator_residuals"]
    assert res["shells"] == [1.0, 2.0]
    assert res["bracket_residual"] < 1e-3


def test_verify_flag_appends_residual_suite(tmp_path):
    p = write_config(tmp_path, "c.json", {
        "kind": "quantum_basis",
        "system": {"kind": "box"},
        "schedule": {"shape": "linear", "lam_start": 1.0, "lam_end": 2.0,
                     "duration": 1.0},
        "numerics": {"n_levels": 16, "dt": 1e-3},
        "assertions": {"phase_error": 1e-8, "population_drift": 1e-12},
    })
    out = tmp_path / "out"
    assert main(["run", p, "--out", str(out), "--verify"]) == 0
    rep = load_report(out)
    assert rep["verify"]["generator"]["bracket_residual"] < 1e-8
    assert rep["verify"]["commutator"]["relative_residual"] < 1e-8
    names = {row["name"] for row in rep["assertions"]}
    assert {"verify_bracket_residual", "verify_commutator"} <= names


def test_sweep_dissipation_trend(tmp_path):
    p = write_config(tmp_path, "c.json", {
        "kind": "classical_ensemble",
        "system": {"kind": "box"},
        "schedule": {"shape": "linear", "lam_start": 1.0, "lam_end": 2.0,
                     "duration": 1.0},
        "initial": {"energy": 334.47},
        "numerics": {"n_particles": 200},
        "seed": 11,
        "assertions": {"monotone_dissipation_off": 1, "omega_drift_on": 1e-7},
    })
    out = tmp_path / "out"
    assert main(["sweep", p, "--out", str(out), "--values", "0.05,0.5,5"]) == 0
    rep = load_report(out)
    diss = [r["dissipation_off"] for r in rep["sweep"]["rows"]]
    assert diss[0] > diss[1] > diss[2] > 0
    assert rep["sweep"]["flags"]["dissipation_off_strictly_decreasing"] is True
    assert rep["sweep"]["flags"]["max_omega_drift_on"] < 1e-7
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("T,omega_drift_on,omega_drift_off,dissipation_on")
    assert len(lines) == 4
    # classical rows have no fidelity columns
    assert lines[1].endswith(",,")


def test_sweep_rejects_bad_inputs(tmp_path):
    p = write_config(tmp_path, "c.json", {
        "kind": "classical_ensemble",
        "system": {"kind": "box"},
        "schedule": {"shape": "linear", "lam_start": 1.0, "lam_end": 2.0,
                     "duration": 1.0},
        "initial": {"energy": 2.0},
        "numerics": {"n_particles": 50},
    })
    out = str(tmp_path / "out")
    assert main(["sweep", p, "--out", out]) == 2  # no values anywhere
    assert main(["sweep", p, "--out", out, "--values", "0.5,0.05"]) == 2
    assert main(["sweep", p, "--out", out, "--values", "0.05,0.5",
                 "--axis", "E"]) == 2

    tab = {
        "kind": "classical_ensemble",
        "system": {"kind": "box"},
        "schedule": {"shape": "tabulated", "times": [0.0, 1.0],
                     "values": [1.0, 2.0]},
        "initial": {"energy": 2.0},
        "numerics": {"n_particles": 50},
    }
    p2 = write_config(tmp_path, "t.json", tab)
    assert main(["sweep", p2, "--out", out, "--values", "0.05,0.5"]) == 2


def test_console_entry_point(tmp_path):
    p = write_config(tmp_path, "c.json", box_expansion())
    out = tmp_path / "out"
    proc = subprocess.run(
        [sys.executable, "-m", "cdrive", "run", p, "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (out / "report.json").exists()
