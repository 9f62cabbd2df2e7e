import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from mcisac.cli import main, run
from mcisac.experiments import EXPERIMENTS
from mcisac.scenario import ScenarioError, build_setup, load_config, validate

SCEN = Path(__file__).resolve().parents[1] / "scenarios"

FILES = {
    "range-profile": "range_profile.yaml",
    "ici-impact": "ici_impact.yaml",
    "pn-impact": "pn_impact.yaml",
    "ici-exploit": "ici_exploit.yaml",
    "pn-exploit": "pn_exploit.yaml",
    "detection-roc": "detection_roc.yaml",
    "crb-sweep": "crb_sweep.yaml",
    "alloc-frontier": "alloc_frontier.yaml",
    "mcpc-analysis": "mcpc_analysis.yaml",
}

# reduced Monte-Carlo sizes so the whole suite stays quick
SMALL = {
    "ici-exploit": {"trials": 3},
    "pn-exploit": {"trials": 3},
    "detection-roc": {"snr_db": [5.0], "trials": 20, "fa_trials": 20},
    "crb-sweep": {"snr_db": [20.0], "trials": 5},
    "ici-impact": {"velocities": [0.0, 80.0]},
}

GOLDEN = {
    "range-profile": {"range_profile.csv": "range_m,magnitude_db",
                      "detections.csv": "range_m,velocity_mps,amplitude_db,statistic"},
    "ici-impact": {"range_profile_v0.csv": "range_m,magnitude_db", "range_profile_v80.csv": "range_m,magnitude_db"},
    "pn-impact": {"pn_profiles.csv": "range_m,no_pn_db,pn_db,compensated_db"},
    "ici-exploit": {"ici_exploit_trials.csv": "trial,coarse_velocity_mps,estimated_velocity_mps,true_velocity_mps,"
                                              "chosen_index,true_index,correct",
                    "ici_exploit_scores.csv": "candidate_velocity_mps,score_db"},
    "pn-exploit": {"pn_exploit_trials.csv": "trial,coarse_range_m,estimated_range_m,true_range_m,"
                                            "chosen_index,true_index,correct",
                   "pn_exploit_costs.csv": "candidate_range_m,cost"},
    "detection-roc": {"roc.csv": "snr_db,pd_empirical,pd_theory,pfa"},
    "crb-sweep": {"crb_sweep.csv": "snr_db,crb_range_m2,sqrt_crb_range_m,rmse_range_m,crb_velocity_m2ps2,"
                                   "crb_angle_rad2"},
    "alloc-frontier": {"frontier.csv": "m_s_bits,m_u_bits", "crb_frontier.csv": "weight,rate_bits,rms_bandwidth_hz"},
    "mcpc-analysis": {"envelope.csv": "t_s,re,im", "af_delay_cut.csv": "delay_s,magnitude_db",
                      "af_doppler_cut.csv": "doppler_hz,magnitude_db"},
}


def _small(name, tmp_path):
    cfg = load_config(SCEN / FILES[name])
    if name in SMALL:
        cfg["experiment"] = {**cfg.get("experiment", {}), **SMALL[name]}
    path = tmp_path / f"{name}.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def _csvs(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).glob("*.csv"))}


def test_every_experiment_has_a_scenario():
    assert set(EXPERIMENTS) == set(FILES)
    for f in FILES.values():
        load_config(SCEN / f)


@pytest.mark.parametrize("name", sorted(GOLDEN))
def test_golden_headers_and_manifest(name, tmp_path):
    out = tmp_path / "out"
    manifest = run(name, _small(name, tmp_path), 11, out)
    for fname, header in GOLDEN[name].items():
        assert (out / fname).read_text().splitlines()[0] == header
    assert "kpi.json" in manifest["outputs"]
    saved = json.loads((out / "manifest.json").read_text())
    assert saved["seed"] == 11 and saved["experiment"] == name
    assert set(saved["versions"]) >= {"mcisac", "numpy", "scipy"}
    assert sorted(p.name for p in out.iterdir() if p.name != "manifest.json") == saved["outputs"]


def test_rerun_is_byte_identical_and_manifest_reproduces(tmp_path):
    scen = _small("ici-exploit", tmp_path)
    run("ici-exploit", scen, 5, tmp_path / "a")
    run("ici-exploit", scen, 5, tmp_path / "b")
    run("ici-exploit", tmp_path / "a" / "manifest.json", None, tmp_path / "c")
    assert _csvs(tmp_path / "a") == _csvs(tmp_path / "b") == _csvs(tmp_path / "c")
    assert (tmp_path / "a" / "manifest.json").read_bytes() != b""
    assert load_config(tmp_path / "a" / "manifest.json") == {**load_config(scen), "seed": 5}


def test_thread_count_does_not_change_results(tmp_path):
    scen = _small("pn-exploit", tmp_path)
    run("pn-exploit", scen, 9, tmp_path / "one", threads=1)
    run("pn-exploit", scen, 9, tmp_path / "four", threads=4)
    assert _csvs(tmp_path / "one") == _csvs(tmp_path / "four")


def test_refuses_non_empty_output(tmp_path, capsys):
    scen = _small("mcpc-analysis", tmp_path)
    out = tmp_path / "o"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert main(["run", "mcpc-analysis", "--scenario", str(scen), "--out", str(out)]) == 2
    assert "overwrite" in capsys.readouterr().err
    assert (out / "keep.txt").read_text() == "x"
    assert main(["run", "mcpc-analysis", "--scenario", str(scen), "--out", str(out), "--overwrite"]) == 0


def test_unknown_experiment_is_usage_error(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "mcisac", "run", "no-such", "--scenario", "x.yaml",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode != 0 and "invalid choice" in proc.stderr


def test_bad_seed_and_missing_file(tmp_path, capsys):
    scen = _small("mcpc-analysis", tmp_path)
    assert main(["run", "mcpc-analysis", "--scenario", str(scen), "--seed", "-1", "--out", str(tmp_path / "a")]) == 2
    assert main(["run", "mcpc-analysis", "--scenario", str(tmp_path / "none.yaml"), "--out", str(tmp_path / "b")]) == 2
    assert capsys.readouterr().err.count("mcisac: error") == 2


def test_infeasible_experiment_exits_nonzero(tmp_path, capsys):
    cfg = load_config(SCEN / FILES["alloc-frontier"])
    cfg["experiment"]["rate_floor"] = 1e4
    path = tmp_path / "s.yaml"
    path.write_text(yaml.safe_dump(cfg))
    assert main(["run", "alloc-frontier", "--scenario", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "infeasible" in capsys.readouterr().err


def test_schema_errors_carry_field_paths():
    base = load_config(SCEN / "range_profile.yaml")
    bad = {**base, "frame": {**base["frame"], "n_subcarriers": 0}}
    with pytest.raises(ScenarioError, match=r"frame\.n_subcarriers"):
        validate(bad)
    bad = {**base, "targets": [{"range": 10.0}]}
    with pytest.raises(ScenarioError, match=r"targets\[0\]"):
        validate(bad)
    bad = {k: v for k, v in base.items() if k != "seed"}
    with pytest.raises(ScenarioError, match="seed"):
        validate(bad)
    with pytest.raises(ScenarioError, match="loop_bw"):
        validate({**base, "phase_noise": {"kind": "pll", "bw3db": 1e3}})
    with pytest.raises(ScenarioError, match="bogus"):
        EXPERIMENTS["crb-sweep"]({**load_config(SCEN / "crb_sweep.yaml"), "experiment": {"bogus": 1}}, 0, ".")


def test_build_setup_units():
    cfg = load_config(SCEN / FILES["ici-impact"])
    setup = build_setup(cfg, np.random.default_rng(0))
    f = setup.frame
    t = setup.scenario.targets[0]
    assert f.delay_to_range(t.delay) == pytest.approx(30.0)
    assert abs(t.gain) ** 2 == pytest.approx(10 ** 3 * setup.scenario.noise_radar)


def test_ici_impact_zero_velocity_peaks(tmp_path):
    out = tmp_path / "ici"
    run("ici-impact", _small("ici-impact", tmp_path), 1, out)
    rows = list(csv.reader((out / "range_profile_v0.csv").open()))[1:]
    r = np.array([float(a) for a, _ in rows])
    db = np.array([float(b) for _, b in rows])
    bin_m = 3e8 / (2 * 1024 * 60e3)
    peaks = [i for i in range(1, len(db) - 1) if db[i] >= db[i - 1] and db[i] >= db[i + 1] and db[i] > -45]
    for target in (30.0, 120.0, 160.0):
        assert np.min(np.abs(r[peaks] - target)) <= bin_m
