import json
from pathlib import Path

import numpy as np
import pytest

from crdrag.cli import main
from crdrag.config import build, load_config
from crdrag.experiments import ConfigError, SweepConfig

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_pulse_csv_has_zero_end_rows(tmp_path):
    out = tmp_path / "env.csv"
    assert main(["pulse", "--config", str(CONFIGS / "scan.toml"), "--out", str(out)]) == 0
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert out.read_text().startswith("t_ns,re_MHz,im_MHz\n")
    assert np.all(data[0, 1:] == 0) and np.all(data[-1, 1:] == 0)


def test_json_config_is_accepted(tmp_path):
    cfg = write(tmp_path, "c.json", json.dumps({"device": {"d10": 90.0, "d21": -210.0},
                                                "pulse": {"scheme": "recursive_P", "omega_max": 20.0, "t_r": 8.0}}))
    assert main(["pulse", "--config", str(cfg), "--out", str(tmp_path / "e.csv")]) == 0


@pytest.mark.parametrize("argv", [["bogus"], ["pulse", "--nope"], [], ["calibrate", "sideways"],
                                  ["scan", "--jobs", "0"]])
def test_usage_errors_exit_one(argv, capsys):
    assert main(argv) == 1
    assert "crdrag: error" in capsys.readouterr().err


@pytest.mark.parametrize("text", [
    "[pulse]\nscheme = 'recursive_G'\nomega_max = 30.0\nt_r = 10.0\ncolour = 3\n[device]\nd10 = 110.0\nd21 = -190.0\n",
    "[pulse]\nscheme = 'wiggly'\nomega_max = 30.0\nt_r = 10.0\n[device]\nd10 = 110.0\nd21 = -190.0\n",
    "[pulse\n",
    "[pulse]\nscheme = 'recursive_G'\nomega_max = 30.0\nt_r = 10.0\n[device]\nd10 = 150.0\nd21 = -150.0\n",
])
def test_config_errors_exit_one(tmp_path, text):
    cfg = write(tmp_path, "bad.toml", text)
    assert main(["pulse", "--config", str(cfg), "--out", str(tmp_path / "e.csv")]) == 1


def test_missing_config_exits_one(tmp_path):
    assert main(["scan", "--config", str(tmp_path / "absent.toml")]) == 1


def test_calibration_failure_exits_two(tmp_path):
    cfg = write(tmp_path, "c.toml", "[device]\ndelta = 110.0\nlevels = 3\n[pulse]\nomega_cr = 30.0\ncr_phase = 0.5\n"
                                    "[calibration]\nmax_iter = 1\n")
    assert main(["calibrate", "echoed", "--config", str(cfg), "--out", str(tmp_path / "r.json")]) == 2


def test_scan_output_is_deterministic_across_workers(tmp_path):
    cfg = write(tmp_path, "s.toml", "[sweep]\nschemes = ['flat_top_m1', 'recursive_G']\ndetunings = [80.0, 120.0]\n"
                                    "n_holds = 8\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["scan", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["scan", "--config", str(cfg), "--out", str(b), "--jobs", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().splitlines()[0] == "scheme,delta_MHz,p01,p02,p12,total"


def test_grid_is_byte_identical(tmp_path):
    cfg = write(tmp_path, "g.toml", "[device]\nlevels = 3\n[sweep]\ndetunings = [110.0]\nomega_max = [20.0]\n"
                                    "t_r = [10.0]\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["grid", "--config", str(cfg), "--out", str(a), "--seed", "4"]) == 0
    assert main(["grid", "--config", str(cfg), "--out", str(b), "--seed", "4"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().splitlines()[0] == "delta_MHz,omega_max_MHz,t_r_ns,scheme,infidelity"


def test_amplify_with_shots_depends_only_on_seed(tmp_path):
    cfg = write(tmp_path, "a.toml", "[device]\nd10 = 104.0\nd21 = -196.0\n[pulse]\nscheme = 'flat_top_m1'\n"
                                    "omega_max = 20.0\nt_r = 10.0\nt_hold = 20.0\n[amplification]\nn_reps = 10\n"
                                    "n_phi = 36\nshots = 100\n")
    outs = [tmp_path / f"{k}.csv" for k in range(3)]
    for out, seed in zip(outs, (1, 1, 2)):
        assert main(["amplify", "--config", str(cfg), "--out", str(out), "--seed", str(seed)]) == 0
    assert outs[0].read_bytes() == outs[1].read_bytes() != outs[2].read_bytes()
    assert outs[0].read_text().splitlines()[0] == "phi_rad,p0,p1,p2"


def test_robust_and_tomo_run(tmp_path):
    rob = write(tmp_path, "r.toml", "[sweep]\neps_omega = [0.0]\neps_delta = [0.0, 5.0]\nn_holds = 4\n")
    assert main(["robust", "--config", str(rob), "--out", str(tmp_path / "r.csv")]) == 0
    assert len((tmp_path / "r.csv").read_text().splitlines()) == 3
    tomo = write(tmp_path, "t.toml", "[device]\ndelta = 110.0\nlevels = 3\n[pulse]\nomega_cr = 30.0\n"
                                     "[tomography]\nshots = 256\n")
    assert main(["tomo", "--config", str(tomo), "--out", str(tmp_path / "t.json"), "--seed", "9"]) == 0
    rep = json.loads((tmp_path / "t.json").read_text())
    assert rep["nu"]["zx"] != 0 and (tmp_path / "t.csv").exists()


def test_build_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        build(SweepConfig, {"detunings": [1.0], "frobnicate": 1})
    assert build(SweepConfig, {"detunings": [50.0, 60.0]}).detunings == (50.0, 60.0)


def test_shipped_configs_parse():
    for path in CONFIGS.glob("*.toml"):
        assert isinstance(load_config(path), dict)
