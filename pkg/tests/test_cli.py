import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from pmdkit.cli import run
from pmdkit.config import ConfigError, read_config_file, resolve
from pmdkit.fiber import FiberRealization
from pmdkit.qber import QberFormatError, linear_regression, parse_qber_csv


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


def snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


@pytest.fixture
def waveplate_json(tmp_path):
    path = tmp_path / "waveplate.json"
    path.write_text(FiberRealization.waveplate([0.6, 0.0, 0.8], 0.3).to_json())
    return path


def test_simulate_defaults(tmp_path):
    out = tmp_path / "sim"
    assert run(["simulate", "--out", str(out)]) == 0
    header, data = read_csv(out / "trajectory_H.csv")
    assert header == ["wavelength_nm", "s1", "s2", "s3"]
    assert len(data) == 401
    assert data[0, 0] == 1260.0 and data[-1, 0] == 1360.0
    for name in ("fiber.json", "dgd.csv", "scan.csv", "scan_inputs.json", "trajectory_A.csv"):
        assert (out / name).exists()
    assert len(FiberRealization.from_json((out / "fiber.json").read_text())) == 200


def test_simulate_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["simulate", "--out", str(a), "--svg", "true"]) == 0
    assert run(["simulate", "--out", str(b), "--svg", "true"]) == 0
    assert snapshot(a) == snapshot(b)
    assert (a / "dgd.svg").read_text().startswith("<svg")


def test_simulate_zero_pmd(tmp_path):
    out = tmp_path / "z"
    assert run(["simulate", "--out", str(out), "--pmd_coeff", "0"]) == 0
    _, data = read_csv(out / "trajectory_D.csv")
    assert np.allclose(data[:, 1:], data[0, 1:], atol=1e-15)


def test_config_file_and_flag_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# recipe\nlength_km = 10\nstart_nm = 1300\nstop_nm = 1310  # ten nm\nstep_nm = 0.5\n")
    out = tmp_path / "c"
    assert run(["simulate", "--config", str(cfg), "--out", str(out), "--stop-nm", "1305"]) == 0
    _, data = read_csv(out / "trajectory_H.csv")
    assert len(data) == 11 and data[-1, 0] == 1305.0


def test_config_resolution():
    values = resolve("sweep", {"widths_nm": "0.5, 1"}, {"seed": "7"})
    assert values["widths_nm"] == [0.5, 1.0]
    assert values["seed"] == 7
    assert values["n_realizations"] == 200
    with pytest.raises(ConfigError, match="unknown"):
        resolve("sweep", {"bogus": "1"}, {})
    with pytest.raises(ConfigError, match="seed"):
        resolve("sweep", {}, {"seed": "x"})


def test_config_file_parsing(tmp_path):
    p = tmp_path / "a.cfg"
    p.write_text("seed = 3\nout=results\n")
    assert read_config_file(p) == {"seed": "3", "out": "results"}
    p.write_text("seed 3\n")
    with pytest.raises(ConfigError):
        read_config_file(p)


def test_exit_codes(tmp_path, capsys):
    assert run(["simulate", "--out", str(tmp_path), "--length_km", "-1"]) == 1
    assert "length_km" in capsys.readouterr().err
    assert run(["simulate", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert run(["mmm", "--scan", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("nonsense_key = 1\n")
    assert run(["simulate", "--config", str(bad)]) == 1
    # an output path that is a file is an I/O failure
    blocker = tmp_path / "blocker"
    blocker.write_text("")
    assert run(["qber-model", "--out", str(blocker / "sub")]) == 2


def test_infidelity_header_and_bound(tmp_path, waveplate_json):
    out = tmp_path / "inf"
    assert run(["infidelity", "--fiber", str(waveplate_json), "--out", str(out),
                "--start_nm", "1290", "--stop_nm", "1330"]) == 0
    header, data = read_csv(out / "infidelity.csv")
    assert header == ["wavelength_nm", "p_e_H", "p_e_V", "p_e_D", "p_e_A", "p_e_dgd_bound"]
    assert np.all(data[:, 5:6] >= data[:, 1:5] - 1e-9)


def test_infidelity_default_fiber_5nm(tmp_path):
    out = tmp_path / "inf"
    assert run(["infidelity", "--out", str(out), "--window_nm", "5"]) == 0
    _, data = read_csv(out / "infidelity.csv")
    assert len(data) == 401 - 20


def test_infidelity_zero_pmd(tmp_path):
    out = tmp_path / "inf"
    assert run(["infidelity", "--out", str(out), "--pmd_coeff", "0"]) == 0
    _, data = read_csv(out / "infidelity.csv")
    assert np.all(np.abs(data[:, 1:]) < 1e-15)


def test_infidelity_window_too_wide(tmp_path):
    assert run(["infidelity", "--out", str(tmp_path), "--start_nm", "1300", "--stop_nm", "1302"]) == 1


def test_sweep_bandwidth_slope(tmp_path):
    out = tmp_path / "sw"
    assert run(["sweep", "--out", str(out), "--lengths_km", "30", "--widths_nm", "0.05,0.5,5",
                "--n_realizations", "300"]) == 0
    header, data = read_csv(out / "sweep.csv")
    assert header == ["distance_km", "bandwidth_nm", "p_e_mean", "p_e_std", "p_e_dgd_method"]
    slope = np.polyfit(np.log10(data[:2, 1]), np.log10(data[:2, 2]), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.05)


def test_sweep_distance_linear(tmp_path):
    out = tmp_path / "sw"
    assert run(["sweep", "--out", str(out), "--n_realizations", "300"]) == 0
    _, data = read_csv(out / "sweep.csv")
    fit = np.polyfit(data[:, 0], data[:, 2], 1)
    resid = data[:, 2] - np.polyval(fit, data[:, 0])
    r2 = 1 - resid @ resid / np.sum((data[:, 2] - data[:, 2].mean()) ** 2)
    assert r2 > 0.99
    # DGD-method column agrees with trajectory integration in the small-angle regime
    small = data[data[:, 0] <= 50]
    assert np.all(np.abs(small[:, 4] / small[:, 2] - 1) < 0.05)


def test_sweep_empty_list(tmp_path):
    assert run(["sweep", "--out", str(tmp_path), "--lengths_km", ""]) == 1


def test_mmm_waveplate(tmp_path, waveplate_json):
    sim = tmp_path / "sim"
    assert run(["simulate", "--fiber", str(waveplate_json), "--out", str(sim),
                "--start_nm", "1300", "--stop_nm", "1320"]) == 0
    out = tmp_path / "mmm"
    assert run(["mmm", "--scan", str(sim / "scan.csv"), "--inputs", str(sim / "scan_inputs.json"),
                "--out", str(out)]) == 0
    header, data = read_csv(out / "mmm_dgd.csv")
    assert header == ["wavelength_nm", "dgd_ps", "psp_s1", "psp_s2", "psp_s3"]
    assert np.allclose(data[:, 1], 0.3, rtol=1e-9)
    assert np.allclose(data[:, 2:], [0.6, 0.0, 0.8], atol=1e-9)
    summary = json.loads((out / "mmm_summary.json").read_text())
    assert summary["delta_lambda0_nm"] is None
    assert max(summary["pair_agreement"]["max_rel_diff"].values()) < 1e-6


def test_mmm_malformed(tmp_path, capsys):
    scan = tmp_path / "scan.csv"
    scan.write_text("wavelength_nm,state_label,s1,s2,s3\n1300,H,1,0,0\n1300,D,0,1\n")
    assert run(["mmm", "--scan", str(scan), "--out", str(tmp_path)]) == 1
    assert "line 3" in capsys.readouterr().err
    assert run(["mmm", "--out", str(tmp_path)]) == 1


def test_qber_flat_line(tmp_path):
    out = tmp_path / "q"
    assert run(["qber-model", "--out", str(out), "--pmd_coeff", "0", "--baseline", "0.01"]) == 0
    header, data = read_csv(out / "qber_model.csv")
    assert header == ["distance_km", "qber_model"]
    assert np.all(data[:, 1] == 0.01)


def test_qber_model_linear(tmp_path):
    out = tmp_path / "q"
    assert run(["qber-model", "--out", str(out)]) == 0
    _, data = read_csv(out / "qber_model.csv")
    assert np.allclose(data[:, 1] / data[:, 0], data[0, 1] / data[0, 0], rtol=1e-12)


def test_qber_regression_on_synthetic(tmp_path):
    out = tmp_path / "q"
    assert run(["qber-model", "--out", str(out), "--baseline", "0.02"]) == 0
    _, model = read_csv(out / "qber_model.csv")
    rng = np.random.default_rng(1)
    measured = model[:, 1] + rng.normal(0, 0.0002, len(model))
    path = tmp_path / "measured.csv"
    path.write_text("distance_km,qber\n" + "".join(f"{d},{q}\n" for d, q in zip(model[:, 0], measured)))
    assert run(["qber-model", "--out", str(out), "--baseline", "0.02", "--measured", str(path)]) == 0
    reg = json.loads((out / "qber_regression.json").read_text())
    assert reg["r"] > 0.9
    assert set(reg) == {"slope_per_km", "intercept", "r", "n_points"}


def test_qber_measured_malformed(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("distance_km,qber\n10,0.01\n5,0.02\n")
    assert run(["qber-model", "--out", str(tmp_path), "--measured", str(path)]) == 1


@pytest.mark.parametrize(
    "text, match",
    [
        ("km,qber\n1,0.1\n2,0.1\n", "line 1"),
        ("distance_km,qber\n1,0.1\n2\n", "line 3"),
        ("distance_km,qber\n1,0.1\n2,abc\n", "line 3"),
        ("distance_km,qber\n1,0.1\n2,0.7\n", r"\[0, 0.5\]"),
        ("distance_km,qber\n2,0.1\n1,0.1\n", "increasing"),
    ],
)
def test_qber_parse_errors(text, match):
    with pytest.raises(QberFormatError, match=match):
        parse_qber_csv(text)


def test_qber_parse_uncertainty():
    s = parse_qber_csv("distance_km,qber,uncertainty\n10,0.02,0.001\n20,0.03,0.001\n")
    assert s.uncertainty.tolist() == [0.001, 0.001]


def test_regression_exact_line():
    x = np.array([10.0, 20.0, 40.0])
    reg = linear_regression(x, 0.001 * x + 0.01)
    assert reg.slope == pytest.approx(0.001)
    assert reg.intercept == pytest.approx(0.01)
    assert reg.r == pytest.approx(1.0)


def test_basis_study_geometries(tmp_path):
    out = tmp_path / "b"
    assert run(["basis-study", "--out", str(out), "--delta_theta", "1.3"]) == 0
    g = json.loads((out / "basis_study.json").read_text())["geometries"]
    full = g["orthogonal"]["weighted_average"]
    assert abs(g["aligned"]["weighted_average"] - full / 2) < 1e-12
    assert abs(g["symmetric"]["weighted_average"] - full / 2) < 1e-12


def test_basis_study_efficient_bb84(tmp_path):
    out = tmp_path / "b"
    assert run(["basis-study", "--out", str(out), "--p_z", "0.9"]) == 0
    doc = json.loads((out / "basis_study.json").read_text())
    assert doc["optimizer"]["alpha"] == 0
    assert doc["optimizer"]["budget"]["per_basis"][0] < 1e-20


def test_basis_study_six_state(tmp_path):
    out = tmp_path / "b"
    assert run(["basis-study", "--out", str(out), "--protocol", "six_state"]) == 0
    six = json.loads((out / "basis_study.json").read_text())["six_state"]
    assert six["std"] < 1e-12
    assert six["mean"] == pytest.approx(six["axis_aligned"], abs=1e-12)


def test_basis_study_with_fiber(tmp_path):
    sim = tmp_path / "sim"
    assert run(["simulate", "--out", str(sim), "--start_nm", "1300", "--stop_nm", "1320"]) == 0
    out = tmp_path / "b"
    assert run(["basis-study", "--out", str(out), "--fiber", str(sim / "fiber.json")]) == 0
    doc = json.loads((out / "basis_study.json").read_text())
    assert {"psp_arc", "p_e_psp_two_channel", "delta_lambda0", "p_e_osc", "note"} <= set(doc["higher_order"])
    assert abs(np.linalg.norm(doc["omega_axis"]) - 1) < 1e-12


def test_basis_study_bad_protocol(tmp_path):
    assert run(["basis-study", "--out", str(tmp_path), "--protocol", "b92"]) == 1
    assert run(["basis-study", "--out", str(tmp_path), "--omega_axis", "1,1,0"]) == 1


def test_probabilities_full_precision(tmp_path):
    out = tmp_path / "sw"
    assert run(["sweep", "--out", str(out), "--lengths_km", "30", "--n_realizations", "100"]) == 0
    text = (out / "sweep.csv").read_text().splitlines()[1]
    p = text.split(",")[2]
    digits = p.lower().split("e")[0].replace(".", "").replace("-", "").lstrip("0")
    assert len(digits) >= 9


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "pmdkit", "qber-model", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert "qber_model.csv" in res.stdout
