import csv
import json
import math

import numpy as np
import pytest

from teleport_sim.cli import CSV_HEADER, ConfigError, main, parse_config

LN4 = math.log(4.0)


def run_json(tmp_path, *args):
    out = tmp_path / "report.json"
    code = main([*args, "--out", str(out)])
    return code, (json.loads(out.read_text()) if out.exists() else None)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def check(report, name):
    return next(c for c in report["checks"] if c["name"] == name)


# ---------------------------------------------------------------- verify


def test_verify_perfect_n2(tmp_path):
    code, report = run_json(tmp_path, "verify", "--n", "2", "--d", "1", "--variant", "perfect")
    assert code == 0
    probs = [o["probability"] for o in report["outcomes"]]
    np.testing.assert_allclose(probs, [0.25] * 4, atol=1e-10)
    assert all(c["pass"] for c in report["checks"])
    assert {"name", "residual", "tolerance", "pass"} <= set(report["checks"][0])


def test_verify_filtered_matches_closed_form(tmp_path):
    code, report = run_json(tmp_path, "verify", "--n", "3", "--d", "0.5", "--variant", "coherent+filter")
    assert code == 0
    total = sum(o["probability"] for o in report["outcomes"])
    ref = (1 - math.exp(-0.25)) ** 2 / (1 + 2 * math.exp(-0.5))
    assert abs(total - ref) < 1e-10
    assert check(report, "total_probability_closed_form")["residual"] < 1e-10


def test_verify_corrupted_b_names_check(tmp_path, capsys):
    bad = tmp_path / "b.json"
    bad.write_text(json.dumps({"b": [[1, 1], [1, 1]]}))
    code, report = run_json(tmp_path, "verify", "--n", "2", "--b", str(bad))
    assert code == 1
    assert "b_rows_orthogonal" in capsys.readouterr().err
    assert not check(report, "b_rows_orthogonal")["pass"]


def test_verify_complex_b_file(tmp_path):
    b = np.exp(2j * np.pi * np.outer(np.arange(3), np.arange(3)) / 3)
    path = tmp_path / "b.json"
    path.write_text(json.dumps([[[z.real, z.imag] for z in row] for row in b]))
    code, _ = run_json(tmp_path, "verify", "--n", "3", "--b", str(path))
    assert code == 0


def test_verify_unfiltered_reports_e1(tmp_path):
    code, report = run_json(tmp_path, "verify", "--n", "2", "--d", "3", "--variant", "coherent")
    assert code == 0
    assert all(o["e1_residual"] > 1e-3 for o in report["outcomes"])


# ---------------------------------------------------------------- teleport


def test_teleport_basis_state(tmp_path):
    code, report = run_json(tmp_path, "teleport", "--n", "2", "--state", "basis:0", "--variant", "perfect")
    assert code == 0
    for o in report["outcomes"]:
        assert o["fidelity"] == pytest.approx(1.0, abs=1e-10)
        rho = np.array(o["recovered_qudit"])[..., 0]
        np.testing.assert_allclose(rho, [[1, 0], [0, 0]], atol=1e-10)


def test_teleport_ln4_total(tmp_path):
    code, report = run_json(tmp_path, "teleport", "--n", "2", "--d", repr(LN4),
                            "--variant", "coherent+filter")
    assert code == 0
    assert sum(o["probability"] for o in report["outcomes"]) == pytest.approx(0.2, abs=1e-10)


def test_teleport_random_roundtrip(tmp_path):
    code, report = run_json(tmp_path, "teleport", "--n", "3", "--state", "random:17")
    assert code == 0
    assert min(o["fidelity"] for o in report["outcomes"]) > 1 - 1e-10


def test_teleport_sample_is_seeded(tmp_path):
    _, first = run_json(tmp_path, "teleport", "--n", "2", "--sample", "4")
    _, second = run_json(tmp_path, "teleport", "--n", "2", "--sample", "4")
    assert first["sample"] == second["sample"]
    assert first["sample"]["outcome"] in ([n, m] for n in range(2) for m in range(2))


def test_teleport_state_files(tmp_path):
    vec = tmp_path / "vec.json"
    vec.write_text(json.dumps({"vector": [[0.6, 0.0], [0.0, 0.8]]}))
    code, report = run_json(tmp_path, "teleport", "--n", "2", "--state", str(vec))
    assert code == 0
    dm = tmp_path / "dm.json"
    dm.write_text(json.dumps({"density_matrix": [[0.5, 0.0], [0.0, 0.5]]}))
    code, _ = run_json(tmp_path, "teleport", "--n", "2", "--state", str(dm))
    assert code == 0


# ---------------------------------------------------------------- sweep


def test_sweep_log_grid_monotone(tmp_path):
    out = tmp_path / "sweep.csv"
    code = main(["sweep", "--n", "2", "--d-min", "0.1", "--d-max", "100", "--d-steps", "7",
                 "--d-scale", "log", "--out", str(out)])
    assert code == 0
    rows = read_csv(out)
    assert tuple(rows[0]) == CSV_HEADER
    summaries = [r for r in rows[1:] if r[2] == ""]
    assert len(summaries) == 7
    assert len(rows) == 1 + 7 * (4 + 1)
    totals = [float(r[5]) for r in summaries]
    assert all(b > a for a, b in zip(totals, totals[1:]))
    for r in summaries:
        assert abs(float(r[5]) - float(r[6])) < 1e-10


def test_sweep_large_d_row(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--n", "2", "--d", "200", "--out", str(out)]) == 0
    last = read_csv(out)[-1]
    assert abs(float(last[5]) - 1.0) < 1e-10


def test_sweep_single_step_matches_verify(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--n", "2", "--d-min", "2.5", "--d-max", "9", "--d-steps", "1",
                 "--out", str(out)]) == 0
    rows = read_csv(out)[1:5]
    code, report = run_json(tmp_path, "verify", "--n", "2", "--d", "2.5", "--variant", "coherent+filter")
    assert code == 0
    for row, o in zip(rows, report["outcomes"]):
        assert float(row[4]) == o["probability"]
        assert float(row[7]) == o["fidelity"]


def test_sweep_csv_reproducible_bytes(tmp_path):
    args = ["sweep", "--n", "2", "--d-min", "0.5", "--d-max", "5", "--d-steps", "4"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main([*args, "--out", str(a)]) == 0
    assert main([*args, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    text = a.read_text()
    assert "\r" not in text
    # 17 significant digits
    assert read_csv(a)[1][1] == format(0.5, ".17g")


def test_sweep_json_format(tmp_path):
    code, report = run_json(tmp_path, "sweep", "--n", "2", "--d-min", "1", "--d-max", "2",
                            "--d-steps", "2", "--format", "json")
    assert code == 0
    assert sorted({o["d"] for o in report["outcomes"]}) == [1.0, 2.0]


def test_sweep_unwritable_output(tmp_path):
    assert main(["sweep", "--n", "2", "--d", "1", "--out", str(tmp_path / "missing" / "x.csv")]) == 2


# ---------------------------------------------------------------- spatial


def test_spatial_locality(tmp_path):
    code, report = run_json(tmp_path, "spatial", "--n", "2", "--d", "10")
    assert code == 0
    for name in ("alice_measurement_outside_x1", "alice_state_outside_x1", "bob_state_outside_x2"):
        assert check(report, name)["residual"] < 1e-12
    assert check(report, "local_vs_global_filter_probability")["residual"] < 1e-12
    assert check(report, "qudit_key_recovery")["pass"]


def test_spatial_rejects_half_half(tmp_path):
    assert main(["spatial", "--n", "2", "--splitting", "half-half"]) == 2


# ---------------------------------------------------------------- config handling


def test_config_file_and_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"N": 3, "d": {"min": 1, "max": 4, "steps": 3, "scale": "linear"},
                               "variant": "perfect", "tolerance": {"protocol": 1e-9}}))
    parsed = parse_config(["sweep", "--config", str(cfg), "--n", "2"])
    assert parsed.n == 2
    assert parsed.grid() == [1.0, 2.5, 4.0]
    assert parsed.tol == 1e-9
    parsed = parse_config(["sweep", "--config", str(cfg), "--d", "3"])
    assert parsed.grid() == [3.0]


@pytest.mark.parametrize("argv", [
    ["verify", "--n", "0"],
    ["verify", "--d", "-1"],
    ["verify", "--d-min", "1", "--d-max", "2", "--d-steps", "2"],
    ["sweep", "--d-min", "1", "--d-max", "2"],
    ["sweep", "--d-min", "3", "--d-max", "2", "--d-steps", "2"],
    ["sweep", "--d-min", "0", "--d-max", "2", "--d-steps", "2", "--d-scale", "log"],
    ["verify", "--state", "basis:5"],
    ["verify", "--state", "random:x"],
    ["verify", "--state", "/no/such/file.json"],
    ["verify", "--tol", "-1"],
])
def test_config_errors_exit_2(argv):
    assert main(argv) == 2


def test_usage_errors_exit_2():
    assert main(["bogus"]) == 2
    assert main(["verify", "--variant", "magic"]) == 2


def test_config_unknown_field(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"colour": "blue"}))
    with pytest.raises(ConfigError):
        parse_config(["verify", "--config", str(cfg)])
    assert main(["verify", "--config", str(cfg)]) == 2


def test_config_command_mismatch(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"command": "sweep"}))
    assert main(["verify", "--config", str(cfg)]) == 2


def test_stdout_output(capsys):
    assert main(["verify", "--n", "1", "--d", "2"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["config"]["n"] == 1
    assert report["outcomes"][0]["probability"] == pytest.approx(1.0, abs=1e-10)
