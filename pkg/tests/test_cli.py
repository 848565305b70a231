import json
from pathlib import Path

import numpy as np
import pytest

from stefan_oc import cli
from stefan_oc.metrics import ErrorSpec
from stefan_oc.model import ModelParams


def read_csv(path):
    lines = Path(path).read_text().splitlines()
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    return header, rows


def column(header, rows, name, cast=float):
    k = header.index(name)
    return np.array([cast(r[k]) for r in rows])


EXPECTED_PREFIX = ["tau", "s", "ds_dtau", "theta_avg", "dtheta_avg_dtau", "theta_b"]


def test_simulate_problem1_heater_column(tmp_path):
    out = tmp_path / "p1"
    assert cli.main(["simulate", "--preset", "problem1", "--out", str(out)]) == 0
    header, rows = read_csv(out / "trajectory.csv")
    assert header[:6] == EXPECTED_PREFIX
    assert header[6:26] == [f"theta1_{i:02d}" for i in range(20)]
    assert header[26:] == [f"theta2_{j:02d}" for j in range(1, 21)]
    tb = column(header, rows, "theta_b")
    assert np.all(tb == 1.0)
    run = json.loads((out / "run.json").read_text())
    assert run["config"]["model"]["n"] == 20
    assert run["thawing_time"] == pytest.approx(8.0492, abs=1e-3)


def test_simulate_zero_drive_keeps_front(tmp_path):
    out = tmp_path / "p0"
    assert cli.main([
        "simulate", "--preset", "problem1", "--theta-b", "0.0", "--out", str(out)
    ]) == 0
    header, rows = read_csv(out / "trajectory.csv")
    s = column(header, rows, "s")
    assert np.abs(s - s[0]).max() <= 1e-8  # constant up to integration tolerance
    assert s[0] == pytest.approx(1.0 - 1e-3, abs=1e-12)


def test_simulate_control_file(tmp_path):
    table = tmp_path / "control.csv"
    table.write_text("0.0,0.2\n4.0,0.9\n10.0,0.9\n")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"simulate": {"control_file": str(table)}}))
    out = tmp_path / "pf"
    assert cli.main([
        "simulate", "--preset", "problem1", "--config", str(cfg), "--out", str(out)
    ]) == 0
    header, rows = read_csv(out / "trajectory.csv")
    tb = column(header, rows, "theta_b")
    assert tb[0] == pytest.approx(0.2, abs=1e-9)
    assert tb.max() <= 0.9 + 1e-9


def test_simulate_deterministic_reruns(tmp_path):
    out_a = tmp_path / "a"
    out_b = tmp_path / "b"
    for out in (out_a, out_b):
        assert cli.main(["simulate", "--preset", "problem1", "--out", str(out)]) == 0
    assert (out_a / "trajectory.csv").read_bytes() == (out_b / "trajectory.csv").read_bytes()


def test_solve_problem2_sim_report(tmp_path):
    out = tmp_path / "p2"
    assert cli.main([
        "solve", "--preset", "problem2", "--method", "sim", "--out", str(out)
    ]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["error_norm"] <= 1e-4
    # independent re-check from the emitted trajectory file
    header, rows = read_csv(out / "trajectory.csv")
    taus = column(header, rows, "tau")
    tavg = column(header, rows, "theta_avg")
    grid = 0.05 * np.arange(int(taus[-1] / 0.05) + 1)
    series = np.interp(grid, taus, tavg)
    rate = np.diff(series) / 0.05
    rms = float(np.sqrt(np.mean((rate - 0.04) ** 2)))
    assert rms <= 1e-4


def test_solve_shooting_nodes_csv(tmp_path):
    # breakpoint count for the linear parameterization is n_c + 1; a
    # two-iteration cap keeps this a plumbing test
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"nlp": {"max_iter": 2}}))
    out = tmp_path / "p2s"
    assert cli.main([
        "solve", "--preset", "problem2", "--method", "shooting",
        "--config", str(cfg), "--out", str(out),
    ]) == 0
    header, rows = read_csv(out / "nodes.csv")
    assert header == ["breakpoint", "node"]
    assert len(rows) == 17
    report = json.loads((out / "report.json").read_text())
    assert report["flags"]["converged"] is False  # capped on purpose, exit still 0


def test_solve_problem3_shooting_converges(p3_shoot12_cli):
    report = p3_shoot12_cli["report"]
    assert report["flags"]["converged"] is True
    assert len(p3_shoot12_cli["nodes"]) == 13


def test_sweep_velocity_events(tmp_path):
    out = tmp_path / "sweep"
    assert cli.main(["sweep", "--preset", "problem4", "--out", str(out)]) == 0
    header, rows = read_csv(out / "sweep_events.csv")
    # the heater ceiling activates only for the -0.15 setpoint
    hi_rows = [r for r in rows if r[3] == "bound_hi"]
    assert hi_rows and all(float(r[0]) == -0.15 for r in hi_rows)
    summary = json.loads((out / "sweep.json").read_text())
    assert set(summary["results"]) == {"-0.05", "-0.08", "-0.1", "-0.15"}
    assert all(v["status"] == "ok" for v in summary["results"].values())


def test_sweep_rate_linear_segments(tmp_path):
    out = tmp_path / "ratesweep"
    assert cli.main([
        "sweep", "--preset", "problem2", "--setpoints", "0.01,0.02,0.03,0.04",
        "--out", str(out),
    ]) == 0
    header, rows = read_csv(out / "sweep.csv")
    sp_col = column(header, rows, "setpoint")
    taus = column(header, rows, "tau")
    tavg = column(header, rows, "theta_avg")
    for sp in (0.01, 0.02, 0.03, 0.04):
        mask = (sp_col == sp) & (taus > 0.2)
        slope = np.polyfit(taus[mask], tavg[mask], 1)[0]
        assert slope == pytest.approx(sp, rel=0.01)


def test_sweep_empty_list_is_usage_error(tmp_path):
    code = cli.main([
        "sweep", "--preset", "problem3", "--setpoints", "", "--out", str(tmp_path)
    ])
    assert code == 2


def test_benchmark_small_model(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "model": ModelParams(n=6).to_dict(),
        "nlp": {"integ_tol": 1e-7, "max_iter": 2},
        "control": {"kind": "constant", "n_c": 2},
        "bench": {"min_repeats": 10, "shooting_max_iter": 2},
    }))
    out = tmp_path / "bench"
    assert cli.main([
        "benchmark", "--preset", "problem3", "--config", str(cfg), "--out", str(out)
    ]) == 0
    header, rows = read_csv(out / "bench.csv")
    assert header[0] == "method"
    by_method = {r[0]: r for r in rows}
    mean = {m: float(by_method[m][header.index("mean_wall_time_s")]) for m in by_method}
    ratio = float(by_method["sim"][header.index("speedup_ratio")])
    assert ratio == pytest.approx(mean["shooting"] / mean["sim"], rel=1e-9)
    reps = {m: int(float(by_method[m][header.index("repeats")])) for m in by_method}
    assert min(reps.values()) >= 10


def test_unknown_preset_is_config_error(tmp_path):
    code = cli.main(["solve", "--preset", "problem1", "--method", "nope", "--out", str(tmp_path)])
    assert code != 0


def test_missing_problem_is_config_error(tmp_path):
    code = cli.main(["solve", "--method", "sim", "--out", str(tmp_path)])
    assert code == 2
