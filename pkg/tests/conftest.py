import json
from pathlib import Path

import hypothesis
import numpy as np
import pytest

from stefan_oc import cli, dae, metrics, ocp, shooting
from stefan_oc.model import ModelParams, make_model
from stefan_oc.presets import preset

hypothesis.settings.register_profile(
    "suite", max_examples=25, deadline=None, derandomize=True
)
hypothesis.settings.load_profile("suite")


@pytest.fixture(scope="session")
def default_model():
    return make_model(ModelParams())


@pytest.fixture(scope="session")
def small_model():
    return make_model(ModelParams(n=8))


# ---------------------------------------------------------------- sim solves


@pytest.fixture(scope="session")
def p1_sim():
    p = preset("problem1")
    return ocp.solve_simulation_based(p.spec, p.collocation)


@pytest.fixture(scope="session")
def p2_sim():
    p = preset("problem2")
    return ocp.solve_simulation_based(p.spec, p.collocation)


@pytest.fixture(scope="session")
def p2_sim_colloc():
    # the temperature-rate system is index 1; force it through the
    # collocation backend at the reference element length
    p = preset("problem2")
    return ocp.solve_simulation_based(p.spec, p.collocation, backend="collocation")


@pytest.fixture(scope="session")
def p3_sim():
    p = preset("problem3")
    return ocp.solve_simulation_based(p.spec, p.collocation)


@pytest.fixture(scope="session")
def velocity_sweep():
    """Simulation-based velocity-tracking runs over the problem-4 setpoints."""
    p = preset("problem4")
    out = {}
    for sp in p.sweep_setpoints:
        spec = ocp.OcpSpec(
            ocp.TrackInterfaceVelocity(sp),
            model=p.spec.model,
            horizon=None,
        )
        out[sp] = ocp.solve_simulation_based(spec, p.collocation)
    return out


# ----------------------------------------------------------- shooting solves


@pytest.fixture(scope="session")
def p2_shoot_cli(tmp_path_factory):
    """Problem-2 shooting run through the CLI; returns parsed artifacts."""
    out = tmp_path_factory.mktemp("p2_shoot")
    cfg = out / "config.json"
    cfg.write_text(json.dumps({"nlp": {"max_iter": 26}}))
    code = cli.main([
        "solve", "--preset", "problem2", "--method", "shooting",
        "--config", str(cfg), "--out", str(out),
    ])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    nodes = np.loadtxt(out / "nodes.csv", delimiter=",", skiprows=1, ndmin=2)
    return {"dir": out, "report": report, "nodes": nodes}


@pytest.fixture(scope="session")
def p3_shoot12_cli(tmp_path_factory):
    """Problem-3 shooting (linear, n_c=12) through the CLI, run to convergence."""
    out = tmp_path_factory.mktemp("p3_shoot")
    code = cli.main([
        "solve", "--preset", "problem3", "--method", "shooting",
        "--kind", "linear", "--nc", "12", "--out", str(out),
    ])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    nodes = np.loadtxt(out / "nodes.csv", delimiter=",", skiprows=1, ndmin=2)
    return {"dir": out, "report": report, "nodes": nodes}


@pytest.fixture(scope="session")
def p3_shoot_ladder(p3_shoot12_cli):
    """Shooting errors for the control-interval study on problem 3."""
    p = preset("problem3")
    espec = metrics.ErrorSpec("interface_velocity", -0.1)
    errors = {("linear", 12): p3_shoot12_cli["report"]["error_norm"]}
    reports = {}
    for kind, nc, max_iter in [("linear", 4, 200), ("linear", 8, 200), ("constant", 12, 18)]:
        nlp = shooting.NlpConfig(max_iter=max_iter)
        rep = shooting.solve_shooting(p.spec, kind, nc, nlp)
        errors[(kind, nc)] = metrics.error_norm(rep, espec)
        reports[(kind, nc)] = rep
    return {"errors": errors, "reports": reports}
