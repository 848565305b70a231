import numpy as np
import pytest
from hypothesis import given, strategies as st

from stefan_oc import metrics
from stefan_oc.model import ConfigError, ModelParams, make_model
from stefan_oc.ocp import MinTime, OcpSpec, TrackTemperatureRate
from stefan_oc.presets import preset
from stefan_oc.shooting import (
    ControlParam,
    NlpConfig,
    eval_control,
    objective,
    simulate_controls,
    solve_shooting,
)


# ------------------------------------------------------------- eval_control


def test_eval_control_linear_midpoint():
    cp = ControlParam("linear", 1, np.array([0.0, 1.0]), 2.0)
    assert eval_control(cp, 1.0) == pytest.approx(0.5, abs=1e-15)


def test_eval_control_constant_field():
    cp = ControlParam("constant", 5, np.full(5, 0.7), 3.0)
    for tau in (0.0, 0.3, 1.5, 2.999, 3.0):
        assert eval_control(cp, tau) == 0.7


@given(st.integers(1, 8), st.integers(0, 8), st.floats(1.0, 20.0))
def test_eval_control_breakpoint_exactness(n_c, k, horizon):
    k = min(k, n_c)
    rng = np.random.default_rng(n_c * 17 + k)
    nodes = rng.uniform(0, 1, n_c + 1)
    cp = ControlParam("linear", n_c, nodes, horizon)
    assert eval_control(cp, cp.breakpoints[k]) == pytest.approx(nodes[k], abs=1e-12)


def test_eval_control_outside_horizon():
    cp = ControlParam("linear", 2, np.array([0.1, 0.2, 0.3]), 1.0)
    with pytest.raises(ValueError):
        eval_control(cp, 1.5)
    with pytest.raises(ValueError):
        eval_control(cp, -0.2)


def test_eval_control_vectorized():
    cp = ControlParam("linear", 2, np.array([0.0, 1.0, 0.0]), 2.0)
    out = eval_control(cp, np.array([0.0, 0.5, 1.0, 1.5, 2.0]))
    assert np.allclose(out, [0.0, 0.5, 1.0, 0.5, 0.0])


def test_control_param_validation():
    with pytest.raises(ConfigError):
        ControlParam("spline", 2, np.zeros(3), 1.0)
    with pytest.raises(ConfigError):
        ControlParam("linear", 2, np.zeros(2), 1.0)  # needs n_c + 1 nodes
    with pytest.raises(ConfigError):
        ControlParam("constant", 0, np.zeros(0), 1.0)


def test_nlp_config_validation():
    with pytest.raises(ConfigError):
        NlpConfig(opt_tol=0.0)
    with pytest.raises(ConfigError):
        NlpConfig(max_iter=0)


# ---------------------------------------------------------------- objective


@pytest.fixture(scope="module")
def small_speck():
    params = ModelParams(n=8)
    return OcpSpec(MinTime(), model=params, horizon=9.0), make_model(params)


def test_objective_min_time_matches_melt(small_speck):
    spec, model = small_speck
    cp = ControlParam("constant", 1, np.array([1.0]), 9.0)
    nlp = NlpConfig(integ_tol=1e-9)
    val = objective(spec, cp, nlp, model)
    sim = simulate_controls(model, [cp], 1e-9)[0]
    assert val == pytest.approx(sim.melt_tau, abs=1e-12)


def test_objective_min_time_penalizes_no_melt(small_speck):
    spec, model = small_speck
    nlp = NlpConfig(integ_tol=1e-9)
    val = objective(spec, ControlParam("constant", 1, np.array([0.0]), 9.0), nlp, model)
    assert val > 9.0  # horizon plus remaining-core penalty


def test_objective_nonincreasing_in_nodes(small_speck):
    # stronger heating anywhere can only melt sooner
    spec, model = small_speck
    nlp = NlpConfig(integ_tol=1e-8)
    base_nodes = np.full(3, 0.8)
    base = objective(spec, ControlParam("constant", 3, base_nodes, 9.0), nlp, model)
    for i in range(3):
        bumped = base_nodes.copy()
        bumped[i] = 0.9
        val = objective(spec, ControlParam("constant", 3, bumped, 9.0), nlp, model)
        assert val <= base + 1e-9


def test_exact_tracking_control_scores_near_zero(p2_sim):
    # the simulation-based heater trajectory, resampled as a dense piecewise
    # linear control, drives the tracking objective to its quadrature floor
    spec = preset("problem2").spec
    model = p2_sim.model
    nlp = NlpConfig()
    horizon = spec.horizon
    grid = np.linspace(0.0, horizon, 65)
    nodes = np.clip(p2_sim.theta_b_at(np.minimum(grid, p2_sim.t_end)), 0, 1)
    exact_cp = ControlParam("linear", 64, nodes, horizon)
    f_exact = objective(spec, exact_cp, nlp, model)
    f_flat = objective(spec, ControlParam("linear", 64, np.full(65, 0.5), horizon), nlp, model)
    assert f_exact < 2e-4
    assert f_exact < f_flat / 20.0


# ------------------------------------------------------------ solve_shooting


def test_problem1_all_nodes_at_ceiling():
    p = preset("problem1")
    report = solve_shooting(p.spec, "constant", 4)
    assert np.abs(report.control.nodes - 1.0).max() <= 1e-6
    assert report.flags["converged"]
    assert report.melt_tau is not None
    # exact feasibility of the returned node vector
    assert report.control.nodes.min() >= 0.0 and report.control.nodes.max() <= 1.0


def test_objective_trace_is_nonincreasing(p3_shoot_ladder):
    rep = p3_shoot_ladder["reports"][("linear", 8)]
    trace = np.asarray(rep.stats["objective_trace"])
    assert np.all(np.diff(trace) <= 1e-12)


def test_max_iter_flags_nonconverged():
    p = preset("problem3")
    rep = solve_shooting(p.spec, "linear", 4, NlpConfig(max_iter=1))
    assert not rep.flags["converged"]
    assert rep.stats["iterations"] <= 1


def test_shooting_report_counts(p3_shoot_ladder):
    rep = p3_shoot_ladder["reports"][("linear", 8)]
    assert rep.stats["n_sims"] > rep.stats["iterations"] * 9  # 9 nodes and a final sim
    assert rep.wall_time > 0


# ------------------------------------------- accuracy and cross-method checks


def test_p3_linear_beats_constant_by_an_order(p3_shoot_ladder):
    errors = p3_shoot_ladder["errors"]
    assert errors[("linear", 12)] * 10.0 <= errors[("constant", 12)]
    # guard that the constant run is genuinely converged, not inflated
    assert errors[("constant", 12)] <= 1.5e-3


def test_p3_refinement_ladder(p3_shoot_ladder):
    errors = p3_shoot_ladder["errors"]
    ladder = [errors[("linear", nc)] for nc in (4, 8, 12)]
    floor = 1e-6
    assert ladder[1] <= ladder[0] + floor
    assert ladder[2] <= ladder[1] + floor
    assert ladder[2] <= 1e-4  # converged quality at the reference interval count


def test_p2_shooting_quality(p2_shoot_cli):
    # absolute bound: the piecewise-linear optimum is limited by the steep
    # initial heater ramp, not by the optimizer
    assert p2_shoot_cli["report"]["error_norm"] <= 2e-3


def test_cross_method_heater_agreement(p2_sim, p3_sim, p2_shoot_cli, p3_shoot12_cli):
    for sim_report, shoot in ((p2_sim, p2_shoot_cli), (p3_sim, p3_shoot12_cli)):
        bp = shoot["nodes"][:, 0]
        nodes = shoot["nodes"][:, 1]
        # skip the initial consistency layer (first breakpoint)
        mask = (bp >= bp[1] - 1e-12) & (bp <= sim_report.t_end)
        sim_tb = sim_report.theta_b_at(bp[mask])
        assert np.abs(sim_tb - nodes[mask]).max() <= 0.05
