import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stefan_oc.model import (
    ConfigError,
    FrontRangeError,
    ModelParams,
    StefanState,
    average_temperature,
    feasible_velocity_bound,
    make_model,
    quasi_steady_velocity,
    rhs,
)

# Closed-form reference values for the shipped default parameter set,
# frozen from direct evaluation of the quasi-steady formula.
QS_REF_S05 = -0.136226124089085
THRESHOLD_REF = -0.125232294598


# --------------------------------------------------------------- parameters


def test_default_params_valid():
    p = ModelParams()
    assert p.n == 20
    assert 0 < p.eps_front < 0.05


@pytest.mark.parametrize(
    "field,value",
    [
        ("n", 2),
        ("n", 2.5),
        ("stefan_number", 0.0),
        ("stefan_number", -0.1),
        ("alpha_ratio", 0.0),
        ("k_ratio", -1.0),
        ("biot", 0.0),
        ("wall_ratio", 0.0),
        ("eps_front", 0.2),
        ("eps_front", 0.0),
        ("theta_max", -1.0),
    ],
)
def test_invalid_params_name_the_field(field, value):
    with pytest.raises(ConfigError) as exc:
        ModelParams(**{field: value})
    assert field in str(exc.value)


def test_params_json_round_trip():
    p = ModelParams(n=12, biot=3.5)
    q = ModelParams.from_json(json.dumps(p.to_dict()))
    assert q == p


def test_params_json_rejects_unknown_fields():
    with pytest.raises(ConfigError) as exc:
        ModelParams.from_dict({"n": 10, "biott": 1.0})
    assert "biott" in str(exc.value)
    with pytest.raises(ConfigError):
        ModelParams.from_json("[1, 2]")


# -------------------------------------------------------------------- grids


def test_grid_nodes_default():
    m = make_model(ModelParams())
    assert np.allclose(m.u, np.arange(21) / 20)
    assert np.allclose(m.v, np.arange(21) / 20)
    assert m.dim == 41


def test_minimum_grid_is_well_posed():
    m = make_model(ModelParams(n=3))
    st0 = m.initial_state()
    d = m.rhs(st0, 1.0)
    assert np.all(np.isfinite(d.dtheta1))
    assert np.all(np.isfinite(d.dtheta2))
    assert math.isfinite(d.ds)


def test_initial_state():
    m = make_model(ModelParams())
    st0 = m.initial_state()
    assert np.all(st0.theta1 == 0)
    assert np.all(st0.theta2 == 0)
    assert st0.s == 1.0 - m.params.eps_front


# ---------------------------------------------------------------------- rhs


def test_rhs_uniform_melting_point_no_driving_force(default_model):
    st0 = default_model.initial_state()
    d = rhs(default_model, st0, 0.0)
    assert np.all(d.dtheta1 == 0)
    assert np.all(d.dtheta2 == 0)
    assert d.ds == 0


def test_rhs_heating_warms_wall_and_cannot_freeze(default_model):
    st0 = default_model.initial_state()
    d = rhs(default_model, st0, 1.0)
    assert d.dtheta2[-1] > 0  # wall node heats
    # zero interface gradients at the uniform state: the front cannot move yet
    assert d.ds <= 0


def test_rhs_melting_after_warmup(default_model):
    # a short implicit relaxation of the stiff wall layer makes the liquid
    # gradient positive and the front recede
    from stefan_oc.dae import DaeSystem, integrate_index1

    m = default_model
    sys = DaeSystem(
        m.dim,
        lambda t, y, yp: yp - m.rhs_flat(y, 1.0),
        np.ones(m.dim, dtype=bool),
        vectorized=True,
    )
    traj = integrate_index1(sys, m.pack(m.initial_state()), (0.0, 1e-3), tol=1e-8)
    assert m.interface_velocity_flat(traj.values[-1]) < 0


def test_rhs_range_guard(default_model):
    st0 = default_model.initial_state()
    st0.s = default_model.params.eps_front / 10
    with pytest.raises(FrontRangeError):
        rhs(default_model, st0, 1.0)
    st0.s = 1.5
    with pytest.raises(FrontRangeError):
        rhs(default_model, st0, 1.0)


def test_rhs_rejects_nonfinite_heater(default_model):
    with pytest.raises(ConfigError):
        rhs(default_model, default_model.initial_state(), float("nan"))


def test_rhs_quasi_steady_profile():
    # with the liquid at its steady conduction profile, the discrete front
    # velocity must approach the closed form (small front-speed regime)
    p = ModelParams(stefan_number=0.01)
    m = make_model(p)
    s = 0.5
    coef = p.biot / (p.biot * math.log(1.0 / s) + p.wall_ratio)
    x = s + m.v[1:] * (1.0 - s)
    theta2 = coef * np.log(x / s)
    state = StefanState(np.zeros(p.n), theta2, s)
    d = m.rhs(state, 1.0)
    ref = m.quasi_steady_velocity(s, 1.0)
    assert abs(d.ds - ref) / abs(ref) < 0.05


@given(
    st.floats(0.05, 0.95),
    st.floats(0.0, 1.0),
    st.floats(0.0, 1.0),
)
def test_kernel_matches_numpy_reference(s, level, tb):
    m = make_model(ModelParams(n=6))
    rng = np.random.default_rng(42)
    y = np.empty(m.dim)
    y[: 2 * m.n] = level * rng.uniform(0.2, 1.0, 2 * m.n)
    y[m.idx_s] = s
    fast = m.rhs_flat(y, tb)
    ref = m._rhs_flat_numpy(y, tb)
    assert np.allclose(fast, ref, rtol=1e-10, atol=1e-12)


# -------------------------------------------------------- average temperature


def test_average_temperature_trivials(default_model):
    m = default_model
    st0 = m.initial_state()
    assert average_temperature(m, st0) == 0.0
    st0.theta2[:] = 0.5
    assert average_temperature(m, st0) == pytest.approx(0.5, abs=1e-15)


def test_average_temperature_explicit_mean():
    m = make_model(ModelParams(n=4))
    state = StefanState(np.zeros(4), np.array([0.1, 0.2, 0.3, 0.4]), 0.5)
    assert average_temperature(m, state) == pytest.approx(0.25, abs=1e-15)


def test_average_temperature_exclude_wall():
    m = make_model(ModelParams(n=4, avg_include_wall=False))
    state = StefanState(np.zeros(4), np.array([0.1, 0.2, 0.3, 0.9]), 0.5)
    assert average_temperature(m, state) == pytest.approx(0.2, abs=1e-15)


def test_average_temperature_area_weighted():
    m = make_model(ModelParams(n=4, avg_area_weighted=True))
    state = StefanState(np.zeros(4), np.full(4, 0.3), 0.5)
    # constant field: any normalized weighting returns the same value
    assert average_temperature(m, state) == pytest.approx(0.3, abs=1e-14)
    ramp = StefanState(np.zeros(4), np.array([0.1, 0.2, 0.3, 0.4]), 0.5)
    # outer nodes carry more area, so the weighted mean exceeds the plain one
    assert average_temperature(m, ramp) > 0.25


# ------------------------------------------------------------- closed forms


def test_quasi_steady_velocity_zero_drive(default_model):
    assert quasi_steady_velocity(default_model, 0.5, 0.0) == 0.0


@given(st.floats(0.01, 0.99), st.floats(0.01, 1.0), st.floats(1.01, 3.0))
def test_quasi_steady_velocity_monotone_in_heater(s, tb, factor):
    m = make_model(ModelParams())
    v1 = quasi_steady_velocity(m, s, tb)
    v2 = quasi_steady_velocity(m, s, tb * factor)
    assert v2 < v1 < 0


def test_quasi_steady_velocity_reference_value(default_model):
    got = quasi_steady_velocity(default_model, 0.5, 1.0)
    p = default_model.params
    direct = -(p.stefan_number * p.k_ratio * p.biot) / (
        0.5 * (p.biot * math.log(2.0) + p.wall_ratio)
    )
    assert got == pytest.approx(direct, rel=1e-14)
    assert got == pytest.approx(QS_REF_S05, abs=1e-12)


def test_quasi_steady_velocity_guard(default_model):
    with pytest.raises(FrontRangeError):
        quasi_steady_velocity(default_model, 0.0, 1.0)
    # the logarithm is benign at s = 1
    assert math.isfinite(quasi_steady_velocity(default_model, 1.0, 1.0))


def test_feasible_velocity_bound_definition(default_model):
    for s in (0.1, 0.5, 0.9):
        assert feasible_velocity_bound(default_model, s) == quasi_steady_velocity(
            default_model, s, default_model.params.theta_max
        )


def test_feasibility_threshold_brute_force(default_model):
    m = default_model
    eps = m.params.eps_front
    grid = np.arange(eps, 1.0 - eps + 5e-4, 1e-3)
    grid = grid[grid <= 1 - eps]
    scan = float(np.max(m.feasible_velocity_bound(grid)))
    got = m.feasibility_threshold()
    assert got == pytest.approx(scan, abs=1e-14)
    assert got == pytest.approx(THRESHOLD_REF, abs=1e-9)
    # the shipped defaults separate the tracked sweep values from -0.15
    assert -0.15 < got < -0.1
