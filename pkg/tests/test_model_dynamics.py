"""Simulation-backed model invariants: bounds, monotone front, comparisons."""

import numpy as np
import pytest

from stefan_oc.dae import DaeSystem, EventSpec, integrate_index1
from stefan_oc.model import ModelParams, make_model


def melt_system(model, theta_b):
    eps = model.params.eps_front
    return DaeSystem(
        dim=model.dim,
        residual=lambda t, y, yp: yp - model.rhs_flat(y, theta_b),
        is_differential=np.ones(model.dim, dtype=bool),
        vectorized=True,
        stop_events=[EventSpec(lambda t, y: y[..., model.idx_s] - eps, -1, "melt")],
    )


def run_constant(model, theta_b, tmax=200.0, tol=1e-9):
    y0 = model.pack(model.initial_state())
    return integrate_index1(melt_system(model, theta_b), y0, (0.0, tmax), tol=tol)


def melt_time(traj):
    for ev in traj.events:
        if ev.name == "melt":
            return ev.tau
    return None


@pytest.fixture(scope="module")
def small8():
    return make_model(ModelParams(n=8))


def test_temperature_bounds(small8):
    for tb in (0.3, 1.0):
        traj = run_constant(small8, tb)
        temps = traj.values[:, : 2 * small8.n]
        assert temps.min() >= -1e-6
        assert temps.max() <= 1.0 + 1e-6


def test_monotone_front(small8):
    traj = run_constant(small8, 0.3)
    s = traj.values[:, small8.idx_s]
    # nonincreasing throughout; strictly decreasing once the wall layer has
    # warmed (the first instants have no interface gradient yet)
    assert np.all(np.diff(s) <= 1e-12)
    warmed = traj.taus[:-1] > 0.01
    assert np.all(np.diff(s)[warmed] < 0)
    assert melt_time(traj) is not None


def test_no_heating_no_melting(small8):
    traj = run_constant(small8, 0.0, tmax=5.0)
    s = traj.values[:, small8.idx_s]
    assert np.allclose(s, s[0], atol=1e-12)
    assert melt_time(traj) is None


@pytest.mark.parametrize("pair", [(0.4, 0.7), (0.7, 1.0)])
def test_comparison_principle(small8, pair):
    lo, hi = pair
    traj_lo = run_constant(small8, lo)
    traj_hi = run_constant(small8, hi)
    t_shared = np.linspace(0.05, min(traj_lo.t_end, traj_hi.t_end) - 1e-6, 60)
    s_lo = traj_lo.sample(t_shared)[:, small8.idx_s]
    s_hi = traj_hi.sample(t_shared)[:, small8.idx_s]
    assert np.all(s_hi <= s_lo + 1e-9)
    assert melt_time(traj_hi) < melt_time(traj_lo)


def test_grid_convergence_of_melt_time():
    t20 = melt_time(run_constant(make_model(ModelParams(n=20)), 1.0, tol=1e-10))
    t40 = melt_time(run_constant(make_model(ModelParams(n=40)), 1.0, tol=1e-10))
    assert abs(t40 - t20) / t20 <= 0.01


def test_full_power_peak_speed_calibration():
    # shipped defaults: the post-warm-up speed plateau lies in (0.10, 0.13);
    # only the final melt-out focusing exceeds it
    m = make_model(ModelParams())
    traj = run_constant(m, 1.0, tol=1e-10)
    ts = np.linspace(0.0, traj.t_end, 2000)
    states = traj.sample(ts)
    v = m.interface_velocity_flat(states)
    s = states[:, m.idx_s]
    bulk_peak = float(np.abs(v[s >= 0.5]).max())
    assert 0.10 < bulk_peak < 0.13


def test_quasi_steady_run_consistency():
    # small-Stefan-number run follows the closed form away from the start-up
    # layer and the under-resolved melt-out endgame
    m = make_model(ModelParams(stefan_number=0.01))
    y0 = m.pack(m.initial_state())
    eps = m.params.eps_front
    sys = DaeSystem(
        dim=m.dim,
        residual=lambda t, y, yp: yp - m.rhs_flat(y, 1.0),
        is_differential=np.ones(m.dim, dtype=bool),
        vectorized=True,
        stop_events=[EventSpec(lambda t, y: y[..., m.idx_s] - 0.2, -1, "window_end")],
    )
    traj = integrate_index1(sys, y0, (0.0, 5000.0), tol=1e-9)
    s = traj.values[:, m.idx_s]
    mask = (s > 0.25) & (s < 0.95)
    v_model = m.interface_velocity_flat(traj.values[mask])
    v_ref = m.quasi_steady_velocity(s[mask], 1.0)
    rel = np.abs(v_model - v_ref) / np.abs(v_ref)
    assert rel.max() <= 0.05
