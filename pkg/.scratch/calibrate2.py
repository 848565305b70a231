# Calibration scratch #2: QS error profile, P2 closed-loop feasibility, P3 feedforward premium.
import importlib.util
import sys

import numpy as np
from scipy.integrate import solve_ivp

spec = importlib.util.spec_from_file_location("model", "/root/pkg/src/stefan_oc/model.py")
model_mod = importlib.util.module_from_spec(spec)
sys.modules["model"] = model_mod
spec.loader.exec_module(model_mod)
P = model_mod.ModelParams


def melt_event(m):
    def ev(t, y):
        return y[m.idx_s] - m.params.eps_front
    ev.terminal = True
    ev.direction = -1
    return ev


def run(m, control, tmax=500.0, rtol=1e-9, atol=1e-11):
    y0 = m.pack(m.initial_state())
    f = lambda t, y: m.rhs_flat(y, control(t, y))
    sol = solve_ivp(f, (0, tmax), y0, method="BDF", rtol=rtol, atol=atol,
                    events=melt_event(m), dense_output=True, max_step=0.25)
    return sol


print("=== (1) QS error vs s, Ste=0.01, theta_b=1 ===")
for n in (20, 40):
    m = model_mod.make_model(P(n=n, stefan_number=0.01))
    sol = run(m, lambda t, y: 1.0, tmax=5000.0)
    ss = sol.y[m.idx_s]
    vmod = m.interface_velocity_flat(sol.y.T)
    vqs = m.quasi_steady_velocity(np.clip(ss, 1e-9, None), 1.0)
    rel = np.abs(vmod - vqs) / np.abs(vqs)
    for lo in (0.3, 0.2, 0.15, 0.1):
        mask = (ss > lo) & (ss < 0.95)
        print(f"  n={n} window s in ({lo},0.95): max rel err = {rel[mask].max():.3%}")

print("=== (2) P2 closed-loop (exact index-1 reduction) rate=0.04, defaults ===")
m = model_mod.make_model(P())


def p2_theta_b(m, y, sp):
    r0 = m.avg_rate_flat(y, 0.0)
    r1 = m.avg_rate_flat(y, 1.0)
    return (sp - r0) / (r1 - r0)


for sp in (0.02, 0.03, 0.04, 0.05, 0.06):
    ctl = lambda t, y: p2_theta_b(m, y, sp)
    sol = run(m, ctl, tmax=60.0)
    ts = np.linspace(0, sol.t[-1], 400)
    ys = sol.sol(ts)
    tb = np.array([p2_theta_b(m, ys[:, i], sp) for i in range(len(ts))])
    tavg = m.theta_avg_flat(ys.T)
    slope = np.polyfit(ts, tavg, 1)[0]
    melted = len(sol.t_events[0]) > 0
    print(f"  sp={sp}: melt={'%.2f' % sol.t_events[0][0] if melted else 'NO'}, "
          f"max theta_b={tb.max():.3f}, slope={slope:.5f}, theta_avg_end={tavg[-1]:.3f}")

print("=== (3) P3 feedforward premium, sp=-0.1, defaults ===")
for W in (3.2, 3.0, 2.8):
    m = model_mod.make_model(P(wall_ratio=W))
    sp_v = -0.1

    def ff(t, y):
        s = max(float(y[m.idx_s]), 1e-6)
        tb = sp_v / m.quasi_steady_velocity(s, 1.0)
        return min(max(tb, 0.0), 1.0)

    sol = run(m, ff, tmax=60.0)
    ss = sol.y[m.idx_s]
    vmod = m.interface_velocity_flat(sol.y.T)
    mask = (ss > 0.05) & (ss < 0.95)
    ratio = sp_v / vmod[mask]  # premium factor needed on theta_b
    tbff = np.array([ff(0, sol.y[:, i]) for i in range(sol.y.shape[1])])
    est_peak = np.nanmax(tbff[mask] * np.clip(ratio, 0, 10))
    print(f"  W={W}: threshold={m.feasibility_threshold():.4f}, "
          f"max premium={np.nanmax(ratio):.3f}, est peak theta_b={est_peak:.3f}, "
          f"melt={'%.2f' % sol.t_events[0][0] if len(sol.t_events[0]) else 'NO'}")
