# Calibration scratch #3: candidate parameter sweep.
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


def p2_theta_b(m, y, sp):
    r0 = m.avg_rate_flat(y, 0.0)
    r1 = m.avg_rate_flat(y, 1.0)
    return (sp - r0) / (r1 - r0)


def assess(tag, params):
    m = model_mod.make_model(params)
    thr = m.feasibility_threshold()
    qs1 = m.quasi_steady_velocity(1.0 - params.eps_front, 1.0)
    # constant full power
    sol = run(m, lambda t, y: 1.0)
    ss = sol.y[m.idx_s]
    vs = m.interface_velocity_flat(sol.y.T)
    bulk = ss >= 0.15
    bulk_peak = -vs[bulk].min() if bulk.any() else np.nan
    melt1 = sol.t_events[0][0]
    c15 = ss[np.argmax(vs < -0.15)] if (vs < -0.15).any() else None
    # P2 feasibility at several rates
    p2 = {}
    for sp in (0.03, 0.04, 0.05):
        ctl = lambda t, y: p2_theta_b(m, y, sp)
        s2 = run(m, ctl, tmax=80.0)
        ts = np.linspace(0, s2.t[-1], 300)
        tb = np.array([p2_theta_b(m, s2.sol(ts)[:, i], sp) for i in range(len(ts))])
        p2[sp] = (tb.max(), s2.t_events[0][0] if len(s2.t_events[0]) else None)
    # P3 feedforward premium
    def ff(t, y):
        s = max(float(y[m.idx_s]), 1e-6)
        return min(max(-0.1 / m.quasi_steady_velocity(s, 1.0), 0.0), 1.0)
    s3 = run(m, ff, tmax=60.0)
    ss3 = s3.y[m.idx_s]
    v3 = m.interface_velocity_flat(s3.y.T)
    mask = (ss3 > 0.05) & (ss3 < 0.95)
    prem = (-0.1 / v3[mask])
    tbff = np.array([ff(0, s3.y[:, i]) for i in range(s3.y.shape[1])])[mask]
    est_peak = np.nanmax(tbff * np.clip(prem, 0, 10))
    print(f"{tag}: thr={thr:.4f} qs(1)={qs1:.4f} melt(tb=1)={melt1:.2f} "
          f"bulk_peak={bulk_peak:.4f} s@|v|>0.15={c15}")
    print(f"    P2 max_tb/melt: " + "  ".join(f"{sp}->{v[0]:.3f}/{v[1] and round(v[1],1)}" for sp, v in p2.items()))
    print(f"    P3 ff premium max={np.nanmax(prem):.3f} est peak tb={est_peak:.3f}")


assess("A Bi=4.2 W=3.0 a=0.20", P(biot=4.2, wall_ratio=3.0, alpha_ratio=0.20))
assess("B Bi=4.0 W=3.0 a=0.18", P(biot=4.0, wall_ratio=3.0, alpha_ratio=0.18))
assess("C Bi=4.2 W=3.0 a=0.16", P(biot=4.2, wall_ratio=3.0, alpha_ratio=0.16))
assess("D Bi=4.0 W=3.0 a=0.25", P(biot=4.0, wall_ratio=3.0, alpha_ratio=0.25))
assess("E Bi=4.0 W=3.2 a=0.20", P(biot=4.0, wall_ratio=3.2, alpha_ratio=0.20))
