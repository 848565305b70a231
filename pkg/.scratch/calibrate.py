# Calibration scratch (not shipped): constant-power runs via scipy to pick defaults.
import importlib.util
import sys

import numpy as np
from scipy.integrate import solve_ivp

spec = importlib.util.spec_from_file_location("model", "/root/pkg/src/stefan_oc/model.py")
model_mod = importlib.util.module_from_spec(spec)
sys.modules["model"] = model_mod
spec.loader.exec_module(model_mod)


def run_constant(params, theta_b, tmax=200.0, rtol=1e-9, atol=1e-11):
    m = model_mod.make_model(params)
    y0 = m.pack(m.initial_state())

    def f(t, y):
        return m.rhs_flat(y, theta_b)

    def melt(t, y):
        return y[m.idx_s] - params.eps_front

    melt.terminal = True
    melt.direction = -1
    sol = solve_ivp(f, (0, tmax), y0, method="BDF", rtol=rtol, atol=atol,
                    events=melt, dense_output=True, max_step=0.25)
    return m, sol


def report(params, theta_b=1.0):
    m, sol = run_constant(params, theta_b)
    ts = sol.t
    vs = np.array([m.interface_velocity_flat(sol.y[:, i]) for i in range(len(ts))])
    ss = sol.y[m.idx_s]
    melt_t = sol.t_events[0][0] if len(sol.t_events[0]) else None
    peak = np.min(vs)  # most negative
    # velocity at a few s values
    qs = m.quasi_steady_velocity
    print(f"theta_b={theta_b}: melt_t={melt_t}, peak v={peak:.4f} at s={ss[np.argmin(vs)]:.3f}")
    print(f"  threshold(qs)={m.feasibility_threshold():.4f}  qs(s=1-eps)={qs(1-params.eps_front,1.0):.4f}")
    # where does |v| exceed thresholds
    for lim in (0.13, 0.15):
        idx = np.where(vs < -lim)[0]
        if len(idx):
            print(f"  |v|>{lim} first at t={ts[idx[0]]:.3f}, s={ss[idx[0]]:.4f} (fraction of run {ts[idx[0]]/melt_t:.2f})")
        else:
            print(f"  |v| never exceeds {lim}")
    # max temps
    print(f"  max theta2={sol.y[m.sl_theta2].max():.4f}, min={sol.y[m.sl_theta2].min():.2e}, max theta1={np.abs(sol.y[m.sl_theta1]).max():.2e}")
    return m, sol, vs


P = model_mod.ModelParams
print("=== defaults Ste=0.4 a=0.12 k=0.25 Bi=4 W=3.2")
m, sol, vs = report(P())

print("=== quasi-steady check Ste=0.01")
m2, sol2 = run_constant(P(stefan_number=0.01), 1.0, tmax=2000.0)
ts = sol2.t
ss = sol2.y[m2.idx_s]
vmod = np.array([m2.interface_velocity_flat(sol2.y[:, i]) for i in range(len(ts))])
vqs = m2.quasi_steady_velocity(np.clip(ss, 1e-6, None), 1.0)
mask = (ss < 0.95) & (ss > 0.05)
rel = np.abs(vmod[mask] - vqs[mask]) / np.abs(vqs[mask])
print(f"melt_t={sol2.t_events[0][0]:.1f}  QS rel err: max={rel.max():.3%} (s in 0.05..0.95)")
mask2 = (ss < 0.98) & (ss > 0.02)
rel2 = np.abs(vmod[mask2] - vqs[mask2]) / np.abs(vqs[mask2])
print(f"QS rel err: max={rel2.max():.3%} (s in 0.02..0.98)")
