# Calibration scratch #4: finalize candidate B, freeze reference numbers.
import importlib.util
import sys

import numpy as np
from scipy.integrate import solve_ivp

spec = importlib.util.spec_from_file_location("model", "/root/pkg/src/stefan_oc/model.py")
model_mod = importlib.util.module_from_spec(spec)
sys.modules["model"] = model_mod
spec.loader.exec_module(model_mod)
P = model_mod.ModelParams

CAND = dict(biot=4.0, wall_ratio=3.0, alpha_ratio=0.18)


def melt_event(m):
    def ev(t, y):
        return y[m.idx_s] - m.params.eps_front
    ev.terminal = True
    ev.direction = -1
    return ev


def run(m, control, tmax=500.0, rtol=1e-10, atol=1e-12):
    y0 = m.pack(m.initial_state())
    f = lambda t, y: m.rhs_flat(y, control(t, y))
    return solve_ivp(f, (0, tmax), y0, method="BDF", rtol=rtol, atol=atol,
                     events=melt_event(m), dense_output=True, max_step=0.2)


m = model_mod.make_model(P(**CAND))
sol = run(m, lambda t, y: 1.0)
ts = np.linspace(0, sol.t[-1], 4000)
ys = sol.sol(ts)
vs = m.interface_velocity_flat(ys.T)
ss = ys[m.idx_s]
melt1 = sol.t_events[0][0]
# first local max of |v| (the visible hump after warm-up)
sp_v = -vs
imax = None
for i in range(2, len(sp_v) - 2):
    if sp_v[i] >= sp_v[i - 1] and sp_v[i] >= sp_v[i + 1] and sp_v[i] > 0.05:
        imax = i
        break
print(f"melt(tb=1) = {melt1:.4f}")
if imax:
    print(f"first local max |v| = {sp_v[imax]:.4f} at tau={ts[imax]:.3f}, s={ss[imax]:.3f}")
print(f"max |v| over s>=0.5: {sp_v[ss >= 0.5].max():.4f}")
print(f"max |v| over s>=0.15: {sp_v[ss >= 0.15].max():.4f}")
print(f"max |v| whole run: {sp_v.max():.4f}")
print(f"threshold (1e-3 scan) = {m.feasibility_threshold():.10f}")
print(f"qs(0.5, 1.0) = {m.quasi_steady_velocity(0.5, 1.0):.12f}")
print(f"qs(1-eps, 1.0) = {m.quasi_steady_velocity(1 - 1e-3, 1.0):.12f}")

# grid convergence: melt time at n=20 vs n=40
m40 = model_mod.make_model(P(n=40, **CAND))
sol40 = run(m40, lambda t, y: 1.0)
melt40 = sol40.t_events[0][0]
print(f"melt n=20: {melt1:.5f}, n=40: {melt40:.5f}, rel diff = {abs(melt40-melt1)/melt1:.4%}")

# QS window with candidate B
mq = model_mod.make_model(P(stefan_number=0.01, **CAND))
solq = run(mq, lambda t, y: 1.0, tmax=5000.0, rtol=1e-9, atol=1e-11)
ssq = solq.y[mq.idx_s]
vmod = mq.interface_velocity_flat(solq.y.T)
vqs = mq.quasi_steady_velocity(np.clip(ssq, 1e-9, None), 1.0)
rel = np.abs(vmod - vqs) / np.abs(vqs)
for window in ((0.25, 0.95), (0.2, 0.95), (0.25, 0.9)):
    mask = (ssq > window[0]) & (ssq < window[1])
    print(f"QS rel err window {window}: {rel[mask].max():.3%}")

# P2 closed-loop slope and theta_b monotonicity at 0.04
def p2_theta_b(y, sp):
    r0 = m.avg_rate_flat(y, 0.0)
    r1 = m.avg_rate_flat(y, 1.0)
    return (sp - r0) / (r1 - r0)

s2 = run(m, lambda t, y: p2_theta_b(y, 0.04), tmax=60.0)
t2 = np.linspace(0, s2.t[-1], 500)
y2 = s2.sol(t2)
tb2 = np.array([p2_theta_b(y2[:, i], 0.04) for i in range(len(t2))])
tavg = m.theta_avg_flat(y2.T)
slope = np.polyfit(t2, tavg, 1)[0]
print(f"P2@0.04: melt={s2.t_events[0][0]:.3f} slope={slope:.6f} tb range=({tb2.min():.4f},{tb2.max():.4f}) "
      f"monotone={bool(np.all(np.diff(tb2) > -1e-9))}")
# thawing times on the constant grid (for the P1 oracle)
for tb in (0.2, 0.4, 0.6, 0.8, 1.0):
    sg = run(m, lambda t, y: tb, tmax=300.0, rtol=1e-9, atol=1e-11)
    print(f"  melt @ theta_b={tb}: {sg.t_events[0][0]:.3f}")
