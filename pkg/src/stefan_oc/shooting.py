"""Optimization-based comparator: control parameterization + single shooting.

The heater trajectory is a piecewise constant or linear function of time
over uniform breakpoints; each candidate is evaluated by simulating the
melting model forward with the adaptive BDF integrator, and the node vector
is optimized by a box-constrained limited-memory quasi-Newton method with
forward finite-difference gradients (one simulation per node).  Gradient
simulations are independent, so they run as one block-batched integration.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from stefan_oc.dae import DaeSystem, EventSpec, IntegrationFailure, Trajectory, integrate_index1
from stefan_oc.model import ConfigError, ModelParams, StefanModel, make_model
from stefan_oc.ocp import (
    MinTime,
    OcpSpec,
    Regime,
    SegmentRecord,
    SolveReport,
    TrackInterfaceVelocity,
    TrackTemperatureRate,
)

__all__ = ["ControlParam", "NlpConfig", "eval_control", "objective", "solve_shooting"]

CONTROL_KINDS = ("constant", "linear")


@dataclass
class ControlParam:
    """Piecewise constant/linear heater parameterization on uniform breakpoints."""

    kind: str
    n_c: int
    nodes: np.ndarray
    horizon: float

    def __post_init__(self) -> None:
        if self.kind not in CONTROL_KINDS:
            raise ConfigError(f"kind must be one of {CONTROL_KINDS}, got {self.kind!r}")
        if self.n_c < 1:
            raise ConfigError(f"n_c must be >= 1, got {self.n_c}")
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        self.nodes = np.asarray(self.nodes, dtype=float)
        if self.nodes.shape != (self.n_nodes,):
            raise ConfigError(
                f"{self.kind} control with n_c={self.n_c} needs {self.n_nodes} nodes,"
                f" got {self.nodes.shape}"
            )

    @property
    def n_nodes(self) -> int:
        return self.n_c if self.kind == "constant" else self.n_c + 1

    @property
    def breakpoints(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_c + 1)

    def with_nodes(self, nodes: np.ndarray) -> "ControlParam":
        return ControlParam(self.kind, self.n_c, np.asarray(nodes, dtype=float), self.horizon)


def eval_control(cp: ControlParam, tau):
    """Heater value(s) at tau; tau must lie inside [0, horizon]."""
    t = np.asarray(tau, dtype=float)
    if np.any(t < -1e-12) or np.any(t > cp.horizon + 1e-12):
        raise ValueError(f"tau outside the control horizon [0, {cp.horizon}]")
    t = np.clip(t, 0.0, cp.horizon)
    if cp.kind == "linear":
        out = np.interp(t, cp.breakpoints, cp.nodes)
    else:
        width = cp.horizon / cp.n_c
        idx = np.minimum((t / width).astype(int), cp.n_c - 1)
        out = cp.nodes[idx]
    if np.ndim(tau) == 0:
        return float(out)
    return out


@dataclass
class NlpConfig:
    """Tolerances and steps for the shooting optimizer."""

    opt_tol: float = 1e-7       # projected-gradient infinity-norm target
    integ_tol: float = 1e-10    # forward-simulation local error tolerance
    quad_dtau: float = 0.05     # Riemann-sum / finite-difference step
    fd_step: float = 1e-6       # gradient forward-difference step on [0,1] nodes
    max_iter: int = 200

    def __post_init__(self) -> None:
        for name in ("opt_tol", "integ_tol", "quad_dtau", "fd_step"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be >= 1")


# --------------------------------------------------------------------------
# forward simulation under a parameterized control
# --------------------------------------------------------------------------


@dataclass
class _SimResult:
    trajectory: Trajectory
    melt_tau: Optional[float]
    t_end: float
    failed: bool = False


def _eval_controls_batch(kind, breakpoints, node_matrix, tau):
    """Control values at one time for a (m, n_nodes) node matrix."""
    if kind == "linear":
        bp = breakpoints
        idx = np.searchsorted(bp, tau, side="right") - 1
        idx = min(max(idx, 0), len(bp) - 2)
        w = (tau - bp[idx]) / (bp[idx + 1] - bp[idx])
        return node_matrix[:, idx] * (1.0 - w) + node_matrix[:, idx + 1] * w
    width = breakpoints[1] - breakpoints[0]
    idx = min(int(tau / width), node_matrix.shape[1] - 1)
    return node_matrix[:, idx]


def simulate_controls(
    model: StefanModel,
    cps: list[ControlParam],
    integ_tol: float,
) -> list[_SimResult]:
    """Integrate the melting model under several controls as one block batch.

    All controls must share kind, n_c, and horizon (gradient perturbations
    do).  Each block stops at its own melt event; results carry per-control
    dense output valid up to the individual ``t_end``.
    """
    m = len(cps)
    kind = cps[0].kind
    horizon = cps[0].horizon
    breakpoints = cps[0].breakpoints
    node_matrix = np.stack([cp.nodes for cp in cps])
    dim = model.dim
    eps = model.params.eps_front

    def residual(t, y, yp):
        Y = y.reshape(m, dim)
        Yp = yp.reshape(m, dim)
        tb = _eval_controls_batch(kind, breakpoints, node_matrix, float(np.atleast_1d(t)[0]))
        return (Yp - model.rhs_flat(Y, tb)).reshape(-1)

    def melt_event(t, y):
        return y.reshape(m, dim)[:, model.idx_s] - eps

    system = DaeSystem(
        dim=m * dim,
        residual=residual,
        is_differential=np.ones(m * dim, dtype=bool),
        vectorized=True,
        blocks=(m, dim),
        stop_events=[EventSpec(melt_event, -1, "melt")],
    )
    y0 = np.tile(model.pack(model.initial_state()), m)
    failed = False
    try:
        traj = integrate_index1(system, y0, (0.0, horizon), tol=integ_tol)
    except IntegrationFailure as exc:
        traj = exc.trajectory
        failed = True

    melts = {ev.block: ev.tau for ev in (traj.events if traj else []) if ev.name == "melt"}
    results = []
    for b in range(m):
        melt = melts.get(b)
        t_end = melt if melt is not None else (traj.t_end if traj else 0.0)
        results.append(
            _SimResult(
                trajectory=_BlockView(traj, b, dim) if traj else None,
                melt_tau=melt,
                t_end=float(t_end),
                failed=failed,
            )
        )
    return results


class _BlockView:
    """Per-control view into a block-batched trajectory."""

    def __init__(self, traj: Trajectory, block: int, dim: int):
        self._traj = traj
        self._sl = slice(block * dim, (block + 1) * dim)

    @property
    def taus(self):
        return self._traj.taus

    def sample(self, t):
        return np.asarray(self._traj.sample(t))[..., self._sl]


def _sim_single(model: StefanModel, cp: ControlParam, integ_tol: float) -> _SimResult:
    return simulate_controls(model, [cp], integ_tol)[0]


# --------------------------------------------------------------------------
# objective
# --------------------------------------------------------------------------


def _objective_value(spec: OcpSpec, model: StefanModel, sim: _SimResult, nlp: NlpConfig) -> float:
    if sim.failed or sim.trajectory is None:
        # keep the optimizer total: large, gradient-pointing-home penalty
        return 1e6
    obj = spec.objective
    if isinstance(obj, MinTime):
        if sim.melt_tau is not None:
            return float(sim.melt_tau)
        # not melted within the horizon: penalize by remaining solid radius
        s_end = float(sim.trajectory.sample(sim.t_end)[model.idx_s])
        return float(sim.t_end + 100.0 * s_end)
    dt = nlp.quad_dtau
    n_int = int(np.floor(sim.t_end / dt + 1e-9))
    if n_int < 1:
        return 1e6
    grid = dt * np.arange(n_int + 1)
    states = sim.trajectory.sample(grid)
    if isinstance(obj, TrackTemperatureRate):
        series = model.theta_avg_flat(states)
    else:
        series = states[:, model.idx_s]
    rate = np.diff(series) / dt
    dev = rate - obj.setpoint
    return float(np.sum(dev**2) * dt)


def objective(
    spec: OcpSpec,
    cp: ControlParam,
    nlp: NlpConfig,
    model: Optional[StefanModel] = None,
) -> float:
    """Single-shooting objective: simulate under the control, then measure.

    Tracking objectives are Riemann sums (step ``quad_dtau``) of the squared
    rate deviation, with rates by forward differences at the same step; the
    minimum-time objective is the melt time itself.
    """
    if model is None:
        model = make_model(spec.model)
    sim = _sim_single(model, cp, nlp.integ_tol)
    return _objective_value(spec, model, sim, nlp)


# --------------------------------------------------------------------------
# optimizer
# --------------------------------------------------------------------------


def _default_horizon(spec: OcpSpec) -> float:
    # breakpoints need a finite span; for stop-on-melt problems use a span a
    # little above the full-power melt time so late intervals stay active
    if spec.horizon is not None:
        return spec.horizon
    obj = spec.objective
    if isinstance(obj, MinTime):
        return 10.0
    if isinstance(obj, TrackTemperatureRate):
        return 10.0
    return 10.0


def solve_shooting(
    spec: OcpSpec,
    kind: str,
    n_c: int,
    nlp: Optional[NlpConfig] = None,
    *,
    model: Optional[StefanModel] = None,
) -> SolveReport:
    """Direct single shooting with box-constrained L-BFGS-B over the nodes.

    Gradients are forward finite differences (one simulation per node),
    evaluated together as one block-batched integration.  Starts from all
    nodes at the guess value; terminates at projected-gradient infinity norm
    <= opt_tol or at max_iter (then flagged non-converged).
    """
    nlp = nlp or NlpConfig()
    if model is None:
        model = make_model(spec.model)
    wall_start = time.perf_counter()
    horizon = _default_horizon(spec)
    proto = ControlParam(kind, n_c, np.full(
        n_c if kind == "constant" else n_c + 1, spec.theta_b_guess), horizon)
    lo, hi = spec.control_bounds
    n_nodes = proto.n_nodes

    sim_count = {"n": 0}
    cache: dict[bytes, tuple[float, np.ndarray]] = {}

    def fg(x: np.ndarray) -> tuple[float, np.ndarray]:
        key = x.tobytes()
        if key in cache:
            return cache[key]
        cps = [proto.with_nodes(x)]
        for i in range(n_nodes):
            xi = x.copy()
            # forward step, flipped at the upper bound to stay feasible
            step = nlp.fd_step if xi[i] + nlp.fd_step <= hi else -nlp.fd_step
            xi[i] += step
            cps.append(proto.with_nodes(xi))
        sims = simulate_controls(model, cps, nlp.integ_tol)
        sim_count["n"] += len(cps)
        f0 = _objective_value(spec, model, sims[0], nlp)
        grad = np.empty(n_nodes)
        for i in range(n_nodes):
            step = cps[i + 1].nodes[i] - x[i]
            grad[i] = (_objective_value(spec, model, sims[i + 1], nlp) - f0) / step
        cache[key] = (f0, grad)
        if len(cache) > 400:
            cache.pop(next(iter(cache)))
        return f0, grad

    iterate_values: list[float] = []

    def track(xk):
        key = xk.tobytes()
        if key in cache:
            iterate_values.append(cache[key][0])

    x0 = np.full(n_nodes, spec.theta_b_guess)
    res = minimize(
        lambda x: fg(x)[0],
        x0,
        jac=lambda x: fg(x)[1],
        method="L-BFGS-B",
        bounds=[(lo, hi)] * n_nodes,
        callback=track,
        options={
            "maxiter": nlp.max_iter,
            "gtol": nlp.opt_tol,
            "ftol": 1e-14,
            "maxls": 12,
            "maxfun": 50 * nlp.max_iter * max(n_nodes, 1),
        },
    )
    x_opt = np.clip(res.x, lo, hi)
    converged = bool(res.status == 0)

    cp_opt = proto.with_nodes(x_opt)
    final = _sim_single(model, cp_opt, nlp.integ_tol)
    sim_count["n"] += 1
    f_final = _objective_value(spec, model, final, nlp)
    wall = time.perf_counter() - wall_start

    traj = _material_trajectory(model, cp_opt, final)
    report = SolveReport(
        method="shooting",
        spec=spec,
        model=model,
        segments=[SegmentRecord(Regime("tracking"), traj, "bdf")],
        switch_events=[],
        wall_time=wall,
        stats={
            "iterations": int(res.nit),
            "n_sims": sim_count["n"],
            "objective": f_final,
            "objective_trace": iterate_values,
            "pg_norm": float(np.max(np.abs(res.jac))) if res.jac is not None else None,
            "message": str(res.message),
        },
        flags={"converged": converged, "started_at_bound": False},
        control=cp_opt,
    )
    return report


def _material_trajectory(model: StefanModel, cp: ControlParam, sim: _SimResult) -> Trajectory:
    """Full-state trajectory (with the heater column) for reporting."""
    base = sim.trajectory
    taus = np.asarray(base.taus, dtype=float)
    keep = taus <= sim.t_end + 1e-12
    taus = taus[keep]
    if taus[-1] < sim.t_end - 1e-12:
        taus = np.append(taus, sim.t_end)
    states = base.sample(taus)
    tb = np.array([eval_control(cp, min(t, cp.horizon)) for t in taus])
    values = np.column_stack([states, tb])
    events = []
    if sim.melt_tau is not None:
        from stefan_oc.dae import Event

        events = [Event(float(sim.melt_tau), "melt", -1)]

    def interp(t):
        st = base.sample(np.clip(t, taus[0], taus[-1]))
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        tbv = np.array([eval_control(cp, float(min(max(tt, 0.0), cp.horizon))) for tt in t_arr])
        out = np.column_stack([np.atleast_2d(st), tbv])
        return out[0] if np.ndim(t) == 0 else out

    return Trajectory(taus, values, events, interp, {})
