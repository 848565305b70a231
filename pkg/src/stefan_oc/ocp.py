"""Optimal-control problems and the simulation-based solution route.

The route: replace the objective with one algebraic equation, promote the
heater temperature from input to algebraic state, then simulate the
resulting DAE system.  Index-1 systems go to the adaptive BDF integrator,
higher-index systems to Radau collocation.  When the heater hits a bound
the appended equation is swapped for the bound equation and the simulation
restarts from the switch point (hybrid simulation-switching); it switches
back once the tracking equation again has a root strictly inside the
bounds.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from stefan_oc.dae import (
    CollocationConfig,
    DaeSystem,
    EventSpec,
    InfeasibleInitError,
    Trajectory,
    collocate,
    consistent_init,
    integrate_index1,
)
from stefan_oc.model import ConfigError, ModelParams, StefanModel, make_model

__all__ = [
    "MinTime",
    "TrackTemperatureRate",
    "TrackInterfaceVelocity",
    "OcpSpec",
    "Regime",
    "ReformulatedDae",
    "SwitchEvent",
    "SegmentRecord",
    "SolveReport",
    "ChatteringError",
    "reformulate",
    "solve_simulation_based",
    "detect_and_switch",
    "thawing_time",
    "objective_from_dict",
]

TRACKING = "tracking"
BOUND = "bound"
SWITCH_MARGIN = 1e-6
DEFAULT_TAU_CAP = 100.0
MAX_SWITCHES = 50


class ChatteringError(RuntimeError):
    """More switch events than the chattering guard allows."""


@dataclass(frozen=True)
class MinTime:
    kind: str = field(default="min_time", init=False)


@dataclass(frozen=True)
class TrackTemperatureRate:
    setpoint: float
    kind: str = field(default="track_temperature_rate", init=False)


@dataclass(frozen=True)
class TrackInterfaceVelocity:
    setpoint: float
    kind: str = field(default="track_interface_velocity", init=False)


Objective = Union[MinTime, TrackTemperatureRate, TrackInterfaceVelocity]


def objective_from_dict(data: dict) -> Objective:
    if not isinstance(data, dict) or "kind" not in data:
        raise ConfigError("objective must be an object with a 'kind' field")
    kind = data["kind"]
    if kind == "min_time":
        return MinTime()
    if kind == "track_temperature_rate":
        return TrackTemperatureRate(float(data["setpoint"]))
    if kind == "track_interface_velocity":
        return TrackInterfaceVelocity(float(data["setpoint"]))
    raise ConfigError(f"unknown objective kind {kind!r}")


@dataclass
class OcpSpec:
    """One heater-temperature optimal-control problem instance."""

    objective: Objective
    model: ModelParams = field(default_factory=ModelParams)
    control_bounds: tuple[float, float] = (0.0, 1.0)
    horizon: Optional[float] = None  # None: run until full melt (capped)
    theta_b_guess: float = 0.5

    def __post_init__(self) -> None:
        lo, hi = self.control_bounds
        if not lo < hi:
            raise ConfigError(f"control_bounds must be ordered, got {self.control_bounds}")
        if hasattr(self.objective, "setpoint") and not np.isfinite(self.objective.setpoint):
            raise ConfigError("objective setpoint must be finite")
        if self.horizon is not None and not self.horizon > 0:
            raise ConfigError(f"horizon must be positive, got {self.horizon}")

    @classmethod
    def from_dict(cls, data: dict) -> "OcpSpec":
        known = {"objective", "model", "control_bounds", "horizon", "theta_b_guess"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown problem field(s): {', '.join(unknown)}")
        objective = objective_from_dict(data["objective"])
        model = data.get("model", ModelParams())
        if isinstance(model, dict):
            model = ModelParams.from_dict(model)
        horizon = data.get("horizon")
        if horizon in ("melt", None):
            horizon = None
        else:
            horizon = float(horizon)
        return cls(
            objective=objective,
            model=model,
            control_bounds=tuple(data.get("control_bounds", (0.0, 1.0))),
            horizon=horizon,
            theta_b_guess=float(data.get("theta_b_guess", 0.5)),
        )

    @classmethod
    def from_json(cls, text: str) -> "OcpSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Regime:
    kind: str  # "tracking" or "bound"
    bound: Optional[str] = None  # "lo" / "hi" when kind == "bound"

    def label(self) -> str:
        return self.kind if self.kind == TRACKING else f"{self.kind}_{self.bound}"


@dataclass
class SwitchEvent:
    tau: float
    from_regime: Regime
    to_regime: Regime
    bound: Optional[str]


class ReformulatedDae:
    """Model equations plus one appended algebraic equation.

    State layout: [theta1 (n), theta2 (n), s, theta_b]; theta_b is an
    algebraic variable in every regime.  ``system`` is the tracking-regime
    system; ``system_for`` builds the bound-regime variants used by the
    switching logic.
    """

    def __init__(self, spec: OcpSpec, model: StefanModel):
        self.spec = spec
        self.model = model
        n = model.n
        self.dim = 2 * n + 2
        self.idx_s = model.idx_s
        self.idx_tb = self.dim - 1
        self.active_regime = Regime(TRACKING)
        self.declared_index = self._declared_index()
        lo = np.full(self.dim, -np.inf)
        hi = np.full(self.dim, np.inf)
        lo[self.idx_tb], hi[self.idx_tb] = spec.control_bounds
        self.bounds = (lo, hi)
        self._systems: dict[str, DaeSystem] = {}
        self.system = self.system_for(self.active_regime)

    def _declared_index(self) -> int:
        obj = self.spec.objective
        if isinstance(obj, MinTime):
            return 1
        if isinstance(obj, TrackTemperatureRate):
            return 1 if self.model.params.avg_include_wall else 2
        return self.model.n

    # ------------------------------------------------------------- residuals

    def _tracking_row(self, Y: np.ndarray, deriv: np.ndarray) -> np.ndarray:
        """Residual of the appended algebraic equation on a state batch."""
        obj = self.spec.objective
        if isinstance(obj, MinTime):
            return Y[:, self.idx_tb] - self.spec.control_bounds[1]
        if isinstance(obj, TrackTemperatureRate):
            d2 = deriv[:, self.model.sl_theta2]
            sel = d2 if self.model.params.avg_include_wall else d2[:, :-1]
            return sel.mean(axis=1) - obj.setpoint
        return deriv[:, self.idx_s] - obj.setpoint

    def _bound_row(self, Y: np.ndarray, which: str) -> np.ndarray:
        value = self.spec.control_bounds[0 if which == "lo" else 1]
        return Y[:, self.idx_tb] - value

    def _make_residual(self, regime: Regime):
        model = self.model
        n_state = 2 * model.n + 1

        def residual(t, y, yp):
            Y = np.atleast_2d(np.asarray(y, dtype=float))
            Yp = np.atleast_2d(np.asarray(yp, dtype=float))
            deriv = model.rhs_flat(Y[:, :n_state], Y[:, self.idx_tb])
            res = np.empty_like(Y)
            res[:, :n_state] = Yp[:, :n_state] - deriv
            if regime.kind == TRACKING:
                res[:, self.idx_tb] = self._tracking_row(Y, deriv)
            else:
                res[:, self.idx_tb] = self._bound_row(Y, regime.bound)
            return res[0] if np.ndim(y) == 1 else res

        return residual

    def system_for(self, regime: Regime) -> DaeSystem:
        key = regime.label()
        if key in self._systems:
            return self._systems[key]
        is_diff = np.ones(self.dim, dtype=bool)
        is_diff[self.idx_tb] = False
        index = self.declared_index if regime.kind == TRACKING else 1
        init_residual = None
        if regime.kind == TRACKING and isinstance(self.spec.objective, TrackInterfaceVelocity):
            init_residual = self._velocity_init_residual
        sys = DaeSystem(
            dim=self.dim,
            residual=self._make_residual(regime),
            is_differential=is_diff,
            bounds=self.bounds,
            index_hint=index,
            vectorized=True,
            init_residual=init_residual,
        )
        self._systems[key] = sys
        return sys

    # --------------------------------------------------------- initialization

    def _velocity_init_residual(self, y: np.ndarray) -> np.ndarray:
        # the appended row has no direct theta_b sensitivity (high index);
        # initialize through the quasi-steady heater-to-velocity map instead
        s0 = float(y[self.idx_s])
        v = self.model.quasi_steady_velocity(s0, float(y[self.idx_tb]))
        return np.array([v - self.spec.objective.setpoint])

    def initial_full_state(self) -> np.ndarray:
        y = np.zeros(self.dim)
        y[: 2 * self.model.n + 1] = self.model.pack(self.model.initial_state())
        y[self.idx_tb] = self.spec.theta_b_guess
        return y

    def consistent_start(self) -> np.ndarray:
        """Initial state with theta_b solved from the tracking equation.

        Raises InfeasibleInitError (with the clipped candidate) when the
        consistent heater value lies outside the control bounds.
        """
        y0 = self.initial_full_state()
        obj = self.spec.objective
        if isinstance(obj, MinTime):
            y0[self.idx_tb] = self.spec.control_bounds[1]
            return y0
        free = np.zeros(self.dim, dtype=bool)
        free[self.idx_tb] = True
        return consistent_init(self.system, y0, free)

    # ------------------------------------------------------- switching logic

    def tracking_root(self, y: np.ndarray) -> Optional[float]:
        """Heater value that would satisfy the tracking equation at state y.

        For the temperature-rate objective the appended row is linear in
        theta_b and is solved exactly.  For the velocity objective the row
        has no instantaneous theta_b sensitivity; the root is estimated from
        the realized interface velocity (proportional response) or, when the
        current heater value is ~0, the quasi-steady map.
        """
        obj = self.spec.objective
        if isinstance(obj, MinTime):
            return None
        n_state = 2 * self.model.n + 1
        state = np.atleast_2d(y[:n_state])
        if isinstance(obj, TrackTemperatureRate):
            sel = slice(None) if self.model.params.avg_include_wall else slice(0, -1)
            r0 = float(self.model.rhs_flat(state, 0.0)[0, self.model.sl_theta2][sel].mean())
            r1 = float(self.model.rhs_flat(state, 1.0)[0, self.model.sl_theta2][sel].mean())
            if r1 == r0:
                return None
            return (obj.setpoint - r0) / (r1 - r0)
        tb = float(y[self.idx_tb])
        v = float(self.model.interface_velocity_flat(y[:n_state]))
        if tb > 0.1 and v < -1e-14:
            return tb * obj.setpoint / v
        s0 = float(y[self.idx_s])
        unit = self.model.quasi_steady_velocity(s0, 1.0)
        return obj.setpoint / unit

    def stop_events(self, regime: Regime) -> list[EventSpec]:
        eps = self.model.params.eps_front
        idx_s, idx_tb = self.idx_s, self.idx_tb
        lo, hi = self.spec.control_bounds
        events = [EventSpec(lambda t, y: y[..., idx_s] - eps, -1, "melt")]
        obj = self.spec.objective
        if isinstance(obj, MinTime):
            return events
        if regime.kind == TRACKING:
            events.append(EventSpec(lambda t, y: y[..., idx_tb] - hi, +1, "bound_hi"))
            events.append(EventSpec(lambda t, y: y[..., idx_tb] - lo, -1, "bound_lo"))
            return events
        # bound regime: fire when the tracking root re-enters the open interval
        if isinstance(obj, TrackInterfaceVelocity) and regime.bound == "hi":
            # root < hi - margin  <=>  realized velocity below sp/(1 - margin)
            thresh = obj.setpoint / (1.0 - SWITCH_MARGIN) * hi

            def vel_gap(t, y):
                return float(self.model.interface_velocity_flat(y[: 2 * self.model.n + 1]) - thresh)

            events.append(EventSpec(vel_gap, -1, "switch_back"))
            return events

        target = (hi - SWITCH_MARGIN) if regime.bound == "hi" else (lo + SWITCH_MARGIN)
        direction = -1 if regime.bound == "hi" else +1

        def root_gap(t, y):
            root = self.tracking_root(np.asarray(y, dtype=float))
            if root is None:
                return 1.0
            return float(root - target)

        events.append(EventSpec(root_gap, direction, "switch_back"))
        return events


def reformulate(spec: OcpSpec, model: Optional[StefanModel] = None) -> ReformulatedDae:
    """Build the reformulated DAE system for a problem specification."""
    if model is None:
        model = make_model(spec.model)
    return ReformulatedDae(spec, model)


def detect_and_switch(
    current: ReformulatedDae, trajectory_tail: Trajectory
) -> Optional[tuple[SwitchEvent, ReformulatedDae]]:
    """Inspect a finished simulation segment for a regime change.

    Returns the switch event and the reformulation with the next active
    regime, or None when the segment ended by melt/horizon.
    """
    hit = next((e for e in trajectory_tail.events if e.name.startswith("bound_") or e.name == "switch_back"), None)
    if hit is None:
        return None
    regime = current.active_regime
    if hit.name == "switch_back":
        nxt = Regime(TRACKING)
        bound = regime.bound
    else:
        bound = "hi" if hit.name == "bound_hi" else "lo"
        nxt = Regime(BOUND, bound)
    event = SwitchEvent(hit.tau, regime, nxt, bound)
    current.active_regime = nxt
    return event, current


@dataclass
class SegmentRecord:
    regime: Regime
    trajectory: Trajectory
    backend: str


class SolveReport:
    """Common result for both solution methods.

    ``states`` rows are [theta1 nodes, theta2 nodes, s, theta_b] at
    ``taus``; dense resampling goes through the per-segment interpolants.
    """

    def __init__(self, method, spec, model, segments, switch_events, wall_time,
                 stats=None, flags=None, control=None):
        self.method = method
        self.spec = spec
        self.model = model
        self.segments: list[SegmentRecord] = segments
        self.switch_events: list[SwitchEvent] = switch_events
        self.wall_time = wall_time
        self.stats = stats or {}
        self.flags = flags or {}
        self.control = control
        taus, states = [], []
        last_t = -np.inf
        for segrec in segments:
            traj = segrec.trajectory
            t = np.asarray(traj.taus)
            keep = t > last_t + 1e-13
            if not keep.any():
                continue
            taus.append(t[keep])
            states.append(traj.values[keep])
            last_t = float(taus[-1][-1])
        self.taus = np.concatenate(taus)
        self.states = np.vstack(states)

    # ----------------------------------------------------------- resampling

    @property
    def t_start(self) -> float:
        return float(self.taus[0])

    @property
    def t_end(self) -> float:
        return float(self.taus[-1])

    def state_at(self, t) -> np.ndarray:
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        bounds = [seg.trajectory.t_start for seg in self.segments]
        idx = np.clip(np.searchsorted(bounds, t_arr, side="right") - 1, 0, len(bounds) - 1)
        out = np.empty((len(t_arr), self.states.shape[1]))
        for seg_i in np.unique(idx):
            mask = idx == seg_i
            traj = self.segments[seg_i].trajectory
            tt = np.clip(t_arr[mask], traj.t_start, traj.t_end)
            out[mask] = traj.sample(tt)
        if np.ndim(t) == 0:
            return out[0]
        return out

    def theta_b_at(self, t) -> np.ndarray:
        return self.state_at(t)[..., -1]

    def s_at(self, t) -> np.ndarray:
        return self.state_at(t)[..., self.model.idx_s]

    def theta_avg_at(self, t) -> np.ndarray:
        st = self.state_at(t)
        return self.model.theta_avg_flat(st[..., : 2 * self.model.n + 1])

    def ds_dtau_at(self, t) -> np.ndarray:
        st = self.state_at(t)
        return self.model.interface_velocity_flat(st[..., : 2 * self.model.n + 1])

    def dtheta_avg_dtau_at(self, t) -> np.ndarray:
        st = np.atleast_2d(self.state_at(t))
        n_state = 2 * self.model.n + 1
        d = self.model.rhs_flat(st[:, :n_state], st[:, -1])
        d2 = d[:, self.model.sl_theta2]
        sel = d2 if self.model.params.avg_include_wall else d2[:, :-1]
        out = sel.mean(axis=1)
        if np.ndim(t) == 0:
            return float(out[0])
        return out

    def regime_at(self, t) -> list[str]:
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        bounds = [seg.trajectory.t_start for seg in self.segments]
        idx = np.clip(np.searchsorted(bounds, t_arr, side="right") - 1, 0, len(bounds) - 1)
        return [self.segments[i].regime.label() for i in idx]

    @property
    def melt_tau(self) -> Optional[float]:
        for seg in reversed(self.segments):
            for ev in seg.trajectory.events:
                if ev.name == "melt":
                    return float(ev.tau)
        return None


def thawing_time(report) -> Optional[float]:
    """Time at which the interface first reaches the regularized stop radius."""
    if isinstance(report, Trajectory):
        for ev in report.events:
            if ev.name == "melt":
                return float(ev.tau)
        return None
    return report.melt_tau


def solve_simulation_based(
    spec: OcpSpec,
    colloc: Optional[CollocationConfig] = None,
    *,
    backend: str = "auto",
    integ_tol: float = 1e-10,
    tau_cap: float = DEFAULT_TAU_CAP,
    model: Optional[StefanModel] = None,
) -> SolveReport:
    """Solve an optimal-control problem by DAE reformulation and simulation.

    No optimization solver is involved.  ``backend`` selects the integrator:
    "auto" dispatches on the declared index (1 -> BDF, higher -> collocation);
    "bdf" / "collocation" force one backend for every segment.
    """
    if backend not in ("auto", "bdf", "collocation"):
        raise ConfigError(f"unknown backend {backend!r}")
    wall_start = time.perf_counter()
    if model is None:
        model = make_model(spec.model)
    ref = reformulate(spec, model)
    flags = {"started_at_bound": False, "converged": True}
    switch_events: list[SwitchEvent] = []
    segments: list[SegmentRecord] = []

    regime = Regime(TRACKING)
    try:
        y = ref.consistent_start()
    except InfeasibleInitError as exc:
        y = np.asarray(exc.candidate, dtype=float)
        regime = Regime(BOUND, exc.bound)
        ref.active_regime = regime
        flags["started_at_bound"] = True
        switch_events.append(SwitchEvent(0.0, Regime(TRACKING), regime, exc.bound))

    horizon = spec.horizon if spec.horizon is not None else tau_cap
    if colloc is None:
        colloc = CollocationConfig(d_tau=0.12, nodes=5)

    t_cur = 0.0
    stats = {"segments": [], "declared_index": ref.declared_index}
    while True:
        if len(switch_events) > MAX_SWITCHES:
            raise ChatteringError(
                f"{len(switch_events)} regime switches (> {MAX_SWITCHES}); "
                f"last at tau={switch_events[-1].tau:.6g}"
            )
        sysR = ref.system_for(regime)
        sysR = replace_events(sysR, ref.stop_events(regime))
        index = ref.declared_index if regime.kind == TRACKING else 1
        use = backend if backend != "auto" else ("bdf" if index <= 1 else "collocation")
        if use == "bdf":
            traj = integrate_index1(sysR, y, (t_cur, horizon), tol=integ_tol)
        else:
            traj = collocate(sysR, y, (t_cur, horizon), colloc)
        segments.append(SegmentRecord(regime, traj, use))
        stats["segments"].append(
            {"regime": regime.label(), "backend": use, **traj.stats}
        )

        switch = detect_and_switch(ref, traj)
        if switch is None:
            break
        event, ref = switch
        switch_events.append(event)
        t_cur = event.tau
        y = np.asarray(traj.sample(event.tau), dtype=float)
        regime = event.to_regime
        lo, hi = spec.control_bounds
        if regime.kind == BOUND:
            y[ref.idx_tb] = hi if regime.bound == "hi" else lo
        else:
            # re-enter tracking just inside the bound it detached from
            y[ref.idx_tb] = (hi - SWITCH_MARGIN) if event.bound == "hi" else (lo + SWITCH_MARGIN)
            if isinstance(spec.objective, TrackTemperatureRate):
                free = np.zeros(ref.dim, dtype=bool)
                free[ref.idx_tb] = True
                try:
                    y = consistent_init(ref.system_for(regime), y, free)
                except InfeasibleInitError:
                    pass
        if t_cur >= horizon - 1e-12:
            break

    wall = time.perf_counter() - wall_start
    report = SolveReport(
        method="sim",
        spec=spec,
        model=model,
        segments=segments,
        switch_events=switch_events,
        wall_time=wall,
        stats=stats,
        flags=flags,
    )
    return report


def replace_events(system: DaeSystem, events: list[EventSpec]) -> DaeSystem:
    """Copy of the system with the given stop events."""
    return DaeSystem(
        dim=system.dim,
        residual=system.residual,
        is_differential=system.is_differential,
        bounds=system.bounds,
        index_hint=system.index_hint,
        stop_events=events,
        vectorized=system.vectorized,
        blocks=system.blocks,
        init_residual=system.init_residual,
    )
