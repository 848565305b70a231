"""Dimensionless two-phase cylindrical melting model on front-fixed grids.

A solid core occupies radius [0, s] and a liquid annulus [s, 1]; the heater
acts on the outer wall through a lumped Robin condition. Each phase is mapped
onto a fixed unit interval (u = r/s for the solid, v = (r-s)/(1-s) for the
liquid) so the moving interface enters the equations only as a coefficient.
Temperatures are scaled so 0 is the melting point and 1 the heater ceiling;
the interface position s runs from 1 (all solid) down to 0 (fully melted).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, fields as _dc_fields

import numpy as np

try:  # optional compiled kernel; the numpy path is the reference implementation
    if os.environ.get("STEFAN_OC_NO_NUMBA"):
        raise ImportError
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised via STEFAN_OC_NO_NUMBA
    _HAVE_NUMBA = False

__all__ = [
    "ConfigError",
    "FrontRangeError",
    "ModelParams",
    "StefanState",
    "StateDerivative",
    "StefanModel",
    "make_model",
    "rhs",
    "average_temperature",
    "quasi_steady_velocity",
    "feasible_velocity_bound",
]


class ConfigError(ValueError):
    """Invalid configuration value; the message names the offending field."""


class FrontRangeError(ValueError):
    """Interface position outside the admissible range."""


@dataclass(frozen=True)
class ModelParams:
    """Dimensionless groups and grid resolution defining one model instance.

    The defaults are the shipped reference parameter set, chosen so that a
    constant full-power run has a peak interface speed magnitude in the
    0.10-0.13 band (see tests for the frozen calibration values).
    """

    n: int = 20                   # grid intervals per phase; n stored nodes each
    stefan_number: float = 0.4    # sensible heat of the solid scale over latent heat
    alpha_ratio: float = 0.18     # liquid-to-solid thermal diffusivity
    k_ratio: float = 0.25         # liquid-to-solid conductivity
    biot: float = 4.0             # outer-wall film number
    wall_ratio: float = 3.1       # wall conductance term in the Robin closure
    eps_front: float = 1e-3       # interface regularization thickness
    theta_max: float = 1.0        # normalized heater ceiling
    avg_include_wall: bool = True    # include the wall node in the liquid average
    avg_area_weighted: bool = False  # weight the average by the cross-section area element

    def __post_init__(self) -> None:
        if not isinstance(self.n, int) or isinstance(self.n, bool):
            raise ConfigError(f"n must be an integer, got {self.n!r}")
        if self.n < 3:
            raise ConfigError(f"n must be >= 3, got {self.n}")
        for name in ("stefan_number", "alpha_ratio", "k_ratio", "biot", "wall_ratio"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be a positive finite number, got {value!r}")
        if not (0.0 < self.eps_front < 0.05):
            raise ConfigError(f"eps_front must lie in (0, 0.05), got {self.eps_front!r}")
        if not (isinstance(self.theta_max, (int, float)) and self.theta_max > 0):
            raise ConfigError(f"theta_max must be positive, got {self.theta_max!r}")
        for name in ("avg_include_wall", "avg_area_weighted"):
            if not isinstance(getattr(self, name), bool):
                raise ConfigError(f"{name} must be a boolean, got {getattr(self, name)!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "ModelParams":
        """Build params from a mapping; unknown fields are rejected."""
        known = {f.name for f in _dc_fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown model field(s): {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "ModelParams":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ConfigError("model parameters must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in _dc_fields(self)}


@dataclass
class StefanState:
    """Stored node temperatures and interface position.

    theta1 holds the n solid values on u = 0, 1/n, ..., (n-1)/n and theta2
    the n liquid values on v = 1/n, ..., 1.  The interface closure
    theta1(u=1) = theta2(v=0) = 0 is implicit: pinned nodes are not stored.
    """

    theta1: np.ndarray
    theta2: np.ndarray
    s: float


@dataclass
class StateDerivative:
    """Time derivatives matching the StefanState layout."""

    dtheta1: np.ndarray
    dtheta2: np.ndarray
    ds: float


if _HAVE_NUMBA:

    @_njit(cache=True)
    def _rhs_kernel(Y, TB, out, n, h, ste, k_ratio, a, heff):  # pragma: no cover - compiled
        m = Y.shape[0]
        for b in range(m):
            th1 = Y[b, :n]
            th2 = Y[b, n : 2 * n]
            s = Y[b, 2 * n]
            oms = 1.0 - s
            tb = TB[b]
            gs = (th1[n - 2] - 4.0 * th1[n - 1]) / (2.0 * h)
            gl = (4.0 * th2[0] - th2[1]) / (2.0 * h)
            ds = ste * (gs / s - k_ratio * gl / oms)
            out[b, 2 * n] = ds
            inv_s2 = 1.0 / (s * s)
            out[b, 0] = 4.0 * (th1[1] - th1[0]) / (h * h * s * s)
            for i in range(1, n):
                right = th1[i + 1] if i + 1 < n else 0.0
                lap = (right - 2.0 * th1[i] + th1[i - 1]) / (h * h)
                grad = (right - th1[i - 1]) / (2.0 * h)
                u = i * h
                out[b, i] = (lap + grad / u) * inv_s2 + (u / s) * ds * grad
            inv_oms2 = 1.0 / (oms * oms)
            for j in range(1, n):
                left = th2[j - 2] if j >= 2 else 0.0
                lap = (th2[j] - 2.0 * th2[j - 1] + left) / (h * h)
                grad = (th2[j] - left) / (2.0 * h)
                v = j * h
                x = s + v * oms
                out[b, n + j - 1] = a * (lap * inv_oms2 + grad / (x * oms)) + (
                    (1.0 - v) / oms
                ) * ds * grad
            gw = oms * heff * (tb - th2[n - 1])
            ghost = th2[n - 2] + 2.0 * h * gw
            lapw = (ghost - 2.0 * th2[n - 1] + th2[n - 2]) / (h * h)
            out[b, 2 * n - 1] = a * (lapw * inv_oms2 + gw / oms)


class StefanModel:
    """Evaluable discretized model.

    Spatial scheme: second-order central differences in the mapped
    coordinates, symmetry limit (1/r) dT/dr -> d2T/dr2 at the centerline,
    moving-mesh convection terms from the coordinate maps, second-order
    one-sided interface gradients, and a ghost-node Robin closure at the
    outer wall.  All evaluation methods are pure; ``*_flat`` variants
    broadcast over leading batch axes.
    """

    def __init__(self, params: ModelParams):
        self.params = params
        n = params.n
        self.n = n
        self.h = 1.0 / n
        self.u = np.arange(n + 1) / n
        self.v = np.arange(n + 1) / n
        self._u_int = self.u[1:n]
        self._v_int = self.v[1:n]
        # Single Robin coefficient lumping film and wall conductance, chosen so
        # the quasi-steady closed form groups as biot*ln(1/s) + wall_ratio.
        self.wall_coupling = params.biot / params.wall_ratio
        self.dim = 2 * n + 1
        self.sl_theta1 = slice(0, n)
        self.sl_theta2 = slice(n, 2 * n)
        self.idx_s = 2 * n

    # ------------------------------------------------------------------ state

    def initial_state(self) -> StefanState:
        """All-solid start: uniform melting-point temperatures, thin melt layer."""
        n = self.n
        return StefanState(np.zeros(n), np.zeros(n), 1.0 - self.params.eps_front)

    def pack(self, state: StefanState) -> np.ndarray:
        y = np.empty(self.dim)
        y[self.sl_theta1] = state.theta1
        y[self.sl_theta2] = state.theta2
        y[self.idx_s] = state.s
        return y

    def unpack(self, y: np.ndarray) -> StefanState:
        return StefanState(
            np.array(y[self.sl_theta1]),
            np.array(y[self.sl_theta2]),
            float(y[self.idx_s]),
        )

    def _validate_state(self, state: StefanState) -> None:
        n = self.n
        if np.shape(state.theta1) != (n,):
            raise ConfigError(f"theta1 must have shape ({n},), got {np.shape(state.theta1)}")
        if np.shape(state.theta2) != (n,):
            raise ConfigError(f"theta2 must have shape ({n},), got {np.shape(state.theta2)}")

    # ------------------------------------------------------------- derivatives

    def interface_velocity_flat(self, y: np.ndarray) -> np.ndarray:
        """ds/dtau from conductivity-weighted one-sided interface gradients."""
        p = self.params
        n, h = self.n, self.h
        th1 = y[..., : n]
        th2 = y[..., n : 2 * n]
        s = y[..., 2 * n]
        grad_solid = (th1[..., n - 2] - 4.0 * th1[..., n - 1]) / (2.0 * h)
        grad_liquid = (4.0 * th2[..., 0] - th2[..., 1]) / (2.0 * h)
        return p.stefan_number * (grad_solid / s - p.k_ratio * grad_liquid / (1.0 - s))

    def rhs_flat(self, y: np.ndarray, theta_b) -> np.ndarray:
        """Time derivatives for flat state vectors [theta1, theta2, s].

        Broadcasts over one leading batch axis.  Does not range-check s;
        integration drivers keep s inside the regularized band through stop
        events and may probe slightly past it.
        """
        if not _HAVE_NUMBA:
            return self._rhs_flat_numpy(y, theta_b)
        p = self.params
        y_arr = np.asarray(y, dtype=float)
        single = y_arr.ndim == 1
        Y = np.ascontiguousarray(y_arr.reshape(-1, self.dim))
        tb = np.asarray(theta_b, dtype=float)
        if tb.ndim == 0:
            TB = np.full(Y.shape[0], float(tb))
        else:
            TB = np.ascontiguousarray(tb, dtype=float).reshape(-1)
            if TB.shape[0] != Y.shape[0]:
                raise ValueError("theta_b batch shape does not match state batch")
        out = np.empty_like(Y)
        _rhs_kernel(
            Y, TB, out, self.n, self.h,
            p.stefan_number, p.k_ratio, p.alpha_ratio, self.wall_coupling,
        )
        if single:
            return out[0]
        return out.reshape(y_arr.shape)

    def _rhs_flat_numpy(self, y: np.ndarray, theta_b) -> np.ndarray:
        """Pure-numpy reference implementation of rhs_flat."""
        p = self.params
        n, h = self.n, self.h
        th1 = y[..., :n]
        th2 = y[..., n : 2 * n]
        s = y[..., 2 * n]
        one_m_s = 1.0 - s
        ds = self.interface_velocity_flat(y)

        s_col = s[..., None]
        oms_col = one_m_s[..., None]
        ds_col = ds[..., None]
        zero = np.zeros_like(th1[..., :1])

        # Solid phase, interface node pinned at zero.
        e1 = np.concatenate([th1, zero], axis=-1)
        lap1 = (e1[..., 2:] - 2.0 * e1[..., 1:-1] + e1[..., :-2]) / h**2
        grad1 = (e1[..., 2:] - e1[..., :-2]) / (2.0 * h)
        d1 = np.empty_like(th1)
        d1[..., 1:] = (lap1 + grad1 / self._u_int) / s_col**2 + (
            self._u_int / s_col
        ) * ds_col * grad1
        d1[..., 0] = 4.0 * (th1[..., 1] - th1[..., 0]) / (h**2 * s**2)

        # Liquid phase, interface node pinned at zero, Robin ghost at the wall.
        e2 = np.concatenate([zero, th2], axis=-1)
        lap2 = (e2[..., 2:] - 2.0 * e2[..., 1:-1] + e2[..., :-2]) / h**2
        grad2 = (e2[..., 2:] - e2[..., :-2]) / (2.0 * h)
        x_int = s_col + self._v_int * oms_col
        a = p.alpha_ratio
        d2 = np.empty_like(th2)
        d2[..., :-1] = a * (lap2 / oms_col**2 + grad2 / (x_int * oms_col)) + (
            (1.0 - self._v_int) / oms_col
        ) * ds_col * grad2
        tb = np.asarray(theta_b, dtype=float)
        gw = one_m_s * self.wall_coupling * (tb - th2[..., -1])
        ghost = th2[..., -2] + 2.0 * h * gw
        lap_wall = (ghost - 2.0 * th2[..., -1] + th2[..., -2]) / h**2
        d2[..., -1] = a * (lap_wall / one_m_s**2 + gw / one_m_s)

        out = np.empty_like(y)
        out[..., :n] = d1
        out[..., n : 2 * n] = d2
        out[..., 2 * n] = ds
        return out

    def rhs(self, state: StefanState, theta_b: float) -> StateDerivative:
        """Validated single-state derivative evaluation."""
        self._validate_state(state)
        if not math.isfinite(theta_b):
            raise ConfigError(f"theta_b must be finite, got {theta_b!r}")
        eps = self.params.eps_front
        if not (eps - 1e-12 <= state.s <= 1.0 - eps + 1e-12):
            raise FrontRangeError(
                f"s={state.s} outside the regularized range [{eps}, {1.0 - eps}]"
            )
        d = self.rhs_flat(self.pack(state), theta_b)
        return StateDerivative(
            np.array(d[self.sl_theta1]),
            np.array(d[self.sl_theta2]),
            float(d[self.idx_s]),
        )

    # -------------------------------------------------------------- observables

    def theta_avg_flat(self, y: np.ndarray) -> np.ndarray:
        """Average liquid temperature over the stored nodes."""
        p = self.params
        th2 = y[..., self.sl_theta2]
        sel = th2 if p.avg_include_wall else th2[..., :-1]
        if not p.avg_area_weighted:
            return sel.mean(axis=-1)
        s = y[..., self.idx_s]
        v = self.v[1:] if p.avg_include_wall else self.v[1:-1]
        x = s[..., None] + v * (1.0 - s)[..., None]
        return (sel * x).sum(axis=-1) / x.sum(axis=-1)

    def average_temperature(self, state: StefanState) -> float:
        self._validate_state(state)
        return float(self.theta_avg_flat(self.pack(state)))

    def avg_rate_flat(self, y: np.ndarray, theta_b) -> np.ndarray:
        """d(theta_avg)/dtau for the unweighted node average.

        Used as the tracking quantity for temperature-rate control; the
        area-weighted observable flag does not alter it.
        """
        d = self.rhs_flat(y, theta_b)
        d2 = d[..., self.sl_theta2]
        sel = d2 if self.params.avg_include_wall else d2[..., :-1]
        return sel.mean(axis=-1)

    # ----------------------------------------------------------- closed forms

    def quasi_steady_velocity(self, s, theta_b):
        """Closed-form interface velocity when liquid conduction is quasi-steady.

        Strictly monotone in theta_b; valid for s in (0, 1].
        """
        s_arr = np.asarray(s, dtype=float)
        if np.any(s_arr <= 0.0):
            raise FrontRangeError("quasi-steady velocity requires s > 0")
        p = self.params
        denom = s_arr * (p.biot * np.log(1.0 / s_arr) + p.wall_ratio)
        out = -(p.stefan_number * p.k_ratio * p.biot) * np.asarray(theta_b) / denom
        if np.ndim(out) == 0:
            return float(out)
        return out

    def feasible_velocity_bound(self, s):
        """Most negative quasi-steady velocity admissible at this s (heater at ceiling)."""
        return self.quasi_steady_velocity(s, self.params.theta_max)

    def feasibility_threshold(self, grid_step: float = 1e-3) -> float:
        """Global feasibility threshold: min over s of the velocity bound.

        Any velocity setpoint strictly less negative than this value can be
        tracked without activating the heater ceiling.
        """
        eps = self.params.eps_front
        grid = np.arange(eps, 1.0 - eps + grid_step / 2, grid_step)
        grid = grid[grid <= 1.0 - eps]
        return float(np.max(self.feasible_velocity_bound(grid)))


def make_model(params: ModelParams) -> StefanModel:
    """Build an evaluable model; raises ConfigError on invalid parameters."""
    if not isinstance(params, ModelParams):
        params = ModelParams.from_dict(dict(params))
    return StefanModel(params)


def rhs(model: StefanModel, state: StefanState, theta_b: float) -> StateDerivative:
    return model.rhs(state, theta_b)


def average_temperature(model: StefanModel, state: StefanState) -> float:
    return model.average_temperature(state)


def quasi_steady_velocity(model: StefanModel, s: float, theta_b: float) -> float:
    return model.quasi_steady_velocity(s, theta_b)


def feasible_velocity_bound(model: StefanModel, s: float) -> float:
    return model.feasible_velocity_bound(s)
