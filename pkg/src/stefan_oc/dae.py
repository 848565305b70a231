"""Residual-form DAE machinery.

Two solution backends over a common system description:

* ``integrate_index1`` — adaptive variable-order (1-5) BDF for index-1
  systems, with event location on the dense output.
* ``collocate`` — orthogonal collocation on finite elements with Radau
  points, marching element by element; handles any declared index and does
  not require a consistent initial point (the left element endpoint is not
  a collocation point).

Convention: residual row i is the equation associated with variable i, so
the per-variable differential/algebraic classification also classifies the
rows, and algebraic rows must not depend on y'.  Residuals must be pure
functions; systems flagged ``vectorized`` must broadcast over a leading
batch axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import roots_jacobi

__all__ = [
    "DaeSystem",
    "EventSpec",
    "Event",
    "Trajectory",
    "CollocationConfig",
    "IntegrationFailure",
    "NewtonStagnation",
    "InconsistentInitError",
    "InfeasibleInitError",
    "integrate_index1",
    "collocate",
    "consistent_init",
    "radau_nodes",
    "bisect_root",
]

_SQRT_EPS = math.sqrt(np.finfo(float).eps)
MAX_BDF_ORDER = 5


class IntegrationFailure(RuntimeError):
    """Integrator could not continue; carries the last good partial trajectory."""

    def __init__(self, message: str, trajectory: "Trajectory | None" = None):
        super().__init__(message)
        self.trajectory = trajectory


class NewtonStagnation(RuntimeError):
    """Damped Newton failed to reach tolerance."""

    def __init__(self, message: str, residual_norm: float, where: float):
        super().__init__(message)
        self.residual_norm = residual_norm
        self.where = where


class InconsistentInitError(ValueError):
    """Initial point does not satisfy the algebraic residual rows."""


class InfeasibleInitError(ValueError):
    """No consistent initial value inside the variable bounds.

    ``candidate`` carries the bound-clipped initial vector and ``bound``
    which end was hit ('lo' or 'hi'); the switching logic starts from it.
    """

    def __init__(self, message: str, candidate: np.ndarray, bound: str):
        super().__init__(message)
        self.candidate = candidate
        self.bound = bound


@dataclass
class EventSpec:
    """Scalar event function with a crossing direction.

    direction +1 fires on up-crossings, -1 on down-crossings, 0 on any sign
    change.  In block mode the function returns one value per block.
    """

    func: Callable[[float, np.ndarray], float]
    direction: int = 0
    name: str = ""


@dataclass
class Event:
    tau: float
    name: str
    direction: int
    block: int = 0


@dataclass
class DaeSystem:
    """Residual-form system F(tau, y, y') = 0 with variable classification."""

    dim: int
    residual: Callable[[float, np.ndarray, np.ndarray], np.ndarray]
    is_differential: np.ndarray
    bounds: Optional[tuple[np.ndarray, np.ndarray]] = None
    index_hint: int = 1
    stop_events: list[EventSpec] = field(default_factory=list)
    vectorized: bool = False
    # (n_blocks, block_dim) for block-diagonal batches of independent systems;
    # the residual must not couple distinct blocks.
    blocks: Optional[tuple[int, int]] = None
    # Optional residual override used only by consistent_init, for systems
    # whose algebraic rows have no direct sensitivity to the free variables.
    init_residual: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __post_init__(self) -> None:
        self.is_differential = np.asarray(self.is_differential, dtype=bool)
        if self.is_differential.shape != (self.dim,):
            raise ValueError("is_differential must have shape (dim,)")
        if self.blocks is not None:
            m, d = self.blocks
            if m * d != self.dim:
                raise ValueError("blocks must tile dim exactly")


@dataclass
class CollocationConfig:
    """Fixed-element Radau collocation settings."""

    d_tau: float
    nodes: int = 5
    newton_tol: float = 1e-9
    newton_max_iter: int = 30
    damping: float = 0.5

    def __post_init__(self) -> None:
        if not (2 <= self.nodes <= 8):
            raise ValueError(f"nodes must be in [2, 8], got {self.nodes}")
        if not self.d_tau > 0:
            raise ValueError("d_tau must be positive")
        if not self.newton_tol > 0:
            raise ValueError("newton_tol must be positive")


class HermiteInterpolant:
    """Piecewise cubic Hermite dense output from (tau, y, y') samples."""

    def __init__(self, taus: np.ndarray, ys: np.ndarray, yps: np.ndarray):
        self.taus = taus
        self.ys = ys
        self.yps = yps

    def __call__(self, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        idx = np.clip(np.searchsorted(self.taus, t_arr, side="right") - 1, 0, len(self.taus) - 2)
        t0 = self.taus[idx]
        h = self.taus[idx + 1] - t0
        x = (t_arr - t0) / h
        h00 = (1 + 2 * x) * (1 - x) ** 2
        h10 = x * (1 - x) ** 2
        h01 = x**2 * (3 - 2 * x)
        h11 = x**2 * (x - 1)
        out = (
            h00[:, None] * self.ys[idx]
            + (h10 * h)[:, None] * self.yps[idx]
            + h01[:, None] * self.ys[idx + 1]
            + (h11 * h)[:, None] * self.yps[idx + 1]
        )
        if np.ndim(t) == 0:
            return out[0]
        return out


@dataclass
class Trajectory:
    """Sampled solution with dense output and located events."""

    taus: np.ndarray
    values: np.ndarray
    events: list[Event] = field(default_factory=list)
    interpolant: Optional[Callable] = None
    stats: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.taus = np.asarray(self.taus, dtype=float)
        if np.any(np.diff(self.taus) <= 0):
            raise ValueError("trajectory sample times must be strictly increasing")
        if self.values.shape[0] != len(self.taus):
            raise ValueError("values row count must match taus")

    @property
    def t_start(self) -> float:
        return float(self.taus[0])

    @property
    def t_end(self) -> float:
        return float(self.taus[-1])

    def sample(self, t):
        if self.interpolant is None:
            raise ValueError("trajectory has no dense interpolant")
        return self.interpolant(t)


def bisect_root(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10,
                max_iter: int = 200) -> float:
    """Bisection for a sign-changing scalar function on [lo, hi]."""
    flo = f(lo)
    fhi = f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise ValueError("no sign change on the bracket")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0.0 or (hi - lo) < tol:
            return mid
        if flo * fm < 0:
            hi = mid
        else:
            lo, flo = mid, fm
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# finite-difference Jacobians
# --------------------------------------------------------------------------


def _fd_point_jacobians(residual, t, y: np.ndarray, yp: np.ndarray, blocks=None):
    """Pointwise A = dF/dy and B = dF/dy' by forward differences.

    Column step sqrt(eps)*max(1, |y_c|).  Returns dense (dim, dim) matrices,
    or stacked (m, d, d) in block mode with one simultaneous perturbation per
    in-block column.
    """
    f0 = residual(t, y, yp)
    if blocks is None:
        dim = len(y)
        A = np.empty((dim, dim))
        B = np.empty((dim, dim))
        for c in range(dim):
            dy = _SQRT_EPS * max(1.0, abs(y[c]))
            ypert = y.copy()
            ypert[c] += dy
            A[:, c] = (residual(t, ypert, yp) - f0) / dy
            dyp = _SQRT_EPS * max(1.0, abs(yp[c]))
            ppert = yp.copy()
            ppert[c] += dyp
            B[:, c] = (residual(t, y, ppert) - f0) / dyp
        return A, B
    m, d = blocks
    yb = y.reshape(m, d)
    ypb = yp.reshape(m, d)
    f0b = f0.reshape(m, d)
    A = np.empty((m, d, d))
    B = np.empty((m, d, d))
    for c in range(d):
        dy = _SQRT_EPS * np.maximum(1.0, np.abs(yb[:, c]))
        ypert = yb.copy()
        ypert[:, c] += dy
        A[:, :, c] = (residual(t, ypert.reshape(-1), yp).reshape(m, d) - f0b) / dy[:, None]
        dyp = _SQRT_EPS * np.maximum(1.0, np.abs(ypb[:, c]))
        ppert = ypb.copy()
        ppert[:, c] += dyp
        B[:, :, c] = (residual(t, y, ppert.reshape(-1)).reshape(m, d) - f0b) / dyp[:, None]
    return A, B


# --------------------------------------------------------------------------
# BDF integrator
# --------------------------------------------------------------------------


def _barycentric_weights(nodes: np.ndarray) -> np.ndarray:
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / diff.prod(axis=1)


def _lagrange_derivative_weights(nodes: np.ndarray) -> np.ndarray:
    """Weights w with p'(nodes[0]) = sum_j w_j f(nodes[j]) for the interpolant p."""
    w = _barycentric_weights(nodes)
    d = np.empty(len(nodes))
    d[1:] = (w[1:] / w[0]) / (nodes[0] - nodes[1:])
    d[0] = -d[1:].sum()
    return d


def _lagrange_eval_weights(nodes: np.ndarray, x: float) -> np.ndarray:
    """Weights c with p(x) = sum_j c_j f(nodes[j])."""
    diffs = x - nodes
    exact = np.where(np.abs(diffs) < 1e-300)[0]
    if len(exact):
        c = np.zeros(len(nodes))
        c[exact[0]] = 1.0
        return c
    terms = _barycentric_weights(nodes) / diffs
    return terms / terms.sum()


class _BdfWorkspace:
    """Modified-Newton iteration matrix, inverted once and reused across steps.

    The cached inverse tolerates a drifting BDF leading coefficient (up to
    20% between rebuilds); modified Newton absorbs the mismatch with an
    extra iteration or two, which is far cheaper than refactoring.
    """

    def __init__(self, system: DaeSystem):
        self.system = system
        self.A = None
        self.B = None
        self.c0_built = None
        self.inv = None
        self.fresh = False
        self._patched_mask = None

    def refresh(self, t, y, yp, c0):
        self.A, self.B = _fd_point_jacobians(
            self.system.residual, t, y, yp, blocks=self.system.blocks
        )
        self.rebuild(c0)
        self.fresh = True

    def rebuild(self, c0):
        self.inv = np.linalg.inv(self.A + c0 * self.B)
        self.c0_built = c0
        self._patched_mask = None

    def ensure(self, c0):
        if abs(c0 / self.c0_built - 1.0) > 0.35:
            self.rebuild(c0)

    def patch_frozen(self, active, block_dim):
        # frozen blocks iterate on y - y_frozen = 0, whose Jacobian is I
        if active.all():
            return
        if self._patched_mask is not None and np.array_equal(self._patched_mask, active):
            return
        self.inv[~active] = np.eye(block_dim)
        self._patched_mask = active.copy()

    def solve(self, rhs):
        if self.system.blocks is None:
            return self.inv @ rhs
        m, d = self.system.blocks
        return (self.inv @ rhs.reshape(m, d, 1)).reshape(-1)


def _find_crossings(ev_specs, ev_prev, t_lo, t_hi, y_hi, interp_factory, active, n_blocks):
    """All event crossings in (t_lo, t_hi], located by bisection on the interpolant."""
    crossings = []
    interp = None
    vals = [
        np.atleast_1d(np.asarray(spec.func(t_hi, y_hi), dtype=float))
        for spec in ev_specs
    ]
    for si, spec in enumerate(ev_specs):
        prev = ev_prev[si]
        cur = vals[si]
        for b in range(len(cur)):
            if n_blocks > 1 and not active[b]:
                continue
            p, c = float(prev[b]), float(cur[b])
            if p == c:
                continue
            up = p < 0.0 <= c
            down = p > 0.0 >= c
            if not ((up and spec.direction >= 0) or (down and spec.direction <= 0)):
                continue
            if interp is None:
                interp = interp_factory()

            def g(tt, si_=si, b_=b):
                return float(np.atleast_1d(ev_specs[si_].func(tt, interp(tt)))[b_])

            try:
                t_star = bisect_root(g, t_lo, t_hi, tol=1e-12)
            except ValueError:
                t_star = t_hi  # crossing carried in from the segment boundary
            crossings.append((t_star, si, b, 1 if up else -1))
    crossings.sort()
    return crossings, vals


def integrate_index1(
    system: DaeSystem,
    y0: np.ndarray,
    span: tuple[float, float],
    tol: float = 1e-8,
    *,
    max_steps: int = 2_000_000,
    first_step: Optional[float] = None,
    init_tol: float = 1e-6,
    check_consistency: bool = True,
) -> Trajectory:
    """Adaptive variable-order BDF solution of an index-1 residual system.

    Local error per step is controlled to ``tol`` (scaled norm over the
    differential variables).  Integration stops early at the first triggered
    stop event, located on the dense output by bisection; in block mode each
    block is frozen at its own event and integration continues until all
    blocks have stopped or the span ends.
    """
    t0, tf = float(span[0]), float(span[1])
    if not tf > t0:
        raise ValueError("span must be increasing")
    y0 = np.asarray(y0, dtype=float).copy()
    if y0.shape != (system.dim,):
        raise ValueError(f"y0 must have shape ({system.dim},)")
    diff_mask = system.is_differential
    alg_rows = ~diff_mask
    if check_consistency and alg_rows.any():
        res0 = system.residual(t0, y0, np.zeros_like(y0))
        worst = float(np.max(np.abs(res0[alg_rows])))
        if worst > max(init_tol, 10 * tol):
            raise InconsistentInitError(
                f"algebraic residual at t0 is {worst:.3e} (> {max(init_tol, 10 * tol):.1e})"
            )

    n_blocks, block_dim = system.blocks if system.blocks else (1, system.dim)
    active = np.ones(n_blocks, dtype=bool)
    frozen_y = y0.copy()

    ws = _BdfWorkspace(system)
    stats = {"n_steps": 0, "n_rejected": 0, "n_fev": 0, "n_jev": 0, "n_newton": 0}

    # rolling history, most recent first
    hist_cap = MAX_BDF_ORDER + 2
    hist_t = np.empty(hist_cap)
    hist_y = np.empty((hist_cap, system.dim))
    hist_t[0] = t0
    hist_y[0] = y0
    hist_len = 1
    out_t = [t0]
    out_y = [y0.copy()]
    out_yp = [np.zeros_like(y0)]
    events_found: list[Event] = []

    span_len = tf - t0
    h = first_step if first_step is not None else max(span_len * 1e-6, 1e-12)
    order = 1
    accepts_in_a_row = 0
    newton_fail_streak = 0

    ev_specs = system.stop_events
    ev_prev = [
        np.atleast_1d(np.asarray(spec.func(t0, y0), dtype=float)) for spec in ev_specs
    ]

    all_differential = bool(diff_mask.all())

    def scaled_norm(vec, ref, differential_only=True):
        r = np.abs(vec) / (tol * (1.0 + np.abs(ref)))
        if differential_only and not all_differential:
            r = r[diff_mask]
        if n_blocks > 1 and not active.all():
            keep = np.repeat(active, block_dim)
            if differential_only and not all_differential:
                keep = keep[diff_mask]
            r = r[keep]
        return float(r.max()) if r.size else 0.0

    while hist_t[0] < tf - 1e-14 and stats["n_steps"] + stats["n_rejected"] < max_steps:
        t_cur = float(hist_t[0])
        h = min(h, tf - t_cur)
        # floor scales with the current time so stiff startup layers can be
        # resolved at arbitrarily small steps near t0
        h_min = max(1e-18, 100.0 * np.finfo(float).eps * abs(t_cur))
        if h < h_min:
            raise IntegrationFailure(
                f"step size underflow at t={t_cur:.6g}",
                _build_trajectory(out_t, out_y, out_yp, events_found, stats),
            )
        k = min(order, hist_len)
        t_new = t_cur + h
        nodes = np.empty(k + 1)
        nodes[0] = t_new
        nodes[1:] = hist_t[:k]
        dweights = _lagrange_derivative_weights(nodes)
        c0 = dweights[0]
        rdot = dweights[1:] @ hist_y[:k]

        # predictor: extrapolate the polynomial through k+1 history points
        npred = min(k + 1, hist_len)
        pweights = _lagrange_eval_weights(hist_t[:npred], t_new)
        y_pred = pweights @ hist_y[:npred]
        if n_blocks > 1 and not active.all():
            fmask = np.repeat(~active, block_dim)
            y_pred[fmask] = frozen_y[fmask]

        try:
            if ws.A is None:
                ws.refresh(t_new, y_pred, c0 * y_pred + rdot, c0)
                stats["n_jev"] += 1
            else:
                ws.ensure(c0)
        except np.linalg.LinAlgError:
            raise IntegrationFailure(
                f"singular iteration matrix at t={t_cur:.6g}",
                _build_trajectory(out_t, out_y, out_yp, events_found, stats),
            )
        if n_blocks > 1:
            ws.patch_frozen(active, block_dim)

        # modified Newton on the BDF residual G(y) = F(t, y, c0*y + rdot)
        y_new = y_pred.copy()
        converged = False
        iters_used = 0
        dn_prev = None
        for _ in range(7):
            G = system.residual(t_new, y_new, c0 * y_new + rdot)
            stats["n_fev"] += 1
            if n_blocks > 1 and not active.all():
                Gb = G.reshape(n_blocks, block_dim).copy()
                Gb[~active] = (y_new.reshape(n_blocks, block_dim) - frozen_y.reshape(n_blocks, block_dim))[~active]
                G = Gb.reshape(-1)
            if not np.all(np.isfinite(G)):
                break
            delta = ws.solve(-G)
            y_new = y_new + delta
            stats["n_newton"] += 1
            iters_used += 1
            # the iteration must converge in every component (algebraic ones
            # included); only the truncation-error test is differential-only
            dn = scaled_norm(delta, y_new, differential_only=False)
            if dn < 0.33:
                converged = True
                break
            if dn_prev is not None and dn > 0.9 * dn_prev and dn > 10.0:
                break  # diverging; retry with a fresh Jacobian or smaller step
            dn_prev = dn
        if not converged:
            if not ws.fresh:
                ws.refresh(t_new, y_pred, c0 * y_pred + rdot, c0)
                if n_blocks > 1:
                    ws.patch_frozen(active, block_dim)
                stats["n_jev"] += 1
                continue
            stats["n_rejected"] += 1
            newton_fail_streak += 1
            ws.fresh = False
            h *= 0.25
            if newton_fail_streak > 40:
                raise IntegrationFailure(
                    f"Newton failed repeatedly near t={t_cur:.6g}",
                    _build_trajectory(out_t, out_y, out_yp, events_found, stats),
                )
            continue
        newton_fail_streak = 0
        ws.fresh = False
        if iters_used >= 6:
            ws.A = None  # slow convergence: re-evaluate the Jacobian next step

        # local error from the corrector-predictor difference
        err_vec = y_new - y_pred
        err = scaled_norm(err_vec, y_new) / (k + 1)
        if err > 1.0:
            stats["n_rejected"] += 1
            accepts_in_a_row = 0
            h *= max(0.2, 0.9 * err ** (-1.0 / (k + 1)))
            if order > 1 and stats["n_rejected"] % 3 == 0:
                order -= 1
            continue

        # accept the step
        stats["n_steps"] += 1
        accepts_in_a_row += 1
        yp_new = c0 * y_new + rdot
        if n_blocks > 1 and not active.all():
            yp_new = yp_new.copy()
            yp_new[np.repeat(~active, block_dim)] = 0.0
        hist_t[1:] = hist_t[:-1]
        hist_y[1:] = hist_y[:-1]
        hist_t[0] = t_new
        hist_y[0] = y_new
        hist_len = min(hist_len + 1, hist_cap)
        out_t.append(t_new)
        out_y.append(y_new.copy())
        out_yp.append(yp_new)
        if len(out_t) == 2:
            out_yp[0] = (out_y[1] - out_y[0]) / (out_t[1] - out_t[0])

        if ev_specs:
            def seg_factory():
                return HermiteInterpolant(
                    np.array(out_t[-2:]), np.stack(out_y[-2:]), np.stack(out_yp[-2:])
                )

            crossings, ev_prev = _find_crossings(
                ev_specs, ev_prev, out_t[-2], t_new, y_new, seg_factory, active, n_blocks
            )
            if crossings:
                seg = seg_factory()
                if n_blocks == 1:
                    t_star, si, _b, direction = crossings[0]
                    events_found.append(Event(t_star, ev_specs[si].name, direction))
                    y_star = seg(t_star)
                    out_t[-1] = t_star
                    out_y[-1] = y_star
                    out_yp[-1] = _hermite_slope(seg, t_star)
                    return _build_trajectory(out_t, out_y, out_yp, events_found, stats)
                for t_star, si, b, direction in crossings:
                    if not active[b]:
                        continue
                    events_found.append(Event(t_star, ev_specs[si].name, direction, block=b))
                    sl = slice(b * block_dim, (b + 1) * block_dim)
                    frozen_y[sl] = seg(t_star)[sl]
                    active[b] = False
                if not active.any():
                    return _build_trajectory(out_t, out_y, out_yp, events_found, stats)

        if err > 0:
            h *= min(2.5, max(0.2, 0.9 * err ** (-1.0 / (k + 1))))
        else:
            h *= 2.5
        if order < MAX_BDF_ORDER and accepts_in_a_row >= order + 2 and len(hist_t) > order + 1:
            order += 1

    if hist_t[0] < tf - 1e-14:
        raise IntegrationFailure(
            "maximum step count exceeded",
            _build_trajectory(out_t, out_y, out_yp, events_found, stats),
        )
    return _build_trajectory(out_t, out_y, out_yp, events_found, stats)


def _hermite_slope(seg: HermiteInterpolant, t: float) -> np.ndarray:
    t0, t1 = float(seg.taus[0]), float(seg.taus[-1])
    dt = max((t1 - t0) * 1e-6, 1e-12)
    a = max(t - dt, t0)
    b = min(t + dt, t1)
    return (seg(b) - seg(a)) / (b - a)


def _build_trajectory(out_t, out_y, out_yp, events, stats) -> Trajectory:
    taus = np.asarray(out_t)
    values = np.stack(out_y)
    yps = np.stack(out_yp)
    interp = HermiteInterpolant(taus, values, yps) if len(taus) > 1 else None
    return Trajectory(taus, values, list(events), interp, dict(stats))


# --------------------------------------------------------------------------
# orthogonal collocation on finite elements
# --------------------------------------------------------------------------


def radau_nodes(d: int) -> np.ndarray:
    """d collocation points on (0, 1], right endpoint included (Radau IIA)."""
    if d < 1:
        raise ValueError("need at least one node")
    if d == 1:
        return np.array([1.0])
    interior, _ = roots_jacobi(d - 1, 1.0, 0.0)
    return np.concatenate([(interior + 1.0) / 2.0, [1.0]])


def _diff_matrix(nodes: np.ndarray, eval_pts: np.ndarray) -> np.ndarray:
    """D[j, i] = l_i'(eval_pts[j]) for the Lagrange basis on ``nodes``."""
    k = len(nodes)
    w = np.ones(k)
    for j in range(k):
        for m in range(k):
            if m != j:
                w[j] *= nodes[j] - nodes[m]
    w = 1.0 / w
    D = np.empty((len(eval_pts), k))
    for r, x in enumerate(eval_pts):
        onnode = np.where(np.abs(x - nodes) < 1e-14)[0]
        if len(onnode):
            j = onnode[0]
            row = np.zeros(k)
            for i in range(k):
                if i != j:
                    row[i] = (w[i] / w[j]) / (nodes[j] - nodes[i])
            row[j] = -row.sum()
            D[r] = row
        else:
            terms = w / (x - nodes)
            S = terms.sum()
            p = terms / S
            dterm = -w / (x - nodes) ** 2
            D[r] = (dterm - p * dterm.sum()) / S
    return D


class _ElementPolynomials:
    """Dense output over solved collocation elements."""

    def __init__(self, dim: int):
        self.starts: list[float] = []
        self.lengths: list[float] = []
        self.node_taus: list[np.ndarray] = []
        self.node_vals: list[np.ndarray] = []
        self.dim = dim

    def add(self, t_start, length, c_all, Y_all):
        self.starts.append(t_start)
        self.lengths.append(length)
        self.node_taus.append(c_all)
        self.node_vals.append(Y_all)

    def __call__(self, t):
        t_arr = np.atleast_1d(np.asarray(t, dtype=float))
        starts = np.asarray(self.starts)
        idx = np.clip(np.searchsorted(starts, t_arr, side="right") - 1, 0, len(starts) - 1)
        out = np.empty((len(t_arr), self.dim))
        for r, (tt, e) in enumerate(zip(t_arr, idx)):
            x = (tt - self.starts[e]) / self.lengths[e]
            cw = _lagrange_eval_weights(self.node_taus[e], min(max(x, 0.0), 1.0))
            out[r] = cw @ self.node_vals[e]
        if np.ndim(t) == 0:
            return out[0]
        return out


def collocate(
    system: DaeSystem,
    y0_guess: np.ndarray,
    span: tuple[float, float],
    config: CollocationConfig,
    *,
    max_elements: int = 100_000,
) -> Trajectory:
    """Solve a residual system by Radau collocation on fixed-length elements.

    Works for any declared index; no index reduction and no dummy derivatives.
    The start point need not be consistent: the left element endpoint is not a
    collocation point, so the first element bridges onto the constraint
    manifold.  Differential variables are continuous across elements;
    algebraic variables are represented per element by the collocation-node
    polynomial alone.  Each element's stacked nonlinear system is solved by
    damped Newton with finite-difference Jacobians, and the block-bidiagonal
    coupling between elements is handled by forward marching.
    """
    t0, tf = float(span[0]), float(span[1])
    if not tf > t0:
        raise ValueError("span must be increasing")
    y0 = np.asarray(y0_guess, dtype=float).copy()
    dim = system.dim
    if y0.shape != (dim,):
        raise ValueError(f"y0_guess must have shape ({dim},)")
    if (tf - t0) / config.d_tau > max_elements:
        raise IntegrationFailure("element count overflow", None)

    d = config.nodes
    c = radau_nodes(d)
    c_all = np.concatenate([[0.0], c])
    D = _diff_matrix(c_all, c)       # (d, d+1), includes the element-start node
    Dalg = _diff_matrix(c, c)        # (d, d), collocation nodes only
    diff_mask = system.is_differential
    alg_mask = ~diff_mask
    w_alg0 = _lagrange_eval_weights(c, 0.0)

    dense = _ElementPolynomials(dim)
    out_t = [t0]
    out_y = [y0.copy()]
    events: list[Event] = []
    stats = {"n_elements": 0, "n_newton": 0, "n_fev": 0, "n_halvings": 0}
    ev_specs = system.stop_events
    ev_prev = [float(np.atleast_1d(spec.func(t0, y0))[0]) for spec in ev_specs]

    def residual_stack(t_start, dt, y_anchor, Z):
        t_pts = t_start + c * dt
        full = np.vstack([y_anchor[None, :], Z])
        yp_diff = (D @ full) / dt
        yp_alg = (Dalg @ Z) / dt
        yp = np.where(diff_mask[None, :], yp_diff, yp_alg)
        if system.vectorized:
            R = system.residual(t_pts, Z, yp)
        else:
            R = np.stack([system.residual(t_pts[j], Z[j], yp[j]) for j in range(d)])
        return R, yp

    def element_jacobian(t_pts, dt, Z, yp):
        A = np.empty((d, dim, dim))
        B = np.empty((d, dim, dim))
        for j in range(d):
            A[j], B[j] = _fd_point_jacobians(system.residual, t_pts[j], Z[j], yp[j])
        J = np.zeros((d * dim, d * dim))
        for j in range(d):
            for i in range(d):
                coef = np.where(diff_mask, D[j, i + 1], Dalg[j, i]) / dt
                block = B[j] * coef[None, :]
                if i == j:
                    block = block + A[j]
                J[j * dim : (j + 1) * dim, i * dim : (i + 1) * dim] = block
        return J

    def solve_element(t_start, dt, y_anchor, z_init):
        Z = z_init.copy()
        R, yp = residual_stack(t_start, dt, y_anchor, Z)
        stats["n_fev"] += 1
        norm = float(np.max(np.abs(R)))
        t_pts = t_start + c * dt
        for _ in range(config.newton_max_iter):
            if norm <= config.newton_tol:
                return Z
            if not np.isfinite(norm):
                raise NewtonStagnation(
                    f"non-finite residual in element at t={t_start:.6g}", float("inf"), t_start
                )
            J = element_jacobian(t_pts, dt, Z, yp)
            stats["n_fev"] += 2 * dim * d
            try:
                delta = np.linalg.solve(J, -R.reshape(-1)).reshape(d, dim)
            except np.linalg.LinAlgError as exc:
                raise NewtonStagnation(
                    f"singular collocation matrix at t={t_start:.6g}", norm, t_start
                ) from exc
            lam = 1.0
            improved = False
            for _ in range(30):
                Z_try = Z + lam * delta
                R_try, yp_try = residual_stack(t_start, dt, y_anchor, Z_try)
                stats["n_fev"] += 1
                norm_try = float(np.max(np.abs(R_try)))
                if np.isfinite(norm_try) and (norm_try < norm or norm_try <= config.newton_tol):
                    Z, R, yp, norm = Z_try, R_try, yp_try, norm_try
                    improved = True
                    break
                lam *= config.damping
            stats["n_newton"] += 1
            if not improved:
                raise NewtonStagnation(
                    f"Newton stagnation in element at t={t_start:.6g} "
                    f"(residual {norm:.3e}, element {stats['n_elements']})",
                    norm,
                    t_start,
                )
        if norm <= config.newton_tol:
            return Z
        raise NewtonStagnation(
            f"Newton exceeded {config.newton_max_iter} iterations at t={t_start:.6g} "
            f"(residual {norm:.3e})",
            norm,
            t_start,
        )

    def euler_seed(t_start, dt, y_anchor):
        # for semi-explicit rows F = y' - f, the residual at y' = 0 is -f
        r0 = system.residual(t_start, y_anchor, np.zeros(dim))
        yp0 = np.where(diff_mask, -np.asarray(r0), 0.0)
        Z = y_anchor[None, :] + (c * dt)[:, None] * yp0[None, :]
        return Z if np.all(np.isfinite(Z)) else None

    def extrapolation_seed(prev, t_start, dt):
        p_t, p_dt, p_vals = prev
        x = (t_start + c * dt - p_t) / p_dt
        Z = np.stack([_lagrange_eval_weights(c_all, xi) @ p_vals for xi in x])
        return Z if np.all(np.isfinite(Z)) else None

    prev_poly = None
    y_cur = y0.copy()
    t_cur = t0
    while t_cur < tf - 1e-13:
        dt_el = min(config.d_tau, tf - t_cur)
        halved = 0
        while True:
            guesses = []
            if prev_poly is not None:
                guesses.append(extrapolation_seed(prev_poly, t_cur, dt_el))
            guesses.append(euler_seed(t_cur, dt_el, y_cur))
            guesses.append(np.tile(y_cur, (d, 1)))
            Z = None
            last_exc = None
            for z_init in guesses:
                if z_init is None:
                    continue
                try:
                    Z = solve_element(t_cur, dt_el, y_cur, z_init)
                    break
                except NewtonStagnation as exc:
                    last_exc = exc
            if Z is not None:
                break
            # shorter elements only as recovery, e.g. straddling a stop event
            halved += 1
            stats["n_halvings"] += 1
            if halved > 8:
                raise last_exc
            dt_el *= 0.5
        stats["n_elements"] += 1
        full = np.vstack([y_cur[None, :], Z])
        if alg_mask.any():
            full[0, alg_mask] = (w_alg0 @ Z)[alg_mask]
        prev_poly = (t_cur, dt_el, full)
        dense.add(t_cur, dt_el, c_all, full)
        t_pts = t_cur + c * dt_el

        stop_at = None
        if ev_specs:
            seg_t = np.concatenate([[t_cur], t_pts])
            for si, spec in enumerate(ev_specs):
                prev_t = seg_t[0]
                prev_val = ev_prev[si]
                hit = None
                for j in range(1, len(seg_t)):
                    val = float(np.atleast_1d(spec.func(seg_t[j], full[j]))[0])
                    up = prev_val < 0.0 <= val
                    down = prev_val > 0.0 >= val
                    if prev_val != val and (
                        (up and spec.direction >= 0) or (down and spec.direction <= 0)
                    ):
                        def g(tt, si_=si):
                            return float(np.atleast_1d(ev_specs[si_].func(tt, dense(tt)))[0])

                        try:
                            t_star = bisect_root(g, prev_t, seg_t[j], tol=1e-12)
                        except ValueError:
                            t_star = prev_t
                        hit = (t_star, spec.name, 1 if up else -1)
                        break
                    prev_t, prev_val = seg_t[j], val
                ev_prev[si] = float(np.atleast_1d(spec.func(seg_t[-1], full[-1]))[0])
                if hit and (stop_at is None or hit[0] < stop_at[0]):
                    stop_at = hit

        if stop_at is not None:
            t_star, name, direction = stop_at
            events.append(Event(t_star, name, direction))
            keep = t_pts < t_star - 1e-13
            for tj, val in zip(t_pts[keep], Z[keep]):
                out_t.append(float(tj))
                out_y.append(val)
            if t_star > out_t[-1] + 1e-13:
                out_t.append(t_star)
                out_y.append(dense(t_star))
            return Trajectory(np.asarray(out_t), np.stack(out_y), events, dense, dict(stats))

        for tj, val in zip(t_pts, Z):
            out_t.append(float(tj))
            out_y.append(val)
        y_cur = Z[-1].copy()  # the right endpoint is a collocation node
        t_cur = t_cur + dt_el

    return Trajectory(np.asarray(out_t), np.stack(out_y), events, dense, dict(stats))


# --------------------------------------------------------------------------
# consistent initialization
# --------------------------------------------------------------------------


def consistent_init(
    system: DaeSystem,
    y0_partial: np.ndarray,
    free: np.ndarray,
    *,
    init_tol: float = 1e-10,
    max_iter: int = 60,
) -> np.ndarray:
    """Solve the initialization residual for the free (algebraic) components.

    Differential components of ``y0_partial`` stay fixed.  The residual is
    the system's algebraic rows evaluated at t0, unless
    ``system.init_residual`` overrides it (needed when those rows have no
    direct sensitivity to the free variables, as in high-index
    reformulations).  Damped Newton first; for a single free scalar a
    monotone-bisection fallback is used.  Raises InfeasibleInitError with
    the bound-clipped candidate when the root lies outside the variable
    bounds, and InconsistentInitError when the residual does not respond to
    the free variables at all.
    """
    free = np.asarray(free, dtype=bool)
    y0 = np.asarray(y0_partial, dtype=float).copy()
    if free.shape != (system.dim,):
        raise ValueError("free mask must match system dim")
    idx_free = np.where(free)[0]
    if idx_free.size == 0:
        return y0

    if system.init_residual is not None:
        def res_of(y):
            return np.atleast_1d(np.asarray(system.init_residual(y), dtype=float))
    else:
        alg = ~system.is_differential

        def res_of(y):
            return np.atleast_1d(system.residual(0.0, y, np.zeros_like(y))[alg])

    lo = hi = None
    if system.bounds is not None:
        lo, hi = system.bounds

    def bounds_for(i):
        lo_i = float(lo[i]) if lo is not None else -1e6
        hi_i = float(hi[i]) if hi is not None else 1e6
        return lo_i, hi_i

    # scalar free variable with a scalar residual: direct monotone treatment
    if idx_free.size == 1 and res_of(y0).size == 1:
        i = int(idx_free[0])
        lo_i, hi_i = bounds_for(i)

        def g(v):
            y = y0.copy()
            y[i] = v
            return float(res_of(y)[0])

        g_lo, g_hi = g(lo_i), g(hi_i)
        if abs(g_lo - g_hi) <= 1e-13 * (1.0 + abs(g_lo)):
            if abs(g_lo) <= init_tol:
                y0[i] = np.clip(y0[i], lo_i, hi_i)
                return y0
            raise InconsistentInitError(
                "initialization residual does not depend on the free variable"
            )
        if abs(g_lo) <= init_tol:
            y0[i] = lo_i
            return y0
        if abs(g_hi) <= init_tol:
            y0[i] = hi_i
            return y0
        if g_lo * g_hi > 0:
            pick_hi = abs(g_hi) < abs(g_lo)
            cand = y0.copy()
            cand[i] = hi_i if pick_hi else lo_i
            raise InfeasibleInitError(
                f"no consistent value in [{lo_i}, {hi_i}]"
                f" (residuals {g_lo:.3e} and {g_hi:.3e})",
                cand,
                "hi" if pick_hi else "lo",
            )
        y0[i] = bisect_root(g, lo_i, hi_i, tol=1e-14)
        return y0

    # multivariate damped Newton on the free components
    y = y0.copy()
    r = res_of(y)
    norm = float(np.max(np.abs(r)))
    for _ in range(max_iter):
        if norm <= init_tol:
            break
        J = np.empty((r.size, idx_free.size))
        for col, i in enumerate(idx_free):
            dv = _SQRT_EPS * max(1.0, abs(y[i]))
            ypert = y.copy()
            ypert[i] += dv
            J[:, col] = (res_of(ypert) - r) / dv
        if float(np.max(np.abs(J))) < 1e-13:
            raise InconsistentInitError(
                "initialization residual does not depend on the free variables"
            )
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        lam = 1.0
        improved = False
        for _ in range(30):
            y_try = y.copy()
            y_try[idx_free] += lam * step
            r_try = res_of(y_try)
            n_try = float(np.max(np.abs(r_try)))
            if n_try < norm:
                y, r, norm = y_try, r_try, n_try
                improved = True
                break
            lam *= 0.5
        if not improved:
            raise InconsistentInitError(f"initialization Newton stagnated at {norm:.3e}")
    else:
        raise InconsistentInitError(f"initialization did not converge, residual {norm:.3e}")

    if lo is not None:
        clipped = np.clip(y[idx_free], lo[idx_free], hi[idx_free])
        if not np.array_equal(clipped, y[idx_free]):
            cand = y.copy()
            over_hi = bool(np.any(y[idx_free] > hi[idx_free]))
            cand[idx_free] = clipped
            raise InfeasibleInitError(
                "consistent point lies outside bounds", cand, "hi" if over_hi else "lo"
            )
    return y
