"""Tracking-error norms and the wall-clock benchmarking protocol."""

from __future__ import annotations

import gc
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = ["ErrorSpec", "BenchReport", "error_norm", "benchmark"]

QUANTITIES = ("temperature_rate", "interface_velocity")


@dataclass(frozen=True)
class ErrorSpec:
    """What to measure and on which uniform sampling grid."""

    quantity: str
    setpoint: float
    d_tau_sample: float = 0.05

    def __post_init__(self) -> None:
        if self.quantity not in QUANTITIES:
            raise ValueError(f"quantity must be one of {QUANTITIES}, got {self.quantity!r}")
        if not self.d_tau_sample > 0:
            raise ValueError("d_tau_sample must be positive")


def error_norm(report, spec: ErrorSpec) -> float:
    """Root-mean-square deviation of the tracked rate from its setpoint.

    The underlying quantity (average liquid temperature or interface
    position) is resampled from the dense interpolant on the uniform grid of
    step ``d_tau_sample``; rates are forward finite differences on that
    grid.  Depends only on the interpolant at grid times, not on where the
    solver placed its samples.

    ``report`` needs ``t_start``/``t_end`` and, per quantity,
    ``theta_avg_at`` or ``s_at``.
    """
    t0, t1 = float(report.t_start), float(report.t_end)
    n_intervals = int(np.floor((t1 - t0) / spec.d_tau_sample + 1e-9))
    if n_intervals < 1:
        raise ValueError("trajectory shorter than two sampling points")
    grid = t0 + spec.d_tau_sample * np.arange(n_intervals + 1)
    if spec.quantity == "temperature_rate":
        q = np.asarray(report.theta_avg_at(grid), dtype=float)
    else:
        q = np.asarray(report.s_at(grid), dtype=float)
    rate = np.diff(q) / spec.d_tau_sample
    dev = rate - spec.setpoint
    return float(np.sqrt(np.mean(dev**2)))


@dataclass
class BenchReport:
    """Wall-time statistics for one benchmarked task."""

    mean_wall_time: float
    std_wall_time: float
    repeats: int
    times: list[float] = field(default_factory=list)
    error_norm: Optional[float] = None
    flagged: bool = False  # true when the 5% stability target was not reached

    @property
    def relative_std(self) -> float:
        return self.std_wall_time / self.mean_wall_time if self.mean_wall_time else float("inf")


def benchmark(
    task: Callable[[], object],
    min_repeats: int = 10,
    *,
    max_repeats: int = 100,
    rel_std_target: float = 0.05,
    clock: Callable[[], float] = time.perf_counter,
    error_of: Optional[Callable[[object], float]] = None,
) -> BenchReport:
    """Repeat a deterministic task until its wall-time statistics stabilize.

    One warm-up run is discarded, then the task repeats until at least
    ``min_repeats`` timed runs have accumulated and the sample standard
    deviation is below ``rel_std_target`` of the mean.  Hitting
    ``max_repeats`` without stabilizing returns a flagged report.
    """
    if min_repeats < 1:
        raise ValueError("min_repeats must be >= 1")
    result = task()  # warm-up, excluded from statistics
    times: list[float] = []
    while True:
        # collector pauses otherwise dominate the variance of short tasks
        gc.collect()
        gc_was_enabled = gc.isenabled()
        gc.disable()
        try:
            start = clock()
            result = task()
            times.append(clock() - start)
        finally:
            if gc_was_enabled:
                gc.enable()
        if len(times) >= min_repeats:
            mean = float(np.mean(times))
            std = float(np.std(times, ddof=1)) if len(times) > 1 else 0.0
            if mean > 0 and std / mean < rel_std_target:
                return BenchReport(
                    mean, std, len(times), times,
                    error_of(result) if error_of else None,
                )
        if len(times) >= max_repeats:
            mean = float(np.mean(times))
            std = float(np.std(times, ddof=1))
            return BenchReport(
                mean, std, len(times), times,
                error_of(result) if error_of else None,
                flagged=True,
            )
