import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stefan_oc.metrics import BenchReport, ErrorSpec, benchmark, error_norm


class SyntheticReport:
    """Minimal trajectory stand-in driven by closed-form series."""

    def __init__(self, t_end, theta_avg=None, s=None, t_start=0.0):
        self.t_start = t_start
        self.t_end = t_end
        self._theta_avg = theta_avg
        self._s = s

    def theta_avg_at(self, t):
        return self._theta_avg(np.asarray(t, dtype=float))

    def s_at(self, t):
        return self._s(np.asarray(t, dtype=float))


def test_error_spec_validation():
    with pytest.raises(ValueError):
        ErrorSpec("temperature", 0.04)
    with pytest.raises(ValueError):
        ErrorSpec("temperature_rate", 0.04, d_tau_sample=0.0)


def test_error_norm_zero_at_setpoint():
    rep = SyntheticReport(10.0, theta_avg=lambda t: 0.04 * t)
    assert error_norm(rep, ErrorSpec("temperature_rate", 0.04)) == pytest.approx(0.0, abs=1e-14)


def test_error_norm_constant_offset():
    delta = 0.013
    rep = SyntheticReport(10.0, s=lambda t: 1.0 - (0.1 + delta) * t)
    got = error_norm(rep, ErrorSpec("interface_velocity", -0.1))
    assert got == pytest.approx(delta, rel=1e-12)


def test_error_norm_sinusoid_rms():
    # rate deviation sin(t) over whole periods has RMS 1/sqrt(2)
    t_end = 8 * math.pi
    rep = SyntheticReport(t_end, theta_avg=lambda t: 0.04 * t + (1.0 - np.cos(t)))
    spec = ErrorSpec("temperature_rate", 0.04)
    got = error_norm(rep, spec)
    # independent oracle: direct summation on the same grid
    n = int(np.floor(t_end / spec.d_tau_sample + 1e-9))
    grid = spec.d_tau_sample * np.arange(n + 1)
    series = 0.04 * grid + 1.0 - np.cos(grid)
    rate = np.diff(series) / spec.d_tau_sample
    direct = math.sqrt(np.mean((rate - 0.04) ** 2))
    assert got == pytest.approx(direct, rel=1e-12)
    assert got == pytest.approx(1.0 / math.sqrt(2.0), rel=2e-3)


def test_error_norm_depends_only_on_grid_values():
    # two stand-ins with the same dense series but different internal
    # sampling produce identical norms
    a = SyntheticReport(5.0, s=lambda t: 1.0 - 0.08 * t)
    b = SyntheticReport(5.0, s=lambda t: 1.0 - 0.08 * np.asarray(t))
    spec = ErrorSpec("interface_velocity", -0.1)
    assert error_norm(a, spec) == error_norm(b, spec)


@given(st.floats(-0.2, 0.2), st.floats(0.01, 0.1))
def test_error_norm_nonnegative_zero_iff_matched(offset, amp):
    rep = SyntheticReport(6.0, theta_avg=lambda t: (0.04 + offset) * t + amp * np.sin(t))
    got = error_norm(rep, ErrorSpec("temperature_rate", 0.04))
    assert got >= 0.0
    if offset != 0.0 or amp != 0.0:
        assert got > 0.0


def test_error_norm_too_short():
    rep = SyntheticReport(0.01, theta_avg=lambda t: t)
    with pytest.raises(ValueError):
        error_norm(rep, ErrorSpec("temperature_rate", 0.04))


# ------------------------------------------------------------------ benchmark


class FakeClock:
    """Deterministic clock: each (start, stop) pair spans the next duration."""

    def __init__(self, durations):
        self.durations = list(durations)
        self.now = 0.0
        self.calls = 0

    def __call__(self):
        self.calls += 1
        if self.calls % 2 == 0:  # stop call: advance by one task duration
            self.now += self.durations.pop(0)
        return self.now


def test_benchmark_stops_at_min_repeats_when_stable():
    clock = FakeClock([1.0] * 50)
    report = benchmark(lambda: None, min_repeats=10, clock=clock)
    assert report.repeats == 10
    assert report.mean_wall_time == pytest.approx(1.0)
    assert report.std_wall_time == 0.0
    assert not report.flagged
    assert report.relative_std < 0.05


def test_benchmark_flags_unstable_tasks():
    clock = FakeClock([1.0, 3.0] * 60)
    report = benchmark(lambda: None, min_repeats=10, max_repeats=30, clock=clock)
    assert report.flagged
    assert report.repeats == 30
    assert report.relative_std >= 0.05
    assert len(report.times) == 30


def test_benchmark_discards_warmup_and_reports_error():
    calls = {"n": 0}

    def task():
        calls["n"] += 1
        return calls["n"]

    clock = FakeClock([2.0] * 40)
    report = benchmark(task, min_repeats=10, clock=clock, error_of=lambda r: float(r))
    # warm-up run happened but is not timed
    assert calls["n"] == report.repeats + 1
    assert report.error_norm == float(calls["n"])


def test_benchmark_validates_min_repeats():
    with pytest.raises(ValueError):
        benchmark(lambda: None, min_repeats=0)


def test_benchmark_real_clock_smoke():
    report = benchmark(lambda: sum(range(2000)), min_repeats=10, max_repeats=60)
    assert report.repeats >= 10
    assert report.mean_wall_time > 0
