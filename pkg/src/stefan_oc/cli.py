"""Command-line front end: presets, config ingestion, CSV/JSON emission."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from stefan_oc.dae import CollocationConfig, EventSpec, IntegrationFailure
from stefan_oc.metrics import BenchReport, ErrorSpec, benchmark, error_norm
from stefan_oc.model import ConfigError, ModelParams, make_model
from stefan_oc.ocp import (
    MinTime,
    OcpSpec,
    SolveReport,
    TrackInterfaceVelocity,
    TrackTemperatureRate,
    solve_simulation_based,
    thawing_time,
)
from stefan_oc.presets import PRESET_NAMES, Preset, preset
from stefan_oc.shooting import ControlParam, NlpConfig, simulate_controls, solve_shooting

__all__ = ["main", "RunConfig", "cmd_simulate", "cmd_solve", "cmd_sweep", "cmd_benchmark"]


@dataclass
class RunConfig:
    """Fully resolved run description (preset + config file + flags)."""

    spec: OcpSpec
    method: str = "sim"
    backend: str = "auto"
    collocation: CollocationConfig = field(
        default_factory=lambda: CollocationConfig(d_tau=0.12, nodes=5)
    )
    nlp: NlpConfig = field(default_factory=NlpConfig)
    control_kind: str = "linear"
    control_n_c: int = 12
    out_dir: Path = Path(".")
    simulate_theta_b: float = 1.0
    simulate_control_file: Optional[Path] = None
    setpoints: list[float] = field(default_factory=list)
    bench_min_repeats: int = 10
    bench_shooting_max_iter: int = 15
    preset_name: Optional[str] = None

    def echo(self) -> dict:
        obj = self.spec.objective
        return {
            "preset": self.preset_name,
            "model": self.spec.model.to_dict(),
            "problem": {
                "objective": {
                    "kind": obj.kind,
                    **({"setpoint": obj.setpoint} if hasattr(obj, "setpoint") else {}),
                },
                "control_bounds": list(self.spec.control_bounds),
                "horizon": self.spec.horizon if self.spec.horizon is not None else "melt",
                "theta_b_guess": self.spec.theta_b_guess,
            },
            "method": self.method,
            "backend": self.backend,
            "collocation": {
                "d_tau": self.collocation.d_tau,
                "nodes": self.collocation.nodes,
                "newton_tol": self.collocation.newton_tol,
            },
            "nlp": {
                "opt_tol": self.nlp.opt_tol,
                "integ_tol": self.nlp.integ_tol,
                "quad_dtau": self.nlp.quad_dtau,
                "fd_step": self.nlp.fd_step,
                "max_iter": self.nlp.max_iter,
            },
            "control": {"kind": self.control_kind, "n_c": self.control_n_c},
            "setpoints": self.setpoints,
        }


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def resolve_config(args) -> RunConfig:
    """Merge preset, optional JSON config, and command-line flags."""
    file_cfg: dict = {}
    if getattr(args, "config", None):
        file_cfg = json.loads(Path(args.config).read_text())
        if not isinstance(file_cfg, dict):
            raise ConfigError("config file must contain a JSON object")

    preset_name = getattr(args, "preset", None) or (
        file_cfg.get("problem") if isinstance(file_cfg.get("problem"), str) else None
    )
    base: Optional[Preset] = preset(preset_name) if preset_name else None

    spec = base.spec if base else None
    if isinstance(file_cfg.get("problem"), dict):
        spec = OcpSpec.from_dict(file_cfg["problem"])
    if spec is None:
        raise ConfigError("no problem given: pass --preset or a config with 'problem'")
    if "model" in file_cfg:
        model = ModelParams.from_dict(file_cfg["model"])
        spec = OcpSpec(
            objective=spec.objective,
            model=model,
            control_bounds=spec.control_bounds,
            horizon=spec.horizon,
            theta_b_guess=spec.theta_b_guess,
        )

    cfg = RunConfig(spec=spec, preset_name=preset_name)
    if base:
        cfg.collocation = base.collocation
        cfg.control_kind = base.shooting_kind
        cfg.control_n_c = base.shooting_n_c
        cfg.nlp = base.nlp
        cfg.bench_shooting_max_iter = base.bench_max_iter
        if base.sweep_setpoints:
            cfg.setpoints = list(base.sweep_setpoints)

    if "collocation" in file_cfg:
        cfg.collocation = CollocationConfig(**file_cfg["collocation"])
    if "nlp" in file_cfg:
        cfg.nlp = NlpConfig(**file_cfg["nlp"])
    if "control" in file_cfg:
        ctl = file_cfg["control"]
        cfg.control_kind = ctl.get("kind", cfg.control_kind)
        cfg.control_n_c = int(ctl.get("n_c", cfg.control_n_c))
    if "backend" in file_cfg:
        cfg.backend = file_cfg["backend"]
    if "method" in file_cfg:
        cfg.method = file_cfg["method"]
    if "setpoints" in file_cfg:
        cfg.setpoints = [float(v) for v in file_cfg["setpoints"]]
    sim_cfg = file_cfg.get("simulate", {})
    if "theta_b" in sim_cfg:
        cfg.simulate_theta_b = float(sim_cfg["theta_b"])
    if "control_file" in sim_cfg:
        cfg.simulate_control_file = Path(sim_cfg["control_file"])
    bench_cfg = file_cfg.get("bench", {})
    if "min_repeats" in bench_cfg:
        cfg.bench_min_repeats = int(bench_cfg["min_repeats"])
    if "shooting_max_iter" in bench_cfg:
        cfg.bench_shooting_max_iter = int(bench_cfg["shooting_max_iter"])

    if getattr(args, "method", None):
        cfg.method = args.method
    if getattr(args, "kind", None):
        cfg.control_kind = args.kind
    if getattr(args, "nc", None):
        cfg.control_n_c = args.nc
    if getattr(args, "theta_b", None) is not None:
        cfg.simulate_theta_b = args.theta_b
    if getattr(args, "setpoints", None):
        cfg.setpoints = [float(v) for v in args.setpoints.split(",") if v.strip()]
    if getattr(args, "out", None):
        cfg.out_dir = Path(args.out)
    return cfg


# --------------------------------------------------------------------------
# trajectory serialization
# --------------------------------------------------------------------------


def _trajectory_rows(report: SolveReport):
    model = report.model
    n = model.n
    header = ["tau", "s", "ds_dtau", "theta_avg", "dtheta_avg_dtau", "theta_b"]
    header += [f"theta1_{i:02d}" for i in range(n)]
    header += [f"theta2_{j:02d}" for j in range(1, n + 1)]
    taus = report.taus
    states = report.states
    core = states[:, : 2 * n + 1]
    tb = states[:, -1]
    ds = model.interface_velocity_flat(core)
    tavg = model.theta_avg_flat(core)
    deriv = model.rhs_flat(core, tb)
    d2 = deriv[:, model.sl_theta2]
    sel = d2 if model.params.avg_include_wall else d2[:, :-1]
    dtavg = sel.mean(axis=1)
    rows = []
    for k in range(len(taus)):
        row = [taus[k], states[k, model.idx_s], ds[k], tavg[k], dtavg[k], tb[k]]
        row += list(states[k, model.sl_theta1])
        row += list(states[k, model.sl_theta2])
        rows.append(row)
    return header, rows


def _write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _report_dict(report: SolveReport) -> dict:
    obj = report.spec.objective
    err = None
    if isinstance(obj, TrackTemperatureRate):
        err = error_norm(report, ErrorSpec("temperature_rate", obj.setpoint))
    elif isinstance(obj, TrackInterfaceVelocity):
        err = error_norm(report, ErrorSpec("interface_velocity", obj.setpoint))
    out = {
        "method": report.method,
        "objective_kind": obj.kind,
        "setpoint": getattr(obj, "setpoint", None),
        "error_norm": err,
        "thawing_time": thawing_time(report),
        "t_end": report.t_end,
        "wall_time_s": report.wall_time,
        "switch_events": [
            {
                "tau": ev.tau,
                "from": ev.from_regime.label(),
                "to": ev.to_regime.label(),
                "bound": ev.bound,
            }
            for ev in report.switch_events
        ],
        "flags": report.flags,
        "stats": _jsonable(report.stats),
    }
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def _constant_control_report(cfg: RunConfig) -> SolveReport:
    """Plain forward simulation under a constant or file-provided control."""
    from stefan_oc.ocp import Regime, SegmentRecord

    model = make_model(cfg.spec.model)
    horizon = cfg.spec.horizon if cfg.spec.horizon is not None else 100.0
    if cfg.simulate_control_file is not None:
        table = np.loadtxt(cfg.simulate_control_file, delimiter=",", ndmin=2)
        if table.shape[1] != 2:
            raise ConfigError("control file must have two columns: tau, theta_b")
        # resample onto a uniform piecewise-linear parameterization
        n_c = max(len(table) - 1, 1) * 4
        grid = np.linspace(0.0, horizon, n_c + 1)
        nodes = np.interp(grid, table[:, 0], table[:, 1])
        cp = ControlParam("linear", n_c, nodes, horizon)
    else:
        cp = ControlParam("constant", 1, np.array([cfg.simulate_theta_b]), horizon)
    import time as _time

    t0 = _time.perf_counter()
    sims = simulate_controls(model, [cp], cfg.nlp.integ_tol)
    wall = _time.perf_counter() - t0
    sim = sims[0]
    if sim.failed:
        raise IntegrationFailure("simulation failed", None)
    from stefan_oc.shooting import _material_trajectory

    traj = _material_trajectory(model, cp, sim)
    return SolveReport(
        method="simulate",
        spec=cfg.spec,
        model=model,
        segments=[SegmentRecord(Regime("tracking"), traj, "bdf")],
        switch_events=[],
        wall_time=wall,
        stats={},
        flags={"converged": True},
        control=cp,
    )


def _solve_with_method(cfg: RunConfig, *, shooting_max_iter: Optional[int] = None) -> SolveReport:
    if cfg.method == "sim":
        return solve_simulation_based(cfg.spec, cfg.collocation, backend=cfg.backend,
                                      integ_tol=cfg.nlp.integ_tol)
    if cfg.method == "shooting":
        nlp = cfg.nlp
        if shooting_max_iter is not None:
            nlp = NlpConfig(opt_tol=nlp.opt_tol, integ_tol=nlp.integ_tol,
                            quad_dtau=nlp.quad_dtau, fd_step=nlp.fd_step,
                            max_iter=shooting_max_iter)
        return solve_shooting(cfg.spec, cfg.control_kind, cfg.control_n_c, nlp)
    raise ConfigError(f"unknown method {cfg.method!r}")


def cmd_simulate(cfg: RunConfig) -> int:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    report = _constant_control_report(cfg)
    header, rows = _trajectory_rows(report)
    _write_csv(cfg.out_dir / "trajectory.csv", header, rows)
    run_info = {"config": cfg.echo(), "stats": _jsonable(report.stats),
                "thawing_time": thawing_time(report), "wall_time_s": report.wall_time}
    (cfg.out_dir / "run.json").write_text(json.dumps(run_info, indent=2) + "\n")
    return 0


def cmd_solve(cfg: RunConfig) -> int:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    report = _solve_with_method(cfg)
    header, rows = _trajectory_rows(report)
    _write_csv(cfg.out_dir / "trajectory.csv", header, rows)
    (cfg.out_dir / "report.json").write_text(
        json.dumps({"config": cfg.echo(), **_report_dict(report)}, indent=2) + "\n"
    )
    if cfg.method == "shooting" and report.control is not None:
        bp = report.control.breakpoints
        nodes = report.control.nodes
        if report.control.kind == "constant":
            rows = [[bp[i], nodes[i]] for i in range(len(nodes))]
            header = ["interval_start", "node"]
        else:
            rows = [[bp[i], nodes[i]] for i in range(len(nodes))]
            header = ["breakpoint", "node"]
        _write_csv(cfg.out_dir / "nodes.csv", header, rows)
    return 0


def _sweep_one(cfg: RunConfig, sp: float):
    obj = cfg.spec.objective
    if isinstance(obj, TrackTemperatureRate):
        new_obj = TrackTemperatureRate(sp)
        quantity = "temperature_rate"
    elif isinstance(obj, TrackInterfaceVelocity):
        new_obj = TrackInterfaceVelocity(sp)
        quantity = "interface_velocity"
    else:
        raise ConfigError("sweep requires a tracking objective")
    spec = OcpSpec(
        objective=new_obj,
        model=cfg.spec.model,
        control_bounds=cfg.spec.control_bounds,
        horizon=cfg.spec.horizon,
        theta_b_guess=cfg.spec.theta_b_guess,
    )
    report = solve_simulation_based(spec, cfg.collocation, backend=cfg.backend,
                                    integ_tol=cfg.nlp.integ_tol)
    err = error_norm(report, ErrorSpec(quantity, sp))
    return report, err


def cmd_sweep(cfg: RunConfig) -> int:
    if not cfg.setpoints:
        raise ConfigError("sweep requires a nonempty setpoint list (--setpoints)")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    max_workers = int(os.environ.get("STEFAN_OC_THREADS", "4")) or 1
    max_workers = max(1, min(max_workers, len(cfg.setpoints)))
    results: dict[float, object] = {}
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = {sp: pool.submit(_sweep_one, cfg, sp) for sp in cfg.setpoints}
        for sp, fut in futures.items():
            try:
                results[sp] = fut.result()
            except Exception as exc:  # individual failures recorded, sweep continues
                results[sp] = exc

    header = ["setpoint", "tau", "s", "ds_dtau", "theta_avg", "dtheta_avg_dtau",
              "theta_b", "regime"]
    rows = []
    ev_rows = []
    summary = {}
    for sp in cfg.setpoints:
        res = results[sp]
        if isinstance(res, Exception):
            summary[str(sp)] = {"status": "failed", "error": str(res)}
            continue
        report, err = res
        summary[str(sp)] = {
            "status": "ok",
            "error_norm": err,
            "t_end": report.t_end,
            "thawing_time": thawing_time(report),
            "n_switches": len(report.switch_events),
        }
        regimes = report.regime_at(report.taus)
        model = report.model
        core = report.states[:, : 2 * model.n + 1]
        tb = report.states[:, -1]
        ds = model.interface_velocity_flat(core)
        tavg = model.theta_avg_flat(core)
        deriv = model.rhs_flat(core, tb)
        d2 = deriv[:, model.sl_theta2]
        selw = d2 if model.params.avg_include_wall else d2[:, :-1]
        dtavg = selw.mean(axis=1)
        for k in range(len(report.taus)):
            rows.append(
                [sp, report.taus[k], report.states[k, model.idx_s], ds[k],
                 tavg[k], dtavg[k], tb[k], regimes[k]]
            )
        for ev in report.switch_events:
            ev_rows.append([sp, ev.tau, ev.from_regime.label(), ev.to_regime.label(),
                            ev.bound or ""])

    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) if not isinstance(v, str) else v for v in row))
    (cfg.out_dir / "sweep.csv").write_text("\n".join(lines) + "\n")
    ev_lines = [",".join(["setpoint", "tau", "from_regime", "to_regime", "bound"])]
    for row in ev_rows:
        ev_lines.append(",".join(_fmt(v) if isinstance(v, (int, float, np.floating)) else str(v) for v in row))
    (cfg.out_dir / "sweep_events.csv").write_text("\n".join(ev_lines) + "\n")
    (cfg.out_dir / "sweep.json").write_text(
        json.dumps({"config": cfg.echo(), "results": summary}, indent=2) + "\n"
    )
    return 0 if all(v.get("status") == "ok" for v in summary.values()) else 0


def cmd_benchmark(cfg: RunConfig) -> int:
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    obj = cfg.spec.objective
    if isinstance(obj, TrackTemperatureRate):
        espec = ErrorSpec("temperature_rate", obj.setpoint)
    elif isinstance(obj, TrackInterfaceVelocity):
        espec = ErrorSpec("interface_velocity", obj.setpoint)
    else:
        espec = None

    def err_of(report):
        return error_norm(report, espec) if espec else None

    sim_cfg = RunConfig(**{**cfg.__dict__, "method": "sim"})
    shoot_cfg = RunConfig(**{**cfg.__dict__, "method": "shooting"})
    bench_sim = benchmark(
        lambda: _solve_with_method(sim_cfg),
        min_repeats=cfg.bench_min_repeats, error_of=err_of,
    )
    bench_shoot = benchmark(
        lambda: _solve_with_method(shoot_cfg, shooting_max_iter=cfg.bench_shooting_max_iter),
        min_repeats=cfg.bench_min_repeats, error_of=err_of,
    )
    ratio = bench_shoot.mean_wall_time / bench_sim.mean_wall_time
    header = ["method", "mean_wall_time_s", "std_wall_time_s", "repeats",
              "error_norm", "speedup_ratio", "flagged"]
    rows = [
        ["sim", bench_sim.mean_wall_time, bench_sim.std_wall_time, bench_sim.repeats,
         bench_sim.error_norm if bench_sim.error_norm is not None else float("nan"),
         ratio, int(bench_sim.flagged)],
        ["shooting", bench_shoot.mean_wall_time, bench_shoot.std_wall_time,
         bench_shoot.repeats,
         bench_shoot.error_norm if bench_shoot.error_norm is not None else float("nan"),
         ratio, int(bench_shoot.flagged)],
    ]
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(v) if isinstance(v, str) else _fmt(v) for v in row))
    (cfg.out_dir / "bench.csv").write_text("\n".join(lines) + "\n")
    (cfg.out_dir / "bench.json").write_text(
        json.dumps({"config": cfg.echo(), "speedup_ratio": ratio,
                    "sim": _jsonable(bench_sim.__dict__),
                    "shooting": _jsonable(bench_shoot.__dict__)}, indent=2) + "\n"
    )
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stefan-oc",
        description="Moving-boundary optimal control: simulation-based DAE "
        "reformulation vs. single-shooting baseline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--preset", choices=PRESET_NAMES, help="named case study")
        p.add_argument("--out", default=".", help="output directory")

    p_sim = sub.add_parser("simulate", help="forward simulation under a fixed control")
    common(p_sim)
    p_sim.add_argument("--theta-b", type=float, default=None,
                       help="constant heater value (default 1.0)")

    p_solve = sub.add_parser("solve", help="solve one problem with one method")
    common(p_solve)
    p_solve.add_argument("--method", choices=("sim", "shooting"), default=None)
    p_solve.add_argument("--nc", type=int, default=None, help="control interval count")
    p_solve.add_argument("--kind", choices=("constant", "linear"), default=None)

    p_sweep = sub.add_parser("sweep", help="setpoint sensitivity sweep (sim method)")
    common(p_sweep)
    p_sweep.add_argument("--setpoints", default=None, help="comma-separated setpoints")

    p_bench = sub.add_parser("benchmark", help="wall-time benchmark of both methods")
    common(p_bench)
    p_bench.add_argument("--nc", type=int, default=None)
    p_bench.add_argument("--kind", choices=("constant", "linear"), default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        if args.command == "benchmark":
            return cmd_benchmark(cfg)
        parser.error(f"unknown command {args.command}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # hard solver failure
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
