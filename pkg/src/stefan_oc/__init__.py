"""Optimal control of a cylindrical two-phase melting front.

Two solution routes for heater-temperature optimal control problems on a
moving-boundary (melting) model: a simulation-based route that recasts the
objective as an algebraic equation and integrates the resulting DAE system,
and a conventional single-shooting optimization baseline.
"""

from stefan_oc.model import (
    ConfigError,
    FrontRangeError,
    ModelParams,
    StateDerivative,
    StefanModel,
    StefanState,
    average_temperature,
    feasible_velocity_bound,
    make_model,
    quasi_steady_velocity,
    rhs,
)
from stefan_oc.dae import (
    CollocationConfig,
    DaeSystem,
    EventSpec,
    InconsistentInitError,
    InfeasibleInitError,
    IntegrationFailure,
    NewtonStagnation,
    Trajectory,
    collocate,
    consistent_init,
    integrate_index1,
)
from stefan_oc.ocp import (
    MinTime,
    OcpSpec,
    ReformulatedDae,
    Regime,
    SolveReport,
    SwitchEvent,
    TrackInterfaceVelocity,
    TrackTemperatureRate,
    detect_and_switch,
    reformulate,
    solve_simulation_based,
    thawing_time,
)
from stefan_oc.shooting import (
    ControlParam,
    NlpConfig,
    eval_control,
    objective,
    solve_shooting,
)
from stefan_oc.metrics import BenchReport, ErrorSpec, benchmark, error_norm

__version__ = "0.1.0"
