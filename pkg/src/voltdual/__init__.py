"""Distributed voltage regulation with dual incentive signals.

The operator prices voltage-limit violations; PV inverters respond every
iteration and thermostatic loads every ``M`` iterations by sampling a
discrete power rate whose mean equals their relaxed optimum.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AbortedRunError,
    ClockError,
    ConfigError,
    DivergenceError,
    InfeasibleError,
    IngestionError,
    ParameterError,
    RangeError,
    ShapeError,
    TopologyError,
    VoltDualError,
)
from .grid import (  # noqa: E402
    FeederTopology,
    Line,
    LinearGridModel,
    NetworkState,
    ac_power_flow,
    build_linear_model,
    constraint_residual,
    linear_voltage,
)
from .devices import (  # noqa: E402
    CustomerDecision,
    CustomerSpec,
    PvSpec,
    TclSpec,
    customer_best_response,
    customer_cost,
    fast_conditional_best_response,
    pv_best_response,
    tcl_hull,
    tcl_relaxed_best_response,
)
from .recovery import (  # noqa: E402
    RateGrid,
    RobustBounds,
    RoundingOutcome,
    bracket_rates,
    robust_limits,
    two_point_sample,
    variance_upper_bound,
)
from .dual import (  # noqa: E402
    DualState,
    IncentiveSignal,
    SimClock,
    StepsizeSchedule,
    compute_signals,
    dual_ascent_step,
    dual_function_value,
    lagrangian_value,
    stepsize,
)
from .problem import DeviceSetpoints, FeederProblem  # noqa: E402
from .oracle import OracleResult, exact_relaxation_check, oracle_solve_P3  # noqa: E402
from .config import ScenarioConfig  # noqa: E402
from .sim import RunningStats, Trace, TraceRecord, run_two_timescale, update_running_stats  # noqa: E402
from .analysis import scenario_variance_report, uncontrolled_voltage  # noqa: E402
from .scenario import RunManifest, build_problem, ingest_profiles, load_scenario  # noqa: E402
from .reports import emit_reports  # noqa: E402
