"""Aerial base station placement and power allocation simulator.

A discrete-time simulator of a single flying base station serving
mobile ground users over interference-coupled access and backhaul
links, together with the solvers that per time step choose its access
powers, the feeding ground station's powers, and its next position.
"""
from .channel import (
    ChannelAssignment,
    Network,
    Position3D,
    PowerAllocation,
    RadioLink,
    backhaul_capacity,
    dbm_to_watts,
    friis_coefficient,
    sum_capacity,
    user_capacities,
    watts_to_dbm,
)
from .errors import (
    ConfigValidationError,
    FlowInfeasibleError,
    InfeasibleError,
    PowerBudgetInfeasibleError,
    QoSInfeasibleError,
    RegionInfeasibleError,
)
from .access import AccessProblem, solve_access
from .backhaul import BackhaulProblem, solve_backhaul
from .harness import run, sweep_cmin, sweep_users, trace_convergence
from .orchestrator import (
    SimState,
    StepConfig,
    StepMetrics,
    SystemParams,
    audit_constraints,
    baseline_centroid_track,
    baseline_static,
    make_system,
    time_step,
)
from .positioning import (
    FeasibilityRegion,
    PositionLimits,
    build_region,
    position_step,
    project,
)
from .propulsion import PropulsionParams, min_power_speed, propulsion_power, speed_threshold
from .scenario import ScenarioConfig, World, build_network, build_system, init_scenario, mobility_step

__version__ = "0.1.0"
