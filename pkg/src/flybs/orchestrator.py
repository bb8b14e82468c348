"""Per-time-step alternation of the three subproblem solvers.

Each simulated step repeats access-power, backhaul-power and position
updates in that order until the position stops moving (or an iteration
cap is hit), then audits every constraint of the joint problem exactly
at the final state.  The step never returns a state with lower sum
capacity than it entered with; on solver infeasibility it falls back to
holding position and flags the step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .access import AccessProblem, qos_power_floors, solve_access
from .backhaul import (
    BackhaulProblem,
    channel_power_caps,
    flow_residual,
    objective as backhaul_objective,
    solve_backhaul,
)
from .channel import (
    Network,
    PowerAllocation,
    backhaul_capacity,
    interference_at_users,
    sum_capacity,
    user_capacities,
)
from .errors import InfeasibleError
from .positioning import PositionLimits, motion_radius, position_step
from .propulsion import PropulsionParams, propulsion_power, speed_threshold

__all__ = [
    "StepConfig",
    "SystemParams",
    "SimState",
    "StepMetrics",
    "make_system",
    "build_access_problem",
    "build_backhaul_problem",
    "boost_flow_headroom",
    "audit_constraints",
    "time_step",
    "baseline_static",
    "baseline_centroid_track",
    "RESIDUAL_KEYS",
]

RESIDUAL_KEYS = (
    "qos", "altitude", "speed", "propulsion", "flow", "gbs_budget", "fly_budget",
)

FEASIBLE_TOL = 1e-6


@dataclass
class StepConfig:
    """Knobs of the per-step alternation."""

    epsilon: float = 0.1        # m, movement threshold ending the loop
    max_iters: int = 20
    delta_k: float = 1.0        # s, step length
    p_pr_threshold: float = 200.0  # W, propulsion cap
    v_max: float = 25.0         # m/s, hard speed cap
    tau_ratio: float = 1e-3     # flow-bound grid step as a fraction of p_fly_max
    xi: float = 0.01            # ladder step of the radial fit
    # the per-step warm start (incumbent powers) makes random multistart
    # redundant inside the loop; the solver always adds its two corner
    # initialisations, and its own default stays 8
    backhaul_starts: int = 0
    # the capacity surrogate is concave, so two ascent starts suffice
    # inside the loop; the positioning module's own default stays 4
    ref_starts: int = 2
    # reference-point convergence inside the loop: millimetres are three
    # orders below the movement threshold, and the radial fit re-anchors
    # on the reference anyway; the positioning module's default stays 1e-7
    ref_tol: float = 1e-3
    # fraction of the served access sum kept as backhaul flow headroom
    # while the position is still moving.  The backhaul solve spends as
    # little GBS power as carrying the access sum requires, leaving the
    # flow exactly tight; a position region built from a tight
    # allocation collapses to the current point because its worst-case
    # served bound grows faster over a move than the backhaul capacity
    # does.  Lifting the GBS powers until the capacity clears the served
    # sum by this fraction buys the position room to travel; the final
    # power solve at the settled position shrinks the lift again.
    flow_slack: float = 0.1
    # smaller headroom kept on the *emitted* state.  A state handed to
    # the next step with the flow exactly tight turns unlawful as soon
    # as approaching users push its served sum past its frozen backhaul
    # capacity, and the never-worse guard then latches onto the stale
    # state for many steps; the margin absorbs that drift so the
    # handed-over state stays feasible.  A whole cluster turning toward
    # the craft can eat ~0.5% in one step when users are few, so the
    # margin is sized for a short stretch of such steps; where the flow
    # is slack (large networks) it binds nothing and costs nothing.
    emit_margin: float = 0.02


@dataclass(frozen=True)
class SystemParams:
    """Scenario-wide constants shared by every step."""

    c_min: np.ndarray       # (N,) bits/s
    p_fly_max: float        # watts
    p_gbs_max: float        # watts
    propulsion: PropulsionParams
    v_threshold: float      # m/s, from the propulsion cap
    h_min: float
    h_max: float
    qos_radius_cap: float   # m
    backhaul_bracket: float  # m

    def __post_init__(self):
        object.__setattr__(self, "c_min", np.asarray(self.c_min, dtype=float))


def make_system(
    c_min,
    p_fly_max: float,
    p_gbs_max: float,
    propulsion: PropulsionParams,
    p_pr_threshold: float,
    h_min: float,
    h_max: float,
    scenario_diagonal: float,
    gbs_reach: float,
) -> SystemParams:
    """Precompute the propulsion speed limit; fails fast on a bad cap."""
    v_th = speed_threshold(p_pr_threshold, propulsion)
    return SystemParams(
        c_min=np.asarray(c_min, dtype=float),
        p_fly_max=p_fly_max,
        p_gbs_max=p_gbs_max,
        propulsion=propulsion,
        v_threshold=v_th,
        h_min=h_min,
        h_max=h_max,
        qos_radius_cap=10.0 * scenario_diagonal,
        backhaul_bracket=gbs_reach,
    )


@dataclass
class SimState:
    position: np.ndarray        # (3,)
    alloc: PowerAllocation

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)

    def copy(self) -> "SimState":
        return SimState(self.position.copy(), self.alloc.copy())


@dataclass
class StepMetrics:
    sum_capacity: float
    user_capacities: np.ndarray
    iterations: int
    feasible: bool
    residuals: dict[str, float]
    solver_failed: bool = False
    trace: list = field(default_factory=list)


def _limits(sys: SystemParams, cfg: StepConfig) -> PositionLimits:
    return PositionLimits(
        motion_radius=motion_radius(cfg.v_max, sys.v_threshold, cfg.delta_k),
        h_min=sys.h_min,
        h_max=sys.h_max,
        c_min=sys.c_min,
        qos_radius_cap=sys.qos_radius_cap,
        backhaul_bracket=sys.backhaul_bracket,
        xi=cfg.xi,
    )


def build_access_problem(
    pos, p_gbs, net: Network, sys: SystemParams, cfg: StepConfig
) -> AccessProblem:
    d = net.user_distances(pos)
    interf = interference_at_users(p_gbs, net)
    gain = (
        net.access.q_coeff * d ** (-net.access.pathloss_exp)
        / (net.access.noise_power + interf)
    )
    cap = backhaul_capacity(p_gbs, net.backhaul, net.gbs_distance(pos))
    return AccessProblem(
        gain=gain,
        bandwidth=np.broadcast_to(net.access.bandwidth, gain.shape).copy(),
        c_min=np.broadcast_to(sys.c_min, gain.shape).copy(),
        p_max=sys.p_fly_max,
        backhaul_cap=cap,
        tau=cfg.tau_ratio * sys.p_fly_max,
    )


def build_backhaul_problem(
    pos, p_fly, net: Network, sys: SystemParams
) -> BackhaulProblem:
    d = net.user_distances(pos)
    signal = net.access.q_coeff * p_fly * d ** (-net.access.pathloss_exp)
    d_fg = net.gbs_distance(pos)
    gbs_gain = (
        net.backhaul.q_coeff * d_fg ** (-net.backhaul.pathloss_exp)
        / net.backhaul.noise_power
    )
    n = signal.shape[0]
    s = net.assignment.n_channels
    return BackhaulProblem(
        signal=signal,
        interference_gain=net.interference_gains,
        noise=np.broadcast_to(net.access.noise_power, (n,)).copy(),
        bandwidth_user=np.broadcast_to(net.access.bandwidth, (n,)).copy(),
        c_min=np.broadcast_to(sys.c_min, (n,)).copy(),
        channel_of_user=net.assignment.user_to_channel,
        gbs_gain=np.broadcast_to(gbs_gain, (s,)).copy(),
        bandwidth_channel=np.broadcast_to(net.backhaul.bandwidth, (s,)).copy(),
        budget=sys.p_gbs_max,
    )


def boost_flow_headroom(
    bp: BackhaulProblem, p_gbs: np.ndarray, margin: float
) -> np.ndarray:
    """Lift GBS powers off the flow-tight point before the position moves.

    Blends from ``p_gbs`` toward the largest lawful powers (QoS caps
    scaled into the budget), trading a little served rate for backhaul
    headroom, and bisects for the smallest blend whose capacity clears
    the served sum by ``margin`` times.  Every blend respects the caps
    and the budget.  When even the top of the blend cannot reach the
    margin, the point with the smaller flow residual is kept.
    """
    if margin <= 0.0:
        return p_gbs
    top = np.minimum(channel_power_caps(bp), bp.budget)
    total = float(top.sum())
    if total > bp.budget:
        top *= bp.budget / total

    def margin_gap(p):
        return -flow_residual(bp, p) - margin * backhaul_objective(bp, p)

    if margin_gap(p_gbs) >= 0.0:
        return p_gbs
    if margin_gap(top) < 0.0:
        return top if flow_residual(bp, top) < flow_residual(bp, p_gbs) else p_gbs
    lo, hi = 0.0, 1.0
    # 2^-20 of the blend range resolves the boost to well under a microwatt
    for _ in range(20):
        mid = 0.5 * (lo + hi)
        if margin_gap(p_gbs + mid * (top - p_gbs)) >= 0.0:
            hi = mid
        else:
            lo = mid
    return p_gbs + hi * (top - p_gbs)


def audit_constraints(
    prev_pos, state: SimState, net: Network, sys: SystemParams, cfg: StepConfig
) -> dict[str, float]:
    """Signed, scale-normalised residuals of every constraint family.

    Each residual is (LHS - bound)/scale with its natural scale, so a
    value <= 0 means satisfied and magnitudes are comparable across
    families.  Capacities are evaluated exactly, no solver surrogates.
    """
    pos, alloc = state.position, state.alloc
    caps = user_capacities(pos, alloc, net)
    c_gf = backhaul_capacity(alloc.p_gbs, net.backhaul, net.gbs_distance(pos))
    v = float(np.linalg.norm(pos - np.asarray(prev_pos, dtype=float))) / cfg.delta_k
    qos_scale = np.maximum(sys.c_min, 1.0)
    alt_scale = max(sys.h_max, 1.0)
    return {
        "qos": float(np.max((sys.c_min - caps) / qos_scale)),
        "altitude": max(sys.h_min - pos[2], pos[2] - sys.h_max) / alt_scale,
        "speed": (v - cfg.v_max) / max(cfg.v_max, 1e-9),
        "propulsion": (propulsion_power(v, sys.propulsion) - cfg.p_pr_threshold)
        / max(cfg.p_pr_threshold, 1e-9),
        "flow": (float(caps.sum()) - c_gf) / max(c_gf, 1.0),
        "gbs_budget": max(
            float(alloc.p_gbs.sum()) - sys.p_gbs_max, -float(alloc.p_gbs.min())
        ) / sys.p_gbs_max,
        "fly_budget": max(
            float(alloc.p_fly.sum()) - sys.p_fly_max, -float(alloc.p_fly.min())
        ) / sys.p_fly_max,
    }


def fallback_allocation(pos, net: Network, sys: SystemParams) -> PowerAllocation:
    """Violation-minimising powers used when a subsolver is infeasible.

    Full equal backhaul split (maximum flow capacity for an uninformed
    scheme) and QoS floors on the access side, scaled into the budget
    when they do not fit.
    """
    s = net.assignment.n_channels
    p_gbs = np.full(s, sys.p_gbs_max / s)
    d = net.user_distances(pos)
    interf = interference_at_users(p_gbs, net)
    gain = (
        net.access.q_coeff * d ** (-net.access.pathloss_exp)
        / (net.access.noise_power + interf)
    )
    floors = (2.0 ** (sys.c_min / net.access.bandwidth) - 1.0) / gain
    total = float(floors.sum())
    if total > sys.p_fly_max:
        floors *= sys.p_fly_max / total
    return PowerAllocation(floors, p_gbs)


def _polish(
    pos, p_gbs_hint, net: Network, sys: SystemParams, cfg: StepConfig, seed: int
) -> SimState:
    """Final power solve at a settled position.

    Serves the largest lawful access sum against the hinted GBS powers,
    then spends the least GBS power that carries that sum exactly.  When
    the hint itself carried the access solve (gains and cap were built
    from it), the backhaul solve is feasible by construction.
    """
    ap = build_access_problem(pos, p_gbs_hint, net, sys, cfg)
    p_fly = solve_access(ap)
    bp = build_backhaul_problem(pos, p_fly, net, sys)
    p_gbs = solve_backhaul(
        bp, starts=cfg.backhaul_starts, seed=seed, extra_starts=(p_gbs_hint,)
    )
    p_gbs = boost_flow_headroom(bp, p_gbs, cfg.emit_margin)
    return SimState(np.asarray(pos, dtype=float).copy(), PowerAllocation(p_fly, p_gbs))


def time_step(
    state: SimState,
    net: Network,
    sys: SystemParams,
    cfg: StepConfig,
    seed: int = 0,
    record_trace: bool = False,
) -> tuple[SimState, StepMetrics]:
    """One simulated step: alternate the three solvers, audit, guard.

    The motion ball stays anchored at the entry position throughout the
    inner loop, so the audited speed constraint refers to the true
    displacement over the step.  The returned state is never worse (in
    sum capacity against the current user placement) than the entry
    state; when it would be, the entry state is returned unchanged.
    """
    entry = state.copy()
    entry_cap = sum_capacity(entry.position, entry.alloc, net)
    limits = _limits(sys, cfg)

    pos = entry.position.copy()
    alloc = entry.alloc.copy()
    iterations = 0
    solver_failed = False
    trace = []
    try:
        for it in range(1, cfg.max_iters + 1):
            iterations = it
            ap = build_access_problem(pos, alloc.p_gbs, net, sys, cfg)
            p_fly = solve_access(ap)
            bp = build_backhaul_problem(pos, p_fly, net, sys)
            p_gbs = solve_backhaul(
                bp,
                starts=cfg.backhaul_starts,
                seed=seed + it,
                extra_starts=(alloc.p_gbs,),
            )
            p_gbs = boost_flow_headroom(bp, p_gbs, cfg.flow_slack)
            alloc = PowerAllocation(p_fly, p_gbs)
            try:
                new_pos = position_step(
                    entry.position, alloc, net, limits,
                    seed=seed + it, starts=cfg.ref_starts, ref_tol=cfg.ref_tol,
                )
            except InfeasibleError:
                # no lawful move from here; keep the position reached so
                # far and let the full-capacity solve below finish up
                break
            moved = float(np.linalg.norm(new_pos - pos))
            pos = new_pos
            if record_trace:
                trace.append((it, sum_capacity(pos, alloc, net)))
            if moved < cfg.epsilon:
                break
        # the loop ran with lifted GBS powers to keep the position region
        # open; re-solve both power problems now that the position has
        # settled (the position is held, so every geometric constraint
        # is untouched, and the lifted powers remain admissible for the
        # final backhaul solve, which therefore cannot fail)
        candidate = _polish(pos, alloc.p_gbs, net, sys, cfg, seed)
    except InfeasibleError:
        solver_failed = True
        candidate = SimState(
            entry.position.copy(), fallback_allocation(entry.position, net, sys)
        )

    cand_cap = sum_capacity(candidate.position, candidate.alloc, net)
    moved_total = float(np.linalg.norm(candidate.position - entry.position))
    if cand_cap < entry_cap and not solver_failed and moved_total >= cfg.epsilon:
        # the radial surrogate can settle on a worse placement than the
        # entry; before giving up on the step, re-solve the powers while
        # holding the entry position (with flow headroom on the gain
        # model, so yesterday's tight backhaul does not cap the
        # comparison).  Within epsilon of the entry the polish above is
        # already an equivalent refresh, so the retry is skipped.
        try:
            bp0 = build_backhaul_problem(entry.position, entry.alloc.p_fly, net, sys)
            hint = boost_flow_headroom(bp0, entry.alloc.p_gbs, cfg.flow_slack)
            anchored = _polish(entry.position, hint, net, sys, cfg, seed)
            a_cap = sum_capacity(anchored.position, anchored.alloc, net)
            if a_cap > cand_cap:
                candidate, cand_cap = anchored, a_cap
        except InfeasibleError:
            pass
    if cand_cap < entry_cap:
        candidate = entry.copy()

    residuals = audit_constraints(entry.position, candidate, net, sys, cfg)
    feasible = (not solver_failed) and all(
        r <= FEASIBLE_TOL for r in residuals.values()
    )
    caps = user_capacities(candidate.position, candidate.alloc, net)
    metrics = StepMetrics(
        sum_capacity=float(caps.sum()),
        user_capacities=caps,
        iterations=iterations,
        feasible=feasible,
        residuals=residuals,
        solver_failed=solver_failed,
        trace=trace,
    )
    return candidate, metrics


def _equal_split_with_floors(budget: float, floors: np.ndarray) -> np.ndarray:
    """Equal split lifted to the floors; floor-scaled when they overrun."""
    n = floors.size
    total_floor = float(floors.sum())
    if total_floor >= budget:
        return floors * (budget / max(total_floor, 1e-300))
    p = np.full(n, budget / n)
    lift = np.maximum(floors - p, 0.0)
    surplus_users = lift == 0.0
    excess = float(lift.sum())
    if excess > 0.0:
        # take the lift proportionally out of the users above their floor
        room = np.where(surplus_users, p - floors, 0.0)
        p = np.where(surplus_users, p - excess * room / max(room.sum(), 1e-300), floors)
    return p


def _flow_scaled_access(pos, p_fly, p_gbs, floors, net: Network) -> np.ndarray:
    """Scale the surplus above the floors until the flow constraint holds."""
    alloc = PowerAllocation(p_fly, p_gbs)
    c_gf = backhaul_capacity(p_gbs, net.backhaul, net.gbs_distance(pos))
    if sum_capacity(pos, alloc, net) <= c_gf:
        return p_fly
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        trial = floors + mid * (p_fly - floors)
        if sum_capacity(pos, PowerAllocation(trial, p_gbs), net) <= c_gf:
            lo = mid
        else:
            hi = mid
    return floors + lo * (p_fly - floors)


def _baseline_metrics(prev_pos, state, net, sys, cfg) -> StepMetrics:
    residuals = audit_constraints(prev_pos, state, net, sys, cfg)
    caps = user_capacities(state.position, state.alloc, net)
    return StepMetrics(
        sum_capacity=float(caps.sum()),
        user_capacities=caps,
        iterations=1,
        feasible=all(r <= FEASIBLE_TOL for r in residuals.values()),
        residuals=residuals,
    )


def _baseline_alloc(pos, net: Network, sys: SystemParams) -> PowerAllocation:
    """Equal splits at both links subject to QoS floors/caps and flow."""
    s = net.assignment.n_channels
    p_gbs = np.full(s, sys.p_gbs_max / s)
    d = net.user_distances(pos)
    interf = interference_at_users(p_gbs, net)
    gain = (
        net.access.q_coeff * d ** (-net.access.pathloss_exp)
        / (net.access.noise_power + interf)
    )
    floors = (2.0 ** (sys.c_min / net.access.bandwidth) - 1.0) / gain
    p_fly = _equal_split_with_floors(sys.p_fly_max, floors)
    # cap channel powers by the QoS interference ceilings where they bind
    signal = net.access.q_coeff * p_fly * d ** (-net.access.pathloss_exp)
    floor_snr = 2.0 ** (sys.c_min / net.access.bandwidth) - 1.0
    with np.errstate(divide="ignore"):
        user_cap = np.where(
            floor_snr > 0.0,
            (signal / np.maximum(floor_snr, 1e-300) - net.access.noise_power)
            / net.interference_gains,
            np.inf,
        )
    chan_cap = np.full(s, np.inf)
    np.minimum.at(chan_cap, net.assignment.user_to_channel, user_cap)
    p_gbs = np.minimum(p_gbs, np.maximum(chan_cap, 0.0))
    floors_capped = np.minimum(floors, p_fly)
    p_fly = _flow_scaled_access(pos, p_fly, p_gbs, floors_capped, net)
    return PowerAllocation(p_fly, p_gbs)


def baseline_static(
    state: SimState, net: Network, sys: SystemParams, cfg: StepConfig
) -> tuple[SimState, StepMetrics]:
    """Hover in place with equal power splits; audited like the pipeline."""
    new = SimState(state.position.copy(), _baseline_alloc(state.position, net, sys))
    return new, _baseline_metrics(state.position, new, net, sys, cfg)


def baseline_centroid_track(
    state: SimState, net: Network, sys: SystemParams, cfg: StepConfig
) -> tuple[SimState, StepMetrics]:
    """Chase the users' centroid at the maximum allowed speed."""
    radius = motion_radius(cfg.v_max, sys.v_threshold, cfg.delta_k)
    target = net.user_positions.mean(axis=0).copy()
    target[2] = min(max(0.5 * (sys.h_min + sys.h_max), sys.h_min), sys.h_max)
    delta = target - state.position
    dist = float(np.linalg.norm(delta))
    pos = target if dist <= radius else state.position + delta * (radius / dist)
    pos[2] = min(max(pos[2], sys.h_min), sys.h_max)
    new = SimState(pos, _baseline_alloc(pos, net, sys))
    return new, _baseline_metrics(state.position, new, net, sys, cfg)
