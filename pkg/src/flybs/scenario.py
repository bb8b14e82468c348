"""Scenario configuration, user mobility and network construction.

The default scenario is a 500 x 500 m service area with ground users,
one aerial base station serving them over access channels, and a
distant ground station feeding it over the same channels (reused, hence
the cross-interference).  Half the users walk independently, the other
half move in clusters.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import (
    ChannelAssignment,
    Network,
    RadioLink,
    dbm_to_watts,
    friis_coefficient,
)
from .errors import ConfigValidationError
from .orchestrator import StepConfig, SystemParams, make_system
from .propulsion import PropulsionParams

__all__ = [
    "ScenarioConfig",
    "World",
    "config_from_dict",
    "config_to_dict",
    "init_scenario",
    "mobility_step",
    "build_network",
    "build_system",
    "initial_position",
]


@dataclass
class ScenarioConfig:
    """Everything that defines a run, JSON-serialisable in one piece."""

    area_side: float = 500.0            # m, square service area
    n_users: int = 300
    gbs_offset: float = 1500.0          # m east of the area centre
    gbs_altitude: float = 30.0          # m
    duration: float = 1200.0            # s of simulated time
    total_bandwidth: float = 1.0e8      # Hz, split equally over users
    noise_density_dbm_hz: float = -174.0
    background_interference_dbm: float = -90.0
    alpha_access: float = 2.3
    alpha_interference: float = 2.8
    alpha_backhaul: float = 2.1
    h_min: float = 100.0
    h_max: float = 300.0
    p_fly_max_dbm: float = 30.0
    p_gbs_max_dbm: float = 36.0
    c_min_bps: float = 1.0e6
    carrier_hz: float = 450.0e6
    walker_speed: float = 1.0           # m/s
    turn_period: float = 10.0           # s between heading redraws
    cluster_count: int = 6
    cluster_radius: float = 20.0        # m
    cluster_speed: float = 1.0          # m/s, cluster centre drift
    seed: int = 1
    drops: int = 100
    step: StepConfig = field(default_factory=StepConfig)
    propulsion: PropulsionParams = field(default_factory=PropulsionParams)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.step.delta_k))

    def validate(self) -> None:
        """Raise ConfigValidationError listing *all* problems at once."""
        bad = []

        def want(cond, msg):
            if not cond:
                bad.append(msg)

        want(self.area_side > 0, "area_side must be positive")
        want(self.n_users >= 1, "n_users must be at least 1")
        want(self.gbs_offset > 0, "gbs_offset must be positive")
        want(self.gbs_altitude >= 0, "gbs_altitude must be non-negative")
        want(self.duration > 0, "duration must be positive")
        want(self.total_bandwidth > 0, "total_bandwidth must be positive")
        for name in ("alpha_access", "alpha_interference", "alpha_backhaul"):
            val = getattr(self, name)
            want(1.0 <= val <= 6.0, f"{name} must lie in [1, 6]")
        want(self.h_min > 0, "h_min must be positive")
        want(self.h_max >= self.h_min, "h_max must be at least h_min")
        want(math.isfinite(self.p_fly_max_dbm), "p_fly_max_dbm must be finite")
        want(math.isfinite(self.p_gbs_max_dbm), "p_gbs_max_dbm must be finite")
        want(self.c_min_bps >= 0, "c_min_bps must be non-negative")
        want(self.carrier_hz > 0, "carrier_hz must be positive")
        want(self.walker_speed >= 0, "walker_speed must be non-negative")
        want(self.turn_period > 0, "turn_period must be positive")
        want(self.cluster_count >= 1, "cluster_count must be at least 1")
        want(self.cluster_radius >= 0, "cluster_radius must be non-negative")
        want(self.cluster_speed >= 0, "cluster_speed must be non-negative")
        want(self.seed >= 0, "seed must be non-negative")
        want(self.drops >= 1, "drops must be at least 1")

        st = self.step
        want(st.epsilon > 0, "step.epsilon must be positive")
        want(st.max_iters >= 1, "step.max_iters must be at least 1")
        want(st.delta_k > 0, "step.delta_k must be positive")
        want(st.p_pr_threshold > 0, "step.p_pr_threshold must be positive")
        want(st.v_max > 0, "step.v_max must be positive")
        want(st.tau_ratio > 0, "step.tau_ratio must be positive")
        want(st.xi > 0, "step.xi must be positive")
        want(st.backhaul_starts >= 0, "step.backhaul_starts must be non-negative")
        want(st.ref_starts >= 1, "step.ref_starts must be at least 1")

        pr = self.propulsion
        for name in (
            "blade_power", "induced_power", "tip_speed", "hover_induced_speed",
            "fuselage_drag_ratio", "air_density", "rotor_solidity",
            "rotor_disc_area",
        ):
            want(getattr(pr, name) > 0, f"propulsion.{name} must be positive")

        if bad:
            raise ConfigValidationError(bad)


def config_to_dict(config: ScenarioConfig) -> dict:
    return dataclasses.asdict(config)


def config_from_dict(data: dict) -> ScenarioConfig:
    """Build a config from a plain dict, rejecting unknown keys."""
    data = dict(data)
    problems = []
    step_data = data.pop("step", {})
    prop_data = data.pop("propulsion", {})

    def pick(cls, payload, prefix):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(payload) - known)
        problems.extend(f"unknown key {prefix}{k!r}" for k in unknown)
        return {k: v for k, v in payload.items() if k in known}

    step = StepConfig(**pick(StepConfig, step_data, "step."))
    try:
        prop = PropulsionParams(**pick(PropulsionParams, prop_data, "propulsion."))
    except ValueError as exc:
        problems.append(str(exc))
        prop = PropulsionParams()
    fields = pick(ScenarioConfig, data, "")
    if problems:
        raise ConfigValidationError(problems)
    return ScenarioConfig(step=step, propulsion=prop, **fields)


def load_config(path: str) -> ScenarioConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


@dataclass
class World:
    """Mutable per-drop user state advanced by :func:`mobility_step`."""

    user_positions: np.ndarray      # (N, 3), ground users so z == 0
    walker_mask: np.ndarray         # (N,) bool
    headings: np.ndarray            # (N,) rad, meaningful for walkers
    turn_phase: np.ndarray          # (N,) int steps into the turn period
    cluster_of: np.ndarray          # (N,) int, -1 for walkers
    cluster_centers: np.ndarray     # (K, 2)
    cluster_headings: np.ndarray    # (K,)
    member_offsets: np.ndarray      # (N, 2), zero rows for walkers
    step_index: int = 0


def _gbs_position(config: ScenarioConfig) -> np.ndarray:
    cx = cy = 0.5 * config.area_side
    return np.array([cx + config.gbs_offset, cy, config.gbs_altitude])


def init_scenario(config: ScenarioConfig, rng: np.random.Generator) -> World:
    n = config.n_users
    area = config.area_side
    n_walk = n // 2
    walker_mask = np.zeros(n, dtype=bool)
    walker_mask[:n_walk] = True

    xy = rng.uniform(0.0, area, size=(n, 2))
    headings = rng.uniform(0.0, 2.0 * math.pi, size=n)
    turn_phase = rng.integers(
        0, max(int(round(config.turn_period / config.step.delta_k)), 1), size=n
    )

    k = config.cluster_count
    centers = rng.uniform(0.0, area, size=(k, 2))
    cluster_headings = rng.uniform(0.0, 2.0 * math.pi, size=k)
    cluster_of = np.full(n, -1, dtype=int)
    members = np.arange(n_walk, n)
    cluster_of[members] = members % k
    offsets = np.zeros((n, 2))
    if members.size:
        offsets[members] = _disc_offsets(config, rng, members.size)
        xy[members] = np.clip(
            centers[cluster_of[members]] + offsets[members], 0.0, area
        )

    positions = np.zeros((n, 3))
    positions[:, :2] = xy
    return World(
        user_positions=positions,
        walker_mask=walker_mask,
        headings=headings,
        turn_phase=turn_phase,
        cluster_of=cluster_of,
        cluster_centers=centers,
        cluster_headings=cluster_headings,
        member_offsets=offsets,
    )


def _disc_offsets(config, rng, count):
    """Uniform draws from the cluster disc."""
    radius = config.cluster_radius * np.sqrt(rng.uniform(0.0, 1.0, size=count))
    angle = rng.uniform(0.0, 2.0 * math.pi, size=count)
    return np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)


def _reflect_walk(xy, headings, dist, area):
    """Advance along the headings, folding at the walls.

    Folding keeps the travelled path length exact; the heading component
    normal to a hit wall flips so the walk continues inward.
    """
    new = xy + dist[:, None] * np.stack(
        [np.cos(headings), np.sin(headings)], axis=-1
    )
    out = headings.copy()
    for axis, flip in ((0, math.pi), (1, 0.0)):
        coord = new[:, axis]
        for _ in range(8):  # dist << area, one fold almost always suffices
            low, high = coord < 0.0, coord > area
            if not (low.any() or high.any()):
                break
            coord = np.where(low, -coord, coord)
            coord = np.where(high, 2.0 * area - coord, coord)
            hit = low | high
            if axis == 0:
                out = np.where(hit, flip - out, out)
            else:
                out = np.where(hit, -out, out)
        new[:, axis] = coord
    return new, np.mod(out, 2.0 * math.pi)


def mobility_step(
    world: World, config: ScenarioConfig, rng: np.random.Generator
) -> None:
    """Advance every user by one step of ``step.delta_k`` seconds."""
    delta = config.step.delta_k
    period = max(int(round(config.turn_period / delta)), 1)
    walk = world.walker_mask
    n_walk = int(walk.sum())

    # walkers: redraw headings on each user's own turn schedule
    due = (world.turn_phase + world.step_index) % period == 0
    redraw = walk & due
    fresh = rng.uniform(0.0, 2.0 * math.pi, size=n_walk)
    world.headings[walk] = np.where(
        redraw[walk], fresh, world.headings[walk]
    )
    dist = np.full(n_walk, config.walker_speed * delta)
    xy, hd = _reflect_walk(
        world.user_positions[walk, :2], world.headings[walk], dist,
        config.area_side,
    )
    world.user_positions[walk, :2] = xy
    world.headings[walk] = hd

    # clusters: centres drift like walkers; members ride along rigidly
    # and re-scatter in the disc only on their own turn ticks, keeping
    # the uniform-in-disc distribution without per-step teleporting
    k = world.cluster_centers.shape[0]
    if world.step_index % period == 0:
        world.cluster_headings = rng.uniform(0.0, 2.0 * math.pi, size=k)
    cdist = np.full(k, config.cluster_speed * delta)
    centers, chead = _reflect_walk(
        world.cluster_centers, world.cluster_headings, cdist, config.area_side
    )
    world.cluster_centers = centers
    world.cluster_headings = chead
    members = np.flatnonzero(~walk)
    if members.size:
        scatter = members[due[members]]
        if scatter.size:
            world.member_offsets[scatter] = _disc_offsets(
                config, rng, scatter.size
            )
        world.user_positions[members, :2] = np.clip(
            centers[world.cluster_of[members]] + world.member_offsets[members],
            0.0,
            config.area_side,
        )
    world.step_index += 1


def build_network(world: World, config: ScenarioConfig) -> Network:
    """Snapshot of the radio environment for the current user placement."""
    n = config.n_users
    bw = config.total_bandwidth / n
    q = friis_coefficient(config.carrier_hz)
    thermal = dbm_to_watts(config.noise_density_dbm_hz) * bw
    background = dbm_to_watts(config.background_interference_dbm)
    # ground users sit in the ambient co-channel background; the
    # elevated, directional backhaul receiver sees thermal noise only
    access = RadioLink(
        q_coeff=q, pathloss_exp=config.alpha_access,
        bandwidth=bw, noise_power=thermal + background,
    )
    interference = RadioLink(
        q_coeff=q, pathloss_exp=config.alpha_interference,
        bandwidth=bw, noise_power=thermal + background,
    )
    backhaul = RadioLink(
        q_coeff=q, pathloss_exp=config.alpha_backhaul,
        bandwidth=bw, noise_power=thermal,
    )
    assignment = ChannelAssignment(
        user_to_channel=np.arange(n), channel_bandwidths=np.full(n, bw)
    )
    return Network(
        user_positions=world.user_positions.copy(),
        gbs_position=_gbs_position(config),
        access=access,
        interference=interference,
        backhaul=backhaul,
        assignment=assignment,
    )


def build_system(config: ScenarioConfig) -> SystemParams:
    diag = math.sqrt(2.0 * config.area_side**2 + config.h_max**2)
    reach = 4.0 * (config.gbs_offset + config.area_side + config.h_max)
    return make_system(
        c_min=np.full(config.n_users, config.c_min_bps),
        p_fly_max=dbm_to_watts(config.p_fly_max_dbm),
        p_gbs_max=dbm_to_watts(config.p_gbs_max_dbm),
        propulsion=config.propulsion,
        p_pr_threshold=config.step.p_pr_threshold,
        h_min=config.h_min,
        h_max=config.h_max,
        scenario_diagonal=diag,
        gbs_reach=reach,
    )


def initial_position(world: World, config: ScenarioConfig) -> np.ndarray:
    """Start above the users' centroid at mid-altitude."""
    centre = world.user_positions.mean(axis=0)
    return np.array(
        [centre[0], centre[1], 0.5 * (config.h_min + config.h_max)]
    )
