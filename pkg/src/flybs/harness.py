"""End-to-end runs: drops, schemes, sweeps, and output files.

A *drop* is one independently seeded simulation of the full duration.
All schemes within a drop consume the identical user trajectory (the
mobility stream is seeded separately from the solver stream), so scheme
comparisons are paired.  Every float is written with ``repr``,
which round-trips exactly, making reruns byte-identical.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .channel import friis_coefficient, watts_to_dbm
from .orchestrator import (
    RESIDUAL_KEYS,
    SimState,
    baseline_centroid_track,
    baseline_static,
    fallback_allocation,
    time_step,
)
from .scenario import (
    ScenarioConfig,
    build_network,
    build_system,
    config_to_dict,
    init_scenario,
    initial_position,
    mobility_step,
)

__all__ = [
    "SCHEMES",
    "run",
    "sweep_users",
    "sweep_cmin",
    "trace_convergence",
    "simulate_drop",
    "csv_header",
]

SCHEMES = ("proposed", "static", "centroid")

_MOBILITY_STREAM = 0
_SOLVER_STREAM = 1


def _drop_seed(config: ScenarioConfig, drop: int) -> int:
    return config.seed + drop


def _step_seed(drop_seed: int, k: int) -> int:
    return int(
        np.random.SeedSequence([drop_seed, _SOLVER_STREAM, k]).generate_state(1)[0]
    )


def csv_header(n_users: int, n_channels: int) -> str:
    cols = ["k", "seed", "scheme", "sum_capacity_bps", "x", "y", "z",
            "iterations", "feasible"]
    cols += [f"res_{name}" for name in RESIDUAL_KEYS]
    cols += [f"p_fly_{i}" for i in range(n_users)]
    cols += [f"p_gbs_{s}" for s in range(n_channels)]
    return ",".join(cols)


def _format_row(k, seed, scheme, metrics, state) -> str:
    pos = state.position
    parts = [
        str(k), str(seed), scheme,
        repr(float(metrics.sum_capacity)),
        repr(float(pos[0])), repr(float(pos[1])), repr(float(pos[2])),
        str(int(metrics.iterations)), str(int(metrics.feasible)),
    ]
    parts += [repr(float(metrics.residuals[name])) for name in RESIDUAL_KEYS]
    parts += [repr(v) for v in state.alloc.p_fly.tolist()]
    parts += [repr(v) for v in state.alloc.p_gbs.tolist()]
    return ",".join(parts)


def simulate_drop(
    config: ScenarioConfig,
    drop: int,
    schemes: tuple[str, ...] = SCHEMES,
) -> dict:
    """One full drop; returns CSV text per scheme plus aggregates."""
    drop_seed = _drop_seed(config, drop)
    sys = build_system(config)
    cfg = config.step
    rng_mob = np.random.default_rng(
        np.random.SeedSequence([drop_seed, _MOBILITY_STREAM])
    )
    world = init_scenario(config, rng_mob)
    traj = hashlib.sha256()
    traj.update(world.user_positions.tobytes())

    net0 = build_network(world, config)
    pos0 = initial_position(world, config)
    states = {
        s: SimState(pos0.copy(), fallback_allocation(pos0, net0, sys))
        for s in schemes
    }
    rows = {s: [] for s in schemes}
    acc = {s: {"cap": 0.0, "infeasible": 0, "iters": 0} for s in schemes}

    for k in range(1, config.n_steps + 1):
        mobility_step(world, config, rng_mob)
        traj.update(world.user_positions.tobytes())
        net = build_network(world, config)
        for s in schemes:
            if s == "proposed":
                states[s], m = time_step(
                    states[s], net, sys, cfg, seed=_step_seed(drop_seed, k)
                )
            elif s == "static":
                states[s], m = baseline_static(states[s], net, sys, cfg)
            elif s == "centroid":
                states[s], m = baseline_centroid_track(states[s], net, sys, cfg)
            else:
                raise ValueError(f"unknown scheme {s!r}")
            rows[s].append(_format_row(k, drop_seed, s, m, states[s]))
            acc[s]["cap"] += m.sum_capacity
            acc[s]["infeasible"] += 0 if m.feasible else 1
            acc[s]["iters"] += m.iterations

    n = config.n_steps
    stats = {
        s: {
            "mean_sum_capacity_bps": acc[s]["cap"] / n,
            "infeasible_rate": acc[s]["infeasible"] / n,
            "mean_iterations": acc[s]["iters"] / n,
        }
        for s in schemes
    }
    return {
        "drop": drop,
        "seed": drop_seed,
        "rows": {s: "\n".join(rows[s]) for s in schemes},
        "stats": stats,
        "trajectory_sha256": traj.hexdigest(),
    }


def _resolved_config(config: ScenarioConfig) -> dict:
    from .propulsion import min_power_speed, speed_threshold

    sys = build_system(config)
    v_star, p_star = min_power_speed(config.propulsion)
    out = config_to_dict(config)
    out["derived"] = {
        "n_steps": config.n_steps,
        "friis_coefficient": friis_coefficient(config.carrier_hz),
        "bandwidth_per_user_hz": config.total_bandwidth / config.n_users,
        "p_fly_max_w": sys.p_fly_max,
        "p_gbs_max_w": sys.p_gbs_max,
        "p_fly_max_dbm": watts_to_dbm(sys.p_fly_max),
        "p_gbs_max_dbm": watts_to_dbm(sys.p_gbs_max),
        "speed_threshold_ms": sys.v_threshold,
        "min_power_speed_ms": v_star,
        "min_propulsion_power_w": p_star,
    }
    return out


def run(
    config: ScenarioConfig,
    out_dir: str,
    schemes: tuple[str, ...] = SCHEMES,
    workers: int = 1,
) -> dict:
    """Full experiment: all drops, all requested schemes, files written.

    Drops are independent, so with ``workers > 1`` they execute in a
    process pool; outputs are merged in drop order either way, keeping
    the files deterministic.
    """
    config.validate()
    t0 = time.perf_counter()
    os.makedirs(out_dir, exist_ok=True)
    header = csv_header(config.n_users, config.n_users)

    files = {}
    try:
        for s in schemes:
            files[s] = open(os.path.join(out_dir, f"steps_{s}.csv"), "w")
            files[s].write(header + "\n")

        per_drop = []
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                results = pool.map(
                    simulate_drop,
                    [config] * config.drops,
                    range(config.drops),
                    [schemes] * config.drops,
                )
                for res in results:
                    per_drop.append(res)
                    for s in schemes:
                        files[s].write(res["rows"][s] + "\n")
        else:
            for drop in range(config.drops):
                res = simulate_drop(config, drop, schemes)
                per_drop.append(res)
                for s in schemes:
                    files[s].write(res["rows"][s] + "\n")
    finally:
        for fh in files.values():
            fh.close()

    summary = {
        "config": _resolved_config(config),
        "schemes": {
            s: {
                key: float(np.mean([d["stats"][s][key] for d in per_drop]))
                for key in (
                    "mean_sum_capacity_bps", "infeasible_rate", "mean_iterations"
                )
            }
            for s in schemes
        },
        "drops": [
            {
                "drop": d["drop"],
                "seed": d["seed"],
                "trajectory_sha256": d["trajectory_sha256"],
                "stats": d["stats"],
            }
            for d in per_drop
        ],
        "runtime_seconds": time.perf_counter() - t0,
    }
    if "proposed" in schemes and "static" in schemes:
        base = summary["schemes"]["static"]["mean_sum_capacity_bps"]
        prop = summary["schemes"]["proposed"]["mean_sum_capacity_bps"]
        summary["proposed_over_static"] = prop / base - 1.0 if base > 0 else None
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
    return summary


def _sweep(config, field_name, values, out_dir, schemes, workers, csv_name):
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for v in values:
        sub = dataclasses.replace(config, **{field_name: v})
        label = f"{field_name}_{v:g}" if isinstance(v, float) else f"{field_name}_{v}"
        summary = run(sub, os.path.join(out_dir, label), schemes, workers)
        entry = {field_name: v}
        for s in schemes:
            entry[f"mean_sum_capacity_bps_{s}"] = summary["schemes"][s][
                "mean_sum_capacity_bps"
            ]
            entry[f"infeasible_rate_{s}"] = summary["schemes"][s]["infeasible_rate"]
        rows.append(entry)

    cols = list(rows[0].keys())
    path = os.path.join(out_dir, csv_name)
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for r in rows:
            fh.write(
                ",".join(
                    repr(float(r[c])) if isinstance(r[c], float) else str(r[c])
                    for c in cols
                )
                + "\n"
            )
    return rows


def sweep_users(
    config: ScenarioConfig,
    values=(100, 200, 300, 400, 500, 600),
    out_dir: str = "sweep_users",
    schemes: tuple[str, ...] = ("proposed",),
    workers: int = 1,
):
    """Mean capacity versus user count, written to sweep_users.csv."""
    return _sweep(
        config, "n_users", [int(v) for v in values], out_dir, schemes, workers,
        "sweep_users.csv",
    )


def sweep_cmin(
    config: ScenarioConfig,
    values=(0.25e6, 0.5e6, 0.75e6, 1.0e6),
    out_dir: str = "sweep_cmin",
    schemes: tuple[str, ...] = ("proposed",),
    workers: int = 1,
):
    """Mean capacity versus the per-user rate floor."""
    return _sweep(
        config, "c_min_bps", [float(v) for v in values], out_dir, schemes,
        workers, "sweep_cmin.csv",
    )


def trace_convergence(config: ScenarioConfig, out_dir: str) -> dict:
    """Per-iteration sum capacity inside each time step of one drop.

    Writes trace.csv (k, iteration, sum_capacity_bps) and returns the
    iteration-count statistics used to judge convergence speed.
    """
    config.validate()
    os.makedirs(out_dir, exist_ok=True)
    drop_seed = _drop_seed(config, 0)
    sys = build_system(config)
    rng_mob = np.random.default_rng(
        np.random.SeedSequence([drop_seed, _MOBILITY_STREAM])
    )
    world = init_scenario(config, rng_mob)
    net0 = build_network(world, config)
    pos0 = initial_position(world, config)
    state = SimState(pos0.copy(), fallback_allocation(pos0, net0, sys))

    iteration_counts = []
    path = os.path.join(out_dir, "trace.csv")
    with open(path, "w") as fh:
        fh.write("k,iteration,sum_capacity_bps\n")
        for k in range(1, config.n_steps + 1):
            mobility_step(world, config, rng_mob)
            net = build_network(world, config)
            state, m = time_step(
                state, net, sys, config.step,
                seed=_step_seed(drop_seed, k), record_trace=True,
            )
            iteration_counts.append(m.iterations)
            for it, cap in m.trace:
                fh.write(f"{k},{it},{repr(float(cap))}\n")

    counts = np.asarray(iteration_counts)
    stats = {
        "steps": int(counts.size),
        "mean_iterations": float(counts.mean()),
        "max_iterations": int(counts.max()),
        "fraction_within_10": float((counts <= 10).mean()),
    }
    with open(os.path.join(out_dir, "trace_summary.json"), "w") as fh:
        json.dump(stats, fh, indent=2)
    return stats
