"""Independent reference computations used by the test suite.

Everything in here is deliberately written from the problem statements
alone -- grid search, scalar bisection, finite differences -- without
importing any solver code, so a test comparing a solver against these
functions exercises two unrelated routes to the same number.
"""
from __future__ import annotations

import math

import numpy as np

LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# access-link power: brute force over the linearised-flow feasible set


def tangent_flow_total(gain, bandwidth, p, tau):
    """Tangent-line upper bound of the summed rate, bits/s.

    Anchored per user at the grid point below gain*p; this is the exact
    constraint function of the linearised flow bound, restated here from
    its definition rather than imported.
    """
    y = np.asarray(gain, dtype=float) * np.asarray(p, dtype=float)
    y0 = np.floor(y / tau) * tau
    per_user = (np.log(1.0 + y0) + (y - y0) / (1.0 + y0)) / LN2
    return np.asarray(bandwidth, dtype=float) * per_user


def access_rate_total(gain, bandwidth, p):
    """Exact summed Shannon rate, bits/s (the access objective)."""
    return float(
        np.sum(np.asarray(bandwidth, dtype=float) * np.log2(1.0 + np.asarray(gain) * p))
    )


def grid_access_max(gain, bandwidth, floors, p_max, flow_cap, tau,
                    points=200, rounds=3):
    """Best objective over the access feasible set by grid + refinement.

    Three users only.  Each round lays a ``points``-per-axis grid over
    the current box, keeps the best feasible point, and shrinks the box
    to one grid cell around it.  Returns (best objective, best point).
    """
    gain = np.asarray(gain, dtype=float)
    bandwidth = np.asarray(bandwidth, dtype=float)
    floors = np.asarray(floors, dtype=float)
    room = p_max - float(floors.sum())
    box_lo = floors.copy()
    box_hi = floors + room
    lo, hi = box_lo.copy(), box_hi.copy()

    best_p = floors.copy()
    best_v = access_rate_total(gain, bandwidth, floors)
    for _ in range(rounds + 1):
        ax = [np.linspace(lo[i], hi[i], points) for i in range(3)]
        p2 = ax[1][:, None]
        p3 = ax[2][None, :]
        obj23 = (
            bandwidth[1] * np.log2(1.0 + gain[1] * p2)
            + bandwidth[2] * np.log2(1.0 + gain[2] * p3)
        )
        flow23 = (
            tangent_flow_total(gain[1], bandwidth[1], p2, tau)
            + tangent_flow_total(gain[2], bandwidth[2], p3, tau)
        )
        sum23 = p2 + p3
        for p1 in ax[0]:
            flow1 = float(tangent_flow_total(gain[0], bandwidth[0], p1, tau))
            feas = (sum23 + p1 <= p_max) & (flow23 + flow1 <= flow_cap)
            if not feas.any():
                continue
            vals = np.where(
                feas, obj23 + bandwidth[0] * np.log2(1.0 + gain[0] * p1), -np.inf
            )
            j, k = np.unravel_index(int(np.argmax(vals)), vals.shape)
            if vals[j, k] > best_v:
                best_v = float(vals[j, k])
                best_p = np.array([p1, ax[1][j], ax[2][k]])
        cell = (hi - lo) / (points - 1)
        lo = np.maximum(box_lo, best_p - cell)
        hi = np.minimum(box_hi, best_p + cell)
    return best_v, best_p


# ---------------------------------------------------------------------------
# backhaul power: scalar bisection (S=1) and plain grid (S=2)


def backhaul_served(signal, inter_gain, noise, bw_user, chan, p_gbs):
    """Summed user rate under GBS interference, bits/s."""
    p_at = np.asarray(p_gbs, dtype=float)[np.asarray(chan, dtype=int)]
    sinr = np.asarray(signal) / (np.asarray(noise) + np.asarray(inter_gain) * p_at)
    return float(np.sum(np.asarray(bw_user) * np.log2(1.0 + sinr)))


def backhaul_carried(gbs_gain, bw_chan, p_gbs):
    """Summed backhaul-channel capacity, bits/s."""
    return float(
        np.sum(np.asarray(bw_chan) * np.log2(1.0 + np.asarray(gbs_gain) * p_gbs))
    )


def bisect_backhaul_s1(signal, inter_gain, noise, bw_user, chan,
                       gbs_gain, bw_chan, budget, cap):
    """Optimal single-channel GBS power by bisection on the flow crossing.

    The objective (served rate) strictly decreases in the power while
    the carried rate strictly increases, so the optimum is the smallest
    feasible power: zero when the flow already holds there, otherwise
    the unique crossing of served == carried.  Returns None when even
    the box top cannot carry the traffic.
    """
    top = float(min(cap[0], budget))

    def residual(p):
        arr = np.array([p])
        return (
            backhaul_served(signal, inter_gain, noise, bw_user, chan, arr)
            - backhaul_carried(gbs_gain, bw_chan, arr)
        )

    if residual(0.0) <= 0.0:
        return 0.0
    if residual(top) > 0.0:
        return None
    lo, hi = 0.0, top
    for _ in range(200):
        if hi - lo <= 1e-16 * top:
            break
        mid = 0.5 * (lo + hi)
        if residual(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return hi


def grid_backhaul_s2(signal, inter_gain, noise, bw_user, chan,
                     gbs_gain, bw_chan, budget, cap, points=500):
    """Best objective on a dense 2-D grid of the S=2 feasible set."""
    a0 = np.linspace(0.0, min(cap[0], budget), points)
    a1 = np.linspace(0.0, min(cap[1], budget), points)
    p0 = a0[:, None]
    p1 = a1[None, :]
    served = np.zeros((points, points))
    for n in range(len(signal)):
        p_at = p0 if chan[n] == 0 else p1
        served = served + bw_user[n] * np.log2(
            1.0 + signal[n] / (noise[n] + inter_gain[n] * p_at)
        )
    carried = bw_chan[0] * np.log2(1.0 + gbs_gain[0] * p0) + bw_chan[1] * np.log2(
        1.0 + gbs_gain[1] * p1
    )
    feas = (p0 + p1 <= budget) & (served - carried <= 0.0)
    if not feas.any():
        return None, None
    vals = np.where(feas, served, -np.inf)
    i, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
    return float(vals[i, j]), np.array([a0[i], a1[j]])


# ---------------------------------------------------------------------------
# projection onto balls + slab: grid + refinement


def grid_project(target, balls, z_lo, z_hi, points=21, rounds=45, shrink=0.6):
    """Nearest feasible point to ``target`` by shrinking-window search.

    ``balls`` is a list of (center, radius).  Each round lays a grid over
    a window centred on the incumbent (kept as a candidate, so the result
    only improves) and shrinks the window geometrically.  The shrink rate
    is slow enough for the incumbent to drift across the whole feasible
    set, which a cell-tied contraction cannot do on large ball surfaces.
    """
    target = np.asarray(target, dtype=float)
    centers = np.array([c for c, _ in balls], dtype=float)
    radii = np.array([r for _, r in balls], dtype=float)
    lo = (centers - radii[:, None]).max(axis=0)
    hi = (centers + radii[:, None]).min(axis=0)
    lo[2] = max(lo[2], z_lo)
    hi[2] = min(hi[2], z_hi)
    box = (lo.copy(), hi.copy())

    def feasible(pts):
        ok = (pts[:, 2] >= z_lo - 1e-12) & (pts[:, 2] <= z_hi + 1e-12)
        for c, r in balls:
            ok &= np.linalg.norm(pts - c, axis=1) <= r + 1e-12
        return ok

    best = None
    best_d = np.inf
    width = float(np.max(hi - lo))
    for _ in range(rounds):
        anchor = 0.5 * (box[0] + box[1]) if best is None else best
        lo = np.maximum(box[0], anchor - width)
        hi = np.minimum(box[1], anchor + width)
        ax = [np.linspace(lo[i], hi[i], points) for i in range(3)]
        mesh = np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1).reshape(-1, 3)
        if best is not None:
            mesh = np.vstack([mesh, best])
        ok = feasible(mesh)
        if ok.any():
            cand = mesh[ok]
            d = np.linalg.norm(cand - target, axis=1)
            k = int(np.argmin(d))
            if d[k] < best_d:
                best, best_d = cand[k], float(d[k])
        if best is not None:
            width *= shrink
    return best


# ---------------------------------------------------------------------------
# derivatives


def central_gradient(f, x, h=1e-3):
    """Central finite-difference gradient of a scalar field at x."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g
