"""FlyBS position update inside the per-step feasibility region.

The update works purely geometrically.  Holding the current powers, the
set of positions that keep every constraint satisfied is an intersection
of balls and a slab:

* one QoS ball per user (stay close enough to keep its rate floor),
* the motion ball around the previous position (speed and propulsion),
* the altitude slab,
* a ball around the ground station whose radius guarantees the backhaul
  can still carry a conservative upper bound of the served traffic.

Inside that region a concave lower bound of the sum capacity picks a
reference point; a second linearisation around the reference point
collapses the objective into a single negative quadratic of position,
whose unconstrained peak is projected back onto the region.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .channel import LN2, PowerAllocation, Network, interference_at_users
from .errors import FlowInfeasibleError, RegionInfeasibleError

__all__ = [
    "Ball",
    "FeasibilityRegion",
    "RadialFit",
    "qos_ball_radii",
    "motion_radius",
    "min_user_distances",
    "backhaul_radius",
    "build_region",
    "region_violation",
    "project",
    "least_violation_point",
    "capacity_lower_bound",
    "rate_lower_bound",
    "reference_point",
    "radial_terms",
    "radial_fit",
    "radial_value",
    "position_step",
]

QOS_RADIUS_CAP_FACTOR = 10.0


@dataclass(frozen=True)
class Ball:
    center: np.ndarray  # (3,)
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not (self.radius >= 0.0 and math.isfinite(self.radius)):
            raise ValueError("ball radius must be finite and non-negative")


@dataclass(frozen=True)
class FeasibilityRegion:
    """Intersection of per-user QoS balls, motion ball, slab, backhaul ball."""

    qos_centers: np.ndarray  # (N, 3)
    qos_radii: np.ndarray    # (N,)
    motion: Ball
    altitude: tuple[float, float]
    backhaul: Ball

    def __post_init__(self):
        object.__setattr__(self, "qos_centers", np.asarray(self.qos_centers, dtype=float))
        object.__setattr__(self, "qos_radii", np.asarray(self.qos_radii, dtype=float))
        lo, hi = self.altitude
        if lo > hi:
            raise RegionInfeasibleError("empty altitude slab")


@dataclass(frozen=True)
class RadialFit:
    """Sum capacity approximated as offset - curvature * ||l - center||^2."""

    offset: float     # bits/s
    curvature: float  # bits/s per m^2, > 0
    center: np.ndarray  # (3,)

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.curvature > 0.0:
            raise ValueError("curvature must be positive")


def radial_value(fit: RadialFit, pos) -> float:
    d = np.asarray(pos, dtype=float) - fit.center
    return fit.offset - fit.curvature * float(d @ d)


def qos_ball_radii(
    alloc: PowerAllocation, net: Network, c_min: np.ndarray, radius_cap: float
) -> np.ndarray:
    """Per-user maximum distance that still meets the rate floor.

    Users with a zero floor get the cap (nominally 10x the scenario
    diagonal) instead of an infinite ball.
    """
    c_min = np.asarray(c_min, dtype=float)
    floor_snr = 2.0 ** (c_min / net.access.bandwidth) - 1.0
    interf = interference_at_users(alloc.p_gbs, net)
    r = np.full(c_min.shape, radius_cap)
    active = floor_snr > 0.0
    num = net.access.q_coeff * alloc.p_fly
    num = np.broadcast_to(num, c_min.shape)[active]
    den = (floor_snr * (net.access.noise_power + interf))
    ratio = num / den[active]
    alpha = np.broadcast_to(net.access.pathloss_exp, c_min.shape)[active]
    r[active] = np.minimum(ratio ** (1.0 / alpha), radius_cap)
    return r


def motion_radius(v_max: float, v_threshold: float, delta: float) -> float:
    """Reach per step under both the speed cap and the propulsion cap."""
    if v_max < 0.0 or v_threshold < 0.0 or delta < 0.0:
        raise ValueError("speeds and step length must be non-negative")
    return min(v_max, v_threshold) * delta


def min_user_distances(
    prev_pos, user_positions, motion_r: float, h_min: float
) -> np.ndarray:
    """Lower bound on each user's distance after any feasible move.

    The FlyBS can close at most ``motion_r`` of the gap, and can never
    descend below ``h_min`` above the user's own altitude.  Kept
    strictly positive.
    """
    prev = np.asarray(prev_pos, dtype=float)
    users = np.asarray(user_positions, dtype=float)
    gap = np.linalg.norm(users - prev, axis=1) - motion_r
    vertical = h_min - users[:, 2]
    return np.maximum(np.maximum(gap, vertical), 1e-9)


def backhaul_radius(
    p_gbs: np.ndarray,
    flow_bound: float,
    backhaul_link,
    bracket_top: float,
    rel_tol: float = 1e-12,
) -> float:
    """Largest GBS distance whose backhaul capacity covers ``flow_bound``.

    The capacity is strictly decreasing in distance, so bisection on the
    distance suffices.  Returns ``bracket_top`` when even that distance
    carries the bound, and raises when no distance does.
    """
    from .channel import backhaul_capacity

    if flow_bound <= 0.0:
        return float(bracket_top)

    def cap(d):
        return backhaul_capacity(p_gbs, backhaul_link, d)

    if cap(bracket_top) >= flow_bound:
        return float(bracket_top)
    lo = bracket_top * 1e-9
    if cap(lo) < flow_bound:
        raise FlowInfeasibleError(
            "required flow bound unreachable at any backhaul distance"
        )
    hi = float(bracket_top)
    while hi - lo > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if cap(mid) >= flow_bound:
            lo = mid
        else:
            hi = mid
    # lo still satisfies cap(lo) >= flow_bound; staying inside this
    # radius keeps the flow constraint exactly satisfiable
    return lo


@dataclass(frozen=True)
class PositionLimits:
    """Static bounds needed to build the per-step feasibility region."""

    motion_radius: float
    h_min: float
    h_max: float
    c_min: np.ndarray
    qos_radius_cap: float   # 10x scenario diagonal
    backhaul_bracket: float  # search top for the backhaul ball radius
    xi: float = 0.01        # ladder step of the radial-fit linearisation

    def __post_init__(self):
        object.__setattr__(self, "c_min", np.asarray(self.c_min, dtype=float))


def build_region(
    prev_pos, alloc: PowerAllocation, net: Network, limits: PositionLimits
) -> FeasibilityRegion:
    """Assemble the feasibility region at the current powers."""
    prev = np.asarray(prev_pos, dtype=float)
    radii = qos_ball_radii(alloc, net, limits.c_min, limits.qos_radius_cap)
    d_min = min_user_distances(prev, net.user_positions, limits.motion_radius, limits.h_min)
    interf = interference_at_users(alloc.p_gbs, net)
    best_snr = (
        net.access.q_coeff * alloc.p_fly * d_min ** (-net.access.pathloss_exp)
        / (net.access.noise_power + interf)
    )
    flow_bound = float(np.sum(net.access.bandwidth * np.log1p(best_snr) / LN2))
    r_bh = backhaul_radius(alloc.p_gbs, flow_bound, net.backhaul, limits.backhaul_bracket)
    return FeasibilityRegion(
        qos_centers=net.user_positions,
        qos_radii=radii,
        motion=Ball(prev, limits.motion_radius),
        altitude=(limits.h_min, limits.h_max),
        backhaul=Ball(net.gbs_position, r_bh),
    )


def _ball_violations(x: np.ndarray, region: FeasibilityRegion) -> np.ndarray:
    d = np.linalg.norm(region.qos_centers - x, axis=1) - region.qos_radii
    extra = np.array([
        np.linalg.norm(x - region.motion.center) - region.motion.radius,
        np.linalg.norm(x - region.backhaul.center) - region.backhaul.radius,
        region.altitude[0] - x[2],
        x[2] - region.altitude[1],
    ])
    return np.concatenate([d, extra])


def region_violation(x, region: FeasibilityRegion) -> float:
    """Largest constraint violation at ``x`` in metres (<= 0 inside)."""
    return float(np.max(_ball_violations(np.asarray(x, dtype=float), region)))


def _project_ball(x, center, radius):
    d = x - center
    dist = np.linalg.norm(d)
    if dist <= radius or dist == 0.0:
        return x
    return center + d * (radius / dist)


def _project_slab(x, lo, hi):
    y = x.copy()
    y[2] = min(max(y[2], lo), hi)
    return y


def _project_ball_slab(x, center, radius, lo, hi):
    """Exact projection onto ball ∩ slab (or None when they miss).

    If the ball projection already satisfies the slab it is optimal;
    otherwise the slab face is active at the optimum (stationarity on
    the ball alone would contradict uniqueness of its projection), and
    the problem reduces to projecting within that plane onto the disc
    the ball cuts out of it.
    """
    y = _project_ball(x, center, radius)
    if lo <= y[2] <= hi:
        return y
    zc = lo if y[2] < lo else hi
    h = center[2] - zc
    if abs(h) > radius:
        return None
    disc_r = math.sqrt(max(radius * radius - h * h, 0.0))
    cbar = center.copy()
    cbar[2] = zc
    xbar = x.copy()
    xbar[2] = zc
    d = xbar - cbar
    dist = float(np.linalg.norm(d))
    if dist <= disc_r:
        return xbar
    return cbar + d * (disc_r / dist)


def project(
    target,
    region: FeasibilityRegion,
    tol: float = 1e-9,
    max_sweeps: int = 1000,
) -> np.ndarray:
    """Euclidean projection of ``target`` onto the region (Dykstra).

    Returns the target itself when it is already feasible to ``tol``.
    Only the violated sets enter the sweep (projecting onto a subset is
    exact when the result satisfies the rest), and newly violated sets
    are picked up as they appear.  A persistent positive gap after
    ``max_sweeps`` sweeps certifies the intersection empty.
    """
    x0 = np.asarray(target, dtype=float).copy()
    viols = _ball_violations(x0, region)
    if float(viols.max()) <= tol:
        return x0

    # single violated ball: projecting onto it alone is exact whenever
    # the result satisfies everything else (the common case for gradient
    # probes stepping just outside the motion ball)
    n_qos = region.qos_centers.shape[0]
    over = np.nonzero(viols > tol)[0]
    if over.size == 1 and over[0] < n_qos + 2:
        i = int(over[0])
        if i < n_qos:
            cand = _project_ball(x0, region.qos_centers[i], float(region.qos_radii[i]))
        elif i == n_qos:
            cand = _project_ball(x0, region.motion.center, region.motion.radius)
        else:
            cand = _project_ball(x0, region.backhaul.center, region.backhaul.radius)
        if region_violation(cand, region) <= tol:
            return cand

    # motion ball + altitude slab is the dominant active pair once the
    # craft rides the floor; their joint projection is closed-form, and
    # any subset projection that lands feasible for the whole region is
    # exact for it (the subset's distance lower-bounds the region's)
    cand = _project_ball_slab(
        x0, region.motion.center, region.motion.radius,
        region.altitude[0], region.altitude[1],
    )
    if cand is not None and region_violation(cand, region) <= tol:
        return cand

    # quick pairwise emptiness certificates
    for ball in (region.motion, region.backhaul):
        span = ball.center[2] - ball.radius
        if span > region.altitude[1] + 1e-12:
            raise RegionInfeasibleError("ball entirely above the altitude slab")
        if ball.center[2] + ball.radius < region.altitude[0] - 1e-12:
            raise RegionInfeasibleError("ball entirely below the altitude slab")
    gap_mb = np.linalg.norm(region.motion.center - region.backhaul.center)
    if gap_mb > region.motion.radius + region.backhaul.radius + 1e-12:
        raise RegionInfeasibleError("motion and backhaul balls are disjoint")

    balls = [(region.motion.center, region.motion.radius),
             (region.backhaul.center, region.backhaul.radius)]
    d = np.linalg.norm(region.qos_centers - x0, axis=1) - region.qos_radii
    active_users = set(np.nonzero(d > -1e-12)[0].tolist())
    balls += [(region.qos_centers[i], float(region.qos_radii[i])) for i in sorted(active_users)]

    def subset_violation(x, sets_balls):
        worst = max(region.altitude[0] - x[2], x[2] - region.altitude[1])
        for c, r in sets_balls:
            worst = max(worst, float(np.linalg.norm(x - c)) - r)
        return worst

    def run_dykstra(sets_balls, x):
        # emptiness of the subset implies emptiness of the full region,
        # so a persistent gap here is a valid certificate
        projs = [lambda p, c=c, r=r: _project_ball(p, c, r) for c, r in sets_balls]
        projs.append(lambda p: _project_slab(p, region.altitude[0], region.altitude[1]))
        corrections = [np.zeros(3) for _ in projs]
        for _ in range(max_sweeps):
            moved = 0.0
            for i, proj in enumerate(projs):
                y = x + corrections[i]
                z = proj(y)
                corrections[i] = y - z
                moved = max(moved, float(np.linalg.norm(z - x)))
                x = z
            if moved <= 0.25 * tol and subset_violation(x, sets_balls) <= 0.5 * tol:
                return x, True
        return x, False

    for _ in range(n_qos + 4):
        x, ok = run_dykstra(balls, x0.copy())
        if not ok:
            raise RegionInfeasibleError(
                "alternating projections failed to close the gap; region certified empty"
            )
        d = np.linalg.norm(region.qos_centers - x, axis=1) - region.qos_radii
        newly = set(np.nonzero(d > 0.5 * tol)[0].tolist()) - active_users
        if not newly:
            return x
        active_users |= newly
        balls += [(region.qos_centers[i], float(region.qos_radii[i])) for i in sorted(newly)]
    raise RegionInfeasibleError("projection active set failed to settle")


def least_violation_point(region: FeasibilityRegion, start, iters: int = 400) -> np.ndarray:
    """Minimiser of the sum of squared constraint violations (convex)."""
    x = np.asarray(start, dtype=float).copy()

    def value_grad(x):
        diff = x - region.qos_centers
        dist = np.linalg.norm(
            np.vstack([diff, [x - region.motion.center], [x - region.backhaul.center]]),
            axis=1,
        )
        radii = np.concatenate([region.qos_radii, [region.motion.radius, region.backhaul.radius]])
        centers = np.vstack([region.qos_centers, [region.motion.center], [region.backhaul.center]])
        v = np.maximum(dist - radii, 0.0)
        val = float(v @ v)
        safe = np.where(dist > 0.0, dist, 1.0)
        grad = ((2.0 * v / safe)[:, None] * (x - centers)).sum(axis=0)
        lo_v = max(region.altitude[0] - x[2], 0.0)
        hi_v = max(x[2] - region.altitude[1], 0.0)
        val += lo_v**2 + hi_v**2
        grad[2] += -2.0 * lo_v + 2.0 * hi_v
        return val, grad

    val, grad = value_grad(x)
    step = 1.0 / max(np.linalg.norm(grad), 1e-12)
    for _ in range(iters):
        if val <= 1e-24:
            break
        cand = x - step * grad
        cval, cgrad = value_grad(cand)
        if cval < val:
            x, val, grad = cand, cval, cgrad
            step *= 1.3
        else:
            step *= 0.5
            if step < 1e-16:
                break
    return x


def rate_lower_bound(strength, d, d_prev, alpha, bandwidth):
    """Tangent lower bound of B*log2(1 + strength*d^-alpha), bits/s.

    The rate is convex in x = d**alpha, so its tangent at the anchor
    x0 = d_prev**alpha sits below it everywhere; equality at d = d_prev.
    Broadcasts over arrays.
    """
    w = np.asarray(bandwidth, dtype=float) / LN2
    x = np.asarray(d, dtype=float) ** alpha
    x0 = np.asarray(d_prev, dtype=float) ** alpha
    s = np.asarray(strength, dtype=float)
    return w * (-s * x / x0**2 + s / x0 + np.log1p(s / x0))


def capacity_lower_bound(pos, coeff: np.ndarray, alpha: np.ndarray, users: np.ndarray):
    """Concave surrogate of the sum capacity and its spatial gradient.

    Tangent-line (in distance**alpha) lower bound of each user's rate,
    anchored at the previous distances; ``coeff`` carries the anchored
    weights, bits/s per m**alpha.  Returns only the position-dependent
    part (an additive constant is dropped).
    """
    x = np.asarray(pos, dtype=float)
    diff = x - users
    d2 = np.einsum("ij,ij->i", diff, diff)
    d = np.sqrt(np.maximum(d2, 1e-18))
    val = -float(np.sum(coeff * d**alpha))
    grad = -((coeff * alpha * d ** (alpha - 2.0))[:, None] * diff).sum(axis=0)
    return val, grad


def _lower_bound_coeffs(prev_pos, alloc, net):
    """Anchor weights of the tangent lower bound at the previous position."""
    d_prev = net.user_distances(prev_pos)
    interf = interference_at_users(alloc.p_gbs, net)
    strength = net.access.q_coeff * alloc.p_fly / (net.access.noise_power + interf)
    w = net.access.bandwidth / LN2
    alpha = np.broadcast_to(net.access.pathloss_exp, d_prev.shape)
    coeff = w * strength / d_prev ** (2.0 * alpha)
    return coeff, alpha


def reference_point(
    region: FeasibilityRegion,
    alloc: PowerAllocation,
    net: Network,
    starts: int = 4,
    seed: int = 0,
    tol: float = 1e-7,
    max_iters: int = 300,
) -> np.ndarray:
    """Maximiser of the concave capacity lower bound over the region.

    Projected gradient ascent with adaptive step, run from ``starts``
    feasible points (previous position, user centroid, random points in
    the motion ball, all projected).  The bound is concave so every
    start converges to the same peak; the multistart is a safeguard.
    """
    prev = region.motion.center
    coeff, alpha = _lower_bound_coeffs(prev, alloc, net)
    users = net.user_positions

    rng = np.random.default_rng(seed)
    cands = [prev, users.mean(axis=0)]
    while len(cands) < starts:
        u = rng.normal(size=3)
        u /= max(np.linalg.norm(u), 1e-12)
        cands.append(prev + u * region.motion.radius * rng.uniform(0.0, 1.0))
    inits = [project(c, region) for c in cands[:starts]]

    best_x, best_val = None, -np.inf
    for x in inits:
        val, grad = capacity_lower_bound(x, coeff, alpha, users)
        gnorm = max(np.linalg.norm(grad), 1e-300)
        # open with a hop spanning half the ball; the gradient scale
        # alone says nothing about how far the peak sits
        step = max(0.5 * region.motion.radius, 1.0) / gnorm
        for _ in range(max_iters):
            cand = project(x + step * grad, region, tol=1e-10)
            cval, cgrad = capacity_lower_bound(cand, coeff, alpha, users)
            if cval > val:
                moved = float(np.linalg.norm(cand - x))
                x, val, grad = cand, cval, cgrad
                step *= 1.5
                if moved <= tol:
                    break
            else:
                step *= 0.4
                if step * max(np.linalg.norm(grad), 1e-300) <= tol:
                    break
        if val > best_val:
            best_x, best_val = x, val
    return best_x


def radial_terms(ref_point, alloc, net, prev_pos, xi: float = 0.01):
    """Per-user coefficients (const, beta) of the chained linearisation.

    Each user's rate is approximated as const_n - beta_n * d_n**2:
    log2(1+x) ~ x/ln2 first, then distance**(-alpha) linear in squared
    distance anchored on a xi-ladder of grid points stepped from the
    previous squared distance toward the reference point's.
    """
    ref = np.asarray(ref_point, dtype=float)
    prev = np.asarray(prev_pos, dtype=float)
    users = net.user_positions
    d2_ref = np.einsum("ij,ij->i", users - ref, users - ref)
    d2_prev = np.einsum("ij,ij->i", users - prev, users - prev)
    rungs = np.floor((d2_ref - d2_prev) / (d2_prev * xi))
    t = np.maximum(d2_prev * (1.0 + rungs * xi), 1e-12)

    interf = interference_at_users(alloc.p_gbs, net)
    strength = net.access.q_coeff * alloc.p_fly / (net.access.noise_power + interf)
    w = net.access.bandwidth / LN2
    alpha = np.broadcast_to(net.access.pathloss_exp, t.shape)
    k = alpha / 2.0
    beta = w * strength * k * t ** (-k - 1.0)
    const = w * strength * t ** (-k) * (1.0 + k)
    return const, beta


def radial_fit(
    ref_point,
    alloc: PowerAllocation,
    net: Network,
    prev_pos,
    xi: float = 0.01,
) -> RadialFit:
    """Quadratic-in-position surrogate of the sum capacity.

    Completing the square over the per-user terms of ``radial_terms``
    turns their sum into offset - curvature*||l - center||^2 exactly,
    with the center a capacity-weighted centroid of the users.
    """
    const, beta = radial_terms(ref_point, alloc, net, prev_pos, xi)
    if not np.all(beta > 0.0):
        raise ValueError("radial weights must be positive; check powers/bandwidths")
    users = net.user_positions
    zeta = float(beta.sum())
    center = (beta[:, None] * users).sum(axis=0) / zeta
    u2 = np.einsum("ij,ij->i", users, users)
    offset = float(const.sum() - (beta * u2).sum() + zeta * float(center @ center))
    return RadialFit(offset=offset, curvature=zeta, center=center)


def position_step(
    prev_pos,
    alloc: PowerAllocation,
    net: Network,
    limits: PositionLimits,
    seed: int = 0,
    starts: int = 4,
    max_halvings: int = 7,
    ref_tol: float = 1e-7,
) -> np.ndarray:
    """One geometric position update; always lands inside the region.

    When the full-reach region certifies empty (the worst-case flow
    bound over a long move can outrun the backhaul), the move radius is
    halved and the region rebuilt — the bound shrinks with the reach, so
    some positive reach admits the current point whenever the held
    powers are flow-feasible.  Gives up after ``max_halvings``.
    """
    prev = np.asarray(prev_pos, dtype=float)
    if limits.motion_radius <= 0.0:
        return prev.copy()
    err: Exception | None = None
    for attempt in range(max_halvings):
        lim = replace(limits, motion_radius=limits.motion_radius / 2.0**attempt)
        try:
            region = build_region(prev, alloc, net, lim)
            ref = reference_point(region, alloc, net, starts=starts, seed=seed, tol=ref_tol)
            fit = radial_fit(ref, alloc, net, prev, xi=limits.xi)
            return project(fit.center, region)
        except (RegionInfeasibleError, FlowInfeasibleError) as exc:
            err = exc
    raise RegionInfeasibleError(
        f"empty position region down to 1/{2 ** (max_halvings - 1)} of the "
        f"move radius ({err})"
    )
