"""Ground-station (backhaul) power allocation.

Raising power on a backhaul channel helps twice and hurts once: it
increases the GBS-to-FlyBS capacity of that channel, but the same
transmission lands as co-channel interference at the users served on
it.  The sum of user rates is therefore convex and decreasing in every
channel power, while the feasible set cut out by the QoS caps, the power
budget and the flow-conservation constraint is convex, i.e. the
subproblem is a concave program whose optima sit on the boundary.

The solver runs repeated linearise-and-minimise steps (the objective is
convex, so jumping to the minimiser of the linearised interference cost
never decreases the true objective) from several feasible starts.  The
inner step, a linear objective over the convex set, is solved exactly by
dualising the flow constraint: for fixed multipliers the problem
separates per channel into scalar strictly-convex minimisations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .channel import LN2
from .errors import FlowInfeasibleError, QoSInfeasibleError

__all__ = [
    "BackhaulProblem",
    "qos_power_cap",
    "qos_power_caps",
    "channel_power_caps",
    "flow_residual",
    "solve_backhaul",
]

_FEAS_TOL = 1e-9


@dataclass(frozen=True)
class BackhaulProblem:
    """Data for the GBS power subproblem at a fixed network state.

    Per user: received access signal (watts), the gain turning channel
    power into received interference, the noise floor, bandwidth, rate
    floor and serving channel.  Per channel: the backhaul SNR gain per
    transmitted watt and the channel bandwidth.
    """

    signal: np.ndarray             # (N,) watts, >= 0
    interference_gain: np.ndarray  # (N,) dimensionless path gain, > 0
    noise: np.ndarray              # (N,) watts, > 0
    bandwidth_user: np.ndarray     # (N,) Hz, > 0
    c_min: np.ndarray              # (N,) bits/s, >= 0
    channel_of_user: np.ndarray    # (N,) int in [0, S)
    gbs_gain: np.ndarray           # (S,) 1/W, > 0
    bandwidth_channel: np.ndarray  # (S,) Hz, > 0
    budget: float                  # watts

    def __post_init__(self):
        arrays = (
            "signal", "interference_gain", "noise", "bandwidth_user",
            "c_min", "gbs_gain", "bandwidth_channel",
        )
        for name in arrays:
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(
            self, "channel_of_user", np.asarray(self.channel_of_user, dtype=int)
        )
        if np.any(self.signal < 0.0):
            raise ValueError("signal powers must be non-negative")
        if not np.all(self.interference_gain > 0.0):
            raise ValueError("interference gains must be positive")
        if not (np.all(self.noise > 0.0) and np.all(self.gbs_gain > 0.0)):
            raise ValueError("noise and backhaul gains must be positive")
        if self.budget <= 0.0:
            raise ValueError("budget must be positive")

    @property
    def n_users(self) -> int:
        return self.signal.size

    @property
    def n_channels(self) -> int:
        return self.gbs_gain.size


def qos_power_caps(problem: BackhaulProblem) -> np.ndarray:
    """Per-user ceilings on the serving channel's GBS power, watts.

    Derived by inverting the SINR floor; a rate floor of zero means no
    cap (infinity).  A negative cap certifies that the user misses its
    floor even without interference.
    """
    floor_snr = 2.0 ** (problem.c_min / problem.bandwidth_user) - 1.0
    caps = np.full(problem.n_users, np.inf)
    active = floor_snr > 0.0
    caps[active] = (
        problem.signal[active] / floor_snr[active] - problem.noise[active]
    ) / problem.interference_gain[active]
    if np.any(caps < 0.0):
        bad = int(np.argmin(caps))
        raise QoSInfeasibleError(
            f"user {bad} cannot reach its rate floor even without interference"
        )
    return caps


def qos_power_cap(n: int, problem: BackhaulProblem) -> float:
    return float(qos_power_caps(problem)[n])


def channel_power_caps(problem: BackhaulProblem) -> np.ndarray:
    """Per-channel cap: minimum over the users sharing the channel."""
    caps = np.full(problem.n_channels, np.inf)
    np.minimum.at(caps, problem.channel_of_user, qos_power_caps(problem))
    return caps


def _user_rates(problem: BackhaulProblem, p_gbs: np.ndarray) -> np.ndarray:
    x = problem.noise + problem.interference_gain * p_gbs[problem.channel_of_user]
    return problem.bandwidth_user * np.log1p(problem.signal / x) / LN2


def _backhaul_rates(problem: BackhaulProblem, p_gbs: np.ndarray) -> np.ndarray:
    return problem.bandwidth_channel * np.log1p(problem.gbs_gain * p_gbs) / LN2


def objective(problem: BackhaulProblem, p_gbs: np.ndarray) -> float:
    """Sum of user rates (bits/s); the quantity being maximised."""
    return float(_user_rates(problem, p_gbs).sum())


def flow_residual(problem: BackhaulProblem, p_gbs: np.ndarray) -> float:
    """Served traffic minus backhaul capacity; <= 0 means feasible."""
    return float(_user_rates(problem, p_gbs).sum() - _backhaul_rates(problem, p_gbs).sum())


def _deriv_eval(problem: BackhaulProblem):
    """Derivative evaluator with the per-problem constants hoisted out.

    The returned closure computes the per-channel first and second
    derivatives of the flow residual; it sits at the bottom of three
    nested loops, so the constant factors matter.
    """
    g = problem.channel_of_user
    s = problem.n_channels
    a = problem.signal
    b = problem.interference_gain
    noise = problem.noise
    wu_ab = problem.bandwidth_user / LN2 * a * b
    gg = problem.gbs_gain
    wc_gg = problem.bandwidth_channel / LN2 * gg

    def derivs(p):
        x = noise + b * p[g]
        xa = x + a
        t = 1.0 / (x * xa)
        d1 = np.bincount(g, weights=-wu_ab * t, minlength=s)
        d2 = np.bincount(g, weights=wu_ab * b * (x + xa) * t * t, minlength=s)
        y = 1.0 + gg * p
        d1 -= wc_gg / y
        d2 += wc_gg * gg / (y * y)
        return d1, d2

    return derivs


def _residual_derivs(problem: BackhaulProblem, p: np.ndarray):
    """Per-channel first and second derivatives of the flow residual."""
    return _deriv_eval(problem)(p)


def _gradient(problem: BackhaulProblem, p: np.ndarray) -> np.ndarray:
    """Per-channel gradient of the objective (non-positive)."""
    g = problem.channel_of_user
    x = problem.noise + problem.interference_gain * p[g]
    wu = problem.bandwidth_user / LN2
    a, b = problem.signal, problem.interference_gain
    du = -wu * a * b / (x * (x + a))
    return np.bincount(g, weights=du, minlength=problem.n_channels)


def _solve_marginal(
    problem: BackhaulProblem,
    target: np.ndarray,
    caps: np.ndarray,
    p0: np.ndarray | None = None,
    derivs=None,
    ends=None,
):
    """Vectorised root of residual'(p_s) = target_s on [0, cap_s].

    residual' is strictly increasing (the residual is convex), so each
    channel has at most one interior root; channels whose derivative
    never reaches the target clamp to the nearest box face.  Newton with
    a bisection safeguard; a warm start near the root converges in a
    few iterations, which matters because this sits at the bottom of
    the dual loops.  ``ends`` takes the precomputed first derivatives at
    the box faces -- they depend only on ``caps``, so callers that solve
    many targets over one box pay for them once.
    """
    if derivs is None:
        derivs = _deriv_eval(problem)
    lo = np.zeros_like(caps)
    hi = caps.copy()
    if ends is None:
        d_lo = derivs(lo)[0]
        d_hi = derivs(hi)[0]
    else:
        d_lo, d_hi = ends
    at_zero = d_lo >= target
    at_cap = d_hi <= target
    if p0 is None:
        p = 0.5 * (lo + hi)
    else:
        p = np.minimum(np.maximum(p0, 1e-12 * hi), hi * (1.0 - 1e-12))
    interior = ~(at_zero | at_cap)
    # the root must sit well below the outer flow tolerance or the
    # multiplier search runs on noise; 1e-11 relative keeps it there
    err_tol = 1e-11 * np.abs(target)
    for _ in range(80):
        if not np.any(interior):
            break
        d1, d2 = derivs(p)
        err = d1 - target
        below = err < 0.0
        lo = np.where(interior & below, p, lo)
        hi = np.where(interior & ~below, p, hi)
        step = np.where(d2 > 0.0, err / np.where(d2 > 0.0, d2, 1.0), 0.0)
        cand = p - step
        use_newton = (cand > lo) & (cand < hi)
        nxt = np.where(use_newton, cand, 0.5 * (lo + hi))
        p = np.where(interior, nxt, p)
        width = hi - lo
        interior = interior & (width > 1e-15 * np.maximum(caps, 1e-30)) & (
            np.abs(err) > err_tol
        )
    p = np.where(at_zero, 0.0, p)
    p = np.where(at_cap, caps, p)
    return p


def _linear_min(problem, weights, caps, budget, anchor, warm_nu=None, derivs=None,
                ends=None, p_seed=None):
    """Exact minimiser of sum(weights * p) over the feasible set.

    Dualises the flow constraint: for multiplier nu the per-channel cost
    weights_s * p + nu * residual_s(p) is strictly convex with the root
    condition residual'(p) = -weights_s / nu.  A second multiplier on
    the budget is activated only when the flow-optimal point overruns
    the total power budget.  ``warm_nu`` carries the multiplier between
    calls of one ascent chain, where it barely moves, and ``p_seed``
    (typically the current ascent iterate) primes the inner marginal
    solve the same way.
    """
    scale = max(float(np.max(weights)), 1e-300)
    # the flow residual computed through the per-channel marginal solves
    # carries noise of order the marginal tolerance, so demanding much
    # more than ~1e-9 relative only burns bisection steps
    ftol = 1e-9 * max(float(problem.bandwidth_user.sum()), 1.0)
    warm = {"p": p_seed}
    if warm_nu is None:
        warm_nu = {}
    if derivs is None:
        derivs = _deriv_eval(problem)
    if ends is None:
        ends = (derivs(np.zeros_like(caps))[0], derivs(caps)[0])

    def p_of(nu, shift):
        p = _solve_marginal(problem, -(weights + shift) / nu, caps, warm["p"], derivs, ends)
        warm["p"] = p
        return p

    def nu_star(shift):
        """Root of flow_residual(p(nu)) by safeguarded Newton on nu.

        The residual is decreasing in nu and an interior root is
        guaranteed by the feasibility certificate taken before the
        ascent starts (as nu grows the iterate tends to the residual
        minimiser, which is feasible); when the flow is slack even at a
        vanishing multiplier the bracket collapses onto its lower end,
        whose iterate is the unconstrained box minimum.  Failed Newton
        steps fall back to bisection in log space.
        """
        # the nu -> 0 limit is the box minimiser of the cost alone: a
        # corner picked by the cost signs (ties go to the cap, which can
        # only help the flow).  When that corner already satisfies the
        # flow, it is exactly optimal and the search is over.
        corner = np.where(weights + shift > 0.0, 0.0, caps)
        if flow_residual(problem, corner) <= 0.0:
            return 0.0, corner
        nu_hi = float(np.max((weights + shift) / np.maximum(-ends[1], 1e-300))) * 4.0
        nu_lo = nu_hi * 1e-18
        # the optimal multiplier scales with the weights, so the warm
        # start carries the bracket ratio rather than the absolute value
        nu = warm_nu.get("ratio", 1e-9) * nu_hi
        nu = min(max(nu, nu_lo * 2.0), nu_hi * 0.5)
        p = p_of(nu, shift)
        for _ in range(90):
            res = flow_residual(problem, p)
            if abs(res) <= ftol or nu_hi - nu_lo <= 1e-13 * nu_hi:
                break
            if res > 0.0:
                nu_lo = nu
            else:
                nu_hi = nu
            d1, d2 = derivs(p)
            free = (p > 0.0) & (p < caps) & (d2 > 0.0)
            slope = -np.sum(
                np.where(free, (weights + shift) ** 2 / np.where(free, d2, 1.0), 0.0)
            ) / nu**3
            cand = nu - res / slope if slope < 0.0 else -1.0
            if not (nu_lo < cand < nu_hi):
                # prefer a local geometric hop over the global log
                # midpoint: it keeps consecutive marginal solves close,
                # so their warm starts stay effective
                cand = nu * 8.0 if res > 0.0 else nu / 8.0
                if not (nu_lo < cand < nu_hi):
                    cand = math.sqrt(nu_lo * nu_hi)
            nu = cand
            p = p_of(nu, shift)
        if shift == 0.0:
            warm_nu["ratio"] = nu / nu_hi
        return nu, p

    _, p = nu_star(0.0)
    if p.sum() <= budget * (1.0 + 1e-12):
        return _repair_flow(problem, p, anchor)

    def over(shift):
        _, q = nu_star(shift)
        return float(q.sum()) - budget

    sh_hi = scale if scale > 0 else 1.0
    for _ in range(200):
        if over(sh_hi) <= 0.0:
            break
        sh_hi *= 2.0
    else:
        raise FlowInfeasibleError("flow requires more than the power budget")
    shift = brentq(over, 0.0, sh_hi, xtol=1e-14 * sh_hi, rtol=1e-12, maxiter=200)
    _, p = nu_star(shift)
    if p.sum() > budget:
        p *= budget / p.sum()
    return _repair_flow(problem, p, anchor)


def _repair_flow(problem, p, anchor, tol=1e-10):
    """Blend toward the minimum-residual anchor until the flow holds."""
    if flow_residual(problem, p) <= tol:
        return p
    lo, hi = 0.0, 1.0
    for _ in range(50):
        if hi - lo <= 1e-9:
            break
        mid = 0.5 * (lo + hi)
        q = p + mid * (anchor - p)
        if flow_residual(problem, q) <= 0.0:
            hi = mid
        else:
            lo = mid
    return p + hi * (anchor - p)


def _min_residual_point(problem: BackhaulProblem, caps: np.ndarray, budget: float):
    """Minimiser of the flow residual over the box and budget.

    The residual decreases in every channel power, so without the budget
    the minimum sits at the caps; otherwise the marginal residual
    reductions are equalised across channels (water-filling style).
    """
    caps_fin = np.minimum(caps, budget)
    if caps_fin.sum() <= budget:
        p = caps_fin
        return p, flow_residual(problem, p)
    derivs = _deriv_eval(problem)
    ends = (derivs(np.zeros_like(caps_fin))[0], derivs(caps_fin)[0])
    kap_hi = float(np.max(-ends[0])) * (1.0 + 1e-9)

    def gap(kappa):
        target = np.full_like(caps_fin, -kappa)
        return float(_solve_marginal(problem, target, caps_fin, None, derivs, ends).sum()) - budget

    kappa = brentq(gap, kap_hi * 1e-18, kap_hi, xtol=1e-300, rtol=1e-13, maxiter=200)
    p = _solve_marginal(problem, np.full_like(caps_fin, -kappa), caps_fin, None, derivs, ends)
    if p.sum() > budget:
        p *= budget / p.sum()
    return p, flow_residual(problem, p)


def solve_backhaul(
    problem: BackhaulProblem,
    starts: int = 8,
    seed: int = 0,
    extra_starts: tuple = (),
    max_rounds: int = 40,
) -> np.ndarray:
    """Best found GBS power vector, watts.

    Multistart conditional-ascent: from each feasible initialisation the
    objective is linearised and the linear cost minimised exactly over
    the feasible set; convexity of the objective makes each jump
    non-decreasing.  Starts are ``starts`` random feasible points plus
    the all-caps and minimal-feasible corners (and any ``extra_starts``,
    e.g. an incumbent).  Deterministic for a fixed problem and seed.
    """
    caps = np.minimum(channel_power_caps(problem), problem.budget)
    # cheap feasibility probe first: the scaled box top is usually deep
    # inside the flow set, and only when it is not does the certificate
    # need the exact residual minimiser
    probe = caps if caps.sum() <= problem.budget else caps * (problem.budget / caps.sum())
    if flow_residual(problem, probe) <= 0.0:
        anchor = probe
    else:
        anchor, best_residual = _min_residual_point(problem, caps, problem.budget)
        if best_residual > _FEAS_TOL * max(problem.bandwidth_user.sum(), 1.0):
            raise FlowInfeasibleError(
                f"served floors unreachable: best flow residual {best_residual:.6g} bits/s"
            )
        anchor = _repair_flow(problem, anchor, anchor)
        if flow_residual(problem, anchor) > 0.0:
            # the minimum sits exactly on the boundary; accept it as the only point
            return anchor

    def feasibilize(p_raw):
        p = np.minimum(np.asarray(p_raw, dtype=float), caps)
        total = p.sum()
        if total > problem.budget:
            p *= problem.budget / total
        return _repair_flow(problem, p, anchor)

    rng = np.random.default_rng(seed)
    derivs = _deriv_eval(problem)
    ends = (derivs(np.zeros_like(caps))[0], derivs(caps)[0])
    # incumbents go first: their chains usually set the best value in one
    # round, letting the corner chains stop as soon as they land on it
    inits = [feasibilize(p) for p in extra_starts]
    inits.extend(feasibilize(rng.uniform(0.0, 1.0, caps.size) * caps) for _ in range(starts))
    inits.append(feasibilize(caps))          # all-caps corner
    inits.append(
        _linear_min(problem, np.ones_like(caps), caps, problem.budget, anchor,
                    None, derivs, ends)
    )
    seen: set = set()
    inits = [x for x in inits if not (x.tobytes() in seen or seen.add(x.tobytes()))]

    best_p, best_val = None, -np.inf
    for x in inits:
        val = objective(problem, x)
        # the multiplier ratio transfers between the rounds of one chain,
        # whose gradients barely move, but not between chains
        warm_nu: dict = {}
        for _ in range(max_rounds):
            y = _linear_min(
                problem, -_gradient(problem, x), caps, problem.budget, anchor,
                warm_nu, derivs, ends,
            )
            new_val = objective(problem, y)
            if new_val <= val + 1e-9 * (abs(val) + 1.0):
                if new_val > val:
                    x, val = y, new_val
                break
            x, val = y, new_val
            # chains from different corners funnel into the same fixed
            # point; once a jump lands on the incumbent best there is
            # nothing left for this chain to add
            if best_p is not None and abs(val - best_val) <= 1e-9 * (abs(best_val) + 1.0):
                break
        if val > best_val:
            best_p, best_val = x, val
    return best_p
