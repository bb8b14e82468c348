"""Access-link power allocation.

For fixed FlyBS position and fixed ground-station (backhaul) powers the
per-user SINR is an affine function of own transmit power,

    sinr_n = gain_n * p_n,      gain_n = q_n * d_n**(-alpha_n) / (noise_n + i_n),

so maximising the sum rate subject to rate floors, a total power budget
and the backhaul flow cap is a concave program.  The flow cap is imposed
through a tangent-line upper bound of log2(1 + gain*p) on a fixed grid,
which keeps the constraint affine in p and conservative: any allocation
accepted here satisfies the true flow constraint.

The solver is an exact two-multiplier water-filling: the KKT system has
one multiplier for the budget and one for the (linearised) flow cap, and
both are located by safeguarded scalar root finding.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .channel import LN2
from .errors import QoSInfeasibleError

__all__ = [
    "AccessProblem",
    "qos_power_floor",
    "qos_power_floors",
    "taylor_log_upper_bound",
    "solve_access",
]


@dataclass(frozen=True)
class AccessProblem:
    """Sum-rate maximisation data for the FlyBS-to-user links.

    ``gain`` is the per-user SINR per transmitted watt (1/W), already
    folding in pathloss, noise and co-channel interference.  ``tau`` is
    the grid step of the tangent-line flow bound; smaller is tighter.
    """

    gain: np.ndarray        # (N,) 1/W, > 0
    bandwidth: np.ndarray   # (N,) Hz, > 0
    c_min: np.ndarray       # (N,) bits/s, >= 0
    p_max: float            # watts
    backhaul_cap: float     # bits/s, flow ceiling
    tau: float              # tangent grid step, > 0

    def __post_init__(self):
        for name in ("gain", "bandwidth", "c_min"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not np.all(self.gain > 0.0):
            raise ValueError("gains must be positive")
        if not np.all(self.bandwidth > 0.0):
            raise ValueError("bandwidths must be positive")
        if np.any(self.c_min < 0.0):
            raise ValueError("rate floors must be non-negative")
        if self.p_max <= 0.0 or self.tau <= 0.0:
            raise ValueError("p_max and tau must be positive")
        if self.backhaul_cap < 0.0:
            raise ValueError("backhaul cap must be non-negative")

    @property
    def n_users(self) -> int:
        return self.gain.size


def qos_power_floors(problem: AccessProblem) -> np.ndarray:
    """Smallest per-user powers meeting the rate floors, watts."""
    return (2.0 ** (problem.c_min / problem.bandwidth) - 1.0) / problem.gain


def qos_power_floor(n: int, problem: AccessProblem) -> float:
    return float(qos_power_floors(problem)[n])


def taylor_log_upper_bound(gain, power, tau):
    """Tangent-line upper bound of log2(1 + gain*power) on a tau-grid.

    The tangent is taken at the grid point s*tau with s = floor(gain *
    power / tau), so the bound is exact on the grid and tightens as tau
    shrinks.  Supports broadcasting; returns bits (per Hz of bandwidth).
    """
    y = np.asarray(gain, dtype=float) * np.asarray(power, dtype=float)
    if np.any(y < 0.0):
        raise ValueError("gain*power must be non-negative")
    y0 = np.floor(y / tau) * tau
    out = (np.log1p(y0) + (y - y0) / (1.0 + y0)) / LN2
    return float(out) if out.ndim == 0 else out


def _tangent_coeffs(problem: AccessProblem, p: np.ndarray):
    """Affine coefficients of the flow bound at the grid cell of ``p``.

    Returns (slope, offset) with sum(slope*p + offset) the linearised
    total rate in bits/s.
    """
    y0 = np.floor(problem.gain * p / problem.tau) * problem.tau
    w = problem.bandwidth / LN2
    slope = w * problem.gain / (1.0 + y0)
    offset = w * (np.log1p(y0) - y0 / (1.0 + y0))
    return slope, offset


def _exact_rate(problem: AccessProblem, p: np.ndarray) -> float:
    return float(np.sum(problem.bandwidth * np.log1p(problem.gain * p) / LN2))


def _waterfill(w, gain, floors, p_max, slope, flow_room):
    """Maximise sum(w*ln(1+gain*p)) over {p >= floors, sum(p) <= p_max,
    sum(slope*p) <= flow_room}.

    Exact KKT solve: p_n(lam, mu) = max(floor_n, w_n/(lam + mu*slope_n)
    - 1/gain_n) with the two multipliers found by nested Brent searches.
    Returns (p, lam, mu).
    """
    inv_gain = 1.0 / gain

    def powers(lam, mu):
        # lam = mu = 0 legitimately probes the unconstrained end of the
        # bracket; the resulting inf water level just means "all floors"
        with np.errstate(divide="ignore"):
            level = w / (lam + mu * slope)
        return np.maximum(floors, level - inv_gain)

    lam_hi = float(np.max(w * gain / (1.0 + gain * floors))) * (1.0 + 1e-12) + 1e-300

    def budget_gap(lam, mu):
        return float(powers(lam, mu).sum()) - p_max

    def flow_gap(lam, mu):
        return float(slope @ powers(lam, mu)) - flow_room

    def lam_for_budget(mu):
        """Multiplier closing the budget at fixed mu (0 if already slack)."""
        if budget_gap(0.0 if mu > 0.0 else lam_hi * 1e-18, mu) <= 0.0:
            return 0.0 if mu > 0.0 else lam_hi * 1e-18
        return brentq(
            budget_gap,
            0.0 if mu > 0.0 else lam_hi * 1e-18,
            lam_hi,
            args=(mu,),
            xtol=1e-18,
            rtol=1e-15,
            maxiter=200,
        )

    # budget-only water level
    lam0 = lam_for_budget(0.0)
    if flow_gap(lam0, 0.0) <= 1e-9 * max(flow_room, 1.0):
        return powers(lam0, 0.0), lam0, 0.0

    # flow-only water level
    mu_hi = float(np.max(w * gain / ((1.0 + gain * floors) * slope))) * (1.0 + 1e-12)
    if flow_gap(0.0, mu_hi) > 0.0:
        # floors alone overrun the linearised flow cap
        raise QoSInfeasibleError("rate floors exceed the backhaul flow cap")
    mu_lo = mu_hi * 1e-18
    if flow_gap(0.0, mu_lo) <= 0.0:
        mu0 = mu_lo
    else:
        mu0 = brentq(
            lambda m: flow_gap(0.0, m), mu_lo, mu_hi,
            xtol=1e-18, rtol=1e-15, maxiter=200,
        )
    if budget_gap(0.0, mu0) <= 1e-9 * max(p_max, 1.0):
        return powers(0.0, mu0), 0.0, mu0

    # both constraints active: outer root on mu, inner budget solve
    def both(mu):
        return flow_gap(lam_for_budget(mu), mu)

    mu_star = brentq(both, 0.0, mu_hi, xtol=1e-18, rtol=1e-15, maxiter=200)
    lam_star = lam_for_budget(mu_star)
    return powers(lam_star, mu_star), lam_star, mu_star


def solve_access(problem: AccessProblem, max_rounds: int = 60) -> np.ndarray:
    """Optimal access powers for the given problem, watts.

    Feasibility is checked at the rate floors first (budget and the
    linearised flow cap); the tangent grid of the flow bound is then
    refitted around the current iterate until it stops moving.  Every
    iterate is feasible for the true flow constraint because the bound
    dominates the exact rate, and the final iterate is the exact optimum
    of its own linearisation.
    """
    floors = qos_power_floors(problem)
    w = problem.bandwidth / LN2
    if float(floors.sum()) > problem.p_max * (1.0 + 1e-12) + 1e-300:
        raise QoSInfeasibleError(
            f"rate floors need {floors.sum():.6g} W, budget is {problem.p_max:.6g} W"
        )
    # at the floors the exact rates equal the floors themselves, so the
    # honest feasibility test is against their sum, not the tangent bound
    if float(problem.c_min.sum()) > problem.backhaul_cap * (1.0 + 1e-9):
        raise QoSInfeasibleError("rate floors exceed the backhaul flow cap")

    p = floors.copy()
    best_p, best_val = p, _exact_rate(problem, p)
    prev_cells = None
    for _ in range(max_rounds):
        slope, offset = _tangent_coeffs(problem, p)
        flow_room = problem.backhaul_cap - float(offset.sum())
        if float(slope @ floors) > flow_room:
            # this tangent set rejects even the floors; re-anchor at the
            # floors and widen the room just enough to admit them.  With
            # p >= floors the widened constraint then only admits the
            # floors themselves, whose exact rates fit the cap.
            slope, offset = _tangent_coeffs(problem, floors)
            flow_room = max(
                problem.backhaul_cap - float(offset.sum()), float(slope @ floors)
            )
        p, _, _ = _waterfill(w, problem.gain, floors, problem.p_max, slope, flow_room)
        val = _exact_rate(problem, p)
        if val > best_val:
            best_p, best_val = p, val
        cells = np.floor(problem.gain * p / problem.tau)
        if prev_cells is not None and np.array_equal(cells, prev_cells):
            break
        prev_cells = cells
    return best_p
