"""Rotary-wing propulsion power and the derived speed limits.

The hover-referenced model has three parts: blade profile power growing
quadratically with forward speed, parasite (fuselage drag) power growing
cubically, and induced power that decays as forward speed builds up
translational lift.  The curve dips below hover power at moderate speed
and then climbs steeply, so a propulsion cap translates into a maximum
usable speed on the increasing branch.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PowerBudgetInfeasibleError

__all__ = [
    "PropulsionParams",
    "propulsion_power",
    "min_power_speed",
    "speed_threshold",
    "SPEED_CAP",
]

# search window for speeds, m/s; generous for any rotary-wing platform
SPEED_CAP = 100.0

_INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class PropulsionParams:
    """Constants of the rotary-wing power curve (all strictly positive)."""

    blade_power: float = 80.0        # W, profile power in hover
    induced_power: float = 88.0      # W, induced power in hover
    tip_speed: float = 120.0         # m/s, rotor blade tip speed
    hover_induced_speed: float = 4.03  # m/s, mean rotor induced velocity in hover
    fuselage_drag_ratio: float = 0.6
    air_density: float = 1.225       # kg/m^3
    rotor_solidity: float = 0.05
    rotor_disc_area: float = 0.503   # m^2

    def __post_init__(self):
        for name in self.__dataclass_fields__:
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")


def propulsion_power(speed, params: PropulsionParams):
    """Mechanical power needed to fly level at ``speed`` m/s.

    Accepts scalars or arrays; speeds must be non-negative.  At zero
    speed this reduces exactly to blade_power + induced_power.
    """
    v = np.asarray(speed, dtype=float)
    if np.any(v < 0.0):
        raise ValueError("speed must be non-negative")
    profile = params.blade_power * (1.0 + 3.0 * v**2 / params.tip_speed**2)
    parasite = (
        0.5
        * params.fuselage_drag_ratio
        * params.air_density
        * params.rotor_solidity
        * params.rotor_disc_area
        * v**3
    )
    v0h = params.hover_induced_speed
    lift = np.sqrt(1.0 + v**4 / (4.0 * v0h**4)) - v**2 / (2.0 * v0h**2)
    # lift is analytically positive; clip guards float cancellation at high v
    induced = params.induced_power * np.sqrt(np.maximum(lift, 0.0))
    out = profile + parasite + induced
    return float(out) if np.isscalar(speed) else out


def min_power_speed(
    params: PropulsionParams, v_cap: float = SPEED_CAP, tol: float = 1e-6
) -> tuple[float, float]:
    """Golden-section minimiser of the power curve on [0, v_cap].

    Returns (speed, power) with the speed located to ``tol`` m/s.  The
    curve is unimodal on this window, so the section search is exact up
    to the tolerance.
    """
    lo, hi = 0.0, float(v_cap)
    a = hi - _INV_GOLDEN * (hi - lo)
    b = lo + _INV_GOLDEN * (hi - lo)
    fa, fb = propulsion_power(a, params), propulsion_power(b, params)
    while hi - lo > tol:
        if fa <= fb:
            hi, b, fb = b, a, fa
            a = hi - _INV_GOLDEN * (hi - lo)
            fa = propulsion_power(a, params)
        else:
            lo, a, fa = a, b, fb
            b = lo + _INV_GOLDEN * (hi - lo)
            fb = propulsion_power(b, params)
    v_star = 0.5 * (lo + hi)
    return v_star, propulsion_power(v_star, params)


def speed_threshold(
    p_threshold: float,
    params: PropulsionParams,
    v_cap: float = SPEED_CAP,
    tol: float = 1e-6,
    _trace: list | None = None,
) -> float:
    """Largest speed whose propulsion power stays within ``p_threshold``.

    Bisects the increasing branch of the power curve, i.e. speeds at or
    above the minimum-power speed.  Returns ``v_cap`` when the cap power
    is still within the threshold, and raises
    :class:`PowerBudgetInfeasibleError` when not even the minimum-power
    speed fits.  ``_trace`` (testing hook) collects the (lo, hi)
    brackets; the invariant P(lo) <= p_threshold <= P(hi) holds for each
    recorded pair.
    """
    v_star, p_min = min_power_speed(params, v_cap=v_cap, tol=tol)
    if p_threshold < p_min:
        raise PowerBudgetInfeasibleError(
            f"propulsion threshold {p_threshold:.3f} W below the minimum "
            f"achievable {p_min:.3f} W"
        )
    if propulsion_power(v_cap, params) <= p_threshold:
        return float(v_cap)
    lo, hi = v_star, float(v_cap)
    while hi - lo > tol:
        if _trace is not None:
            _trace.append((lo, hi))
        mid = 0.5 * (lo + hi)
        if propulsion_power(mid, params) <= p_threshold:
            lo = mid
        else:
            hi = mid
    # lo is on the feasible side of the bracket, so flying at the
    # returned speed never overruns the power cap
    return lo
