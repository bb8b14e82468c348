"""Radio propagation and Shannon-capacity primitives.

Everything downstream works in linear units: watts for power, Hz for
bandwidth, bits/s for capacity.  dBm appears only at the configuration
boundary.  Pathloss follows the standard power-law model

    p_rx = q * p_tx * d**(-alpha)

with q the combined antenna/reference gain and alpha the pathloss
exponent of the link class.  Access links are interfered by the ground
station, which reuses the very same channels for the wireless backhaul,
so the ground-station transmit powers show up twice: as backhaul signal
and as access interference.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

LN2 = math.log(2.0)

__all__ = [
    "LN2",
    "Position3D",
    "RadioLink",
    "ChannelAssignment",
    "PowerAllocation",
    "Network",
    "received_power",
    "interference_at_users",
    "user_capacity",
    "user_capacities",
    "backhaul_capacity",
    "sum_capacity",
    "dbm_to_watts",
    "watts_to_dbm",
    "friis_coefficient",
    "SPEED_OF_LIGHT",
]


SPEED_OF_LIGHT = 299792458.0  # m/s


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) / 1000.0


def watts_to_dbm(watts: float) -> float:
    if watts <= 0.0:
        raise ValueError("power must be positive to express in dBm")
    return 10.0 * math.log10(watts * 1000.0)


def friis_coefficient(carrier_hz: float) -> float:
    """Free-space reference gain (c / 4 pi f)^2 for unit antenna gains."""
    if carrier_hz <= 0.0:
        raise ValueError("carrier frequency must be positive")
    return (SPEED_OF_LIGHT / (4.0 * math.pi * carrier_hz)) ** 2


@dataclass(frozen=True)
class Position3D:
    """A point in the simulation frame, metres, z up."""

    x: float
    y: float
    z: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise ValueError("coordinates must be finite")
        if self.z < 0.0:
            raise ValueError("altitude must be non-negative")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=float)

    @classmethod
    def from_array(cls, a) -> "Position3D":
        a = np.asarray(a, dtype=float)
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def distance_to(self, other: "Position3D") -> float:
        return math.dist((self.x, self.y, self.z), (other.x, other.y, other.z))


@dataclass(frozen=True)
class RadioLink:
    """Power-law link parameters; fields may be scalars or aligned arrays."""

    q_coeff: np.ndarray      # reference gain, > 0
    pathloss_exp: np.ndarray  # alpha, in [1, 6]
    bandwidth: np.ndarray    # Hz, >= 0
    noise_power: np.ndarray  # watts, > 0 (includes any background floor)

    def __post_init__(self):
        for name in ("q_coeff", "pathloss_exp", "bandwidth", "noise_power"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if not np.all(self.q_coeff > 0.0):
            raise ValueError("q_coeff must be positive")
        if not np.all((self.pathloss_exp >= 1.0) & (self.pathloss_exp <= 6.0)):
            raise ValueError("pathloss exponent out of the supported [1, 6] range")
        if not np.all(self.bandwidth >= 0.0):
            raise ValueError("bandwidth must be non-negative")
        if not np.all(self.noise_power > 0.0):
            raise ValueError("noise power must be positive")


@dataclass(frozen=True)
class ChannelAssignment:
    """Static user-to-channel map with per-channel bandwidths."""

    user_to_channel: np.ndarray   # (N,) ints in [0, S)
    channel_bandwidths: np.ndarray  # (S,) Hz

    def __post_init__(self):
        object.__setattr__(
            self, "user_to_channel", np.asarray(self.user_to_channel, dtype=int)
        )
        object.__setattr__(
            self, "channel_bandwidths", np.asarray(self.channel_bandwidths, dtype=float)
        )
        s = self.channel_bandwidths.size
        if self.user_to_channel.size and (
            self.user_to_channel.min() < 0 or self.user_to_channel.max() >= s
        ):
            raise ValueError("user_to_channel index out of range")
        if not np.all(self.channel_bandwidths > 0.0):
            raise ValueError("channel bandwidths must be positive")

    @property
    def n_users(self) -> int:
        return self.user_to_channel.size

    @property
    def n_channels(self) -> int:
        return self.channel_bandwidths.size

    def user_bandwidths(self) -> np.ndarray:
        return self.channel_bandwidths[self.user_to_channel]

    def check_total(self, total_bandwidth: float, rel_tol: float = 1e-9) -> None:
        got = float(self.channel_bandwidths.sum())
        if abs(got - total_bandwidth) > rel_tol * max(abs(total_bandwidth), 1.0):
            raise ValueError(
                f"channel bandwidths sum to {got}, expected {total_bandwidth}"
            )


@dataclass
class PowerAllocation:
    """Transmit powers: p_fly per user (access), p_gbs per channel (backhaul)."""

    p_fly: np.ndarray  # (N,) watts
    p_gbs: np.ndarray  # (S,) watts

    def __post_init__(self):
        self.p_fly = np.asarray(self.p_fly, dtype=float)
        self.p_gbs = np.asarray(self.p_gbs, dtype=float)

    def copy(self) -> "PowerAllocation":
        return PowerAllocation(self.p_fly.copy(), self.p_gbs.copy())

    def check(self, p_fly_max: float, p_gbs_max: float, atol: float = 1e-9) -> None:
        if np.any(self.p_fly < -atol) or np.any(self.p_gbs < -atol):
            raise ValueError("negative transmit power")
        if self.p_fly.sum() > p_fly_max + atol:
            raise ValueError("access power budget exceeded")
        if self.p_gbs.sum() > p_gbs_max + atol:
            raise ValueError("backhaul power budget exceeded")


@dataclass(frozen=True)
class Network:
    """Geometry and link parameters for one simulation instant.

    ``access`` describes the FlyBS-to-user links (vector fields of length
    N), ``interference`` the GBS-to-user paths on the reused channels
    (length N), and ``backhaul`` the GBS-to-FlyBS channels (length S).
    """

    user_positions: np.ndarray  # (N, 3)
    gbs_position: np.ndarray    # (3,)
    access: RadioLink
    interference: RadioLink
    backhaul: RadioLink
    assignment: ChannelAssignment

    def __post_init__(self):
        object.__setattr__(
            self, "user_positions", np.asarray(self.user_positions, dtype=float)
        )
        object.__setattr__(
            self, "gbs_position", np.asarray(self.gbs_position, dtype=float)
        )

    @property
    def n_users(self) -> int:
        return self.user_positions.shape[0]

    def user_distances(self, flybs_pos: np.ndarray) -> np.ndarray:
        d = self.user_positions - np.asarray(flybs_pos, dtype=float)
        return np.sqrt(np.einsum("ij,ij->i", d, d))

    @cached_property
    def gbs_user_distances(self) -> np.ndarray:
        d = self.user_positions - self.gbs_position
        return np.sqrt(np.einsum("ij,ij->i", d, d))

    @cached_property
    def interference_gains(self) -> np.ndarray:
        """Path gain GBS -> each user (received watts per transmitted watt)."""
        return self.interference.q_coeff * self.gbs_user_distances ** (
            -self.interference.pathloss_exp
        )

    def gbs_distance(self, flybs_pos: np.ndarray) -> float:
        return float(np.linalg.norm(np.asarray(flybs_pos, dtype=float) - self.gbs_position))


def received_power(p_tx, link: RadioLink, distance):
    """Power-law received power; rejects non-positive distances."""
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0.0):
        raise ValueError("distance must be positive")
    p = np.asarray(p_tx, dtype=float)
    if np.any(p < 0.0):
        raise ValueError("transmit power must be non-negative")
    return link.q_coeff * p * d ** (-link.pathloss_exp)


def interference_at_users(p_gbs: np.ndarray, net: Network) -> np.ndarray:
    """Co-channel GBS power received by each user, watts."""
    p_on_user = np.asarray(p_gbs, dtype=float)[net.assignment.user_to_channel]
    return net.interference_gains * p_on_user


def user_capacities(flybs_pos, alloc: PowerAllocation, net: Network) -> np.ndarray:
    """Shannon rates of all users at the given FlyBS position, bits/s."""
    signal = received_power(alloc.p_fly, net.access, net.user_distances(flybs_pos))
    interf = interference_at_users(alloc.p_gbs, net)
    sinr = signal / (net.access.noise_power + interf)
    return net.access.bandwidth * np.log2(1.0 + sinr)


def user_capacity(n: int, flybs_pos, alloc: PowerAllocation, net: Network) -> float:
    return float(user_capacities(flybs_pos, alloc, net)[n])


def backhaul_capacity(p_gbs, link: RadioLink, distance: float) -> float:
    """Total GBS-to-FlyBS capacity over the reused channels, bits/s."""
    snr = received_power(p_gbs, link, distance) / link.noise_power
    return float(np.sum(link.bandwidth * np.log2(1.0 + snr)))


def sum_capacity(flybs_pos, alloc: PowerAllocation, net: Network) -> float:
    return float(user_capacities(flybs_pos, alloc, net).sum())
