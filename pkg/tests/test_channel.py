from __future__ import annotations

import math

import numpy as np
import pytest

from flybs.channel import (
    ChannelAssignment,
    Network,
    Position3D,
    PowerAllocation,
    RadioLink,
    backhaul_capacity,
    dbm_to_watts,
    friis_coefficient,
    received_power,
    sum_capacity,
    user_capacities,
    user_capacity,
    watts_to_dbm,
)


def _link(q=1.0, alpha=2.0, bw=1.0, noise=1.0):
    return RadioLink(q_coeff=q, pathloss_exp=alpha, bandwidth=bw, noise_power=noise)


def _network(users, gbs, access, interference, backhaul, chan, bws):
    return Network(
        user_positions=np.asarray(users, dtype=float),
        gbs_position=np.asarray(gbs, dtype=float),
        access=access,
        interference=interference,
        backhaul=backhaul,
        assignment=ChannelAssignment(chan, bws),
    )


# --- received_power -------------------------------------------------------


def test_received_power_unit_distance():
    assert received_power(1.0, _link(q=1.0, alpha=2.3), 1.0) == 1.0


def test_received_power_inverse_square():
    assert received_power(4.0, _link(q=1.0, alpha=2.0), 2.0) == pytest.approx(1.0, rel=1e-15)


def test_received_power_matches_scalar_evaluation():
    # 5e-5 * 100**-2.3, evaluated independently and frozen
    got = received_power(0.5, _link(q=1e-4, alpha=2.3), 100.0)
    assert got == pytest.approx(1.2559432157547912e-09, rel=1e-12)


def test_received_power_rejects_bad_inputs():
    with pytest.raises(ValueError):
        received_power(1.0, _link(), 0.0)
    with pytest.raises(ValueError):
        received_power(1.0, _link(), -3.0)
    with pytest.raises(ValueError):
        received_power(-1.0, _link(), 5.0)


def test_received_power_homogeneity():
    rng = np.random.default_rng(7)
    for _ in range(200):
        q = 10.0 ** rng.uniform(-6, 2)
        alpha = rng.uniform(1.0, 6.0)
        p = 10.0 ** rng.uniform(-3, 3)
        d = 10.0 ** rng.uniform(0, 4)
        c = 10.0 ** rng.uniform(-2, 2)
        link = _link(q=q, alpha=alpha)
        base = received_power(p, link, d)
        # degree 1 in transmit power
        assert received_power(c * p, link, d) == pytest.approx(c * base, rel=1e-12)
        # degree -alpha in distance
        assert received_power(p, link, c * d) == pytest.approx(
            c ** (-alpha) * base, rel=1e-12
        )


# --- user capacity ---------------------------------------------------------


def _unit_sinr_network():
    """One user; received signal exactly equals noise + interference."""
    access = _link(q=1.0, alpha=2.0, bw=1e6, noise=0.5)
    interference = _link(q=1.0, alpha=2.0, bw=1e6, noise=0.5)
    backhaul = _link(q=1.0, alpha=2.0, bw=1e6, noise=1.0)
    # user 1 m below the craft; GBS 2 m away -> interference gain 1/4
    return _network(
        users=[[0.0, 0.0, 0.0]],
        gbs=[2.0, 0.0, 0.0],
        access=access,
        interference=interference,
        backhaul=backhaul,
        chan=[0],
        bws=[1e6],
    )


def test_user_capacity_unit_sinr():
    net = _unit_sinr_network()
    alloc = PowerAllocation(p_fly=[1.0], p_gbs=[2.0])
    # signal 1.0, interference 2.0/4 = 0.5, noise 0.5 -> SINR exactly 1
    assert user_capacity(0, [0.0, 0.0, 1.0], alloc, net) == pytest.approx(1e6, rel=1e-12)


def test_user_capacity_zero_power():
    net = _unit_sinr_network()
    alloc = PowerAllocation(p_fly=[0.0], p_gbs=[2.0])
    assert user_capacity(0, [0.0, 0.0, 1.0], alloc, net) == 0.0


def _random_network(rng, n):
    s = n  # one channel per user
    access = RadioLink(
        q_coeff=10.0 ** rng.uniform(-5, -2),
        pathloss_exp=rng.uniform(2.0, 3.0),
        bandwidth=np.full(n, 10.0 ** rng.uniform(4, 6)),
        noise_power=np.full(n, 10.0 ** rng.uniform(-13, -10)),
    )
    interference = RadioLink(
        q_coeff=10.0 ** rng.uniform(-5, -2),
        pathloss_exp=rng.uniform(2.0, 3.5),
        bandwidth=access.bandwidth,
        noise_power=access.noise_power,
    )
    backhaul = RadioLink(
        q_coeff=10.0 ** rng.uniform(-5, -2),
        pathloss_exp=rng.uniform(2.0, 2.5),
        bandwidth=np.full(s, 10.0 ** rng.uniform(4, 6)),
        noise_power=np.full(s, 10.0 ** rng.uniform(-14, -11)),
    )
    users = np.column_stack([
        rng.uniform(0, 500, n), rng.uniform(0, 500, n), np.zeros(n)
    ])
    gbs = np.array([rng.uniform(1000, 2000), rng.uniform(0, 500), 30.0])
    net = _network(users, gbs, access, interference, backhaul,
                   np.arange(n), backhaul.bandwidth)
    pos = np.array([rng.uniform(0, 500), rng.uniform(0, 500), rng.uniform(100, 300)])
    alloc = PowerAllocation(
        p_fly=rng.uniform(0.01, 0.5, n), p_gbs=rng.uniform(0.01, 2.0, s)
    )
    return net, pos, alloc


def _capacity_by_hand(net, pos, alloc, n):
    """Per-user rate from the plain formula, pure python math."""
    u = net.user_positions[n]
    d = math.dist(pos, u)
    sig = float(net.access.q_coeff) * alloc.p_fly[n] * d ** (-float(net.access.pathloss_exp))
    dg = math.dist(net.gbs_position, u)
    gain = float(net.interference.q_coeff) * dg ** (-float(net.interference.pathloss_exp))
    interf = gain * alloc.p_gbs[net.assignment.user_to_channel[n]]
    sinr = sig / (float(net.access.noise_power[n]) + interf)
    return float(net.access.bandwidth[n]) * math.log2(1.0 + sinr)


def test_user_capacity_matches_direct_formula():
    rng = np.random.default_rng(11)
    for _ in range(50):
        net, pos, alloc = _random_network(rng, 4)
        got = user_capacities(pos, alloc, net)
        for n in range(4):
            assert got[n] == pytest.approx(_capacity_by_hand(net, pos, alloc, n), rel=1e-12)


def test_sum_capacity_is_the_sum():
    rng = np.random.default_rng(12)
    net, pos, alloc = _random_network(rng, 3)
    want = sum(_capacity_by_hand(net, pos, alloc, n) for n in range(3))
    assert sum_capacity(pos, alloc, net) == pytest.approx(want, rel=1e-12)

    single_net, pos1, alloc1 = _random_network(rng, 1)
    assert sum_capacity(pos1, alloc1, single_net) == pytest.approx(
        user_capacity(0, pos1, alloc1, single_net), rel=1e-15
    )

    zero = PowerAllocation(np.zeros(3), alloc.p_gbs)
    assert sum_capacity(pos, zero, net) == 0.0


def test_capacity_monotone_in_own_power_and_interference():
    rng = np.random.default_rng(13)
    for _ in range(50):
        net, pos, alloc = _random_network(rng, 3)
        n = int(rng.integers(0, 3))
        base = user_capacity(n, pos, alloc, net)
        up = alloc.copy()
        up.p_fly[n] *= 1.01
        assert user_capacity(n, pos, up, net) > base
        hot = alloc.copy()
        hot.p_gbs[net.assignment.user_to_channel[n]] *= 1.01
        assert user_capacity(n, pos, hot, net) < base


# --- backhaul capacity -----------------------------------------------------


def test_backhaul_capacity_zero_and_integer_snr():
    link = _link(q=1.0, alpha=2.0, bw=1.0, noise=1.0)
    assert backhaul_capacity(np.array([0.0]), link, 5.0) == 0.0
    # SNR = 3 at unit distance -> log2(4) = 2 exactly
    assert backhaul_capacity(np.array([3.0]), link, 1.0) == pytest.approx(2.0, rel=1e-15)


def test_backhaul_capacity_additive_over_channels():
    rng = np.random.default_rng(14)
    for _ in range(50):
        q = 10.0 ** rng.uniform(-4, 0)
        alpha = rng.uniform(2.0, 3.0)
        bw = rng.uniform(0.5, 2.0, 2)
        noise = 10.0 ** rng.uniform(-9, -6, 2)
        d = rng.uniform(10, 1000)
        p = rng.uniform(0.1, 3.0, 2)
        both = RadioLink(q, alpha, bw, noise)
        total = backhaul_capacity(p, both, d)
        parts = [
            backhaul_capacity(np.array([p[s]]),
                              RadioLink(q, alpha, bw[s], noise[s]), d)
            for s in range(2)
        ]
        assert total == pytest.approx(parts[0] + parts[1], rel=1e-12)
        # strictly decreasing in distance while any power is on
        assert backhaul_capacity(p, both, d * 1.5) < total


def test_backhaul_capacity_concave_in_power():
    rng = np.random.default_rng(15)
    link = _link(q=0.01, alpha=2.0, bw=1.0, noise=1e-6)
    for _ in range(100):
        a = rng.uniform(0.0, 2.0)
        b = a + rng.uniform(0.1, 3.0)
        mid = backhaul_capacity(np.array([(a + b) / 2]), link, 50.0)
        ends = (
            backhaul_capacity(np.array([a]), link, 50.0)
            + backhaul_capacity(np.array([b]), link, 50.0)
        ) / 2.0
        assert mid >= ends - 1e-12


def test_capacities_invariant_under_common_power_rescale():
    rng = np.random.default_rng(16)
    for _ in range(30):
        net, pos, alloc = _random_network(rng, 3)
        c = 10.0 ** rng.uniform(-3, 3)
        scaled_net = _network(
            net.user_positions, net.gbs_position,
            RadioLink(net.access.q_coeff, net.access.pathloss_exp,
                      net.access.bandwidth, c * net.access.noise_power),
            RadioLink(net.interference.q_coeff, net.interference.pathloss_exp,
                      net.interference.bandwidth, c * net.interference.noise_power),
            RadioLink(net.backhaul.q_coeff, net.backhaul.pathloss_exp,
                      net.backhaul.bandwidth, c * net.backhaul.noise_power),
            net.assignment.user_to_channel, net.assignment.channel_bandwidths,
        )
        scaled = PowerAllocation(c * alloc.p_fly, c * alloc.p_gbs)
        got = user_capacities(pos, scaled, scaled_net)
        want = user_capacities(pos, alloc, net)
        assert np.allclose(got, want, rtol=1e-9)
        d = net.gbs_distance(pos)
        assert backhaul_capacity(scaled.p_gbs, scaled_net.backhaul, d) == pytest.approx(
            backhaul_capacity(alloc.p_gbs, net.backhaul, d), rel=1e-9
        )


# --- supporting types ------------------------------------------------------


def test_position3d_validation_and_distance():
    p = Position3D(1.0, 2.0, 3.0)
    assert p.distance_to(Position3D(1.0, 2.0, 0.0)) == 3.0
    assert np.array_equal(p.as_array(), [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        Position3D(0.0, 0.0, -1.0)
    with pytest.raises(ValueError):
        Position3D(math.nan, 0.0, 0.0)


def test_channel_assignment_validation():
    with pytest.raises(ValueError):
        ChannelAssignment([0, 2], [1.0, 1.0])
    a = ChannelAssignment([0, 1, 0], [2.0, 3.0])
    assert a.n_users == 3 and a.n_channels == 2
    assert np.array_equal(a.user_bandwidths(), [2.0, 3.0, 2.0])
    a.check_total(5.0)
    with pytest.raises(ValueError):
        a.check_total(6.0)


def test_power_allocation_checks():
    alloc = PowerAllocation([0.5, 0.5], [1.0])
    alloc.check(p_fly_max=1.0, p_gbs_max=1.0)
    with pytest.raises(ValueError):
        alloc.check(p_fly_max=0.9, p_gbs_max=1.0)
    with pytest.raises(ValueError):
        PowerAllocation([-0.1, 0.5], [1.0]).check(1.0, 1.0)


def test_dbm_round_trip_and_friis():
    assert dbm_to_watts(30.0) == pytest.approx(1.0, rel=1e-12)
    assert watts_to_dbm(dbm_to_watts(-7.3)) == pytest.approx(-7.3, rel=1e-12)
    with pytest.raises(ValueError):
        watts_to_dbm(0.0)
    q = friis_coefficient(450e6)
    assert 0.0 < q < 1.0
    # doubling the frequency quarters the reference gain
    assert friis_coefficient(900e6) == pytest.approx(q / 4.0, rel=1e-12)
    with pytest.raises(ValueError):
        friis_coefficient(0.0)


def test_link_validation():
    with pytest.raises(ValueError):
        _link(q=0.0)
    with pytest.raises(ValueError):
        _link(alpha=0.5)
    with pytest.raises(ValueError):
        _link(noise=0.0)
