import numpy as np
import pytest

from rv2x.config import SimConfig
from rv2x.scenario import build_topology, noise_power, qos_constants


def test_noise_power_values():
    np.testing.assert_allclose(noise_power(SimConfig()), 7.962143411069939e-12, rtol=1e-12)
    np.testing.assert_allclose(noise_power(SimConfig(bandwidth_hz=1.0)),
                               3.981071705534985e-18, rtol=1e-12)
    np.testing.assert_allclose(noise_power(SimConfig(bandwidth_hz=1e7)),
                               3.9810717055349695e-11, rtol=1e-12)


def test_noise_power_monotone_in_bandwidth():
    values = [noise_power(SimConfig(bandwidth_hz=b)) for b in (1e5, 1e6, 1e7)]
    assert values[0] < values[1] < values[2], "noise power must grow with bandwidth"


def test_qos_constants_values():
    gamma_v, d_v = qos_constants(SimConfig())
    np.testing.assert_allclose(gamma_v, 0.07673756824752309, rtol=1e-12)
    np.testing.assert_allclose(d_v, 5.307289668506612, rtol=1e-12)


def test_qos_constants_threshold_identity():
    # transmitting the whole packet at SINR = gamma_v takes exactly the delay budget
    cfg = SimConfig()
    gamma_v, _ = qos_constants(cfg)
    tau = cfg.packet_bits / (cfg.bandwidth_hz * np.log2(1.0 + gamma_v))
    np.testing.assert_allclose(tau, cfg.delay_req_s, rtol=1e-12)


def test_qos_constants_scale_with_budget():
    # a looser delay budget lowers the SINR threshold
    g1, _ = qos_constants(SimConfig(delay_req_s=10e-3))
    g2, _ = qos_constants(SimConfig(delay_req_s=20e-3))
    assert g2 < g1


def test_topology_v2v_distance_exact_uniform_range():
    cfg = SimConfig(num_pairs=20)
    rng = np.random.default_rng(7)
    for _ in range(100):
        top = build_topology(cfg, rng)
        d = np.linalg.norm(top.v2v_tx - top.v2v_rx, axis=1)
        np.testing.assert_allclose(d, top.d_v2v_m, rtol=1e-12)
        assert np.all(top.d_v2v_m >= cfg.v2v_dist_lo_m - 1e-9)
        assert np.all(top.d_v2v_m <= cfg.v2v_dist_hi_m + 1e-9)


def test_topology_positions_inside_area():
    cfg = SimConfig(num_pairs=20)
    rng = np.random.default_rng(11)
    for _ in range(50):
        top = build_topology(cfg, rng)
        for pts in (top.v2i_tx, top.v2v_tx, top.v2v_rx):
            assert np.all(pts >= -1e-9) and np.all(pts <= cfg.area_side_m + 1e-9)


def test_topology_rsu_at_center():
    top = build_topology(SimConfig(), np.random.default_rng(0))
    np.testing.assert_allclose(top.rsu, [200.0, 200.0])


def test_topology_receiver_shares_a_street_with_transmitter():
    cfg = SimConfig(num_pairs=20)
    rng = np.random.default_rng(3)
    top = build_topology(cfg, rng)
    same_axis = np.isclose(top.v2v_tx[:, 0], top.v2v_rx[:, 0]) | \
        np.isclose(top.v2v_tx[:, 1], top.v2v_rx[:, 1])
    assert np.all(same_axis), "V2V receiver must stay on the transmitter's street"


def test_topology_street_placement_on_grid():
    cfg = SimConfig(num_pairs=20, manhattan_spacing_m=100.0)
    rng = np.random.default_rng(5)
    top = build_topology(cfg, rng)
    lines = np.arange(0.0, 400.0 + 50.0, 100.0)
    for pts in (top.v2i_tx, top.v2v_tx):
        on_line = np.isclose(pts[:, 0][:, None], lines[None, :]).any(axis=1) | \
            np.isclose(pts[:, 1][:, None], lines[None, :]).any(axis=1)
        assert np.all(on_line)


def test_topology_disk_placement_within_radius():
    cfg = SimConfig(num_pairs=20, v2i_placement="disk_uniform")
    rng = np.random.default_rng(9)
    for _ in range(20):
        top = build_topology(cfg, rng)
        r = np.linalg.norm(top.v2i_tx - top.rsu, axis=1)
        assert np.all(r <= 200.0 + 1e-9)


def test_topology_distance_matrix():
    cfg = SimConfig(num_pairs=4)
    top = build_topology(cfg, np.random.default_rng(2))
    assert top.d_cross_m.shape == (4, 4)
    # cross distances are V2I transmitter -> V2V receiver, row = uplink index
    for n in range(4):
        for m in range(4):
            dx = top.v2i_tx[n, 0] - top.v2v_rx[m, 0]
            dy = top.v2i_tx[n, 1] - top.v2v_rx[m, 1]
            np.testing.assert_allclose(top.d_cross_m[n, m], (dx * dx + dy * dy) ** 0.5,
                                       rtol=1e-12)
    np.testing.assert_allclose(top.d_v2i_m, np.linalg.norm(top.v2i_tx - top.rsu, axis=1))
    np.testing.assert_allclose(top.d_v2v_rsu_m, np.linalg.norm(top.v2v_tx - top.rsu, axis=1))


def test_topology_deterministic_per_seed():
    cfg = SimConfig()
    a = build_topology(cfg, np.random.default_rng(42))
    b = build_topology(cfg, np.random.default_rng(42))
    np.testing.assert_array_equal(a.v2i_tx, b.v2i_tx)
    np.testing.assert_array_equal(a.v2v_tx, b.v2v_tx)
    np.testing.assert_array_equal(a.v2v_rx, b.v2v_rx)
