"""Deployment geometry and QoS-derived constants.

A square service area with a Manhattan street grid and a road-side unit at the
center.  Every transmitter is a vehicle: V2I links are uplinks towards the
RSU, and each V2V pair reuses the resource block of exactly one V2I link.
"""

import dataclasses

import numpy as np


@dataclasses.dataclass
class Topology:
    """Positions (meters) and the link distances derived from them."""

    rsu: np.ndarray          # (2,)
    v2i_tx: np.ndarray       # (N, 2) V2I transmitters
    v2v_tx: np.ndarray       # (M, 2)
    v2v_rx: np.ndarray       # (M, 2)
    d_v2i_m: np.ndarray      # (N,)   V2I TX -> RSU
    d_v2v_m: np.ndarray      # (M,)   V2V TX -> V2V RX, uniform in the configured range
    d_v2v_rsu_m: np.ndarray  # (M,)   V2V TX -> RSU (interference into the uplink)
    d_cross_m: np.ndarray    # (N, M) V2I TX -> V2V RX (interference into the sidelink)


def _street_points(side, spacing, count, rng):
    """Uniform positions on the axis-aligned street grid of pitch `spacing`."""
    lines = np.arange(0.0, side + 0.5 * spacing, spacing)
    horizontal = rng.random(count) < 0.5
    line_coord = rng.choice(lines, size=count)
    along = rng.uniform(0.0, side, size=count)
    pts = np.empty((count, 2))
    pts[horizontal, 0] = along[horizontal]
    pts[horizontal, 1] = line_coord[horizontal]
    pts[~horizontal, 0] = line_coord[~horizontal]
    pts[~horizontal, 1] = along[~horizontal]
    return pts, horizontal, line_coord


def build_topology(config, rng):
    """Draw a deployment.

    V2V receivers sit on the same street as their transmitter at an exact
    uniform distance; the direction is chosen at random among those that keep
    the receiver inside the area, so the drawn distance is never clipped.
    """
    side = config.area_side_m
    m = config.num_pairs
    rsu = np.array([0.5 * side, 0.5 * side])

    if config.v2i_placement == "street_uniform":
        v2i_tx, _, _ = _street_points(side, config.manhattan_spacing_m, m, rng)
    else:  # disk_uniform: uniform in the inscribed disk around the RSU
        radius = 0.5 * side * np.sqrt(rng.random(m))
        angle = rng.uniform(0.0, 2.0 * np.pi, m)
        v2i_tx = rsu + np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])

    v2v_tx, horizontal, _ = _street_points(side, config.manhattan_spacing_m, m, rng)
    dist = rng.uniform(config.v2v_dist_lo_m, config.v2v_dist_hi_m, m)

    v2v_rx = v2v_tx.copy()
    axis = np.where(horizontal, 0, 1)
    for i in range(m):
        coord = v2v_tx[i, axis[i]]
        fits_up = coord + dist[i] <= side
        fits_down = coord - dist[i] >= 0.0
        if fits_up and fits_down:
            sign = 1.0 if rng.random() < 0.5 else -1.0
        else:
            sign = 1.0 if fits_up else -1.0
        v2v_rx[i, axis[i]] = coord + sign * dist[i]

    d_v2i = np.linalg.norm(v2i_tx - rsu, axis=1)
    d_v2v_rsu = np.linalg.norm(v2v_tx - rsu, axis=1)
    d_cross = np.linalg.norm(v2i_tx[:, None, :] - v2v_rx[None, :, :], axis=2)
    return Topology(
        rsu=rsu,
        v2i_tx=v2i_tx,
        v2v_tx=v2v_tx,
        v2v_rx=v2v_rx,
        d_v2i_m=d_v2i,
        d_v2v_m=dist,
        d_v2v_rsu_m=d_v2v_rsu,
        d_cross_m=d_cross,
    )


def noise_power(config):
    """Thermal noise power over the configured bandwidth, in milliwatt."""
    dbm = config.noise_psd_dbm_hz + 10.0 * np.log10(config.bandwidth_hz)
    return float(10.0 ** (dbm / 10.0))


def qos_constants(config):
    """(gamma_v, d_v): sidelink SINR threshold and the hazard-scale constant.

    gamma_v is the SINR at which transmitting the whole packet takes exactly
    the delay budget; d_v collects the constants multiplying the survival
    ratio in the hazard rate.
    """
    b = config.bandwidth_hz
    tau0 = config.delay_req_s
    d_bits = config.packet_bits
    gamma_v = 2.0 ** (d_bits / (b * tau0)) - 1.0
    d_v = np.log(2.0) * d_bits * 2.0 ** (d_bits / (b * tau0)) / (b * tau0 * tau0)
    return float(gamma_v), float(d_v)
