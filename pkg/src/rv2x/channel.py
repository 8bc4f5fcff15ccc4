"""Propagation: path loss, shadowing, CSI aging, and the hidden error laws.

Link-gain convention: a linear power gain h = L * |g|^2 where L collects path
loss and log-normal shadowing (redrawn once per epoch) and |g|^2 is the
squared small-scale fading magnitude (unit-mean exponential, redrawn every
slot).  Receivers co-located with the RSU measure their links perfectly;
the sidelink CSI ages over the feedback delay, and the cross channel from the
V2I transmitter into the V2V receiver is known only up to an additive error
whose law is hidden from the allocator.
"""

import dataclasses

import numpy as np
from scipy import special

from .errors import ConfigurationError

# WINNER+ B1 urban street constants, as fixed in the V2X evaluation codebases
# this model family is taken from: antenna heights 1.5 m at both ends, the
# breakpoint computed with 1 m of effective-height reduction, and the raw
# heights kept inside the far-range log terms.
_B1_H_BS = 1.5
_B1_H_MS = 1.5
_LIGHT_SPEED = 299792458.0


def pathloss_v2i_db(d_km):
    """Cellular uplink path loss in dB at distance d_km kilometers."""
    d = np.maximum(np.asarray(d_km, dtype=float), 1e-6)
    return 128.1 + 37.6 * np.log10(d)


def _b1_los_db(d, fc_ghz):
    d = np.maximum(np.asarray(d, dtype=float), 3.0)
    d_bp = 4.0 * (_B1_H_BS - 1.0) * (_B1_H_MS - 1.0) * fc_ghz * 1.0e9 / _LIGHT_SPEED
    near = 22.7 * np.log10(d) + 41.0 + 20.0 * np.log10(fc_ghz / 5.0)
    far = (40.0 * np.log10(d) + 9.45
           - 17.3 * np.log10(_B1_H_BS) - 17.3 * np.log10(_B1_H_MS)
           + 2.7 * np.log10(fc_ghz / 5.0))
    return np.where(d < d_bp, near, far)


def _b1_nlos_db(d1, d2, fc_ghz):
    """Around-the-corner loss for leg distances d1 (to the corner) and d2."""
    d2 = np.maximum(np.asarray(d2, dtype=float), 3.0)
    n_j = np.maximum(2.8 - 0.0024 * d2, 1.84)
    return (_b1_los_db(d1, fc_ghz) + 20.0 - 12.5 * n_j
            + 10.0 * n_j * np.log10(d2) + 3.0 * np.log10(fc_ghz / 5.0))


def pathloss_winner_b1_db(d_m, los, f_c_hz):
    """WINNER+ B1 street path loss in dB.

    For the NLOS case the scalar distance is split into two equal orthogonal
    legs (d/sqrt(2) each); the model is the minimum over both leg orderings,
    which is symmetric here but kept for clarity.
    """
    fc_ghz = f_c_hz / 1.0e9
    if los:
        return np.asarray(_b1_los_db(d_m, fc_ghz), dtype=float)
    leg = np.asarray(d_m, dtype=float) / np.sqrt(2.0)
    a = _b1_nlos_db(leg, leg, fc_ghz)
    b = _b1_nlos_db(leg, leg, fc_ghz)
    return np.asarray(np.minimum(a, b), dtype=float)


def doppler_coefficient(speed_mps, f_c_hz, delta_t_s):
    """Temporal fading correlation: zeroth-order Bessel of 2*pi*f_D*dt."""
    f_d = speed_mps * f_c_hz / _LIGHT_SPEED
    return float(special.j0(2.0 * np.pi * f_d * delta_t_s))


# --------------------------------------------------------------------------- error laws


@dataclasses.dataclass
class ErrorDistribution:
    """Gaussian mixture for the cross-channel estimation error."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.variances = np.asarray(self.variances, dtype=float)
        if not (len(self.weights) == len(self.means) == len(self.variances) > 0):
            raise ConfigurationError("mixture parameter arrays must share a positive length")
        if abs(self.weights.sum() - 1.0) > 1e-9 or (self.weights <= 0).any():
            raise ConfigurationError("mixture weights must be positive and sum to one")
        if (self.variances <= 0).any():
            raise ConfigurationError("mixture variances must be positive")

    def pdf(self, e):
        e = np.asarray(e, dtype=float)[..., None]
        comp = np.exp(-0.5 * (e - self.means) ** 2 / self.variances)
        comp /= np.sqrt(2.0 * np.pi * self.variances)
        return (self.weights * comp).sum(axis=-1)

    def mean(self):
        return float(self.weights @ self.means)

    def sample(self, rng, size):
        comp = rng.choice(len(self.weights), size=size, p=self.weights)
        return rng.normal(self.means[comp], np.sqrt(self.variances[comp]))


def error_law(name, weights=(), means=(), variances=()):
    """The two hidden presets plus a custom mixture."""
    if name == "type1":
        return ErrorDistribution([0.5, 0.5], [0.2, 0.8], [0.04, 0.02])
    if name == "type2":
        return ErrorDistribution([0.4, 0.6], [0.4, 0.6], [0.02, 0.04])
    if name == "custom":
        return ErrorDistribution(weights, means, variances)
    raise ConfigurationError(f"unknown error law {name!r}")


# --------------------------------------------------------------------------- large scale


@dataclasses.dataclass
class LargeScaleState:
    """Linear large-scale gains (path loss * shadowing) for one epoch."""

    l_i: np.ndarray        # (N,)   V2I TX -> RSU
    l_v: np.ndarray        # (M,)   V2V TX -> V2V RX
    l_v_rsu: np.ndarray    # (M,)   V2V TX -> RSU
    l_cross: np.ndarray    # (N, M) V2I TX -> V2V RX
    delta: float           # fading correlation over the feedback delay


def build_large_scale(topology, config, rng):
    """Apply the per-class path-loss models and draw epoch shadowing."""
    fc = config.carrier_freq_hz

    def linear(db):
        return 10.0 ** (-db / 10.0)

    pl_i = pathloss_v2i_db(topology.d_v2i_m / 1000.0)
    pl_v = pathloss_winner_b1_db(topology.d_v2v_m, True, fc)
    pl_v_rsu = pathloss_winner_b1_db(topology.d_v2v_rsu_m, False, fc)
    pl_cross = pathloss_winner_b1_db(topology.d_cross_m, False, fc)

    n, m = pl_cross.shape
    sh_i = rng.normal(0.0, config.shadow_std_v2i_db, n)
    sh_v = rng.normal(0.0, config.shadow_std_v2v_db, m)
    sh_v_rsu = rng.normal(0.0, config.shadow_std_nlos_db, m)
    sh_cross = rng.normal(0.0, config.shadow_std_nlos_db, (n, m))

    delta = doppler_coefficient(config.speed_mps, fc, config.feedback_delay_s)
    return LargeScaleState(
        l_i=linear(pl_i - sh_i),
        l_v=linear(pl_v - sh_v),
        l_v_rsu=linear(pl_v_rsu - sh_v_rsu),
        l_cross=linear(pl_cross - sh_cross),
        delta=float(delta),
    )


# --------------------------------------------------------------------------- small scale


@dataclasses.dataclass
class ChannelState:
    """Squared fading magnitudes for one slot: reported and actual."""

    slot: int
    g2_i: np.ndarray           # (N,)  uplink direct; reported == actual
    g2_v_rsu: np.ndarray       # (M,)  V2V TX -> RSU; reported == actual
    g2_v_hat: np.ndarray       # (M,)  sidelink direct, as reported
    g2_v: np.ndarray           # (M,)  sidelink direct, actual after aging
    g2_cross_hat: np.ndarray   # (N, M) cross channel, as reported
    g2_cross: np.ndarray       # (N, M) actual = reported + hidden error (can be < 0)
    e_cross: np.ndarray        # (N, M) the hidden additive errors
    e_direct: np.ndarray       # (M,)  the unit exponentials driving sidelink aging


def evolve_small_scale(prev, large, law, rng, num_v2i=None, num_v2v=None):
    """Draw the next slot of fading state.

    Reported gains are fresh unit exponentials each slot (squared magnitudes
    of unit complex-normal fades).  The actual sidelink gain mixes the report
    with an independent exponential through the squared aging coefficient;
    the actual cross gain adds a hidden mixture error to the report.
    """
    if prev is not None:
        n, m = prev.g2_i.shape[0], prev.g2_v_hat.shape[0]
        slot = prev.slot + 1
    else:
        n, m = num_v2i, num_v2v
        slot = 0
    d2 = large.delta * large.delta

    g2_i = rng.exponential(1.0, n)
    g2_v_rsu = rng.exponential(1.0, m)
    g2_v_hat = rng.exponential(1.0, m)
    e_direct = rng.exponential(1.0, m)
    g2_v = d2 * g2_v_hat + (1.0 - d2) * e_direct
    g2_cross_hat = rng.exponential(1.0, (n, m))
    e_cross = law.sample(rng, (n, m))
    return ChannelState(
        slot=slot,
        g2_i=g2_i,
        g2_v_rsu=g2_v_rsu,
        g2_v_hat=g2_v_hat,
        g2_v=g2_v,
        g2_cross_hat=g2_cross_hat,
        g2_cross=g2_cross_hat + e_cross,
        e_cross=e_cross,
        e_direct=e_direct,
    )
