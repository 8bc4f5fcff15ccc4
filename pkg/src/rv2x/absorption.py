"""Absorption phase: probing powers, error-density recovery, and matching.

During this phase every matched pair transmits at fixed probing powers chosen
from a hazard-rate retention constraint.  The receiver logs one scalar probe
per slot; after T slots a Fourier-kernel deconvolution turns the probe set
into a nonparametric estimate of the hidden cross-error density, and the
pair/channel assignment is chosen by exact minimum-weight matching on a
recoverability score.
"""

import dataclasses
import io

import numpy as np

from . import channel as chan
from . import qosmodel
from .errors import ConfigurationError, InfeasibleMatching
from .scenario import noise_power


def collect_sample(true_rss, nominal_rss, p_i_a, l_cross, p_v_a, l_v, delta, g2_v_hat):
    """One deconvolution probe from a received-power residual.

    Rescales the RSS gap by the cross-link received power and adds back the
    reported sidelink contribution so the probe equals the hidden cross error
    plus an independent exponential of known rate.
    """
    scale = p_i_a * l_cross
    return (true_rss - nominal_rss) / scale + (p_v_a * l_v / scale) * (1.0 - delta * delta) * g2_v_hat


def _kernel(a, w_cut, lambda_y):
    """Closed-form inverse-transform kernel evaluated at a = z_k - e."""
    a = np.asarray(a, dtype=float)
    small = np.abs(a) < 1e-8
    safe = np.where(small, 1.0, a)
    wa = w_cut * safe
    main = 2.0 * np.sin(wa) / safe + (2.0 / lambda_y) * (np.sin(wa) - wa * np.cos(wa)) / (safe * safe)
    # series limit at a -> 0: 2W + 2W^3 a / (3 lambda)
    limit = 2.0 * w_cut + 2.0 * w_cut ** 3 * a / (3.0 * lambda_y)
    return np.where(small, limit, main)


def estimate_pdf(estimate, e):
    """Raw deconvolution density estimate at points ``e`` (may be negative)."""
    z = estimate.samples
    if z.size == 0:
        raise ConfigurationError("estimate has no samples")
    e = np.atleast_1d(np.asarray(e, dtype=float))
    w_cut = estimate.trunc_k * np.pi
    out = np.empty(e.shape, dtype=float)
    step = max(1, int(2e7) // max(z.size, 1))
    for lo in range(0, e.size, step):
        block = e[lo:lo + step]
        a = z[None, :] - block[:, None]
        out[lo:lo + step] = _kernel(a, w_cut, estimate.lambda_y).sum(axis=1)
    return out / (2.0 * np.pi * z.size)


@dataclasses.dataclass
class DeconvEstimate:
    """Recovered cross-error density for one pair.

    Keeps the raw probes so the estimate is exactly reproducible; the
    clipped-and-renormalised variant (a proper density) is derived lazily on
    a fixed grid.
    """

    samples: np.ndarray
    lambda_y: float
    trunc_k: int
    p_i_mw: float = float("nan")
    p_v_mw: float = float("nan")

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float).ravel()
        if self.samples.size == 0:
            raise ConfigurationError("DeconvEstimate needs at least one sample")
        self.lambda_y = float(self.lambda_y)
        self.trunc_k = int(self.trunc_k)
        self.p_i_mw = float(self.p_i_mw)
        self.p_v_mw = float(self.p_v_mw)
        self._grid = None

    def pdf(self, e):
        return estimate_pdf(self, e)

    def _clipped_grid(self):
        if self._grid is None:
            lo = float(self.samples.min()) - 3.0 - 1.0 / self.lambda_y
            hi = float(self.samples.max()) + 3.0
            x = np.linspace(lo, hi, 4001)
            f = np.maximum(self.pdf(x), 0.0)
            norm = np.trapezoid(f, x)
            if norm <= 0.0:
                # degenerate estimate: fall back to uniform over the window
                f = np.full_like(x, 1.0 / (hi - lo))
                norm = 1.0
            self._grid = (x, f / norm)
        return self._grid

    def pdf_clipped(self, e):
        x, f = self._clipped_grid()
        return np.interp(np.asarray(e, dtype=float), x, f, left=0.0, right=0.0)

    def sample(self, n, rng):
        """Inverse-CDF draws from the clipped density."""
        x, f = self._clipped_grid()
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(x))])
        cdf /= cdf[-1]
        u = rng.random(n)
        return np.interp(u, cdf, x)

    def to_text(self):
        buf = io.StringIO()
        buf.write(f"{self.lambda_y!r} {self.trunc_k} {self.p_i_mw!r} {self.p_v_mw!r}\n")
        buf.write(" ".join(repr(float(v)) for v in self.samples))
        buf.write("\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text):
        head, body = text.strip().split("\n", 1)
        lam, k, p_i, p_v = head.split()
        samples = np.fromiter(map(float, body.split()), dtype=float)
        return cls(samples=samples, lambda_y=float(lam), trunc_k=int(k),
                   p_i_mw=float(p_i), p_v_mw=float(p_v))


def _capability_bracket(delta, o, k):
    beta = k * np.pi * (1.0 - delta * delta)
    bo = beta * o
    return np.sqrt(1.0 + bo * bo) + np.arcsinh(bo) / bo


def adaptation_capability_bound(delta, o, k, t):
    """Sampling-noise ceiling on the pointwise squared estimation error.

    Decreases as 1/T and grows with the received-power ratio o; the spectral
    tail of the hidden law is excluded (it is negligible for smooth mixtures
    at the default cutoff).
    """
    if not 0.0 <= delta < 1.0:
        raise ConfigurationError("delta must lie in [0, 1)")
    if o <= 0 or t < 1:
        raise ConfigurationError("o must be positive and t >= 1")
    return (k * k / (4.0 * t)) * _capability_bracket(delta, o, k) ** 2


def absorption_power(lambda_m, box):
    """Probing powers (p_i, p_v) minimising the recoverability score.

    ``box`` is (pi_min, pi_max, pv_min, pv_max).  The retention constraint
    fixes a floor on p_v/p_i; the score decreases with p_i/p_v, so the
    solution rides the floor (or the box corner when the floor is slack) and
    takes the largest transmit powers doing so.
    """
    pi_min, pi_max, pv_min, pv_max = box
    if not (0 < pi_min <= pi_max and 0 < pv_min <= pv_max):
        raise ConfigurationError("power box must satisfy 0 < min <= max")
    if not 0.0 <= lambda_m <= 1.0:
        raise ConfigurationError("retention weight must lie in [0, 1]")
    if lambda_m <= pi_min * pv_min / (pi_max * pv_max):
        return pi_max, pv_min
    if lambda_m <= pi_min / pi_max:
        return pi_max, pi_max * pv_max * lambda_m / pi_min
    return pi_min / lambda_m, pv_max


def edge_weight(l_v, l_cross, delta, lambda_m, box, k):
    """Matching weight: squared capability bracket at the best probing powers."""
    if lambda_m > 1.0:
        return float("inf")
    p_i, p_v = absorption_power(lambda_m, box)
    o = p_v * l_v / (p_i * l_cross)
    return float(_capability_bracket(delta, o, k) ** 2)


def hungarian_match(weights):
    """Exact minimum-weight perfect matching (rows -> columns).

    Subset dynamic program over columns, O(2^N * N).  Ties are broken
    lexicographically: the lowest row index gets the lowest admissible
    column.  A +inf optimum means no finite perfect matching exists.
    """
    w = np.asarray(weights, dtype=float)
    n = w.shape[0]
    if w.shape != (n, n):
        raise ConfigurationError("weight matrix must be square")
    if n > 20:
        raise ConfigurationError("exact matcher supports at most 20 pairs")

    size = 1 << n
    # h[s] = min cost of matching the last popcount(s) rows to column set s
    h = np.full(size, np.inf)
    h[0] = 0.0
    masks = np.arange(size, dtype=np.uint32)
    popcnt = np.bitwise_count(masks)
    by_count = [np.flatnonzero(popcnt == k).astype(np.int64) for k in range(n + 1)]
    for k in range(1, n + 1):
        row = n - k
        sets_k = by_count[k]
        best = np.full(sets_k.shape, np.inf)
        for c in range(n):
            bit = 1 << c
            has = (sets_k & bit) != 0
            cand = h[sets_k[has] ^ bit] + w[row, c]
            np.minimum.at(best, np.flatnonzero(has), cand)
        h[sets_k] = best

    full = size - 1
    if not np.isfinite(h[full]):
        raise InfeasibleMatching("no finite-weight perfect matching")

    assign = np.empty(n, dtype=np.int64)
    s = full
    for row in range(n):
        target = h[s]
        for c in range(n):
            bit = 1 << c
            if s & bit and h[s ^ bit] + w[row, c] == target:
                assign[row] = c
                s ^= bit
                break
        else:  # float tie fell through exact equality; take the best column
            cols = [c for c in range(n) if s & (1 << c)]
            costs = [h[s ^ (1 << c)] + w[row, c] for c in cols]
            c = cols[int(np.argmin(costs))]
            assign[row] = c
            s ^= 1 << c
    return assign


@dataclasses.dataclass
class AbsorptionPlan:
    """Outcome of the probing phase for one epoch."""

    pairing: np.ndarray    # (M,) matched V2I index per pair
    p_i_mw: np.ndarray     # (M,) probing uplink power per matched pair
    p_v_mw: np.ndarray     # (M,)
    lambda_y: np.ndarray   # (M,) exponential rate of the nuisance component
    weights: np.ndarray    # (M, N) full matching-weight matrix
    bound: np.ndarray      # (M,) capability bound at the horizon length


def run_absorption(large, config, law, rng, lambda_m=None, flags=None):
    """Match pairs, probe for T slots, and recover per-pair error densities.

    Returns (plan, estimates, qos_log) where ``qos_log`` is a list of
    :class:`rv2x.qosmodel.QosSample`, one per probing slot.  ``flags`` may be
    a dict accumulating SINR clamp counters across phases.
    """
    m = large.l_v.shape[0]
    n = large.l_i.shape[0]
    if m != n:
        raise ConfigurationError("pair counts of both link classes must agree")
    lam = np.full(m, config.hr_weight) if lambda_m is None else np.asarray(lambda_m, dtype=float)
    box = (config.pi_min_mw, config.pi_max_mw, config.pv_min_mw, config.pv_max_mw)
    delta = large.delta
    k = config.trunc_k
    t_len = config.absorption_len
    sigma2 = noise_power(config)

    weights = np.empty((m, n))
    for i in range(m):
        for j in range(n):
            weights[i, j] = edge_weight(large.l_v[i], large.l_cross[j, i], delta, lam[i], box, k)
    if config.identity_matching:
        pairing = np.arange(m)
    else:
        pairing = hungarian_match(weights)

    p_pairs = np.array([absorption_power(lam[i], box) for i in range(m)])
    p_i_a, p_v_a = p_pairs[:, 0], p_pairs[:, 1]
    l_cross_pair = large.l_cross[pairing, np.arange(m)]
    lambda_y = p_i_a * l_cross_pair / (p_v_a * large.l_v * (1.0 - delta * delta))
    bracket2 = weights[np.arange(m), pairing]
    bound = (k * k / (4.0 * t_len)) * bracket2

    p_i_full = np.empty(n)
    p_i_full[pairing] = p_i_a
    alloc = qosmodel.AllocationDecision(pairing=pairing, p_v_mw=p_v_a, p_i_mw=p_i_full)

    probes = np.empty((t_len, m))
    qos_log = []
    state = None
    flags = {} if flags is None else flags
    idx = np.arange(m)
    for slot in range(t_len):
        state = chan.evolve_small_scale(state, large, law, rng, num_v2i=n, num_v2v=m)
        g2c_hat = state.g2_cross_hat[pairing, idx]
        g2c = state.g2_cross[pairing, idx]
        rss = p_i_a * l_cross_pair * g2c + p_v_a * large.l_v * state.g2_v + sigma2
        nominal = p_i_a * l_cross_pair * g2c_hat + p_v_a * large.l_v * state.g2_v_hat + sigma2
        probes[slot] = collect_sample(rss, nominal, p_i_a, l_cross_pair, p_v_a,
                                      large.l_v, delta, state.g2_v_hat)
        qos_log.append(_qos_sample(slot, "absorption", state, large, alloc, sigma2,
                                   config, flags, np.zeros(m, dtype=bool)))

    estimates = [
        DeconvEstimate(samples=probes[:, i], lambda_y=float(lambda_y[i]), trunc_k=k,
                       p_i_mw=float(p_i_a[i]), p_v_mw=float(p_v_a[i]))
        for i in range(m)
    ]
    plan = AbsorptionPlan(pairing=pairing, p_i_mw=p_i_a, p_v_mw=p_v_a,
                          lambda_y=lambda_y, weights=weights, bound=bound)
    return plan, estimates, qos_log


def _qos_sample(slot, phase, state, large, alloc, sigma2, config, flags, infeasible):
    g_i = qosmodel.sinr("v2i", state, large, alloc, sigma2, flags)
    g_v = qosmodel.sinr("v2v", state, large, alloc, sigma2, flags)
    thr = qosmodel.throughput(g_i, config.bandwidth_hz)
    dly = qosmodel.delay(g_v, config.packet_bits, config.bandwidth_hz)
    return qosmodel.QosSample(
        slot=slot, phase=phase, delay_s=dly, thr_bps=thr,
        v2v_ok=dly <= config.delay_req_s, v2i_ok=thr >= config.rate_req_bps,
        pairing=alloc.pairing.copy(), p_v_mw=alloc.p_v_mw.copy(), p_i_mw=alloc.p_i_mw.copy(),
        infeasible=infeasible.copy(),
    )
