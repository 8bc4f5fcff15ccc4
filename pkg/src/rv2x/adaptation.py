"""Adaptation phase: per-slot power selection from the recovered error law.

Everything is driven by the interference-budget parameter c, proportional to
p_i/p_v.  Per slot the allocator:

1. bounds c from below by the uplink rate requirement and the power box,
2. bounds c from above by the delay-satisfaction functional (the largest c
   whose satisfaction estimate still meets the target probability),
3. inside the interval, picks the c whose noise-amplification functional u
   is closest to one, and
4. maps c to box powers, preferring the highest feasible transmit powers.

The satisfaction functional folds the empirical characteristic function of
the probes into a truncated-frequency integral.  It is evaluated either by
composite Gauss-Legendre panels with doubling refinement, or — when the
probe spread makes the integrand oscillate too fast for that — by an exact
per-sample closed form built from sine and exponential integrals.  Both
evaluators agree to machine precision wherever both apply.
"""

import dataclasses
import math

import numpy as np
from scipy import special

from .errors import ConfigurationError, QuadratureError

_ABS_TOL = 1e-8         # quadrature acceptance on the satisfaction integral
_ROOT_REL_TOL = 1e-6    # bisection tolerance on c (log width); the kept
                        # endpoint always sits on the satisfied side
_ROOT_MAX_ITER = 60
_GL_ORDER = 12
_MAX_PANELS = 4096
_QUAD_PANEL_LIMIT = 128  # above this the closed form is cheaper than panels


@dataclasses.dataclass
class AdaptationContext:
    """Inputs for one pair and slot.

    ``estimate`` is whatever error model the allocator runs on: the
    deconvolution estimate, a Gaussian moment fit, or a high-probability
    region.  ``prop1_ok`` records whether the monotonicity precondition of
    the u-functional held on the c-range induced by the power box.
    """

    estimate: object
    lambda_y: float          # exponential rate of the probe nuisance component
    delta2: float            # squared fading-aging coefficient
    gamma_v: float           # sidelink SINR threshold
    sigma2: float            # noise power, mW
    l_v: float               # sidelink direct large-scale gain
    l_cross: float           # matched cross-link gain (V2I TX -> V2V RX)
    l_i: float               # uplink direct gain
    l_v_rsu: float           # V2V TX -> RSU gain
    g2_v_hat: float          # reported sidelink fading
    g2_cross_hat: float      # reported cross fading
    g2_i: float              # uplink direct fading (measured at the RSU)
    g2_v_rsu: float          # V2V->RSU fading (measured at the RSU)
    rate_gamma: float        # uplink SINR floor from the rate requirement
    prob_req: float
    box: tuple               # (pi_min, pi_max, pv_min, pv_max) in mW
    trunc_k1: int
    trunc_k2: int
    prop1_ok: bool = True

    def __post_init__(self):
        if not 0.0 <= self.delta2 < 1.0:
            raise ConfigurationError("aging coefficient must satisfy 0 <= delta^2 < 1")


def c_param(p_i, p_v, context):
    """Interference-budget parameter of a power pair."""
    return (context.gamma_v * p_i * context.l_cross
            / (p_v * context.l_v * (1.0 - context.delta2)))


def c_box(context):
    """The c-values reachable inside the power box (lo, hi)."""
    pi_min, pi_max, pv_min, pv_max = context.box
    return c_param(pi_min, pv_max, context), c_param(pi_max, pv_min, context)


def ell(c, context):
    """Knee of the per-slot satisfaction profile (noise term dropped)."""
    d2 = context.delta2
    if d2 >= 1.0:
        raise ConfigurationError("degenerate aging (delta = 1) leaves no innovation to average")
    return context.g2_cross_hat - (context.g2_v_hat / c) * d2 / (1.0 - d2)


# --------------------------------------------------------------------- u functional


def u_value(c, lambda_y, k2):
    """Noise-amplification functional of the adaptation bound at budget c."""
    c = np.asarray(c, dtype=float)
    w = k2 * np.pi
    s = w / lambda_y
    t1 = math.sqrt(1.0 + s * s)
    t2 = math.log((t1 - 1.0) / s)
    root = np.sqrt(c * c + w * w)
    t3 = (c / lambda_y) * np.log((w + root) / c)
    t4 = (1.0 / c) * np.log(c * w / (root + w))
    return t1 + t2 + t3 + t4


def _prop1_lhs(x, lambda_y, k2):
    d = 1.0 / (k2 * np.pi)
    r = np.hypot(x, d)
    return x / r - np.log((x + r) / d) - lambda_y * x * x * np.log(x + r)


def check_prop1_condition(lambda_y, k2, c_grid):
    """Verify the sufficient monotonicity condition of u on a c-grid.

    Raises :class:`ConfigurationError` naming the violating point; returns
    True when the condition holds everywhere on the grid.
    """
    x = 1.0 / np.asarray(c_grid, dtype=float)
    lhs = _prop1_lhs(x, lambda_y, k2)
    bad = lhs > 0.0
    if bad.any():
        i = int(np.argmax(lhs))
        raise ConfigurationError(
            f"u-monotonicity condition fails at x = {x.flat[i]:.6g} "
            f"(lhs = {lhs.flat[i]:.3e}) for lambda_y = {lambda_y:.6g}, k2 = {k2}")
    return True


def prop1_holds(lambda_y, k2, c_lo, c_hi, n_grid=256):
    grid = np.geomspace(c_lo, c_hi, n_grid)
    return bool((_prop1_lhs(1.0 / grid, lambda_y, k2) <= 0.0).all())


# --------------------------------------------------------------------- beta: quadrature


_NODE_CACHE = {}


def _nodes_cached(panels, w_cut):
    key = (panels, round(w_cut, 12))
    if key not in _NODE_CACHE:
        x, wts = np.polynomial.legendre.leggauss(_GL_ORDER)
        edges = np.linspace(0.0, w_cut, panels + 1)
        mid = 0.5 * (edges[:-1] + edges[1:])
        half = 0.5 * np.diff(edges)
        nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        weights = (half[:, None] * wts[None, :]).ravel()
        _NODE_CACHE[key] = (nodes, weights)
    return _NODE_CACHE[key]


def _ecf(estimate, panels, w_cut):
    """Empirical characteristic factor of the probes at the node set."""
    cache = getattr(estimate, "_ecf_cache", None)
    if cache is None:
        cache = {}
        try:
            estimate._ecf_cache = cache
        except AttributeError:
            pass
    key = (panels, round(w_cut, 12))
    if key not in cache:
        nodes, _ = _nodes_cached(panels, w_cut)
        z = np.asarray(estimate.samples, dtype=float)
        acc = np.zeros(nodes.shape, dtype=complex)
        step = max(1, int(4e6) // max(nodes.size, 1))
        for lo in range(0, z.size, step):
            acc += np.exp(1j * np.outer(z[lo:lo + step], nodes)).sum(axis=0)
        cache[key] = acc / z.size
    return cache[key]


def _beta_quad_level(cs, ells, estimate, lambda_y, k1, w_cut, panels):
    nodes, wts = _nodes_cached(panels, w_cut)
    ecf = _ecf(estimate, panels, w_cut)
    tail = ecf * (1.0 - 1j * nodes / lambda_y) * wts
    e_nodes = np.exp(-1j * nodes * k1)
    t1 = (e_nodes - 1.0) / (-1j * nodes)
    out = np.empty(cs.shape)
    chunk = max(1, int(4e6) // max(nodes.size, 1))
    for lo in range(0, cs.size, chunk):
        c = cs[lo:lo + chunk, None]
        l = ells[lo:lo + chunk, None]
        fpsi = (t1[None, :] + (np.exp(-c * k1) * e_nodes[None, :] - 1.0)
                / (c + 1j * nodes[None, :])) * np.exp(1j * l * nodes[None, :])
        out[lo:lo + chunk] = 2.0 * (fpsi * tail[None, :]).real.sum(axis=1)
    return 1.0 - out / (2.0 * np.pi)


# --------------------------------------------------------------------- beta: exact form


def _e1_scaled(zeta):
    """exp(zeta) * E1(zeta): asymptotic series far out, scipy otherwise."""
    out = np.empty(zeta.shape, dtype=complex)
    big = np.abs(zeta) >= 60.0
    zb = zeta[big]
    if zb.size:
        inv = 1.0 / zb
        # sum_{k<=8} (-1)^k k! / zeta^k by Horner, in place
        s = np.full_like(zb, 40320.0)
        for a in (-5040.0, 720.0, -120.0, 24.0, -6.0, 2.0, -1.0, 1.0):
            s *= inv
            s += a
        out[big] = inv * s
    zs = zeta[~big]
    if zs.size:
        out[~big] = np.exp(zs) * special.exp1(zs)
    return out


def _sine_kernel(b, w_cut):
    b = np.asarray(b, dtype=float)
    small = np.abs(b) < 1e-9
    safe = np.where(small, 1.0, b)
    out = 2.0 * np.sin(w_cut * safe) / safe
    if small.any():
        out[small] = 2.0 * w_cut * np.cos(w_cut * b[small])
    return out


def _beta_exact(cs, ells, z, lambda_y, k1, w_cut):
    """Per-sample closed form of the satisfaction integral.

    For probe offset y = z + ell the flat-window piece integrates to sine
    integrals, and the decaying piece to a vertical-path exponential
    integral whose branch-cut crossing contributes 2*pi*exp(-c*y) on y > 0.
    Vectorised over lanes: each row is one (c, ell) query against all probes.
    """
    out = np.empty(cs.shape)
    t = z.size
    block = max(1, int(2e6) // max(t, 1))
    for lo in range(0, cs.size, block):
        c = cs[lo:lo + block, None]
        y = z[None, :] + ells[lo:lo + block, None]
        ym = y - k1

        def m_int(b):
            zeta = -b * (c + 1j * w_cut)
            base = -2.0 * np.imag(np.exp(1j * b * w_cut)
                                  * _e1_scaled(np.where(zeta == 0, 1.0, zeta)))
            with np.errstate(over="ignore", under="ignore"):
                jump = np.where(b > 0, 2.0 * np.pi * np.exp(-c * np.maximum(b, 0.0)), 0.0)
            return np.where(np.abs(b) < 1e-12, 2.0 * np.arctan(w_cut / c), base + jump)

        si_y = special.sici(w_cut * y)[0]
        si_ym = special.sici(w_cut * ym)[0]
        s2_y = _sine_kernel(y, w_cut)
        s2_ym = _sine_kernel(ym, w_cut)
        p1 = 2.0 * (si_y - si_ym) - (1.0 / lambda_y) * (s2_y - s2_ym)
        decay = np.exp(-c * k1)
        p2 = ((1.0 + c / lambda_y) * (decay * m_int(ym) - m_int(y))
              - (1.0 / lambda_y) * (decay * s2_ym - s2_y))
        out[lo:lo + block] = 1.0 - (p1 + p2).sum(axis=1) / (2.0 * np.pi * t)
    return out


# --------------------------------------------------------------------- beta dispatch


def _beta_batch_deconv(cs, ells, estimate, lambda_y, k1, k2):
    """Raw satisfaction values for matched (c, ell) arrays."""
    w_cut = k2 * np.pi
    cs = np.asarray(cs, dtype=float)
    ells = np.asarray(ells, dtype=float)
    z = np.asarray(estimate.samples, dtype=float)
    z_lo, z_hi = float(z.min()), float(z.max())

    spread = np.maximum(np.abs(ells + z_hi), np.abs(ells + z_lo)) + k1
    need = np.maximum(32.0, 2.5 * (w_cut * spread / (2.0 * np.pi)) / _GL_ORDER)

    out = np.empty(cs.shape)
    # panels scale with the probe spread; past the limit the per-sample
    # closed form is both cheaper and free of refinement failures
    quadable = need <= _QUAD_PANEL_LIMIT
    idx = np.flatnonzero(quadable)
    if idx.size:
        panels = int(2 ** math.ceil(math.log2(float(need[idx].max()))))
        top = float(spread[idx].max())
        # a level validated by doubling at some spread covers every later
        # batch of smaller spread, so the check runs once per level
        accepted = getattr(estimate, "_accept_cache", None)
        if accepted is None:
            accepted = {}
            try:
                estimate._accept_cache = accepted
            except AttributeError:
                pass
        key = (panels, round(w_cut, 12))
        got = accepted.get(key)
        if got is not None and got[0] >= top:
            out[idx] = _beta_quad_level(cs[idx], ells[idx], estimate, lambda_y, k1,
                                        w_cut, got[1])
        else:
            coarse = _beta_quad_level(cs[idx], ells[idx], estimate, lambda_y, k1, w_cut, panels)
            while True:
                fine = _beta_quad_level(cs[idx], ells[idx], estimate, lambda_y, k1,
                                        w_cut, 2 * panels)
                gap = np.abs(fine - coarse)
                if float(gap.max()) <= _ABS_TOL:
                    out[idx] = fine
                    accepted[key] = (top, 2 * panels)
                    break
                panels *= 2
                coarse = fine
                if 2 * panels > _MAX_PANELS:
                    ok = gap <= _ABS_TOL
                    out[idx[ok]] = fine[ok]
                    hard = idx[~ok]
                    out[hard] = _beta_exact(cs[hard], ells[hard], z, lambda_y, k1, w_cut)
                    break
    rest = np.flatnonzero(~quadable)
    if rest.size:
        out[rest] = _beta_exact(cs[rest], ells[rest], z, lambda_y, k1, w_cut)
    if not np.isfinite(out).all():
        raise QuadratureError(
            "satisfaction integral did not evaluate to finite values",
            diagnostics={"lambda_y": lambda_y, "bad": int(np.sum(~np.isfinite(out))),
                         "c_range": (float(cs.min()), float(cs.max())),
                         "ell_range": (float(ells.min()), float(ells.max()))})
    return out


def _beta_batch_gaussian(cs, ells_full, fit):
    """Closed-form satisfaction under a Gaussian error law.

    ``ells_full`` is the knee including the noise term.  With E ~ Exp(1) and
    e ~ N(mu, s2): Phi((e0-mu)/s) + exp(-c(ell+mu) + c^2 s2/2) * Q((e0-mu+c*s2)/s),
    where e0 = -ell.
    """
    cs = np.asarray(cs, dtype=float)
    ells_full = np.asarray(ells_full, dtype=float)
    mu, s2 = fit.mean_e, fit.var_e
    s = math.sqrt(s2)
    e0 = -ells_full
    term1 = special.ndtr((e0 - mu) / s)
    expo = (-cs * (ells_full + mu) + 0.5 * cs * cs * s2
            + special.log_ndtr(-(e0 - mu + cs * s2) / s))
    return term1 + np.exp(np.minimum(expo, 0.0))


def _estimate_kind(est):
    if hasattr(est, "samples") and hasattr(est, "lambda_y"):
        return "deconv"
    if hasattr(est, "mean_e"):
        return "gaussian"
    if hasattr(est, "lo") and hasattr(est, "hi"):
        return "hpr"
    raise ConfigurationError("unrecognised error-model object")


def _p_i_of_c(cs, context_like, c_lo, c_mid):
    """Uplink power deployed at budget c under the highest-power mapping."""
    pi_min, pi_max, pv_min, pv_max = context_like.box
    gain = pv_max * context_like.l_v * (1.0 - context_like.delta2) / (
        context_like.gamma_v * context_like.l_cross)
    return np.where(cs <= c_lo, pi_min, np.where(cs <= c_mid, cs * gain, pi_max))


def beta(c, context, return_raw=False):
    """Delay-satisfaction estimate at budget c, clamped to [0, 1]."""
    est = context.estimate
    kind = _estimate_kind(est)
    cs = np.atleast_1d(np.asarray(c, dtype=float))
    ells = context.g2_cross_hat - (context.g2_v_hat / cs) * context.delta2 / (1.0 - context.delta2)
    if kind == "deconv":
        raw = _beta_batch_deconv(cs, ells, est, context.lambda_y,
                                 context.trunc_k1, context.trunc_k2)
    elif kind == "gaussian":
        c_lo, c_hi = c_box(context)
        c_mid = c_param(context.box[1], context.box[3], context)
        shift = context.sigma2 / (_p_i_of_c(cs, context, c_lo, c_mid) * context.l_cross)
        raw = _beta_batch_gaussian(cs, ells + shift, est)
    else:
        raise ConfigurationError("high-probability regions define no satisfaction curve")
    clamped = np.clip(raw, 0.0, 1.0)
    if np.isscalar(c) or np.asarray(c).ndim == 0:
        raw, clamped = float(raw[0]), float(clamped[0])
    return (clamped, raw) if return_raw else clamped


# --------------------------------------------------------------------- the solver


def feasible_interval(context):
    """(c_l, c_u): rate-driven floor and satisfaction-driven ceiling on c."""
    res = solve_slots(context, _single_slot(context))
    return float(res["c_l"][0]), float(res["c_u"][0])


def solve_power(context):
    """Full per-slot solve; returns (p_v_mw, p_i_mw)."""
    res = solve_slots(context, _single_slot(context))
    return float(res["p_v"][0]), float(res["p_i"][0])


def _single_slot(context):
    return {
        "g2_v_hat": np.array([context.g2_v_hat]),
        "g2_cross_hat": np.array([context.g2_cross_hat]),
        "g2_i": np.array([context.g2_i]),
        "g2_v_rsu": np.array([context.g2_v_rsu]),
    }


def solve_slots(pair, slots):
    """Vectorised per-pair solver over a block of slots.

    ``pair`` is an :class:`AdaptationContext` whose per-slot fading fields
    are ignored; ``slots`` maps the four reported fading names to equal
    length arrays.  Returns per-slot arrays with the decision record fields.
    """
    est = pair.estimate
    kind = _estimate_kind(est)
    d2 = pair.delta2
    one_minus = 1.0 - d2
    g2_v_hat = np.asarray(slots["g2_v_hat"], dtype=float)
    g2_cross_hat = np.asarray(slots["g2_cross_hat"], dtype=float)
    g2_i = np.asarray(slots["g2_i"], dtype=float)
    g2_v_rsu = np.asarray(slots["g2_v_rsu"], dtype=float)
    s = g2_v_hat.shape[0]

    pi_min, pi_max, pv_min, pv_max = pair.box
    scale = pair.gamma_v * pair.l_cross / (pair.l_v * one_minus)
    c_lo = scale * pi_min / pv_max
    c_hi = scale * pi_max / pv_min
    c_mid = scale * pi_max / pv_max

    # rate floor; a dead uplink report pushes the floor to infinity
    with np.errstate(divide="ignore", invalid="ignore"):
        c_rate = (pair.rate_gamma * pair.gamma_v * pair.l_cross * pair.l_v_rsu * g2_v_rsu
                  / (one_minus * pair.l_v * pair.l_i * np.where(g2_i > 0, g2_i, np.nan)))
    c_rate = np.where(np.isfinite(c_rate), c_rate, np.inf)
    c_l = np.maximum(c_lo, c_rate)

    def beta_raw_at(cs, idx):
        ells = g2_cross_hat[idx] - (g2_v_hat[idx] / cs) * d2 / one_minus
        if kind == "deconv":
            return _beta_batch_deconv(cs, ells, est, pair.lambda_y,
                                      pair.trunc_k1, pair.trunc_k2)
        shift = pair.sigma2 / (_p_i_of_c(cs, pair, c_lo, c_mid) * pair.l_cross)
        return _beta_batch_gaussian(cs, ells + shift, est)

    # ---- ceiling from the satisfaction target ----
    if kind == "hpr":
        q0 = -math.log(pair.prob_req)
        c0 = d2 * g2_v_hat / one_minus
        denom = g2_cross_hat + est.hi
        with np.errstate(divide="ignore"):
            c_cap = np.where(denom > 0, (q0 + c0) / denom, np.inf)
        c_u = np.minimum(c_hi, c_cap)
    else:
        every = np.arange(s)
        b_lo = np.clip(beta_raw_at(np.full(s, c_lo), every), 0.0, 1.0)
        b_hi = np.clip(beta_raw_at(np.full(s, c_hi), every), 0.0, 1.0)
        c_u = np.where(b_hi >= pair.prob_req, c_hi, c_lo)
        bracket = (b_lo >= pair.prob_req) & (b_hi < pair.prob_req)
        if bracket.any():
            idx = np.flatnonzero(bracket)
            lo = np.full(idx.shape, math.log(c_lo))
            hi = np.full(idx.shape, math.log(c_hi))
            for _ in range(_ROOT_MAX_ITER):
                mid = 0.5 * (lo + hi)
                bm = np.clip(beta_raw_at(np.exp(mid), idx), 0.0, 1.0)
                good = bm >= pair.prob_req
                lo = np.where(good, mid, lo)
                hi = np.where(good, hi, mid)
                if float(np.max(hi - lo)) <= _ROOT_REL_TOL:
                    break
            c_u[idx] = np.exp(lo)  # satisfied side of the bracket

    feasible = c_l <= c_u

    # ---- pick c inside the interval ----
    c_star = np.where(feasible, np.minimum(c_l, c_u), c_lo)
    if kind == "hpr":
        c_star = np.where(feasible, c_u, c_lo)
    else:
        sel = feasible & (c_l < c_u)
        if sel.any():
            cl, cu = c_l[sel], c_u[sel]
            if pair.prop1_ok:
                u_lo = u_value(cl, pair.lambda_y, pair.trunc_k2)
                u_hi = u_value(cu, pair.lambda_y, pair.trunc_k2)
                pick = np.where(u_lo >= 1.0, cl, cu)
                rooted = (u_lo < 1.0) & (u_hi >= 1.0)
                if rooted.any():
                    lo, hi = np.log(cl[rooted]), np.log(cu[rooted])
                    for _ in range(80):
                        mid = 0.5 * (lo + hi)
                        below = u_value(np.exp(mid), pair.lambda_y, pair.trunc_k2) < 1.0
                        lo = np.where(below, mid, lo)
                        hi = np.where(below, hi, mid)
                        if float(np.max(hi - lo)) <= 1e-9:
                            break
                    pick[rooted] = np.exp(0.5 * (lo + hi))
            else:
                # condition failed somewhere in the box: dense argmin instead
                t = np.linspace(0.0, 1.0, 1024)
                grid = np.exp(np.log(cl)[:, None] * (1.0 - t) + np.log(cu)[:, None] * t)
                err = np.abs(u_value(grid, pair.lambda_y, pair.trunc_k2) - 1.0)
                pick = grid[np.arange(grid.shape[0]), np.argmin(err, axis=1)]
            c_star[sel] = pick

    # ---- map c to powers (highest-power preference) ----
    p_v = np.where(c_star <= c_mid, pv_max,
                   pair.gamma_v * pi_max * pair.l_cross / (c_star * pair.l_v * one_minus))
    p_i = _p_i_of_c(c_star, pair, c_lo, c_mid)
    p_v = np.where(feasible, p_v, pv_max)
    p_i = np.where(feasible, p_i, pi_min)
    c_star = np.where(feasible, c_star, c_lo)

    # ---- record the satisfaction estimate at the deployed c ----
    if kind == "hpr":
        q0 = -math.log(pair.prob_req)
        c0 = d2 * g2_v_hat / one_minus
        worst = c_star * (g2_cross_hat + est.hi) - c0
        b_raw = np.exp(-np.maximum(worst, 0.0))
        b_star = np.clip(b_raw, 0.0, 1.0)
    else:
        b_raw = beta_raw_at(c_star, np.arange(s))
        b_star = np.clip(b_raw, 0.0, 1.0)

    return {
        "c_l": c_l, "c_u": c_u, "c_star": c_star,
        "p_v": p_v, "p_i": p_i,
        "beta_star": b_star, "beta_raw": b_raw,
        "feasible": feasible,
    }
