"""Simulation harness: trials, aggregation, file emission, and the CLI.

Trials are statistically independent and individually seeded from
(rng_seed, trial_index), so results are byte-identical no matter how many
worker processes participate.  Per trial the flow is: draw a topology and
epoch shadowing, run the probing/matching phase (shared by all allocators),
fit the allocator's error model, then sweep the adaptation slots with the
per-pair vectorised solver and log realised QoS.
"""

import argparse
import concurrent.futures
import dataclasses
import json
import math
import os
import sys
import traceback

import numpy as np

from . import absorption, adaptation, baselines, qosmodel
from . import channel as chan
from .config import SimConfig, load_config
from .errors import ConfigurationError
from .scenario import build_topology, noise_power, qos_constants

_ALLOCATORS = ("proposed", "gaussian", "hpr")

# purpose tags for named per-trial random substreams
_STREAMS = {"topology": 0, "shadowing": 1, "absorption": 2, "adaptation": 3, "diagnostics": 4}


def _stream(seed, trial, purpose):
    return np.random.default_rng(np.random.SeedSequence((seed, trial, _STREAMS[purpose])))


@dataclasses.dataclass
class RunReport:
    """Aggregated outcome of a batch of trials."""

    allocator: str
    config: SimConfig
    trials: int
    completed: int
    trial_ids: list                # trial number of each entry in the lists below
    rows: list                     # per trial: dict of per-(slot,pair) column arrays
    decisions: list                # per trial: dict of adaptation decision arrays
    j_trace: list                  # per trial: (adaptation_len,) deviation trace
    v2v_ok_rate: float             # adaptation-phase delay satisfaction
    v2i_ok_rate: float             # adaptation-phase rate satisfaction
    mean_delay_ms: float           # finite delays only
    conditional_mean_delay_ms: float | None   # over budget-violating slots, if any
    mean_throughput_mbps: float
    infeasible_rate: float
    cross_clamped: int
    degenerate_sinr: int
    estimates_text: list           # serialised per-pair estimates of trial 0
    lambda_y_trial0: list
    partial_errors: list           # (trial, repr) for aborted trials


def _trial_rows(n_slots, n_pairs):
    return {
        "slot": np.empty(n_slots * n_pairs, dtype=np.int64),
        "phase": np.empty(n_slots * n_pairs, dtype="U10"),
        "pair": np.empty(n_slots * n_pairs, dtype=np.int64),
        "p_v_mw": np.empty(n_slots * n_pairs),
        "p_i_mw": np.empty(n_slots * n_pairs),
        "delay_ms": np.empty(n_slots * n_pairs),
        "throughput_mbps": np.empty(n_slots * n_pairs),
        "satisfied": np.empty(n_slots * n_pairs, dtype=np.int64),
        "infeasible": np.empty(n_slots * n_pairs, dtype=np.int64),
    }


def _fill_rows(rows, cursor, slot, phase, sample, m):
    """One slot of per-pair records into the flat row arrays."""
    sl = slice(cursor, cursor + m)
    pairing = sample.pairing
    rows["slot"][sl] = slot
    rows["phase"][sl] = phase
    rows["pair"][sl] = np.arange(m)
    rows["p_v_mw"][sl] = sample.p_v_mw
    rows["p_i_mw"][sl] = sample.p_i_mw[pairing]
    finite = np.isfinite(sample.delay_s)
    rows["delay_ms"][sl] = np.where(finite, sample.delay_s * 1e3, -1.0)
    rows["throughput_mbps"][sl] = sample.thr_bps[pairing] / 1e6
    rows["satisfied"][sl] = (sample.v2v_ok & finite).astype(np.int64)
    rows["infeasible"][sl] = sample.infeasible.astype(np.int64)
    return cursor + m


def run_trial(config, allocator, trial):
    """One independent trial; returns per-trial arrays and tallies."""
    law = chan.error_law(config.error_law, config.custom_weights,
                         config.custom_means, config.custom_vars)
    gamma_v, d_v = qos_constants(config)
    sigma2 = noise_power(config)
    rate_gamma = 2.0 ** (config.rate_req_bps / config.bandwidth_hz) - 1.0
    m = config.num_pairs
    seed = config.rng_seed

    topo = build_topology(config, _stream(seed, trial, "topology"))
    large = chan.build_large_scale(topo, config, _stream(seed, trial, "shadowing"))

    flags = {}
    plan, estimates, qos_abs = absorption.run_absorption(
        large, config, law, _stream(seed, trial, "absorption"), flags=flags)

    # error model per pair for the selected allocator
    if allocator == "proposed":
        models = estimates
    elif allocator == "gaussian":
        models = [baselines.fit_gaussian(e.samples, e.lambda_y) for e in estimates]
    elif allocator == "hpr":
        models = [baselines.fit_hpr(e.samples, e.lambda_y, config.prob_req) for e in estimates]
    else:
        raise ConfigurationError(f"unknown allocator {allocator!r}")

    adapt_len = config.adaptation_len
    box = (config.pi_min_mw, config.pi_max_mw, config.pv_min_mw, config.pv_max_mw)
    n_slots = config.absorption_len + adapt_len
    rows = _trial_rows(n_slots, m)
    cursor = 0
    for s, sample in enumerate(qos_abs):
        cursor = _fill_rows(rows, cursor, s, "absorption", sample, m)

    decisions = {k: np.empty((adapt_len, m)) for k in
                 ("c_l", "c_u", "c_star", "p_v", "p_i", "beta_star", "feasible")}
    j_trace = np.zeros(adapt_len)

    if adapt_len:
        rng_ad = _stream(seed, trial, "adaptation")
        states = []
        state = None
        for _ in range(adapt_len):
            state = chan.evolve_small_scale(state, large, law, rng_ad, num_v2i=m, num_v2v=m)
            states.append(state)

        idx = np.arange(m)
        pairing = plan.pairing
        g2_v_hat = np.stack([st.g2_v_hat for st in states])            # (S, M)
        g2_cross_hat = np.stack([st.g2_cross_hat[pairing, idx] for st in states])
        g2_i = np.stack([st.g2_i[pairing] for st in states])           # matched uplink fading
        g2_v_rsu = np.stack([st.g2_v_rsu for st in states])

        p_v_slots = np.empty((adapt_len, m))
        p_i_slots = np.empty((adapt_len, m))
        for i in range(m):
            pair_ctx = adaptation.AdaptationContext(
                estimate=models[i], lambda_y=float(plan.lambda_y[i]),
                delta2=large.delta ** 2, gamma_v=gamma_v, sigma2=sigma2,
                l_v=float(large.l_v[i]), l_cross=float(large.l_cross[pairing[i], i]),
                l_i=float(large.l_i[pairing[i]]), l_v_rsu=float(large.l_v_rsu[i]),
                g2_v_hat=1.0, g2_cross_hat=1.0, g2_i=1.0, g2_v_rsu=1.0,
                rate_gamma=rate_gamma, prob_req=config.prob_req, box=box,
                trunc_k1=config.trunc_k1, trunc_k2=config.trunc_k2,
            )
            lo, hi = adaptation.c_box(pair_ctx)
            pair_ctx.prop1_ok = adaptation.prop1_holds(
                pair_ctx.lambda_y, config.trunc_k2, lo, hi)
            res = adaptation.solve_slots(pair_ctx, {
                "g2_v_hat": g2_v_hat[:, i], "g2_cross_hat": g2_cross_hat[:, i],
                "g2_i": g2_i[:, i], "g2_v_rsu": g2_v_rsu[:, i]})
            p_v_slots[:, i] = res["p_v"]
            p_i_slots[:, i] = res["p_i"]
            for key in ("c_l", "c_u", "c_star", "beta_star"):
                decisions[key][:, i] = res[key]
            decisions["p_v"][:, i] = res["p_v"]
            decisions["p_i"][:, i] = res["p_i"]
            decisions["feasible"][:, i] = res["feasible"].astype(float)

        if config.deviation_trace:
            rng_mc = _stream(seed, trial, "diagnostics")
            d2 = large.delta ** 2
            l_cross_pair = large.l_cross[pairing, idx]
            draws = config.true_mc_draws
            for s in range(adapt_len):
                e_cross = law.sample(rng_mc, (m, draws))
                e_direct = rng_mc.exponential(1.0, (m, draws))
                lhs = (p_v_slots[s][:, None] * large.l_v[:, None]
                       * (d2 * g2_v_hat[s][:, None] + (1.0 - d2) * e_direct))
                rhs = gamma_v * (p_i_slots[s][:, None] * l_cross_pair[:, None]
                                 * (g2_cross_hat[s][:, None] + e_cross) + sigma2)
                p_true = (lhs >= rhs).mean(axis=1)
                j_trace[s] = float(np.sum((decisions["beta_star"][s] - p_true) ** 2))

        for s in range(adapt_len):
            p_i_full = np.empty(m)
            p_i_full[pairing] = p_i_slots[s]
            alloc = qosmodel.AllocationDecision(pairing=pairing, p_v_mw=p_v_slots[s],
                                                p_i_mw=p_i_full)
            infeasible = decisions["feasible"][s] < 0.5
            sample = absorption._qos_sample(config.absorption_len + s, "adaptation",
                                            states[s], large, alloc, sigma2, config,
                                            flags, infeasible)
            cursor = _fill_rows(rows, cursor, config.absorption_len + s, "adaptation",
                                sample, m)

    est_text = [e.to_text() for e in estimates]
    return {
        "trial": trial,
        "rows": rows,
        "decisions": decisions,
        "j_trace": j_trace,
        "flags": flags,
        "estimates_text": est_text,
        "lambda_y": [float(v) for v in plan.lambda_y],
    }


def _trial_worker(payload):
    config_kwargs, allocator, trial = payload
    config = SimConfig(**config_kwargs)
    try:
        return run_trial(config, allocator, trial)
    except Exception as exc:  # aborted trial: record and continue
        return {"trial": trial, "error": f"{type(exc).__name__}: {exc}",
                "trace": traceback.format_exc()}


def default_threads():
    env = os.environ.get("RV2X_THREADS", "").strip()
    if env:
        try:
            val = int(env)
        except ValueError:
            raise ConfigurationError(f"RV2X_THREADS must be an integer, got {env!r}") from None
        if val < 1:
            raise ConfigurationError("RV2X_THREADS must be >= 1")
        return val
    return min(8, os.cpu_count() or 1)


def run(config, allocator="proposed", trials=1, threads=None):
    """Run ``trials`` independent trials and aggregate a :class:`RunReport`."""
    if allocator not in _ALLOCATORS:
        raise ConfigurationError(f"allocator must be one of {_ALLOCATORS}")
    if trials < 1:
        raise ConfigurationError("trials must be >= 1")
    config.validate()
    threads = default_threads() if threads is None else threads

    payloads = [(dataclasses.asdict(config), allocator, t) for t in range(trials)]
    if threads > 1 and trials > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_trial_worker, payloads))
    else:
        results = [_trial_worker(p) for p in payloads]
    results.sort(key=lambda r: r["trial"])

    ok = [r for r in results if "error" not in r]
    errors = [(r["trial"], r["error"]) for r in results if "error" in r]

    v2v_ok = v2v_all = v2i_ok = 0
    thr_sum = 0.0
    thr_cnt = 0
    delay_sum = 0.0
    delay_cnt = 0
    viol_sum = 0.0
    viol_cnt = 0
    infeas = 0
    clamped = degenerate = 0
    for r in ok:
        rows = r["rows"]
        ad = rows["phase"] == "adaptation"
        v2v_all += int(ad.sum())
        v2v_ok += int(rows["satisfied"][ad].sum())
        thr = rows["throughput_mbps"][ad]
        thr_sum += float(thr.sum())
        thr_cnt += thr.size
        v2i_ok += int((thr >= config.rate_req_bps / 1e6).sum())
        d = rows["delay_ms"][ad]
        finite = d >= 0.0
        delay_sum += float(d[finite].sum())
        delay_cnt += int(finite.sum())
        over = (d > config.delay_req_s * 1e3) | ~finite
        viol = d[over & finite]
        viol_sum += float(viol.sum())
        viol_cnt += int(over.sum())
        infeas += int(rows["infeasible"][ad].sum())
        clamped += r["flags"].get("cross_clamped", 0)
        degenerate += r["flags"].get("degenerate", 0)

    v2v_rate = v2v_ok / v2v_all if v2v_all else float("nan")
    v2i_rate = v2i_ok / v2v_all if v2v_all else float("nan")
    cond = (viol_sum / viol_cnt) if viol_cnt else None

    return RunReport(
        allocator=allocator, config=config, trials=trials, completed=len(ok),
        trial_ids=[r["trial"] for r in ok],
        rows=[r["rows"] for r in ok],
        decisions=[r["decisions"] for r in ok],
        j_trace=[r["j_trace"] for r in ok],
        v2v_ok_rate=v2v_rate, v2i_ok_rate=v2i_rate,
        mean_delay_ms=(delay_sum / delay_cnt) if delay_cnt else float("nan"),
        conditional_mean_delay_ms=cond,
        mean_throughput_mbps=(thr_sum / thr_cnt) if thr_cnt else float("nan"),
        infeasible_rate=(infeas / v2v_all) if v2v_all else float("nan"),
        cross_clamped=clamped, degenerate_sinr=degenerate,
        estimates_text=(ok[0]["estimates_text"] if ok else []),
        lambda_y_trial0=(ok[0]["lambda_y"] if ok else []),
        partial_errors=errors,
    )


# --------------------------------------------------------------------------- emission


def _fmt(x):
    return f"{x:.10g}"


def emit(report, out_dir):
    """Write slots.csv, summary.json, and the plot tables; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    tables = os.path.join(out_dir, "tables")
    os.makedirs(tables, exist_ok=True)
    config = report.config
    n_slots = config.absorption_len + config.adaptation_len

    csv_path = os.path.join(out_dir, "slots.csv")
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("slot,phase,pair,p_v_mw,p_i_mw,delay_ms,throughput_mbps,satisfied,infeasible\n")
        for t, rows in zip(report.trial_ids, report.rows):
            base = t * n_slots
            for i in range(rows["slot"].shape[0]):
                fh.write(",".join((
                    str(base + int(rows["slot"][i])),
                    rows["phase"][i],
                    str(int(rows["pair"][i])),
                    _fmt(rows["p_v_mw"][i]),
                    _fmt(rows["p_i_mw"][i]),
                    _fmt(rows["delay_ms"][i]),
                    _fmt(rows["throughput_mbps"][i]),
                    str(int(rows["satisfied"][i])),
                    str(int(rows["infeasible"][i])),
                )) + "\n")

    def _num(x):
        # empty aggregates surface as null, not NaN (NaN is not valid JSON)
        return x if x is not None and math.isfinite(x) else None

    summary = {
        "allocator": report.allocator,
        "trials": report.trials,
        "completed": report.completed,
        "v2v_ok_rate": _num(report.v2v_ok_rate),
        "v2i_ok_rate": _num(report.v2i_ok_rate),
        "mean_delay_ms": _num(report.mean_delay_ms),
        "mean_throughput_mbps": _num(report.mean_throughput_mbps),
        "infeasible_rate": _num(report.infeasible_rate),
        "cross_clamped": report.cross_clamped,
        "degenerate_sinr": report.degenerate_sinr,
        "partial_errors": [list(e) for e in report.partial_errors],
        "rng_seed": config.rng_seed,
        "error_law": config.error_law,
        "hr_weight": config.hr_weight,
    }
    if report.conditional_mean_delay_ms is not None:
        summary["conditional_mean_delay_ms"] = report.conditional_mean_delay_ms
    summary_path = os.path.join(out_dir, "summary.json")
    with open(summary_path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")

    _emit_tables(report, tables)
    return csv_path, summary_path, tables


def _emit_tables(report, tables_dir):
    config = report.config
    law = chan.error_law(config.error_law, config.custom_weights,
                         config.custom_means, config.custom_vars)

    lo = float(np.min(law.means - 5.0 * np.sqrt(law.variances)))
    hi = float(np.max(law.means + 5.0 * np.sqrt(law.variances)))
    x = np.linspace(lo, hi, 601)
    true_pdf = law.pdf(x)
    est_cols = []
    for text in report.estimates_text:
        est = absorption.DeconvEstimate.from_text(text)
        est_cols.append(est.pdf(x))
    est_mean = np.mean(est_cols, axis=0) if est_cols else np.zeros_like(x)
    with open(os.path.join(tables_dir, "error_pdf.csv"), "w", encoding="utf-8") as fh:
        fh.write("x,true_pdf,estimated_pdf\n")
        for xi, ti, ei in zip(x, true_pdf, est_mean):
            fh.write(f"{_fmt(xi)},{_fmt(ti)},{_fmt(ei)}\n")

    delays = []
    thrs = []
    for rows in report.rows:
        ad = rows["phase"] == "adaptation"
        delays.append(rows["delay_ms"][ad])
        thrs.append(rows["throughput_mbps"][ad])
    delays = np.concatenate(delays) if delays else np.empty(0)
    thrs = np.concatenate(thrs) if thrs else np.empty(0)

    def cdf_table(path, vals, header, grid, ccdf=False):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(header + "\n")
            if not vals.size:
                return
            for g in grid:
                p = float(np.mean(vals <= g))
                line = f"{_fmt(g)},{_fmt(p)}"
                if ccdf:
                    line += f",{_fmt(1.0 - p)}"
                fh.write(line + "\n")

    finite = delays[delays >= 0.0]
    d_hi = float(finite.max()) if finite.size else 1.0
    cdf_table(os.path.join(tables_dir, "delay_cdf.csv"),
              np.where(delays < 0.0, np.inf, delays),
              "delay_ms,cdf,ccdf", np.linspace(0.0, d_hi, 513), ccdf=True)
    t_hi = float(thrs.max()) if thrs.size else 1.0
    cdf_table(os.path.join(tables_dir, "throughput_cdf.csv"), thrs,
              "throughput_mbps,cdf", np.linspace(0.0, t_hi, 513))

    with open(os.path.join(tables_dir, "satisfaction_trace.csv"), "w", encoding="utf-8") as fh:
        fh.write("slot,satisfied_rate\n")
        if report.rows:
            n_slots = config.absorption_len + config.adaptation_len
            hits = np.zeros(n_slots)
            counts = np.zeros(n_slots)
            for rows in report.rows:
                sl = rows["slot"].astype(int)
                hits += np.bincount(sl, weights=rows["satisfied"], minlength=n_slots)
                counts += np.bincount(sl, minlength=n_slots)
            rate = np.divide(hits, counts, out=np.zeros(n_slots), where=counts > 0)
            for s in range(n_slots):
                fh.write(f"{s},{_fmt(rate[s])}\n")


# --------------------------------------------------------------------------- CLI


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="rv2x",
        description="Two-phase V2X resource allocation simulator")
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--allocator", choices=_ALLOCATORS, default="proposed")
    parser.add_argument("--trials", type=int, default=1)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default="out")
    parser.add_argument("--error-law", choices=("type1", "type2", "custom"), default=None)
    parser.add_argument("--lambda-v", type=float, default=None,
                        help="hazard-rate retention weight in [0, 1]")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config) if args.config else SimConfig()
        updates = {}
        if args.seed is not None:
            updates["rng_seed"] = args.seed
        if args.error_law is not None:
            updates["error_law"] = args.error_law
        if args.lambda_v is not None:
            updates["hr_weight"] = args.lambda_v
        if updates:
            config = dataclasses.replace(config, **updates)
        config.validate()
        report = run(config, allocator=args.allocator, trials=args.trials)
        emit(report, args.out)
    except ConfigurationError as exc:
        print("ERROR " + json.dumps({"error": "configuration", "message": str(exc)}),
              file=sys.stderr)
        return 2
    except Exception as exc:  # unexpected failure: still machine readable
        print("ERROR " + json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1

    print(json.dumps({
        "allocator": report.allocator,
        "completed": report.completed,
        "v2v_ok_rate": report.v2v_ok_rate,
        "mean_throughput_mbps": report.mean_throughput_mbps,
        "out": os.path.abspath(args.out),
    }, sort_keys=True))
    return 0 if report.completed == report.trials else 1


if __name__ == "__main__":
    sys.exit(main())
