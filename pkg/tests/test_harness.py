import json
import os

import numpy as np
import pytest

from rv2x.absorption import DeconvEstimate
from rv2x.config import SimConfig
from rv2x.errors import ConfigurationError
from rv2x.harness import (RunReport, default_threads, emit, main, run,
                          run_trial, _stream)


def _tiny(**kw):
    base = dict(num_pairs=2, absorption_len=40, matching_horizon=40,
                adaptation_len=4, deviation_trace=False)
    base.update(kw)
    return SimConfig(**base)


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


# ------------------------------------------------------------------- streams

def test_named_substreams():
    a = _stream(0, 3, "absorption").random(4)
    b = _stream(0, 3, "absorption").random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, _stream(0, 3, "adaptation").random(4))
    assert not np.allclose(a, _stream(0, 4, "absorption").random(4))
    assert not np.allclose(a, _stream(1, 3, "absorption").random(4))
    with pytest.raises(KeyError):
        _stream(0, 0, "nope")


# ------------------------------------------------------------------- trials

def test_run_report_structure_and_row_semantics():
    config = _tiny()
    report = run(config, "proposed", trials=2, threads=1)
    assert report.completed == 2 and report.trial_ids == [0, 1]
    n = (config.absorption_len + config.adaptation_len) * config.num_pairs
    for rows in report.rows:
        assert rows["slot"].shape == (n,)
        # satisfied column is recomputable from the delay column alone
        d = rows["delay_ms"]
        want_sat = ((d >= 0.0) & (d <= config.delay_req_s * 1e3)).astype(int)
        np.testing.assert_array_equal(rows["satisfied"], want_sat)
        assert set(np.unique(rows["infeasible"])) <= {0, 1}
        phases = rows["phase"].reshape(-1, config.num_pairs)[:, 0]
        assert list(np.unique(phases[:config.absorption_len])) == ["absorption"]
        assert list(np.unique(phases[config.absorption_len:])) == ["adaptation"]
    assert 0.0 <= report.v2v_ok_rate <= 1.0
    assert 0.0 <= report.v2i_ok_rate <= 1.0
    assert report.mean_throughput_mbps > 0.0
    assert len(report.estimates_text) == config.num_pairs
    for text, lam in zip(report.estimates_text, report.lambda_y_trial0):
        est = DeconvEstimate.from_text(text)
        assert est.samples.shape == (config.absorption_len,)
        np.testing.assert_allclose(est.lambda_y, lam, rtol=1e-12)


def test_all_allocators_complete():
    config = _tiny()
    for allocator in ("proposed", "gaussian", "hpr"):
        report = run(config, allocator, trials=1, threads=1)
        assert report.completed == 1, allocator
    with pytest.raises(ConfigurationError):
        run(config, "oracle", trials=1)
    with pytest.raises(ConfigurationError):
        run(config, "proposed", trials=0)


def test_deviation_trace_lengths():
    config = _tiny(adaptation_len=3, deviation_trace=True, true_mc_draws=1000)
    report = run(config, "proposed", trials=1, threads=1)
    (trace,) = report.j_trace
    assert trace.shape == (3,)
    assert np.all(trace >= 0.0) and np.all(np.isfinite(trace))
    off = run(_tiny(adaptation_len=3), "proposed", trials=1, threads=1)
    np.testing.assert_array_equal(off.j_trace[0], np.zeros(3))


def test_worker_count_does_not_change_bytes(tmp_path):
    config = _tiny()
    rep1 = run(config, "proposed", trials=2, threads=1)
    rep2 = run(config, "proposed", trials=2, threads=2)
    d1, d2 = tmp_path / "a", tmp_path / "b"
    emit(rep1, str(d1))
    emit(rep2, str(d2))
    for rel in ("slots.csv", "summary.json", "tables/error_pdf.csv",
                "tables/delay_cdf.csv", "tables/throughput_cdf.csv",
                "tables/satisfaction_trace.csv"):
        assert _read(d1 / rel) == _read(d2 / rel), f"{rel} differs across workers"


def test_failed_trials_are_recorded_not_fatal(monkeypatch, tmp_path):
    import rv2x.absorption

    def boom(*a, **kw):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr(rv2x.absorption, "run_absorption", boom)
    report = run(_tiny(), "proposed", trials=2, threads=1)
    assert report.completed == 0
    assert len(report.partial_errors) == 2
    assert "synthetic failure" in report.partial_errors[0][1]
    # empty aggregate still emits: headers-only tables, null metrics
    out = tmp_path / "empty"
    emit(report, str(out))
    assert _read(out / "slots.csv").decode().splitlines() == [
        "slot,phase,pair,p_v_mw,p_i_mw,delay_ms,throughput_mbps,satisfied,infeasible"]
    summary = json.loads(_read(out / "summary.json"))
    assert summary["v2v_ok_rate"] is None and summary["mean_delay_ms"] is None
    assert "conditional_mean_delay_ms" not in summary
    assert summary["completed"] == 0 and len(summary["partial_errors"]) == 2
    for rel in ("delay_cdf.csv", "throughput_cdf.csv", "satisfaction_trace.csv"):
        lines = _read(out / "tables" / rel).decode().splitlines()
        assert len(lines) == 1, f"{rel} should be header-only"


# ------------------------------------------------------------------- emission

def test_emit_artifacts(tmp_path):
    config = _tiny()
    report = run(config, "proposed", trials=2, threads=1)
    out = tmp_path / "out"
    csv_path, summary_path, tables = emit(report, str(out))

    lines = _read(csv_path).decode().splitlines()
    header = "slot,phase,pair,p_v_mw,p_i_mw,delay_ms,throughput_mbps,satisfied,infeasible"
    assert lines[0] == header
    n_slots = config.absorption_len + config.adaptation_len
    assert len(lines) == 1 + 2 * n_slots * config.num_pairs
    # global slot index: trial t occupies [t*n_slots, (t+1)*n_slots)
    slots = np.array([int(l.split(",")[0]) for l in lines[1:]])
    np.testing.assert_array_equal(np.unique(slots), np.arange(2 * n_slots))
    trial_of = slots // n_slots
    assert (np.diff(trial_of) >= 0).all(), "trials must be emitted in order"

    summary = json.loads(_read(summary_path))
    for key in ("allocator", "trials", "completed", "v2v_ok_rate", "v2i_ok_rate",
                "mean_delay_ms", "mean_throughput_mbps", "infeasible_rate",
                "cross_clamped", "degenerate_sinr", "rng_seed", "error_law",
                "hr_weight", "partial_errors"):
        assert key in summary, key
    assert summary["allocator"] == "proposed" and summary["completed"] == 2

    pdf = np.genfromtxt(os.path.join(tables, "error_pdf.csv"), delimiter=",",
                        names=True)
    np.testing.assert_allclose(np.trapezoid(pdf["true_pdf"], pdf["x"]), 1.0, atol=1e-4)
    # 40 probes at a tiny nuisance rate give a noisy estimate; only structure
    # is contractual here (quality is covered by the controlled-rate tests)
    assert np.all(np.isfinite(pdf["estimated_pdf"]))

    cdf = np.genfromtxt(os.path.join(tables, "delay_cdf.csv"), delimiter=",", names=True)
    assert (np.diff(cdf["cdf"]) >= 0).all()
    np.testing.assert_allclose(cdf["ccdf"], 1.0 - cdf["cdf"], atol=1e-9)
    thr = np.genfromtxt(os.path.join(tables, "throughput_cdf.csv"), delimiter=",", names=True)
    assert (np.diff(thr["cdf"]) >= 0).all() and thr["cdf"][-1] <= 1.0 + 1e-12

    trace = np.genfromtxt(os.path.join(tables, "satisfaction_trace.csv"),
                          delimiter=",", names=True)
    assert trace.shape == (n_slots,)
    np.testing.assert_array_equal(trace["slot"], np.arange(n_slots))
    assert np.all(trace["satisfied_rate"] >= 0.0)
    assert np.all(trace["satisfied_rate"] <= 1.0)


def test_emit_conditional_delay_and_infinite_sentinel(tmp_path):
    # synthetic report: one -1 (infinite) delay and one budget violation
    config = SimConfig(num_pairs=1, absorption_len=0, matching_horizon=1,
                       adaptation_len=2)
    rows = {
        "slot": np.array([0, 1]),
        "phase": np.array(["adaptation", "adaptation"], dtype="U10"),
        "pair": np.array([0, 0]),
        "p_v_mw": np.array([10.0, 10.0]),
        "p_i_mw": np.array([20.0, 20.0]),
        "delay_ms": np.array([-1.0, 20.0]),
        "throughput_mbps": np.array([1.0, 2.0]),
        "satisfied": np.array([0, 0]),
        "infeasible": np.array([0, 0]),
    }
    report = RunReport(
        allocator="proposed", config=config, trials=1, completed=1,
        trial_ids=[0], rows=[rows], decisions=[{}], j_trace=[np.zeros(2)],
        v2v_ok_rate=0.0, v2i_ok_rate=1.0, mean_delay_ms=20.0,
        conditional_mean_delay_ms=20.0, mean_throughput_mbps=1.5,
        infeasible_rate=0.0, cross_clamped=0, degenerate_sinr=0,
        estimates_text=[], lambda_y_trial0=[], partial_errors=[])
    out = tmp_path / "synthetic"
    csv_path, summary_path, tables = emit(report, str(out))
    summary = json.loads(_read(summary_path))
    assert summary["conditional_mean_delay_ms"] == 20.0
    body = _read(csv_path).decode().splitlines()[1:]
    assert body[0].split(",")[5] == "-1"  # infinite delay keeps the sentinel
    cdf = np.genfromtxt(os.path.join(tables, "delay_cdf.csv"), delimiter=",", names=True)
    # the infinite delay never enters the cdf: it tops out at 1/2
    np.testing.assert_allclose(cdf["cdf"][-1], 0.5, atol=1e-12)
    np.testing.assert_allclose(cdf["ccdf"][-1], 0.5, atol=1e-12)


# ------------------------------------------------------------------- CLI

def test_cli_round_trip(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("num_pairs = 2\nabsorption_len = 40\nmatching_horizon = 40\n"
                   "adaptation_len = 2\ndeviation_trace = false\n")
    out = tmp_path / "cli_out"
    code = main(["--config", str(cfg), "--trials", "1", "--out", str(out),
                 "--seed", "7", "--lambda-v", "0.3", "--error-law", "type2"])
    captured = capsys.readouterr()
    assert code == 0
    status = json.loads(captured.out.strip().splitlines()[-1])
    assert status["completed"] == 1 and status["allocator"] == "proposed"
    summary = json.loads(_read(out / "summary.json"))
    assert summary["rng_seed"] == 7
    assert summary["hr_weight"] == 0.3
    assert summary["error_law"] == "type2"
    assert (out / "slots.csv").exists() and (out / "tables" / "delay_cdf.csv").exists()


def test_cli_rejects_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("not_a_knob = 1\n")
    code = main(["--config", str(cfg), "--out", str(tmp_path / "x")])
    captured = capsys.readouterr()
    assert code == 2
    err = captured.err.strip().splitlines()[-1]
    assert err.startswith("ERROR ")
    payload = json.loads(err[len("ERROR "):])
    assert payload["error"] == "configuration"


def test_cli_rejects_bad_flag_values(tmp_path, capsys):
    code = main(["--lambda-v", "1.5", "--out", str(tmp_path / "x")])
    captured = capsys.readouterr()
    assert code == 2 and captured.err.startswith("ERROR ")


# ------------------------------------------------------------------- threads env

def test_threads_env_override(monkeypatch):
    monkeypatch.setenv("RV2X_THREADS", "3")
    assert default_threads() == 3
    monkeypatch.setenv("RV2X_THREADS", "0")
    with pytest.raises(ConfigurationError):
        default_threads()
    monkeypatch.setenv("RV2X_THREADS", "many")
    with pytest.raises(ConfigurationError):
        default_threads()
    monkeypatch.delenv("RV2X_THREADS")
    assert 1 <= default_threads() <= 8


# ------------------------------------------------------------------- single trial

def test_run_trial_determinism():
    config = _tiny()
    a = run_trial(config, "proposed", 0)
    b = run_trial(config, "proposed", 0)
    np.testing.assert_array_equal(a["rows"]["delay_ms"], b["rows"]["delay_ms"])
    np.testing.assert_array_equal(a["decisions"]["c_star"], b["decisions"]["c_star"])
    c = run_trial(config, "proposed", 1)
    assert not np.array_equal(a["rows"]["delay_ms"], c["rows"]["delay_ms"])
