"""Acceptance checks, one test per criterion.

Each test prints a single ``ACCEPTANCE <n> PASS|FAIL ...`` line (visible with
``pytest -s`` or in ``-rA`` summaries) before asserting. Tolerances are pinned
as module constants.
"""
import json
import math
import os
import statistics
import time
from pathlib import Path

import numpy as np
import pytest

from mwtgc import autodiff as ad
from mwtgc.cli import main as cli_main
from mwtgc.data import SplitSpec, SynthSpec, generate_synthetic, save_speeds, window_dataset
from mwtgc.evaluation import dm_test, mad, mape, mase, rmse
from mwtgc.experiment import ExperimentConfig, load_data, parse_combinations, raw_windows, run_ablation, \
    write_ablation
from mwtgc.graph import adjacency_ranks, save_topology
from mwtgc.model import ModelConfig, forward, init_model, predict
from mwtgc.numerics import grad_check
from mwtgc.training import TrainConfig, train
from mwtgc.weights import WeightConfig, angle_weight_value, build_weight_set, clip_with_identity

from conftest import count_paths, make_network
from test_evaluation import brute_dm

GRAD_TOL = 1e-4
GRAD_EPS = 1e-5
GRAD_SECONDS = 30.0
WEIGHT_TOL = 1e-6
METRIC_TOL = 1e-9
DM_TOL = 1e-10
E2E_SECONDS = 15 * 60
E2E_MAX_EPOCHS = 300
# Frozen from the first recorded run (h12 RMSE 1.7273 km/h) plus 2% slack.
E2E_MWTGC_H12_RMSE_MAX = 1.762
ABLATION_SPEC = SynthSpec(n_segments=8, days=4, seed=42)


def report(n, ok, detail):
    print(f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'} {detail}")
    return ok


def test_1_gradient_fidelity():
    t0 = time.perf_counter()
    net = generate_synthetic(SynthSpec(n_segments=6, days=1, seed=3))[0]
    cfg = ModelConfig(kinds=("plain", "speed_limit_ratio"), max_rank=2, h=3, horizon=2, c_out=2, hidden=4)
    model = init_model(net, cfg, seed=0)
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(3, 3, 6)), rng.normal(size=(3, 2, 6))

    def loss(tape, leaves):
        return ad.mean_square(forward(model, x, tape, leaves), ad.Var(y))

    err = grad_check(loss, model.params, GRAD_EPS)
    secs = time.perf_counter() - t0
    assert report(1, err < GRAD_TOL and secs < GRAD_SECONDS,
                  f"max rel err {err:.3e} (< {GRAD_TOL}), {secs:.1f} s (< {GRAD_SECONDS} s)")


def test_2_k_rank_oracle():
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(50):
        n = int(rng.integers(1, 13))
        edges = [(a, b) for a in range(n) for b in range(n) if a != b and rng.random() < 0.25]
        net = make_network(n, edges)
        for k, pair in adjacency_ranks(net, 3).items():
            out, inn = pair.outflow.toarray(), pair.inflow.toarray()
            if not (np.array_equal(out, count_paths(edges, n, k)) and np.array_equal(inn, out.T)):
                mismatches += 1
    assert report(2, mismatches == 0, f"50 graphs x k=1..3, {mismatches} mismatches")


def _pair(limits=(60.0, 80.0), headings=(0.0, 0.0), d=1000.0):
    return make_network(2, [(0, 1)], limits=list(limits), mids=[(0.0, 0.0), (d, 0.0)], headings=list(headings))


def test_3_weight_formulas():
    cfg = WeightConfig()
    checks = {}
    ws = build_weight_set(_pair(), 1, ["distance", "speed_limit_ratio"])
    checks["distance exp(-1)"] = abs(ws["distance", "outflow", 1].toarray()[0, 1] - 0.367879) < WEIGHT_TOL
    raw_ratio = 80.0 / 60.0
    checks["ratio 4/3 raw"] = abs(raw_ratio - 4 / 3) < WEIGHT_TOL
    checks["ratio clipped to 1"] = ws["speed_limit_ratio", "outflow", 1].toarray()[0, 1] == 1.0
    # references are exact expressions: 0.52925 and 0.72738 are rounded too coarsely for 1e-6
    checks["angle right turn exp(-2/pi)"] = abs(angle_weight_value(math.pi / 2, cfg) - math.exp(-2 / math.pi)) \
        < WEIGHT_TOL
    checks["angle reversal exp(-1/pi)"] = abs(angle_weight_value(math.pi, cfg) - math.exp(-1 / math.pi)) \
        < WEIGHT_TOL
    full = build_weight_set(make_network(4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)],
                                         limits=[40.0, 60.0, 80.0, 100.0],
                                         mids=[(0, 0), (300, 0), (300, 300), (0, 300)],
                                         headings=[0.0, 1.5, 3.1, 4.6]),
                            3, ["plain", "distance", "slr", "slc", "slch", "angle"])
    diag_ok = in_range = True
    for key in full.keys:
        m = full[key].toarray()
        diag_ok &= bool(np.all(np.diag(m) == 1.0))
        in_range &= bool(np.all((m >= 0.0) & (m <= 1.0)))
    checks["unit diagonal"] = diag_ok
    checks["entries in [0,1]"] = in_range
    checks["dense clip"] = np.array_equal(clip_with_identity(np.array([[0.0, 4 / 3], [0.75, 0.0]])),
                                          [[1.0, 1.0], [0.75, 1.0]])
    failed = [k for k, v in checks.items() if not v]
    assert report(3, not failed, f"{len(checks) - len(failed)}/{len(checks)} checks" +
                  (f", failed: {failed}" if failed else ""))


def test_4_metrics_and_dm():
    pred, actual = np.array([[3.0, 4.0]]), np.array([[2.0, 6.0]])
    hand = [abs(rmse(pred, actual) - math.sqrt(2.5)), abs(mad(pred, actual) - 1.5),
            abs(mape(pred, actual) - 125 / 3), abs(mase(pred, actual) - 0.75)]
    rng = np.random.default_rng(4)
    rmse_ge_mad = all(rmse(p, a) >= mad(p, a)
                      for p, a in (rng.normal(size=(2, 5, 7)) * rng.uniform(0.1, 50) for _ in range(1000)))
    a, b = rng.normal(3, 1, 300) ** 2, rng.normal(3.1, 1, 300) ** 2
    antisym = all(dm_test(a, b, lag).statistic == -dm_test(b, a, lag).statistic for lag in (0, 1, 5, 11))
    dm_err = max(abs(dm_test(a, b, lag).statistic - brute_dm(a.tolist(), b.tolist(), lag)) for lag in (0, 1, 5, 11))
    ok = max(hand) < METRIC_TOL and rmse_ge_mad and antisym and dm_err < DM_TOL
    assert report(4, ok, f"hand max err {max(hand):.1e}, RMSE>=MAD on 1000: {rmse_ge_mad}, "
                         f"DM antisymmetric: {antisym}, DM vs brute force {dm_err:.1e}")


@pytest.mark.slow
def test_5_end_to_end_learning():
    net, series = generate_synthetic(SynthSpec())
    assert (net.n, series.t) == (30, 30 * 288)
    windows, norm = window_dataset(series, 12, 12, SplitSpec())
    x, y = raw_windows(series, windows["test"])
    h12 = y[:, 11, :]
    ha_rmse = rmse(x[:, -1, :], h12)
    results = {}
    for graph in (True, False):
        model = init_model(net, ModelConfig(kinds=("plain", "speed_limit_ratio"), max_rank=3, graph_conv=graph),
                           seed=0, normalizer=norm)
        t0 = time.perf_counter()
        state = train(model, windows, TrainConfig(max_epochs=E2E_MAX_EPOCHS))
        secs = time.perf_counter() - t0
        results[model.kind] = (rmse(predict(model, x)[:, 11, :], h12), state, secs)
    m_rmse, m_state, m_secs = results["mwtgc"]
    s_rmse = results["seq2seq"][0]
    conv = m_state.stopped_early and m_state.epoch <= E2E_MAX_EPOCHS and m_secs < E2E_SECONDS
    ok = m_rmse < ha_rmse and m_rmse <= s_rmse and conv
    if E2E_MWTGC_H12_RMSE_MAX is not None:
        ok &= m_rmse <= E2E_MWTGC_H12_RMSE_MAX
    assert report(5, ok, f"h12 RMSE mwtgc {m_rmse:.4f} vs HA {ha_rmse:.4f} (margin {ha_rmse - m_rmse:+.4f}) "
                         f"vs seq2seq {s_rmse:.4f} (margin {s_rmse - m_rmse:+.4f}); "
                         f"early stop {m_state.stopped_early} at epoch {m_state.epoch}, {m_secs:.0f} s")


def test_6_ablation_protocol(tmp_path):
    exp = ExperimentConfig(synthetic=ABLATION_SPEC, model=ModelConfig(max_rank=3),
                           train=TrainConfig(max_epochs=3), split=SplitSpec(2, 1, 1), trials=3,
                           workers=min(3, os.cpu_count() or 1))
    net, series = load_data(exp)
    combos = parse_combinations("plain;speed_limit_ratio;plain+speed_limit_ratio")
    same_res, same_table = run_ablation(exp, net, series, combos, base_seed=7, same_seed=True)
    zero_std = all(r[f"{m}_std"] == 0.0 for r in same_table for m in ("rmse", "mape", "mad", "mase"))
    dumps = []
    for run in ("a", "b"):
        res, table = run_ablation(exp, net, series, combos, base_seed=7)
        write_ablation(res, table, tmp_path / run)
        dumps.append({p.name: p.read_bytes() for p in sorted((tmp_path / run).iterdir())})
    identical = dumps[0] == dumps[1]
    # mean/std cross-check against the per-trial numbers
    row = next(r for r in table if r["combination"] == "plain" and r["horizon_min"] == 60)
    trials = [next(x for x in t["reports"] if x[0] == 60)[1] for t in res if t["combination"] == "plain"]
    stats_ok = abs(row["rmse_mean"] - np.mean(trials)) < 1e-12 and abs(row["rmse_std"] - np.std(trials, ddof=1)) < 1e-12
    md = dumps[0]["ablation_table.md"].decode()
    shaped = all(c in md for c in ("plain", "speed_limit_ratio", "plain+speed_limit_ratio", "±", "### 60 min"))
    ok = zero_std and identical and stats_ok and shaped and len(table) == 9
    assert report(6, ok, f"same-seed std==0: {zero_std}, rerun byte-identical: {identical}, "
                         f"mean/std recomputation: {stats_ok}, table shape: {shaped}")


def test_7_config_dump_audit(tmp_path, capsys):
    net, series = generate_synthetic(SynthSpec(n_segments=10, days=1, seed=1))
    save_topology(net, tmp_path)
    save_speeds(series, tmp_path / "speeds.csv")
    assert cli_main(["train", "--topology", str(tmp_path), "--speeds", str(tmp_path / "speeds.csv"),
                     "--dump-config"]) == 0
    d = json.loads(capsys.readouterr().out)
    m, t = d["model"], d["train"]
    expect = {"h": (m["h"], 12), "T_p": (m["horizon"], 12), "k": (m["max_rank"], 3), "C_out": (m["c_out"], 4),
              "h_size": (m["hidden_size"], 2 * d["n_segments"]), "batch": (t["batch_size"], 50),
              "lr": (t["learning_rate"], 1e-3), "decay": (t["decay_factor"], 0.7),
              "decay_every": (t["decay_every"], 5)}
    lr_10 = TrainConfig().lr_at(10)
    bad = {k: v for k, v in expect.items() if v[0] != v[1]}
    ok = not bad and abs(lr_10 - 1e-3 * 0.49) < 1e-15 and d["n_segments"] == 10
    assert report(7, ok, f"{len(expect) - len(bad)}/{len(expect)} constants match, lr@10 = {lr_10:.3e}" +
                  (f", mismatched: {bad}" if bad else ""))


TOPIS_DIR = os.environ.get("MWTGC_TOPIS_DIR")


@pytest.mark.skipif(not TOPIS_DIR, reason="set MWTGC_TOPIS_DIR to a directory with segments.csv, "
                                          "connections.csv and speeds.csv")
def test_8_topis_run(tmp_path):
    root = Path(TOPIS_DIR)
    code = cli_main(["train", "--topology", str(root), "--speeds", str(root / "speeds.csv"),
                     "--out", str(tmp_path)])
    ok = code == 0 and (tmp_path / "checkpoint.npz").exists()
    if ok:
        code = cli_main(["evaluate", "--topology", str(root), "--speeds", str(root / "speeds.csv"),
                         "--checkpoint", str(tmp_path / "checkpoint.npz"), "--out", str(tmp_path)])
        ok = code == 0
    assert report(8, ok, f"urban run exit code {code}; see {tmp_path / 'report.csv'}")
