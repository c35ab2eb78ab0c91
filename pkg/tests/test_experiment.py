import csv
import statistics

import numpy as np
import pytest

from mwtgc.data import SplitSpec, SynthSpec
from mwtgc.errors import InputError
from mwtgc.experiment import (ExperimentConfig, combo_name, evaluate_model, format_table, inspect_weights,
                              load_data, parse_combinations, read_losses, resolved_config, run_ablation,
                              run_once, summarize, write_ablation, write_evaluation, write_inspection)
from mwtgc.model import ModelConfig, init_model
from mwtgc.training import TrainConfig


def tiny_experiment(**kw):
    base = dict(
        synthetic=SynthSpec(n_segments=6, days=3, seed=5),
        model=ModelConfig(max_rank=2, h=4, horizon=3, c_out=2, hidden=4),
        train=TrainConfig(max_epochs=2, batch_size=64),
        split=SplitSpec(1, 1, 1),
        horizons=(1, 3),
        trials=2,
    )
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def tiny():
    exp = tiny_experiment()
    net, series = load_data(exp)
    return exp, net, series


def test_config_round_trip_through_dict():
    exp = tiny_experiment()
    again = ExperimentConfig.from_dict(exp.to_dict())
    assert again == exp


def test_config_rejects_unknown_keys_and_bad_horizons():
    with pytest.raises(InputError, match="unknown config keys"):
        ExperimentConfig.from_dict({"epochs": 3})
    with pytest.raises(ValueError):
        tiny_experiment(horizons=(4,))


def test_load_data_needs_a_source():
    with pytest.raises(InputError):
        load_data(ExperimentConfig())


def test_resolved_config_reports_derived_sizes(tiny):
    exp, net, _ = tiny
    d = resolved_config(exp.replace(model=ModelConfig()), net)
    assert d["model"]["hidden_size"] == 2 * net.n
    assert d["model"]["c"] == 4 and d["model"]["n_matrices"] == 12


def test_combinations_parse_and_name():
    combos = parse_combinations("plain; slr ;plain+slr")
    assert [combo_name(c) for c in combos] == ["plain", "speed_limit_ratio", "plain+speed_limit_ratio"]
    with pytest.raises(ValueError):
        parse_combinations(" ; ;")


def test_evaluation_files_and_losses(tiny, tmp_path):
    exp, net, series = tiny
    model, state, reports = run_once(exp, net, series, seed=1)
    assert [r.horizon_steps for r in reports] == [1, 3]
    results = evaluate_model(model, net, series, exp.split, exp.horizons)
    assert set(results) == {"mwtgc", "ha"}
    write_evaluation(results, tmp_path, net.names, "mwtgc")
    rows = list(csv.DictReader(open(tmp_path / "report.csv")))
    assert [(r["model"], r["horizon_min"]) for r in rows] == [("mwtgc", "5"), ("mwtgc", "15"), ("ha", "5"), ("ha", "15")]
    assert float(rows[1]["rmse"]) == reports[1].rmse
    name, hz, losses = read_losses(tmp_path / "losses_mwtgc.csv")
    pred, y, _ = results["mwtgc"]
    assert name == "mwtgc" and hz == 15
    np.testing.assert_array_equal(losses, np.mean((pred[:, 2] - y[:, 2]) ** 2, axis=1))
    first = {p.name: p.read_bytes() for p in tmp_path.iterdir()}
    write_evaluation(results, tmp_path, net.names, "mwtgc")
    assert first == {p.name: p.read_bytes() for p in tmp_path.iterdir()}


def test_evaluate_rejects_other_network(tiny):
    exp, net, series = tiny
    model = init_model(net, exp.model)
    other_exp = exp.replace(synthetic=SynthSpec(n_segments=7, days=3, seed=5))
    other, other_series = load_data(other_exp)
    with pytest.raises(InputError, match="unexpected ids"):
        evaluate_model(model, other, other_series, exp.split, exp.horizons)


def test_inspection_equals_wtilde_without_noise(tiny, tmp_path):
    exp, net, _ = tiny
    cfg = ModelConfig(max_rank=2, h=4, horizon=3, c_out=2, hidden=4, gc_init_noise=0.0)
    model = init_model(net, cfg)
    full = inspect_weights(model, list(net.names))
    for slot, key in enumerate(model.layer.keys):
        np.testing.assert_array_equal(full[key], model.layer.wtilde_dense(slot))
    sub_ids = [net.names[3], net.names[0]]
    sub = inspect_weights(model, sub_ids)
    key = model.layer.keys[0]
    assert sub[key].shape == (2, 2)
    np.testing.assert_array_equal(sub[key], full[key][np.ix_([3, 0], [3, 0])])
    paths = write_inspection(sub, sub_ids, tmp_path)
    assert len(paths) == len(model.layer.keys)
    header = next(csv.reader(open(paths[0])))
    assert header == ["segment_id"] + sub_ids
    with pytest.raises(InputError):
        inspect_weights(model, ["nope"])


def _fake_results(values):
    out = []
    for combo, per_trial in values.items():
        for t, rmse in enumerate(per_trial):
            out.append({"combination": combo, "trial": t, "seed": t, "epochs": 1,
                        "reports": [(60, rmse, rmse * 2, rmse / 2, 0.5)]})
    return out


def test_summary_matches_independent_statistics():
    vals = {"plain": [2.0, 2.5, 1.75], "speed_limit_ratio": [1.9, 1.8, 2.05]}
    table = summarize(_fake_results(vals), list(vals), (12,))
    for row in table:
        xs = np.array(vals[row["combination"]])
        assert row["rmse_mean"] == pytest.approx(xs.mean(), abs=1e-12)
        assert row["rmse_std"] == pytest.approx(xs.std(ddof=1), abs=1e-12)
        assert row["mape_std"] == pytest.approx((2 * xs).std(ddof=1), abs=1e-12)
    assert [r["best"] for r in table] == [0, 1]


def test_summary_identical_trials_give_exact_zero_std():
    table = summarize(_fake_results({"plain": [1.2345678901234567] * 3}), ["plain"], (12,))
    assert table[0]["rmse_std"] == 0.0 and table[0]["rmse_mean"] == 1.2345678901234567
    assert "± 0.000" in format_table(table)


def test_summary_marks_failed_combination_invalid():
    res = _fake_results({"plain": [1.0, 2.0]}) + [{"combination": "angle", "trial": 0, "seed": 0,
                                                     "error": "DivergenceError: boom"}]
    table = summarize(res, ["plain", "angle"], (12,))
    bad = table[1]
    assert bad["note"].startswith("invalid") and "rmse_mean" not in bad
    assert table[0]["best"] == 1
    assert statistics.stdev([1.0, 2.0]) == table[0]["rmse_std"]


def test_ablation_same_seed_is_reproducible(tiny, tmp_path):
    exp, net, series = tiny
    combos = parse_combinations("plain;plain+slr")
    outs = []
    for run in range(2):
        results, table = run_ablation(exp, net, series, combos, base_seed=3, same_seed=True)
        d = tmp_path / f"run{run}"
        write_ablation(results, table, d)
        outs.append({p.name: p.read_bytes() for p in d.iterdir()})
    assert outs[0] == outs[1]
    assert all(r["rmse_std"] == 0.0 for r in table)


def test_ablation_parallel_matches_serial(tiny):
    exp, net, series = tiny
    combos = parse_combinations("plain")
    serial = run_ablation(exp, net, series, combos, base_seed=0)
    parallel = run_ablation(exp.replace(workers=2), net, series, combos, base_seed=0)
    assert serial == parallel
