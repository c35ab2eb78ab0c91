"""Experiment configuration, single runs, evaluation files and the ablation grid."""
import csv
import dataclasses
import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import SplitSpec, SynthSpec, generate_synthetic, load_speeds, window_dataset
from .errors import InputError, MwtgcError
from .evaluation import baseline_ha, evaluate_horizons, window_losses
from .graph import load_topology
from .model import ModelConfig, check_network, init_model, predict
from .training import TrainConfig, train
from .weights import WeightConfig, WeightKind, sort_kinds

log = logging.getLogger(__name__)

REPORT_HEADER = ["model", "horizon_min", "rmse", "mape", "mad", "mase"]
PER_SEGMENT_HEADER = ["segment_id", "rmse"]
LOSSES_HEADER = ["model", "window", "horizon_min", "mse"]
DM_HEADER = ["model_a", "model_b", "statistic", "p_value"]
METRICS = ("rmse", "mape", "mad", "mase")


@dataclass
class ExperimentConfig:
    topology: str = None
    speeds: str = None
    output_dir: str = "out"
    synthetic: SynthSpec = None
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    trials: int = 3
    horizons: tuple = (6, 9, 12)
    workers: int = 1

    def __post_init__(self):
        self.horizons = tuple(int(h) for h in self.horizons)
        if any(not 1 <= h <= self.model.horizon for h in self.horizons):
            raise ValueError(f"horizons {self.horizons} must lie in 1..T_p={self.model.horizon}")
        if self.trials < 1 or self.workers < 1:
            raise ValueError("trials and workers must be >= 1")

    @classmethod
    def from_dict(cls, raw):
        raw = dict(raw)
        unknown = set(raw) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise InputError(f"unknown config keys {sorted(unknown)}", offenders=sorted(unknown))
        if raw.get("synthetic") is not None:
            syn = dict(raw["synthetic"])
            if "speed_limits" in syn:
                syn["speed_limits"] = tuple(syn["speed_limits"])
            raw["synthetic"] = SynthSpec(**syn)
        if "model" in raw:
            m = dict(raw["model"])
            if "weights" in m:
                m["weights"] = WeightConfig(**m["weights"])
            raw["model"] = ModelConfig(**m)
        if "train" in raw:
            raw["train"] = TrainConfig(**raw["train"])
        if "split" in raw:
            raw["split"] = SplitSpec(**raw["split"])
        return cls(**raw)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["model"] = self.model.to_dict()
        d["horizons"] = list(self.horizons)
        if self.synthetic is not None:
            d["synthetic"]["speed_limits"] = list(self.synthetic.speed_limits)
        return d

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def load_data(exp):
    """Return ``(network, series)`` from files or the synthetic generator."""
    if exp.topology and exp.speeds:
        network = load_topology(exp.topology)
        return network, load_speeds(exp.speeds, network)
    if exp.synthetic is not None:
        return generate_synthetic(exp.synthetic)
    raise InputError("config needs topology + speeds paths or a synthetic section")


def resolved_config(exp, network):
    """Effective settings after sizing against the loaded network."""
    d = exp.to_dict()
    d["n_segments"] = network.n
    d["model"]["hidden_size"] = exp.model.hidden_size(network.n)
    d["model"]["c"] = 2 * len(exp.model.kinds)
    d["model"]["n_matrices"] = 2 * len(exp.model.kinds) * exp.model.max_rank
    return d


def raw_windows(series, windows):
    """km/h input and target arrays for a :class:`Windows` set."""
    data = series.values.T
    s = windows.starts
    return (data[s[:, None] + np.arange(windows.h)],
            data[s[:, None] + windows.h + np.arange(windows.horizon)])


def run_once(exp, network, series, kinds=None, seed=0, graph_conv=True, log_path=None, checkpoint_path=None):
    """Train one model and score it on the test split.

    Returns ``(model, state, reports)`` with reports at ``exp.horizons``.
    """
    mcfg = exp.model
    if kinds is not None:
        mcfg = dataclasses.replace(mcfg, kinds=tuple(kinds))
    mcfg = dataclasses.replace(mcfg, graph_conv=graph_conv)
    windows, norm = window_dataset(series, mcfg.h, mcfg.horizon, exp.split)
    model = init_model(network, mcfg, seed=seed, normalizer=norm)
    state = train(model, windows, dataclasses.replace(exp.train, seed=seed), log_path, checkpoint_path)
    x, y = raw_windows(series, windows["test"])
    reports = evaluate_horizons(predict(model, x), y, exp.horizons)
    return model, state, reports


def evaluate_model(model, network, series, split, horizons):
    """Score a trained model and the HA baseline on the test split.

    Returns ``{name: (pred, actual, reports)}``.
    """
    check_network(model, network)
    windows, _ = window_dataset(series, model.config.h, model.config.horizon, split, model.normalizer)
    x, y = raw_windows(series, windows["test"])
    out = {}
    pred = predict(model, x)
    out[model.kind] = (pred, y, evaluate_horizons(pred, y, horizons))
    ha = baseline_ha(x, model.config.horizon)
    out["ha"] = (ha, y, evaluate_horizons(ha, y, horizons))
    return out


def _csv_writer(fh):
    return csv.writer(fh, lineterminator="\n")


def write_evaluation(results, out_dir, names, primary):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = _csv_writer(fh)
        w.writerow(REPORT_HEADER)
        for name, (_, _, reps) in results.items():
            for r in reps:
                w.writerow([name, r.horizon_min, repr(r.rmse), repr(r.mape), repr(r.mad), repr(r.mase)])
    last = results[primary][2][-1]
    with open(out_dir / "per_segment.csv", "w", newline="", encoding="utf-8") as fh:
        w = _csv_writer(fh)
        w.writerow(PER_SEGMENT_HEADER)
        for name, val in zip(names, last.per_segment_rmse):
            w.writerow([name, repr(float(val))])
    for name, (pred, actual, reps) in results.items():
        with open(out_dir / f"losses_{name}.csv", "w", newline="", encoding="utf-8") as fh:
            w = _csv_writer(fh)
            w.writerow(LOSSES_HEADER)
            for r in reps:
                for i, v in enumerate(window_losses(pred, actual, r.horizon_steps)):
                    w.writerow([name, i, r.horizon_min, repr(float(v))])


def read_losses(path, horizon_min=None):
    """Return ``(model_name, horizon_min, losses)`` from a losses CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise InputError(f"{path}: no loss rows")
    horizons = sorted({int(r["horizon_min"]) for r in rows})
    h = horizons[-1] if horizon_min is None else int(horizon_min)
    if h not in horizons:
        raise InputError(f"{path}: horizon {h} min not present (have {horizons})")
    sel = sorted((int(r["window"]), float(r["mse"])) for r in rows if int(r["horizon_min"]) == h)
    return rows[0]["model"], h, np.array([v for _, v in sel])


# --------------------------------------------------------------------------
# weight inspection


def inspect_weights(model, node_ids):
    """``W_gc * W~`` restricted to ``node_ids`` for every (kind, direction, rank)."""
    if model.layer is None:
        raise InputError("checkpoint has no graph convolution layer to inspect")
    idx = []
    for node in node_ids:
        if str(node) not in model.names:
            raise InputError(f"unknown segment id {node!r}", offenders=[node])
        idx.append(model.names.index(str(node)))
    idx = np.array(idx, dtype=np.int64)
    return {key: model.layer.product(slot)[np.ix_(idx, idx)] for slot, key in enumerate(model.layer.keys)}


def write_inspection(products, node_ids, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for (kind, d, r), mat in products.items():
        path = out_dir / f"inspect_{kind.value}_{d}_k{r}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = _csv_writer(fh)
            w.writerow(["segment_id"] + [str(n) for n in node_ids])
            for node, row in zip(node_ids, mat):
                w.writerow([str(node)] + [repr(float(v)) for v in row])
        paths.append(path)
    return paths


# --------------------------------------------------------------------------
# ablation


def combo_name(kinds):
    return "+".join(k.value for k in sort_kinds(WeightKind.parse(k) for k in kinds))


def parse_combinations(text):
    """``"plain;speed_limit_ratio;plain+speed_limit_ratio"`` -> list of kind tuples."""
    combos = []
    for part in str(text).split(";"):
        part = part.strip()
        if part:
            combos.append(tuple(k.value for k in sort_kinds(WeightKind.parse(x) for x in part.split("+"))))
    if not combos:
        raise ValueError("at least one weight combination is required")
    return combos


def _trial(args):
    exp, network, series, kinds, trial, seed = args
    try:
        _, state, reports = run_once(exp, network, series, kinds, seed)
    except (MwtgcError, ValueError, FloatingPointError) as exc:
        return {"combination": combo_name(kinds), "trial": trial, "seed": seed, "error": f"{type(exc).__name__}: {exc}"}
    return {"combination": combo_name(kinds), "trial": trial, "seed": seed, "epochs": state.epoch,
            "reports": [(r.horizon_min, r.rmse, r.mape, r.mad, r.mase) for r in reports]}


def run_ablation(exp, network, series, combinations, base_seed=0, same_seed=False):
    """Run every combination ``exp.trials`` times; returns ``(trial_rows, table_rows)``."""
    jobs = []
    for kinds in combinations:
        for t in range(exp.trials):
            jobs.append((exp, network, series, kinds, t, base_seed if same_seed else base_seed + t))
    if exp.workers > 1:
        with ProcessPoolExecutor(max_workers=exp.workers) as pool:
            results = list(pool.map(_trial, jobs))
    else:
        results = [_trial(j) for j in jobs]
    return results, summarize(results, [combo_name(k) for k in combinations], exp.horizons)


def summarize(results, order, horizons):
    table = []
    for combo in order:
        runs = [r for r in results if r["combination"] == combo]
        failed = [r for r in runs if "error" in r]
        for hz in horizons:
            row = {"combination": combo, "horizon_min": hz * 5, "trials": len(runs) - len(failed), "note": ""}
            if failed:
                row["note"] = "invalid: " + "; ".join(f"trial {r['trial']}: {r['error']}" for r in failed)
                table.append(row)
                continue
            for m_i, metric in enumerate(METRICS, start=1):
                vals = [next(x for x in r["reports"] if x[0] == hz * 5)[m_i] for r in runs]
                row[f"{metric}_mean"] = statistics.fmean(vals) if len(set(vals)) > 1 else vals[0]
                row[f"{metric}_std"] = statistics.stdev(vals) if len(vals) > 1 else None
            if len(runs) < 2:
                row["note"] = "single trial: std undefined"
            table.append(row)
    longest = max(horizons) * 5
    valid = [r for r in table if r["horizon_min"] == longest and "rmse_mean" in r]
    if valid:
        best = min(valid, key=lambda r: r["rmse_mean"])["combination"]
        for r in table:
            r["best"] = int(r["combination"] == best)
    return table


def write_ablation(results, table, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "ablation_trials.csv", "w", newline="", encoding="utf-8") as fh:
        w = _csv_writer(fh)
        w.writerow(["combination", "trial", "seed", "epochs", "horizon_min"] + list(METRICS) + ["error"])
        for r in results:
            if "error" in r:
                w.writerow([r["combination"], r["trial"], r["seed"], "", "", "", "", "", "", r["error"]])
                continue
            for hz, *vals in r["reports"]:
                w.writerow([r["combination"], r["trial"], r["seed"], r["epochs"], hz] + [repr(v) for v in vals] + [""])
    cols = ["combination", "horizon_min"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")] + \
        ["trials", "best", "note"]
    with open(out_dir / "ablation_table.csv", "w", newline="", encoding="utf-8") as fh:
        w = _csv_writer(fh)
        w.writerow(cols)
        for r in table:
            w.writerow(["" if r.get(c) is None else (repr(r[c]) if isinstance(r.get(c), float) else r[c])
                        for c in cols])
    with open(out_dir / "ablation_table.md", "w", encoding="utf-8") as fh:
        fh.write(format_table(table))


def format_table(table):
    """Markdown table with ``mean ± std`` cells, one block per horizon."""
    lines = []
    for hz in sorted({r["horizon_min"] for r in table}):
        lines.append(f"### {hz} min\n")
        lines.append("| Weights | RMSE (km/h) | MAPE (%) | MAD (km/h) | MASE |")
        lines.append("|---|---|---|---|---|")
        for r in (x for x in table if x["horizon_min"] == hz):
            name = r["combination"] + (" *" if r.get("best") else "")
            if "rmse_mean" not in r:
                lines.append(f"| {name} | {r['note']} | | | |")
                continue
            cells = []
            for m in METRICS:
                mean, std = r[f"{m}_mean"], r[f"{m}_std"]
                cells.append(f"{mean:.3f}" if std is None else f"{mean:.3f} ± {std:.3f}")
            lines.append(f"| {name} | " + " | ".join(cells) + " |")
        lines.append("")
    return "\n".join(lines)
