"""Command-line entry point: ``mwtgc <subcommand> ...``."""
import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .data import SynthSpec, generate_synthetic, save_speeds
from .errors import MwtgcError
from .evaluation import dm_test
from .experiment import (DM_HEADER, ExperimentConfig, evaluate_model, inspect_weights, load_data,
                         parse_combinations, read_losses, resolved_config, run_ablation, run_once,
                         write_ablation, write_evaluation, write_inspection)
from .graph import adjacency_ranks, load_topology, save_topology, write_triplets
from .model import load_checkpoint, save_checkpoint
from .weights import WeightConfig, build_weight_set, matrix_filename

log = logging.getLogger("mwtgc")

OUTPUT_ROOT_ENV = "MWTGC_OUTPUT_ROOT"


def out_path(path):
    path = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    path.mkdir(parents=True, exist_ok=True)
    return path


def experiment_from_args(args):
    exp = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    changes = {}
    for name in ("topology", "speeds", "trials", "workers"):
        val = getattr(args, name, None)
        if val is not None:
            changes[name] = val
    if getattr(args, "synthetic", False) and exp.synthetic is None:
        changes["synthetic"] = SynthSpec()
    model_changes = {}
    if getattr(args, "kinds", None):
        model_changes["kinds"] = tuple(args.kinds.split(","))
    if getattr(args, "k", None) is not None:
        model_changes["max_rank"] = args.k
    train_changes = {}
    if getattr(args, "max_epochs", None) is not None:
        train_changes["max_epochs"] = args.max_epochs
    if getattr(args, "seed", None) is not None:
        train_changes["seed"] = args.seed
    if model_changes:
        from dataclasses import replace
        changes["model"] = replace(exp.model, **model_changes)
    if train_changes:
        from dataclasses import replace
        changes["train"] = replace(exp.train, **train_changes)
    return exp.replace(**changes) if changes else exp


# --------------------------------------------------------------------------
# subcommands


def cmd_build_graph(args):
    net = load_topology(args.topology)
    out = out_path(args.out)
    for k, adj in adjacency_ranks(net, args.k).items():
        write_triplets(adj.outflow, out / f"adjacency_outflow_k{k}.csv")
        write_triplets(adj.inflow, out / f"adjacency_inflow_k{k}.csv")
    print(f"{net.n} segments, {sum(not c.is_u_turn for c in net.connections)} edges -> {out}")


def cmd_gen_weights(args):
    net = load_topology(args.topology)
    cfg = WeightConfig(sigma=args.sigma, angle_floor=args.angle_floor, category_norm=args.category_norm,
                       angle_convention=args.angle_convention)
    ws = build_weight_set(net, args.k, args.kinds.split(","), cfg)
    out = out_path(args.out)
    files = []
    for key in ws.keys:
        name = matrix_filename(*key)
        write_triplets(ws[key], out / name)
        files.append(name)
    manifest = {"c": ws.c, "k": ws.max_rank, "kinds": [k.value for k in ws.kinds],
                "config": {"sigma": cfg.sigma, "angle_floor": cfg.angle_floor,
                           "category_norm": cfg.resolve_norm(net), "angle_convention": cfg.angle_convention},
                "segment_ids": list(net.names), "files": files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(files)} matrices (c={ws.c}, k={ws.max_rank}) -> {out}")


def cmd_synth_data(args):
    spec = SynthSpec(n_segments=args.n_segments, days=args.days, topology=args.topology_kind,
                     seed=args.seed if args.seed is not None else 42)
    net, series = generate_synthetic(spec)
    out = out_path(args.out)
    save_topology(net, out)
    save_speeds(series, out / "speeds.csv")
    print(f"{net.n} segments x {series.t} steps -> {out}")


def cmd_train(args):
    exp = experiment_from_args(args)
    network, series = load_data(exp)
    if args.dump_config:
        print(json.dumps(resolved_config(exp, network), indent=2, sort_keys=True))
        return
    out = out_path(args.out or exp.output_dir)
    graph = args.model == "mwtgc"
    model, state, reports = run_once(exp, network, series, seed=exp.train.seed, graph_conv=graph,
                                     log_path=out / "train_log.csv")
    save_checkpoint(model, out / "checkpoint.npz",
                    extra={"best_epoch": state.best_epoch, "epochs": state.epoch,
                           "split": exp.to_dict()["split"]})
    (out / "config.json").write_text(json.dumps(resolved_config(exp, network), indent=2, sort_keys=True) + "\n")
    if args.plots:
        from .plots import loss_curve
        loss_curve(state.history, out / "loss.svg")
    print(f"{model.kind}: {state.epoch} epochs, best {state.best_epoch}, "
          f"val RMSE {state.best_val_rmse:.4f} km/h -> {out / 'checkpoint.npz'}")
    for r in reports:
        print(f"  {r.horizon_min:>3} min  RMSE {r.rmse:.4f}  MAPE {r.mape:.3f}%  MAD {r.mad:.4f}  MASE {r.mase:.4f}")


def cmd_evaluate(args):
    exp = experiment_from_args(args)
    model = load_checkpoint(args.checkpoint)
    network, series = load_data(exp)
    results = evaluate_model(model, network, series, exp.split, exp.horizons)
    out = out_path(args.out or exp.output_dir)
    write_evaluation(results, out, network.names, model.kind)
    if args.plots:
        from .plots import horizon_bars
        horizon_bars({k: v[2] for k, v in results.items()}, out / "rmse_by_horizon.svg")
    for name, (_, _, reps) in results.items():
        print(name + "  " + "  ".join(f"{r.horizon_min}min RMSE {r.rmse:.4f}" for r in reps))


def cmd_dm_test(args):
    name_a, h, a = read_losses(args.a, args.horizon)
    name_b, _, b = read_losses(args.b, h)
    res = dm_test(a, b, args.lag)
    out = out_path(args.out)
    with open(out / "dm.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DM_HEADER)
        w.writerow([name_a, name_b, repr(res.statistic), repr(res.p_value)])
    print(f"{name_a} vs {name_b} at {h} min: DM={res.statistic:.4f} p={res.p_value:.4g} (lag {res.lag})")


def cmd_ablate(args):
    exp = experiment_from_args(args)
    network, series = load_data(exp)
    combos = parse_combinations(args.combinations)
    if exp.trials < 2:
        log.warning("trials=%d: std column will be empty", exp.trials)
    seed = args.seed if args.seed is not None else exp.train.seed
    results, table = run_ablation(exp, network, series, combos, seed, args.same_seed)
    out = out_path(args.out or exp.output_dir)
    write_ablation(results, table, out)
    print((out / "ablation_table.md").read_text())


def cmd_inspect_weights(args):
    model = load_checkpoint(args.checkpoint)
    nodes = args.nodes.split(",") if args.nodes else list(model.names)
    paths = write_inspection(inspect_weights(model, nodes), nodes, out_path(args.out))
    print(f"wrote {len(paths)} matrices for {len(nodes)} segments")


# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="mwtgc", description="Multi-weight traffic graph convolution forecaster")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--out", help=f"output directory (relative paths go under ${OUTPUT_ROOT_ENV})")
        if data:
            sp.add_argument("--topology", help="directory with segments.csv and connections.csv")
            sp.add_argument("--speeds", help="speed CSV")
            sp.add_argument("--synthetic", action="store_true", help="use the default synthetic dataset")
            sp.add_argument("--kinds", help="comma-separated weight kinds")
            sp.add_argument("--k", type=int, help="maximum adjacency rank")
            sp.add_argument("--max-epochs", type=int)

    sp = sub.add_parser("build-graph", help="write inflow/outflow adjacency matrices per rank")
    sp.add_argument("--topology", required=True)
    sp.add_argument("--k", type=int, default=3)
    sp.add_argument("--out", default="graph")
    sp.set_defaults(func=cmd_build_graph)

    sp = sub.add_parser("gen-weights", help="write clipped weighted adjacency matrices")
    sp.add_argument("--topology", required=True)
    sp.add_argument("--kinds", default="plain,distance,speed_limit_ratio,speed_limit_category,"
                                       "speed_limit_change,angle")
    sp.add_argument("--k", type=int, default=3)
    sp.add_argument("--sigma", type=float, default=1000.0)
    sp.add_argument("--angle-floor", type=float, default=1e-6)
    sp.add_argument("--category-norm", type=float)
    sp.add_argument("--angle-convention", choices=["interior", "direct"], default="interior")
    sp.add_argument("--out", default="weights")
    sp.set_defaults(func=cmd_gen_weights)

    sp = sub.add_parser("synth-data", help="generate a synthetic network and speed CSV")
    sp.add_argument("--n-segments", type=int, default=30)
    sp.add_argument("--days", type=int, default=30)
    sp.add_argument("--topology-kind", choices=["grid", "ring"], default="grid")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", default="synthetic")
    sp.set_defaults(func=cmd_synth_data)

    sp = sub.add_parser("train", help="train a model and write checkpoint + log")
    common(sp)
    sp.add_argument("--model", choices=["mwtgc", "seq2seq"], default="mwtgc")
    sp.add_argument("--dump-config", action="store_true", help="print the resolved configuration and exit")
    sp.add_argument("--plots", action="store_true", help="write loss.svg")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="score a checkpoint and the HA baseline on the test split")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--plots", action="store_true", help="write rmse_by_horizon.svg")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("dm-test", help="Diebold-Mariano test between two losses files")
    sp.add_argument("--a", required=True)
    sp.add_argument("--b", required=True)
    sp.add_argument("--horizon", type=int, help="horizon in minutes (default: longest in file)")
    sp.add_argument("--lag", type=int, default=11)
    sp.add_argument("--out", default="dm")
    sp.set_defaults(func=cmd_dm_test)

    sp = sub.add_parser("ablate", help="repeat training over weight combinations")
    common(sp)
    sp.add_argument("--combinations", default="plain;speed_limit_ratio;plain+speed_limit_ratio",
                    help="';'-separated combinations of '+'-joined kinds")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--same-seed", action="store_true", help="use the base seed for every trial")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("inspect-weights", help="export W_gc * W~ for a node subset")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--nodes", help="comma-separated segment ids (default: all)")
    sp.add_argument("--out", default="inspect")
    sp.set_defaults(func=cmd_inspect_weights)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (MwtgcError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
