"""Operator entry point: data prep, synthesis, training, evaluation, analysis.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Every command is deterministic given its flags and seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .analysis import (ablation_suite, attention_histogram, case_study,
                       graph_embedding_probe, histogram_rows)
from .gradcheck import PASS_THRESHOLD, run_gradcheck
from .ingest import (ContextFeatures, DataError, Dataset, Trajectory, TransitionGraph,
                     build_transition_graph, extract_context_features, load_checkins,
                     prepare_dataset)
from .params import load_checkpoint, save_checkpoint
from .synth import SynthConfig, generate_synthetic
from .train import TrainConfig, TrainingDivergence, evaluate, parse_kv_file, train

DATASET_FILE = "dataset.json"
GRAPH_FILE = "graph.json"
FEATURES_FILE = "features.npz"


def _traj_to_json(t: Trajectory) -> dict:
    return {"user_id": t.user_id, "day_key": t.day_key,
            "events": [[p, s, ts] for p, s, ts in t.events]}


def _traj_from_json(d: dict) -> Trajectory:
    return Trajectory(d["user_id"], d["day_key"], [(p, s, ts) for p, s, ts in d["events"]])


def write_artifacts(out_dir, dataset: Dataset, graph: TransitionGraph,
                    features: ContextFeatures) -> None:
    os.makedirs(out_dir, exist_ok=True)
    payload = {
        "users": dataset.users,
        "pois": dataset.pois,
        "categories": dataset.categories,
        "poi_cat": dataset.poi_cat.tolist(),
        "poi_latlon": dataset.poi_latlon.tolist(),
        "dmax": dataset.dmax,
        "bin_width_km": dataset.bin_width_km,
        "tz_hours": dataset.tz_hours,
        "stats": dataset.stats,
        "splits": {name: [_traj_to_json(t) for t in getattr(dataset, name)]
                   for name in ("train", "val", "test")},
    }
    with open(os.path.join(out_dir, DATASET_FILE), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
    graph_payload = {
        "num_nodes": graph.num_nodes,
        "self_loops": graph.self_loops,
        "edges": [[int(s), int(d), int(c), int(b)] for s, d, c, b in
                  zip(graph.edge_src, graph.edge_dst, graph.edge_count, graph.edge_bin)],
    }
    with open(os.path.join(out_dir, GRAPH_FILE), "w", encoding="utf-8") as fh:
        json.dump(graph_payload, fh, sort_keys=True)
    np.savez(os.path.join(out_dir, FEATURES_FILE), category=features.category,
             d_src=features.d_src, d_dst=features.d_dst, hourly=features.hourly)


def load_artifacts(data_dir):
    with open(os.path.join(data_dir, DATASET_FILE), encoding="utf-8") as fh:
        d = json.load(fh)
    dataset = Dataset(users=d["users"], pois=d["pois"], categories=d["categories"],
                      poi_cat=np.array(d["poi_cat"], dtype=np.intp),
                      poi_latlon=np.array(d["poi_latlon"]),
                      train=[_traj_from_json(t) for t in d["splits"]["train"]],
                      val=[_traj_from_json(t) for t in d["splits"]["val"]],
                      test=[_traj_from_json(t) for t in d["splits"]["test"]],
                      dmax=d["dmax"], bin_width_km=d["bin_width_km"],
                      tz_hours=d["tz_hours"], stats=d["stats"])
    with open(os.path.join(data_dir, GRAPH_FILE), encoding="utf-8") as fh:
        g = json.load(fh)
    edges = g["edges"]
    graph = TransitionGraph(
        num_nodes=g["num_nodes"],
        edge_src=np.array([e[0] for e in edges], dtype=np.intp),
        edge_dst=np.array([e[1] for e in edges], dtype=np.intp),
        edge_count=np.array([e[2] for e in edges], dtype=np.int64),
        edge_bin=np.array([e[3] for e in edges], dtype=np.intp),
        self_loops=g["self_loops"])
    npz = np.load(os.path.join(data_dir, FEATURES_FILE))
    features = ContextFeatures(category=npz["category"].astype(np.intp),
                               d_src=npz["d_src"], d_dst=npz["d_dst"], hourly=npz["hourly"])
    return dataset, graph, features


def _metrics_payload(report, split: str, config: TrainConfig) -> dict:
    return {
        "split": split,
        "K": [1, 5, 10],
        "HR": {str(k): report.hr[k] for k in (1, 5, 10)},
        "NDCG": {str(k): report.ndcg[k] for k in (1, 5, 10)},
        "epoch": report.best_epoch,
        "seed": config.seed,
        "config_hash": config.config_hash(),
    }


def _dump_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _require_file(path) -> None:
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")


def cmd_synth(args) -> int:
    _require_file(args.spec)
    values = parse_kv_file(args.spec)
    fields = {f.name: f.type for f in dataclasses.fields(SynthConfig)}
    kwargs = {}
    for key, raw in values.items():
        if key not in fields:
            raise DataError(f"{args.spec}: unknown synth key {key!r}")
        typ = fields[key]
        name = typ if isinstance(typ, str) else getattr(typ, "__name__", str(typ))
        kwargs[key] = int(raw) if name == "int" else float(raw) if name == "float" else raw
    cfg = SynthConfig(**kwargs)
    rows = generate_synthetic(cfg, args.seed, args.out)
    print(json.dumps({"out": args.out, "rows": rows, "seed": args.seed}, sort_keys=True))
    return 0


def cmd_prepare(args) -> int:
    _require_file(args.input)
    checkins = load_checkins(args.input, tz_hours=args.tz)
    dataset = prepare_dataset(checkins, min_poi_interactions=args.min_poi,
                              min_user_trajectories=args.min_user_traj,
                              min_traj_len=args.min_traj_len, tz_hours=args.tz,
                              bin_width_km=args.bin_km, dmax=args.dmax)
    graph = build_transition_graph(dataset.train, dataset)
    features = extract_context_features(dataset.train, dataset)
    write_artifacts(args.out, dataset, graph, features)
    print(json.dumps(dataset.stats, sort_keys=True))
    return 0


def _run_config(run_dir) -> tuple[TrainConfig, str]:
    with open(os.path.join(run_dir, "config.json"), encoding="utf-8") as fh:
        stored = json.load(fh)
    config = TrainConfig(**stored["config"])
    return config, stored["data_dir"]


def cmd_train(args) -> int:
    _require_file(args.config)
    for name in (DATASET_FILE, GRAPH_FILE, FEATURES_FILE):
        _require_file(os.path.join(args.data, name))
    config = TrainConfig.from_file(args.config)
    dataset, graph, features = load_artifacts(args.data)
    graph.self_loops = config.self_loops
    params, report = train(dataset, graph, features, config)
    os.makedirs(args.out, exist_ok=True)
    _dump_json(os.path.join(args.out, "config.json"),
               {"config": config.to_dict(), "data_dir": os.path.abspath(args.data),
                "config_hash": config.config_hash()})
    save_checkpoint(os.path.join(args.out, "best.ckpt"),
                    params, {"config_hash": config.config_hash(),
                             "best_epoch": report.best_epoch})
    metrics = _metrics_payload(report, "val", config)
    _dump_json(os.path.join(args.out, "metrics.json"), metrics)
    with open(os.path.join(args.out, "loss_curve.csv"), "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_ndcg10\n")
        for i, (loss, ndcg) in enumerate(zip(report.loss_curve, report.val_curve), start=1):
            fh.write(f"{i},{loss!r},{ndcg!r}\n")
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    _require_file(os.path.join(args.run, "config.json"))
    config, data_dir = _run_config(args.run)
    dataset, _, _ = load_artifacts(args.data or data_dir)
    params, meta = load_checkpoint(os.path.join(args.run, "best.ckpt"))
    trajectories = getattr(dataset, args.split)
    report = evaluate(params, trajectories, dataset, config)
    report.best_epoch = meta.get("best_epoch", 0)
    metrics = _metrics_payload(report, args.split, config)
    _dump_json(os.path.join(args.run, f"metrics_{args.split}.json"), metrics)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_analyze(args) -> int:
    _require_file(os.path.join(args.run, "config.json"))
    config, data_dir = _run_config(args.run)
    dataset, graph, features = load_artifacts(args.data or data_dir)
    graph.self_loops = config.self_loops
    params, _ = load_checkpoint(os.path.join(args.run, "best.ckpt"))
    if args.mode == "hist":
        path = os.path.join(args.run, "attention_hist.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("bin_low,bin_high,count,log_count,variant\n")
            for variant in ("context_adaptive", "standard_gat"):
                counts = attention_histogram(params, graph, features, config, variant)
                for lo, hi, count, log_count, var in histogram_rows(counts, variant):
                    fh.write(f"{lo},{hi},{count},{log_count!r},{var}\n")
        print(json.dumps({"out": path}, sort_keys=True))
    elif args.mode == "case":
        if args.node is None:
            raise DataError("analyze --mode case requires --node")
        records = case_study(params, graph, features, config, args.node)
        path = os.path.join(args.run, f"case_study_node{args.node}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("neighbor,category,alpha_gat,alpha_context_adaptive,suppressed\n")
            for r in records:
                fh.write(f"{r['neighbor']},{r['category']},{r['alpha_gat']!r},"
                         f"{r['alpha_context_adaptive']!r},{int(r['suppressed'])}\n")
        print(json.dumps({"out": path, "neighbors": len(records)}, sort_keys=True))
    elif args.mode == "ablate":
        split = "test" if dataset.test else "val"
        reports = ablation_suite(dataset, graph, features, config, split=split)
        path = os.path.join(args.run, "ablation.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("variant,split,hr1,hr5,hr10,ndcg1,ndcg5,ndcg10\n")
            for variant, rep in reports.items():
                fh.write(f"{variant},{split},{rep.hr[1]!r},{rep.hr[5]!r},{rep.hr[10]!r},"
                         f"{rep.ndcg[1]!r},{rep.ndcg[5]!r},{rep.ndcg[10]!r}\n")
        print(json.dumps({"out": path, "variants": list(reports)}, sort_keys=True))
    elif args.mode == "mi":
        split = "test" if dataset.test else "val"
        probe = graph_embedding_probe(params, graph, features, dataset, config, split=split)
        _dump_json(os.path.join(args.run, "mi_probe.json"), probe)
        print(json.dumps(probe, sort_keys=True))
    else:
        raise DataError(f"unknown analyze mode {args.mode!r}")
    return 0


def cmd_gradcheck(args) -> int:
    worst = run_gradcheck(dim=args.dim, pois=args.pois, cats=args.cats,
                          gat_layers=args.gat_layers,
                          transformer_layers=args.transformer_layers, seed=args.seed,
                          eps=args.eps)
    print(json.dumps({"max_relative_error": worst, "threshold": PASS_THRESHOLD,
                      "ok": worst < PASS_THRESHOLD}, sort_keys=True))
    return 0 if worst < PASS_THRESHOLD else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poirec",
                                     description="Context-adaptive graph + sequence "
                                                 "next-POI recommender")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic check-in CSV")
    p.add_argument("--spec", required=True, help="key=value synthesis spec file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("prepare", help="filter/split data and build graph artifacts")
    p.add_argument("--input", required=True, help="check-in CSV")
    p.add_argument("--out", required=True, help="artifact directory")
    p.add_argument("--min-poi", type=int, default=10)
    p.add_argument("--min-user-traj", type=int, default=5)
    p.add_argument("--min-traj-len", type=int, default=3)
    p.add_argument("--bin-km", type=float, default=1.0)
    p.add_argument("--dmax", type=int, default=20)
    p.add_argument("--tz", type=float, default=0.0, help="timezone offset in hours")
    p.set_defaults(fn=cmd_prepare)

    p = sub.add_parser("train", help="train a model on prepared artifacts")
    p.add_argument("--data", required=True, help="artifact directory from prepare")
    p.add_argument("--config", required=True, help="key=value training config file")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained run on a split")
    p.add_argument("--run", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--data", default=None, help="override the stored artifact directory")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("analyze", help="attention histograms, case studies, ablations, MI probe")
    p.add_argument("--run", required=True)
    p.add_argument("--mode", choices=("hist", "case", "ablate", "mi"), required=True)
    p.add_argument("--node", type=int, default=None)
    p.add_argument("--data", default=None)
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full objective")
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--pois", type=int, default=6)
    p.add_argument("--cats", type=int, default=3)
    p.add_argument("--gat-layers", type=int, default=2)
    p.add_argument("--transformer-layers", type=int, default=1)
    p.add_argument("--seed", type=int, default=2)
    p.add_argument("--eps", type=float, default=1e-4)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (DataError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDivergence, RuntimeError, ArithmeticError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
