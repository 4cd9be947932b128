"""Command-line harness.

Subcommands:
  iso-test    separate builtin or file-loaded graph families with an untrained network
  wl-compare  pairwise dimension-1 color refinement on a graph family
  gradcheck   end-to-end gradient verification against central differences
  train-toy   train on a synthetic node or graph task
  attn-dump   export attention matrices for one graph
  eval        evaluate a checkpoint on a dataset directory

Every subcommand writes a JSON report, CSV tables, and PNG figures into its
output directory and prints a human-readable summary.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import reports
from .graphs import GraphFormatError, batch, load_graph_json, read_graph6_file, route_histogram
from .isomorphism import (BUILTIN_SET_NAMES, builtin_graphs, gi_separate,
                          separation_model_config, wl_distinguish, wl_refine)
from .model import ModelConfig, RouteGraphNetwork, attention_dump, graph_head, node_head
from .nn import grad_check
from .tensor import NonFiniteError, ShapeError
from .training import (TrainConfig, TrainingError, batch_loss, evaluate, load_dataset,
                       make_batch, save_dataset, synth_graph_task, synth_node_task, train)

DEFAULT_SETS = ["RegN6D3", "RegN8D3", "Q4vsHoffman"]


def _parse_radius(value: str):
    if value.lower() in ("none", "unlimited", "inf"):
        return None
    return int(value)


def _load_family(args) -> list[tuple[str, list]]:
    """Resolve --set/--g6 flags into named graph lists."""
    families = []
    for name in args.set or []:
        families.append((name, builtin_graphs(name)))
    for path in args.g6 or []:
        graphs = read_graph6_file(path)
        for i, g in enumerate(graphs):
            g.name = f"{Path(path).stem}-G{i + 1}"
        families.append((Path(path).stem, graphs))
    if not families:
        families = [(name, builtin_graphs(name)) for name in DEFAULT_SETS]
    return families


# -- iso-test -----------------------------------------------------------------

def cmd_iso_test(args) -> int:
    out = reports.ensure_dir(args.out)
    config = separation_model_config(score_map=args.score_map, k=args.k,
                                     radius=_parse_radius(args.radius))
    docs = []
    csv_rows = []
    print(f"{'Graph set':<16} {'Separated / Total':<20} {'Proportion':<12} WL separated")
    for name, graphs in _load_family(args):
        report = gi_separate(graphs, config=config, seed=args.seed,
                             threshold=args.threshold, norm=args.norm, set_name=name)
        doc = report.to_doc()
        docs.append(doc)
        sep, total = doc["graphs_separated"], doc["graphs_total"]
        pct = 100.0 * sep / total if total else 0.0
        print(f"{name:<16} {f'{sep} / {total}':<20} {f'{pct:.0f}%':<12} "
              f"{doc['pairs_wl_separated']} / {doc['pairs_total']} pairs")
        for p in doc["pairs"]:
            csv_rows.append([name, doc["graphs"][p["i"]], doc["graphs"][p["j"]],
                             f"{p['gap']:.6e}", int(p["separated"]), int(p["wl_separated"])])
        reports.separation_figure(doc, out / f"separation_{name}.png")
    reports.write_json(out / "report.json", {
        "command": "iso-test", "seed": args.seed, "threshold": args.threshold,
        "score_map": args.score_map, "route_histogram_k": args.k,
        "radius": _parse_radius(args.radius), "norm": args.norm, "sets": docs,
    })
    reports.write_csv(out / "pairs.csv",
                      ["set", "graph_i", "graph_j", "gap", "separated", "wl_separated"],
                      csv_rows)
    print(f"report written to {out}")
    return 0


# -- wl-compare ----------------------------------------------------------------

def cmd_wl_compare(args) -> int:
    out = reports.ensure_dir(args.out)
    docs = []
    csv_rows = []
    for name, graphs in _load_family(args):
        colorings = [wl_refine(g) for g in graphs]
        pairs = []
        for i in range(len(graphs)):
            for j in range(i + 1, len(graphs)):
                separated = wl_distinguish(graphs[i], graphs[j])
                pairs.append({"i": i, "j": j, "separated": separated})
                csv_rows.append([name, graphs[i].name, graphs[j].name, int(separated)])
        n_sep = sum(p["separated"] for p in pairs)
        print(f"{name}: color refinement separates {n_sep} / {len(pairs)} pairs")
        doc = {
            "set": name,
            "graphs": [g.name for g in graphs],
            "stable_class_counts": [c.histories[-1] for c in colorings],
            "iterations": [c.iterations for c in colorings],
            "pairs": pairs,
        }
        docs.append(doc)
        reports.wl_figure(name, doc["graphs"], doc["stable_class_counts"],
                          out / f"wl_{name}.png")
    reports.write_json(out / "report.json", {"command": "wl-compare", "sets": docs})
    reports.write_csv(out / "pairs.csv", ["set", "graph_i", "graph_j", "separated"], csv_rows)
    print(f"report written to {out}")
    return 0


# -- gradcheck -------------------------------------------------------------------

def gradcheck_cases(seed: int) -> list[dict]:
    """End-to-end checks: 2-layer model, both heads, both score maps."""
    cases = []
    for score_map in ("softmax", "sigmoid"):
        for head, task in (("node_regression", "node"), ("graph_classification", "graph")):
            cfg = ModelConfig(n_layers=2, d_hidden=8, n_heads=2, d_k=2, radius=2,
                              score_map=score_map, f_route=3, f_nodes=1, d_ffn=8,
                              head=head, n_tasks=1)
            model = RouteGraphNetwork(cfg, seed=seed)
            maker = synth_node_task if task == "node" else synth_graph_task
            data = maker(2, seed=seed + 1, n_range=(4, 5), k_hist=3)
            labeled = make_batch(data.items, task, pool=True)
            err = grad_check(lambda: batch_loss(model, labeled, task), model.parameters())
            cases.append({"name": f"{score_map}-{task}", "max_rel_error": err})
    return cases


def cmd_gradcheck(args) -> int:
    out = reports.ensure_dir(args.out)
    cases = gradcheck_cases(args.seed)
    worst = max(c["max_rel_error"] for c in cases)
    for c in cases:
        status = "ok" if c["max_rel_error"] < args.tolerance else "FAIL"
        print(f"{c['name']:<18} max rel error {c['max_rel_error']:.3e}  [{status}]")
    print(f"overall max rel error {worst:.3e} (tolerance {args.tolerance:g})")
    reports.write_json(out / "report.json", {
        "command": "gradcheck", "seed": args.seed, "tolerance": args.tolerance,
        "cases": cases, "max_rel_error": worst, "passed": bool(worst < args.tolerance),
    })
    reports.write_csv(out / "cases.csv", ["case", "max_rel_error"],
                      [[c["name"], f"{c['max_rel_error']:.6e}"] for c in cases])
    reports.gradcheck_figure(cases, args.tolerance, out / "gradcheck.png")
    return 0 if worst < args.tolerance else 1


# -- train-toy --------------------------------------------------------------------

def cmd_train_toy(args) -> int:
    out = reports.ensure_dir(args.out)
    if args.task == "node":
        train_set = synth_node_task(args.n_train, seed=args.seed, k_hist=args.k)
        val_set = synth_node_task(args.n_val, seed=args.seed + 7919, k_hist=args.k)
        head, metric = "node_regression", "mae"
        targets = np.concatenate([it.targets.ravel() for it in train_set.items])
        output_shift, output_scale = float(targets.mean()), float(targets.std())
    else:
        train_set = synth_graph_task(args.n_train, seed=args.seed, k_hist=args.k)
        val_set = synth_graph_task(args.n_val, seed=args.seed + 7919, k_hist=args.k)
        head, metric = "graph_classification", "auc"
        output_shift, output_scale = 0.0, 1.0

    radius = _parse_radius(args.radius)
    if args.zero_routes:
        train_set = train_set.zero_routes()
        val_set = val_set.zero_routes()
        radius = None

    cfg = ModelConfig(n_layers=args.layers, d_hidden=args.hidden, n_heads=args.heads,
                      d_k=args.dk, radius=radius, score_map=args.score_map,
                      f_route=args.k, f_nodes=1, dropout=args.dropout, head=head,
                      n_tasks=1, output_scale=output_scale, output_shift=output_shift)
    model = RouteGraphNetwork(cfg, seed=args.seed)
    tc = TrainConfig(epochs=args.epochs, learning_rate=args.lr,
                     batch_size=args.batch_size, metric=metric, seed=args.seed)
    result = train(model, train_set, val_set, tc)

    checkpoint = out / "checkpoint.json"
    model.save(checkpoint)
    if args.export_data:
        save_dataset(Path(args.export_data) / "train", train_set)
        save_dataset(Path(args.export_data) / "val", val_set)

    best = result.history[result.best_epoch - 1]
    print(f"best epoch {result.best_epoch}: "
          + ", ".join(f"{k}={v:.4f}" for k, v in best.items() if isinstance(v, float)))
    reports.write_json(out / "report.json", {
        "command": "train-toy", "task": args.task, "seed": args.seed,
        "zero_routes": bool(args.zero_routes),
        "model_config": json.loads(json.dumps(cfg.__dict__, default=list)),
        "train_config": {"epochs": tc.epochs, "learning_rate": tc.learning_rate,
                         "decay_epochs": list(tc.decay_epochs),
                         "decay_factor": tc.decay_factor,
                         "batch_size": tc.batch_size, "metric": tc.metric},
        "history": result.history,
        "best_epoch": result.best_epoch,
        "best_metric": result.best_metric,
        "checkpoint": checkpoint.name,
    })
    keys = sorted({k for h in result.history for k in h})
    reports.write_csv(out / "history.csv", keys,
                      [[h.get(k, "") for k in keys] for h in result.history])
    reports.training_figure(result.history, out / "curves.png")
    print(f"report written to {out}")
    return 0


# -- attn-dump ---------------------------------------------------------------------

def cmd_attn_dump(args) -> int:
    out = reports.ensure_dir(args.out)
    if args.graph_json:
        doc = json.loads(Path(args.graph_json).read_text())
        graphs = [load_graph_json(doc)]
        set_name = Path(args.graph_json).stem
    else:
        families = _load_family(args)
        set_name, graphs = families[0]
    if not 0 <= args.index < len(graphs):
        raise ValueError(f"graph index {args.index} out of range for {set_name} "
                         f"({len(graphs)} graphs)")
    g = graphs[args.index]

    if args.checkpoint:
        model = RouteGraphNetwork.load(args.checkpoint)
    else:
        cfg = separation_model_config(score_map=args.score_map, k=args.k,
                                      radius=_parse_radius(args.radius))
        model = RouteGraphNetwork(cfg, seed=args.seed)
    if g.node_features is None or g.node_features.shape[1] != model.config.f_nodes:
        g.node_features = np.ones((g.n, model.config.f_nodes))
    batched = batch([g], [route_histogram(g, model.config.f_route)],
                    pool=model.config.pool)
    records = attention_dump(model, batched)
    print(f"{set_name}[{args.index}] ({g.name}): {len(records)} attention matrices, "
          f"score map {model.config.score_map}")

    reports.write_json(out / "attention.json", {
        "command": "attn-dump", "set": set_name, "index": args.index,
        "graph": g.name, "seed": args.seed, "score_map": model.config.score_map,
        "records": records,
    })
    rows = []
    for r in records:
        m = np.asarray(r["matrix"])
        for i in range(m.shape[0]):
            for j in range(m.shape[1]):
                rows.append([r["layer"], r["head"], i, j, f"{m[i, j]:.12e}"])
    reports.write_csv(out / "attention.csv", ["layer", "head", "row", "col", "value"], rows)
    reports.attention_figure(records, out / "attention.png")
    print(f"report written to {out}")
    return 0


# -- eval ---------------------------------------------------------------------------

def cmd_eval(args) -> int:
    out = reports.ensure_dir(args.out)
    model = RouteGraphNetwork.load(args.checkpoint)
    dataset = load_dataset(args.data)
    expected = "node" if model.config.head == "node_regression" else "graph"
    if dataset.task != expected:
        raise ValueError(f"checkpoint expects a {expected} task, dataset is {dataset.task}")
    metrics = evaluate(model, dataset, batch_size=args.batch_size)
    print("  ".join(f"{k}={v:.4f}" for k, v in metrics.items() if v is not None))

    rows = []
    preds, targets = [], []
    for start in range(0, len(dataset), args.batch_size):
        items = dataset.items[start:start + args.batch_size]
        labeled = make_batch(items, dataset.task, model.config.pool)
        h = model.forward(labeled.graphs, training=False)
        if dataset.task == "node":
            output = node_head(h, model)
            for i, it in enumerate(items):
                for v in range(it.graph.n):
                    for t in range(dataset.n_tasks):
                        if it.mask[v, t]:
                            rows.append([it.graph.name, v, t,
                                         f"{output.data[i, v, t]:.6f}",
                                         f"{it.targets[v, t]:.6f}"])
                            preds.append(output.data[i, v, t])
                            targets.append(it.targets[v, t])
        else:
            output = graph_head(h, labeled.graphs, model)
            for i, it in enumerate(items):
                for t in range(dataset.n_tasks):
                    if it.mask[t]:
                        rows.append([it.graph.name, "", t,
                                     f"{output.data[i, t]:.6f}", f"{it.targets[t]:.6f}"])
                        preds.append(output.data[i, t])
                        targets.append(it.targets[t])
    reports.write_json(out / "report.json", {
        "command": "eval", "checkpoint": str(args.checkpoint), "data": str(args.data),
        "task": dataset.task, "metrics": metrics,
    })
    reports.write_csv(out / "predictions.csv",
                      ["graph", "node", "task", "prediction", "target"], rows)
    pred_arr, targ_arr = np.asarray(preds), np.asarray(targets)
    if dataset.task == "node":
        reports.eval_node_figure(pred_arr, targ_arr, out / "eval.png")
    else:
        reports.eval_graph_figure(pred_arr, targ_arr, out / "eval.png")
    print(f"report written to {out}")
    return 0


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="routegnn",
        description="Route-attention graph networks: separation lab, training, inspection.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_family_flags(p):
        p.add_argument("--set", action="append",
                       help=f"builtin graph set, repeatable (choices: {', '.join(BUILTIN_SET_NAMES)})")
        p.add_argument("--g6", action="append", help="graph6 file with one graph per line")

    p = sub.add_parser("iso-test", help="untrained-network graph separation")
    add_family_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--score-map", choices=("softmax", "sigmoid"), default="sigmoid")
    p.add_argument("--k", type=int, default=4, help="route histogram length")
    p.add_argument("--radius", default="none", help="attention ball radius or 'none'")
    p.add_argument("--norm", choices=("maxabs", "l2"), default="maxabs")
    p.add_argument("--out", default="runs/iso-test")
    p.set_defaults(func=cmd_iso_test)

    p = sub.add_parser("wl-compare", help="pairwise color-refinement comparison")
    add_family_flags(p)
    p.add_argument("--out", default="runs/wl-compare")
    p.set_defaults(func=cmd_wl_compare)

    p = sub.add_parser("gradcheck", help="verify gradients against central differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--out", default="runs/gradcheck")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train-toy", help="train on a synthetic task")
    p.add_argument("task", choices=("node", "graph"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--n-train", type=int, default=500)
    p.add_argument("--n-val", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--hidden", type=int, default=48)
    p.add_argument("--heads", type=int, default=6)
    p.add_argument("--dk", type=int, default=8)
    p.add_argument("--radius", default="2")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--score-map", choices=("softmax", "sigmoid"), default="softmax")
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--zero-routes", action="store_true",
                   help="ablation: zero route features and lift the locality masks")
    p.add_argument("--export-data", help="also write the datasets to this directory")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("attn-dump", help="export attention matrices for one graph")
    add_family_flags(p)
    p.add_argument("--graph-json", help="JSON graph document")
    p.add_argument("--index", type=int, default=0, help="graph index within the set")
    p.add_argument("--checkpoint", help="model checkpoint (default: untrained)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--score-map", choices=("softmax", "sigmoid"), default="sigmoid")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--radius", default="none")
    p.add_argument("--out", default="runs/attn-dump")
    p.set_defaults(func=cmd_attn_dump)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--out", default="runs/eval")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "out", None) is None and args.command == "train-toy":
        args.out = f"runs/train-toy-{args.task}"
    try:
        return args.func(args)
    except (GraphFormatError, TrainingError, NonFiniteError, ShapeError,
            ValueError, KeyError, OSError) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
