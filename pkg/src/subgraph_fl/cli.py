"""Command-line entry point: gen, partition, run, report, gradcheck."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from subgraph_fl.config import RunConfig, expand_sweep, parse_config, replace
from subgraph_fl.errors import ConfigError, NumericError, ParameterError
from subgraph_fl.graph import load_graph, save_graph

log = logging.getLogger("subgraph_fl")

GRADCHECK_TOLERANCE = 1e-4


def _read_doc(path: str | None) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text()
    return yaml.safe_load(text) or {}


def _with_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    changes = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **changes) if changes else cfg


def cmd_gen(args) -> int:
    from subgraph_fl.fl.experiment import build_graph

    cfg = parse_config(_read_doc(args.config))
    cfg = _with_overrides(cfg, {"graph.kind": args.kind, "graph.seed": args.seed,
                                "graph.feat_dim": args.feat_dim, "graph.source": "synthetic"})
    g = build_graph(cfg)
    save_graph(g, args.output)
    print(f"wrote {args.output}: {g.num_nodes} nodes, {g.num_edges} edges, {g.num_classes} classes")
    return 0


def cmd_partition(args) -> int:
    from subgraph_fl.fl.experiment import build_partition
    from subgraph_fl.io import write_matrix_csv
    from subgraph_fl.partition import clustering_coefficient, heterogeneity, missing_edges, save_partition

    g = load_graph(args.graph)
    cfg = parse_config(_read_doc(args.config))
    cfg = _with_overrides(cfg, {"partition.mode": args.mode, "partition.k": args.k, "partition.seed": args.seed})
    part = build_partition(cfg, g)
    out = Path(args.output)
    save_partition(part, out)
    miss = missing_edges(g, part)
    write_matrix_csv(out.with_name(out.stem + ".missing_edges.csv"), miss)
    subs = part.subgraphs(g)
    sidecar = {
        "mode": part.mode,
        "num_clients": part.k,
        "sizes": list(part.sizes()),
        "edges_kept": [int(s.num_edges) for s in subs],
        "missing_edges_total": int(np.triu(miss, 1).sum()),
        "heterogeneity": heterogeneity(part, g.labels, g.num_classes) if part.k >= 2 else None,
        "clustering": [clustering_coefficient(s) for s in subs],
    }
    out.with_name(out.stem + ".metrics.json").write_text(json.dumps(sidecar, indent=2))
    print(f"wrote {out}: {part.k} clients, {sidecar['missing_edges_total']} missing edges")
    return 0


def cmd_run(args) -> int:
    from subgraph_fl.fl.experiment import run_experiment

    doc = _read_doc(args.config)
    if "config" in doc and "software_version" in doc:
        doc = doc["config"]
    if args.output_dir:
        doc["output_dir"] = args.output_dir
    runs = expand_sweep(doc)
    for suffix, cfg in runs:
        res = run_experiment(cfg, workers=args.workers)
        last = [r for r in res.records if r.round == cfg.training.rounds]
        summary = f"mean test {np.nanmean([r.test_acc for r in last]):.4f}" if last else "no rounds"
        print(f"{cfg.output_dir}: {cfg.strategy.kind}, {cfg.training.rounds} rounds, {summary}")
    return 0


def cmd_report(args) -> int:
    from subgraph_fl.analysis import write_report

    out = write_report(args.run_dir, args.out)
    print(f"wrote report to {out}")
    return 0


def cmd_gradcheck(args) -> int:
    from subgraph_fl.gradcheck import check_instance, run_suite, tiny_fixture

    g = tiny_fixture()
    worst = max(check_instance(g, 4, task, args.seed).max_rel_error for task in ("node_clf", "link_pred"))
    print(f"tiny fixture: max relative error {worst:.3e}")
    if args.instances:
        res = run_suite(args.instances, args.seed)
        print(f"random suite ({args.instances} instances, {res.num_components} components): "
              f"max relative error {res.max_rel_error:.3e}")
        worst = max(worst, res.max_rel_error)
    ok = worst < GRADCHECK_TOLERANCE
    print(f"max relative error {worst:.3e} ({'ok' if ok else 'FAILED'}, tolerance {GRADCHECK_TOLERANCE:g})")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subgraph-fl", description="Subgraph federated learning experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic graph file")
    g.add_argument("-c", "--config")
    g.add_argument("--kind", choices=["sbm", "er", "community"])
    g.add_argument("--seed", type=int)
    g.add_argument("--feat-dim", type=int)
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=cmd_gen)

    pt = sub.add_parser("partition", help="partition a graph file into client subgraphs")
    pt.add_argument("graph")
    pt.add_argument("-c", "--config")
    pt.add_argument("--mode")
    pt.add_argument("--k", type=int)
    pt.add_argument("--seed", type=int)
    pt.add_argument("-o", "--output", required=True)
    pt.set_defaults(func=cmd_partition)

    r = sub.add_parser("run", help="run an experiment (config file or a run manifest)")
    r.add_argument("config")
    r.add_argument("--workers", type=int)
    r.add_argument("--output-dir")
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("report", help="render diagnostics for a finished run")
    rp.add_argument("run_dir")
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_report)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient check")
    gc.add_argument("--instances", type=int, default=20, help="random instances besides the tiny fixture (0 to skip)")
    gc.add_argument("--seed", type=int, default=0)
    gc.set_defaults(func=cmd_gradcheck)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ParameterError, NumericError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, IsADirectoryError, PermissionError, json.JSONDecodeError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
