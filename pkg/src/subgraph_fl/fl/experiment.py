"""End-to-end experiments: world construction, round loop, oracle baseline, run directory."""

from __future__ import annotations

import csv
import json
import logging
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import subgraph_fl
from subgraph_fl.config import RunConfig, derive_seed, serialize
from subgraph_fl.errors import ConfigError
from subgraph_fl.graph import (
    Graph,
    generate_er,
    generate_sbm,
    generate_single_node,
    load_graph,
    normalized_adjacency,
)
from subgraph_fl.io import save_checkpoint, write_matrix_csv, write_pgm
from subgraph_fl.nn import AdamState, Params, adam_step, compute_loss, forward, init_params, loss_and_grads
from subgraph_fl.partition import (
    Partition,
    make_imbalanced,
    make_overlapping,
    partition_balanced,
    partition_blocks,
    partition_louvain,
    partition_random,
    save_partition,
)
from subgraph_fl.fl.client import ClientState, LocalData, Strategy, new_client
from subgraph_fl.fl.server import CSV_COLUMNS, RoundRecord, ServerState, run_round
from subgraph_fl.fl.similarity import ProbeInput

log = logging.getLogger(__name__)


def build_graph(cfg: RunConfig) -> Graph:
    g = cfg.graph
    if g.source == "file":
        return load_graph(g.path)
    seed = cfg.section_seed("graph")
    if g.kind == "sbm":
        return generate_sbm(g.num_blocks, g.nodes_per_block, g.p_in, g.p_out, g.feat_dim, seed,
                            feature_signal=g.feature_signal)
    if g.kind == "er":
        return generate_er(g.num_nodes, g.p, g.feat_dim, seed)
    sizes = [c * g.subgraph_size for c in g.community_sizes]
    return generate_sbm(len(sizes), 0, g.p_in, g.p_out, g.feat_dim, seed, block_sizes=sizes,
                        feature_signal=g.feature_signal)


def build_partition(cfg: RunConfig, graph: Graph) -> Partition:
    p = cfg.partition
    seed = cfg.section_seed("partition")
    if p.mode == "disjoint":
        return partition_balanced(graph, p.k, seed)
    if p.mode == "louvain":
        return partition_louvain(graph, p.k, seed)
    if p.mode == "random":
        return partition_random(graph, p.k, seed)
    if p.mode == "overlapping":
        return make_overlapping(graph, p.base_parts, p.samples, p.node_frac, seed)
    if p.mode == "imbalanced":
        return make_imbalanced(graph, p.fine_parts, p.group_sizes, seed)
    return partition_blocks(graph, p.block_size)


def build_probe(cfg: RunConfig, feat_dim: int, mean_feature: np.ndarray | None = None) -> Graph:
    """Random input graph shared by all clients for functional embeddings.

    The ``feature`` variant keeps the SBM structure but fills every node
    with the client's own mean feature vector.
    """
    pr = cfg.probe
    seed = cfg.section_seed("probe")
    if pr.variant == "er":
        return generate_er(pr.er_nodes, pr.er_p, feat_dim, seed)
    if pr.variant == "one":
        return generate_single_node(feat_dim, seed)
    g = generate_sbm(pr.num_blocks, pr.nodes_per_block, pr.p_in, pr.p_out, feat_dim, seed)
    if pr.variant == "feature":
        if mean_feature is None:
            raise ConfigError("feature probe needs the client's mean feature vector")
        g = Graph(g.num_nodes, g.edges, np.tile(mean_feature, (g.num_nodes, 1)), g.labels, g.num_classes)
    return g


@dataclass
class World:
    cfg: RunConfig
    graph: Graph
    partition: Partition
    subgraphs: list[Graph]
    data: list[LocalData]
    init: Params
    probes: list[ProbeInput | None]


def build_world(cfg: RunConfig) -> World:
    graph = build_graph(cfg)
    partition = build_partition(cfg, graph)
    subgraphs = partition.subgraphs(graph)
    data = [LocalData.build(sg, cfg, i) for i, sg in enumerate(subgraphs)]
    init = init_params(graph.feat_dim, cfg.model.hidden, graph.num_classes, derive_seed(cfg.seed, "init"))
    probes: list[ProbeInput | None] = [None] * len(subgraphs)
    if cfg.strategy.kind == "fedpub" and cfg.strategy.similarity_source == "functional":
        if cfg.probe.variant == "feature":
            probes = [ProbeInput(build_probe(cfg, graph.feat_dim, sg.features.mean(axis=0))) for sg in subgraphs]
        else:
            shared = ProbeInput(build_probe(cfg, graph.feat_dim))
            probes = [shared] * len(subgraphs)
    return World(cfg, graph, partition, subgraphs, data, init, probes)


@dataclass
class RunResult:
    run_dir: Path
    world: World
    records: list[RoundRecord] = field(default_factory=list)
    server: ServerState | None = None
    clients: list[ClientState] = field(default_factory=list)
    similarity: dict[int, np.ndarray] = field(default_factory=dict)
    dispatched: dict[int, list[Params | None]] = field(default_factory=dict)


def _manifest(cfg: RunConfig, world: World) -> dict:
    return {
        "software_version": subgraph_fl.__version__,
        "started_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": serialize(cfg),
        "seeds": {
            "run": cfg.seed,
            "graph": cfg.section_seed("graph"),
            "partition": cfg.section_seed("partition"),
            "probe": cfg.section_seed("probe"),
            "init": derive_seed(cfg.seed, "init"),
            "splits": [derive_seed(cfg.seed, "split", i) for i in range(world.partition.k)],
        },
        "num_clients": world.partition.k,
        "num_params": int(sum(v.size for v in world.init.values())),
    }


def _write_similarity(run_dir: Path, round_idx: int, sim: np.ndarray) -> None:
    d = run_dir / "similarity"
    d.mkdir(exist_ok=True)
    write_matrix_csv(d / f"similarity_round_{round_idx}.csv", sim)
    write_pgm(d / f"similarity_round_{round_idx}.pgm", sim)


def run_oracle(world: World, cfg: RunConfig) -> tuple[list[RoundRecord], Params]:
    """Train one model on the whole global graph and score it on every client's splits."""
    if cfg.task != "node_clf":
        raise ConfigError("the oracle baseline supports node classification only")
    g = world.graph
    adj = normalized_adjacency(g)
    adj = adj.toarray() if g.num_nodes <= 4000 or adj.nnz > 0.02 * g.num_nodes ** 2 else adj
    to_global = [sg.node_ids for sg in world.subgraphs]
    train_ids = np.unique(np.concatenate([to_global[i][d.split.train_ids] for i, d in enumerate(world.data)]))
    params = {k: v.copy() for k, v in world.init.items()}
    adam = AdamState()
    steps = cfg.training.oracle_epochs if cfg.training.oracle_epochs is not None else cfg.training.local_epochs
    lr = cfg.training.lr
    records = []
    for r in range(1, cfg.training.rounds + 1):
        for _ in range(steps):
            _, grads, _ = loss_and_grads(params, None, None, adj, g.features, g.labels, train_ids, 0.0, 0.0)
            params, adam = adam_step(adam, params, grads, lr)
        loss = compute_loss(params, None, None, adj, g.features, g.labels, train_ids, 0.0, 0.0)
        correct = np.argmax(forward(params, None, adj, g.features)[1], axis=1) == g.labels
        for i, d in enumerate(world.data):
            acc = {}
            for name, ids in (("train", d.split.train_ids), ("val", d.split.val_ids), ("test", d.split.test_ids)):
                acc[name] = float(correct[to_global[i][ids]].mean()) if len(ids) else float("nan")
            records.append(RoundRecord(r, i, "oracle", loss.total, loss.task_loss, 0.0, 0.0,
                                       acc["train"], acc["val"], acc["test"], 0.0, 0, 0))
    return records, params


def run_experiment(cfg: RunConfig, *, workers: int | None = None, write: bool = True,
                   keep_dispatched: bool = False) -> RunResult:
    """Execute ``cfg.training.rounds`` rounds and (optionally) write the run directory.

    Layout: ``manifest.json``, ``partition.json``, ``metrics.csv``,
    ``checkpoints/`` (``init.json`` plus ``final/client_XXX.json``) and
    ``similarity/`` snapshots for ``cfg.snapshot_rounds`` (the last round when unset).
    """
    world = build_world(cfg)
    run_dir = Path(cfg.output_dir)
    result = RunResult(run_dir, world)
    if write:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "manifest.json").write_text(json.dumps(_manifest(cfg, world), indent=2))
        save_partition(world.partition, run_dir / "partition.json")
        save_checkpoint(run_dir / "checkpoints" / "init.json", -1, 0, world.init)
    rounds = cfg.training.rounds
    if rounds == 0:
        return result

    if cfg.strategy.kind == "oracle":
        records, params = run_oracle(world, cfg)
        result.records = records
        if write:
            _write_metrics(run_dir, records)
            save_checkpoint(run_dir / "checkpoints" / "final" / "oracle.json", -1, rounds, params)
        return result

    snapshots = set(cfg.snapshot_rounds) or {rounds}
    strategy = Strategy.from_config(cfg)
    clients = [new_client(i, d, world.init, strategy, world.probes[i], cfg.seed) for i, d in enumerate(world.data)]
    server = ServerState(world.init, len(clients))
    n_workers = workers if workers is not None else cfg.workers
    executor = ThreadPoolExecutor(max_workers=n_workers) if n_workers > 1 else None
    fh = open(run_dir / "metrics.csv", "w", newline="") if write else None
    writer = csv.writer(fh) if fh else None
    if writer:
        writer.writerow(CSV_COLUMNS)
    try:
        for r in range(1, rounds + 1):
            records = run_round(server, clients, strategy, cfg.training.local_epochs, executor)
            result.records.extend(records)
            if keep_dispatched:
                result.dispatched[r] = server.sent
            if server.similarity is not None:
                result.similarity[r] = server.similarity
                if write and r in snapshots:
                    _write_similarity(run_dir, r, server.similarity)
            if writer:
                writer.writerows(rec.row() for rec in records)
                fh.flush()
            if write and cfg.checkpoint_every and r % cfg.checkpoint_every == 0 and r != rounds:
                for c in clients:
                    save_checkpoint(run_dir / "checkpoints" / f"round_{r}" / f"client_{c.client_id:03d}.json",
                                    c.client_id, r, c.params, c.masks)
            log.debug("round %d done", r)
    finally:
        if fh:
            fh.close()
        if executor:
            executor.shutdown()
    if write:
        for c in clients:
            save_checkpoint(run_dir / "checkpoints" / "final" / f"client_{c.client_id:03d}.json",
                            c.client_id, rounds, c.params, c.masks)
    result.server = server
    result.clients = clients
    return result


def _write_metrics(run_dir: Path, records: list[RoundRecord]) -> None:
    with open(run_dir / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        w.writerows(r.row() for r in records)
