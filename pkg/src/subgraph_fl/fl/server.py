"""Server state and one federated round (dispatch, parallel local updates, aggregation)."""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass, field, fields

import numpy as np

from subgraph_fl.nn import Params, copy_params, count_nonzero
from subgraph_fl.partition import js_divergence
from subgraph_fl.fl.aggregation import aggregate_personalized, alpha_matrix, fedavg_aggregate
from subgraph_fl.fl.client import SHARED_NAMES, ClientState, Payload, Strategy, local_update
from subgraph_fl.fl.similarity import cosine_matrix

CSV_COLUMNS = (
    "round", "client_id", "strategy", "train_loss", "task_loss", "l1_term", "prox_term",
    "train_acc", "val_acc", "test_acc", "sparsity", "params_sent", "params_received",
)


@dataclass
class RoundRecord:
    round: int
    client_id: int
    strategy: str
    train_loss: float
    task_loss: float
    l1_term: float
    prox_term: float
    train_acc: float
    val_acc: float
    test_acc: float
    sparsity: float
    params_sent: int
    params_received: int

    def row(self) -> list[str]:
        return [repr(v) if isinstance(v, float) else str(v) for v in (getattr(self, f.name) for f in fields(self))]


@dataclass
class ServerState:
    init: Params
    num_clients: int
    round: int = 0
    bank: list[Params | None] = field(default_factory=list)
    sent: list[Params | None] = field(default_factory=list)
    embeddings: list[np.ndarray | None] = field(default_factory=list)
    similarity: np.ndarray | None = None
    alphas: np.ndarray | None = None
    global_params: Params | None = None

    def __post_init__(self) -> None:
        k = self.num_clients
        self.bank = self.bank or [None] * k
        self.sent = self.sent or [None] * k
        self.embeddings = self.embeddings or [None] * k


def similarity_from_payloads(server: ServerState, payloads: list[Payload], source: str) -> np.ndarray:
    k = len(payloads)
    if source == "functional":
        return cosine_matrix([p.embedding for p in payloads])
    if source == "parameter":
        return cosine_matrix([np.concatenate([np.ravel(p.params[n]) for n in p.params]) for p in payloads])
    if source == "gradient":
        deltas = [np.concatenate([np.ravel(server.sent[i][n] - p.params[n]) for n in p.params])
                  for i, p in enumerate(payloads)]
        return cosine_matrix(deltas)
    if source == "label":
        s = np.ones((k, k))
        for i in range(k):
            for j in range(i + 1, k):
                s[i, j] = s[j, i] = 1.0 - js_divergence(payloads[i].label_dist, payloads[j].label_dist)
        return s
    raise ValueError(f"unknown similarity source {source!r}")


def dispatch(server: ServerState, strategy: Strategy) -> list[Params | None]:
    """Parameters each client receives at the start of the current round."""
    k = server.num_clients
    if strategy.kind in ("local", "oracle"):
        return [None] * k
    if server.round == 1:
        out = [copy_params(server.init) for _ in range(k)]
    elif strategy.kind == "fedpub":
        out = aggregate_personalized(server.bank, server.alphas)
    else:
        out = [copy_params(server.global_params) for _ in range(k)]
    if strategy.kind == "fedper":
        out = [{n: p[n] for n in SHARED_NAMES} for p in out]
    return out


def collect(server: ServerState, payloads: list[Payload], strategy: Strategy) -> None:
    """Bank the uploads and prepare next round's aggregate or similarity weights."""
    server.bank = [p.params for p in payloads]
    if strategy.kind == "fedpub":
        server.embeddings = [p.embedding for p in payloads]
        server.similarity = similarity_from_payloads(server, payloads, strategy.similarity_source)
        server.alphas = alpha_matrix(server.similarity, strategy.tau, strategy.community_mode,
                                     strategy.community_threshold)
    else:
        server.global_params = fedavg_aggregate(server.bank, [p.num_train for p in payloads])


def run_round(server: ServerState, clients: list[ClientState], strategy: Strategy, epochs: int,
              executor: Executor | None = None) -> list[RoundRecord]:
    """Advance the federation by one round and return one record per client."""
    server.round += 1
    incoming = dispatch(server, strategy)
    server.sent = incoming

    def work(i: int):
        return local_update(clients[i], incoming[i], epochs, strategy)

    idx = range(len(clients))
    results = list(executor.map(work, idx)) if executor is not None else [work(i) for i in idx]
    payloads = [p for _, p in results]
    if strategy.kind not in ("local", "oracle"):
        collect(server, payloads, strategy)

    records = []
    for i, (client, payload) in enumerate(results):
        loss = client.last_loss
        m = client.metrics
        records.append(RoundRecord(
            server.round, i, strategy.kind, loss.total, loss.task_loss, loss.l1_term, loss.prox_term,
            m["train"], m["val"], m["test"], m["sparsity"],
            payload.nonzero if payload is not None else 0,
            count_nonzero(incoming[i]) if incoming[i] is not None else 0,
        ))
    return records
