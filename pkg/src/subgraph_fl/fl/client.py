"""Client-side state and the local update step for every strategy."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from subgraph_fl.config import RunConfig, derive_seed
from subgraph_fl.graph import Graph, Split, normalized_adjacency, split_nodes
from subgraph_fl.nn import (
    AdamState,
    LossBreakdown,
    Params,
    adam_step,
    apply_mask_threshold,
    compute_loss,
    copy_params,
    count_nonzero,
    edge_scores,
    forward,
    init_masks,
    loss_and_grads,
    roc_auc,
)
from subgraph_fl.partition import label_distribution
from subgraph_fl.fl.similarity import ProbeInput, functional_embedding

SHARED_NAMES = ("W1", "b1", "W2", "b2")


@dataclass(frozen=True)
class Strategy:
    kind: str = "fedpub"
    tau: float = 3.0
    lr: float = 0.001
    lambda1: float = 0.001
    lambda2: float = 0.001
    mask_threshold: float = 0.5
    fedprox_mu: float = 0.01
    similarity_source: str = "functional"
    community_mode: str = "implicit"
    community_threshold: float = 0.5
    embedding_layer: str = "hidden"
    use_masks: bool = True
    mask_classifier: bool = True

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "Strategy":
        s, t = cfg.strategy, cfg.training
        return cls(
            kind=s.kind,
            tau=cfg.tau,
            lr=t.lr,
            lambda1=t.lambda1,
            lambda2=t.lambda2,
            mask_threshold=t.mask_threshold,
            fedprox_mu=t.fedprox_mu,
            similarity_source=s.similarity_source,
            community_mode=s.community_mode,
            community_threshold=s.community_threshold,
            embedding_layer=s.embedding_layer,
            use_masks=s.use_masks,
            mask_classifier=cfg.model.mask_classifier,
        )

    @property
    def masked(self) -> bool:
        return self.kind == "fedpub" and self.use_masks


def _dense_if_small(adj):
    n = adj.shape[0]
    if n <= 1000 or adj.nnz > 0.02 * n * n:
        return adj.toarray()
    return adj


def _sample_non_edges(n: int, count: int, forbidden: set, rng: np.random.Generator) -> np.ndarray:
    out = np.zeros((count, 2), dtype=np.int64)
    if n < 2:
        return out[:0]
    filled, attempts = 0, 0
    while filled < count and attempts < 100 * count + 100:
        u, v = rng.integers(0, n, size=2)
        attempts += 1
        if u == v:
            continue
        a, b = (u, v) if u < v else (v, u)
        if (a, b) in forbidden:
            continue
        out[filled] = (a, b)
        filled += 1
    return out[:filled]


@dataclass
class LocalData:
    """Everything a client can see: its subgraph, split and prepared matrices."""

    graph: Graph
    split: Split
    adj: object
    task: str = "node_clf"
    train_edges: np.ndarray | None = None
    eval_sets: dict = field(default_factory=dict)
    edge_set: set = field(default_factory=set)

    @classmethod
    def build(cls, graph: Graph, cfg: RunConfig, client_id: int) -> "LocalData":
        t = cfg.training
        split = split_nodes(graph, t.train_frac, t.val_frac, derive_seed(cfg.seed, "split", client_id))
        if cfg.task == "node_clf":
            return cls(graph, split, _dense_if_small(normalized_adjacency(graph)))
        # link prediction: message passing runs over the training edges only
        rng = np.random.default_rng(derive_seed(cfg.seed, "edge-split", client_id))
        m = graph.num_edges
        perm = rng.permutation(m)
        n_train = max(1, int(np.floor(t.edge_train_frac * m + 0.5))) if m else 0
        n_val = int(np.floor(t.edge_val_frac * m + 0.5))
        parts = {
            "train": graph.edges[np.sort(perm[:n_train])],
            "val": graph.edges[np.sort(perm[n_train:n_train + n_val])],
            "test": graph.edges[np.sort(perm[n_train + n_val:])],
        }
        train_graph = Graph(graph.num_nodes, parts["train"], graph.features, graph.labels, graph.num_classes)
        edge_set = {tuple(e) for e in graph.edges.tolist()}
        neg_rng = np.random.default_rng(derive_seed(cfg.seed, "neg-eval", client_id))
        eval_sets = {k: (v, _sample_non_edges(graph.num_nodes, len(v), edge_set, neg_rng)) for k, v in parts.items()}
        return cls(graph, split, _dense_if_small(normalized_adjacency(train_graph)), "link_pred",
                   parts["train"], eval_sets, edge_set)

    @property
    def num_train(self) -> int:
        if self.task == "link_pred":
            return len(self.train_edges)
        return len(self.split.train_ids)

    def negatives(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        return _sample_non_edges(self.graph.num_nodes, len(self.train_edges), self.edge_set, rng)


@dataclass
class Payload:
    client_id: int
    params: Params | None
    embedding: np.ndarray | None
    num_train: int
    nonzero: int
    sparsity: float = 0.0
    label_dist: np.ndarray | None = None


@dataclass
class ClientState:
    client_id: int
    data: LocalData
    params: Params
    masks: Params | None
    adam: AdamState = field(default_factory=AdamState)
    mask_adam: AdamState = field(default_factory=AdamState)
    last_anchor: Params | None = None
    probe: ProbeInput | None = None
    run_seed: int = 0
    round: int = 0
    last_loss: LossBreakdown | None = None
    metrics: dict = field(default_factory=dict)

    def model(self, strategy: Strategy) -> tuple[Params, float]:
        """Parameters used for prediction and transmission, and their mask sparsity."""
        if strategy.masked and self.masks is not None:
            return apply_mask_threshold(self.params, self.masks, strategy.mask_threshold)
        return self.params, 0.0


def new_client(client_id: int, data: LocalData, init: Params, strategy: Strategy,
               probe: ProbeInput | None, run_seed: int) -> ClientState:
    params = copy_params(init)
    masks = init_masks(params, strategy.mask_classifier) if strategy.masked else None
    return ClientState(client_id, data, params, masks, probe=probe, run_seed=run_seed)


def _objective(strategy: Strategy) -> tuple[float, float]:
    """Effective (lambda1, lambda2) for the client loss."""
    if strategy.kind == "fedpub":
        return (strategy.lambda1 if strategy.use_masks else 0.0), strategy.lambda2
    if strategy.kind == "fedprox":
        return 0.0, strategy.fedprox_mu / 2.0
    return 0.0, 0.0


def _loss_args(client: ClientState, neg: np.ndarray | None):
    d = client.data
    return dict(
        adj=d.adj, x=d.graph.features, labels=d.graph.labels, train_ids=d.split.train_ids,
        task=d.task, pos_edges=d.train_edges, neg_edges=neg,
    )


def evaluate(data: LocalData, params: Params, masks: Params | None = None) -> dict[str, float]:
    """Accuracy (node classification) or ROC-AUC (link prediction) per split; NaN when empty."""
    out = {}
    if data.task == "node_clf":
        _, logits = forward(params, masks, data.adj, data.graph.features)
        correct = np.argmax(logits, axis=1) == data.graph.labels
        for name, ids in (("train", data.split.train_ids), ("val", data.split.val_ids), ("test", data.split.test_ids)):
            out[name] = float(correct[ids].mean()) if len(ids) else float("nan")
        return out
    for name, (pos, neg) in data.eval_sets.items():
        if len(pos) == 0 or len(neg) == 0:
            out[name] = float("nan")
            continue
        scores = edge_scores(params, masks, data.adj, data.graph.features, np.concatenate([pos, neg]), prob=False)
        out[name] = roc_auc(scores, np.r_[np.ones(len(pos)), np.zeros(len(neg))])
    return out


def local_update(client: ClientState, incoming: Params | None, epochs: int,
                 strategy: Strategy) -> tuple[ClientState, Payload | None]:
    """Receive server weights, train locally for ``epochs`` full-graph steps, build the upload."""
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    kind = strategy.kind
    if incoming is not None:
        if kind == "fedper":
            for n in SHARED_NAMES:
                client.params[n] = np.array(incoming[n], copy=True)
        else:
            client.params = copy_params(incoming)
        client.last_anchor = copy_params(incoming)
    lam1, lam2 = _objective(strategy)
    anchor = client.last_anchor if lam2 else None
    masks = client.masks if strategy.masked else None
    d = client.data
    for epoch in range(epochs):
        neg = None
        if d.task == "link_pred":
            neg = d.negatives(derive_seed(client.run_seed, f"neg/{epoch}", client.client_id, client.round))
        _, gp, gm = loss_and_grads(client.params, masks, anchor, lam1=lam1, lam2=lam2,
                                   **_loss_args(client, neg))
        client.params, client.adam = adam_step(client.adam, client.params, gp, strategy.lr)
        if masks is not None:
            masks, client.mask_adam = adam_step(client.mask_adam, masks, gm, strategy.lr)
            client.masks = masks

    neg_eval = d.eval_sets["train"][1] if d.task == "link_pred" else None
    client.last_loss = compute_loss(client.params, masks, anchor, lam1=lam1, lam2=lam2,
                                    **_loss_args(client, neg_eval))
    model, sparsity = client.model(strategy)
    client.metrics = evaluate(d, model)
    client.metrics["sparsity"] = sparsity
    client.round += 1

    if kind in ("local", "oracle"):
        return client, None
    sent = {n: model[n] for n in SHARED_NAMES} if kind == "fedper" else model
    embedding = None
    if kind == "fedpub" and strategy.similarity_source == "functional" and client.probe is not None:
        embedding = functional_embedding(model, None, client.probe, strategy.embedding_layer)
    label_dist = None
    if strategy.similarity_source == "label":
        label_dist = label_distribution(d.graph.labels[d.split.train_ids], d.graph.num_classes)
    payload = Payload(client.client_id, sent, embedding, d.num_train, count_nonzero(sent), sparsity, label_dist)
    return client, payload
