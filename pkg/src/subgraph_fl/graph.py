"""Graph container, synthetic generators, GCN propagation matrix and node splits."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from subgraph_fl.errors import ParameterError


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected node-classification graph.

    ``edges`` is an ``(m, 2)`` int array with ``u < v`` in every row, sorted
    lexicographically and free of duplicates. ``node_ids`` maps local node
    indices back to the graph this one was induced from.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    num_classes: int = 0
    node_ids: np.ndarray | None = None

    def __post_init__(self) -> None:
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        n = int(self.num_nodes)
        if features.ndim != 2 or features.shape[0] != n:
            raise ParameterError(f"features must have {n} rows, got shape {features.shape}")
        if labels.shape != (n,):
            raise ParameterError(f"labels must have length {n}, got {labels.shape}")
        if len(edges):
            if edges.min() < 0 or edges.max() >= n:
                raise ParameterError("edge endpoint out of range")
            if np.any(edges[:, 0] >= edges[:, 1]):
                raise ParameterError("edges must satisfy u < v (no self-loops)")
            keys = edges[:, 0] * n + edges[:, 1]
            if np.any(np.diff(keys) <= 0):
                raise ParameterError("edges must be sorted and unique")
        if len(labels) and labels.min() < 0:
            raise ParameterError("labels must be non-negative")
        num_classes = int(self.num_classes) or (int(labels.max()) + 1 if n else 0)
        if n and labels.max() >= num_classes:
            raise ParameterError("label id exceeds num_classes")
        node_ids = None if self.node_ids is None else np.asarray(self.node_ids, dtype=np.int64)
        for arr in (edges, features, labels, node_ids):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "num_nodes", n)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_classes", num_classes)
        object.__setattr__(self, "node_ids", node_ids)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency without self-loops."""
        n = self.num_nodes
        u, v = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(u))
        a = sp.coo_matrix((data, (np.r_[u, v], np.r_[v, u])), shape=(n, n))
        return a.tocsr()

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_nodes, dtype=np.int64)
        np.add.at(deg, self.edges[:, 0], 1)
        np.add.at(deg, self.edges[:, 1], 1)
        return deg


def canonical_edges(pairs: Iterable[Sequence[int]], num_nodes: int) -> np.ndarray:
    """Symmetrize, drop self-loops and duplicates, and sort an edge list."""
    arr = np.asarray(list(pairs) if not isinstance(pairs, np.ndarray) else pairs, dtype=np.int64)
    arr = arr.reshape(-1, 2)
    if len(arr) and (arr.min() < 0 or arr.max() >= num_nodes):
        raise ParameterError("edge endpoint out of range")
    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    keep = lo != hi
    keys = np.unique(lo[keep] * num_nodes + hi[keep])
    return np.stack([keys // num_nodes, keys % num_nodes], axis=1) if len(keys) else np.zeros((0, 2), np.int64)


def _check_prob(name: str, p: float) -> None:
    if not (0.0 <= p <= 1.0) or math.isnan(p):
        raise ParameterError(f"{name} must lie in [0, 1], got {p}")


def _sample_block_edges(rng: np.random.Generator, sizes: Sequence[int], p_in: float, p_out: float) -> np.ndarray:
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    chunks = []
    for a in range(len(sizes)):
        for b in range(a, len(sizes)):
            na, nb = sizes[a], sizes[b]
            if a == b:
                if na < 2:
                    continue
                iu, ju = np.triu_indices(na, k=1)
                hit = rng.random(len(iu)) < p_in
                chunks.append(np.stack([iu[hit], ju[hit]], axis=1) + offsets[a])
            else:
                hit = rng.random((na, nb)) < p_out
                iu, ju = np.nonzero(hit)
                chunks.append(np.stack([iu + offsets[a], ju + offsets[b]], axis=1))
    if not chunks:
        return np.zeros((0, 2), np.int64)
    return canonical_edges(np.concatenate(chunks), int(offsets[-1]))


def _features(rng: np.random.Generator, labels: np.ndarray, feat_dim: int, signal: float) -> np.ndarray:
    x = rng.standard_normal((len(labels), feat_dim))
    if signal:
        centers = signal * rng.standard_normal((int(labels.max()) + 1, feat_dim))
        x = x + centers[labels]
    return x


def generate_sbm(
    num_blocks: int,
    nodes_per_block: int,
    p_in: float,
    p_out: float,
    feat_dim: int,
    seed: int,
    *,
    block_sizes: Sequence[int] | None = None,
    feature_signal: float = 0.0,
) -> Graph:
    """Stochastic block model graph with labels equal to the block index.

    ``block_sizes`` overrides the uniform ``num_blocks * [nodes_per_block]``
    layout. ``feature_signal > 0`` adds a per-block Gaussian centre of that
    scale to the standard-normal features; at 0 the features are pure noise.
    """
    _check_prob("p_in", p_in)
    _check_prob("p_out", p_out)
    if p_out > p_in:
        raise ParameterError(f"p_out ({p_out}) must not exceed p_in ({p_in})")
    if feat_dim < 1:
        raise ParameterError("feat_dim must be >= 1")
    sizes = list(block_sizes) if block_sizes is not None else [nodes_per_block] * num_blocks
    if not sizes or any(s < 1 for s in sizes):
        raise ParameterError("every block needs at least one node")
    rng = np.random.default_rng(seed)
    edges = _sample_block_edges(rng, sizes, p_in, p_out)
    labels = np.repeat(np.arange(len(sizes)), sizes)
    x = _features(rng, labels, feat_dim, feature_signal)
    return Graph(int(sum(sizes)), edges, x, labels, num_classes=len(sizes))


def generate_er(num_nodes: int, p: float, feat_dim: int, seed: int) -> Graph:
    _check_prob("p", p)
    if feat_dim < 1 or num_nodes < 1:
        raise ParameterError("num_nodes and feat_dim must be >= 1")
    rng = np.random.default_rng(seed)
    edges = _sample_block_edges(rng, [num_nodes], p, 0.0)
    x = rng.standard_normal((num_nodes, feat_dim))
    return Graph(num_nodes, edges, x, np.zeros(num_nodes, np.int64), num_classes=1)


def generate_single_node(feat_dim: int, seed: int) -> Graph:
    if feat_dim < 1:
        raise ParameterError("feat_dim must be >= 1")
    rng = np.random.default_rng(seed)
    return Graph(1, np.zeros((0, 2), np.int64), rng.standard_normal((1, feat_dim)), np.zeros(1, np.int64), 1)


def normalized_adjacency(g: Graph) -> sp.csr_matrix:
    """Return ``D^-1/2 (A + I) D^-1/2`` with ``D`` the degree matrix of ``A + I``."""
    a = g.adjacency() + sp.identity(g.num_nodes, format="csr")
    d_inv_sqrt = 1.0 / np.sqrt(np.asarray(a.sum(axis=1)).ravel())
    scale = sp.diags(d_inv_sqrt)
    return (scale @ a @ scale).tocsr()


def induced_subgraph(g: Graph, ids: Iterable[int]) -> Graph:
    """Subgraph on ``ids`` relabelled in sorted original order."""
    ids = np.unique(np.fromiter(ids, dtype=np.int64))
    if len(ids) and (ids[0] < 0 or ids[-1] >= g.num_nodes):
        raise ParameterError("node id out of range")
    local = np.full(g.num_nodes, -1, dtype=np.int64)
    local[ids] = np.arange(len(ids))
    mapped = local[g.edges] if g.num_edges else np.zeros((0, 2), np.int64)
    keep = (mapped >= 0).all(axis=1) if len(mapped) else np.zeros(0, bool)
    origin = ids if g.node_ids is None else g.node_ids[ids]
    return Graph(
        len(ids),
        mapped[keep],
        g.features[ids],
        g.labels[ids],
        num_classes=g.num_classes,
        node_ids=origin,
    )


@dataclass(frozen=True)
class Split:
    train_ids: np.ndarray
    val_ids: np.ndarray
    test_ids: np.ndarray

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Split):
            return NotImplemented
        return all(
            np.array_equal(a, b)
            for a, b in zip(
                (self.train_ids, self.val_ids, self.test_ids),
                (other.train_ids, other.val_ids, other.test_ids),
            )
        )


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


def split_nodes(g: Graph | int, train_frac: float, val_frac: float, seed: int) -> Split:
    """Uniform random train/val/test split; the test set absorbs rounding."""
    n = g if isinstance(g, int) else g.num_nodes
    if not (0 <= train_frac <= 1 and 0 <= val_frac <= 1) or train_frac + val_frac > 1 + 1e-12:
        raise ParameterError(f"invalid split fractions train={train_frac} val={val_frac}")
    perm = np.random.default_rng(seed).permutation(n)
    n_train = min(n, _round_half_up(train_frac * n))
    n_val = min(n - n_train, _round_half_up(val_frac * n))
    return Split(
        np.sort(perm[:n_train]),
        np.sort(perm[n_train:n_train + n_val]),
        np.sort(perm[n_train + n_val:]),
    )


# -- file format -------------------------------------------------------------

def graph_to_dict(g: Graph) -> dict:
    return {
        "num_nodes": g.num_nodes,
        "feat_dim": g.feat_dim,
        "num_classes": g.num_classes,
        "edges": g.edges.tolist(),
        "features": g.features.tolist(),
        "labels": g.labels.tolist(),
    }


def graph_from_dict(doc: dict) -> Graph:
    """Build a graph from the interchange document.

    Directed or duplicated edges are symmetrized and explicit self-loops
    dropped; normalization adds self-loops back.
    """
    try:
        n = int(doc["num_nodes"])
        features = np.asarray(doc["features"], dtype=np.float64).reshape(n, -1)
        labels = np.asarray(doc["labels"], dtype=np.int64)
        edges = canonical_edges(doc.get("edges", []), n)
    except KeyError as exc:
        raise ParameterError(f"graph document missing field {exc}") from None
    feat_dim = doc.get("feat_dim")
    if feat_dim is not None and features.shape[1] != int(feat_dim):
        raise ParameterError(f"feat_dim {feat_dim} disagrees with features width {features.shape[1]}")
    return Graph(n, edges, features, labels, num_classes=int(doc.get("num_classes", 0)))


def save_graph(g: Graph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(graph_to_dict(g)))


def load_graph(path: str | Path) -> Graph:
    return graph_from_dict(json.loads(Path(path).read_text()))
