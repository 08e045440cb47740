"""Model similarity measures: functional embeddings on a probe graph and cosine variants."""

from __future__ import annotations

import warnings
from typing import Mapping, Sequence

import numpy as np

from subgraph_fl.errors import ParameterError
from subgraph_fl.graph import Graph, normalized_adjacency
from subgraph_fl.nn import flatten, forward


class ProbeInput:
    """A probe graph with its propagation matrix prepared once."""

    def __init__(self, graph: Graph):
        self.graph = graph
        adj = normalized_adjacency(graph)
        self.adj = adj.toarray() if graph.num_nodes <= 1000 else adj

    @property
    def feat_dim(self) -> int:
        return self.graph.feat_dim


def functional_embedding(params, masks, probe: Graph | ProbeInput, layer: str = "hidden") -> np.ndarray:
    """Mean node representation the model produces on ``probe``.

    ``layer="hidden"`` averages the final GCN layer output; ``"logits"``
    averages the classifier output instead.
    """
    if not isinstance(probe, ProbeInput):
        probe = ProbeInput(probe)
    if probe.feat_dim != params["W1"].shape[0]:
        raise ParameterError(f"probe feature width {probe.feat_dim} != model input width {params['W1'].shape[0]}")
    h, logits = forward(params, masks, probe.adj, probe.graph.features)
    out = h if layer == "hidden" else logits
    return out.mean(axis=0)


def similarity(a, b) -> float:
    """Cosine similarity; a zero-norm side yields 0 with a warning."""
    a = np.ravel(np.asarray(a, dtype=np.float64))
    b = np.ravel(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ParameterError(f"length mismatch {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        warnings.warn("zero-norm vector in cosine similarity; returning 0", RuntimeWarning, stacklevel=2)
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def parameter_similarity(theta_i: Mapping[str, np.ndarray], theta_j: Mapping[str, np.ndarray]) -> float:
    names = [n for n in theta_i if n in theta_j]
    for n in names:
        if theta_i[n].shape != theta_j[n].shape:
            raise ParameterError(f"shape mismatch in {n}")
    return similarity(flatten(theta_i, names), flatten(theta_j, names))


def gradient_similarity(delta_i, delta_j) -> float:
    """Cosine between two per-round parameter deltas (``sent - returned``)."""
    return parameter_similarity(delta_i, delta_j)


def cosine_matrix(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Pairwise cosine similarities; rows with zero norm get 0 off-diagonal and 1 on it."""
    v = np.stack([np.ravel(x) for x in vectors]).astype(np.float64)
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms == 0):
        warnings.warn("zero-norm vector in similarity matrix; treating its similarities as 0",
                      RuntimeWarning, stacklevel=2)
    safe = np.where(norms == 0, 1.0, norms)
    u = v / safe[:, None]
    s = np.clip(u @ u.T, -1.0, 1.0)
    s = 0.5 * (s + s.T)
    np.fill_diagonal(s, 1.0)
    return s

