"""Client partitioning of a global graph and inter-subgraph structure metrics."""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from subgraph_fl.errors import ParameterError
from subgraph_fl.graph import Graph, induced_subgraph

MODES = ("disjoint", "overlapping", "random", "imbalanced")


@dataclass(frozen=True, eq=False)
class Partition:
    client_nodes: tuple[np.ndarray, ...]
    mode: str = "disjoint"

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ParameterError(f"unknown partition mode {self.mode!r}; expected one of {MODES}")
        sets = tuple(np.unique(np.asarray(c, dtype=np.int64)) for c in self.client_nodes)
        if any(len(s) == 0 for s in sets):
            raise ParameterError("every client needs at least one node")
        object.__setattr__(self, "client_nodes", sets)

    @property
    def k(self) -> int:
        return len(self.client_nodes)

    def sizes(self) -> list[int]:
        return [len(c) for c in self.client_nodes]

    def owner(self, num_nodes: int) -> np.ndarray:
        """Client index per node (-1 if unowned); only meaningful for disjoint modes."""
        own = np.full(num_nodes, -1, dtype=np.int64)
        for i, c in enumerate(self.client_nodes):
            own[c] = i
        return own

    def membership(self, num_nodes: int) -> sp.csr_matrix:
        rows = np.concatenate(self.client_nodes)
        cols = np.repeat(np.arange(self.k), self.sizes())
        return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(num_nodes, self.k))

    def subgraphs(self, g: Graph) -> list[Graph]:
        return [induced_subgraph(g, c) for c in self.client_nodes]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Partition):
            return NotImplemented
        return self.mode == other.mode and self.k == other.k and all(
            np.array_equal(a, b) for a, b in zip(self.client_nodes, other.client_nodes)
        )


def _from_assignment(assign: np.ndarray, k: int, mode: str = "disjoint") -> Partition:
    return Partition(tuple(np.flatnonzero(assign == i) for i in range(k)), mode)


def _neighbors(g: Graph) -> tuple[np.ndarray, np.ndarray]:
    a = g.adjacency()
    return a.indptr, a.indices


# -- balanced k-way partitioning ---------------------------------------------

def _bfs_dist(indptr, indices, sources, n) -> np.ndarray:
    dist = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
    frontier = np.asarray(sources, dtype=np.int64)
    dist[frontier] = 0
    d = 0
    while len(frontier):
        d += 1
        nxt = np.concatenate([indices[indptr[u]:indptr[u + 1]] for u in frontier]) if len(frontier) else frontier
        nxt = np.unique(nxt)
        nxt = nxt[dist[nxt] > d]
        dist[nxt] = d
        frontier = nxt
    return dist


def _spread_seeds(indptr, indices, deg, k, rng) -> list[int]:
    n = len(deg)
    jitter = rng.random(n)
    first = int(np.lexsort((jitter, -deg))[0])
    seeds = [first]
    while len(seeds) < k:
        dist = _bfs_dist(indptr, indices, seeds, n)
        dist[seeds] = -1
        # farthest from existing seeds, then highest degree, then random
        order = np.lexsort((jitter, -deg, -dist))
        seeds.append(int(order[0]))
    return seeds


def partition_balanced(g: Graph, k: int, seed: int) -> Partition:
    """Balanced low-cut k-way partition.

    Regions grow from ``k`` spread-out seed nodes, always extending the
    currently smallest region by the frontier node with the most edges into
    it, capped at ``ceil(n / k)``. A single boundary-refinement pass then
    moves nodes to the neighbouring part that cuts fewer edges while keeping
    every part at most ``ceil(1.3 * n / k)`` nodes.
    """
    n = g.num_nodes
    if not 1 <= k <= n:
        raise ParameterError(f"k must lie in [1, {n}], got {k}")
    if k == 1:
        return Partition((np.arange(n),))
    if k == n:
        return Partition(tuple(np.array([i]) for i in range(n)))
    rng = np.random.default_rng(seed)
    indptr, indices = _neighbors(g)
    deg = np.diff(indptr)
    seeds = _spread_seeds(indptr, indices, deg, k, rng)
    tiebreak = rng.random(n)

    assign = np.full(n, -1, dtype=np.int64)
    size = np.zeros(k, dtype=np.int64)
    gain = [dict() for _ in range(k)]
    heaps: list[list] = [[] for _ in range(k)]
    cap = math.ceil(n / k)

    def claim(v: int, r: int) -> None:
        assign[v] = r
        size[r] += 1
        for u in indices[indptr[v]:indptr[v + 1]]:
            if assign[u] < 0:
                gr = gain[r]
                gr[u] = gr.get(u, 0) + 1
                heapq.heappush(heaps[r], (-gr[u], tiebreak[u], int(u)))

    def pop_best(r: int) -> int:
        h = heaps[r]
        while h:
            neg, _, u = heapq.heappop(h)
            if assign[u] < 0 and gain[r].get(u) == -neg:
                return u
        return -1

    for r, s in enumerate(seeds):
        claim(s, r)
    unassigned = n - k
    while unassigned:
        for r in np.argsort(size, kind="stable"):
            if size[r] >= cap:
                continue
            u = pop_best(r)
            if u < 0:
                rest = np.flatnonzero(assign < 0)
                u = int(rest[np.argmin(tiebreak[rest])])
            claim(u, int(r))
            unassigned -= 1
            break

    limit = math.ceil(1.3 * n / k)
    for v in rng.permutation(n):
        own = assign[v]
        nbr = assign[indices[indptr[v]:indptr[v + 1]]]
        if len(nbr) == 0 or size[own] <= 1:
            continue
        counts = np.bincount(nbr, minlength=k)
        counts_other = counts.copy()
        counts_other[own] = -1
        counts_other[size >= limit] = -1
        best = int(np.argmax(counts_other))
        if counts_other[best] > counts[own]:
            assign[v] = best
            size[own] -= 1
            size[best] += 1
    return _from_assignment(assign, k)


# -- Louvain -----------------------------------------------------------------

def modularity(g: Graph, communities: Sequence[Sequence[int]], resolution: float = 1.0) -> float:
    """Newman modularity ``sum_c e_c/m - resolution * (d_c / 2m)^2``."""
    m = g.num_edges
    if m == 0:
        return 0.0
    own = np.full(g.num_nodes, -1, dtype=np.int64)
    for i, c in enumerate(communities):
        own[np.asarray(c, dtype=np.int64)] = i
    deg = g.degrees()
    u, v = g.edges[:, 0], g.edges[:, 1]
    k = len(communities)
    internal = np.bincount(own[u][own[u] == own[v]], minlength=k)
    degree_sum = np.bincount(own, weights=deg, minlength=k)
    return float(np.sum(internal / m - resolution * (degree_sum / (2 * m)) ** 2))


def _louvain_level(adj: sp.csr_matrix, rng, resolution: float) -> tuple[np.ndarray, bool]:
    """Local-moving phase on a weighted graph; returns labels and whether any node moved."""
    n = adj.shape[0]
    indptr, indices, weights = adj.indptr, adj.indices, adj.data
    k = np.asarray(adj.sum(axis=1)).ravel()
    two_m = k.sum()
    comm = np.arange(n)
    tot = k.copy()
    moved_any = False
    improved = True
    while improved:
        improved = False
        for v in rng.permutation(n):
            cv = comm[v]
            lo, hi = indptr[v], indptr[v + 1]
            nbrs, w = indices[lo:hi], weights[lo:hi]
            links: dict[int, float] = {}
            for u, wu in zip(nbrs, w):
                if u != v:
                    links[comm[u]] = links.get(comm[u], 0.0) + wu
            tot[cv] -= k[v]
            best, best_gain = cv, links.get(cv, 0.0) - resolution * tot[cv] * k[v] / two_m
            for c in sorted(links):
                gain_c = links[c] - resolution * tot[c] * k[v] / two_m
                if gain_c > best_gain + 1e-12:
                    best, best_gain = c, gain_c
            tot[best] += k[v]
            if best != cv:
                comm[v] = best
                improved = True
                moved_any = True
    _, labels = np.unique(comm, return_inverse=True)
    return labels, moved_any


def louvain_communities(g: Graph, seed: int, resolution: float = 1.0) -> tuple[list[np.ndarray], list[float]]:
    """Louvain modularity optimisation.

    Returns the final communities (sorted by smallest member) together with
    the modularity after each aggregation pass.
    """
    rng = np.random.default_rng(seed)
    n = g.num_nodes
    labels = np.arange(n)
    adj = g.adjacency().astype(np.float64)
    history: list[float] = []
    if g.num_edges == 0:
        return [np.array([i]) for i in range(n)], [0.0]
    while True:
        level, moved = _louvain_level(adj, rng, resolution)
        if not moved:
            break
        labels = level[labels]
        groups = [np.flatnonzero(labels == c) for c in range(labels.max() + 1)]
        history.append(modularity(g, groups, resolution))
        agg = sp.csr_matrix((np.ones(len(level)), (level, np.arange(len(level)))))
        adj = (agg @ adj @ agg.T).tocsr()
        if adj.shape[0] == 1:
            break
    groups = [np.flatnonzero(labels == c) for c in range(labels.max() + 1)]
    groups.sort(key=lambda c: c[0])
    if not history:
        history.append(modularity(g, groups, resolution))
    return groups, history


def partition_louvain(g: Graph, k: int, seed: int) -> Partition:
    """Louvain communities coerced to exactly ``k`` clients.

    Surplus communities are merged two-smallest-first; a deficit is filled by
    bisecting the largest set with :func:`partition_balanced`.
    """
    if not 1 <= k <= g.num_nodes:
        raise ParameterError(f"k must lie in [1, {g.num_nodes}], got {k}")
    groups, _ = louvain_communities(g, seed)
    groups = [np.sort(c) for c in groups]
    while len(groups) > k:
        order = sorted(range(len(groups)), key=lambda i: (len(groups[i]), groups[i][0]))
        a, b = order[0], order[1]
        merged = np.union1d(groups[a], groups[b])
        groups = [c for i, c in enumerate(groups) if i not in (a, b)] + [merged]
    while len(groups) < k:
        big = max(range(len(groups)), key=lambda i: (len(groups[i]), -groups[i][0]))
        target = groups.pop(big)
        halves = partition_balanced(induced_subgraph(g, target), 2, seed)
        groups.extend(target[h] for h in halves.client_nodes)
    groups.sort(key=lambda c: c[0])
    return Partition(tuple(groups))


# -- other partition modes ---------------------------------------------------

def partition_random(g: Graph, k: int, seed: int) -> Partition:
    n = g.num_nodes
    if not 1 <= k <= n:
        raise ParameterError(f"k must lie in [1, {n}], got {k}")
    perm = np.random.default_rng(seed).permutation(n)
    assign = np.empty(n, dtype=np.int64)
    assign[perm] = np.arange(n) % k
    return _from_assignment(assign, k, "random")


def partition_blocks(g: Graph, block_size: int) -> Partition:
    """Consecutive chunks of ``block_size`` nodes (synthetic community layouts)."""
    if block_size < 1:
        raise ParameterError("block_size must be >= 1")
    n = g.num_nodes
    return Partition(tuple(np.arange(s, min(s + block_size, n)) for s in range(0, n, block_size)))


def make_overlapping(g: Graph, base_parts: int, samples_per_part: int, node_frac: float, seed: int) -> Partition:
    if base_parts < 1 or samples_per_part < 1:
        raise ParameterError("base_parts and samples_per_part must be >= 1")
    if not 0 < node_frac <= 1:
        raise ParameterError(f"node_frac must lie in (0, 1], got {node_frac}")
    base = partition_balanced(g, base_parts, seed)
    rng = np.random.default_rng([seed, 1])
    clients = []
    for part in base.client_nodes:
        size = int(math.floor(node_frac * len(part) + 0.5))
        if size == 0:
            raise ParameterError(f"node_frac {node_frac} leaves an empty client for a part of {len(part)} nodes")
        for _ in range(samples_per_part):
            clients.append(np.sort(rng.choice(part, size=size, replace=False)))
    return Partition(tuple(clients), "overlapping")


def make_imbalanced(g: Graph, fine_parts: int, group_sizes: Sequence[int], seed: int) -> Partition:
    if any(s < 1 for s in group_sizes):
        raise ParameterError("group sizes must be >= 1")
    if sum(group_sizes) > fine_parts:
        raise ParameterError(f"group sizes sum to {sum(group_sizes)} > fine_parts {fine_parts}")
    fine = partition_balanced(g, fine_parts, seed).client_nodes
    clients, start = [], 0
    for s in group_sizes:
        clients.append(np.concatenate(fine[start:start + s]))
        start += s
    clients.extend(fine[start:])
    return Partition(tuple(clients), "imbalanced")


# -- structure metrics -------------------------------------------------------

def missing_edges(g: Graph, p: Partition) -> np.ndarray:
    """K x K counts of global edges joining client i's nodes to client j's.

    Edges present in both clients' induced subgraphs (overlapping mode) are
    not missing for that pair and are excluded.
    """
    if g.num_edges == 0 or p.k == 1:
        return np.zeros((p.k, p.k), dtype=np.int64)
    b = p.membership(g.num_nodes)
    x = b[g.edges[:, 0]]
    y = b[g.edges[:, 1]]
    z = x.multiply(y)
    m = (x.T @ y + y.T @ x - 2 * (z.T @ z)).toarray()
    m = np.rint(m).astype(np.int64)
    np.fill_diagonal(m, 0)
    return m


def label_distribution(labels: np.ndarray, num_classes: int) -> np.ndarray:
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes).astype(np.float64)
    total = counts.sum()
    return counts / total if total else counts


def _entropy2(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-np.sum(nz * np.log2(nz)))


def js_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence in bits (range [0, 1])."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    mix = 0.5 * (p + q)
    return max(0.0, _entropy2(mix) - 0.5 * (_entropy2(p) + _entropy2(q)))


def client_label_distributions(p: Partition, labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    return np.stack([label_distribution(labels[c], num_classes) for c in p.client_nodes])


def heterogeneity(p: Partition, labels: np.ndarray, num_classes: int) -> float:
    """Median pairwise JS divergence between client label distributions."""
    if p.k < 2:
        raise ParameterError("heterogeneity needs at least two clients")
    dists = client_label_distributions(p, labels, num_classes)
    vals = [js_divergence(dists[i], dists[j]) for i in range(p.k) for j in range(i + 1, p.k)]
    return float(np.median(vals))


def clustering_coefficient(g: Graph) -> float:
    """Average local clustering coefficient; nodes of degree < 2 count as 0."""
    if g.num_nodes == 0:
        return 0.0
    a = g.adjacency()
    deg = np.asarray(a.sum(axis=1)).ravel()
    tri = np.asarray((a @ a).multiply(a).sum(axis=1)).ravel() / 2.0
    denom = deg * (deg - 1)
    local = np.divide(2.0 * tri, denom, out=np.zeros_like(tri), where=denom > 0)
    return float(local.mean())


# -- file format -------------------------------------------------------------

def partition_to_dict(p: Partition) -> dict:
    return {"mode": p.mode, "clients": [c.tolist() for c in p.client_nodes]}


def partition_from_dict(doc: dict) -> Partition:
    return Partition(tuple(np.asarray(c, dtype=np.int64) for c in doc["clients"]), doc.get("mode", "disjoint"))


def save_partition(p: Partition, path: str | Path) -> None:
    Path(path).write_text(json.dumps(partition_to_dict(p)))


def load_partition(path: str | Path) -> Partition:
    return partition_from_dict(json.loads(Path(path).read_text()))
