"""Central finite-difference verification of the analytic loss gradients."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from subgraph_fl.graph import Graph, generate_sbm, graph_from_dict, normalized_adjacency
from subgraph_fl.nn import PARAM_NAMES, compute_loss, init_params, loss_and_grads

FD_STEP = 1e-6
# relative errors use max(|analytic|, |numeric|, REL_FLOOR) as denominator;
# below ~1e-5 the step-1e-6 central difference is dominated by float64 roundoff
REL_FLOOR = 1e-5


@dataclass
class GradcheckResult:
    max_rel_error: float
    num_components: int


def tiny_fixture() -> Graph:
    text = resources.files("subgraph_fl.data").joinpath("tiny_graph.json").read_text()
    return graph_from_dict(json.loads(text))


def _negatives(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    out = []
    while len(out) < count:
        u, v = rng.integers(0, n, size=2)
        if u != v:
            out.append((min(u, v), max(u, v)))
    return np.asarray(out, dtype=np.int64).reshape(-1, 2)


def check_instance(g: Graph, hidden: int, task: str, seed: int, lam1=1e-3, lam2=1e-3,
                   step: float = FD_STEP) -> GradcheckResult:
    """Compare every gradient component of one random instance against central differences."""
    rng = np.random.default_rng(seed)
    adj = normalized_adjacency(g).toarray()
    params = init_params(g.feat_dim, hidden, g.num_classes, rng)
    for n in PARAM_NAMES:
        params[n] = params[n] + 0.3 * rng.standard_normal(params[n].shape)
    masks = {n: rng.uniform(0.2, 1.5, size=v.shape) * rng.choice([-1.0, 1.0], size=v.shape)
             for n, v in params.items()}
    anchor = {n: v + 0.1 * rng.standard_normal(v.shape) for n, v in params.items()}
    train_ids = np.arange(g.num_nodes)
    pos = g.edges if task == "link_pred" else None
    neg = _negatives(g.num_nodes, max(1, len(g.edges)), rng) if task == "link_pred" else None
    args = (adj, g.features, g.labels, train_ids, lam1, lam2, task, pos, neg)

    _, gp, gm = loss_and_grads(params, masks, anchor, *args)
    worst, count = 0.0, 0
    for store, grads in ((params, gp), (masks, gm)):
        for name in PARAM_NAMES:
            arr = store[name]
            for idx in np.ndindex(arr.shape):
                orig = arr[idx]
                arr[idx] = orig + step
                up = compute_loss(params, masks, anchor, *args).total
                arr[idx] = orig - step
                down = compute_loss(params, masks, anchor, *args).total
                arr[idx] = orig
                numeric = (up - down) / (2 * step)
                analytic = grads[name][idx]
                denom = max(abs(analytic), abs(numeric), REL_FLOOR)
                worst = max(worst, abs(analytic - numeric) / denom)
                count += 1
    return GradcheckResult(worst, count)


def random_instance(seed: int, max_nodes: int = 10) -> Graph:
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, max_nodes + 1))
    classes = int(rng.integers(2, 4))
    g = generate_sbm(1, n, 0.5, 0.5, int(rng.integers(2, 6)), seed)
    labels = rng.integers(0, classes, size=n)
    return Graph(g.num_nodes, g.edges, g.features, labels, num_classes=classes)


def run_suite(num_instances: int = 20, seed: int = 0, max_hidden: int = 8) -> GradcheckResult:
    worst, count = 0.0, 0
    for i in range(num_instances):
        g = random_instance(seed * 1000 + i)
        hidden = 2 + (i % (max_hidden - 1))
        for task in ("node_clf", "link_pred"):
            res = check_instance(g, hidden, task, seed * 1000 + i)
            worst = max(worst, res.max_rel_error)
            count += res.num_components
    return GradcheckResult(worst, count)
