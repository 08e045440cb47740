"""Two-layer GCN with a linear head, multiplicative weight masks and Adam.

Parameters and masks are plain ``dict[str, np.ndarray]`` keyed by
:data:`PARAM_NAMES`. A mask dict may hold a subset of the keys; missing
tensors are treated as an all-ones mask (unmasked).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, log_expit, logsumexp
from scipy.stats import rankdata

from subgraph_fl.errors import NumericError, ParameterError

PARAM_NAMES = ("W1", "b1", "W2", "b2", "Wc", "bc")
CLASSIFIER_NAMES = ("Wc", "bc")

Params = dict[str, np.ndarray]


def param_shapes(in_dim: int, hidden: int, num_classes: int) -> dict[str, tuple[int, ...]]:
    return {
        "W1": (in_dim, hidden),
        "b1": (hidden,),
        "W2": (hidden, hidden),
        "b2": (hidden,),
        "Wc": (hidden, num_classes),
        "bc": (num_classes,),
    }


def init_params(in_dim: int, hidden: int, num_classes: int, seed: int | np.random.Generator) -> Params:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in param_shapes(in_dim, hidden, num_classes).items():
        if len(shape) == 2:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            out[name] = rng.uniform(-limit, limit, size=shape)
        else:
            out[name] = np.zeros(shape)
    return out


def init_masks(params: Mapping[str, np.ndarray], mask_classifier: bool = True) -> Params:
    names = PARAM_NAMES if mask_classifier else tuple(n for n in PARAM_NAMES if n not in CLASSIFIER_NAMES)
    return {n: np.ones_like(params[n]) for n in names}


def copy_params(params: Mapping[str, np.ndarray]) -> Params:
    return {k: np.array(v, copy=True) for k, v in params.items()}


def num_params(params: Mapping[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


def count_nonzero(params: Mapping[str, np.ndarray]) -> int:
    return int(sum(np.count_nonzero(v) for v in params.values()))


def flatten(params: Mapping[str, np.ndarray], names=PARAM_NAMES) -> np.ndarray:
    return np.concatenate([np.ravel(params[n]) for n in names if n in params])


def effective(params: Mapping[str, np.ndarray], masks: Mapping[str, np.ndarray] | None) -> Params:
    """``params * masks`` element-wise; unmasked tensors pass through unchanged."""
    if not masks:
        return dict(params)
    out = dict(params)
    for name, m in masks.items():
        if m.shape != params[name].shape:
            raise ParameterError(f"mask {name} has shape {m.shape}, expected {params[name].shape}")
        out[name] = params[name] * m
    return out


def _check_finite(label: str, *arrays) -> None:
    for a in arrays:
        data = a.data if sp.issparse(a) else a
        if not np.all(np.isfinite(data)):
            raise NumericError(f"non-finite values in {label}")


@dataclass
class _Cache:
    ax: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    p1: np.ndarray
    z2: np.ndarray
    h: np.ndarray
    logits: np.ndarray


def _forward(eff: Mapping[str, np.ndarray], adj, x: np.ndarray) -> _Cache:
    if x.shape[1] != eff["W1"].shape[0]:
        raise ParameterError(f"feature width {x.shape[1]} does not match W1 rows {eff['W1'].shape[0]}")
    if adj.shape != (x.shape[0], x.shape[0]):
        raise ParameterError("adjacency shape does not match the feature matrix")
    ax = adj @ x
    z1 = ax @ eff["W1"] + eff["b1"]
    a1 = np.maximum(z1, 0.0)
    p1 = adj @ a1
    z2 = p1 @ eff["W2"] + eff["b2"]
    h = np.maximum(z2, 0.0)
    logits = h @ eff["Wc"] + eff["bc"]
    return _Cache(ax, z1, a1, p1, z2, h, logits)


def forward(params, masks, adj, x) -> tuple[np.ndarray, np.ndarray]:
    """Return the final hidden representation ``H`` and the class logits."""
    _check_finite("forward inputs", x, *params.values())
    cache = _forward(effective(params, masks), adj, x)
    return cache.h, cache.logits


@dataclass
class LossBreakdown:
    task_loss: float
    l1_term: float
    prox_term: float
    total: float


def _task_loss(cache: _Cache, labels, train_ids, task, pos_edges, neg_edges):
    """Task loss and its gradient w.r.t. logits (node_clf) or H (link_pred)."""
    if task == "node_clf":
        ids = np.asarray(train_ids, dtype=np.int64)
        if len(ids) == 0:
            raise ParameterError("empty training set")
        z = cache.logits[ids]
        lse = logsumexp(z, axis=1)
        y = np.asarray(labels)[ids]
        loss = float(np.mean(lse - z[np.arange(len(ids)), y]))
        d = np.exp(z - lse[:, None])
        d[np.arange(len(ids)), y] -= 1.0
        dlogits = np.zeros_like(cache.logits)
        dlogits[ids] = d / len(ids)
        return loss, dlogits, None
    if task == "link_pred":
        pos = np.asarray(pos_edges, dtype=np.int64).reshape(-1, 2)
        neg = np.asarray(neg_edges if neg_edges is not None else [], dtype=np.int64).reshape(-1, 2)
        pairs = np.concatenate([pos, neg])
        if len(pairs) == 0:
            raise ParameterError("link prediction needs at least one edge")
        target = np.r_[np.ones(len(pos)), np.zeros(len(neg))]
        hu, hv = cache.h[pairs[:, 0]], cache.h[pairs[:, 1]]
        s = np.sum(hu * hv, axis=1)
        loss = float(-np.mean(target * log_expit(s) + (1 - target) * log_expit(-s)))
        ds = (expit(s) - target) / len(pairs)
        dh = np.zeros_like(cache.h)
        np.add.at(dh, pairs[:, 0], ds[:, None] * hv)
        np.add.at(dh, pairs[:, 1], ds[:, None] * hu)
        return loss, None, dh
    raise ParameterError(f"unknown task {task!r}")


def _regularizers(params, masks, anchor, eff):
    l1 = float(sum(np.abs(m).sum() for m in masks.values())) if masks else 0.0
    if anchor is None:
        return l1, 0.0
    prox = float(sum(np.sum((eff[n] - anchor[n]) ** 2) for n in PARAM_NAMES))
    return l1, prox


def compute_loss(params, masks, anchor, adj, x, labels, train_ids, lam1, lam2,
                 task="node_clf", pos_edges=None, neg_edges=None) -> LossBreakdown:
    eff = effective(params, masks)
    cache = _forward(eff, adj, x)
    task_loss, _, _ = _task_loss(cache, labels, train_ids, task, pos_edges, neg_edges)
    l1, prox = _regularizers(params, masks, anchor, eff)
    return LossBreakdown(task_loss, l1, prox, task_loss + lam1 * l1 + lam2 * prox)


def loss_and_grads(params, masks, anchor, adj, x, labels, train_ids, lam1, lam2,
                   task="node_clf", pos_edges=None, neg_edges=None):
    """Composite loss ``task + lam1*|mask|_1 + lam2*||params*mask - anchor||^2``.

    Returns ``(LossBreakdown, param_grads, mask_grads)``; ``mask_grads`` has
    the keys of ``masks`` (empty when ``masks`` is None). The L1 subgradient
    uses ``sign(0) = 0``.
    """
    if lam1 < 0 or lam2 < 0:
        raise ParameterError("regularization weights must be non-negative")
    _check_finite("loss inputs", x, *params.values(), *(masks or {}).values())
    eff = effective(params, masks)
    cache = _forward(eff, adj, x)
    task_loss, dlogits, dh = _task_loss(cache, labels, train_ids, task, pos_edges, neg_edges)

    g: Params = {}
    if dlogits is not None:
        g["Wc"] = cache.h.T @ dlogits
        g["bc"] = dlogits.sum(axis=0)
        dh = dlogits @ eff["Wc"].T
    else:
        g["Wc"] = np.zeros_like(eff["Wc"])
        g["bc"] = np.zeros_like(eff["bc"])
    dz2 = dh * (cache.z2 > 0)
    g["W2"] = cache.p1.T @ dz2
    g["b2"] = dz2.sum(axis=0)
    dp1 = dz2 @ eff["W2"].T
    da1 = adj.T @ dp1
    dz1 = da1 * (cache.z1 > 0)
    g["W1"] = cache.ax.T @ dz1
    g["b1"] = dz1.sum(axis=0)

    l1, prox = _regularizers(params, masks, anchor, eff)
    if anchor is not None and lam2:
        for n in PARAM_NAMES:
            g[n] = g[n] + 2.0 * lam2 * (eff[n] - anchor[n])

    param_grads = {n: g[n] * masks[n] if masks and n in masks else g[n] for n in PARAM_NAMES}
    mask_grads = {n: g[n] * params[n] + lam1 * np.sign(m) for n, m in (masks or {}).items()}
    loss = LossBreakdown(task_loss, l1, prox, task_loss + lam1 * l1 + lam2 * prox)
    if not np.isfinite(loss.total):
        raise NumericError("loss is not finite")
    return loss, param_grads, mask_grads


# -- optimisation ------------------------------------------------------------

@dataclass
class AdamState:
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(state: AdamState, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              lr: float) -> tuple[Params, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    for gv in grads.values():
        if not np.all(np.isfinite(gv)):
            raise NumericError("non-finite gradient")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_m, new_v, new_p = dict(state.m), dict(state.v), dict(params)
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, gv in grads.items():
        m = b1 * state.m.get(name, 0.0) + (1.0 - b1) * gv
        v = b2 * state.v.get(name, 0.0) + (1.0 - b2) * gv * gv
        new_m[name], new_v[name] = m, v
        new_p[name] = params[name] - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)


def apply_mask_threshold(params, masks, threshold: float) -> tuple[Params, float]:
    """Masked weights with entries whose mask magnitude is below ``threshold`` set to 0.

    Sparsity is the fraction of all parameter entries zeroed by the mask
    (exact zeros in the mask count as pruned).
    """
    if threshold < 0:
        raise ParameterError("threshold must be non-negative")
    out = effective(params, masks)
    pruned = 0
    for name, m in (masks or {}).items():
        drop = (np.abs(m) < threshold) | (m == 0)
        if drop.any():
            out[name] = np.where(drop, 0.0, out[name])
        pruned += int(drop.sum())
    total = num_params(params)
    return out, pruned / total if total else 0.0


# -- evaluation --------------------------------------------------------------

def predict_accuracy(params, masks, adj, x, labels, ids) -> float:
    ids = np.asarray(ids, dtype=np.int64)
    if len(ids) == 0:
        raise ParameterError("cannot measure accuracy on an empty id set")
    _, logits = forward(params, masks, adj, x)
    pred = np.argmax(logits[ids], axis=1)
    return float(np.mean(pred == np.asarray(labels)[ids]))


def edge_scores(params, masks, adj, x, pairs, prob: bool = True) -> np.ndarray:
    """Edge probabilities ``sigmoid(h_u . h_v)``, or the raw inner products.

    Ranking metrics should use ``prob=False``: the sigmoid saturates to 1.0
    in float64 and would turn distinct scores into ties.
    """
    h, _ = forward(params, masks, adj, x)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    logits = np.sum(h[pairs[:, 0]] * h[pairs[:, 1]], axis=1)
    return expit(logits) if prob else logits


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative (ties count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ParameterError("ROC-AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
