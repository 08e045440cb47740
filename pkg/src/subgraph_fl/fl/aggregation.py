"""Server-side aggregation rules."""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from subgraph_fl.errors import ParameterError

Params = dict[str, np.ndarray]


def aggregation_weights(sim_row, tau: float, mode: str = "implicit", threshold: float = 0.5,
                        self_index: int | None = None) -> np.ndarray:
    """Softmax of ``tau * similarity`` over one client's row.

    In ``explicit`` mode entries below ``threshold`` are dropped before the
    softmax; the client's own entry (``self_index``, or the row maximum when
    not given) always survives.
    """
    row = np.asarray(sim_row, dtype=np.float64)
    if row.ndim != 1 or len(row) == 0:
        raise ParameterError("similarity row must be a non-empty vector")
    if tau < 0:
        raise ParameterError("tau must be non-negative")
    keep = np.ones(len(row), dtype=bool)
    if mode == "explicit":
        keep = row >= threshold
        keep[int(np.argmax(row)) if self_index is None else self_index] = True
    elif mode != "implicit":
        raise ParameterError(f"unknown community mode {mode!r}")
    z = np.where(keep, tau * row, -np.inf)
    z = z - z[keep].max()
    w = np.where(keep, np.exp(z), 0.0)
    return w / w.sum()


def alpha_matrix(sim: np.ndarray, tau: float, mode: str = "implicit", threshold: float = 0.5) -> np.ndarray:
    return np.stack([aggregation_weights(sim[i], tau, mode, threshold, self_index=i) for i in range(len(sim))])


def _check_bank(bank: Sequence[Mapping[str, np.ndarray]]) -> list[str]:
    if not bank:
        raise ParameterError("empty parameter bank")
    names = list(bank[0])
    for b in bank[1:]:
        if list(b) != names or any(b[n].shape != bank[0][n].shape for n in names):
            raise RuntimeError("parameter bank entries disagree in tensor names or shapes")
    return names


def aggregate_personalized(bank: Sequence[Mapping[str, np.ndarray]], alphas: np.ndarray) -> list[Params]:
    """Per-client convex combinations ``sum_j alphas[i, j] * bank[j]``."""
    names = _check_bank(bank)
    alphas = np.asarray(alphas, dtype=np.float64)
    if alphas.shape != (len(bank), len(bank)):
        raise ParameterError(f"alphas must be {len(bank)}x{len(bank)}")
    out: list[Params] = [{} for _ in bank]
    for n in names:
        mixed = _mix(alphas, [b[n] for b in bank])
        for i in range(len(bank)):
            out[i][n] = mixed[i]
    return out


def _mix(weights: np.ndarray, tensors: Sequence[np.ndarray]) -> np.ndarray:
    # accumulate in client order so every aggregation rule rounds identically
    acc = np.zeros((weights.shape[0],) + tensors[0].shape)
    expand = (slice(None),) + (None,) * tensors[0].ndim
    for j, t in enumerate(tensors):
        acc += weights[:, j][expand] * t
    return acc


def fedavg_aggregate(bank: Sequence[Mapping[str, np.ndarray]], counts: Sequence[int]) -> Params:
    """Average weighted by local training-set size."""
    names = _check_bank(bank)
    w = np.asarray(counts, dtype=np.float64)
    if len(w) != len(bank) or np.any(w < 0) or w.sum() <= 0:
        raise ParameterError("training counts must be non-negative with a positive total")
    w = w / w.sum()
    return {n: _mix(w[None, :], [b[n] for b in bank])[0] for n in names}
