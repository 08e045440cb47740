"""Post-hoc diagnostics over finished runs: label similarity, correlation,
neighbor cross-evaluation, mask overlap and communication cost."""

from __future__ import annotations

import csv
import json
import math
import shutil
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from subgraph_fl.config import parse_config
from subgraph_fl.io import load_checkpoint, read_matrix_csv, read_metrics, write_matrix_csv, write_pgm
from subgraph_fl.nn import apply_mask_threshold
from subgraph_fl.partition import Partition, client_label_distributions, js_divergence, missing_edges
from subgraph_fl import plotting


def label_similarity(partition: Partition, labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Pairwise ``1 - JS`` (base 2) between client label distributions."""
    if partition.k < 2:
        raise ValueError("label similarity needs at least two clients")
    dists = client_label_distributions(partition, labels, num_classes)
    k = len(dists)
    out = np.ones((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = 1.0 - js_divergence(dists[i], dists[j])
    return out


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation; NaN when either input has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        return float("nan")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def similarity_label_correlation(sim: np.ndarray, lab: np.ndarray) -> float:
    """Pearson correlation over the strictly upper triangle.

    NaN means undefined (one side is constant).
    """
    sim, lab = np.asarray(sim), np.asarray(lab)
    if sim.shape != lab.shape or sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError("matrices must be square and equally shaped")
    if sim.shape[0] < 3:
        raise ValueError("correlation needs at least three clients")
    iu = np.triu_indices(sim.shape[0], k=1)
    return pearson(sim[iu], lab[iu])


def mask_overlap(masks_i: Mapping[str, np.ndarray], masks_j: Mapping[str, np.ndarray], threshold: float) -> float:
    """Fraction of mask positions that survive ``threshold`` in both clients."""
    both = total = 0
    for name, mi in masks_i.items():
        mj = masks_j[name]
        if mi.shape != mj.shape:
            raise ValueError(f"mask shape mismatch for {name}")
        keep_i = (np.abs(mi) >= threshold) & (mi != 0)
        keep_j = (np.abs(mj) >= threshold) & (mj != 0)
        both += int(np.count_nonzero(keep_i & keep_j))
        total += mi.size
    return both / total if total else 0.0


@dataclass
class NeighborRow:
    client_id: int
    neighbor_id: int
    local_acc: float
    neighbor_acc: float
    note: str = ""


def neighbor_evaluation(models: Sequence, data: Sequence, missing: np.ndarray) -> list[NeighborRow]:
    """Score each client's model on the subgraph it shares the most cut edges with.

    ``models[i]`` is the parameter set client i predicts with (already
    thresholded); ``data[i]`` its LocalData.
    """
    from subgraph_fl.fl.client import evaluate

    k = len(models)
    if k < 2:
        raise ValueError("neighbor evaluation needs at least two clients")
    own = [evaluate(data[i], models[i])["test"] for i in range(k)]
    rows = []
    for i in range(k):
        row = np.array(missing[i], dtype=np.int64)
        row[i] = 0
        if not row.any():
            rows.append(NeighborRow(i, -1, own[i], float("nan"), "no cut edges"))
            continue
        j = int(np.argmax(row))
        rows.append(NeighborRow(i, j, own[i], evaluate(data[j], models[i])["test"]))
    return rows


def communication_summary(records: Sequence, baseline_total: int | None = None) -> list[dict]:
    """Per-strategy totals of params sent plus received and the cost relative to fedavg.

    When no fedavg rows are present, ``baseline_total`` stands in for the
    fedavg volume; without either the relative cost is NaN.
    """
    if not records:
        raise ValueError("no records")
    totals = defaultdict(lambda: {"sent": 0, "received": 0, "sparsity": [], "rows": 0})
    for r in records:
        get = r.get if isinstance(r, dict) else lambda k, r=r: getattr(r, k)
        t = totals[get("strategy")]
        t["sent"] += int(get("params_sent"))
        t["received"] += int(get("params_received"))
        t["sparsity"].append(float(get("sparsity")))
        t["rows"] += 1
    if "fedavg" in totals:
        baseline_total = totals["fedavg"]["sent"] + totals["fedavg"]["received"]
    out = []
    for name, t in totals.items():
        total = t["sent"] + t["received"]
        rel = 100.0 * total / baseline_total if baseline_total else float("nan")
        out.append({
            "strategy": name,
            "params_sent": t["sent"],
            "params_received": t["received"],
            "total": total,
            "relative_cost_pct": rel,
            "mean_sparsity": float(np.mean(t["sparsity"])),
        })
    return out


def _write_rows(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _final_models(run_dir: Path, k: int, threshold: float) -> list | None:
    """Prediction parameters per client from the final checkpoints, or None if absent."""
    final = run_dir / "checkpoints" / "final"
    if (final / "oracle.json").exists():
        params, _, _ = load_checkpoint(final / "oracle.json")
        return [params] * k
    models = []
    for i in range(k):
        path = final / f"client_{i:03d}.json"
        if not path.exists():
            return None
        params, masks, _ = load_checkpoint(path)
        if masks is not None:
            params, _ = apply_mask_threshold(params, masks, threshold)
        models.append(params)
    return models


def write_report(run_dir: str | Path, out_dir: str | Path | None = None) -> Path:
    """Render every diagnostic for a finished run into ``<run_dir>/report``."""
    from subgraph_fl.fl.experiment import build_world

    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.json in {run_dir}")
    manifest = json.loads(manifest_path.read_text())
    cfg = parse_config(manifest)
    out = Path(out_dir) if out_dir else run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    world = build_world(cfg)
    g, part = world.graph, world.partition

    lab = label_similarity(part, g.labels, g.num_classes) if part.k >= 2 else None
    if lab is not None:
        write_matrix_csv(out / "label_similarity.csv", lab)
        write_pgm(out / "label_similarity.pgm", lab)
        plotting.heatmap(lab, out / "label_similarity.png", "label similarity", 0.0, 1.0)

    corr_lines = []
    snaps = sorted((run_dir / "similarity").glob("similarity_round_*.csv"),
                   key=lambda p: int(p.stem.rsplit("_", 1)[1])) if (run_dir / "similarity").exists() else []
    for path in snaps:
        r = int(path.stem.rsplit("_", 1)[1])
        sim = read_matrix_csv(path)
        shutil.copyfile(path, out / path.name)
        write_pgm(out / f"similarity_round_{r}.pgm", sim)
        plotting.heatmap(sim, out / f"similarity_round_{r}.png", f"functional similarity, round {r}")
        if lab is not None and part.k >= 3:
            c = similarity_label_correlation(sim, lab)
            corr_lines.append(f"round {r}: " + ("undefined (zero variance)" if math.isnan(c) else repr(c)))
    if not corr_lines:
        corr_lines.append("no similarity snapshots" if not snaps else "undefined (fewer than three clients)")
    (out / "correlation.txt").write_text("\n".join(corr_lines) + "\n")

    metrics_path = run_dir / "metrics.csv"
    records = read_metrics(metrics_path) if metrics_path.exists() else []
    if records:
        dense = manifest.get("num_params", 0) * len(records) * 2
        _write_rows(out / "comm_summary.csv", communication_summary(records, dense))
        by_round = defaultdict(list)
        for rec in records:
            by_round[rec["round"]].append(rec["test_acc"])
        rounds = np.array(sorted(by_round))
        acc = np.array([np.nanmean(by_round[r]) for r in rounds])
        plotting.accuracy_curves({records[0]["strategy"]: (rounds, acc)}, out / "accuracy.png",
                                 "mean test AUC" if cfg.task == "link_pred" else "mean test accuracy")

    models = _final_models(run_dir, part.k, cfg.training.mask_threshold)
    if models is not None and part.k >= 2:
        rows = neighbor_evaluation(models, world.data, missing_edges(g, part))
        _write_rows(out / "neighbor_report.csv", [vars(r) for r in rows])
    return out
