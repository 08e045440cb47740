"""Run-directory artifacts: checkpoints, metric tables, matrix CSV and PGM heatmaps."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from subgraph_fl.nn import PARAM_NAMES


def tensors_to_list(tensors: Mapping[str, np.ndarray] | None) -> list[dict]:
    if tensors is None:
        return []
    return [
        {"name": n, "shape": list(tensors[n].shape), "values": np.ravel(tensors[n]).tolist()}
        for n in PARAM_NAMES if n in tensors
    ]


def tensors_from_list(items: Iterable[dict]) -> dict[str, np.ndarray]:
    return {t["name"]: np.asarray(t["values"], dtype=np.float64).reshape(t["shape"]) for t in items}


def save_checkpoint(path: str | Path, client_id: int, round_idx: int, params, masks=None) -> None:
    doc = {
        "client_id": client_id,
        "round": round_idx,
        "params": tensors_to_list(params),
        "masks": tensors_to_list(masks),
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> tuple[dict, dict | None, dict]:
    doc = json.loads(Path(path).read_text())
    masks = tensors_from_list(doc["masks"]) if doc.get("masks") else None
    return tensors_from_list(doc["params"]), masks, {"client_id": doc["client_id"], "round": doc["round"]}


def write_matrix_csv(path: str | Path, matrix: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in np.asarray(matrix):
            w.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh) if row])


def write_pgm(path: str | Path, matrix: np.ndarray) -> None:
    """Binary 8-bit PGM, one pixel per entry, min-max scaled.

    The header comment records the original range, so a pixel value ``q``
    maps back to ``lo + q / 255 * (hi - lo)`` within half a quantization step.
    """
    m = np.asarray(matrix, dtype=np.float64)
    lo, hi = float(np.nanmin(m)), float(np.nanmax(m))
    span = hi - lo
    q = np.zeros(m.shape, dtype=np.uint8) if span == 0 else np.rint((m - lo) / span * 255).astype(np.uint8)
    header = f"P5\n# 8-bit linear quantization: min={lo!r} max={hi!r}\n{m.shape[1]} {m.shape[0]}\n255\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(q.tobytes())


def read_pgm(path: str | Path) -> tuple[np.ndarray, float, float]:
    """Return the 8-bit image and the (min, max) range from its header comment."""
    raw = Path(path).read_bytes()
    lines, pos = [], 0
    while len(lines) < 4:
        end = raw.index(b"\n", pos)
        lines.append(raw[pos:end].decode("ascii"))
        pos = end + 1
    comment = lines[1]
    lo = float(comment.split("min=")[1].split()[0])
    hi = float(comment.split("max=")[1].split()[0])
    width, height = map(int, lines[2].split())
    img = np.frombuffer(raw[pos:pos + width * height], dtype=np.uint8).reshape(height, width)
    return img, lo, hi


def read_metrics(path: str | Path) -> list[dict]:
    """Metrics CSV rows with numeric columns converted."""
    ints = {"round", "client_id", "params_sent", "params_received"}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append({k: (v if k == "strategy" else int(v) if k in ints else float(v)) for k, v in row.items()})
    return out
