"""Run configuration schema, validation, seed derivation and sweep expansion."""

from __future__ import annotations

import copy
import hashlib
import itertools
import types
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import yaml

from subgraph_fl.errors import ConfigError

STRATEGIES = ("fedpub", "fedavg", "fedprox", "fedper", "local", "oracle")
PARTITION_MODES = ("disjoint", "louvain", "random", "overlapping", "imbalanced", "blocks")
GRAPH_KINDS = ("sbm", "er", "community")
SIMILARITY_SOURCES = ("functional", "parameter", "gradient", "label")
PROBE_VARIANTS = ("sbm", "er", "one", "feature")
TASKS = ("node_clf", "link_pred")


@dataclass
class GraphSpec:
    source: str = "synthetic"
    path: str | None = None
    kind: str = "sbm"
    num_blocks: int = 5
    nodes_per_block: int = 100
    community_sizes: list[int] = field(default_factory=lambda: [5, 5, 40])
    subgraph_size: int = 30
    num_nodes: int = 500
    p_in: float = 0.1
    p_out: float = 0.01
    p: float = 0.03
    feat_dim: int = 32
    feature_signal: float = 0.0
    seed: int | None = None


@dataclass
class PartitionSpec:
    mode: str = "disjoint"
    k: int = 10
    base_parts: int = 2
    samples: int = 5
    node_frac: float = 0.5
    fine_parts: int = 20
    group_sizes: list[int] = field(default_factory=lambda: [5, 3, 2, 2, 2])
    block_size: int = 30
    seed: int | None = None


@dataclass
class ModelSpec:
    hidden: int = 128
    mask_classifier: bool = True


@dataclass
class TrainingSpec:
    rounds: int = 100
    local_epochs: int = 1
    lr: float = 0.001
    lambda1: float = 0.001
    lambda2: float = 0.001
    mask_threshold: float = 0.5
    fedprox_mu: float = 0.01
    train_frac: float = 0.2
    val_frac: float = 0.35
    edge_train_frac: float = 0.8
    edge_val_frac: float = 0.1
    oracle_epochs: int | None = None


@dataclass
class StrategySpec:
    kind: str = "fedpub"
    tau: float | None = None
    similarity_source: str = "functional"
    community_mode: str = "implicit"
    community_threshold: float = 0.5
    embedding_layer: str = "hidden"
    use_masks: bool = True


@dataclass
class ProbeSpec:
    variant: str = "sbm"
    num_blocks: int = 5
    nodes_per_block: int = 100
    p_in: float = 0.1
    p_out: float = 0.01
    er_nodes: int = 500
    er_p: float = 0.028
    seed: int | None = None


@dataclass
class RunConfig:
    graph: GraphSpec = field(default_factory=GraphSpec)
    partition: PartitionSpec = field(default_factory=PartitionSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    training: TrainingSpec = field(default_factory=TrainingSpec)
    strategy: StrategySpec = field(default_factory=StrategySpec)
    probe: ProbeSpec = field(default_factory=ProbeSpec)
    task: str = "node_clf"
    seed: int = 0
    output_dir: str = "runs/default"
    snapshot_rounds: list[int] = field(default_factory=list)
    checkpoint_every: int = 0
    workers: int = 1

    @property
    def tau(self) -> float:
        if self.strategy.tau is not None:
            return self.strategy.tau
        return 5.0 if self.partition.mode == "overlapping" else 3.0

    def section_seed(self, tag: str) -> int:
        explicit = {"graph": self.graph.seed, "partition": self.partition.seed, "probe": self.probe.seed}.get(tag)
        return explicit if explicit is not None else derive_seed(self.seed, tag)


SECTIONS = {
    "graph": GraphSpec,
    "partition": PartitionSpec,
    "model": ModelSpec,
    "training": TrainingSpec,
    "strategy": StrategySpec,
    "probe": ProbeSpec,
}


def derive_seed(run_seed: int, domain_tag: str, client_id: int = -1, round_idx: int = -1) -> int:
    """Stable 63-bit seed for a (run, domain, client, round) stream."""
    key = f"{run_seed}|{domain_tag}|{client_id}|{round_idx}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little") >> 1


# -- parsing -----------------------------------------------------------------

def _field_types(cls) -> dict[str, Any]:
    return typing.get_type_hints(cls)


def _is_list_type(tp) -> bool:
    return typing.get_origin(tp) is list


def _coerce(section: str, name: str, tp, value):
    where = f"{section}.{name}" if section else name
    if value is None:
        if type(None) in typing.get_args(tp):
            return None
        raise ConfigError(f"{where} may not be null")
    base = tp
    args = [a for a in typing.get_args(tp) if a is not type(None)]
    if typing.get_origin(tp) in (typing.Union, types.UnionType) and args:
        base = args[0]
    if _is_list_type(base):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where} must be a list")
        inner = typing.get_args(base)[0]
        return [_coerce(section, name, inner, v) for v in value]
    if base is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true/false, got {value!r}")
        return value
    if base is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if base is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if base is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string, got {value!r}")
        return value
    return value


def _build(cls, section: str, doc: dict):
    if not isinstance(doc, dict):
        raise ConfigError(f"section {section!r} must be a mapping")
    hints = _field_types(cls)
    unknown = sorted(set(doc) - set(hints))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in {section or 'top level'}; valid keys: {sorted(hints)}")
    kwargs = {k: _coerce(section, k, hints[k], v) for k, v in doc.items()}
    return cls(**kwargs)


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def validate(cfg: RunConfig) -> RunConfig:
    g, p, m, t, s, pr = cfg.graph, cfg.partition, cfg.model, cfg.training, cfg.strategy, cfg.probe
    _require(g.source in ("synthetic", "file"), "graph.source must be 'synthetic' or 'file'")
    _require(g.source != "file" or bool(g.path), "graph.path is required when graph.source is 'file'")
    _require(g.kind in GRAPH_KINDS, f"graph.kind must be one of {GRAPH_KINDS}")
    for name in ("p_in", "p_out", "p"):
        v = getattr(g, name)
        _require(0.0 <= v <= 1.0, f"graph.{name} must lie in [0, 1], got {v}")
    _require(g.p_out <= g.p_in, "graph.p_out must not exceed graph.p_in")
    _require(g.feat_dim >= 1, "graph.feat_dim must be >= 1")
    _require(g.feature_signal >= 0, "graph.feature_signal must be >= 0")
    _require(g.num_blocks >= 1 and g.nodes_per_block >= 1 and g.num_nodes >= 1, "graph sizes must be >= 1")
    _require(g.subgraph_size >= 1 and all(c >= 1 for c in g.community_sizes) and g.community_sizes,
             "graph.community_sizes entries and graph.subgraph_size must be >= 1")

    _require(p.mode in PARTITION_MODES, f"partition.mode must be one of {PARTITION_MODES}")
    _require(p.k >= 1, "partition.k must be >= 1")
    _require(p.base_parts >= 1 and p.samples >= 1, "partition.base_parts and partition.samples must be >= 1")
    _require(0.0 < p.node_frac <= 1.0, f"partition.node_frac must lie in (0, 1], got {p.node_frac}")
    _require(all(x >= 1 for x in p.group_sizes), "partition.group_sizes entries must be >= 1")
    _require(sum(p.group_sizes) <= p.fine_parts, "partition.group_sizes must sum to at most partition.fine_parts")
    _require(p.block_size >= 1, "partition.block_size must be >= 1")

    _require(m.hidden >= 1, "model.hidden must be >= 1")
    _require(t.rounds >= 0, "training.rounds must be >= 0")
    _require(t.local_epochs >= 0, "training.local_epochs must be >= 0")
    _require(t.lr > 0, "training.lr must be > 0")
    _require(t.lambda1 >= 0, f"training.lambda1 must be >= 0, got {t.lambda1}")
    _require(t.lambda2 >= 0, f"training.lambda2 must be >= 0, got {t.lambda2}")
    _require(t.mask_threshold >= 0, "training.mask_threshold must be >= 0")
    _require(t.fedprox_mu >= 0, "training.fedprox_mu must be >= 0")
    _require(0 <= t.train_frac <= 1 and 0 <= t.val_frac <= 1 and t.train_frac + t.val_frac <= 1,
             "training.train_frac + training.val_frac must lie in [0, 1]")
    _require(0 < t.edge_train_frac <= 1 and 0 <= t.edge_val_frac and t.edge_train_frac + t.edge_val_frac <= 1,
             "training.edge_train_frac + training.edge_val_frac must lie in (0, 1]")
    _require(t.oracle_epochs is None or t.oracle_epochs >= 0, "training.oracle_epochs must be >= 0")

    _require(s.kind in STRATEGIES, f"strategy.kind must be one of {STRATEGIES}")
    _require(s.tau is None or s.tau >= 0, "strategy.tau must be >= 0")
    _require(s.similarity_source in SIMILARITY_SOURCES, f"strategy.similarity_source must be one of {SIMILARITY_SOURCES}")
    _require(s.community_mode in ("implicit", "explicit"), "strategy.community_mode must be 'implicit' or 'explicit'")
    _require(s.embedding_layer in ("hidden", "logits"), "strategy.embedding_layer must be 'hidden' or 'logits'")

    _require(pr.variant in PROBE_VARIANTS, f"probe.variant must be one of {PROBE_VARIANTS}")
    _require(0 <= pr.p_out <= pr.p_in <= 1, "probe probabilities must satisfy 0 <= p_out <= p_in <= 1")
    _require(0 <= pr.er_p <= 1, "probe.er_p must lie in [0, 1]")

    _require(cfg.task in TASKS, f"task must be one of {TASKS}")
    _require(all(r >= 0 for r in cfg.snapshot_rounds), "snapshot_rounds must be >= 0")
    _require(cfg.workers >= 1, "workers must be >= 1")
    _require(cfg.checkpoint_every >= 0, "checkpoint_every must be >= 0")
    return cfg


def parse_config(doc: dict | str | None) -> RunConfig:
    """Build a validated, fully defaulted config from a mapping or YAML/JSON text.

    A run manifest (a mapping with a ``config`` entry) is accepted as well.
    """
    if isinstance(doc, str):
        doc = yaml.safe_load(doc)
    doc = dict(doc or {})
    if "config" in doc and "software_version" in doc:
        doc = dict(doc["config"])
    top_types = _field_types(RunConfig)
    unknown = sorted(set(doc) - set(top_types))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} at top level; valid keys: {sorted(top_types)}")
    kwargs = {}
    for key, value in doc.items():
        if key in SECTIONS:
            kwargs[key] = _build(SECTIONS[key], key, value or {})
        else:
            kwargs[key] = _coerce("", key, top_types[key], value)
    return validate(RunConfig(**kwargs))


def serialize(cfg: RunConfig) -> dict:
    return asdict(cfg)


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text())


# -- sweeps ------------------------------------------------------------------

def _sweep_axes(doc: dict) -> list[tuple[tuple[str, ...], list]]:
    axes = []
    top_types = _field_types(RunConfig)
    for key, value in doc.items():
        if key in SECTIONS and isinstance(value, dict):
            hints = _field_types(SECTIONS[key])
            for name, v in value.items():
                if isinstance(v, list) and name in hints and not _is_list_type(_strip_optional(hints[name])):
                    axes.append(((key, name), v))
        elif isinstance(value, list) and key in top_types and not _is_list_type(_strip_optional(top_types[key])):
            axes.append(((key,), value))
    return axes


def _strip_optional(tp):
    args = [a for a in typing.get_args(tp) if a is not type(None)]
    return args[0] if typing.get_origin(tp) is not list and args else tp


def expand_sweep(doc: dict | str) -> list[tuple[str, RunConfig]]:
    """Expand list values on scalar fields into a grid of sibling runs.

    Returns ``(suffix, config)`` pairs; each config's output directory is the
    base output directory joined with its suffix. Without list values the
    single config is returned with an empty suffix.
    """
    if isinstance(doc, str):
        doc = yaml.safe_load(doc) or {}
    doc = dict(doc)
    axes = _sweep_axes(doc)
    if not axes:
        return [("", parse_config(doc))]
    out = []
    for combo in itertools.product(*(vals for _, vals in axes)):
        sub = copy.deepcopy(doc)
        parts = []
        for (path, _), val in zip(axes, combo):
            target = sub
            for key in path[:-1]:
                target = target[key]
            target[path[-1]] = val
            parts.append(f"{path[-1]}={val}")
        suffix = "_".join(parts)
        cfg = parse_config(sub)
        cfg.output_dir = str(Path(cfg.output_dir) / suffix)
        out.append((suffix, cfg))
    return out


def replace(cfg: RunConfig, **changes) -> RunConfig:
    """Copy with dotted-path overrides, e.g. ``replace(cfg, **{"training.rounds": 5})``."""
    new = copy.deepcopy(cfg)
    for dotted, value in changes.items():
        *head, last = dotted.split(".")
        target = new
        for h in head:
            target = getattr(target, h)
        if not hasattr(target, last):
            raise ConfigError(f"unknown config field {dotted}")
        setattr(target, last, value)
    return validate(new)


__all__ = [
    "RunConfig",
    "derive_seed",
    "expand_sweep",
    "load_config",
    "parse_config",
    "replace",
    "serialize",
]
