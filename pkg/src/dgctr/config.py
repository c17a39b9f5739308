"""Run configuration: one JSON document validated against a closed schema.

Unknown keys are rejected; every violation is reported with its full key
path so the CLI can emit field-level diagnostics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

ABLATE_MODES = ("none", "attr-only", "uu-vv-only", "uv-only", "no-attr")


class ConfigError(ValueError):
    def __init__(self, diagnostics: list[tuple[str, str]]):
        self.diagnostics = diagnostics
        super().__init__(
            "; ".join(f"{path}: {msg}" for path, msg in diagnostics)
        )


@dataclass
class DataConfig:
    log: str = ""
    schema: str = ""
    n_neg: int = 10


@dataclass
class SimilarityConfig:
    alpha1: float = 0.5
    alpha2: float = 0.5
    k: int = 10


@dataclass
class PropagationConfig:
    aggregator: str = "lightgcn"
    pool: str = "sum"
    activation: str = "leaky_relu"
    leaky_slope: float = 0.2
    attr_layers: int = 1
    stage1_layers: int = 1
    stage2_layers: int = 1
    fanout: int = 0
    sample_threshold: int = 200_000


@dataclass
class ModelConfig:
    embedding_dim: int = 10
    mlp: list[int] = dc_field(default_factory=lambda: [400, 400, 400, 1])
    lr: float = 1e-3
    l2: float = 0.0
    dropout: float = 0.0
    batch_size: int = 2000
    epochs: int = 10
    patience: int = 5
    dtype: str = "float32"


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    data: DataConfig = dc_field(default_factory=DataConfig)
    similarity: SimilarityConfig = dc_field(default_factory=SimilarityConfig)
    propagation: PropagationConfig = dc_field(default_factory=PropagationConfig)
    model: ModelConfig = dc_field(default_factory=ModelConfig)
    synth: dict = dc_field(default_factory=dict)

    def to_doc(self) -> dict:
        return {
            "seed": self.seed,
            "threads": self.threads,
            "data": vars(self.data),
            "similarity": vars(self.similarity),
            "propagation": vars(self.propagation),
            "model": {**vars(self.model), "mlp": list(self.model.mlp)},
            "synth": self.synth,
        }


_SECTIONS = {"data": DataConfig, "similarity": SimilarityConfig,
             "propagation": PropagationConfig, "model": ModelConfig}


def _check(cond: bool, diags, path: str, msg: str) -> None:
    if not cond:
        diags.append((path, msg))


def load_config(path_or_doc) -> RunConfig:
    if isinstance(path_or_doc, (str, Path)):
        try:
            doc = json.loads(Path(path_or_doc).read_text())
        except FileNotFoundError:
            raise ConfigError([(str(path_or_doc), "config file not found")])
        except json.JSONDecodeError as e:
            raise ConfigError([(str(path_or_doc), f"invalid JSON: {e}")])
    else:
        doc = path_or_doc
    return validate_config(doc)


def validate_config(doc: dict) -> RunConfig:
    diags: list[tuple[str, str]] = []
    if not isinstance(doc, dict):
        raise ConfigError([("", "config must be a JSON object")])

    known_top = {"seed", "threads", "synth"} | set(_SECTIONS)
    for key in doc:
        if key not in known_top:
            diags.append((key, "unknown key"))

    cfg = RunConfig()
    if "seed" in doc:
        _check(isinstance(doc["seed"], int) and doc["seed"] >= 0, diags,
               "seed", "must be a non-negative integer")
        cfg.seed = int(doc.get("seed", 0)) if isinstance(doc.get("seed", 0), int) else 0
    if "threads" in doc:
        _check(isinstance(doc["threads"], int) and doc["threads"] >= 1, diags,
               "threads", "must be an integer >= 1")
        if isinstance(doc["threads"], int) and doc["threads"] >= 1:
            cfg.threads = doc["threads"]
    if "synth" in doc:
        _check(isinstance(doc["synth"], dict), diags, "synth",
               "must be an object")
        if isinstance(doc["synth"], dict):
            cfg.synth = doc["synth"]

    for section, klass in _SECTIONS.items():
        sub = doc.get(section, {})
        if not isinstance(sub, dict):
            diags.append((section, "must be an object"))
            continue
        target = getattr(cfg, section)
        defaults = klass()
        for key, value in sub.items():
            if not hasattr(defaults, key):
                diags.append((f"{section}.{key}", "unknown key"))
                continue
            setattr(target, key, value)

    d = cfg.data
    _check(isinstance(d.n_neg, int) and d.n_neg >= 1, diags,
           "data.n_neg", "must be an integer >= 1")

    s = cfg.similarity
    _check(
        isinstance(s.alpha1, (int, float)) and isinstance(s.alpha2, (int, float))
        and s.alpha1 >= 0 and s.alpha2 >= 0 and s.alpha1 + s.alpha2 > 0,
        diags, "similarity.alpha1/alpha2",
        "must be >= 0 with a positive sum",
    )
    _check(isinstance(s.k, int) and s.k >= 1, diags,
           "similarity.k", "must be an integer >= 1")

    p = cfg.propagation
    _check(p.aggregator in ("gcn", "ngcf", "lightgcn"), diags,
           "propagation.aggregator", "must be one of gcn|ngcf|lightgcn")
    _check(p.pool in ("sum", "mean"), diags,
           "propagation.pool", "must be sum or mean")
    _check(p.activation in ("identity", "relu", "leaky_relu"), diags,
           "propagation.activation", "must be identity|relu|leaky_relu")
    for name in ("attr_layers", "stage1_layers", "stage2_layers"):
        v = getattr(p, name)
        _check(isinstance(v, int) and 1 <= v <= 4, diags,
               f"propagation.{name}", "must be an integer in [1, 4]")
    _check(isinstance(p.fanout, int) and p.fanout >= 0, diags,
           "propagation.fanout", "must be an integer >= 0 (0 disables sampling)")
    _check(isinstance(p.sample_threshold, int) and p.sample_threshold >= 0,
           diags, "propagation.sample_threshold", "must be an integer >= 0")

    m = cfg.model
    _check(isinstance(m.embedding_dim, int) and m.embedding_dim >= 1, diags,
           "model.embedding_dim", "must be an integer >= 1")
    _check(
        isinstance(m.mlp, list) and len(m.mlp) >= 1
        and all(isinstance(w, int) and w >= 1 for w in m.mlp)
        and m.mlp[-1] == 1,
        diags, "model.mlp", "must be a list of positive widths ending in 1",
    )
    _check(isinstance(m.lr, (int, float)) and m.lr > 0, diags,
           "model.lr", "must be > 0")
    _check(isinstance(m.l2, (int, float)) and m.l2 >= 0, diags,
           "model.l2", "must be >= 0")
    _check(isinstance(m.dropout, (int, float)) and 0 <= m.dropout < 1, diags,
           "model.dropout", "must be in [0, 1)")
    _check(isinstance(m.batch_size, int) and m.batch_size >= 1, diags,
           "model.batch_size", "must be an integer >= 1")
    _check(isinstance(m.epochs, int) and m.epochs >= 0, diags,
           "model.epochs", "must be an integer >= 0")
    _check(isinstance(m.patience, int) and m.patience >= 1, diags,
           "model.patience", "must be an integer >= 1")
    _check(m.dtype in ("float32", "float64"), diags,
           "model.dtype", "must be float32 or float64")

    if diags:
        raise ConfigError(diags)
    return cfg
