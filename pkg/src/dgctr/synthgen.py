"""Synthetic interaction-log generator with controllable feature and
behavior sparsity.

Users and items carry latent vectors; attribute values act as latent
prototypes so attribute-sharing entities are genuinely similar (the
attribute graphs carry signal), behavior lengths follow a power law (many
short histories), and clicks come from latent affinity plus noise.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Schema


@dataclass
class SynthConfig:
    n_users: int = 200
    n_items: int = 200
    latent_dim: int = 8
    user_attr_cards: list[int] = field(default_factory=lambda: [8, 5])
    item_attr_cards: list[int] = field(default_factory=lambda: [8, 5])
    attribute_affinity: float = 0.8  # 0 = attrs carry no latent signal
    # optional per-side overrides; None falls back to attribute_affinity.
    # Letting item semantics be strongly attribute-driven while user tastes
    # are only partially so makes behaviors the main user-information
    # channel, which is what the sparsity case studies exercise.
    user_affinity: float | None = None
    item_affinity: float | None = None
    behavior_exponent: float = 2.0  # power-law tail, must be > 1
    min_length: int = 6
    max_length: int = 50
    click_noise: float = 0.05
    n_context_values: int = 8
    temperature: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if self.n_users < 1 or self.n_items < 1:
            raise ValueError("n_users and n_items must be >= 1")
        if self.behavior_exponent <= 1:
            raise ValueError("behavior_exponent must be > 1")
        if not 0 <= self.click_noise < 0.5:
            raise ValueError("click_noise must be in [0, 0.5)")
        if any(c < 1 for c in self.user_attr_cards + self.item_attr_cards):
            raise ValueError("attribute cardinalities must be >= 1")

    @classmethod
    def from_json(cls, obj: dict) -> "SynthConfig":
        cfg = cls(**obj)
        cfg.validate()
        return cfg


def _entity_latents(rng, n, cards, prototypes, affinity, latent_dim):
    attrs = np.stack(
        [rng.integers(0, c, size=n) for c in cards], axis=1
    ) if cards else np.zeros((n, 0), dtype=np.int64)
    noise = rng.normal(size=(n, latent_dim))
    lat = (1 - affinity) * noise
    if cards:
        proto = np.mean(
            [prototypes[f][attrs[:, f]] for f in range(len(cards))], axis=0
        )
        lat = lat + affinity * proto
    lat /= np.maximum(np.linalg.norm(lat, axis=1, keepdims=True), 1e-12)
    return attrs, lat


def _behavior_lengths(rng, cfg: SynthConfig) -> np.ndarray:
    u = rng.random(cfg.n_users)
    alpha = cfg.behavior_exponent - 1.0
    raw = cfg.min_length * np.power(1.0 - u, -1.0 / alpha)
    cap = min(cfg.max_length, cfg.n_items)
    # min_length wins over the item-count cap (tiny catalogs repeat clicks)
    return np.maximum(
        np.minimum(np.floor(raw).astype(np.int64), cap), cfg.min_length
    )


def generate(cfg: SynthConfig, out_dir) -> tuple[Path, Path]:
    """Write log.csv and schema.json under ``out_dir``; returns both paths.

    Same config and seed give a byte-identical log.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    user_protos = [
        rng.normal(size=(c, cfg.latent_dim)) for c in cfg.user_attr_cards
    ]
    item_protos = [
        rng.normal(size=(c, cfg.latent_dim)) for c in cfg.item_attr_cards
    ]
    u_aff = cfg.attribute_affinity if cfg.user_affinity is None else cfg.user_affinity
    i_aff = cfg.attribute_affinity if cfg.item_affinity is None else cfg.item_affinity
    u_attrs, u_lat = _entity_latents(
        rng, cfg.n_users, cfg.user_attr_cards, user_protos, u_aff, cfg.latent_dim
    )
    i_attrs, i_lat = _entity_latents(
        rng, cfg.n_items, cfg.item_attr_cards, item_protos, i_aff, cfg.latent_dim
    )
    lengths = _behavior_lengths(rng, cfg)

    rows = []
    for u in range(cfg.n_users):
        t_u = int(lengths[u])
        scores = (u_lat[u] @ i_lat.T) / cfg.temperature
        gumbel = -np.log(-np.log(rng.random(cfg.n_items)))
        ranked = np.argsort(-(scores + gumbel), kind="mergesort")
        n_pick = min(t_u, cfg.n_items)
        picks = list(ranked[:n_pick])
        rest = list(ranked[n_pick:])
        for pos in range(n_pick):
            if rest and rng.random() < cfg.click_noise:
                swap = int(rng.integers(0, len(rest)))
                picks[pos], rest[swap] = rest[swap], picks[pos]
        while len(picks) < t_u:  # more behaviors than items: repeat clicks
            picks.append(picks[len(picks) % n_pick])
        # event order must not correlate with affinity rank, otherwise the
        # leave-last-out targets would all be the weakest picks
        picks = [picks[i] for i in rng.permutation(len(picks))]
        for t, v in enumerate(picks):
            ctx = int(rng.integers(0, cfg.n_context_values))
            rows.append((u, int(v), t, ctx))

    log_path = out / "log.csv"
    header = (
        ["user_id", "item_id", "ts"]
        + [f"ua{f}" for f in range(len(cfg.user_attr_cards))]
        + [f"ia{f}" for f in range(len(cfg.item_attr_cards))]
        + ["ctx0"]
    )
    with open(log_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for u, v, t, ctx in rows:
            w.writerow(
                [f"u{u}", f"i{v}", t]
                + [f"a{f}_{u_attrs[u, f]}" for f in range(len(cfg.user_attr_cards))]
                + [f"b{f}_{i_attrs[v, f]}" for f in range(len(cfg.item_attr_cards))]
                + [f"c{ctx}"]
            )

    schema = Schema(
        user="user_id",
        item="item_id",
        timestamp="ts",
        user_attrs=[(f"ua{f}", f"ua{f}") for f in range(len(cfg.user_attr_cards))],
        item_attrs=[(f"ia{f}", f"ia{f}") for f in range(len(cfg.item_attr_cards))],
        context=[],
    )
    schema_doc = schema.to_json()
    schema_doc["context"] = [
        {"name": "ctx0", "column": "ctx0", "type": "categorical"}
    ]
    schema_path = out / "schema.json"
    schema_path.write_text(json.dumps(schema_doc, indent=2, sort_keys=True))
    return log_path, schema_path
