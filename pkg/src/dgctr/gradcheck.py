"""Finite-difference verification of the full-stack gradients on a builtin
synthetic fixture (float64, central differences)."""

from __future__ import annotations

import json
import tempfile

import numpy as np

from . import data, graphs, model, runtime, synthgen
from .config import RunConfig


def build_fixture(aggregator: str, seed: int = 12):
    """Tiny end-to-end model: synthetic log -> bundle -> graphs -> model.

    d=6, two-layer propagation everywhere, MLP [8, 1], float64.
    """
    cfg = RunConfig()
    cfg.seed = seed
    cfg.propagation.aggregator = aggregator
    cfg.propagation.attr_layers = 2
    cfg.propagation.stage1_layers = 2
    cfg.propagation.stage2_layers = 1
    cfg.model.embedding_dim = 6
    cfg.model.mlp = [8, 1]
    cfg.model.dtype = "float64"
    cfg.model.dropout = 0.0
    cfg.model.l2 = 0.0

    synth = synthgen.SynthConfig(
        n_users=10,
        n_items=12,
        user_attr_cards=[3],
        item_attr_cards=[3],
        min_length=5,
        max_length=8,
        seed=seed,
    )
    with tempfile.TemporaryDirectory() as tmp:
        log_path, schema_path = synthgen.generate(synth, tmp)
        schema = data.Schema.from_json(json.loads(schema_path.read_text()))
        ds = data.parse_interactions(log_path, schema)
    ds = data.split_leave_last(ds)
    train = data.sample_negatives(ds.train, 2, seed, ds)
    gdict = runtime.build_all_graphs(ds, graphs.SimilarityParams(k=3))
    mdl = runtime.make_model(ds.vocabulary, gdict, cfg)
    split = model.encode_instances(train, ds.vocabulary)
    return mdl, split


def _param_class(name: str) -> str:
    if name == "embed":
        return "embed"
    if name.startswith("attr/"):
        return "attr_w"
    if name.startswith("stage1/"):
        return "stage1_w"
    if name.startswith("stage2/"):
        return "stage2_w"
    if name.startswith("mlp/w"):
        return "mlp_w"
    return "mlp_b"


def run_grad_check(
    aggregator: str,
    eps: float = 1e-4,
    coords_per_param: int = 8,
    seed: int = 12,
) -> dict[str, float]:
    """Max relative error per parameter class (central differences vs the
    analytic backward pass) on the builtin fixture."""
    mdl, split = build_fixture(aggregator, seed)
    ops = mdl.pipeline.operators(training=False)
    slots = split.slots
    labels = split.labels

    def loss_only() -> float:
        loss, _, _, _ = mdl.forward_backward(ops, slots, labels, None, False)
        return loss

    _, _, grads, _ = mdl.forward_backward(ops, slots, labels, None, False)

    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}
    for name, p in mdl.state.params.items():
        g = grads.get(name)
        if g is None:
            continue
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        n = flat_p.shape[0]
        coords = (
            np.arange(n)
            if n <= coords_per_param
            else rng.choice(n, size=coords_per_param, replace=False)
        )
        for c in coords:
            orig = flat_p[c]
            flat_p[c] = orig + eps
            lp = loss_only()
            flat_p[c] = orig - eps
            lm = loss_only()
            flat_p[c] = orig
            fd = (lp - lm) / (2 * eps)
            an = float(flat_g[c])
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            cls = _param_class(name)
            worst[cls] = max(worst.get(cls, 0.0), rel)
    return worst


def run_all(eps: float = 1e-4) -> dict[str, dict[str, float]]:
    return {
        kind: run_grad_check(kind, eps) for kind in ("lightgcn", "gcn", "ngcf")
    }
