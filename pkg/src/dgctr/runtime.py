"""Glue between artifacts and the in-memory stack: graph construction from a
dataset, pipeline/model assembly from a run config, and evaluation helpers.
"""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import aggregators as agg
from . import attrconv, data, graphs, metrics, model
from .collabconv import StagePlan
from .config import RunConfig

log = logging.getLogger(__name__)


def build_all_graphs(
    dataset: data.Dataset, sim: graphs.SimilarityParams
) -> dict[str, graphs.SparseGraph]:
    """The five construction steps plus the merged collaborative graph.

    Attribute graphs span the global feature-index space; uu/vv are local to
    their entity ranges and uv/cf cover [0, M+N).
    """
    vocab = dataset.vocabulary
    m, n = vocab.n_users, vocab.n_items
    item_start = vocab.range_of("item").start
    out: dict[str, graphs.SparseGraph] = {}

    for name in vocab.attr_field_names("user"):
        spec = vocab.range_of(name)
        assignments = {
            u: [a for a in attrs if spec.start <= a < spec.end]
            for u, attrs in enumerate(dataset.user_attr_assign)
        }
        out[f"g_{name}"] = graphs.build_attribute_graph(
            assignments, vocab.n_features, graphs.UA
        )
    for name in vocab.attr_field_names("item"):
        spec = vocab.range_of(name)
        assignments = {
            item_start + v: [a for a in attrs if spec.start <= a < spec.end]
            for v, attrs in enumerate(dataset.item_attr_assign)
        }
        out[f"g_{name}"] = graphs.build_attribute_graph(
            assignments, vocab.n_features, graphs.VB
        )

    ua_fields = [vocab.range_of(f) for f in vocab.attr_field_names("user")]
    if ua_fields:
        ua_lo = min(f.start for f in ua_fields)
        ua_hi = max(f.end for f in ua_fields)
    else:
        ua_lo = ua_hi = 0
    user_items = [np.unique(x) for x in dataset.user_items_train]
    user_attrs = [
        np.array([a - ua_lo for a in attrs], dtype=np.int64)
        for attrs in dataset.user_attr_assign
    ]
    out["g_uu"] = graphs.build_knn_user_graph(
        user_items, user_attrs, sim, n, ua_hi - ua_lo
    )
    out["g_vv"] = graphs.build_transition_graph(
        data.train_window_sequences(dataset), n
    )
    out["g_uv"] = graphs.build_bipartite(user_items, m, n)
    out["g_cf"] = graphs.merge_collaborative(
        out["g_uu"], out["g_uv"], out["g_vv"], m, n
    )
    return out


def save_graphs(gdict: dict[str, graphs.SparseGraph], out_dir) -> None:
    gdir = Path(out_dir)
    gdir.mkdir(parents=True, exist_ok=True)
    for name, g in gdict.items():
        graphs.save_graph(g, gdir / f"{name}.bin")


def load_graphs(graph_dir) -> dict[str, graphs.SparseGraph]:
    gdir = Path(graph_dir)
    out = {}
    for path in sorted(gdir.glob("*.bin")):
        out[path.stem] = graphs.load_graph(path)
    return out


def build_pipeline(
    vocab,
    gdict: dict[str, graphs.SparseGraph],
    cfg: RunConfig,
    ablate: str,
    rng: np.random.Generator,
    dtype,
) -> model.Pipeline:
    """Field plans + stage plan with freshly initialized aggregator weights
    (drawn from ``rng`` in a fixed order)."""
    p = cfg.propagation
    dim = cfg.model.embedding_dim

    def make_params(layers: int) -> agg.AggregatorParams:
        return agg.init_params(
            p.aggregator, dim, layers, rng, p.activation, p.leaky_slope, dtype
        )

    plans = []
    for side in ("user", "item"):
        ent = vocab.range_of("user" if side == "user" else "item")
        for name in vocab.attr_field_names(side):
            spec = vocab.range_of(name)
            plans.append(
                attrconv.FieldPlan(
                    side=side,
                    name=name,
                    graph=gdict[f"g_{name}"],
                    entity_range=(ent.start, ent.end),
                    attr_range=(spec.start, spec.end),
                    params=make_params(p.attr_layers),
                    layers=p.attr_layers,
                )
            )
    stage_plan = StagePlan(
        stage1_layers=p.stage1_layers,
        stage2_layers=p.stage2_layers,
        params1=make_params(p.stage1_layers),
        params2=make_params(p.stage2_layers),
    )
    return model.Pipeline(
        plans=plans,
        stage_plan=stage_plan,
        cf_graph=gdict["g_cf"],
        n_users=vocab.n_users,
        n_items=vocab.n_items,
        mode=p.pool,
        ablate=ablate,
        fanout=p.fanout,
        sample_threshold=p.sample_threshold,
    )


def make_model(
    vocab, gdict, cfg: RunConfig, ablate: str = "none", base_only: bool = False
) -> model.Model:
    dtype = np.float32 if cfg.model.dtype == "float32" else np.float64
    rng = np.random.default_rng(cfg.seed)
    mode = "base-only" if base_only else ablate
    pipeline = build_pipeline(vocab, gdict, cfg, mode, rng, dtype)
    n_fields = len(model.field_layout(vocab))
    mdl = model.build_model(
        pipeline,
        vocab.n_features,
        cfg.model.embedding_dim,
        list(cfg.model.mlp),
        n_fields,
        cfg.seed,
        rng,
        l2=cfg.model.l2,
        dropout=cfg.model.dropout,
        dtype=dtype,
    )
    mdl.state.meta = {
        "ablate": mode,
        "mlp": list(cfg.model.mlp),
        "embedding_dim": cfg.model.embedding_dim,
        "aggregator": cfg.propagation.aggregator,
        "pool": cfg.propagation.pool,
    }
    return mdl


def restore_model(vocab, gdict, cfg: RunConfig, checkpoint_path) -> model.Model:
    """Rebuild a model and load a checkpoint into its live arrays."""
    params, m, v, step, seed, meta, _ = model.load_checkpoint(checkpoint_path)
    mdl = make_model(
        vocab,
        gdict,
        cfg,
        ablate=meta.get("ablate", "none"),
        base_only=meta.get("ablate") == "base-only",
    )
    for k, arr in params.items():
        mdl.state.params[k][...] = arr
    for k, arr in m.items():
        mdl.state.adam_m[k][...] = arr
    for k, arr in v.items():
        mdl.state.adam_v[k][...] = arr
    mdl.state.step = step
    mdl.state.seed = seed
    mdl.state.meta = meta
    return mdl


def evaluate_split(
    mdl: model.Model, split: model.EncodedSplit
) -> tuple[np.ndarray, metrics.EvalReport]:
    ops = mdl.pipeline.operators(training=False)
    scores = mdl.score(ops, split.slots)
    return scores, metrics.evaluate(scores, split.labels)
