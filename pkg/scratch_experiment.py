"""Scratch driver for tuning the directional experiment (not shipped)."""

import json
import sys
import tempfile
import time

import numpy as np

from dgctr import data, graphs, metrics, model, runtime, synthgen
from dgctr.config import RunConfig

GEN = dict(
    latent_dim=8,
    attribute_affinity=0.9,
    user_affinity=0.5,
    item_affinity=0.9,
    behavior_exponent=2.0,
    min_length=4,
    max_length=50,
    click_noise=0.01,
    temperature=0.15,
)
TRAIN = dict(lr=5e-3, epochs=30, patience=6, l2=1e-4, dropout=0.0,
             stage1_layers=2, stage2_layers=2, attr_layers=1, k=10)


def make_dataset(seed, m=500, n=500):
    scfg = synthgen.SynthConfig(
        n_users=m,
        n_items=n,
        user_attr_cards=[max(8, m // 40), max(5, m // 100)],
        item_attr_cards=[max(8, n // 40), max(5, n // 100)],
        seed=seed,
        **GEN,
    )
    with tempfile.TemporaryDirectory() as tmp:
        log_path, schema_path = synthgen.generate(scfg, tmp)
        schema = data.Schema.from_json(json.loads(open(schema_path).read()))
        ds = data.parse_interactions(log_path, schema)
    ds = data.split_leave_last(ds)
    ds.train = data.sample_negatives(ds.train, 10, seed * 3 + 1, ds)
    ds.val = data.sample_negatives(ds.val, 10, seed * 3 + 2, ds)
    ds.test = data.sample_negatives(ds.test, 10, seed * 3 + 3, ds)
    gdict = runtime.build_all_graphs(ds, graphs.SimilarityParams(k=TRAIN["k"]))
    return ds, gdict


def run_variant(ds, gdict, seed, splits, ablate="none", base_only=False):
    cfg = RunConfig()
    cfg.seed = seed
    cfg.model.embedding_dim = 10
    cfg.model.mlp = [64, 64, 1]
    cfg.model.batch_size = 2000
    cfg.model.lr = TRAIN["lr"]
    cfg.model.l2 = TRAIN["l2"]
    cfg.model.dropout = TRAIN["dropout"]
    cfg.propagation.attr_layers = TRAIN["attr_layers"]
    cfg.propagation.stage1_layers = TRAIN["stage1_layers"]
    cfg.propagation.stage2_layers = TRAIN["stage2_layers"]
    mdl = runtime.make_model(ds.vocabulary, gdict, cfg, ablate=ablate, base_only=base_only)
    tr, va, te = splits
    model.train(mdl, tr, va, epochs=TRAIN["epochs"], batch_size=cfg.model.batch_size,
                lr=cfg.model.lr, seed=seed, patience=TRAIN["patience"])
    scores, report = runtime.evaluate_split(mdl, te)
    return scores, report


def main(m=500, seeds=(0, 1, 2)):
    variants = ["base", "attr-only", "uu-vv-only", "uv-only", "full"]
    results = {v: [] for v in variants}
    lls = {v: [] for v in variants}
    t0 = time.time()
    for seed in seeds:
        ds, gdict = make_dataset(seed, m=m, n=m)
        splits = (model.encode_instances(ds.train, ds.vocabulary),
                  model.encode_instances(ds.val, ds.vocabulary),
                  model.encode_instances(ds.test, ds.vocabulary))
        for v in variants:
            ablate = {"base": "none", "full": "none"}.get(v, v)
            t1 = time.time()
            scores, report = run_variant(ds, gdict, seed, splits, ablate=ablate,
                                         base_only=(v == "base"))
            print(f"seed={seed} {v:11s} auc={report.auc:.4f} ll={report.logloss:.4f} ({time.time()-t1:.1f}s)", flush=True)
            results[v].append(report.auc)
            lls[v].append(report.logloss)
    print("== averages ==")
    for v in variants:
        print(f"{v:11s} auc={np.mean(results[v]):.4f} ll={np.mean(lls[v]):.4f}")
    print(f"total {time.time()-t0:.1f}s")


if __name__ == "__main__":
    m = int(sys.argv[1]) if len(sys.argv) > 1 else 500
    main(m=m)
