"""Command-line surface: synth, ingest, build-graphs, train, eval,
slice-report, grad-check, dump-embeddings, graphs-stats.

All artifacts live under --out with fixed filenames.  Failures print a
machine-readable JSON error: exit 2 for invalid configuration (with
field-level diagnostics), 3 for missing artifacts, 1 otherwise.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data, gradcheck, graphs, metrics, model, runtime, synthgen
from .config import ABLATE_MODES, ConfigError, RunConfig, load_config

log = logging.getLogger("dgctr")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_MISSING = 3


class MissingArtifact(FileNotFoundError):
    pass


def _fail(code: int, kind: str, message, **extra) -> int:
    doc = {"error": kind, "message": message, **extra}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


def _need(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifact(f"{what} not found: {path}")
    return path


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    return cfg


def _load_bundle(out: Path) -> data.Dataset:
    _need(out / "vocab.json", "dataset bundle (run `ingest`)")
    return data.load_bundle(out)


def _load_graphs(out: Path):
    gdir = _need(out / "graphs", "graph directory (run `build-graphs`)")
    gdict = runtime.load_graphs(gdir)
    if "g_cf" not in gdict:
        raise MissingArtifact(f"collaborative graph not found under {gdir}")
    return gdict


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_synth(args, cfg: RunConfig, out: Path) -> int:
    doc = dict(cfg.synth)
    if args.seed is not None:  # explicit flag beats the synth section
        doc["seed"] = args.seed
    else:
        doc.setdefault("seed", cfg.seed)
    scfg = synthgen.SynthConfig.from_json(doc)
    log_path, schema_path = synthgen.generate(scfg, out)
    print(json.dumps({"log": str(log_path), "schema": str(schema_path)}))
    return EXIT_OK


def cmd_ingest(args, cfg: RunConfig, out: Path) -> int:
    log_path = Path(cfg.data.log) if cfg.data.log else out / "log.csv"
    schema_path = Path(cfg.data.schema) if cfg.data.schema else out / "schema.json"
    _need(log_path, "interaction log")
    _need(schema_path, "schema")
    schema = data.Schema.from_json(json.loads(schema_path.read_text()))
    ds = data.parse_interactions(log_path, schema)
    ds = data.split_leave_last(ds)
    ds.train = data.sample_negatives(ds.train, cfg.data.n_neg, cfg.seed * 3 + 1, ds)
    ds.val = data.sample_negatives(ds.val, cfg.data.n_neg, cfg.seed * 3 + 2, ds)
    ds.test = data.sample_negatives(ds.test, cfg.data.n_neg, cfg.seed * 3 + 3, ds)
    data.save_bundle(ds, out)
    print(
        json.dumps(
            {
                "users": ds.n_users,
                "items": ds.n_items,
                "features": ds.vocabulary.n_features,
                "train": len(ds.train),
                "val": len(ds.val),
                "test": len(ds.test),
                "dropped_users": ds.dropped_users,
                "rejected_rows": ds.rejected_rows,
            }
        )
    )
    return EXIT_OK


def cmd_build_graphs(args, cfg: RunConfig, out: Path) -> int:
    ds = _load_bundle(out)
    sim = graphs.SimilarityParams(
        cfg.similarity.alpha1, cfg.similarity.alpha2, cfg.similarity.k
    )
    gdict = runtime.build_all_graphs(ds, sim)
    runtime.save_graphs(gdict, out / "graphs")
    print(
        json.dumps(
            {name: g.edge_count for name, g in sorted(gdict.items())},
            sort_keys=True,
        )
    )
    return EXIT_OK


def cmd_train(args, cfg: RunConfig, out: Path) -> int:
    ds = _load_bundle(out)
    gdict = _load_graphs(out)
    mdl = runtime.make_model(
        ds.vocabulary, gdict, cfg, ablate=args.ablate, base_only=args.base_only
    )
    train_split = model.encode_instances(ds.train, ds.vocabulary)
    val_split = model.encode_instances(ds.val, ds.vocabulary)
    result = model.train(
        mdl,
        train_split,
        val_split,
        epochs=cfg.model.epochs,
        batch_size=cfg.model.batch_size,
        lr=cfg.model.lr,
        seed=cfg.seed,
        patience=cfg.model.patience,
    )
    cfg_hash = model.config_hash(cfg.to_doc())
    model.save_checkpoint(out / "checkpoint.bin", result.state, cfg_hash)
    with open(out / "metrics.jsonl", "w") as f:
        for entry in result.epochs_log:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    # wall-clock timings are run-dependent; kept out of the deterministic log
    with open(out / "timings.jsonl", "w") as f:
        for entry in result.timings:
            f.write(json.dumps(entry, sort_keys=True) + "\n")
    print(
        json.dumps(
            {
                "checkpoint": str(out / "checkpoint.bin"),
                "epochs_run": len(result.epochs_log),
                "best_epoch": result.best_epoch,
                "best_val_auc": max(
                    (e["val_auc"] for e in result.epochs_log), default=None
                ),
            }
        )
    )
    return EXIT_OK


def _restored(cfg: RunConfig, out: Path):
    ds = _load_bundle(out)
    gdict = _load_graphs(out)
    ckpt = _need(out / "checkpoint.bin", "checkpoint (run `train`)")
    mdl = runtime.restore_model(ds.vocabulary, gdict, cfg, ckpt)
    return ds, gdict, mdl


def cmd_eval(args, cfg: RunConfig, out: Path) -> int:
    ds, _, mdl = _restored(cfg, out)
    split = model.encode_instances(ds.test, ds.vocabulary)
    _, report = runtime.evaluate_split(mdl, split)
    (out / "eval.json").write_text(report.to_json())
    print(report.to_json())
    return EXIT_OK


def cmd_slice_report(args, cfg: RunConfig, out: Path) -> int:
    ds, _, mdl = _restored(cfg, out)
    split = model.encode_instances(ds.test, ds.vocabulary)
    scores, _ = runtime.evaluate_split(mdl, split)
    freq_report = metrics.slice_by_feature_frequency(
        ds.test, scores, split.labels, ds.vocabulary.frequency
    )
    len_report = metrics.slice_by_behavior_length(ds.test, scores, split.labels)
    (out / "slices_frequency.tsv").write_text(metrics.slice_table(freq_report))
    (out / "slices_length.tsv").write_text(metrics.slice_table(len_report))
    (out / "slices.json").write_text(
        json.dumps(
            {
                "feature_frequency": freq_report.to_dict(),
                "behavior_length": len_report.to_dict(),
            },
            indent=2,
            sort_keys=True,
        )
    )
    print(metrics.slice_table(len_report), end="")
    return EXIT_OK


def cmd_grad_check(args, cfg: RunConfig, out: Path) -> int:
    results = gradcheck.run_all()
    worst = 0.0
    for kind, classes in results.items():
        for cls, err in sorted(classes.items()):
            print(f"{kind:9s} {cls:9s} max_rel_err={err:.3e}")
            worst = max(worst, err)
    print(f"overall max_rel_err={worst:.3e} (threshold 1e-4)")
    return EXIT_OK if worst < 1e-4 else EXIT_ERROR


def cmd_dump_embeddings(args, cfg: RunConfig, out: Path) -> int:
    _, _, mdl = _restored(cfg, out)
    ops = mdl.pipeline.operators(training=False)
    table, _ = mdl.pipeline.enhanced_table(mdl.state.params["embed"], ops)
    model.save_embedding_table(out / "embeddings.bin", table)
    print(
        json.dumps(
            {
                "embeddings": str(out / "embeddings.bin"),
                "count": int(table.shape[0]),
                "dim": int(table.shape[1]),
            }
        )
    )
    return EXIT_OK


def cmd_graphs_stats(args, cfg: RunConfig, out: Path) -> int:
    gdict = _load_graphs(out)
    graphs.write_stats(gdict, out / "graph_stats.json")
    summary = {
        name: {"nodes": g.node_count, "edges": g.edge_count}
        for name, g in sorted(gdict.items())
    }
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dgctr",
        description="Dual-graph embedding enhancement for CTR prediction",
    )
    parser.add_argument("--config", help="path to run-config JSON")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument("--threads", type=int, default=None)
    parser.add_argument("--out", default="out", help="artifact directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", help="generate a synthetic interaction log")
    sub.add_parser("ingest", help="parse + split + sample into a bundle")
    sub.add_parser("build-graphs", help="construct the five graphs")
    p_train = sub.add_parser("train", help="train the CTR model")
    p_train.add_argument(
        "--ablate",
        choices=ABLATE_MODES,
        default="none",
        help="graph ablation variant",
    )
    p_train.add_argument(
        "--base-only",
        action="store_true",
        help="disable both graph modules (inner-product base model)",
    )
    sub.add_parser("eval", help="evaluate the checkpoint on the test split")
    sub.add_parser("slice-report", help="sparsity slice metrics")
    sub.add_parser("grad-check", help="finite-difference gradient suite")
    sub.add_parser("dump-embeddings", help="write the enhanced table")
    sub.add_parser("graphs-stats", help="degree histograms per graph")
    return parser


_COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "build-graphs": cmd_build_graphs,
    "train": cmd_train,
    "eval": cmd_eval,
    "slice-report": cmd_slice_report,
    "grad-check": cmd_grad_check,
    "dump-embeddings": cmd_dump_embeddings,
    "graphs-stats": cmd_graphs_stats,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        cfg = _load_cfg(args)
    except ConfigError as e:
        return _fail(
            EXIT_CONFIG,
            "invalid_config",
            "configuration rejected",
            diagnostics=[{"field": p, "problem": m} for p, m in e.diagnostics],
        )
    try:
        return _COMMANDS[args.command](args, cfg, out)
    except MissingArtifact as e:
        return _fail(EXIT_MISSING, "missing_artifact", str(e))
    except (data.DataError, graphs.GraphError, model.TrainingError, ValueError) as e:
        return _fail(EXIT_ERROR, type(e).__name__, str(e))


if __name__ == "__main__":
    sys.exit(main())
