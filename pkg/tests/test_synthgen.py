"""Synthetic generator: format, tails, determinism, pipeline compatibility."""

import json

import numpy as np
import pytest

from dgctr import data, graphs, model, runtime, synthgen
from dgctr.config import RunConfig
from dgctr.synthgen import SynthConfig, generate


def _parse(tmp_path, cfg):
    log_path, schema_path = generate(cfg, tmp_path)
    schema = data.Schema.from_json(json.loads(schema_path.read_text()))
    return data.parse_interactions(log_path, schema)


def test_minimal_single_user_item_log(tmp_path):
    cfg = SynthConfig(
        n_users=1, n_items=1, user_attr_cards=[2], item_attr_cards=[2],
        min_length=4, max_length=4, seed=0,
    )
    log_path, _ = generate(cfg, tmp_path)
    lines = log_path.read_text().strip().splitlines()
    assert len(lines) == 5  # header + 4 events
    ds = _parse(tmp_path, cfg)
    assert ds.n_users == 1 and ds.n_items == 1
    assert len(ds.user_events[0]) == 4


def test_behavior_lengths_heavy_tailed(tmp_path):
    cfg = SynthConfig(n_users=1000, n_items=400, behavior_exponent=2.0,
                      max_length=200, seed=1)
    ds = _parse(tmp_path, cfg)
    lengths = np.array([len(ev) for ev in ds.user_events], dtype=float)
    assert np.median(lengths) < lengths.mean()


def test_same_seed_identical_logs(tmp_path):
    cfg = SynthConfig(n_users=30, n_items=25, seed=9)
    p1, _ = generate(cfg, tmp_path / "a")
    p2, _ = generate(cfg, tmp_path / "b")
    assert p1.read_bytes() == p2.read_bytes()


def test_different_seed_different_logs(tmp_path):
    p1, _ = generate(SynthConfig(n_users=30, n_items=25, seed=1), tmp_path / "a")
    p2, _ = generate(SynthConfig(n_users=30, n_items=25, seed=2), tmp_path / "b")
    assert p1.read_bytes() != p2.read_bytes()


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(behavior_exponent=1.0).validate()
    with pytest.raises(ValueError):
        SynthConfig(click_noise=0.6).validate()
    with pytest.raises(ValueError):
        SynthConfig(n_users=0).validate()
    with pytest.raises(TypeError):
        SynthConfig.from_json({"bogus_key": 1})


def test_generated_data_survives_full_pipeline(tmp_path):
    scfg = SynthConfig(n_users=50, n_items=50, seed=3)
    ds = _parse(tmp_path, scfg)
    ds = data.split_leave_last(ds)
    assert ds.dropped_users == 0  # min_length covers the T>=4 rule
    train = data.sample_negatives(ds.train, 5, 0, ds)
    gdict = runtime.build_all_graphs(ds, graphs.SimilarityParams(k=5))
    cfg = RunConfig()
    cfg.model.embedding_dim = 6
    cfg.model.mlp = [8, 1]
    mdl = runtime.make_model(ds.vocabulary, gdict, cfg)
    split = model.encode_instances(train, ds.vocabulary)
    vsplit = model.encode_instances(
        data.sample_negatives(ds.val, 5, 1, ds), ds.vocabulary
    )
    result = model.train(mdl, split, vsplit, epochs=1, batch_size=64,
                         lr=1e-3, seed=0)
    assert len(result.epochs_log) == 1
