"""Inner-product layer, MLP, logloss, and the training loop."""

import json
import tempfile
from pathlib import Path

import numpy as np
import pytest

from dgctr import data, graphs, model, runtime, synthgen
from dgctr.config import RunConfig
from dgctr.model import (
    TrainingError,
    inner_product_layer,
    logloss,
    mlp_forward,
    pool_multivalued,
)

from oracles import finite_difference, rel_err


# -- pool_multivalued ---------------------------------------------------------


def test_pool_single_vector():
    v = np.array([1.0, 2.0])
    assert np.array_equal(pool_multivalued([v]), v)


def test_pool_two_vectors():
    out = pool_multivalued([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
    assert np.array_equal(out, [0.5, 0.5])


def test_empty_slot_gives_zero_vector_in_batch_path():
    from dgctr import kernels

    table = np.ones((3, 4))
    flat = np.array([], dtype=np.int64)
    offsets = np.array([0, 0], dtype=np.int64)
    out = kernels.segment_mean(flat, offsets, table)
    assert np.array_equal(out, np.zeros((1, 4)))


# -- inner product layer ------------------------------------------------------


def test_inner_product_orthogonal_pair():
    out = inner_product_layer(np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert np.array_equal(out, [1, 0, 0, 1, 0])


def test_inner_product_parallel_pair():
    out = inner_product_layer(np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert np.array_equal(out, [1, 1, 1, 1, 2])


def test_inner_product_matches_naive_loop():
    rng = np.random.default_rng(0)
    bundle = rng.normal(size=(3, 4))
    out = inner_product_layer(bundle)
    assert out.shape[0] == 3 * 4 + 3
    naive = []
    for i in range(3):
        for j in range(i + 1, 3):
            naive.append(float(bundle[i] @ bundle[j]))
    assert np.allclose(out[12:], naive, atol=1e-12)


def test_inner_product_single_field_rejected():
    with pytest.raises(ValueError):
        inner_product_layer(np.ones((1, 4)))


def test_batched_representation_matches_single():
    rng = np.random.default_rng(1)
    bundle = rng.normal(size=(5, 4, 3))
    rep, _ = model.representation_forward(bundle)
    for b in range(5):
        assert np.allclose(rep[b], inner_product_layer(bundle[b]), atol=1e-12)


# -- MLP ----------------------------------------------------------------------


def test_mlp_zero_weights_gives_half():
    w = [np.zeros((4, 3)), np.zeros((1, 4))]
    b = [np.zeros(4), np.zeros(1)]
    assert mlp_forward(np.array([1.0, 2.0, 3.0]), w, b) == pytest.approx(0.5)


def test_mlp_huge_bias_clamps():
    w = [np.zeros((1, 2))]
    b = [np.full(1, 50.0)]
    assert mlp_forward(np.array([0.0, 0.0]), w, b) == pytest.approx(1 - 1e-7)


def test_mlp_hand_computed_two_layer():
    w1 = np.array([[1.0, -1.0], [0.5, 0.5]])
    b1 = np.array([0.25, -0.25])
    w2 = np.array([[2.0, -1.0]])
    b2 = np.array([0.1])
    x = np.array([1.0, 2.0])
    h = np.maximum(w1 @ x + b1, 0)  # [0, 0.75] -> relu [0, 0.75]
    z = (w2 @ h + b2)[0]  # -0.65
    expect = 1 / (1 + np.exp(-z))
    got = mlp_forward(x, [w1, w2], [b1, b2])
    assert got == pytest.approx(expect, abs=1e-12)


def test_mlp_dimension_mismatch():
    with pytest.raises(ValueError):
        mlp_forward(np.ones(3), [np.zeros((2, 4))], [np.zeros(2)])


# -- logloss ------------------------------------------------------------------


def test_logloss_uniform_predictor():
    assert logloss([0.5, 0.5], [1, 0]) == pytest.approx(np.log(2), abs=1e-12)


def test_logloss_perfect_at_clamp():
    assert logloss([1 - 1e-7], [1]) == pytest.approx(1e-7, rel=1e-6)


def test_logloss_hand_case():
    got = logloss([0.9, 0.2], [1, 0])
    assert got == pytest.approx(-(np.log(0.9) + np.log(0.8)) / 2, abs=1e-12)
    assert got == pytest.approx(0.164252, abs=1e-6)


def test_logloss_empty_rejected():
    with pytest.raises(ValueError):
        logloss([], [])


def test_logloss_out_of_range_rejected():
    with pytest.raises(ValueError):
        logloss([0.0, 0.5], [0, 1])


# -- full model fixture -------------------------------------------------------


def _tiny_setup(seed=0, aggregator="lightgcn", dtype="float64", mlp=(8, 1),
                ablate="none", base_only=False, l2=0.0, dropout=0.0):
    cfg = RunConfig()
    cfg.seed = seed
    cfg.propagation.aggregator = aggregator
    cfg.model.embedding_dim = 6
    cfg.model.mlp = list(mlp)
    cfg.model.dtype = dtype
    cfg.model.l2 = l2
    cfg.model.dropout = dropout
    scfg = synthgen.SynthConfig(
        n_users=12, n_items=14, user_attr_cards=[3], item_attr_cards=[4],
        min_length=5, max_length=9, seed=seed,
    )
    with tempfile.TemporaryDirectory() as tmp:
        log_path, schema_path = synthgen.generate(scfg, tmp)
        schema = data.Schema.from_json(json.loads(Path(schema_path).read_text()))
        ds = data.parse_interactions(log_path, schema)
    ds = data.split_leave_last(ds)
    ds.train = data.sample_negatives(ds.train, 3, seed, ds)
    ds.val = data.sample_negatives(ds.val, 3, seed + 1, ds)
    gdict = runtime.build_all_graphs(ds, graphs.SimilarityParams(k=3))
    mdl = runtime.make_model(ds.vocabulary, gdict, cfg, ablate=ablate,
                             base_only=base_only)
    return cfg, ds, gdict, mdl


def test_backward_zero_mlp_gives_mean_residual_bias_grad():
    cfg, ds, gdict, mdl = _tiny_setup()
    for w in mdl.mlp_weights:
        w[...] = 0.0
    for b in mdl.mlp_biases:
        b[...] = 0.0
    split = model.encode_instances(ds.train, ds.vocabulary)
    ops = mdl.pipeline.operators(training=False)
    _, _, grads, preds = mdl.forward_backward(
        ops, split.slots, split.labels, None, training=False
    )
    # output-layer bias gradient = mean(y_hat - y); y_hat = 0.5 everywhere
    expect = np.mean(0.5 - split.labels)
    assert grads["mlp/b1"][0] == pytest.approx(expect, abs=1e-12)


def test_backward_unreachable_feature_gets_zero_gradient():
    cfg, ds, gdict, mdl = _tiny_setup()
    split = model.encode_instances(ds.train[:4], ds.vocabulary)
    ops = mdl.pipeline.operators(training=False)
    _, _, grads, _ = mdl.forward_backward(
        ops, split.slots, split.labels, None, training=False
    )
    present = set()
    for flat, _ in split.slots:
        present.update(flat.tolist())
    # frontier expansion over every graph: anything reachable may get grad
    reachable = set(present)
    all_graphs = [p.graph for p in mdl.pipeline.plans] + [mdl.pipeline.cf_graph]
    for _ in range(4):  # enough hops for 2-layer stages
        frontier = set()
        for g in all_graphs:
            for node in list(reachable):
                if node < g.node_count:
                    frontier.update(int(x) for x in g.neighbors(node))
        reachable |= frontier
    g_embed = grads["embed"]
    for idx in range(g_embed.shape[0]):
        if idx not in reachable:
            assert np.all(g_embed[idx] == 0.0), idx


@pytest.mark.parametrize("aggregator", ["lightgcn", "gcn", "ngcf"])
def test_full_stack_gradients_vs_finite_differences(aggregator):
    cfg, ds, gdict, mdl = _tiny_setup(aggregator=aggregator)
    split = model.encode_instances(ds.train, ds.vocabulary)
    ops = mdl.pipeline.operators(training=False)
    labels = split.labels

    def loss():
        l, _, _, _ = mdl.forward_backward(ops, split.slots, labels, None, False)
        return l

    _, _, grads, _ = mdl.forward_backward(ops, split.slots, labels, None, False)
    rng = np.random.default_rng(1)
    for name, p in mdl.state.params.items():
        g = grads.get(name)
        if g is None:
            continue
        coords = rng.choice(p.size, min(5, p.size), replace=False)
        fd = finite_difference(loss, p, coords=coords)
        for c, val in fd.items():
            assert rel_err(val, g.reshape(-1)[c]) < 1e-4, (name, c)


def test_l2_zero_matches_unregularized_and_l2_grad_exact():
    cfg, ds, gdict, mdl0 = _tiny_setup(l2=0.0)
    _, _, _, mdl1 = _tiny_setup(l2=0.01)
    split = model.encode_instances(ds.train, ds.vocabulary)
    ops0 = mdl0.pipeline.operators(training=False)
    ops1 = mdl1.pipeline.operators(training=False)
    _, _, g0, _ = mdl0.forward_backward(ops0, split.slots, split.labels, None, False)
    _, _, g1, _ = mdl1.forward_backward(ops1, split.slots, split.labels, None, False)
    # identical seeds -> identical params; the l2 term adds 2*l2*theta
    th = mdl0.state.params["embed"]
    assert np.allclose(g1["embed"] - g0["embed"], 2 * 0.01 * th, atol=1e-12)

    def loss():
        l, _, _, _ = mdl1.forward_backward(ops1, split.slots, split.labels, None, False)
        return l

    rng = np.random.default_rng(2)
    w = mdl1.state.params["mlp/w0"]
    fd = finite_difference(loss, w, coords=rng.choice(w.size, 4, replace=False))
    for c, val in fd.items():
        assert rel_err(val, g1["mlp/w0"].reshape(-1)[c]) < 1e-4


def test_dropout_zero_is_identity_and_eval_never_drops():
    cfg, ds, gdict, mdl = _tiny_setup(dropout=0.5)
    split = model.encode_instances(ds.train, ds.vocabulary)
    ops = mdl.pipeline.operators(training=False)
    rng1 = np.random.default_rng(0)
    l_train1, *_ = mdl.forward_backward(ops, split.slots, split.labels, rng1, True)
    rng2 = np.random.default_rng(99)
    l_eval1, *_ = mdl.forward_backward(ops, split.slots, split.labels, rng2, False)
    l_eval2, *_ = mdl.forward_backward(ops, split.slots, split.labels, None, False)
    assert l_eval1 == l_eval2  # eval ignores the rng entirely
    assert l_train1 != l_eval1  # rate 0.5 changes the training pass

    _, _, _, mdl0 = _tiny_setup(dropout=0.0)
    l_tr0, *_ = mdl0.forward_backward(
        ops, split.slots, split.labels, np.random.default_rng(0), True
    )
    l_ev0, *_ = mdl0.forward_backward(ops, split.slots, split.labels, None, False)
    assert l_tr0 == l_ev0  # rate 0 is the identity


def test_loss_decreases_over_first_steps():
    cfg, ds, gdict, mdl = _tiny_setup()
    split = model.encode_instances(ds.train, ds.vocabulary)
    ops = mdl.pipeline.operators(training=False)
    losses = []
    for _ in range(5):
        loss, _, grads, _ = mdl.forward_backward(
            ops, split.slots, split.labels, None, False
        )
        losses.append(loss)
        for name, p in mdl.state.params.items():
            g = grads.get(name)
            if g is not None:
                p -= 1e-3 * g  # plain full-batch gradient descent
    loss, *_ = mdl.forward_backward(ops, split.slots, split.labels, None, False)
    losses.append(loss)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_train_zero_epochs_returns_initial_state():
    cfg, ds, gdict, mdl = _tiny_setup()
    before = {k: v.copy() for k, v in mdl.state.params.items()}
    split = model.encode_instances(ds.train, ds.vocabulary)
    vsplit = model.encode_instances(ds.val, ds.vocabulary)
    result = model.train(mdl, split, vsplit, epochs=0, batch_size=8, lr=1e-3, seed=0)
    assert result.epochs_log == []
    for k, v in mdl.state.params.items():
        assert np.array_equal(v, before[k])
    assert mdl.state.step == 0


def test_train_separable_synthetic_reaches_low_logloss():
    # labels generated from the sign of a planted inner product: the model
    # has the capacity to near-separate them
    rng = np.random.default_rng(5)
    cfg, ds, gdict, mdl = _tiny_setup(base_only=True, dtype="float64")
    split = model.encode_instances(ds.train, ds.vocabulary)
    planted = rng.normal(size=(ds.vocabulary.n_features, 6))
    users = split.slots[0][0]
    items = split.slots[1][0]
    scores = (planted[users] * planted[items]).sum(axis=1)
    labels = (scores > np.median(scores)).astype(np.float64)
    split.labels[:] = labels
    vsplit = model.encode_instances(ds.val, ds.vocabulary)
    result = model.train(
        mdl, split, vsplit, epochs=60, batch_size=len(split), lr=0.05,
        seed=0, patience=60,
    )
    # train() restores the best-validation state, so judge separability by
    # the training loss actually reached during optimization
    assert min(e["train_logloss"] for e in result.epochs_log) < 0.05


def test_train_same_seed_identical_loss_sequence():
    cfg, ds, gdict, mdl1 = _tiny_setup(seed=4)
    _, _, _, mdl2 = _tiny_setup(seed=4)
    split = model.encode_instances(ds.train, ds.vocabulary)
    vsplit = model.encode_instances(ds.val, ds.vocabulary)
    r1 = model.train(mdl1, split, vsplit, epochs=4, batch_size=8, lr=1e-2, seed=1)
    r2 = model.train(mdl2, split, vsplit, epochs=4, batch_size=8, lr=1e-2, seed=1)
    assert r1.epochs_log == r2.epochs_log
    for k in mdl1.state.params:
        assert np.array_equal(mdl1.state.params[k], mdl2.state.params[k])


def test_divergence_aborts_on_nan_loss():
    cfg, ds, gdict, mdl = _tiny_setup()
    mdl.state.params["embed"][0, 0] = np.nan
    split = model.encode_instances(ds.train, ds.vocabulary)
    vsplit = model.encode_instances(ds.val, ds.vocabulary)
    with pytest.raises(TrainingError, match="divergence"):
        model.train(mdl, split, vsplit, epochs=1, batch_size=8, lr=1e-3, seed=0)


def test_divergence_aborts_on_exploding_penalty():
    cfg, ds, gdict, mdl = _tiny_setup(l2=1e8)
    split = model.encode_instances(ds.train, ds.vocabulary)
    vsplit = model.encode_instances(ds.val, ds.vocabulary)
    with pytest.raises(TrainingError, match="divergence"):
        model.train(mdl, split, vsplit, epochs=1, batch_size=8, lr=1e-3, seed=0)


def test_nan_gradient_reports_parameter_path():
    cfg, ds, gdict, mdl = _tiny_setup()
    state = mdl.state
    bad = {"embed": np.full_like(state.params["embed"], np.nan)}
    with pytest.raises(TrainingError, match="embed"):
        model.adam_step(state, bad, 1e-3)


# -- checkpoints and dumps ----------------------------------------------------


def test_checkpoint_roundtrip_bitwise(tmp_path):
    cfg, ds, gdict, mdl = _tiny_setup()
    split = model.encode_instances(ds.train, ds.vocabulary)
    vsplit = model.encode_instances(ds.val, ds.vocabulary)
    model.train(mdl, split, vsplit, epochs=2, batch_size=8, lr=1e-3, seed=0)
    h = model.config_hash(cfg.to_doc())
    p1 = tmp_path / "a.bin"
    p2 = tmp_path / "b.bin"
    model.save_checkpoint(p1, mdl.state, h)
    params, m, v, step, seed, meta, h2 = model.load_checkpoint(p1)
    assert h2 == h and step == mdl.state.step
    for k in mdl.state.params:
        assert np.array_equal(params[k], mdl.state.params[k])
        assert np.array_equal(m[k], mdl.state.adam_m[k])
    state2 = model.ModelState(params, m, v, step, seed, meta)
    model.save_checkpoint(p2, state2, h2)
    assert p1.read_bytes() == p2.read_bytes()


def test_embedding_dump_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    table = rng.normal(size=(17, 5)).astype(np.float32)
    model.save_embedding_table(tmp_path / "e.bin", table)
    back = model.load_embedding_table(tmp_path / "e.bin")
    assert np.array_equal(back, table)


def test_score_from_table_runs_no_propagation():
    from dgctr import aggregators as agg

    cfg, ds, gdict, mdl = _tiny_setup()
    split = model.encode_instances(ds.test, ds.vocabulary)
    ops = mdl.pipeline.operators(training=False)
    table, _ = mdl.pipeline.enhanced_table(mdl.state.params["embed"], ops)
    agg.reset_propagation_count()
    scores = model.score_from_table(table, split.slots, mdl.mlp_weights, mdl.mlp_biases)
    assert agg.PROPAGATION_COUNT == 0
    assert scores.shape[0] == len(split)


def test_scoring_op_count_identical_for_base_and_enhanced():
    cfg, ds, gdict, mdl = _tiny_setup()
    split = model.encode_instances(ds.test, ds.vocabulary)
    f = len(model.field_layout(ds.vocabulary))
    ops_base = model.scoring_op_count(
        split.slots, len(split), 6, list(cfg.model.mlp), f
    )
    ops_enh = model.scoring_op_count(
        split.slots, len(split), 6, list(cfg.model.mlp), f
    )
    assert np.array_equal(ops_base, ops_enh)
    assert np.all(ops_base > 0)
