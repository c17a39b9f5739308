"""CTR model on top of the enhanced embedding table: pooled field vectors,
inner-product representation layer, MLP classifier, logloss objective, and
the Adam training loop with exact reverse-mode gradients.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import aggregators as agg
from . import attrconv, collabconv, kernels, metrics
from .attrconv import FieldPlan
from .collabconv import StagePlan
from .data import Dataset, Instance
from .graphs import SparseGraph, UU, UV, VV

log = logging.getLogger(__name__)

CLAMP_EPS = 1e-7
_CKPT_MAGIC = b"DGCK"
_CKPT_VERSION = 1


class TrainingError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Spec-level operations
# ---------------------------------------------------------------------------


def pool_multivalued(slot: list[np.ndarray]) -> np.ndarray:
    """Mean of a multi-valued slot's vectors; empty slot gives zeros."""
    if len(slot) == 0:
        raise ValueError("empty slot needs an explicit dimension; use zeros")
    acc = np.zeros_like(slot[0])
    for v in slot:
        acc += v
    return acc / len(slot)


def inner_product_layer(bundle: np.ndarray) -> np.ndarray:
    """Concatenate F field vectors with their F(F-1)/2 pairwise inner
    products, pairs in lexicographic (i, j < i) order."""
    f, d = bundle.shape
    if f < 2:
        raise ValueError("inner product layer needs at least 2 fields")
    pairs = [bundle[i] @ bundle[j] for i in range(f) for j in range(i + 1, f)]
    return np.concatenate([bundle.reshape(-1), np.array(pairs, dtype=bundle.dtype)])


def mlp_forward(rep: np.ndarray, weights, biases) -> float:
    """Single-instance MLP: ReLU hiddens, sigmoid output clamped into
    [1e-7, 1 - 1e-7]."""
    a = rep
    for w, b in zip(weights[:-1], biases[:-1]):
        if w.shape[1] != a.shape[0]:
            raise ValueError("MLP layer dimension mismatch")
        a = np.maximum(w @ a + b, 0)
    w, b = weights[-1], biases[-1]
    if w.shape[0] != 1 or w.shape[1] != a.shape[0]:
        raise ValueError("final MLP layer must have width 1")
    z = (w @ a + b)[0]
    return float(np.clip(_sigmoid(np.asarray(z)), CLAMP_EPS, 1 - CLAMP_EPS))


def logloss(predictions: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy; predictions must lie inside (0, 1)."""
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if predictions.shape[0] == 0:
        raise ValueError("logloss of an empty batch is undefined")
    if np.any(predictions <= 0) or np.any(predictions >= 1):
        raise ValueError("predictions must be strictly inside (0, 1)")
    return float(
        -np.mean(
            labels * np.log(predictions) + (1 - labels) * np.log(1 - predictions)
        )
    )


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------------------
# Instance encoding
# ---------------------------------------------------------------------------


@dataclass
class EncodedSplit:
    """Ragged per-field index arrays for a list of instances.

    ``slots[f]`` is (flat, bounds): global feature indices of field f for
    instance b live at flat[bounds[b]:bounds[b+1]].
    """

    field_names: list[str]
    slots: list[tuple[np.ndarray, np.ndarray]]
    labels: np.ndarray
    behavior_lengths: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]

    def select(self, idx: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        out = []
        for flat, bounds in self.slots:
            lens = bounds[idx + 1] - bounds[idx]
            offsets = np.zeros(idx.shape[0] + 1, dtype=np.int64)
            np.cumsum(lens, out=offsets[1:])
            parts = [flat[bounds[i] : bounds[i + 1]] for i in idx]
            sel = np.concatenate(parts) if parts else np.empty(0, np.int64)
            out.append((sel, offsets))
        return out


def field_layout(vocab) -> list[str]:
    """Model field order: user, item, user attrs, item attrs, behavior,
    context."""
    return (
        ["user", "item"]
        + vocab.attr_field_names("user")
        + vocab.attr_field_names("item")
        + ["behavior"]
        + vocab.context_field_names()
    )


def encode_instances(instances: list[Instance], vocab) -> EncodedSplit:
    names = field_layout(vocab)
    ranges = {
        f.name: (f.start, f.end) for f in vocab.fields
    }
    per_field: list[list[int]] = [[] for _ in names]
    bounds = [np.zeros(len(instances) + 1, dtype=np.int64) for _ in names]
    labels = np.zeros(len(instances), dtype=np.float64)
    blens = np.zeros(len(instances), dtype=np.int64)

    for b, inst in enumerate(instances):
        labels[b] = inst.label
        blens[b] = len(inst.behaviors)
        for fi, name in enumerate(names):
            if name == "user":
                vals = (inst.user,)
            elif name == "item":
                vals = (inst.item,)
            elif name == "behavior":
                vals = inst.behaviors
            else:
                lo, hi = ranges[name]
                src = (
                    inst.user_attrs
                    if name.startswith("ua:")
                    else inst.item_attrs
                    if name.startswith("ia:")
                    else inst.context
                )
                vals = tuple(v for v in src if lo <= v < hi)
            per_field[fi].extend(vals)
            bounds[fi][b + 1] = len(per_field[fi])

    slots = [
        (np.asarray(per_field[fi], dtype=np.int64), bounds[fi])
        for fi in range(len(names))
    ]
    return EncodedSplit(names, slots, labels, blens)


# ---------------------------------------------------------------------------
# Batch forward / backward over a feature table
# ---------------------------------------------------------------------------


def bundle_from_table(table: np.ndarray, slots) -> np.ndarray:
    """(B, F, d) field vectors: mean over each slot's table rows."""
    cols = [kernels.segment_mean(flat, offs, table) for flat, offs in slots]
    return np.stack(cols, axis=1)


def bundle_backward(d_bundle: np.ndarray, slots, d_table: np.ndarray) -> None:
    for fi, (flat, offs) in enumerate(slots):
        kernels.segment_mean_backward(
            flat, offs, np.ascontiguousarray(d_bundle[:, fi, :]), d_table
        )


def representation_forward(bundle: np.ndarray):
    b, f, d = bundle.shape
    prods = np.einsum("bfd,bgd->bfg", bundle, bundle)
    iu, ju = np.triu_indices(f, k=1)
    rep = np.concatenate([bundle.reshape(b, f * d), prods[:, iu, ju]], axis=1)
    return rep, (bundle, iu, ju)


def representation_backward(d_rep: np.ndarray, cache):
    bundle, iu, ju = cache
    b, f, d = bundle.shape
    d_bundle = d_rep[:, : f * d].reshape(b, f, d).copy()
    d_pairs = d_rep[:, f * d :]
    dp = np.zeros((b, f, f), dtype=bundle.dtype)
    dp[:, iu, ju] = d_pairs
    dp = dp + dp.transpose(0, 2, 1)
    d_bundle += np.einsum("bfg,bgd->bfd", dp, bundle)
    return d_bundle


def mlp_batch_forward(rep, weights, biases, dropout, rng, training):
    """Batched MLP with inverted dropout on hidden activations."""
    a = rep
    caches = []
    for w, b in zip(weights[:-1], biases[:-1]):
        z = a @ w.T + b
        h = np.maximum(z, 0)
        if training and dropout > 0:
            mask = (rng.random(h.shape) >= dropout).astype(h.dtype)
            h = h * mask / (1 - dropout)
        else:
            mask = None
        caches.append((a, z, mask))
        a = h
    logits = (a @ weights[-1].T + biases[-1]).reshape(-1)
    sig = _sigmoid(logits)
    preds = np.clip(sig, CLAMP_EPS, 1 - CLAMP_EPS)
    return preds, (caches, a, sig, preds, dropout)


def mlp_batch_backward(d_logits, cache, weights, biases):
    caches, a_last, _, _, dropout = cache
    d_w = [np.zeros_like(w) for w in weights]
    d_b = [np.zeros_like(b) for b in biases]
    g = d_logits[:, None]
    d_w[-1] += g.T @ a_last
    d_b[-1] += g.sum(axis=0)
    g = g @ weights[-1]
    for i in reversed(range(len(caches))):
        a, z, mask = caches[i]
        if mask is not None:
            g = g * mask / (1 - dropout)
        g = g * (z > 0)
        d_w[i] += g.T @ a
        d_b[i] += g.sum(axis=0)
        g = g @ weights[i]
    return g, d_w, d_b


def loss_and_dlogits(preds, sig, labels):
    """Mean logloss and its exact gradient w.r.t. the logits (zero where the
    prediction sits on the clamp boundary, matching the clipped loss)."""
    n = labels.shape[0]
    loss = -np.mean(
        labels * np.log(preds) + (1 - labels) * np.log(1 - preds)
    )
    inside = (sig > CLAMP_EPS) & (sig < 1 - CLAMP_EPS)
    d_logits = np.where(inside, (sig - labels) / n, 0.0).astype(preds.dtype)
    return float(loss), d_logits


# ---------------------------------------------------------------------------
# Model state and the full pipeline
# ---------------------------------------------------------------------------


@dataclass
class Pipeline:
    """Graph stack shared by training and evaluation.

    ``ablate`` controls which parts run: 'none' (full), 'attr-only',
    'uu-vv-only', 'uv-only', 'no-attr', or 'base-only'.
    """

    plans: list[FieldPlan]
    stage_plan: StagePlan
    cf_graph: SparseGraph
    n_users: int
    n_items: int
    mode: str
    ablate: str = "none"
    fanout: int = 0
    sample_threshold: int = 0

    def use_attr(self) -> bool:
        return self.ablate in ("none", "attr-only")

    def cf_tags(self) -> set[int]:
        if self.ablate in ("none", "no-attr"):
            return {UU, VV, UV}
        if self.ablate == "uu-vv-only":
            return {UU, VV}
        if self.ablate == "uv-only":
            return {UV}
        return set()  # attr-only / base-only

    def _operator(self, graph: SparseGraph, seed, epoch, training):
        sample = (
            training
            and self.fanout > 0
            and graph.indices.shape[0] > self.sample_threshold
        )
        if sample:
            from .graphs import sampled_view
            from .aggregators import PropagationOperator

            view = sampled_view(graph, self.fanout, seed, epoch)
            return PropagationOperator.from_directed_view(view)
        from .aggregators import PropagationOperator

        return PropagationOperator.from_graph(graph)

    def operators(self, seed: int = 0, epoch: int = 0, training: bool = False):
        tags = self.cf_tags()
        plan_ops = [
            self._operator(p.graph, seed + 7919 * (i + 1), epoch, training)
            for i, p in enumerate(self.plans)
        ]
        within = self._operator(
            self.cf_graph.filter_tags(tags & {UU, VV}), seed + 13, epoch, training
        )
        across = self._operator(
            self.cf_graph.filter_tags(tags & {UV}), seed + 17, epoch, training
        )
        return plan_ops, within, across

    def enhanced_table(self, table: np.ndarray, ops=None):
        """Full forward through both graph modules; returns (P, caches)."""
        if self.ablate == "base-only":
            return table, None
        if ops is None:
            ops = self.operators()
        plan_ops, within_op, across_op = ops
        if self.use_attr():
            z, attr_cache = attrconv.refine_all(
                self.plans, table, self.n_users, self.n_items, self.mode, plan_ops
            )
        else:
            z, attr_cache = table, None
        p, collab_cache = collabconv.enhance(
            self.stage_plan, within_op, across_op, z, self.mode
        )
        return p, (attr_cache, collab_cache)

    def enhanced_backward(self, caches, d_p: np.ndarray):
        """Returns (d_table, plan weight grads, stage1 grads, stage2 grads)."""
        if self.ablate == "base-only":
            return d_p, [], [], []
        attr_cache, collab_cache = caches
        d_z, d_w1, d_w2 = collabconv.enhance_backward(collab_cache, d_p)
        if attr_cache is not None:
            d_table, d_plan_w = attrconv.refine_backward(attr_cache, d_z)
        else:
            d_table, d_plan_w = d_z, []
        return d_table, d_plan_w, d_w1, d_w2


@dataclass
class ModelState:
    """All trainable parameters plus Adam moments and the step counter.

    ``params`` maps a stable name to the live array; aggregator weight lists
    alias the same arrays so in-place updates reach the pipeline.
    """

    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    step: int
    seed: int
    meta: dict

    def clone_arrays(self):
        return (
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.adam_m.items()},
            {k: v.copy() for k, v in self.adam_v.items()},
        )


def params_for_pipeline(
    pipeline: Pipeline,
    n_features: int,
    dim: int,
    rng: np.random.Generator,
    dtype=np.float32,
) -> dict[str, np.ndarray]:
    """Initialize the embedding table and register every aggregator weight
    (which alias the live arrays inside the plans) in a fixed order."""
    params: dict[str, np.ndarray] = {}
    params["embed"] = (rng.normal(0.0, 0.1, size=(n_features, dim))).astype(dtype)
    for plan in pipeline.plans:
        for l, mats in enumerate(plan.params.weights):
            for j, w in enumerate(mats):
                params[f"attr/{plan.side}/{plan.name}/l{l}/w{j}"] = w
    for stage, ap in (("stage1", pipeline.stage_plan.params1),
                      ("stage2", pipeline.stage_plan.params2)):
        for l, mats in enumerate(ap.weights):
            for j, w in enumerate(mats):
                params[f"{stage}/l{l}/w{j}"] = w
    return params


def init_mlp(rep_dim: int, widths: list[int], rng, dtype):
    """Xavier-uniform MLP init; ``widths`` ends with the output width 1."""
    weights, biases = [], []
    fan_in = rep_dim
    for width in widths:
        bound = np.sqrt(6.0 / (fan_in + width))
        weights.append(rng.uniform(-bound, bound, size=(width, fan_in)).astype(dtype))
        biases.append(np.zeros(width, dtype=dtype))
        fan_in = width
    return weights, biases


@dataclass
class Model:
    """Pipeline + parameters + encoded field layout: the trainable unit."""

    pipeline: Pipeline
    state: ModelState
    mlp_weights: list[np.ndarray]
    mlp_biases: list[np.ndarray]
    dim: int
    l2: float
    dropout: float

    def forward_backward(self, table_ops, batch_slots, labels, rng, training=True):
        """One full forward+backward; returns (loss, grads dict, preds)."""
        params = self.state.params
        table = params["embed"]
        p, caches = self.pipeline.enhanced_table(table, table_ops)
        bundle = bundle_from_table(p, batch_slots)
        rep, rep_cache = representation_forward(bundle)
        preds, mlp_cache = mlp_batch_forward(
            rep, self.mlp_weights, self.mlp_biases, self.dropout, rng, training
        )
        sig = mlp_cache[2]
        loss, d_logits = loss_and_dlogits(preds, sig, labels)
        data_loss = loss
        if self.l2 > 0:
            loss = loss + self.l2 * sum(
                float((params[k] ** 2).sum()) for k in self._penalized()
            )

        d_rep, d_w, d_b = mlp_batch_backward(
            d_logits, mlp_cache, self.mlp_weights, self.mlp_biases
        )
        d_bundle = representation_backward(d_rep, rep_cache)
        d_p = np.zeros_like(p)
        bundle_backward(d_bundle, batch_slots, d_p)
        d_table, d_plan_w, d_s1, d_s2 = self.pipeline.enhanced_backward(caches, d_p)

        grads: dict[str, np.ndarray] = {"embed": d_table}
        for plan, dws in zip(self.pipeline.plans, d_plan_w or []):
            for l, mats in enumerate(dws or []):
                for j, g in enumerate(mats):
                    grads[f"attr/{plan.side}/{plan.name}/l{l}/w{j}"] = g
        for stage, dws in (("stage1", d_s1), ("stage2", d_s2)):
            for l, mats in enumerate(dws or []):
                for j, g in enumerate(mats):
                    grads[f"{stage}/l{l}/w{j}"] = g
        for i, g in enumerate(d_w):
            grads[f"mlp/w{i}"] = g
        for i, g in enumerate(d_b):
            grads[f"mlp/b{i}"] = g

        if self.l2 > 0:
            for k in self._penalized():
                grads[k] = grads.get(k, np.zeros_like(params[k])) + 2 * self.l2 * params[k]
        return loss, data_loss, grads, preds

    def _penalized(self):
        # L2 applies to embeddings and weight matrices, not biases
        return [k for k in self.state.params if not k.startswith("mlp/b")]

    def score(self, table_ops, slots):
        table = self.state.params["embed"]
        p, _ = self.pipeline.enhanced_table(table, table_ops)
        return score_from_table(p, slots, self.mlp_weights, self.mlp_biases)


def score_from_table(table, slots, mlp_weights, mlp_biases):
    """Score instances directly from a feature table: gather, pool, inner
    products, MLP.  Runs no graph propagation."""
    bundle = bundle_from_table(table, slots)
    rep, _ = representation_forward(bundle)
    preds, _ = mlp_batch_forward(rep, mlp_weights, mlp_biases, 0.0, None, False)
    return preds


def scoring_op_count(slots, b: int, dim: int, widths: list[int], f: int) -> np.ndarray:
    """Multiply-accumulate count per instance for one scoring pass (same
    formula regardless of which table the scores come from)."""
    per = np.zeros(b, dtype=np.int64)
    for flat, offs in slots:
        per += (offs[1:] - offs[:-1]) * dim
    per += (f * (f - 1) // 2) * dim
    fan_in = f * dim + f * (f - 1) // 2
    for width in widths:
        per += fan_in * width + width
        fan_in = width
    return per


# ---------------------------------------------------------------------------
# Adam + training loop
# ---------------------------------------------------------------------------

ADAM_B1, ADAM_B2, ADAM_EPS = 0.9, 0.999, 1e-8


def adam_step(state: ModelState, grads: dict[str, np.ndarray], lr: float):
    state.step += 1
    t = state.step
    c1 = 1 - ADAM_B1 ** t
    c2 = 1 - ADAM_B2 ** t
    for name, p in state.params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
        m = state.adam_m[name]
        v = state.adam_v[name]
        m *= ADAM_B1
        m += (1 - ADAM_B1) * g
        v *= ADAM_B2
        v += (1 - ADAM_B2) * g * g
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)).astype(p.dtype)


@dataclass
class TrainResult:
    state: ModelState
    model: "Model"
    epochs_log: list[dict]
    timings: list[dict]
    best_epoch: int


def build_model(
    pipeline: Pipeline,
    n_features: int,
    dim: int,
    mlp_widths: list[int],
    n_fields: int,
    seed: int,
    rng: np.random.Generator,
    l2: float = 0.0,
    dropout: float = 0.0,
    dtype=np.float32,
) -> Model:
    params = params_for_pipeline(pipeline, n_features, dim, rng, dtype)
    rep_dim = n_fields * dim + n_fields * (n_fields - 1) // 2
    mlp_w, mlp_b = init_mlp(rep_dim, mlp_widths, rng, dtype)
    for i, (w, b) in enumerate(zip(mlp_w, mlp_b)):
        params[f"mlp/w{i}"] = w
        params[f"mlp/b{i}"] = b
    state = ModelState(
        params=params,
        adam_m={k: np.zeros_like(v) for k, v in params.items()},
        adam_v={k: np.zeros_like(v) for k, v in params.items()},
        step=0,
        seed=seed,
        meta={},
    )
    return Model(pipeline, state, mlp_w, mlp_b, dim, l2, dropout)


def train(
    model: Model,
    train_split: EncodedSplit,
    val_split: EncodedSplit,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int,
    patience: int = 5,
) -> TrainResult:
    """Minibatch Adam with per-epoch validation AUC/logloss and early
    stopping on validation AUC; the best-validation state is restored."""
    rng = np.random.default_rng(seed + 1)
    n = len(train_split)
    best = (-np.inf, 0, None)
    epochs_log, timings = [], []
    waited = 0

    for epoch in range(epochs):
        t0 = time.perf_counter()
        ops = model.pipeline.operators(seed=seed, epoch=epoch, training=True)
        order = rng.permutation(n)
        loss_sum, count = 0.0, 0
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            slots = train_split.select(idx)
            labels = train_split.labels[idx]
            loss, data_loss, grads, _ = model.forward_backward(
                ops, slots, labels, rng, training=True
            )
            if not np.isfinite(loss) or loss > 100:
                raise TrainingError(
                    f"divergence at epoch {epoch} step {model.state.step}: "
                    f"loss={loss}"
                )
            adam_step(model.state, grads, lr)
            loss_sum += data_loss * idx.shape[0]
            count += idx.shape[0]

        eval_ops = model.pipeline.operators(training=False)
        val_scores = model.score(eval_ops, val_split.slots)
        val_auc = metrics.auc(val_scores, val_split.labels)
        val_ll = metrics.eval_logloss(val_scores, val_split.labels)
        epochs_log.append(
            {
                "epoch": epoch,
                "train_logloss": loss_sum / count,
                "val_auc": val_auc,
                "val_logloss": val_ll,
            }
        )
        timings.append({"epoch": epoch, "wall_time": time.perf_counter() - t0})
        log.info(
            "epoch %d train_logloss=%.5f val_auc=%.5f val_logloss=%.5f",
            epoch,
            loss_sum / count,
            val_auc,
            val_ll,
        )
        if val_auc > best[0]:
            best = (val_auc, epoch, model.state.clone_arrays())
            waited = 0
        else:
            waited += 1
            if waited >= patience:
                log.info("early stop at epoch %d (patience %d)", epoch, patience)
                break

    if best[2] is not None:
        params, m, v = best[2]
        for k in model.state.params:
            model.state.params[k][...] = params[k]
            model.state.adam_m[k][...] = m[k]
            model.state.adam_v[k][...] = v[k]
    return TrainResult(model.state, model, epochs_log, timings, best[1])


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------


def config_hash(config_doc: dict) -> bytes:
    return hashlib.sha256(
        json.dumps(config_doc, sort_keys=True).encode()
    ).digest()


def save_checkpoint(path, state: ModelState, cfg_hash: bytes) -> None:
    entries = []
    blobs = []
    for prefix, d in (("p", state.params), ("m", state.adam_m), ("v", state.adam_v)):
        for name, arr in d.items():
            entries.append(
                {
                    "key": f"{prefix}/{name}",
                    "shape": list(arr.shape),
                    "dtype": str(arr.dtype),
                }
            )
            blobs.append(np.ascontiguousarray(arr))
    header = json.dumps(
        {
            "entries": entries,
            "step": state.step,
            "seed": state.seed,
            "meta": state.meta,
        },
        sort_keys=True,
    ).encode()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", _CKPT_VERSION))
        f.write(cfg_hash)
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for b in blobs:
            f.write(b.tobytes())


def load_checkpoint(path):
    """Returns (params, adam_m, adam_v, step, seed, meta, cfg_hash)."""
    with open(path, "rb") as f:
        if f.read(4) != _CKPT_MAGIC:
            raise TrainingError(f"not a checkpoint: {path}")
        (version,) = struct.unpack("<I", f.read(4))
        if version != _CKPT_VERSION:
            raise TrainingError(f"unsupported checkpoint version {version}")
        cfg_hash = f.read(32)
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen))
        stores = {"p": {}, "m": {}, "v": {}}
        for e in header["entries"]:
            prefix, name = e["key"].split("/", 1)
            size = int(np.prod(e["shape"])) if e["shape"] else 1
            arr = np.frombuffer(
                f.read(size * np.dtype(e["dtype"]).itemsize), dtype=e["dtype"]
            ).reshape(e["shape"]).copy()
            stores[prefix][name] = arr
    return (
        stores["p"],
        stores["m"],
        stores["v"],
        header["step"],
        header["seed"],
        header["meta"],
        cfg_hash,
    )


def save_embedding_table(path, table: np.ndarray) -> None:
    """Enhanced-table dump: magic, count, dim header then float32 rows."""
    with open(path, "wb") as f:
        f.write(b"DGEM")
        f.write(struct.pack("<IQI", 1, table.shape[0], table.shape[1]))
        f.write(table.astype("<f4").tobytes())


def load_embedding_table(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(4) != b"DGEM":
            raise TrainingError(f"not an embedding dump: {path}")
        version, count, dim = struct.unpack("<IQI", f.read(16))
        return np.frombuffer(f.read(4 * count * dim), dtype="<f4").reshape(
            count, dim
        ).copy()
