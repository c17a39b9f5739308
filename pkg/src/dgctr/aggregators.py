"""Neighbor-aggregation kernels (GCN / NGCF / LightGCN), layer pooling, and
their exact gradients.

Two granularities are exposed: per-node functions that follow the update
rules literally (useful for small fixtures), and a whole-table propagation
engine that runs one layer for every node at once over a CSR operator and
supports reverse-mode differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .graphs import SparseGraph

GCN, NGCF, LIGHTGCN = "gcn", "ngcf", "lightgcn"
SUM, MEAN = "sum", "mean"

# Global instrumentation: bumped once per propagation layer executed.  The
# inference path from dumped embeddings must leave this untouched.
PROPAGATION_COUNT = 0


def reset_propagation_count() -> None:
    global PROPAGATION_COUNT
    PROPAGATION_COUNT = 0


def _bump_propagation_count() -> None:
    global PROPAGATION_COUNT
    PROPAGATION_COUNT += 1


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------


def activation_fn(name: str, slope: float = 0.2):
    if name == "identity":
        return lambda x: x, lambda x: np.ones_like(x)
    if name == "relu":
        return (
            lambda x: np.maximum(x, 0),
            lambda x: (x > 0).astype(x.dtype),
        )
    if name == "leaky_relu":
        def f(x):
            return np.where(x > 0, x, slope * x)

        def df(x):
            return np.where(x > 0, x.dtype.type(1), x.dtype.type(slope))

        return f, df
    raise ValueError(f"unknown activation: {name}")


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass
class AggregatorParams:
    """Aggregator choice plus per-layer transform matrices.

    ``weights[l]`` is a list: [W] for GCN, [W1, W2] for NGCF, and [] for
    LightGCN (which carries no trainable parameters).
    """

    kind: str
    weights: list[list[np.ndarray]] = field(default_factory=list)
    activation: str = "leaky_relu"
    slope: float = 0.2

    def n_matrices(self) -> int:
        return {GCN: 1, NGCF: 2, LIGHTGCN: 0}[self.kind]


def init_params(
    kind: str,
    dim: int,
    layers: int,
    rng: np.random.Generator,
    activation: str = "leaky_relu",
    slope: float = 0.2,
    dtype=np.float64,
) -> AggregatorParams:
    """Xavier-style uniform init over (-sqrt(6/2d), +sqrt(6/2d))."""
    bound = np.sqrt(6.0 / (2 * dim))
    n = {GCN: 1, NGCF: 2, LIGHTGCN: 0}[kind]
    weights = [
        [
            rng.uniform(-bound, bound, size=(dim, dim)).astype(dtype)
            for _ in range(n)
        ]
        for _ in range(layers)
    ]
    return AggregatorParams(kind, weights, activation, slope)


@dataclass
class EmbeddingTable:
    """Dense d-dimensional vectors for every feature index."""

    vectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]


# ---------------------------------------------------------------------------
# Per-node update rules
# ---------------------------------------------------------------------------


def norm_factor(h: int, i: int, graph: SparseGraph) -> float:
    """1/sqrt(deg(h) * deg(i)); 0 when either endpoint is isolated."""
    dh, di = int(graph.degree[h]), int(graph.degree[i])
    if dh == 0 or di == 0:
        return 0.0
    return 1.0 / np.sqrt(dh * di)


def _self_factor(deg: int) -> float:
    # central-node term of the GCN sum: d(h,h) = 1/deg(h), taken as 1 for
    # isolated nodes so they pass through unchanged under W=I
    return 1.0 / deg if deg > 0 else 1.0


def gcn_aggregate(
    e_h: np.ndarray,
    deg_h: int,
    neighbor_embeddings: np.ndarray,
    neighbor_degs: np.ndarray,
    params: AggregatorParams,
    layer: int,
) -> np.ndarray:
    """Nonlinear transform of the degree-normalized sum over {h} and N_h."""
    if params.kind != GCN:
        raise ValueError("params.kind must be gcn")
    w = params.weights[layer][0]
    if w.shape[1] != e_h.shape[0]:
        raise ValueError("weight/embedding dimension mismatch")
    acc = _self_factor(deg_h) * e_h
    for e_i, deg_i in zip(neighbor_embeddings, neighbor_degs):
        acc = acc + (1.0 / np.sqrt(deg_h * deg_i)) * e_i
    act, _ = activation_fn(params.activation, params.slope)
    return act(w @ acc)


def ngcf_aggregate(
    e_h: np.ndarray,
    deg_h: int,
    neighbor_embeddings: np.ndarray,
    neighbor_degs: np.ndarray,
    params: AggregatorParams,
    layer: int,
) -> np.ndarray:
    """Adds central-neighbor feature interaction terms to the GCN message."""
    if params.kind != NGCF:
        raise ValueError("params.kind must be ngcf")
    w1, w2 = params.weights[layer]
    if w1.shape[1] != e_h.shape[0]:
        raise ValueError("weight/embedding dimension mismatch")
    acc = w1 @ e_h
    for e_i, deg_i in zip(neighbor_embeddings, neighbor_degs):
        d = 1.0 / np.sqrt(deg_h * deg_i)
        acc = acc + d * (w1 @ e_i + w2 @ (e_h * e_i))
    act, _ = activation_fn(params.activation, params.slope)
    return act(acc)


def lightgcn_aggregate(
    deg_h: int,
    neighbor_embeddings: np.ndarray,
    neighbor_degs: np.ndarray,
) -> np.ndarray:
    """Degree-normalized neighbor sum; the central node is excluded.

    ``neighbor_embeddings`` is an (n, d) array; n = 0 (isolated node) gives
    the empty sum, a zero vector.
    """
    neighbor_embeddings = np.atleast_2d(neighbor_embeddings)
    acc = np.zeros(neighbor_embeddings.shape[1], dtype=neighbor_embeddings.dtype)
    for e_i, deg_i in zip(neighbor_embeddings, neighbor_degs):
        acc = acc + (1.0 / np.sqrt(deg_h * deg_i)) * e_i
    return acc


def layer_pool(per_layer: list[np.ndarray], mode: str = SUM) -> np.ndarray:
    """Combine the L+1 per-layer states into the final embedding."""
    if not per_layer:
        raise ValueError("layer_pool needs at least the layer-0 embedding")
    out = per_layer[0].copy()
    for e in per_layer[1:]:
        out += e
    if mode == MEAN:
        out /= len(per_layer)
    elif mode != SUM:
        raise ValueError(f"unknown pool mode: {mode}")
    return out


# ---------------------------------------------------------------------------
# Whole-table propagation engine
# ---------------------------------------------------------------------------


@dataclass
class PropagationOperator:
    """CSR aggregation operator with its transpose for the backward pass.

    For symmetric (undirected) graphs the transpose is the operator itself;
    sampled training views are directed and carry an explicit transpose.
    """

    offsets: np.ndarray
    indices: np.ndarray
    coeffs: np.ndarray
    t_offsets: np.ndarray
    t_indices: np.ndarray
    t_coeffs: np.ndarray
    self_coeffs: np.ndarray  # GCN central-node factors

    @classmethod
    def from_graph(cls, graph: SparseGraph) -> "PropagationOperator":
        deg = graph.degree.astype(np.float64)
        rows = np.repeat(np.arange(graph.node_count), np.diff(graph.offsets))
        coeffs = np.zeros(graph.indices.shape[0], dtype=np.float64)
        if coeffs.shape[0]:
            coeffs = 1.0 / np.sqrt(deg[rows] * deg[graph.indices])
        self_coeffs = np.where(deg > 0, 1.0 / np.maximum(deg, 1), 1.0)
        return cls(
            graph.offsets,
            graph.indices,
            coeffs,
            graph.offsets,
            graph.indices,
            coeffs,
            self_coeffs,
        )

    @classmethod
    def from_directed_view(cls, view: SparseGraph) -> "PropagationOperator":
        deg = view.degree.astype(np.float64)
        n = view.node_count
        rows = np.repeat(np.arange(n), np.diff(view.offsets))
        coeffs = np.zeros(view.indices.shape[0], dtype=np.float64)
        if coeffs.shape[0]:
            coeffs = 1.0 / np.sqrt(deg[rows] * deg[view.indices])
        # transpose CSR with matching entry values
        order = np.lexsort((rows, view.indices))
        t_rows = view.indices[order]
        t_offsets = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(t_rows, minlength=n), out=t_offsets[1:])
        self_coeffs = np.where(deg > 0, 1.0 / np.maximum(deg, 1), 1.0)
        return cls(
            view.offsets,
            view.indices,
            coeffs,
            t_offsets,
            rows[order].astype(np.int32),
            coeffs[order],
            self_coeffs,
        )

    def apply(self, e: np.ndarray) -> np.ndarray:
        _bump_propagation_count()
        return kernels.csr_propagate(
            self.offsets, self.indices, self.coeffs.astype(e.dtype), e
        )

    def apply_t(self, e: np.ndarray) -> np.ndarray:
        return kernels.csr_propagate(
            self.t_offsets, self.t_indices, self.t_coeffs.astype(e.dtype), e
        )


def propagate_layers(
    op: PropagationOperator,
    params: AggregatorParams,
    e0: np.ndarray,
    layers: int,
):
    """Run ``layers`` aggregation rounds; returns per-layer states and caches."""
    act, _ = activation_fn(params.activation, params.slope)
    states = [e0]
    caches = []
    e = e0
    for l in range(layers):
        if params.kind == LIGHTGCN:
            nxt = op.apply(e)
            caches.append(None)
        elif params.kind == GCN:
            agg = op.apply(e) + op.self_coeffs[:, None].astype(e.dtype) * e
            pre = agg @ params.weights[l][0].T
            nxt = act(pre)
            caches.append((agg, pre))
        elif params.kind == NGCF:
            nbr = op.apply(e)
            w1, w2 = params.weights[l]
            pre = (e + nbr) @ w1.T + (e * nbr) @ w2.T
            nxt = act(pre)
            caches.append((nbr, pre))
        else:
            raise ValueError(f"unknown aggregator kind: {params.kind}")
        states.append(nxt)
        e = nxt
    return states, caches


def propagate_backward(
    op: PropagationOperator,
    params: AggregatorParams,
    states: list[np.ndarray],
    caches: list,
    d_states: list[np.ndarray],
):
    """Reverse pass of :func:`propagate_layers`.

    ``d_states[l]`` is the loss gradient w.r.t. the layer-l state (as handed
    out by pooling).  Returns (grad of e0, per-layer weight gradients).
    """
    _, dact = activation_fn(params.activation, params.slope)
    layers = len(caches)
    d_weights = [
        [np.zeros_like(w) for w in params.weights[l]] for l in range(layers)
    ]
    g = d_states[layers].copy()
    for l in reversed(range(layers)):
        e = states[l]
        if params.kind == LIGHTGCN:
            g = op.apply_t(g)
        elif params.kind == GCN:
            agg, pre = caches[l]
            dpre = g * dact(pre)
            d_weights[l][0] += dpre.T @ agg
            dagg = dpre @ params.weights[l][0]
            g = op.apply_t(dagg) + op.self_coeffs[:, None].astype(e.dtype) * dagg
        else:  # NGCF
            nbr, pre = caches[l]
            w1, w2 = params.weights[l]
            dpre = g * dact(pre)
            d_weights[l][0] += dpre.T @ (e + nbr)
            d_weights[l][1] += dpre.T @ (e * nbr)
            d1 = dpre @ w1
            d2 = dpre @ w2
            dnbr = d1 + d2 * e
            g = d1 + d2 * nbr + op.apply_t(dnbr)
        g += d_states[l]
    return g, d_weights


def pool_states(states: list[np.ndarray], mode: str) -> np.ndarray:
    return layer_pool(states, mode)


def pool_backward(
    d_pooled: np.ndarray, n_states: int, mode: str
) -> list[np.ndarray]:
    if mode == MEAN:
        each = d_pooled / n_states
    else:
        each = d_pooled
    return [each.copy() for _ in range(n_states)]
