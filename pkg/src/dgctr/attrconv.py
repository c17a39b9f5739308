"""Attribute graph convolution: independent propagation per attribute field
(divide-and-conquer), then cross-field integration into refined embeddings.

Field graphs live in the global feature-index space; a plan records which
index ranges (entities, this field's attribute values) its graph actually
covers.  Context features are never refined.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import aggregators as agg
from .aggregators import AggregatorParams, PropagationOperator
from .graphs import SparseGraph


@dataclass
class FieldPlan:
    """One attribute field's propagation setup.

    ``entity_range`` / ``attr_range`` are half-open global index ranges; the
    graph is bipartite between them.  GCN/NGCF weights are owned per field.
    """

    side: str  # "user" | "item"
    name: str
    graph: SparseGraph
    entity_range: tuple[int, int]
    attr_range: tuple[int, int]
    params: AggregatorParams
    layers: int


def field_propagate(
    op: PropagationOperator,
    params: AggregatorParams,
    table: np.ndarray,
    layers: int,
    mode: str,
):
    """Propagate the whole table over one field graph and pool the layers.

    Returns the pooled per-node embeddings plus the cache needed for the
    backward pass.  ``layers == 0`` returns the input unchanged.
    """
    states, caches = agg.propagate_layers(op, params, table, layers)
    pooled = agg.pool_states(states, mode)
    return pooled, (states, caches)


def field_propagate_backward(
    op: PropagationOperator,
    params: AggregatorParams,
    cache,
    d_pooled: np.ndarray,
    mode: str,
):
    states, layer_caches = cache
    d_states = agg.pool_backward(d_pooled, len(states), mode)
    return agg.propagate_backward(op, params, states, layer_caches, d_states)


def integrate_fields(per_field: list[np.ndarray], mode: str) -> np.ndarray:
    """Combine per-field entity embeddings into one vector per entity."""
    if not per_field:
        raise ValueError("integrate_fields needs at least one field")
    out = per_field[0].copy()
    for e in per_field[1:]:
        out += e
    if mode == agg.MEAN:
        out /= len(per_field)
    return out


@dataclass
class RefineCache:
    plans: list[FieldPlan]
    ops: list[PropagationOperator]
    field_caches: list
    user_plan_idx: list[int]
    item_plan_idx: list[int]
    n_users: int
    n_items: int
    mode: str


def refine_all(
    plans: list[FieldPlan],
    table: np.ndarray,
    n_users: int,
    n_items: int,
    mode: str,
    ops: list[PropagationOperator] | None = None,
):
    """Produce the refined table Z from the initial embedding table.

    User/item rows carry the cross-field integration of their per-field
    pooled embeddings; each attribute value row carries the pooled output of
    its own field's propagation; every other row (context) passes through
    bitwise-unchanged.  Sides with no attribute fields keep their initial
    embeddings.
    """
    if ops is None:
        ops = [PropagationOperator.from_graph(p.graph) for p in plans]
    z = table.copy()
    pooled_per_plan = []
    caches = []
    user_idx, item_idx = [], []
    for t, (plan, op) in enumerate(zip(plans, ops)):
        if plan.layers == 0:
            pooled, cache = table, None
        else:
            pooled, cache = field_propagate(
                op, plan.params, table, plan.layers, mode
            )
        pooled_per_plan.append(pooled)
        caches.append(cache)
        lo, hi = plan.attr_range
        z[lo:hi] = pooled[lo:hi]
        (user_idx if plan.side == "user" else item_idx).append(t)

    if user_idx:
        z[0:n_users] = integrate_fields(
            [pooled_per_plan[t][0:n_users] for t in user_idx], mode
        )
    if item_idx:
        z[n_users : n_users + n_items] = integrate_fields(
            [
                pooled_per_plan[t][n_users : n_users + n_items]
                for t in item_idx
            ],
            mode,
        )
    cache = RefineCache(
        plans, ops, caches, user_idx, item_idx, n_users, n_items, mode
    )
    return z, cache


def refine_backward(cache: RefineCache, d_z: np.ndarray):
    """Gradient of :func:`refine_all` w.r.t. the initial table and weights."""
    plans, ops = cache.plans, cache.ops
    n_u, n_i = cache.n_users, cache.n_items
    d_table = d_z.copy()  # pass-through rows (context, sides without fields)
    d_weights: list[list[list[np.ndarray]]] = [None] * len(plans)

    if cache.user_plan_idx:
        d_table[0:n_u] = 0.0
    if cache.item_plan_idx:
        d_table[n_u : n_u + n_i] = 0.0
    for plan in plans:
        lo, hi = plan.attr_range
        d_table[lo:hi] = 0.0

    for t, (plan, op) in enumerate(zip(plans, ops)):
        d_pooled = np.zeros_like(d_z)
        lo, hi = plan.attr_range
        d_pooled[lo:hi] = d_z[lo:hi]
        elo, ehi = plan.entity_range
        side_fields = (
            cache.user_plan_idx if plan.side == "user" else cache.item_plan_idx
        )
        # integrate_fields backward: SUM hands the entity gradient to every
        # field in full, MEAN divides it by the field count
        if cache.mode == agg.MEAN:
            d_pooled[elo:ehi] = d_z[elo:ehi] / len(side_fields)
        else:
            d_pooled[elo:ehi] = d_z[elo:ehi]
        if plan.layers == 0:
            d_table += d_pooled
            d_weights[t] = []
        else:
            d_e0, d_w = field_propagate_backward(
                op, plan.params, cache.field_caches[t], d_pooled, cache.mode
            )
            d_table += d_e0
            d_weights[t] = d_w
    return d_table, d_weights
