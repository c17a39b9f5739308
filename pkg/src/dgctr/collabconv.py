"""Collaborative graph convolution with the two-stage organized schedule:
user-user and item-item edges first, user-item edges second, the second
stage seeded with the pooled output of the first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import aggregators as agg
from .aggregators import AggregatorParams, PropagationOperator
from .graphs import UU, UV, VV, SparseGraph


@dataclass
class StagePlan:
    """Layer counts and parameters for the two collaborative stages."""

    stage1_layers: int
    stage2_layers: int
    params1: AggregatorParams
    params2: AggregatorParams


def stage_operators(
    cf_graph: SparseGraph,
) -> tuple[PropagationOperator, PropagationOperator]:
    """Full-neighborhood operators for (UU+VV, UV) edge filters."""
    within = PropagationOperator.from_graph(cf_graph.filter_tags({UU, VV}))
    across = PropagationOperator.from_graph(cf_graph.filter_tags({UV}))
    return within, across


def within_propagate(
    op: PropagationOperator,
    params: AggregatorParams,
    z: np.ndarray,
    layers: int,
    mode: str,
):
    """Stage 1: propagate over UU and VV edges only (two disconnected node
    families) and pool all layer states."""
    states, caches = agg.propagate_layers(op, params, z, layers)
    return agg.pool_states(states, mode), (states, caches)


def across_propagate(
    op: PropagationOperator,
    params: AggregatorParams,
    z_hat: np.ndarray,
    layers: int,
    mode: str,
):
    """Stage 2: propagate over UV edges, seeded by the stage-1 pooled output
    (which is also included in the final pooling as layer 0)."""
    states, caches = agg.propagate_layers(op, params, z_hat, layers)
    return agg.pool_states(states, mode), (states, caches)


@dataclass
class EnhanceCache:
    plan: StagePlan
    within_op: PropagationOperator
    across_op: PropagationOperator
    within_cache: tuple
    across_cache: tuple
    mode: str
    n_nodes: int


def enhance(
    plan: StagePlan,
    within_op: PropagationOperator,
    across_op: PropagationOperator,
    z: np.ndarray,
    mode: str,
):
    """Run both stages over the user+item rows of the refined table.

    ``z`` is the full refined table; only its first M+N rows (users, items)
    enter collaborative propagation.  Returns the enhanced table P in which
    user/item rows carry the stage-2 pooled output while attribute and
    context rows are passed through bitwise-unchanged.
    """
    n = within_op.offsets.shape[0] - 1
    z_ui = np.ascontiguousarray(z[:n])
    z_hat, w_cache = within_propagate(
        within_op, plan.params1, z_ui, plan.stage1_layers, mode
    )
    p_hat, a_cache = across_propagate(
        across_op, plan.params2, z_hat, plan.stage2_layers, mode
    )
    p = z.copy()
    p[:n] = p_hat
    return p, EnhanceCache(plan, within_op, across_op, w_cache, a_cache, mode, n)


def enhance_backward(cache: EnhanceCache, d_p: np.ndarray):
    """Gradient of :func:`enhance` w.r.t. the refined table and both stages'
    weights."""
    n = cache.n_nodes
    d_z = d_p.copy()
    d_z[:n] = 0.0

    states2, caches2 = cache.across_cache
    d_states2 = agg.pool_backward(d_p[:n], len(states2), cache.mode)
    d_zhat, d_w2 = agg.propagate_backward(
        cache.across_op, cache.plan.params2, states2, caches2, d_states2
    )

    states1, caches1 = cache.within_cache
    d_states1 = agg.pool_backward(d_zhat, len(states1), cache.mode)
    d_zui, d_w1 = agg.propagate_backward(
        cache.within_op, cache.plan.params1, states1, caches1, d_states1
    )
    d_z[:n] += d_zui
    return d_z, d_w1, d_w2
