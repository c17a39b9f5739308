"""Hot numeric kernels: numba-jitted inner loops with pure-numpy fallbacks.

Every kernel exists twice: an ``@njit`` version and a numpy version that
computes the identical result (same per-row accumulation order, so the two
paths agree bitwise).  The numpy path is selected when the environment
variable ``DGCTR_NO_NUMBA`` is set to a nonempty value, or when numba is
not importable.  ``benchmarks/bench_kernels.py`` compares both paths.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def use_numba() -> bool:
    """True when the jitted kernel path is active for this call."""
    return NUMBA_AVAILABLE and not os.environ.get("DGCTR_NO_NUMBA")


# ---------------------------------------------------------------------------
# CSR propagation: out[h] = sum_e coeffs[e] * src[indices[e]] over h's arcs.
# This is the inner loop of every graph-convolution layer.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _csr_propagate_nb(offsets, indices, coeffs, src, out):
    n = offsets.shape[0] - 1
    d = src.shape[1]
    for h in range(n):
        for e in range(offsets[h], offsets[h + 1]):
            i = indices[e]
            c = coeffs[e]
            for k in range(d):
                out[h, k] += c * src[i, k]


def _csr_propagate_np(offsets, indices, coeffs, src, out):
    if indices.shape[0] == 0:
        return
    rows = np.repeat(
        np.arange(offsets.shape[0] - 1, dtype=np.int64), np.diff(offsets)
    )
    np.add.at(out, rows, coeffs[:, None] * src[indices])


def csr_propagate(offsets, indices, coeffs, src):
    """Weighted neighbor sum over a CSR adjacency; returns an (n, d) array."""
    out = np.zeros((offsets.shape[0] - 1, src.shape[1]), dtype=src.dtype)
    if use_numba():
        _csr_propagate_nb(offsets, indices, coeffs, src, out)
    else:
        _csr_propagate_np(offsets, indices, coeffs, src, out)
    return out


# ---------------------------------------------------------------------------
# Ragged slot pooling: mean of table rows per variable-length slot, and the
# matching scatter for the backward pass.  Used to turn per-feature tables
# into per-instance field vectors (behaviors, attribute lists).
# ---------------------------------------------------------------------------


@njit(cache=True)
def _segment_sum_nb(flat, seg_offsets, table, out):
    n = seg_offsets.shape[0] - 1
    d = table.shape[1]
    for s in range(n):
        for e in range(seg_offsets[s], seg_offsets[s + 1]):
            r = flat[e]
            for k in range(d):
                out[s, k] += table[r, k]


def _segment_sum_np(flat, seg_offsets, table, out):
    if flat.shape[0] == 0:
        return
    lens = np.diff(seg_offsets)
    segs = np.repeat(np.arange(seg_offsets.shape[0] - 1, dtype=np.int64), lens)
    np.add.at(out, segs, table[flat])


def _inv_lengths(seg_offsets, dtype):
    lens = np.diff(seg_offsets)
    inv = np.zeros(lens.shape[0], dtype=dtype)
    nz = lens > 0
    inv[nz] = dtype.type(1.0) / lens[nz].astype(dtype)
    return inv


def segment_mean(flat, seg_offsets, table):
    """Mean-pool table rows per segment; empty segments give zero vectors.

    The jitted part is a pure gather-sum; the 1/len scaling happens in
    numpy either way so both paths agree bitwise.
    """
    out = np.zeros((seg_offsets.shape[0] - 1, table.shape[1]), dtype=table.dtype)
    if use_numba():
        _segment_sum_nb(flat, seg_offsets, table, out)
    else:
        _segment_sum_np(flat, seg_offsets, table, out)
    out *= _inv_lengths(seg_offsets, table.dtype)[:, None]
    return out


@njit(cache=True)
def _segment_scatter_add_nb(flat, seg_offsets, rows, grad_table):
    n = seg_offsets.shape[0] - 1
    d = grad_table.shape[1]
    for s in range(n):
        for e in range(seg_offsets[s], seg_offsets[s + 1]):
            r = flat[e]
            for k in range(d):
                grad_table[r, k] += rows[s, k]


def _segment_scatter_add_np(flat, seg_offsets, rows, grad_table):
    if flat.shape[0] == 0:
        return
    lens = np.diff(seg_offsets)
    segs = np.repeat(np.arange(seg_offsets.shape[0] - 1, dtype=np.int64), lens)
    np.add.at(grad_table, flat, rows[segs])


def segment_mean_backward(flat, seg_offsets, grad_out, grad_table):
    """Accumulate the gradient of :func:`segment_mean` into ``grad_table``."""
    rows = grad_out * _inv_lengths(seg_offsets, grad_table.dtype)[:, None]
    if use_numba():
        _segment_scatter_add_nb(flat, seg_offsets, rows, grad_table)
    else:
        _segment_scatter_add_np(flat, seg_offsets, rows, grad_table)


# ---------------------------------------------------------------------------
# Co-occurrence counting for the kNN similarity graph.  For a query entity
# with sorted member list, count shared members with every other entity via
# the inverted (member -> entities) CSR.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _cooccurrence_counts_nb(
    members, inv_offsets, inv_indices, counts
):
    for t in range(members.shape[0]):
        m = members[t]
        for e in range(inv_offsets[m], inv_offsets[m + 1]):
            counts[inv_indices[e]] += 1


def _cooccurrence_counts_np(members, inv_offsets, inv_indices, counts):
    if members.shape[0] == 0:
        return
    chunks = [
        inv_indices[inv_offsets[m] : inv_offsets[m + 1]] for m in members
    ]
    gathered = np.concatenate(chunks) if chunks else inv_indices[:0]
    if gathered.shape[0]:
        counts += np.bincount(gathered, minlength=counts.shape[0])


def cooccurrence_counts(members, inv_offsets, inv_indices, n_entities):
    """Count shared members between one entity and all entities."""
    counts = np.zeros(n_entities, dtype=np.int64)
    if use_numba():
        _cooccurrence_counts_nb(members, inv_offsets, inv_indices, counts)
    else:
        _cooccurrence_counts_np(members, inv_offsets, inv_indices, counts)
    return counts


def warmup():
    """Trigger jit compilation of all kernels on tiny inputs."""
    if not use_numba():
        return
    off = np.array([0, 1], dtype=np.int64)
    idx = np.array([0], dtype=np.int32)
    for dt in (np.float32, np.float64):
        e = np.ones((1, 2), dtype=dt)
        csr_propagate(off, idx, np.ones(1, dtype=dt), e)
        segment_mean(idx.astype(np.int64), off, e)
        segment_mean_backward(idx.astype(np.int64), off, e.copy(), e.copy())
    cooccurrence_counts(np.array([0], dtype=np.int64), off, idx, 1)
