"""Graph construction: attribute graphs, user kNN, item transitions,
user-item bipartite, and the merged collaborative graph.

All graphs are undirected, self-loop-free, duplicate-free, and stored as a
symmetric CSR (both directions of every edge present) with a per-arc type
tag.  Node ids live in the global feature-index space of the vocabulary, so
users occupy [0, M) and items [M, M+N).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

# Edge type tags.
UA, VB, UU, VV, UV = 0, 1, 2, 3, 4
EDGE_TYPE_NAMES = {UA: "UA", VB: "VB", UU: "UU", VV: "VV", UV: "UV"}

_GRAPH_MAGIC = b"DGGR"
_GRAPH_VERSION = 1


class GraphError(ValueError):
    pass


@dataclass
class SparseGraph:
    """Undirected typed graph in CSR form.

    ``offsets`` has length node_count+1; ``indices`` holds neighbor ids in
    ascending order within each row; ``tags`` carries the edge type of each
    stored arc.  ``edge_count`` counts undirected edges (stored arcs / 2).
    """

    node_count: int
    offsets: np.ndarray
    indices: np.ndarray
    tags: np.ndarray

    @property
    def degree(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def edge_count(self) -> int:
        return self.indices.shape[0] // 2

    def neighbors(self, node: int) -> np.ndarray:
        return self.indices[self.offsets[node] : self.offsets[node + 1]]

    def edge_set(self) -> set[tuple[int, int]]:
        """Undirected edge set as (min, max) pairs (tags ignored)."""
        out = set()
        for h in range(self.node_count):
            for i in self.neighbors(h):
                out.add((min(h, int(i)), max(h, int(i))))
        return out

    def validate(self) -> None:
        """Full-scan check of the symmetry / no-self-loop / no-dup invariants."""
        arcs = set()
        for h in range(self.node_count):
            row = self.neighbors(h)
            if np.any(row == h):
                raise GraphError(f"self-loop at node {h}")
            if row.shape[0] != np.unique(row).shape[0]:
                raise GraphError(f"duplicate edge at node {h}")
            lo = self.offsets[h]
            for j, i in enumerate(row):
                arcs.add((h, int(i), int(self.tags[lo + j])))
        for h, i, t in arcs:
            if (i, h, t) not in arcs:
                raise GraphError(f"asymmetric edge ({h},{i}) tag {t}")

    def filter_tags(self, keep: set[int]) -> "SparseGraph":
        """Sub-graph containing only arcs whose tag is in ``keep``."""
        mask = np.isin(self.tags, list(keep))
        lens = np.zeros(self.node_count, dtype=np.int64)
        if mask.any():
            rows = np.repeat(
                np.arange(self.node_count, dtype=np.int64), np.diff(self.offsets)
            )
            lens = np.bincount(rows[mask], minlength=self.node_count)
        offsets = np.zeros(self.node_count + 1, dtype=np.int64)
        np.cumsum(lens, out=offsets[1:])
        return SparseGraph(
            self.node_count, offsets, self.indices[mask], self.tags[mask]
        )


def from_edges(node_count: int, a, b, tag: int) -> SparseGraph:
    """Build a graph from endpoint arrays: symmetrize, drop self-loops and
    duplicates, sort each row by neighbor index."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    keep = a != b
    a, b = a[keep], b[keep]
    if a.shape[0]:
        pairs = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1)
        pairs = np.unique(pairs, axis=0)
        a, b = pairs[:, 0], pairs[:, 1]
    return _from_arcs(
        node_count,
        np.concatenate([a, b]),
        np.concatenate([b, a]),
        np.full(2 * a.shape[0], tag, dtype=np.uint8),
    )


def _from_arcs(node_count, src, dst, tags) -> SparseGraph:
    if src.shape[0] and int(src.max()) >= node_count:
        raise GraphError("edge endpoint out of range")
    order = np.lexsort((dst, src))
    src, dst, tags = src[order], dst[order], tags[order]
    lens = np.bincount(src, minlength=node_count)
    offsets = np.zeros(node_count + 1, dtype=np.int64)
    np.cumsum(lens, out=offsets[1:])
    return SparseGraph(
        node_count, offsets, dst.astype(np.int32), tags.astype(np.uint8)
    )


# ---------------------------------------------------------------------------
# Builders
# ---------------------------------------------------------------------------


def build_attribute_graph(
    assignments: dict[int, list[int]], node_count: int, tag: int
) -> SparseGraph:
    """Bipartite entity <-> attribute-value graph for one field.

    ``assignments`` maps entity node id to this field's attribute node ids
    (global indices).  Entities with no value stay isolated.
    """
    ent, att = [], []
    for e, vals in assignments.items():
        for v in vals:
            ent.append(e)
            att.append(v)
    return from_edges(node_count, ent, att, tag)


@dataclass
class SimilarityParams:
    """Weights of the two cosine terms and the per-node neighbor budget."""

    alpha1: float = 0.5
    alpha2: float = 0.5
    k: int = 10

    def __post_init__(self):
        if self.alpha1 < 0 or self.alpha2 < 0 or self.alpha1 + self.alpha2 <= 0:
            raise GraphError("alpha1, alpha2 must be >= 0 with positive sum")
        if self.k < 1:
            raise GraphError("k must be >= 1")


def _binary_cosine(count: int, n_i: int, n_j: int) -> float:
    # cosine of two binary indicator vectors; 0 when either is all-zero
    if n_i == 0 or n_j == 0:
        return 0.0
    return count / (np.sqrt(n_i) * np.sqrt(n_j))


def user_similarity(
    items_i, items_j, attrs_i, attrs_j, params: SimilarityParams
) -> float:
    """Weighted cosine over interaction rows plus attribute indicators.

    Inputs are the sets (or sorted arrays) of item ids / attribute ids of
    each user; cosines of binary vectors reduce to intersection counts.
    """
    si, sj = set(map(int, items_i)), set(map(int, items_j))
    ai, aj = set(map(int, attrs_i)), set(map(int, attrs_j))
    pref = _binary_cosine(len(si & sj), len(si), len(sj))
    attr = _binary_cosine(len(ai & aj), len(ai), len(aj))
    return params.alpha1 * pref + params.alpha2 * attr


def _invert(member_lists: list[np.ndarray], n_members: int):
    """member -> entity inverted index (CSR over member ids)."""
    lens = np.zeros(n_members, dtype=np.int64)
    for mem in member_lists:
        if mem.shape[0]:
            lens += np.bincount(mem, minlength=n_members)
    offsets = np.zeros(n_members + 1, dtype=np.int64)
    np.cumsum(lens, out=offsets[1:])
    out = np.empty(int(offsets[-1]), dtype=np.int32)
    cursor = offsets[:-1].copy()
    for e, mem in enumerate(member_lists):
        for m in mem:
            out[cursor[m]] = e
            cursor[m] += 1
    return offsets, out


def build_knn_user_graph(
    user_items: list[np.ndarray],
    user_attrs: list[np.ndarray],
    params: SimilarityParams,
    n_items: int,
    n_attr_values: int,
) -> SparseGraph:
    """Top-k similarity graph over users, union-symmetrized.

    Similarity is computed via inverted indexes over shared items and shared
    attribute values, never through a dense user-user matrix.  Ties break
    toward the smaller user index; zero-similarity candidates are skipped.
    Node ids are user indices (graph covers only the user range).
    """
    m = len(user_items)
    if params.k >= m:
        raise GraphError(f"k={params.k} must be < number of users ({m})")
    user_items = [np.asarray(x, dtype=np.int64) for x in user_items]
    user_attrs = [np.asarray(x, dtype=np.int64) for x in user_attrs]
    item_inv = _invert(user_items, n_items)
    attr_inv = _invert(user_attrs, n_attr_values)
    item_norms = np.sqrt(np.array([len(x) for x in user_items], dtype=np.float64))
    attr_norms = np.sqrt(np.array([len(x) for x in user_attrs], dtype=np.float64))

    src, dst = [], []
    for i in range(m):
        score = np.zeros(m, dtype=np.float64)
        if item_norms[i] > 0:
            c = kernels.cooccurrence_counts(user_items[i], *item_inv, m)
            nz = c > 0
            nz &= item_norms > 0
            score[nz] += params.alpha1 * (c[nz] / (item_norms[i] * item_norms[nz]))
        if attr_norms[i] > 0:
            c = kernels.cooccurrence_counts(user_attrs[i], *attr_inv, m)
            nz = c > 0
            nz &= attr_norms > 0
            score[nz] += params.alpha2 * (c[nz] / (attr_norms[i] * attr_norms[nz]))
        score[i] = 0.0
        cand = np.flatnonzero(score > 0.0)
        if cand.shape[0] == 0:
            continue
        # descending score, ascending index on ties
        order = np.lexsort((cand, -score[cand]))
        for j in cand[order[: params.k]]:
            src.append(i)
            dst.append(int(j))
    return from_edges(m, src, dst, UU)


def build_transition_graph(
    sequences: list[np.ndarray], node_count: int, offset: int = 0
) -> SparseGraph:
    """Item-item edges between consecutive behaviors of the same user.

    ``offset`` shifts item ids into the global node space; self-transitions
    are dropped and duplicates collapsed.
    """
    a, b = [], []
    for seq in sequences:
        for t in range(len(seq) - 1):
            if seq[t] != seq[t + 1]:
                a.append(int(seq[t]) + offset)
                b.append(int(seq[t + 1]) + offset)
    return from_edges(node_count, a, b, VV)


def build_bipartite(
    user_items: list[np.ndarray], n_users: int, n_items: int
) -> SparseGraph:
    """User-item interaction graph; item node ids offset by the user count."""
    src, dst = [], []
    for u, items in enumerate(user_items):
        for v in items:
            src.append(u)
            dst.append(n_users + int(v))
    return from_edges(n_users + n_items, src, dst, UV)


def merge_collaborative(
    uu: SparseGraph, uv: SparseGraph, vv: SparseGraph, n_users: int, n_items: int
) -> SparseGraph:
    """Union of UU, UV and VV edge sets over the combined node space.

    ``uu`` is indexed over users, ``vv`` over items (local, unshifted), and
    ``uv`` over the combined space.  Tags are preserved so staged propagation
    can filter by edge type.
    """
    n = n_users + n_items
    if uv.node_count != n:
        raise GraphError("bipartite graph node count must be users + items")
    if uu.node_count > n_users or vv.node_count > n_items:
        raise GraphError("overlapping node index ranges in merge inputs")
    srcs, dsts, tags = [], [], []

    def collect(g: SparseGraph, shift: int, tag: int):
        rows = np.repeat(
            np.arange(g.node_count, dtype=np.int64), np.diff(g.offsets)
        )
        srcs.append(rows + shift)
        dsts.append(g.indices.astype(np.int64) + shift)
        tags.append(np.full(rows.shape[0], tag, dtype=np.uint8))

    collect(uu, 0, UU)
    collect(vv, n_users, VV)
    collect(uv, 0, UV)
    return _from_arcs(
        n, np.concatenate(srcs), np.concatenate(dsts), np.concatenate(tags)
    )


# ---------------------------------------------------------------------------
# Neighbor sampling
# ---------------------------------------------------------------------------


def sample_neighbors(
    graph: SparseGraph, node: int, fanout: int, rng_seed: int, epoch: int = 0
) -> np.ndarray:
    """Uniform sample without replacement of min(fanout, degree) neighbors.

    Deterministic per (seed, node, epoch).
    """
    if fanout < 1:
        raise GraphError("fanout must be >= 1")
    nbrs = graph.neighbors(node)
    if nbrs.shape[0] <= fanout:
        return nbrs.copy()
    rng = np.random.default_rng(
        np.random.SeedSequence([rng_seed, node, epoch])
    )
    pick = rng.choice(nbrs.shape[0], size=fanout, replace=False)
    return nbrs[np.sort(pick)]


def sampled_view(
    graph: SparseGraph, fanout: int, rng_seed: int, epoch: int
) -> SparseGraph:
    """Per-epoch graph view with each row capped at ``fanout`` neighbors.

    Rows are sampled independently, so the view is directed in general; it is
    only used as a propagation operator during training.
    """
    rows_idx, rows_tag, lens = [], [], np.zeros(graph.node_count, dtype=np.int64)
    for h in range(graph.node_count):
        lo, hi = graph.offsets[h], graph.offsets[h + 1]
        if hi - lo <= fanout:
            rows_idx.append(graph.indices[lo:hi])
            rows_tag.append(graph.tags[lo:hi])
            lens[h] = hi - lo
        else:
            rng = np.random.default_rng(
                np.random.SeedSequence([rng_seed, h, epoch])
            )
            pick = np.sort(rng.choice(hi - lo, size=fanout, replace=False))
            rows_idx.append(graph.indices[lo:hi][pick])
            rows_tag.append(graph.tags[lo:hi][pick])
            lens[h] = fanout
    offsets = np.zeros(graph.node_count + 1, dtype=np.int64)
    np.cumsum(lens, out=offsets[1:])
    return SparseGraph(
        graph.node_count,
        offsets,
        np.concatenate(rows_idx) if rows_idx else np.empty(0, np.int32),
        np.concatenate(rows_tag) if rows_tag else np.empty(0, np.uint8),
    )


# ---------------------------------------------------------------------------
# Binary format and stats
# ---------------------------------------------------------------------------


def save_graph(graph: SparseGraph, path) -> None:
    """Binary layout: magic, version, node_count, stored arc count, tag flag,
    then u64 offsets, u32 neighbor indices, u8 tags."""
    with open(path, "wb") as f:
        f.write(_GRAPH_MAGIC)
        f.write(
            struct.pack(
                "<IQQB",
                _GRAPH_VERSION,
                graph.node_count,
                graph.indices.shape[0],
                1,
            )
        )
        f.write(graph.offsets.astype("<u8").tobytes())
        f.write(graph.indices.astype("<u4").tobytes())
        f.write(graph.tags.astype("u1").tobytes())


def load_graph(path) -> SparseGraph:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _GRAPH_MAGIC:
            raise GraphError(f"not a graph file: {path}")
        version, n, nnz, has_tags = struct.unpack("<IQQB", f.read(21))
        if version != _GRAPH_VERSION:
            raise GraphError(f"unsupported graph version {version}")
        offsets = np.frombuffer(f.read(8 * (n + 1)), dtype="<u8").astype(np.int64)
        indices = np.frombuffer(f.read(4 * nnz), dtype="<u4").astype(np.int32)
        tags = (
            np.frombuffer(f.read(nnz), dtype="u1").copy()
            if has_tags
            else np.zeros(nnz, dtype=np.uint8)
        )
    return SparseGraph(int(n), offsets, indices, tags)


def degree_histogram(graph: SparseGraph) -> dict[int, int]:
    deg = graph.degree
    values, counts = np.unique(deg, return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}


def graph_stats(graph: SparseGraph, name: str = "") -> dict:
    return {
        "name": name,
        "node_count": graph.node_count,
        "edge_count": graph.edge_count,
        "degree_histogram": degree_histogram(graph),
    }


def write_stats(graphs: dict[str, SparseGraph], path) -> None:
    stats = [graph_stats(g, name) for name, g in graphs.items()]
    Path(path).write_text(json.dumps(stats, indent=2, sort_keys=True))
