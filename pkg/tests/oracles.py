"""Independent brute-force oracles used across the test suite.

Everything here is written against dense arrays and naive loops, never the
package's CSR machinery, so each test compares two genuinely different
computations.
"""

import numpy as np


def dense_adjacency(graph) -> np.ndarray:
    a = np.zeros((graph.node_count, graph.node_count))
    for h in range(graph.node_count):
        for i in graph.neighbors(h):
            a[h, int(i)] = 1.0
    return a


def dense_norm_adjacency(graph) -> np.ndarray:
    """D^{-1/2} A D^{-1/2} with zero rows/cols for isolated nodes."""
    a = dense_adjacency(graph)
    deg = a.sum(axis=1)
    inv = np.zeros_like(deg)
    inv[deg > 0] = 1.0 / np.sqrt(deg[deg > 0])
    return inv[:, None] * a * inv[None, :]


def dense_lightgcn_layer(graph, e: np.ndarray) -> np.ndarray:
    return dense_norm_adjacency(graph) @ e


def dense_gcn_layer(graph, e, w, act):
    """Eq.-style GCN layer: central node enters the sum with factor 1/deg
    (factor 1 when isolated)."""
    a_hat = dense_norm_adjacency(graph)
    deg = dense_adjacency(graph).sum(axis=1)
    self_c = np.where(deg > 0, 1.0 / np.maximum(deg, 1), 1.0)
    agg = a_hat @ e + self_c[:, None] * e
    return act(agg @ w.T)


def dense_ngcf_layer(graph, e, w1, w2, act):
    a_hat = dense_norm_adjacency(graph)
    nbr = a_hat @ e
    return act((e + nbr) @ w1.T + (e * nbr) @ w2.T)


def dense_propagate_pooled(graph, e, layers, mode):
    """LightGCN multi-layer propagation + pooling via dense powers."""
    states = [e]
    cur = e
    a_hat = dense_norm_adjacency(graph)
    for _ in range(layers):
        cur = a_hat @ cur
        states.append(cur)
    out = sum(states)
    if mode == "mean":
        out = out / len(states)
    return out


def pairwise_auc(scores, labels) -> float:
    """O(P*N) definition: ties count 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (pos.shape[0] * neg.shape[0])


def brute_user_similarity(y_rows, attr_rows, alpha1, alpha2):
    """Dense all-pairs Eq.-8 similarity matrix over binary indicators.

    Arithmetic matches the production order: count / (sqrt * sqrt)."""
    m = y_rows.shape[0]
    sim = np.zeros((m, m))
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            s = 0.0
            ci, cj = y_rows[i].sum(), y_rows[j].sum()
            if ci > 0 and cj > 0:
                s += alpha1 * (
                    float(y_rows[i] @ y_rows[j]) / (np.sqrt(ci) * np.sqrt(cj))
                )
            ai, aj = attr_rows[i].sum(), attr_rows[j].sum()
            if ai > 0 and aj > 0:
                s += alpha2 * (
                    float(attr_rows[i] @ attr_rows[j]) / (np.sqrt(ai) * np.sqrt(aj))
                )
            sim[i, j] = s
    return sim


def brute_knn_edges(sim: np.ndarray, k: int) -> set:
    """Union-of-top-k selection, ties to the smaller index, zeros skipped."""
    m = sim.shape[0]
    edges = set()
    for i in range(m):
        cand = [(-sim[i, j], j) for j in range(m) if j != i and sim[i, j] > 0]
        cand.sort()
        for _, j in cand[:k]:
            edges.add((min(i, j), max(i, j)))
    return edges


def random_graph(n, p, rng, tag=0):
    """Random undirected simple graph via the package constructor (the
    construction itself is trivial; tests using this compare propagation
    math, not graph building)."""
    from dgctr.graphs import from_edges

    a, b = [], []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                a.append(i)
                b.append(j)
    return from_edges(n, a, b, tag)


def finite_difference(loss_fn, array, eps=1e-4, coords=None, rng=None):
    """Central-difference gradient of ``loss_fn()`` w.r.t. entries of
    ``array`` (perturbed in place)."""
    flat = array.reshape(-1)
    if coords is None:
        coords = range(flat.shape[0])
    grads = {}
    for c in coords:
        orig = flat[c]
        flat[c] = orig + eps
        lp = loss_fn()
        flat[c] = orig - eps
        lm = loss_fn()
        flat[c] = orig
        grads[c] = (lp - lm) / (2 * eps)
    return grads


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-8)
