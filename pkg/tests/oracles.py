"""Independent reference implementations used as test oracles.

Everything here is written as plain Python loops, deliberately sharing no
code with the package, so agreement is meaningful.
"""

import math

import numpy as np


def matmul_triple_loop(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def fd_gradients(params, loss_value_fn, h=1e-5):
    """Central finite differences of loss_value_fn() w.r.t. every parameter.

    loss_value_fn must re-evaluate the loss from the current parameter
    values (no caching).  Returns {name: gradient array}.
    """
    grads = {}
    for name in params.names():
        tensor = params[name]
        g = np.zeros_like(tensor.data)
        flat = tensor.data.ravel()
        gflat = g.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            up = loss_value_fn()
            flat[idx] = orig - h
            down = loss_value_fn()
            flat[idx] = orig
            gflat[idx] = (up - down) / (2.0 * h)
        grads[name] = g
    return grads


def max_rel_error(analytic, numeric, floor=1e-8):
    """max |a - n| / max(|a|, |n|, floor) over all parameter entries."""
    worst = 0.0
    for name, num in numeric.items():
        ana = analytic[name]
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), floor)
        worst = max(worst, float(np.max(np.abs(ana - num) / denom)))
    return worst


def brute_force_virtual_edges(ids, features, sigma):
    """All unordered pairs with cosine similarity above sigma (pairwise loop)."""
    out = set()
    for i in range(len(ids)):
        for j in range(i + 1, len(ids)):
            fi, fj = features[i], features[j]
            ni = math.sqrt(sum(v * v for v in fi))
            nj = math.sqrt(sum(v * v for v in fj))
            if ni == 0.0 or nj == 0.0:
                continue
            dot = sum(x * y for x, y in zip(fi, fj))
            if dot / (ni * nj) > sigma:
                out.add((min(ids[i], ids[j]), max(ids[i], ids[j])))
    return out


def reference_aggregate(node_features, edges, virtual_edges, weights, layers):
    """Straight-line per-node implementation of the layered aggregation.

    node_features: {node_id: list[float]}; edges / virtual_edges: lists of
    (u, v) pairs; weights: {layer: (W0, W1, W2)} with W0 (2d x d), W1
    (2d x d), W2 (3d x d) oriented for row-vector multiplication.
    Returns {node_id: np.ndarray} of final embeddings.
    """
    def vec_mat(v, m):
        return [sum(v[r] * m[r][c] for r in range(len(v))) for c in range(len(m[0]))]

    def relu_vec(v):
        return [x if x > 0.0 else 0.0 for x in v]

    def normalize(v):
        n = math.sqrt(sum(x * x for x in v))
        return [x / n for x in v] if n > 0 else list(v)

    z = {nid: list(map(float, f)) for nid, f in node_features.items()}
    d = len(next(iter(z.values())))
    all_edges = list(edges) + list(virtual_edges)
    ef = {}
    for (u, v) in all_edges:
        ef[(u, v)] = [(zu + zv) / 2.0 for zu, zv in zip(z[u], z[v])]

    for layer in range(1, layers + 1):
        w0, w1, w2 = weights[layer]
        new_z = {}
        for nid in z:
            msgs = []
            for (u, v) in all_edges:
                if v == nid:
                    other = u
                elif u == nid:
                    other = v
                else:
                    continue
                msgs.append(relu_vec(vec_mat(ef[(u, v)] + z[other], w0)))
            if msgs:
                agg = [sum(m[c] for m in msgs) / len(msgs) for c in range(d)]
            else:
                agg = [0.0] * d
            new_z[nid] = normalize(relu_vec(vec_mat(z[nid] + agg, w1)))
        new_ef = dict(ef)
        for (u, v) in edges:  # only real edges refresh their features
            cat = new_z[u] + ef[(u, v)] + new_z[v]
            new_ef[(u, v)] = normalize(relu_vec(vec_mat(cat, w2)))
        z, ef = new_z, new_ef
    return {nid: np.array(v) for nid, v in z.items()}


def trust_fixed_point(node_ids, neighbors, init, eps, max_iter=100):
    """Jacobi iteration of goodness/fairness on plain dicts.

    neighbors: {node: [(other, normalized_weight), ...]};
    init: {node: list[float]} in [0, 1].
    Returns (goodness, fairness, iterations, converged) with dict values.
    """
    g = {n: list(init[n]) for n in node_ids}
    f = {n: list(init[n]) for n in node_ids}
    d = len(next(iter(init.values())))
    iterations = 0
    converged = False
    while iterations < max_iter:
        new_g = {}
        for n in node_ids:
            nbrs = neighbors.get(n, [])
            if not nbrs:
                new_g[n] = list(g[n])
                continue
            new_g[n] = [
                sum(f[u][i] * w for u, w in nbrs) / len(nbrs) for i in range(d)
            ]
        new_f = {}
        for n in node_ids:
            nbrs = neighbors.get(n, [])
            if not nbrs:
                new_f[n] = list(f[n])
                continue
            new_f[n] = [
                1.0 - sum(abs(w - new_g[u][i]) for u, w in nbrs) / (2.0 * len(nbrs))
                for i in range(d)
            ]
        change_g = sum(
            math.sqrt(sum((new_g[n][i] - g[n][i]) ** 2 for i in range(d)))
            for n in node_ids
        )
        change_f = sum(
            math.sqrt(sum((new_f[n][i] - f[n][i]) ** 2 for i in range(d)))
            for n in node_ids
        )
        g, f = new_g, new_f
        iterations += 1
        if change_g <= eps and change_f <= eps:
            converged = True
            break
    return g, f, iterations, converged


def candidate_triple_loop(ap_sample_edges, virtual_pairs):
    """(AP, sample) candidates: brute force over (s, u, v) triples."""
    out = set()
    for (sample_u, ap_s) in ap_sample_edges:
        for (a, b) in virtual_pairs:
            if a == sample_u:
                out.add((ap_s, b))
            elif b == sample_u:
                out.add((ap_s, a))
    return out
