"""Hot loops of the boosted-tree retention model.

Each kernel has a numba implementation and a numpy implementation with the
same floating-point operation order, so the two agree bit for bit. The
module-level names pick one according to ``retmatch._accel.USE_NUMBA``.
"""
import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# split finding


@njit
def _node_totals_nb(g, h, node_of, n_nodes):
    G = np.zeros(n_nodes)
    H = np.zeros(n_nodes)
    C = np.zeros(n_nodes, dtype=np.int64)
    for i in range(g.shape[0]):
        j = node_of[i]
        if j >= 0:
            G[j] += g[i]
            H[j] += h[i]
            C[j] += 1
    return G, H, C


def _node_totals_np(g, h, node_of, n_nodes):
    live = node_of >= 0
    nodes = node_of[live]
    # bincount accumulates in index order, matching the sequential loop
    G = np.bincount(nodes, weights=g[live], minlength=n_nodes)
    H = np.bincount(nodes, weights=h[live], minlength=n_nodes)
    C = np.bincount(nodes, minlength=n_nodes).astype(np.int64)
    return G, H, C


@njit
def _best_splits_nb(X, g, h, node_of, order, n_nodes, reg_lambda, min_leaf):
    n, p = X.shape
    G, H, C = _node_totals_nb(g, h, node_of, n_nodes)
    parent = np.empty(n_nodes)
    for j in range(n_nodes):
        parent[j] = G[j] * G[j] / (H[j] + reg_lambda)
    best_gain = np.zeros(n_nodes)
    best_feat = np.full(n_nodes, -1, dtype=np.int64)
    best_thr = np.zeros(n_nodes)
    GL = np.zeros(n_nodes)
    HL = np.zeros(n_nodes)
    CL = np.zeros(n_nodes, dtype=np.int64)
    last = np.zeros(n_nodes)
    for f in range(p):
        GL[:] = 0.0
        HL[:] = 0.0
        CL[:] = 0
        for t in range(n):
            i = order[f, t]
            j = node_of[i]
            if j < 0:
                continue
            v = X[i, f]
            if CL[j] >= min_leaf and C[j] - CL[j] >= min_leaf and v > last[j]:
                gr = G[j] - GL[j]
                hr = H[j] - HL[j]
                gain = GL[j] * GL[j] / (HL[j] + reg_lambda) + gr * gr / (hr + reg_lambda) - parent[j]
                if gain > best_gain[j]:
                    best_gain[j] = gain
                    best_feat[j] = f
                    thr = last[j] + 0.5 * (v - last[j])
                    if thr <= last[j]:
                        thr = v
                    best_thr[j] = thr
            GL[j] += g[i]
            HL[j] += h[i]
            CL[j] += 1
            last[j] = v
    return best_feat, best_thr, best_gain, G, H


def _best_splits_np(X, g, h, node_of, order, n_nodes, reg_lambda, min_leaf):
    n, p = X.shape
    G, H, C = _node_totals_np(g, h, node_of, n_nodes)
    parent = G * G / (H + reg_lambda)
    best_gain = np.zeros(n_nodes)
    best_feat = np.full(n_nodes, -1, dtype=np.int64)
    best_thr = np.zeros(n_nodes)
    for f in range(p):
        ordf = order[f]
        nodes_sorted = node_of[ordf]
        for j in range(n_nodes):
            if C[j] < 2 * min_leaf:
                continue
            idx = ordf[nodes_sorted == j]
            v = X[idx, f]
            gl_incl = np.cumsum(g[idx])
            hl_incl = np.cumsum(h[idx])
            # left statistics *before* adding position t, for t = 1..c-1
            gl = gl_incl[:-1]
            hl = hl_incl[:-1]
            cl = np.arange(1, idx.shape[0])
            ok = (cl >= min_leaf) & (C[j] - cl >= min_leaf) & (v[1:] > v[:-1])
            if not ok.any():
                continue
            gr = G[j] - gl
            hr = H[j] - hl
            gain = gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - parent[j]
            gain = np.where(ok, gain, -np.inf)
            t = int(np.argmax(gain))
            if gain[t] > best_gain[j]:
                best_gain[j] = gain[t]
                best_feat[j] = f
                lo, hi = v[t], v[t + 1]
                thr = lo + 0.5 * (hi - lo)
                best_thr[j] = hi if thr <= lo else thr
    return best_feat, best_thr, best_gain, G, H


# ---------------------------------------------------------------------------
# ensemble prediction


@njit
def _predict_margin_nb(X, feature, threshold, left, right, value, roots):
    n = X.shape[0]
    out = np.zeros(n)
    for i in range(n):
        s = 0.0
        for t in range(roots.shape[0]):
            node = roots[t]
            while feature[node] >= 0:
                if X[i, feature[node]] < threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            s += value[node]
        out[i] = s
    return out


def _predict_margin_np(X, feature, threshold, left, right, value, roots):
    n = X.shape[0]
    out = np.zeros(n)
    rows = np.arange(n)
    for root in roots:
        node = np.full(n, root, dtype=np.int64)
        internal = feature[node] >= 0
        while internal.any():
            nd = node[internal]
            go_left = X[rows[internal], feature[nd]] < threshold[nd]
            node[internal] = np.where(go_left, left[nd], right[nd])
            internal = feature[node] >= 0
        out += value[node]
    return out


if USE_NUMBA:
    node_totals = _node_totals_nb
    best_splits = _best_splits_nb
    predict_margin = _predict_margin_nb
else:
    node_totals = _node_totals_np
    best_splits = _best_splits_np
    predict_margin = _predict_margin_np

KERNELS = {
    "node_totals": (_node_totals_nb, _node_totals_np),
    "best_splits": (_best_splits_nb, _best_splits_np),
    "predict_margin": (_predict_margin_nb, _predict_margin_np),
}
