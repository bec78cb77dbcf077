"""Gradient boosting with logistic loss over depth-limited regression trees.

Split finding is exact greedy over sorted feature values using the second
order gain ``GL^2/(HL+l) + GR^2/(HR+l) - G^2/(H+l)``; leaves take the Newton
weight ``-G/(H+l)`` scaled by the learning rate. A sample goes to the left
child when ``x[feature] < threshold``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels

LABEL_EPS = 1e-7


def _sigmoid(z):
    z = np.clip(z, -500.0, 500.0)
    return 1.0 / (1.0 + np.exp(-z))


def log_loss(y, p) -> float:
    p = np.clip(p, 1e-15, 1.0 - 1e-15)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


@dataclass
class TreeEnsemble:
    """Flattened trees. ``feature == -1`` marks a leaf; leaf values include the learning rate."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray
    base_margin: float
    n_inputs: int
    loss_history: list[float] = field(default_factory=list)

    @property
    def n_trees(self) -> int:
        return int(self.roots.shape[0])

    def tree_nodes(self, t: int) -> np.ndarray:
        stop = self.roots[t + 1] if t + 1 < self.n_trees else self.feature.shape[0]
        return np.arange(self.roots[t], stop)

    def margin(self, X, trees: slice | None = None) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=float)
        roots = self.roots if trees is None else self.roots[trees]
        out = kernels.predict_margin(X, self.feature, self.threshold, self.left, self.right, self.value, roots)
        return out + self.base_margin if trees is None else out

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.margin(X))


def _build_tree(X, order, g, h, max_depth, learning_rate, reg_lambda, min_leaf, nodes):
    """Grow one tree level by level; append it to ``nodes`` and return per-sample leaf values."""
    feat_l, thr_l, left_l, right_l, val_l = nodes
    n = X.shape[0]
    root = len(feat_l)
    feat_l.append(-1)
    thr_l.append(0.0)
    left_l.append(-1)
    right_l.append(-1)
    val_l.append(0.0)
    level = [root]
    node_of = np.zeros(n, dtype=np.int64)
    leaf_value = np.zeros(n)
    for depth in range(max_depth + 1):
        n_nodes = len(level)
        if depth < max_depth:
            best_feat, best_thr, _, G, H = kernels.best_splits(
                X, g, h, node_of, order, n_nodes, reg_lambda, min_leaf
            )
        else:
            G, H, _ = kernels.node_totals(g, h, node_of, n_nodes)
            best_feat = np.full(n_nodes, -1, dtype=np.int64)
            best_thr = np.zeros(n_nodes)
        next_level = []
        left_local = np.full(n_nodes, -1, dtype=np.int64)
        right_local = np.full(n_nodes, -1, dtype=np.int64)
        leaf_vals = np.zeros(n_nodes)
        for j, nid in enumerate(level):
            if best_feat[j] >= 0:
                lid = len(feat_l)
                for _ in range(2):
                    feat_l.append(-1)
                    thr_l.append(0.0)
                    left_l.append(-1)
                    right_l.append(-1)
                    val_l.append(0.0)
                feat_l[nid] = int(best_feat[j])
                thr_l[nid] = float(best_thr[j])
                left_l[nid] = lid
                right_l[nid] = lid + 1
                left_local[j] = len(next_level)
                right_local[j] = len(next_level) + 1
                next_level += [lid, lid + 1]
            else:
                leaf_vals[j] = -G[j] / (H[j] + reg_lambda) * learning_rate
                val_l[nid] = float(leaf_vals[j])
        live = node_of >= 0
        idx = np.flatnonzero(live)
        loc = node_of[idx]
        split = best_feat[loc] >= 0
        done = idx[~split]
        leaf_value[done] = leaf_vals[loc[~split]]
        node_of[done] = -1
        sidx, sloc = idx[split], loc[split]
        go_left = X[sidx, best_feat[sloc]] < best_thr[sloc]
        node_of[sidx] = np.where(go_left, left_local[sloc], right_local[sloc])
        if not next_level:
            break
        level = next_level
    return leaf_value


def fit_gbdt(
    X,
    y,
    n_trees: int = 200,
    max_depth: int = 6,
    learning_rate: float = 0.05,
    reg_lambda: float = 1.0,
    min_leaf: int = 5,
) -> TreeEnsemble:
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    rate = float(np.clip(y.mean(), LABEL_EPS, 1.0 - LABEL_EPS))
    base = float(np.log(rate / (1.0 - rate)))
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    nodes = ([], [], [], [], [])
    roots = []
    margin = np.full(n, base)
    history = [log_loss(y, _sigmoid(margin))]
    for _ in range(n_trees):
        prob = _sigmoid(margin)
        g = prob - y
        h = prob * (1.0 - prob)
        roots.append(len(nodes[0]))
        margin = margin + _build_tree(X, order, g, h, max_depth, learning_rate, reg_lambda, min_leaf, nodes)
        history.append(log_loss(y, _sigmoid(margin)))
    feat_l, thr_l, left_l, right_l, val_l = nodes
    return TreeEnsemble(
        feature=np.asarray(feat_l, dtype=np.int64),
        threshold=np.asarray(thr_l, dtype=float),
        left=np.asarray(left_l, dtype=np.int64),
        right=np.asarray(right_l, dtype=np.int64),
        value=np.asarray(val_l, dtype=float),
        roots=np.asarray(roots, dtype=np.int64),
        base_margin=base,
        n_inputs=p,
        loss_history=history,
    )
