"""Retention curves: the ground-truth function, its training data and fitted models.

Every model exposes ``predict(features, m)`` for raw feature rows and
``bind(features)``, which precomputes whatever depends only on the users and
returns a :class:`BoundRetention` evaluated by global user id. Simulations
work exclusively with bound models.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .boosting import TreeEnsemble, fit_gbdt
from .clustering import assign, kmeans
from .errors import ConfigError
from .world import World, retention_params

MODEL_FORMAT = "retmatch-model"
MODEL_VERSION = 1
TRAIN_MATCH_MEAN = 2.0


@dataclass(frozen=True)
class RetentionCurve:
    a: float | np.ndarray
    b: float | np.ndarray


def curve_value(a, b, m):
    """Ground-truth stay probability for curve parameters ``(a, b)`` at ``m`` matches.

    Quadratic rise ``a (m-b)^2 + 0.95`` up to the satisfactory count ``b``,
    then ``1 - 0.05 exp(2 (b-m))``; clamped to [0, 1].
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m = np.asarray(m, dtype=float)
    if np.any(m < 0):
        raise ValueError("match count must be non-negative")
    low = a * (m - b) ** 2 + 0.95
    high = 1.0 - 0.05 * np.exp(np.minimum(2.0 * (b - m), 0.0))
    return np.clip(np.where(m <= b, low, high), 0.0, 1.0)


def true_retention(curve, m):
    """``curve`` is anything with ``a`` and ``b`` attributes (a curve, a profile)."""
    out = curve_value(curve.a, curve.b, m)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# bound models


class BoundRetention:
    """Retention model attached to a fixed user population."""

    def __call__(self, ids, m) -> np.ndarray:
        raise NotImplementedError


class CurveBound(BoundRetention):
    def __init__(self, a, b):
        self.a = np.asarray(a, dtype=float)
        self.b = np.asarray(b, dtype=float)

    def __call__(self, ids, m):
        return curve_value(self.a[ids], self.b[ids], m)


class ConstantBound(BoundRetention):
    def __init__(self, p: float):
        self.p = float(p)

    def __call__(self, ids, m):
        return np.full(np.broadcast(np.asarray(ids), np.asarray(m)).shape, self.p)


class StepTableBound(BoundRetention):
    """Per-user piecewise-constant function of ``m``.

    ``table[u, i]`` holds the probability for ``breaks[i-1] <= m < breaks[i]``.
    """

    def __init__(self, breaks, table):
        self.breaks = np.asarray(breaks, dtype=float)
        self.table = np.asarray(table, dtype=float)

    def __call__(self, ids, m):
        col = np.searchsorted(self.breaks, m, side="right")
        return self.table[ids, col]


class ClusterTableBound(BoundRetention):
    def __init__(self, cluster_of, table):
        self.cluster_of = np.asarray(cluster_of, dtype=np.int64)
        self.table = np.asarray(table, dtype=float)
        self.max_count = self.table.shape[1] - 1

    def __call__(self, ids, m):
        return self.table[self.cluster_of[ids], match_bin(m, self.max_count)]


def match_bin(m, max_count: int):
    """Round to the nearest integer (halves up) and clamp to ``[0, max_count]``."""
    return np.clip(np.floor(np.asarray(m, dtype=float) + 0.5), 0, max_count).astype(np.int64)


# ---------------------------------------------------------------------------
# models


class OracleRetention:
    """The ground-truth curve recovered from features through the world projections."""

    variant = "oracle"

    def __init__(self, M_a, M_b):
        self.M_a = np.asarray(M_a, dtype=float)
        self.M_b = np.asarray(M_b, dtype=float)

    @classmethod
    def from_world(cls, world: World) -> OracleRetention:
        return cls(world.M_a, world.M_b)

    def predict(self, features, m):
        a, b = retention_params(features, self.M_a, self.M_b)
        return curve_value(a, b, m)

    def bind(self, features) -> CurveBound:
        return CurveBound(*retention_params(features, self.M_a, self.M_b))

    def to_dict(self):
        return {"M_a": self.M_a.tolist(), "M_b": self.M_b.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["M_a"], d["M_b"])


class BoostedRetention:
    """Logistic-loss tree ensemble on inputs ``features ++ [m]``."""

    variant = "boosted"

    def __init__(self, ensemble: TreeEnsemble | None, constant: float | None = None, degenerate: bool = False):
        self.ensemble = ensemble
        self.constant = constant
        self.degenerate = degenerate

    @property
    def loss_history(self) -> list[float]:
        return [] if self.ensemble is None else self.ensemble.loss_history

    def _inputs(self, features, m):
        features = np.atleast_2d(np.asarray(features, dtype=float))
        m = np.broadcast_to(np.asarray(m, dtype=float), (features.shape[0],))
        return np.column_stack([features, m])

    def predict(self, features, m):
        features = np.atleast_2d(np.asarray(features, dtype=float))
        if self.ensemble is None:
            return np.full(features.shape[0], self.constant)
        return self.ensemble.predict_proba(self._inputs(features, m))

    def bind(self, features) -> BoundRetention:
        if self.ensemble is None:
            return ConstantBound(self.constant)
        breaks, margins = self.step_table(features)
        return StepTableBound(breaks, 1.0 / (1.0 + np.exp(-np.clip(margins, -500, 500))))

    def step_table(self, features):
        """Exact per-user margin as a step function of ``m``.

        With features fixed, the ensemble only changes value at thresholds of
        splits on the ``m`` input, so evaluating each tree once per interval
        between its own ``m`` thresholds determines the whole function.
        """
        ens = self.ensemble
        features = np.atleast_2d(np.asarray(features, dtype=float))
        n_users = features.shape[0]
        m_col = ens.n_inputs - 1
        on_m = ens.feature == m_col
        breaks = np.unique(ens.threshold[on_m])
        table = np.zeros((n_users, breaks.size + 1))
        table[:, 0] = ens.base_margin
        for t in range(ens.n_trees):
            nodes = ens.tree_nodes(t)
            local = np.unique(ens.threshold[nodes][ens.feature[nodes] == m_col])
            reps = np.concatenate([[local[0] - 1.0 if local.size else 0.0], local])
            X = np.empty((reps.size * n_users, ens.n_inputs))
            X[:, :m_col] = np.tile(features, (reps.size, 1))
            X[:, m_col] = np.repeat(reps, n_users)
            vals = ens.margin(X, trees=slice(t, t + 1)).reshape(reps.size, n_users)
            table[:, 0] += vals[0]
            if local.size:
                cols = np.searchsorted(breaks, local, side="right")
                table[:, cols] += (vals[1:] - vals[:-1]).T
        np.cumsum(table, axis=1, out=table)
        return breaks, table

    def to_dict(self):
        if self.ensemble is None:
            return {"constant": self.constant, "degenerate": self.degenerate}
        e = self.ensemble
        return {
            "degenerate": self.degenerate,
            "base_margin": e.base_margin,
            "n_inputs": e.n_inputs,
            "feature": e.feature.tolist(),
            "threshold": e.threshold.tolist(),
            "left": e.left.tolist(),
            "right": e.right.tolist(),
            "value": e.value.tolist(),
            "roots": e.roots.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        if "constant" in d:
            return cls(None, constant=d["constant"], degenerate=d.get("degenerate", True))
        ens = TreeEnsemble(
            feature=np.asarray(d["feature"], dtype=np.int64),
            threshold=np.asarray(d["threshold"], dtype=float),
            left=np.asarray(d["left"], dtype=np.int64),
            right=np.asarray(d["right"], dtype=np.int64),
            value=np.asarray(d["value"], dtype=float),
            roots=np.asarray(d["roots"], dtype=np.int64),
            base_margin=float(d["base_margin"]),
            n_inputs=int(d["n_inputs"]),
        )
        return cls(ens, degenerate=d.get("degenerate", False))


class ClusterBinnedRetention:
    """Empirical mean label per (cluster, rounded match count)."""

    variant = "cluster_binned"

    def __init__(self, centroids, table):
        self.centroids = np.atleast_2d(np.asarray(centroids, dtype=float))
        self.table = np.asarray(table, dtype=float)

    @property
    def max_count(self) -> int:
        return self.table.shape[1] - 1

    def predict(self, features, m):
        clusters = assign(np.atleast_2d(features), self.centroids)
        return self.table[clusters, match_bin(m, self.max_count)]

    def bind(self, features) -> ClusterTableBound:
        return ClusterTableBound(assign(np.atleast_2d(features), self.centroids), self.table)

    def to_dict(self):
        return {"centroids": self.centroids.tolist(), "table": self.table.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["centroids"], d["table"])


_VARIANTS = {c.variant: c for c in (OracleRetention, BoostedRetention, ClusterBinnedRetention)}


def model_to_json(model) -> str:
    return json.dumps(
        {"format": MODEL_FORMAT, "version": MODEL_VERSION, "variant": model.variant, "params": model.to_dict()}
    )


def model_from_json(text: str):
    doc = json.loads(text)
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"not a {MODEL_FORMAT} document")
    if doc.get("version") != MODEL_VERSION:
        raise ValueError(f"unsupported model version {doc.get('version')}")
    try:
        cls = _VARIANTS[doc["variant"]]
    except KeyError:
        raise ValueError(f"unknown model variant {doc.get('variant')!r}") from None
    return cls.from_dict(doc["params"])


def save_model(model, path) -> None:
    Path(path).write_text(model_to_json(model))


def load_model(path):
    return model_from_json(Path(path).read_text())


# ---------------------------------------------------------------------------
# training data and fitting


@dataclass
class RetentionTrainingSet:
    features: np.ndarray
    m: np.ndarray
    u: np.ndarray
    user_ids: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.m = np.asarray(self.m, dtype=float)
        self.u = np.asarray(self.u, dtype=np.int64)
        if self.m.shape[0] != self.features.shape[0] or self.u.shape[0] != self.features.shape[0]:
            raise ValueError("features, m and u must have the same number of rows")
        if np.any(self.m < 0):
            raise ValueError("match counts must be non-negative")
        if np.any((self.u != 0) & (self.u != 1)):
            raise ValueError("retention labels must be 0 or 1")

    @property
    def n(self) -> int:
        return int(self.m.shape[0])


def sample_training_set(
    world: World,
    n: int,
    seed=0,
    truth: BoundRetention | None = None,
    features: np.ndarray | None = None,
) -> RetentionTrainingSet:
    """Rows ``(features, m, u)`` with users drawn uniformly from the world and ``m ~ Exp(mean 2)``.

    ``truth`` defaults to the world's own curves; ``features`` overrides the
    per-user model inputs stored in the rows.
    """
    if n < 1:
        raise ConfigError(f"training set size must be >= 1, got {n}")
    truth = truth if truth is not None else CurveBound(world.a, world.b)
    feats = world.features if features is None else np.asarray(features, dtype=float)
    rng = np.random.default_rng(seed)
    users = rng.integers(0, world.n_total, n)
    m = rng.exponential(TRAIN_MATCH_MEAN, n)
    u = (rng.random(n) < truth(users, m)).astype(np.int64)
    return RetentionTrainingSet(feats[users], m, u, users)


def fit_boosted_model(
    data: RetentionTrainingSet, trees: int = 200, depth: int = 6, rate: float = 0.05
) -> BoostedRetention:
    y = data.u.astype(float)
    if data.n < 10 or y.min() == y.max():
        p = float(np.clip(y.mean(), 0.0, 1.0))
        warnings.warn(f"degenerate retention data (n={data.n}); using constant model p={p:.3f}", stacklevel=2)
        return BoostedRetention(None, constant=p, degenerate=True)
    X = np.column_stack([data.features, data.m])
    return BoostedRetention(fit_gbdt(X, y, n_trees=trees, max_depth=depth, learning_rate=rate))


def _fill_row(sums, counts, fallback):
    """Mean per bin; empty bins copy the nearest populated bin (lower bin on ties)."""
    row = np.full(sums.shape, np.nan)
    have = counts > 0
    if not have.any():
        return fallback.copy()
    row[have] = sums[have] / counts[have]
    filled = np.flatnonzero(have)
    for i in np.flatnonzero(~have):
        j = filled[np.argmin(np.abs(filled - i))]
        row[i] = row[j]
    return row


def cluster_table(labels, data: RetentionTrainingSet, k: int, max_count: int) -> np.ndarray:
    bins = match_bin(data.m, max_count)
    sums = np.zeros((k, max_count + 1))
    counts = np.zeros((k, max_count + 1))
    np.add.at(sums, (labels, bins), data.u)
    np.add.at(counts, (labels, bins), 1)
    global_curve = _fill_row(sums.sum(0), counts.sum(0), None)
    return np.vstack([_fill_row(sums[c], counts[c], global_curve) for c in range(k)])


def default_max_count(data: RetentionTrainingSet) -> int:
    return int(match_bin(data.m.max(), np.iinfo(np.int64).max))


def fit_cluster_binned(
    data: RetentionTrainingSet, k: int = 5, max_count: int | None = None, seed=0
) -> ClusterBinnedRetention:
    if data.n < k:
        raise ConfigError(f"need at least k={k} rows, got {data.n}")
    if max_count is None:
        max_count = default_max_count(data)
    km = kmeans(data.features, k=k, seed=seed)
    return ClusterBinnedRetention(km.centroids, cluster_table(km.labels, data, k, max_count))
