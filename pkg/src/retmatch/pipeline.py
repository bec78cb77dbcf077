"""Preprocessing for sparse, platform-style data: ALS imputation, clustering,
cluster-binned retention curves, and the end-to-end protocol on a synthetic
stand-in market.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import KMeansResult, kmeans
from .engine import Market, MetricsRecord, SimConfig, run_simulation
from .errors import ConfigError
from .rankers import FairCoPolicy, MaxMatchPolicy, MRetPolicy, UniformPolicy
from .retention import (
    MODEL_FORMAT,
    MODEL_VERSION,
    ClusterBinnedRetention,
    ClusterTableBound,
    CurveBound,
    OracleRetention,
    RetentionTrainingSet,
    cluster_table,
    default_max_count,
    fit_boosted_model,
    sample_training_set,
)
from .world import FixedMatchModel, World, WorldConfig, generate_world

__all__ = [
    "SparseMatchMatrix",
    "FactorModel",
    "als_impute",
    "kmeans",
    "KMeansResult",
    "build_cluster_retention",
    "RealWorldConfig",
    "run_realworld_protocol",
]


@dataclass
class SparseMatchMatrix:
    """Observed entries of an ``n_x x n_y`` match matrix; ``mask`` marks observed cells."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.values.shape != self.mask.shape:
            raise ValueError("values and mask must have the same shape")
        self.values = np.where(self.mask, self.values, 0.0)
        if np.any((self.values < 0) | (self.values > 1)):
            raise ValueError("observed entries must lie in [0, 1]")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def density(self) -> float:
        return float(self.mask.mean())

    @property
    def positives(self) -> np.ndarray:
        """Implicit preference: 1 where an observed entry is positive."""
        return (self.mask & (self.values > 0)).astype(float)

    def write(self, path) -> None:
        rows, cols = np.nonzero(self.mask)
        with open(path, "w") as fh:
            fh.write(f"{self.shape[0]} {self.shape[1]}\n")
            for i, j in zip(rows.tolist(), cols.tolist()):
                fh.write(f"{i} {j} {self.values[i, j]:.12g}\n")

    @classmethod
    def read(cls, path) -> SparseMatchMatrix:
        with open(path) as fh:
            header = fh.readline().split()
            if len(header) != 2:
                raise ValueError(f"{path}: header must be '<rows> <cols>'")
            n_rows, n_cols = int(header[0]), int(header[1])
            values = np.zeros((n_rows, n_cols))
            mask = np.zeros((n_rows, n_cols), dtype=bool)
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                parts = line.split()
                if len(parts) != 3:
                    raise ValueError(f"{path}:{lineno}: expected 'row col value'")
                i, j = int(parts[0]), int(parts[1])
                values[i, j] = float(parts[2])
                mask[i, j] = True
        return cls(values, mask)


@dataclass
class FactorModel:
    U: np.ndarray
    V: np.ndarray
    reg: float
    conf: float
    objective_history: list[float] = field(default_factory=list)
    degenerate: bool = False

    def predict(self, i, j):
        return np.clip(np.sum(self.U[i] * self.V[j], axis=-1), 0.0, 1.0)

    def matrix(self) -> np.ndarray:
        return np.clip(self.U @ self.V.T, 0.0, 1.0)

    def to_json(self) -> str:
        return json.dumps(
            {
                "format": MODEL_FORMAT,
                "version": MODEL_VERSION,
                "variant": "als_factors",
                "params": {"U": self.U.tolist(), "V": self.V.tolist(), "reg": self.reg, "conf": self.conf},
            }
        )

    @classmethod
    def from_json(cls, text: str) -> FactorModel:
        doc = json.loads(text)
        if doc.get("format") != MODEL_FORMAT or doc.get("variant") != "als_factors":
            raise ValueError("not an ALS factor-model document")
        p = doc["params"]
        return cls(np.asarray(p["U"], dtype=float), np.asarray(p["V"], dtype=float), p["reg"], p["conf"])

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> FactorModel:
        return cls.from_json(Path(path).read_text())


def als_objective(P, U, V, reg, conf) -> float:
    resid = P - U @ V.T
    C = 1.0 + conf * P
    return float((C * resid * resid).sum() + reg * ((U * U).sum() + (V * V).sum()))


def _half_sweep(P, fixed, reg, conf):
    """Exact ridge solve for every row of the free factor matrix."""
    d = fixed.shape[1]
    gram = fixed.T @ fixed
    outer = (fixed[:, :, None] * fixed[:, None, :]).reshape(fixed.shape[0], d * d)
    A = gram[None] + conf * (P @ outer).reshape(P.shape[0], d, d) + reg * np.eye(d)[None]
    b = (1.0 + conf) * (P @ fixed)
    return np.linalg.solve(A, b[:, :, None])[:, :, 0]


def als_impute(
    matrix: SparseMatchMatrix,
    d_f: int = 16,
    reg: float = 0.1,
    conf: float = 40.0,
    iters: int = 15,
    seed=0,
) -> FactorModel:
    """Implicit-feedback ALS: confidence ``1 + conf * p_ij`` over all cells."""
    if reg <= 0:
        raise ConfigError("reg must be positive")
    P = matrix.positives
    rng = np.random.default_rng(seed)
    n_x, n_y = P.shape
    U = 0.01 * rng.standard_normal((n_x, d_f))
    V = 0.01 * rng.standard_normal((n_y, d_f))
    degenerate = not P.any()
    if degenerate:
        warnings.warn("match matrix has no positive entries; factors will be near zero", stacklevel=2)
    history = [als_objective(P, U, V, reg, conf)]
    for _ in range(iters):
        U = _half_sweep(P, V, reg, conf)
        V = _half_sweep(P.T, U, reg, conf)
        history.append(als_objective(P, U, V, reg, conf))
    return FactorModel(U, V, reg, conf, history, degenerate)


def build_cluster_retention(
    assignments, training_set: RetentionTrainingSet, max_count: int | None = None, centroids=None
) -> ClusterBinnedRetention:
    """Cluster-binned curves from externally supplied per-row cluster labels."""
    labels = np.asarray(assignments, dtype=np.int64)
    if labels.shape[0] != training_set.n:
        raise ValueError("need one cluster label per training row")
    k = int(labels.max()) + 1
    if max_count is None:
        max_count = default_max_count(training_set)
    if centroids is None:
        centroids = np.vstack([training_set.features[labels == c].mean(0) for c in range(k)])
    return ClusterBinnedRetention(centroids, cluster_table(labels, training_set, k, max_count))


# ---------------------------------------------------------------------------
# stand-in protocol


@dataclass
class RealWorldConfig:
    n_x: int = 1000
    n_y: int = 1000
    d: int = 10
    kappa: float = 0.5
    density: float = 0.01
    plant: str = "lowrank"  # "lowrank" | "world"
    observe: str = "binary"  # "binary" | "probability"
    plant_rank: int = 4
    truth: str = "cluster"  # "cluster" | "curves"
    n_clusters: int = 5
    n_records: int = 60000
    n_train: int = 60000
    als_factors: int = 16
    als_reg: float = 0.1
    als_conf: float = 40.0
    als_iters: int = 15
    sim: SimConfig = field(default_factory=lambda: SimConfig(T=3000))
    policies: tuple[str, ...] = ("max_match", "uniform", "fairco", "mret", "mret_best")

    def validate(self) -> None:
        if not 0.0 <= self.density <= 1.0:
            raise ConfigError(f"density must lie in [0, 1], got {self.density}")
        if self.plant not in ("lowrank", "world"):
            raise ConfigError(f"plant must be 'lowrank' or 'world', got {self.plant!r}")
        if self.observe not in ("binary", "probability"):
            raise ConfigError(f"observe must be 'binary' or 'probability', got {self.observe!r}")
        if self.truth not in ("cluster", "curves"):
            raise ConfigError(f"truth must be 'cluster' or 'curves', got {self.truth!r}")
        self.sim.validate()


@dataclass
class RealWorldArtifacts:
    world: World
    market: Market
    observed: SparseMatchMatrix
    factors: FactorModel | None
    truth_model: object
    fitted_model: object
    fitted_bound: object
    run_seed: np.random.SeedSequence


def planted_matrix(world, cfg: RealWorldConfig, rng) -> np.ndarray:
    if cfg.plant == "world":
        return world.match_model.matrix(0, 1)
    lx = rng.uniform(0.0, 1.0, (cfg.n_x, cfg.plant_rank))
    ly = rng.uniform(0.0, 1.0, (cfg.n_y, cfg.plant_rank))
    return np.clip(lx @ ly.T / cfg.plant_rank, 0.0, 1.0)


def prepare_realworld_market(cfg: RealWorldConfig, seed) -> RealWorldArtifacts:
    cfg.validate()
    ss = np.random.SeedSequence(seed)
    s_world, s_plant, s_als, s_records, s_train, s_km, s_run = ss.spawn(7)
    world = generate_world(WorldConfig(n_x=cfg.n_x, n_y=cfg.n_y, d=cfg.d, kappa=cfg.kappa, seed=s_world))
    rng = np.random.default_rng(s_plant)
    truth_r = planted_matrix(world, cfg, rng)
    mask = rng.random(truth_r.shape) < cfg.density
    if cfg.observe == "binary":
        values = (rng.random(truth_r.shape) < truth_r).astype(float)
    else:
        values = truth_r
    observed = SparseMatchMatrix(values, mask)
    factors = None
    if observed.mask.all():
        r = observed.values
    else:
        factors = als_impute(observed, cfg.als_factors, cfg.als_reg, cfg.als_conf, cfg.als_iters, seed=s_als)
        r = np.where(observed.mask, observed.values, factors.matrix())
    match_model = FixedMatchModel(r)

    if cfg.truth == "curves":
        truth_bound = CurveBound(world.a, world.b)
        truth_model = OracleRetention.from_world(world)
        inputs = world.features
    else:
        records = sample_training_set(world, cfg.n_records, seed=s_records)
        km_seeds = s_km.spawn(2)
        side = (np.arange(world.n_total) >= world.n_x).astype(float)
        cluster_of = np.zeros(world.n_total, dtype=np.int64)
        tables = []
        offset = 0
        for s, ids in enumerate((world.x_ids, world.y_ids)):
            km = kmeans(world.features[ids], k=min(cfg.n_clusters, ids.size), seed=km_seeds[s])
            cluster_of[ids] = km.labels + offset
            in_side = np.isin(records.user_ids, ids)
            sub = RetentionTrainingSet(
                records.features[in_side], records.m[in_side], records.u[in_side], records.user_ids[in_side]
            )
            labels = cluster_of[sub.user_ids] - offset
            k = km.centroids.shape[0]
            model = ClusterBinnedRetention(km.centroids, cluster_table(labels, sub, k, default_max_count(records)))
            tables.append(model.table)
            offset += k
        truth_bound = ClusterTableBound(cluster_of, np.vstack(tables))
        truth_model = truth_bound
        inputs = np.column_stack([side, cluster_of])
    train = sample_training_set(world, cfg.n_train, seed=s_train, truth=truth_bound, features=inputs)
    fitted = fit_boosted_model(train)
    market = Market(cfg.n_x, cfg.n_y, match_model, truth_bound, world.b if cfg.truth == "curves" else None)
    return RealWorldArtifacts(world, market, observed, factors, truth_model, fitted, fitted.bind(inputs), s_run)


def realworld_policies(art: RealWorldArtifacts, names, lam: float = 100.0):
    out = []
    for name in names:
        if name == "max_match":
            out.append(MaxMatchPolicy())
        elif name == "uniform":
            out.append(UniformPolicy())
        elif name in ("fairco", "fairco_eq"):
            out.append(FairCoPolicy(lam, equal_exposure=name == "fairco_eq"))
        elif name == "mret":
            out.append(MRetPolicy(art.fitted_bound, "mret"))
        elif name == "mret_best":
            out.append(MRetPolicy(art.market.truth, "mret_best"))
        else:
            raise ConfigError(f"policy {name!r} is not available in the real-world protocol")
    return out


def run_realworld_protocol(cfg: RealWorldConfig, seed=0) -> list[MetricsRecord]:
    """Impute, build curves, then run every configured policy on the same market."""
    art = prepare_realworld_market(cfg, seed)
    records = []
    for policy in realworld_policies(art, cfg.policies, cfg.sim.fairco_lambda):
        res = run_simulation(art.market, policy, cfg.sim, seed=art.run_seed)
        records.extend(res.records)
    return records
