"""Seed x policy grids for the synthetic protocol, sweeps, and the small-scale Optimal comparison."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..engine import Market, MetricsRecord, SimResult, run_simulation
from ..errors import BudgetError, ConfigError, DegenerateInputError
from ..rankers import FairCoPolicy, MaxMatchPolicy, MRetPolicy, OptimalPolicy, UniformPolicy
from ..retention import fit_boosted_model, fit_cluster_binned, sample_training_set
from ..world import WorldConfig, generate_world
from .config import ExperimentConfig, config_hash, with_axis

log = logging.getLogger(__name__)

METRIC_FIELDS = ("matches_per_user", "retention_rate", "matches_x", "matches_y", "retention_x", "retention_y")


@dataclass
class FinalState:
    """End-of-run per-user arrays, kept for histograms."""

    cum_matches: np.ndarray
    retained: np.ndarray
    satisfactory: np.ndarray | None


@dataclass
class ResultTable:
    rows: list[dict] = field(default_factory=list)
    finals: dict = field(default_factory=dict)
    axis: str | None = None

    def __len__(self):
        return len(self.rows)

    def extend(self, other: ResultTable) -> None:
        self.rows.extend(other.rows)
        self.finals.update(other.finals)

    @property
    def policies(self) -> list[str]:
        return list(dict.fromkeys(r["policy"] for r in self.rows))

    def select(self, **match) -> list[dict]:
        return [r for r in self.rows if all(r.get(k) == v for k, v in match.items())]

    def final_rows(self) -> list[dict]:
        """The last recorded step of every (axis value, policy, seed) run."""
        last = {}
        for r in self.rows:
            key = (r.get("axis_value"), r["policy"], r["seed"])
            if key not in last or r["step"] >= last[key]["step"]:
                last[key] = r
        return list(last.values())

    def seed_mean(self, metric: str, policy: str, axis_value=None) -> float:
        vals = [r[metric] for r in self.final_rows() if r["policy"] == policy and r.get("axis_value") == axis_value]
        if not vals:
            raise KeyError(f"no rows for policy {policy!r}")
        return float(np.mean(vals))

    def seed_std(self, metric: str, policy: str, axis_value=None) -> float:
        vals = [r[metric] for r in self.final_rows() if r["policy"] == policy and r.get("axis_value") == axis_value]
        return float(np.std(vals))


@dataclass
class SeedSetup:
    market: Market
    policies: list
    run_seed: np.random.SeedSequence


def seed_streams(seed: int):
    """Independent world / training / simulation streams for one seed."""
    return tuple(np.random.SeedSequence([int(seed), i]) for i in range(3))


def world_config(cfg: ExperimentConfig, seed) -> WorldConfig:
    w = cfg.world
    return WorldConfig(
        n_x=w.n_x, n_y=w.n_y, d=w.d, kappa=w.kappa, noise_delta=w.noise_delta,
        drift=w.drift, drift_slope=w.drift_slope, seed=seed,
    )


def fitted_retention(cfg: ExperimentConfig, world, seed):
    train = sample_training_set(world, cfg.model.n_train, seed=seed)
    if cfg.model.retention_model == "cluster_binned":
        model = fit_cluster_binned(train, k=cfg.model.clusters, seed=seed)
    else:
        model = fit_boosted_model(train, cfg.model.trees, cfg.model.depth, cfg.model.rate)
    return model


def setup_seed(cfg: ExperimentConfig, seed: int) -> SeedSetup:
    s_world, s_train, s_run = seed_streams(seed)
    world = generate_world(world_config(cfg, s_world))
    market = Market.from_world(world)
    policies = []
    for name in cfg.policies:
        if name == "max_match":
            policies.append(MaxMatchPolicy())
        elif name == "uniform":
            policies.append(UniformPolicy())
        elif name in ("fairco", "fairco_eq"):
            policies.append(FairCoPolicy(cfg.protocol.fairco_lambda, equal_exposure=name == "fairco_eq"))
        elif name == "mret":
            model = fitted_retention(cfg, world, s_train)
            policies.append(MRetPolicy(model.bind(world.features), "mret"))
        elif name == "mret_best":
            policies.append(MRetPolicy(market.truth, "mret_best"))
        elif name == "optimal":
            policies.append(OptimalPolicy(market.truth, cfg.run.optimal_budget))
        else:
            raise ConfigError(f"unknown policy {name!r}")
    return SeedSetup(market, policies, s_run)


def records_to_rows(records: list[MetricsRecord], chash: str, seed: int) -> list[dict]:
    out = []
    for rec in records:
        row = {"config_hash": chash, "policy": rec.policy, "seed": int(seed), "step": rec.step}
        for f in METRIC_FIELDS:
            row[f] = getattr(rec, f)
        out.append(row)
    return out


def run_seed(cfg: ExperimentConfig, seed: int) -> ResultTable:
    """Every configured policy on one seed's world, sharing the simulation stream."""
    chash = config_hash(cfg)
    setup = setup_seed(cfg, seed)
    table = ResultTable()
    for policy in setup.policies:
        try:
            res: SimResult = run_simulation(setup.market, policy, cfg.protocol, seed=setup.run_seed)
        except Exception as exc:
            where = f"run failed for config={chash} seed={seed} policy={policy.name}: {exc}"
            if isinstance(exc, (BudgetError, ConfigError, DegenerateInputError)):
                raise type(exc)(where) from exc
            raise RuntimeError(where) from exc
        rows = records_to_rows(res.records, chash, seed)
        table.rows.extend(rows)
        table.finals[(None, policy.name, int(seed))] = FinalState(
            res.state.cum_matches.copy(), res.state.retained.copy(), setup.market.satisfactory
        )
    return table


def _job(args):
    cfg, seed = args
    return run_seed(cfg, seed)


def _sort_key(row, order):
    return (order[row["policy"]], row["seed"], row["step"])


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ResultTable:
    """Full seed x policy grid; rows come back in (policy, seed, step) order regardless of ``workers``."""
    cfg.validate()
    workers = cfg.run.workers if workers is None else workers
    seeds = [int(s) for s in cfg.run.seeds]
    jobs = [(cfg, s) for s in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            parts = list(pool.map(_job, jobs))
    else:
        parts = []
        for job in jobs:
            log.info("seed %d", job[1])
            parts.append(_job(job))
    table = ResultTable()
    for part in parts:
        table.extend(part)
    order = {p: i for i, p in enumerate(cfg.policies)}
    table.rows.sort(key=lambda r: _sort_key(r, order))
    return table


def run_sweep(cfg: ExperimentConfig, axis: str, values, workers: int | None = None) -> ResultTable:
    table = ResultTable(axis=axis)
    for value in values:
        sub = run_experiment(with_axis(cfg, axis, value), workers)
        for row in sub.rows:
            row["axis"] = axis
            row["axis_value"] = value
        table.rows.extend(sub.rows)
        for (_, pol, seed), fin in sub.finals.items():
            table.finals[(value, pol, seed)] = fin
    return table


@dataclass
class OptimalReport:
    seeds: list[int]
    retention: dict
    matches: dict
    delta_retention: float
    rel_delta_matches: float
    delta_matches: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def small_scale_config(base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = (base or ExperimentConfig()).copy()
    cfg.world.n_x = cfg.world.n_y = 20
    cfg.protocol.K = 3
    cfg.protocol.T = 50
    cfg.protocol.record_interval = 50
    cfg.policies = ["mret_best", "optimal"]
    return cfg


def optimal_compare(cfg: ExperimentConfig | None = None) -> OptimalReport:
    """MRet with the true curves against exhaustive search on identical worlds and streams."""
    cfg = small_scale_config() if cfg is None else cfg.copy()
    for name in ("mret_best", "optimal"):
        if name not in cfg.policies:
            cfg.policies = cfg.policies + [name]
    table = run_experiment(cfg)
    ret = {p: table.seed_mean("retention_rate", p) for p in ("mret_best", "optimal")}
    mat = {p: table.seed_mean("matches_per_user", p) for p in ("mret_best", "optimal")}
    dm = abs(mat["mret_best"] - mat["optimal"])
    rel = dm / mat["optimal"] if mat["optimal"] > 0 else (0.0 if dm == 0 else float("inf"))
    return OptimalReport(
        [int(s) for s in cfg.run.seeds], ret, mat, abs(ret["mret_best"] - ret["optimal"]), rel, dm
    )
