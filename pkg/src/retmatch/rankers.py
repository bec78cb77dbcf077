"""Ranking policies for one arriving receiver.

Low-level functions take the candidate pool as an array of global ids sorted
ascending together with the aligned vector ``r`` of match probabilities
between the receiver and each candidate. Ties are always broken by ascending
candidate id.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import BudgetError, ConfigError, ConsistencyError

WEIGHT_FAMILIES = ("inv", "exp", "log", "uniform")
MERIT_FLOOR = 1e-6
DEFAULT_BUDGET = 1_000_000


def exposure_weights(family: str, k: int) -> np.ndarray:
    """Position weights ``alpha_1..alpha_k`` for an examination family."""
    pos = np.arange(1, k + 1, dtype=float)
    if family == "inv":
        return 1.0 / pos
    if family == "exp":
        return np.exp(-pos)
    if family == "log":
        return 1.0 / np.log2(2.0 + pos)
    if family == "uniform":
        return np.ones(k)
    raise ConfigError(f"unknown exposure-weight family {family!r}; expected one of {WEIGHT_FAMILIES}")


@dataclass(frozen=True)
class Ranking:
    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.int64)
        w = np.asarray(self.weights, dtype=float)[: pos.size]
        if np.unique(pos).size != pos.size:
            raise ValueError("ranking contains duplicate candidates")
        if np.any(np.diff(w) > 0) or np.any(w < 0):
            raise ValueError("position weights must be non-negative and non-increasing")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return int(self.positions.size)

    @property
    def A(self) -> float:
        return float(self.weights.sum())

    @property
    def alpha_max(self) -> float:
        return float(self.weights[0]) if self.weights.size else 0.0

    def ids(self) -> list[int]:
        return self.positions.tolist()


def top_k(scores, candidates, k: int) -> np.ndarray:
    """Candidates of the ``k`` largest scores, descending; ties by ascending id."""
    scores = np.asarray(scores, dtype=float)
    candidates = np.asarray(candidates, dtype=np.int64)
    order = np.lexsort((candidates, -scores))
    return candidates[order[:k]]


def expected_matches(ranking: Ranking, r_ranked) -> float:
    """Expected matches for the receiver: ``sum_k alpha_k r(x, sigma_k)``."""
    return float(np.dot(ranking.weights, np.asarray(r_ranked, dtype=float)[: len(ranking)]))


def rank_max_match(r, candidates, weights) -> Ranking:
    weights = np.asarray(weights, dtype=float)
    return Ranking(top_k(r, candidates, weights.size), weights)


def rank_uniform(candidates, weights, rng: np.random.Generator) -> Ranking:
    candidates = np.asarray(candidates, dtype=np.int64)
    weights = np.asarray(weights, dtype=float)
    k = min(weights.size, candidates.size)
    return Ranking(candidates[rng.choice(candidates.size, size=k, replace=False)], weights)


# ---------------------------------------------------------------------------
# FairCo


@dataclass
class ExposureLedger:
    """Exposure state of one candidate side.

    ``offset`` maps global id ``g`` to slot ``g - offset``; ``event_count``
    is the number of rankings already served from this side.
    """

    merit: np.ndarray
    offset: int = 0
    lam: float = 100.0
    cumulative_exposure: np.ndarray = field(default=None)
    event_count: int = 0

    def __post_init__(self):
        self.merit = np.maximum(np.asarray(self.merit, dtype=float), MERIT_FLOOR)
        if self.cumulative_exposure is None:
            self.cumulative_exposure = np.zeros_like(self.merit)
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")

    @classmethod
    def from_matrix(cls, r_matrix, side: str, offset: int, lam: float) -> ExposureLedger:
        """Merits ``E_p(x)[r(x, y)]`` as population means of an ``n_x x n_y`` matrix."""
        r_matrix = np.asarray(r_matrix, dtype=float)
        merit = r_matrix.mean(axis=0) if side == "Y" else r_matrix.mean(axis=1)
        return cls(merit=merit, offset=offset, lam=lam)

    def slots(self, ids) -> np.ndarray:
        sl = np.asarray(ids, dtype=np.int64) - self.offset
        if sl.size and (sl.min() < 0 or sl.max() >= self.merit.size):
            raise ConsistencyError(f"ids outside ledger range [{self.offset}, {self.offset + self.merit.size})")
        return sl

    def ratios(self, ids, equal_exposure: bool = False) -> np.ndarray:
        """Amortized exposure (over merit unless ``equal_exposure``)."""
        sl = self.slots(ids)
        if self.event_count == 0:
            return np.zeros(sl.size)
        amortized = self.cumulative_exposure[sl] / self.event_count
        return amortized if equal_exposure else amortized / self.merit[sl]


def fairco_errors(ledger: ExposureLedger, candidates, equal_exposure: bool = False) -> np.ndarray:
    """``err(y) = (tau-1) max_{y'} D_{tau-1}(y', y)`` over the candidate pool.

    The pool maximum is shared by every candidate, so restricting it to the
    current pool never changes a ranking.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    if ledger.event_count == 0 or candidates.size == 0:
        return np.zeros(candidates.size)
    ratio = ledger.ratios(candidates, equal_exposure)
    return ledger.event_count * (ratio.max() - ratio)


def fairco_error(ledger: ExposureLedger, y: int, pool=None, equal_exposure: bool = False) -> float:
    pool = np.arange(ledger.offset, ledger.offset + ledger.merit.size) if pool is None else np.asarray(pool)
    err = fairco_errors(ledger, pool, equal_exposure)
    return float(err[np.flatnonzero(pool == y)[0]])


def rank_fairco(
    r, candidates, ledger: ExposureLedger, weights, equal_exposure: bool = False, lam: float | None = None
) -> Ranking:
    """Top-k by ``r + lam * err``; ``lam`` defaults to the ledger's own."""
    lam = ledger.lam if lam is None else lam
    err = fairco_errors(ledger, candidates, equal_exposure)
    weights = np.asarray(weights, dtype=float)
    return Ranking(top_k(np.asarray(r) + lam * err, candidates, weights.size), weights)


def update_ledger(ledger: ExposureLedger, ranking: Ranking) -> ExposureLedger:
    sl = ledger.slots(ranking.positions)
    np.add.at(ledger.cumulative_exposure, sl, ranking.weights)
    ledger.event_count += 1
    return ledger


# ---------------------------------------------------------------------------
# MRet


def mret_score(f_receiver, f_candidate, r: float, m_receiver: float, m_candidate: float, A: float, alpha_max: float):
    """Per-candidate score for callables ``f_*(m) -> retention probability``."""
    if A <= 0 or alpha_max <= 0:
        raise ConfigError("A and alpha_max must be positive")
    receiver_term = f_receiver(m_receiver + A * r) / A
    candidate_term = (f_candidate(m_candidate + alpha_max * r) - f_candidate(m_candidate)) / alpha_max
    return receiver_term + candidate_term


def mret_scores(receiver: int, candidates, r, m, retention, weights) -> np.ndarray:
    """Vectorized scores for a bound retention model; ``m`` is indexed by global id."""
    candidates = np.asarray(candidates, dtype=np.int64)
    r = np.asarray(r, dtype=float)
    w = np.asarray(weights, dtype=float)[: max(1, min(len(weights), candidates.size))]
    A, amax = float(w.sum()), float(w.max())
    if A <= 0 or amax <= 0:
        raise ConfigError("A and alpha_max must be positive")
    m_c = m[candidates]
    receiver_ids = np.full(candidates.size, receiver, dtype=np.int64)
    receiver_term = retention(receiver_ids, m[receiver] + A * r) / A
    candidate_term = (retention(candidates, m_c + amax * r) - retention(candidates, m_c)) / amax
    return receiver_term + candidate_term


def rank_mret(receiver: int, candidates, r, m, retention, weights) -> Ranking:
    weights = np.asarray(weights, dtype=float)
    if len(candidates) == 0:
        return Ranking(np.zeros(0, dtype=np.int64), weights)
    scores = mret_scores(receiver, candidates, r, m, retention, weights)
    return Ranking(top_k(scores, candidates, weights.size), weights)


@dataclass
class GainReport:
    receiver_gain: float
    candidate_gains: list[float]

    @property
    def total(self) -> float:
        return self.receiver_gain + float(sum(self.candidate_gains))


def true_gain(receiver: int, ranking: Ranking, r_ranked, m, retention) -> GainReport:
    """Retention gain of the receiver plus each ranked candidate.

    ``r_ranked[k]`` is the match probability of the receiver with the
    candidate at position k; ``r`` is symmetric so it serves both directions.
    """
    if len(ranking) == 0:
        return GainReport(0.0, [])
    r_ranked = np.asarray(r_ranked, dtype=float)[: len(ranking)]
    w = ranking.weights
    rid = np.array([receiver])
    m_x = m[receiver]
    recv = float(retention(rid, m_x + np.dot(w, r_ranked))[0] - retention(rid, m_x)[0])
    pos = ranking.positions
    cand = retention(pos, m[pos] + w * r_ranked) - retention(pos, m[pos])
    return GainReport(recv, cand.tolist())


@lru_cache(maxsize=32)
def _arrangements(n: int, k: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n), k)), dtype=np.int64).reshape(-1, k)


def n_arrangements(n: int, k: int) -> int:
    return int(np.prod(np.arange(n - k + 1, n + 1, dtype=object))) if k > 0 else 1


def rank_optimal(receiver: int, candidates, r, m, retention, weights, budget: int = DEFAULT_BUDGET) -> Ranking:
    """Exhaustive maximizer of the total retention gain over ordered arrangements."""
    candidates = np.asarray(candidates, dtype=np.int64)
    r = np.asarray(r, dtype=float)
    order = np.argsort(candidates, kind="stable")
    candidates, r = candidates[order], r[order]
    weights = np.asarray(weights, dtype=float)
    k = min(weights.size, candidates.size)
    count = n_arrangements(candidates.size, k)
    if count > budget:
        raise BudgetError(f"{count} arrangements of {candidates.size} candidates into {k} slots exceed budget {budget}")
    if k == 0:
        return Ranking(np.zeros(0, dtype=np.int64), weights)
    w = weights[:k]
    perms = _arrangements(candidates.size, k)
    m_c = m[candidates]
    base_c = retention(candidates, m_c)
    # cand_gain[j, p]: gain of candidate j when placed at position p
    cand_gain = np.stack([retention(candidates, m_c + w[p] * r) - base_c for p in range(k)], axis=1)
    m_x = m[receiver]
    rid = np.full(perms.shape[0], receiver, dtype=np.int64)
    recv = retention(rid, m_x + (r[perms] * w).sum(axis=1)) - retention(rid[:1], np.array([m_x]))[0]
    total = recv + cand_gain[perms, np.arange(k)].sum(axis=1)
    return Ranking(candidates[perms[int(np.argmax(total))]], weights)


# ---------------------------------------------------------------------------
# policy objects used by the simulation engine

POLICY_NAMES = ("max_match", "uniform", "fairco", "fairco_eq", "mret", "mret_best", "optimal")


@dataclass
class RankContext:
    receiver: int
    candidates: np.ndarray
    r: np.ndarray
    m: np.ndarray
    weights: np.ndarray
    rng: np.random.Generator
    ledger: ExposureLedger | None = None


class Policy:
    name = "policy"
    uses_ledger = False

    def rank(self, ctx: RankContext) -> Ranking:
        raise NotImplementedError


class MaxMatchPolicy(Policy):
    name = "max_match"

    def rank(self, ctx):
        return rank_max_match(ctx.r, ctx.candidates, ctx.weights)


class UniformPolicy(Policy):
    name = "uniform"

    def rank(self, ctx):
        return rank_uniform(ctx.candidates, ctx.weights, ctx.rng)


class FairCoPolicy(Policy):
    uses_ledger = True

    def __init__(self, lam: float = 100.0, equal_exposure: bool = False):
        self.lam = lam
        self.equal_exposure = equal_exposure
        self.name = "fairco_eq" if equal_exposure else "fairco"

    def rank(self, ctx):
        return rank_fairco(ctx.r, ctx.candidates, ctx.ledger, ctx.weights, self.equal_exposure, self.lam)


class MRetPolicy(Policy):
    def __init__(self, retention, name: str = "mret"):
        self.retention = retention
        self.name = name

    def rank(self, ctx):
        return rank_mret(ctx.receiver, ctx.candidates, ctx.r, ctx.m, self.retention, ctx.weights)


class OptimalPolicy(Policy):
    name = "optimal"

    def __init__(self, retention, budget: int = DEFAULT_BUDGET):
        self.retention = retention
        self.budget = budget

    def rank(self, ctx):
        return rank_optimal(ctx.receiver, ctx.candidates, ctx.r, ctx.m, self.retention, ctx.weights, self.budget)
