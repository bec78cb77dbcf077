import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from retmatch.errors import BudgetError, ConfigError, ConsistencyError
from retmatch.rankers import (
    ExposureLedger,
    FairCoPolicy,
    MaxMatchPolicy,
    MRetPolicy,
    OptimalPolicy,
    RankContext,
    Ranking,
    UniformPolicy,
    expected_matches,
    exposure_weights,
    fairco_error,
    fairco_errors,
    mret_score,
    mret_scores,
    n_arrangements,
    rank_fairco,
    rank_max_match,
    rank_mret,
    rank_optimal,
    rank_uniform,
    top_k,
    true_gain,
    update_ledger,
)
from retmatch.retention import BoundRetention, CurveBound


class PiecewiseBound(BoundRetention):
    """Per-user piecewise-linear curves through given knots."""

    def __init__(self, knots):
        self.knots = knots

    def __call__(self, ids, m):
        ids, m = np.broadcast_arrays(np.asarray(ids), np.asarray(m, dtype=float))
        out = np.empty(ids.shape)
        for idx in np.ndindex(ids.shape):
            xs, ys = self.knots[int(ids[idx])]
            out[idx] = np.interp(m[idx], xs, ys)
        return out


class CountingBound(BoundRetention):
    def __init__(self, inner):
        self.inner = inner
        self.calls = 0
        self.evaluations = 0

    def __call__(self, ids, m):
        self.calls += 1
        self.evaluations += int(np.size(np.broadcast_to(ids, np.shape(m)) if np.ndim(m) else ids))
        return self.inner(ids, m)


def test_weight_families():
    np.testing.assert_allclose(exposure_weights("inv", 3), [1, 1 / 2, 1 / 3])
    np.testing.assert_allclose(exposure_weights("exp", 2), [math.exp(-1), math.exp(-2)])
    np.testing.assert_allclose(exposure_weights("log", 2), [1 / math.log2(3), 1 / math.log2(4)])
    np.testing.assert_array_equal(exposure_weights("uniform", 4), np.ones(4))
    with pytest.raises(ConfigError):
        exposure_weights("zipf", 3)


def test_ranking_validation():
    r = Ranking(np.array([5, 3]), np.array([1.0, 0.5, 0.2]))
    assert r.A == 1.5 and r.alpha_max == 1.0 and len(r) == 2
    with pytest.raises(ValueError):
        Ranking(np.array([1, 1]), np.array([1.0, 0.5]))
    with pytest.raises(ValueError):
        Ranking(np.array([1, 2]), np.array([0.5, 1.0]))


def test_top_k_ties_by_id():
    assert top_k([0.5, 0.9, 0.5, 0.9], [40, 30, 10, 20], 3).tolist() == [20, 30, 10]


def test_max_match_and_expected_matches():
    ranking = rank_max_match(np.array([0.1, 0.7, 0.4]), np.array([10, 11, 12]), exposure_weights("inv", 2))
    assert ranking.ids() == [11, 12]
    assert expected_matches(ranking, [0.7, 0.4]) == pytest.approx(0.7 + 0.2)


def test_short_pool_truncates_weights():
    ranking = rank_max_match(np.array([0.3]), np.array([7]), exposure_weights("inv", 5))
    assert ranking.ids() == [7] and ranking.weights.tolist() == [1.0]


def test_uniform_is_seeded_and_distinct():
    cands = np.arange(100, 120)
    a = rank_uniform(cands, exposure_weights("inv", 5), np.random.default_rng(1))
    b = rank_uniform(cands, exposure_weights("inv", 5), np.random.default_rng(1))
    assert a.ids() == b.ids() and len(set(a.ids())) == 5
    first = [rank_uniform(cands, [1.0], np.random.default_rng(s)).ids()[0] for s in range(2000)]
    counts = np.bincount(np.asarray(first) - 100, minlength=20)
    assert counts.min() > 50


# --- FairCo


def test_fairco_golden_errors():
    ledger = ExposureLedger(merit=np.array([1.0, 1.0]), offset=10, cumulative_exposure=np.array([2.0, 0.0]), event_count=2)
    np.testing.assert_array_equal(fairco_errors(ledger, np.array([10, 11])), [0.0, 2.0])
    assert fairco_error(ledger, 11) == 2.0


def test_fairco_zero_errors_before_any_exposure():
    ledger = ExposureLedger(merit=np.array([0.2, 0.9, 0.5]))
    assert np.all(fairco_errors(ledger, np.arange(3)) == 0.0)


def test_fairco_lambda_zero_is_max_match(rng):
    r = rng.random(50)
    cands = np.arange(50)
    ledger = ExposureLedger(merit=rng.random(50), lam=0.0, cumulative_exposure=rng.random(50) * 5, event_count=7)
    w = exposure_weights("inv", 5)
    assert rank_fairco(r, cands, ledger, w).ids() == rank_max_match(r, cands, w).ids()


def test_policy_lambda_overrides_ledger(rng):
    ledger = ExposureLedger(merit=rng.random(30), lam=100.0, cumulative_exposure=rng.random(30), event_count=4)
    ctx = RankContext(0, np.arange(30), rng.random(30), np.zeros(30), exposure_weights("inv", 5), rng, ledger)
    assert FairCoPolicy(0.0).rank(ctx).ids() == MaxMatchPolicy().rank(ctx).ids()
    assert FairCoPolicy(100.0).rank(ctx).ids() == rank_fairco(ctx.r, ctx.candidates, ledger, ctx.weights).ids()


def test_fairco_promotes_underexposed():
    ledger = ExposureLedger(merit=np.ones(3), lam=100.0)
    w = np.array([1.0])
    r = np.array([0.9, 0.5, 0.1])
    seen = []
    for _ in range(3):
        ranking = rank_fairco(r, np.arange(3), ledger, w)
        seen.append(ranking.ids()[0])
        update_ledger(ledger, ranking)
    assert sorted(seen) == [0, 1, 2]


def test_fairco_equal_exposure_ignores_merit():
    ledger = ExposureLedger(merit=np.array([1.0, 0.01]), cumulative_exposure=np.array([1.0, 1.0]), event_count=1)
    assert fairco_errors(ledger, np.arange(2), equal_exposure=True).tolist() == [0.0, 0.0]
    assert fairco_errors(ledger, np.arange(2))[0] > 0


def test_merit_floor_and_ledger_ids():
    ledger = ExposureLedger.from_matrix(np.zeros((3, 2)), "Y", offset=3, lam=1.0)
    assert np.all(ledger.merit == 1e-6)
    with pytest.raises(ConsistencyError):
        ledger.slots([0])
    with pytest.raises(ConfigError):
        ExposureLedger(merit=np.ones(2), lam=-1)


def test_update_ledger_accumulates():
    ledger = ExposureLedger(merit=np.ones(4), offset=100)
    update_ledger(ledger, Ranking(np.array([102, 100]), np.array([1.0, 0.5])))
    assert ledger.cumulative_exposure.tolist() == [0.5, 0.0, 1.0, 0.0]
    assert ledger.event_count == 1


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 30), st.integers(1, 20))
def test_fairco_errors_non_negative(seed, n, steps):
    rng = np.random.default_rng(seed)
    ledger = ExposureLedger(merit=rng.random(n), lam=10.0)
    w = exposure_weights("inv", 3)
    for _ in range(steps):
        pool = np.flatnonzero(rng.random(n) < 0.7)
        if pool.size == 0:
            continue
        assert np.all(fairco_errors(ledger, pool) >= 0)
        update_ledger(ledger, rank_fairco(rng.random(pool.size), pool, ledger, w))


# --- MRet and Optimal


def _toy():
    # receiver 0 and candidates 1 (A), 2 (B), 3 (C) reached with r = 0.1, 0.9, 0.5
    knots = {
        0: ([0.0, 0.1, 0.5, 0.9], [0.1, 0.1, 0.4, 0.6]),
        1: ([0.0, 0.1], [0.2, 0.7]),
        2: ([0.0, 0.9], [0.3, 0.3]),
        3: ([0.0, 0.5], [0.1, 0.4]),
    }
    return PiecewiseBound(knots), np.array([1, 2, 3]), np.array([0.1, 0.9, 0.5]), np.zeros(4)


def test_toy_three_candidates():
    retention, cands, r, m = _toy()
    w = np.array([1.0])
    gains = {}
    for c, rc in zip(cands, r):
        g = true_gain(0, Ranking(np.array([c]), w), [rc], m, retention)
        gains[int(c)] = (round(g.receiver_gain, 12), round(g.candidate_gains[0], 12))
    assert gains == {1: (0.0, 0.5), 2: (0.5, 0.0), 3: (0.3, 0.3)}
    assert rank_optimal(0, cands, r, m, retention, w).ids() == [3]
    assert rank_mret(0, cands, r, m, retention, w).ids() == [3]
    assert rank_max_match(r, cands, w).ids() == [2]


def test_scalar_score_matches_vector(small_world, rng):
    truth = CurveBound(small_world.a, small_world.b)
    m = rng.integers(0, 6, small_world.n_total).astype(float)
    cands = np.arange(30, 70)
    r = small_world.match_model.row(5, cands)
    w = exposure_weights("inv", 4)
    vec = mret_scores(5, cands, r, m, truth, w)
    for j in (0, 7, 39):
        c = int(cands[j])
        s = mret_score(
            lambda x: truth(np.array([5]), np.array([x]))[0],
            lambda x, c=c: truth(np.array([c]), np.array([x]))[0],
            r[j], m[5], m[c], w.sum(), w.max(),
        )
        assert s == pytest.approx(vec[j], abs=1e-15)
    with pytest.raises(ConfigError):
        mret_score(lambda x: x, lambda x: x, 0.5, 0, 0, 0.0, 1.0)


def test_mret_scoring_is_linear_in_pool(small_world):
    truth = CountingBound(CurveBound(small_world.a, small_world.b))
    m = np.zeros(small_world.n_total)
    cands = np.arange(30, 70)
    rank_mret(0, cands, small_world.match_model.row(0, cands), m, truth, exposure_weights("inv", 5))
    assert truth.calls == 3
    assert truth.evaluations == 3 * cands.size


def test_optimal_dominates_mret_on_true_gain(small_world, rng):
    truth = CurveBound(small_world.a, small_world.b)
    w = exposure_weights("inv", 3)
    for _ in range(20):
        m = rng.integers(0, 8, small_world.n_total).astype(float)
        x = int(rng.integers(0, 30))
        cands = np.sort(rng.choice(np.arange(30, 70), 8, replace=False))
        r = small_world.match_model.row(x, cands)
        by_id = dict(zip(cands.tolist(), r))
        gains = []
        for ranking in (rank_optimal(x, cands, r, m, truth, w), rank_mret(x, cands, r, m, truth, w)):
            gains.append(true_gain(x, ranking, [by_id[c] for c in ranking.ids()], m, truth).total)
        assert gains[0] >= gains[1] - 1e-12


def test_optimal_budget():
    assert n_arrangements(10, 3) == 720
    assert n_arrangements(4, 0) == 1
    retention, cands, r, m = _toy()
    with pytest.raises(BudgetError):
        rank_optimal(0, cands, r, m, retention, np.array([1.0, 0.5]), budget=5)


def test_optimal_tie_breaks_to_smallest_ids():
    flat = CurveBound(np.zeros(6) - 1e-9, np.ones(6))
    m = np.full(6, 50.0)  # every curve saturated: all arrangements tie
    ranking = rank_optimal(0, np.array([5, 3, 4]), np.array([0.2, 0.2, 0.2]), m, flat, np.array([1.0, 0.5]))
    assert ranking.ids() == [3, 4]


def test_policies_through_context(small_world, rng):
    truth = CurveBound(small_world.a, small_world.b)
    cands = np.arange(30, 40)
    r = small_world.match_model.row(2, cands)
    m = np.zeros(small_world.n_total)
    ledger = ExposureLedger.from_matrix(small_world.match_model.matrix(), "Y", 30, 0.0)
    ctx = RankContext(2, cands, r, m, exposure_weights("inv", 3), rng, ledger)
    mm = MaxMatchPolicy().rank(ctx).ids()
    assert FairCoPolicy(0.0).rank(ctx).ids() == mm
    assert FairCoPolicy(1.0, equal_exposure=True).name == "fairco_eq"
    assert MRetPolicy(truth).rank(ctx).ids() == rank_mret(2, cands, r, m, truth, ctx.weights).ids()
    assert OptimalPolicy(truth).rank(ctx).ids() == rank_optimal(2, cands, r, m, truth, ctx.weights).ids()
    assert len(UniformPolicy().rank(ctx)) == 3
    assert FairCoPolicy().uses_ledger and not MaxMatchPolicy().uses_ledger


def test_empty_pool():
    w = exposure_weights("inv", 3)
    empty = np.zeros(0, dtype=np.int64)
    assert len(rank_mret(0, empty, np.zeros(0), np.zeros(1), None, w)) == 0
    assert len(rank_optimal(0, empty, np.zeros(0), np.zeros(1), None, w)) == 0
