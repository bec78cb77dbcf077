import numpy as np
import pytest

from retmatch.engine import (
    Ledgers,
    Market,
    SimConfig,
    SimState,
    churn_phase,
    compute_metrics,
    deviation_shortfall_share,
    new_state,
    record_steps,
    run_simulation,
    satisfaction_deviation_histogram,
    simulate_step,
)
from retmatch.errors import ConfigError
from retmatch.rankers import FairCoPolicy, MaxMatchPolicy, MRetPolicy, UniformPolicy, fairco_errors
from retmatch.retention import ConstantBound, CurveBound
from retmatch.world import FixedMatchModel


@pytest.fixture(scope="module")
def market(small_world):
    return Market.from_world(small_world)


def test_record_steps():
    assert record_steps(10, 100) == [0, 10]
    assert record_steps(250, 100) == [0, 100, 200, 250]
    assert record_steps(0, 5) == [0]


def test_records_and_row_counts(market):
    cfg = SimConfig(T=250, record_interval=100)
    res = run_simulation(market, MaxMatchPolicy(), cfg, seed=1)
    assert [r.step for r in res.records] == [0, 100, 200, 250]
    assert res.records[0].matches_per_user == 0.0 and res.records[0].retention_rate == 1.0


def test_same_seed_same_run(market):
    cfg = SimConfig(T=300, probe_prob=0.05)
    a = run_simulation(market, UniformPolicy(), cfg, seed=4)
    b = run_simulation(market, UniformPolicy(), cfg, seed=4)
    assert a.records == b.records
    np.testing.assert_array_equal(a.state.cum_matches, b.state.cum_matches)


def test_invariants_over_run(market):
    cfg = SimConfig(T=400, probe_prob=0.02)
    retained_seen, matches_seen = [], []

    def watch(state, event, ledgers):
        retained_seen.append((state.retained_x.size, state.retained_y.size))
        matches_seen.append(state.cum_matches.copy())

    res = run_simulation(market, MaxMatchPolicy(), cfg, seed=3, on_step=watch)
    rx, ry = np.array(retained_seen).T
    assert np.all(np.diff(rx) <= 0) and np.all(np.diff(ry) <= 0)
    M = np.array(matches_seen)
    assert np.all(np.diff(M, axis=0) >= 0)
    assert np.all(M == np.round(M))
    for rec in res.records:
        assert rec.retained == round(rec.retention_rate * market.n_total)
        assert rec.retained == round(rec.retention_x * market.n_x) + round(rec.retention_y * market.n_y)


def test_mutual_accrual(market):
    state = new_state(market, 0, "expected")
    ev = simulate_step(state, market, MaxMatchPolicy(), None, SimConfig(match_mode="expected"))
    assert state.cum_matches[ev.receiver] == pytest.approx(ev.increments.sum())
    np.testing.assert_allclose(state.cum_matches[ev.ranking.positions], ev.increments)
    # both sides gain the same total
    nx = market.n_x
    assert state.cum_matches[:nx].sum() == pytest.approx(state.cum_matches[nx:].sum())


def test_expected_mode_runs_are_real_valued(market):
    res = run_simulation(market, MaxMatchPolicy(), SimConfig(T=50, match_mode="expected", probe_prob=0), seed=0)
    m = res.state.cum_matches
    assert np.any(m != np.round(m))
    assert res.state.retained.all()


def test_rho_extremes(market):
    for rho, side_x in ((1.0, True), (0.0, False)):
        state = new_state(market, 0)
        for _ in range(20):
            ev = simulate_step(state, market, MaxMatchPolicy(), None, SimConfig(rho=rho))
            assert (ev.receiver < market.n_x) == side_x


def test_empty_side_skips_step(market):
    state = new_state(market, 0)
    state.retained[market.n_x :] = False
    ev = simulate_step(state, market, MaxMatchPolicy(), None, SimConfig())
    assert ev.receiver is None and state.step == 1


def test_churn_probability_one_and_zero(small_world):
    keep = Market(small_world.n_x, small_world.n_y, small_world.match_model, ConstantBound(1.0))
    drop = Market(small_world.n_x, small_world.n_y, small_world.match_model, ConstantBound(0.0))
    s = new_state(keep, 0)
    assert churn_phase(s, keep, 1.0).size == 0 and s.retained.all()
    s = new_state(drop, 0)
    gone = churn_phase(s, drop, 1.0)
    assert gone.size == drop.n_total and not s.retained.any()
    assert churn_phase(new_state(drop, 0), drop, 0.0).size == 0


def test_churned_users_leave_pools(small_world):
    mm = FixedMatchModel(np.ones((3, 3)))
    market = Market(3, 3, mm, ConstantBound(1.0))
    state = new_state(market, 0)
    state.retained[[3, 4]] = False
    for _ in range(30):
        ev = simulate_step(state, market, MaxMatchPolicy(), None, SimConfig(K=3, rho=1.0))
        assert ev.ranking.ids() == [5]


def test_fairco_errors_non_negative_and_lambda_zero(market):
    cfg = SimConfig(T=200, fairco_lambda=0.0)
    a = run_simulation(market, FairCoPolicy(0.0), cfg, seed=2, trace=True)
    b = run_simulation(market, MaxMatchPolicy(), cfg, seed=2, trace=True)
    assert [e.ranking.ids() for e in a.events] == [e.ranking.ids() for e in b.events]

    def check(state, event, ledgers):
        for led, ids in ((ledgers.x, state.retained_x), (ledgers.y, state.retained_y)):
            assert np.all(fairco_errors(led, ids) >= 0)

    run_simulation(market, FairCoPolicy(100.0), SimConfig(T=150), seed=2, on_step=check)


def test_ledgers_merit_from_full_population(small_world, market):
    led = Ledgers.for_market(market, 5.0)
    R = small_world.match_model.matrix()
    np.testing.assert_allclose(led.y.merit, np.maximum(R.mean(axis=0), 1e-6))
    np.testing.assert_allclose(led.x.merit, np.maximum(R.mean(axis=1), 1e-6))
    assert led.y.offset == small_world.n_x


def test_metrics(market):
    state = SimState(2, 2, np.random.default_rng(0))
    state.cum_matches[:] = [1.0, 3.0, 2.0, 0.0]
    state.retained[:] = [True, False, True, True]
    rec = compute_metrics(state, policy="p")
    assert rec.matches_per_user == 1.5 and rec.matches_x == 2.0 and rec.matches_y == 1.0
    assert rec.retention_rate == 0.75 and rec.retention_x == 0.5 and rec.retained == 3


def test_deviation_helpers():
    state = SimState(2, 1, np.random.default_rng(0))
    state.cum_matches[:] = [0.0, 5.0, 2.0]
    state.retained[:] = [True, True, False]
    b = np.array([3.0, 4.0, 1.0])
    counts, edges = satisfaction_deviation_histogram(state, b, bins=2, range=(-4, 4))
    assert counts.tolist() == [1, 1]
    assert deviation_shortfall_share(state, b) == 0.5


def test_mret_best_beats_uniform_on_retention(small_world):
    market = Market.from_world(small_world)
    cfg = SimConfig(T=300, probe_prob=0.02)
    truth = CurveBound(small_world.a, small_world.b)
    keep = []
    for seed in range(3):
        keep.append(
            run_simulation(market, MRetPolicy(truth), cfg, seed=seed).records[-1].retention_rate
            - run_simulation(market, UniformPolicy(), cfg, seed=seed).records[-1].retention_rate
        )
    assert np.mean(keep) > 0


@pytest.mark.parametrize(
    "kw", [dict(K=0), dict(T=-1), dict(rho=2.0), dict(probe_prob=-0.1), dict(match_mode="x"),
           dict(record_interval=0), dict(fairco_lambda=-1), dict(weight_family="zipf")],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        SimConfig(**kw).validate()
