"""Sequential market simulation: arrivals, rankings, match accrual and churn probes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .rankers import ExposureLedger, Policy, RankContext, Ranking, exposure_weights, update_ledger
from .retention import BoundRetention, CurveBound
from .world import MatchModel, World

MATCH_MODES = ("sampled", "expected")


@dataclass
class SimConfig:
    K: int = 5
    T: int = 2000
    rho: float = 0.5
    probe_prob: float = 0.002
    match_mode: str = "sampled"
    weight_family: str = "inv"
    record_interval: int = 100
    fairco_lambda: float = 100.0

    def validate(self) -> None:
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if self.T < 0:
            raise ConfigError(f"T must be >= 0, got {self.T}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho must lie in [0, 1], got {self.rho}")
        if not 0.0 <= self.probe_prob <= 1.0:
            raise ConfigError(f"probe_prob must lie in [0, 1], got {self.probe_prob}")
        if self.match_mode not in MATCH_MODES:
            raise ConfigError(f"match_mode must be one of {MATCH_MODES}, got {self.match_mode!r}")
        if self.record_interval < 1:
            raise ConfigError(f"record_interval must be >= 1, got {self.record_interval}")
        if self.fairco_lambda < 0:
            raise ConfigError(f"fairco_lambda must be >= 0, got {self.fairco_lambda}")
        exposure_weights(self.weight_family, self.K)

    @property
    def weights(self) -> np.ndarray:
        return exposure_weights(self.weight_family, self.K)


@dataclass
class Market:
    """What a simulation needs to know about a population."""

    n_x: int
    n_y: int
    match_model: MatchModel
    truth: BoundRetention
    satisfactory: np.ndarray | None = None

    @classmethod
    def from_world(cls, world: World) -> Market:
        return cls(world.n_x, world.n_y, world.match_model, CurveBound(world.a, world.b), world.b)

    @property
    def n_total(self) -> int:
        return self.n_x + self.n_y


@dataclass
class SimState:
    n_x: int
    n_y: int
    rng: np.random.Generator
    match_mode: str = "sampled"
    retained: np.ndarray = None
    cum_matches: np.ndarray = None
    step: int = 0

    def __post_init__(self):
        n = self.n_x + self.n_y
        if self.retained is None:
            self.retained = np.ones(n, dtype=bool)
        if self.cum_matches is None:
            self.cum_matches = np.zeros(n)

    @property
    def retained_x(self) -> np.ndarray:
        return np.flatnonzero(self.retained[: self.n_x])

    @property
    def retained_y(self) -> np.ndarray:
        return np.flatnonzero(self.retained[self.n_x :]) + self.n_x

    @property
    def churned_x(self) -> np.ndarray:
        return np.flatnonzero(~self.retained[: self.n_x])

    @property
    def churned_y(self) -> np.ndarray:
        return np.flatnonzero(~self.retained[self.n_x :]) + self.n_x


@dataclass
class MetricsRecord:
    step: int
    matches_per_user: float
    retention_rate: float
    matches_x: float
    matches_y: float
    retention_x: float
    retention_y: float
    retained: int
    policy: str = ""
    seed: int = 0


@dataclass
class StepEvent:
    step: int
    receiver: int | None
    ranking: Ranking | None
    increments: np.ndarray | None = None


@dataclass
class Ledgers:
    """One exposure ledger per candidate side."""

    x: ExposureLedger
    y: ExposureLedger

    @classmethod
    def for_market(cls, market: Market, lam: float) -> Ledgers:
        R0 = market.match_model.matrix(0, 1)
        return cls(
            x=ExposureLedger.from_matrix(R0, "X", 0, lam),
            y=ExposureLedger.from_matrix(R0, "Y", market.n_x, lam),
        )


def new_state(market: Market, seed, match_mode: str = "sampled") -> SimState:
    return SimState(market.n_x, market.n_y, np.random.default_rng(seed), match_mode)


def simulate_step(
    state: SimState,
    market: Market,
    policy: Policy,
    ledgers: Ledgers | None,
    config: SimConfig,
    weights: np.ndarray | None = None,
) -> StepEvent:
    """Advance one step: pick a side and a receiver, rank, accrue matches."""
    state.step += 1
    rng = state.rng
    from_x = rng.random() < config.rho
    if from_x:
        receivers, candidates = state.retained_x, state.retained_y
    else:
        receivers, candidates = state.retained_y, state.retained_x
    if receivers.size == 0 or candidates.size == 0:
        return StepEvent(state.step, None, None)
    receiver = int(receivers[rng.integers(receivers.size)])
    weights = config.weights if weights is None else weights
    r = market.match_model.row(receiver, candidates, state.step, config.T)
    ledger = None
    if ledgers is not None:
        ledger = ledgers.y if from_x else ledgers.x
    ctx = RankContext(receiver, candidates, r, state.cum_matches, weights, rng, ledger)
    ranking = policy.rank(ctx)
    if len(ranking) == 0:
        return StepEvent(state.step, receiver, ranking, np.zeros(0))
    r_ranked = r[np.searchsorted(candidates, ranking.positions)]
    expected = ranking.weights * r_ranked
    if state.match_mode == "sampled":
        inc = (rng.random(expected.size) < expected).astype(float)
    else:
        inc = expected
    state.cum_matches[receiver] += inc.sum()
    state.cum_matches[ranking.positions] += inc
    if policy.uses_ledger and ledger is not None:
        update_ledger(ledger, ranking)
    return StepEvent(state.step, receiver, ranking, inc)


def churn_phase(state: SimState, market: Market, probe_prob: float = 0.002) -> np.ndarray:
    """Probe each retained user with ``probe_prob``; failed probes churn for good.

    Returns the ids that churned in this phase.
    """
    if probe_prob <= 0:
        return np.zeros(0, dtype=np.int64)
    rng = state.rng
    probed = np.flatnonzero((rng.random(state.retained.size) < probe_prob) & state.retained)
    if probed.size == 0:
        return probed
    stay = rng.random(probed.size) < market.truth(probed, state.cum_matches[probed])
    gone = probed[~stay]
    state.retained[gone] = False
    return gone


def compute_metrics(state: SimState, market: Market | None = None, policy: str = "", seed: int = 0) -> MetricsRecord:
    nx, ny = state.n_x, state.n_y
    m = state.cum_matches
    kept = state.retained
    return MetricsRecord(
        step=state.step,
        matches_per_user=float(m.sum() / (nx + ny)),
        retention_rate=float(kept.sum() / (nx + ny)),
        matches_x=float(m[:nx].sum() / nx),
        matches_y=float(m[nx:].sum() / ny),
        retention_x=float(kept[:nx].sum() / nx),
        retention_y=float(kept[nx:].sum() / ny),
        retained=int(kept.sum()),
        policy=policy,
        seed=seed,
    )


def record_steps(T: int, interval: int) -> list[int]:
    steps = list(range(0, T + 1, interval))
    if steps[-1] != T:
        steps.append(T)
    return steps


@dataclass
class SimResult:
    records: list[MetricsRecord]
    state: SimState
    events: list[StepEvent] = field(default_factory=list)
    ledgers: Ledgers | None = None


def run_simulation(
    market: Market,
    policy: Policy,
    config: SimConfig,
    seed=0,
    trace: bool = False,
    on_step=None,
) -> SimResult:
    """Alternate ``simulate_step`` and ``churn_phase`` for ``T`` steps.

    ``on_step(state, event, ledgers)`` is called after each recommendation
    phase, before churn.
    """
    config.validate()
    state = new_state(market, seed, config.match_mode)
    ledgers = Ledgers.for_market(market, config.fairco_lambda) if policy.uses_ledger else None
    weights = config.weights
    seed_label = int(seed) if np.isscalar(seed) else 0
    records = [compute_metrics(state, market, policy.name, seed_label)]
    events = []
    for step in range(1, config.T + 1):
        event = simulate_step(state, market, policy, ledgers, config, weights)
        if on_step is not None:
            on_step(state, event, ledgers)
        if trace:
            events.append(event)
        churn_phase(state, market, config.probe_prob)
        if step % config.record_interval == 0 or step == config.T:
            records.append(compute_metrics(state, market, policy.name, seed_label))
    return SimResult(records, state, events, ledgers)


def satisfaction_deviation_histogram(state: SimState, satisfactory, bins=20, range=None):
    """Histogram of ``cum_matches - b`` over retained users; ``(counts, edges)``."""
    keep = np.flatnonzero(state.retained)
    if keep.size == 0:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    dev = state.cum_matches[keep] - np.asarray(satisfactory)[keep]
    return np.histogram(dev, bins=bins, range=range)


def deviation_shortfall_share(state: SimState, satisfactory, below: float = -1.0) -> float:
    """Share of retained users whose match count falls short of ``b`` by more than ``-below``."""
    keep = np.flatnonzero(state.retained)
    if keep.size == 0:
        return 0.0
    dev = state.cum_matches[keep] - np.asarray(satisfactory)[keep]
    return float(np.mean(dev < below))
