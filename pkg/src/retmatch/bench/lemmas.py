"""Randomized checks of the lower-bound inequalities behind the MRet score."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from ..rankers import Ranking, WEIGHT_FAMILIES, exposure_weights, mret_scores, true_gain
from ..retention import BoundRetention, CurveBound
from ..world import retention_params

MAX_K = 8
CHECKS = ("jensen", "linear", "chain")


class ConcaveMixtureBound(BoundRetention):
    """Per-user convex mix of three concave, non-decreasing shapes in [0, 1].

    Shapes: a quadratic rising to a plateau at ``v``, a saturating
    exponential with scale ``s``, and ``min(1, lo + s1*m, mid + s2*m)``.
    """

    def __init__(self, lo, hi, v, s, s1, mid, s2, mix):
        self.params = np.column_stack([lo, hi, v, s, s1, mid, s2, np.asarray(mix)])

    @classmethod
    def sample(cls, n: int, rng: np.random.Generator) -> ConcaveMixtureBound:
        lo = rng.uniform(0.0, 0.6, n)
        hi = lo + rng.uniform(0.0, 1.0, n) * (1.0 - lo)
        v = rng.uniform(0.5, 12.0, n)
        s = rng.uniform(0.3, 6.0, n)
        s1 = rng.uniform(0.0, 0.5, n)
        s2 = s1 * rng.uniform(0.0, 1.0, n)
        mid = lo + rng.uniform(0.0, 0.5, n)
        mix = rng.dirichlet(np.ones(3), n)
        # a third of the users get a pure shape, including the flat-topped quadratic
        pure = rng.random(n) < 1 / 3
        mix[pure] = np.eye(3)[rng.integers(0, 3, pure.sum())]
        return cls(lo, hi, v, s, s1, mid, s2, mix)

    def __call__(self, ids, m):
        m = np.asarray(m, dtype=float)
        lo, hi, v, s, s1, mid, s2, w0, w1, w2 = np.moveaxis(self.params[ids], -1, 0)
        span = hi - lo
        t = 1.0 - np.minimum(m, v) / v
        quad = span * (1.0 - t * t)
        sat = span * -np.expm1(-m / s)
        lin = np.minimum(np.minimum(lo + s1 * m, mid + s2 * m), 1.0)
        out = w0 * quad + w1 * sat + (w0 + w1) * lo + w2 * lin
        return np.minimum(np.maximum(out, 0.0), 1.0)


@dataclass
class LemmaReport:
    trials: int
    tolerance: float
    violations: dict
    worst_slack: dict
    seconds: float
    reference_violations: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(v == 0 for v in self.violations.values())

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "tolerance": self.tolerance,
            "violations": self.violations,
            "worst_slack": self.worst_slack,
            "seconds": round(self.seconds, 3),
            "reference_violations": self.reference_violations,
            "ok": self.ok,
        }


def _random_weights(rng, k: int) -> np.ndarray:
    u = rng.random()
    if u < 0.1:
        w = np.zeros(k)
        w[0] = 1.0
        return w
    if u < 0.5:
        return exposure_weights(WEIGHT_FAMILIES[rng.integers(len(WEIGHT_FAMILIES))], k)
    w = np.sort(rng.random(k))[::-1]
    return w / w[0]


def _random_m(rng, n: int) -> np.ndarray:
    m = rng.exponential(3.0, n)
    # exact integer counts, as in sampled accrual
    ints = rng.random(n) < 0.3
    m[ints] = np.round(m[ints])
    return m


def _random_r(rng, n: int) -> np.ndarray:
    r = rng.random(n)
    r[rng.random(n) < 0.05] = 0.0
    r[rng.random(n) < 0.05] = 1.0
    return r


def _check_trial(retention, base: int, m, rng, slack_out):
    """Slacks (should be >= 0) for the three inequalities on one random instance.

    Users ``base .. base+k`` of ``retention`` take part; ``m`` is indexed by
    global id like the simulator's match counts.
    """
    k = int(rng.integers(1, MAX_K + 1))
    n = k + 1
    ids = base + np.arange(n)
    receiver, cand = int(ids[0]), ids[1:]
    m[ids] = _random_m(rng, n)
    r = _random_r(rng, k)
    w = _random_weights(rng, k)
    A, amax = w.sum(), w.max()

    f = lambda u, x: retention(np.full(np.shape(x), u), x)  # noqa: E731
    # receiver: f(m + sum a r) >= sum (a/A) f(m + A r)
    jensen = f(receiver, m[receiver] + np.dot(w, r)) - np.dot(w / A, f(receiver, m[receiver] + A * r))
    # candidate at every slot: gain(a_k) >= (a_k/a_max) gain(a_max)
    mc = m[cand][:, None]
    full = retention(np.repeat(cand, k).reshape(k, k), mc + amax * r[:, None]) - retention(cand, m[cand])[:, None]
    part = retention(np.repeat(cand, k).reshape(k, k), mc + w[None, :] * r[:, None]) - retention(cand, m[cand])[:, None]
    linear = (part - (w / amax)[None, :] * full).min()
    # the whole ranking, through the library scorer and gain
    ranking = Ranking(cand.copy(), w)
    scores = mret_scores(receiver, cand, r, m, retention, w)
    gain = true_gain(receiver, ranking, r, m, retention).total
    chain = gain - (np.dot(w, scores) - retention(np.array([receiver]), m[receiver : receiver + 1])[0])
    slack_out.append((float(jensen), float(linear), float(chain)))


def lemma_check(trials: int = 10_000, tolerance: float = 1e-9, seed=0, reference: bool = False) -> LemmaReport:
    """Sample random concave curves, weights, match values and rankings; count violations.

    With ``reference`` the same draws are repeated on the simulator's own
    retention curves, which are only piecewise concave; those counts are
    informational and excluded from ``ok``.
    """
    if trials < 0:
        raise ConfigError(f"trials must be >= 0, got {trials}")
    if not np.isfinite(tolerance) or tolerance < 0:
        raise ConfigError(f"tolerance must be a non-negative number, got {tolerance}")
    start = time.perf_counter()
    ss = np.random.SeedSequence(seed)
    s_main, s_ref = ss.spawn(2)
    violations, worst = _run(trials, tolerance, s_main, _mixture_trials)
    ref = {}
    if reference and trials:
        ref, _ = _run(trials, tolerance, s_ref, _reference_trials)
    return LemmaReport(trials, tolerance, violations, worst, time.perf_counter() - start, ref)


def _mixture_trials(rng, n: int) -> BoundRetention:
    return ConcaveMixtureBound.sample(n, rng)


def _reference_trials(rng, n: int) -> BoundRetention:
    M_a = rng.standard_normal(10)
    M_b = rng.standard_normal(10)
    return CurveBound(*retention_params(rng.standard_normal((n, 10)), M_a, M_b))


def _run(trials, tolerance, seed, population):
    rng = np.random.default_rng(seed)
    retention = population(rng, trials * (MAX_K + 1))
    m = np.zeros(trials * (MAX_K + 1))
    slacks = []
    for t in range(trials):
        _check_trial(retention, t * (MAX_K + 1), m, rng, slacks)
    arr = np.array(slacks, dtype=float).reshape(-1, 3)
    violations = {name: int((arr[:, i] < -tolerance).sum()) for i, name in enumerate(CHECKS)}
    worst = {name: (float(arr[:, i].min()) if arr.size else 0.0) for i, name in enumerate(CHECKS)}
    return violations, worst
