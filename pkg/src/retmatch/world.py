"""Synthetic two-sided markets.

Users on side X get global ids ``0..n_x-1`` and users on side Y get
``n_x..n_x+n_y-1``. All per-user arrays on :class:`World` are indexed by
global id.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import ConfigError, DegenerateInputError

Side = Literal["X", "Y"]
TRAJECTORIES = ("constant", "increasing", "decreasing")
_TRAJ_SIGN = np.array([0.0, 1.0, -1.0])


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def retention_params(features, M_a, M_b):
    """Curve parameters ``(a, b)`` projected from feature rows.

    ``b = 1 + 9 sigmoid(x.M_b)`` lies in [1, 10] and
    ``a = -0.95 sigmoid(x.M_a) / b**2`` keeps the curve non-negative at m=0.
    """
    features = np.atleast_2d(np.asarray(features, dtype=float))
    b = 1.0 + 9.0 * sigmoid(features @ np.asarray(M_b, dtype=float))
    a = -0.95 * sigmoid(features @ np.asarray(M_a, dtype=float)) / b**2
    return a, b


@dataclass
class WorldConfig:
    n_x: int = 1000
    n_y: int = 1000
    d: int = 10
    kappa: float = 0.5
    noise_delta: float = 0.0
    drift: bool = False
    drift_slope: float = 0.5
    seed: int = 0
    M_a: np.ndarray | None = None
    M_b: np.ndarray | None = None

    def validate(self) -> None:
        if self.n_x < 1 or self.n_y < 1:
            raise ConfigError(f"population sizes must be >= 1, got n_x={self.n_x}, n_y={self.n_y}")
        if self.d < 1:
            raise ConfigError(f"feature dimension must be >= 1, got d={self.d}")
        if not 0.0 <= self.kappa <= 1.0:
            raise ConfigError(f"kappa must lie in [0, 1], got {self.kappa}")
        if self.noise_delta < 0:
            raise ConfigError(f"noise_delta must be >= 0, got {self.noise_delta}")
        if self.drift_slope < 0:
            raise ConfigError(f"drift_slope must be >= 0, got {self.drift_slope}")
        for name in ("M_a", "M_b"):
            vec = getattr(self, name)
            if vec is not None and np.shape(vec) != (self.d,):
                raise ConfigError(f"{name} must have shape ({self.d},), got {np.shape(vec)}")


@dataclass(frozen=True)
class UserProfile:
    id: int
    side: Side
    features: np.ndarray
    pop0: float
    pop_trajectory: str
    a: float
    b: float


def base_similarity(x, y) -> float:
    """Cosine similarity of two profiles (or raw feature vectors)."""
    u = np.asarray(getattr(x, "features", x), dtype=float)
    v = np.asarray(getattr(y, "features", y), dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise DegenerateInputError("cosine similarity is undefined for a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


class MatchModel:
    """Mutual-match probability ``r(x, y)``, symmetric in its two users.

    ``r = clip((1-kappa) cos(x, y) + kappa pop_t(x) pop_t(y) + eps_xy, 0, 1)``
    where ``eps_xy`` is a per-pair draw frozen at construction and ``pop_t``
    is the popularity trajectory at normalized time ``step / horizon``.
    """

    def __init__(
        self,
        cosine: np.ndarray,
        pop0: np.ndarray,
        trajectory: np.ndarray,
        kappa: float,
        noise: np.ndarray | None = None,
        drift_enabled: bool = False,
        drift_slope: float = 0.5,
    ):
        self.cosine = np.ascontiguousarray(cosine, dtype=float)
        self.n_x, self.n_y = self.cosine.shape
        self.pop0 = np.asarray(pop0, dtype=float)
        self.trajectory = np.asarray(trajectory, dtype=np.int64)
        self.kappa = float(kappa)
        self.noise = None if noise is None else np.ascontiguousarray(noise, dtype=float)
        self.noise_delta = 0.0 if noise is None else float(np.max(np.abs(noise), initial=0.0))
        self.drift_enabled = bool(drift_enabled)
        self.drift_slope = float(drift_slope)
        self._static = None
        if not self.drift_enabled:
            self._static = self._compose(self.pop0)
            self._static_t = np.ascontiguousarray(self._static.T)

    @property
    def n_total(self) -> int:
        return self.n_x + self.n_y

    def popularity(self, step: int = 0, horizon: int = 1) -> np.ndarray:
        if not self.drift_enabled:
            return self.pop0
        tau = step / horizon if horizon > 0 else 0.0
        tau = min(max(tau, 0.0), 1.0)
        return np.clip(self.pop0 + self.drift_slope * tau * _TRAJ_SIGN[self.trajectory], 0.0, 1.0)

    def _compose(self, pop):
        px, py = pop[: self.n_x], pop[self.n_x :]
        r = (1.0 - self.kappa) * self.cosine + self.kappa * np.outer(px, py)
        if self.noise is not None:
            r = r + self.noise
        return np.clip(r, 0.0, 1.0)

    def matrix(self, step: int = 0, horizon: int = 1) -> np.ndarray:
        """Full ``n_x x n_y`` probability matrix at ``step``."""
        if self._static is not None:
            return self._static
        return self._compose(self.popularity(step, horizon))

    def row(self, receiver: int, candidates: np.ndarray, step: int = 0, horizon: int = 1) -> np.ndarray:
        """Probabilities between one receiver and opposite-side candidates (global ids)."""
        candidates = np.asarray(candidates, dtype=np.int64)
        nx = self.n_x
        if receiver < nx:
            if candidates.size and candidates.min() < nx:
                raise ValueError("candidates must be on the opposite side of the receiver")
            cols = candidates - nx
            if self._static is not None:
                return self._static[receiver, cols]
            base = self.cosine[receiver, cols]
            noise = None if self.noise is None else self.noise[receiver, cols]
        else:
            if candidates.size and candidates.max() >= nx:
                raise ValueError("candidates must be on the opposite side of the receiver")
            if self._static is not None:
                return self._static_t[receiver - nx, candidates]
            base = self.cosine[candidates, receiver - nx]
            noise = None if self.noise is None else self.noise[candidates, receiver - nx]
        pop = self.popularity(step, horizon)
        r = (1.0 - self.kappa) * base + self.kappa * pop[receiver] * pop[candidates]
        if noise is not None:
            r = r + noise
        return np.clip(r, 0.0, 1.0)

    def probability(self, x: int, y: int, step: int = 0, horizon: int = 1) -> float:
        if (x < self.n_x) == (y < self.n_x):
            raise ValueError(f"users {x} and {y} are on the same side")
        return float(self.row(x, np.array([y]), step, horizon)[0])


class FixedMatchModel(MatchModel):
    """Match model backed by a precomputed probability matrix."""

    def __init__(self, matrix: np.ndarray):
        matrix = np.clip(np.asarray(matrix, dtype=float), 0.0, 1.0)
        n_x, n_y = matrix.shape
        super().__init__(
            cosine=matrix,
            pop0=np.zeros(n_x + n_y),
            trajectory=np.zeros(n_x + n_y, dtype=np.int64),
            kappa=0.0,
        )


def match_probability(model: MatchModel, x, y, step: int = 0, horizon: int = 1) -> float:
    """``r(x, y)`` for two profiles (or global ids) on opposite sides."""
    xid = getattr(x, "id", x)
    yid = getattr(y, "id", y)
    return model.probability(int(xid), int(yid), step, horizon)


@dataclass(frozen=True, eq=False)
class World:
    config: WorldConfig
    features: np.ndarray
    pop0: np.ndarray
    trajectory: np.ndarray
    a: np.ndarray
    b: np.ndarray
    M_a: np.ndarray
    M_b: np.ndarray
    match_model: MatchModel = field(repr=False)

    @property
    def n_x(self) -> int:
        return self.config.n_x

    @property
    def n_y(self) -> int:
        return self.config.n_y

    @property
    def n_total(self) -> int:
        return self.n_x + self.n_y

    @property
    def x_ids(self) -> np.ndarray:
        return np.arange(self.n_x)

    @property
    def y_ids(self) -> np.ndarray:
        return np.arange(self.n_x, self.n_total)

    def side_of(self, uid: int) -> Side:
        return "X" if uid < self.n_x else "Y"

    def profile(self, uid: int) -> UserProfile:
        return UserProfile(
            id=int(uid),
            side=self.side_of(uid),
            features=self.features[uid],
            pop0=float(self.pop0[uid]),
            pop_trajectory=TRAJECTORIES[int(self.trajectory[uid])],
            a=float(self.a[uid]),
            b=float(self.b[uid]),
        )

    def profiles(self, side: Side) -> list[UserProfile]:
        ids = self.x_ids if side == "X" else self.y_ids
        return [self.profile(i) for i in ids]

    def with_match_model(self, model: MatchModel) -> World:
        return World(
            self.config, self.features, self.pop0, self.trajectory, self.a, self.b, self.M_a, self.M_b, model
        )


def _draw_features(rng, n, d):
    feats = rng.standard_normal((n, d))
    # a zero row has probability ~0 but would make the cosine undefined
    bad = np.linalg.norm(feats, axis=1) == 0.0
    while bad.any():
        feats[bad] = rng.standard_normal((int(bad.sum()), d))
        bad = np.linalg.norm(feats, axis=1) == 0.0
    return feats


def generate_world(config: WorldConfig) -> World:
    config.validate()
    rng = np.random.default_rng(config.seed)
    d = config.d
    M_a = rng.standard_normal(d)
    M_b = rng.standard_normal(d)
    if config.M_a is not None:
        M_a = np.asarray(config.M_a, dtype=float)
    if config.M_b is not None:
        M_b = np.asarray(config.M_b, dtype=float)
    fx = _draw_features(rng, config.n_x, d)
    fy = _draw_features(rng, config.n_y, d)
    pop0 = rng.uniform(0.0, 1.0, config.n_x + config.n_y)
    trajectory = rng.integers(0, 3, config.n_x + config.n_y)
    noise = None
    if config.noise_delta > 0:
        noise = rng.uniform(-config.noise_delta, config.noise_delta, (config.n_x, config.n_y))

    ux = fx / np.linalg.norm(fx, axis=1, keepdims=True)
    uy = fy / np.linalg.norm(fy, axis=1, keepdims=True)
    cosine = np.clip(ux @ uy.T, -1.0, 1.0)
    features = np.vstack([fx, fy])
    a, b = retention_params(features, M_a, M_b)
    model = MatchModel(
        cosine,
        pop0,
        trajectory,
        config.kappa,
        noise=noise,
        drift_enabled=config.drift,
        drift_slope=config.drift_slope,
    )
    return World(config, features, pop0, trajectory, a, b, M_a, M_b, model)
