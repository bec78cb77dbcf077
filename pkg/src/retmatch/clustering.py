"""Lloyd's k-means with k-means++ seeding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    wcss_history: list[float]
    n_iter: int

    @property
    def wcss(self) -> float:
        return self.wcss_history[-1]


def _sq_dist(X, C):
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def assign(X, centroids):
    """Nearest-centroid labels; ties go to the lower cluster index."""
    return np.argmin(_sq_dist(np.atleast_2d(X), centroids), axis=1)


def _plusplus(X, k, rng):
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_dist(X, X[chosen])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=closest / total))
        else:
            pool = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(pool))
        chosen.append(nxt)
        closest = np.minimum(closest, _sq_dist(X, X[[nxt]])[:, 0])
    return X[chosen].copy()


def kmeans(features, k: int = 5, iters: int = 100, seed=0) -> KMeansResult:
    X = np.asarray(features, dtype=float)
    if X.ndim != 2:
        raise ConfigError("features must be a 2-d array")
    n = X.shape[0]
    if k < 1 or k > n:
        raise ConfigError(f"k must lie in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    C = _plusplus(X, k, rng)
    D = _sq_dist(X, C)
    labels = np.argmin(D, axis=1)
    history = [float(D[np.arange(n), labels].sum())]
    it = 0
    for it in range(1, iters + 1):
        for c in range(k):
            members = labels == c
            if members.any():
                C[c] = X[members].mean(axis=0)
            else:
                # reseed to the point worst served by its current centroid
                far = int(np.argmax(D[np.arange(n), labels]))
                C[c] = X[far]
                labels[far] = c
        D = _sq_dist(X, C)
        new = np.argmin(D, axis=1)
        history.append(float(D[np.arange(n), new].sum()))
        if np.array_equal(new, labels):
            break
        labels = new
    return KMeansResult(C, labels, history, it)
