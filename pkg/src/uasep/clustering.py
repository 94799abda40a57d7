"""Weighted Lloyd K-means with deterministic seeding."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import DegenerateInputError, ParameterError


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    centers: np.ndarray
    objective: float
    iterations: int
    history: list = field(default_factory=list)

    def to_csv(self, path):
        np.savetxt(path, np.column_stack([np.arange(self.labels.size), self.labels]),
                   delimiter=",", fmt="%d", header="row,label", comments="")


def sq_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape (N, k); computed by explicit differences."""
    out = np.empty((X.shape[0], C.shape[0]))
    for j, c in enumerate(C):
        d = X - c
        out[:, j] = np.einsum("ij,ij->i", d, d)
    return out


def weighted_objective(X, w, labels, centers) -> float:
    d = X - centers[labels]
    return float(np.sum(w * np.einsum("ij,ij->i", d, d)))


def _kmeanspp(X, w, k, rng):
    n = X.shape[0]
    first = rng.choice(n, p=w / w.sum())
    centers = [X[first]]
    d2 = sq_distances(X, X[first][None])[:, 0]
    for _ in range(1, k):
        p = w * d2
        total = p.sum()
        if total <= 0:
            # every weighted row coincides with a center already chosen
            idx = rng.choice(n, p=w / w.sum())
        else:
            idx = rng.choice(n, p=p / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, sq_distances(X, X[idx][None])[:, 0])
    return np.array(centers)


def _random_init(X, w, k, rng):
    idx = rng.choice(X.shape[0], size=k, replace=False, p=w / w.sum())
    return X[idx].copy()


def kmeans(rows, weights=None, k: int = 2, seed=0, max_iter: int = 300, tol: float = 1e-6,
           init: Union[str, np.ndarray] = "k-means++") -> ClusterAssignment:
    """Cluster ``rows`` into ``k`` groups minimizing the weighted within-cluster SSE.

    Only positive-weight rows drive the iteration; zero-weight rows get the
    label of their nearest final center. Iteration stops when the relative
    objective decrease falls below ``tol`` or after ``max_iter`` steps.
    """
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    w_all = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    if w_all.shape != (n,):
        raise ParameterError(f"weights shape {w_all.shape} does not match {n} rows")
    if np.any(w_all < 0) or not np.all(np.isfinite(w_all)):
        raise ParameterError("weights must be finite and non-negative")
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    active = np.flatnonzero(w_all > 0)
    Xa, wa = X[active], w_all[active]
    if active.size == 0 or np.unique(Xa, axis=0).shape[0] < k:
        distinct = 0 if active.size == 0 else np.unique(Xa, axis=0).shape[0]
        raise DegenerateInputError(
            f"k={k} exceeds the {distinct} distinct positive-weight rows")

    rng = np.random.default_rng(seed)
    if isinstance(init, str):
        if init == "k-means++":
            centers = _kmeanspp(Xa, wa, k, rng)
        elif init == "random":
            centers = _random_init(Xa, wa, k, rng)
        else:
            raise ParameterError(f"unknown init {init!r}")
    else:
        centers = np.array(init, dtype=np.float64, copy=True)
        if centers.shape != (k, X.shape[1]):
            raise ParameterError(f"init centers shape {centers.shape}, expected {(k, X.shape[1])}")

    history = []
    prev = np.inf
    labels = np.zeros(active.size, dtype=np.int64)
    it = 0
    for it in range(1, max_iter + 1):
        d2 = sq_distances(Xa, centers)
        labels = np.argmin(d2, axis=1)
        counts = np.bincount(labels, weights=wa, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # reseed at the point worst served by its current center
            own = d2[np.arange(labels.size), labels]
            far = int(np.argmax(own))
            labels[far] = j
            centers[j] = Xa[far]
            d2[far] = sq_distances(Xa[far][None], centers)[0]
            counts = np.bincount(labels, weights=wa, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, wa[:, None] * Xa)
        centers = sums / counts[:, None]
        obj = weighted_objective(Xa, wa, labels, centers)
        history.append(obj)
        if np.isfinite(prev) and prev - obj <= tol * prev:
            break
        prev = obj

    all_labels = np.argmin(sq_distances(X, centers), axis=1)
    all_labels[active] = labels
    return ClusterAssignment(all_labels, centers, history[-1], it, history)
