"""Lloyd's k-means with k-means++ seeding."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ..errors import BadK


def wcss(X: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    return float(((X - centers[labels]) ** 2).sum())


def _sq_dists(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def kmeans_plus_plus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    closest = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # fewer distinct points than k: pick any unused index
            unused = [i for i in range(n) if i not in chosen]
            idx = int(unused[int(rng.integers(len(unused)))])
        chosen.append(idx)
        closest = np.minimum(closest, ((X - X[idx]) ** 2).sum(axis=1))
    return X[chosen].astype(float).copy()


def _assign(X, centers):
    d = _sq_dists(X, centers)
    labels = d.argmin(axis=1)
    k = centers.shape[0]
    # empty clusters take the point farthest from its centre among clusters that can spare one
    for j in range(k):
        if np.any(labels == j):
            continue
        sizes = np.bincount(labels, minlength=k)
        own = d[np.arange(len(X)), labels]
        donors = np.where(sizes[labels] > 1)[0]
        if donors.size == 0:
            continue
        far = donors[np.argmax(own[donors])]
        labels[far] = j
        centers[j] = X[far]
        d = _sq_dists(X, centers)
    return labels


def lloyd(X: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = 300):
    """One k-means run.  Returns (labels, centers, wcss history, iterations)."""
    centers = kmeans_plus_plus(X, k, rng)
    labels = _assign(X, centers)
    history = [wcss(X, labels, centers)]
    for it in range(1, max_iter + 1):
        for j in range(k):
            members = X[labels == j]
            if len(members):
                centers[j] = members.mean(axis=0)
        new_labels = _assign(X, centers)
        history.append(wcss(X, new_labels, centers))
        if np.array_equal(new_labels, labels):
            return new_labels, centers, history, it
        labels = new_labels
    return labels, centers, history, max_iter


class LloydKMeans(BaseEstimator, ClusterMixin):
    """K-means estimator; keeps the best of ``n_init`` seeded runs.

    After ``fit``: ``labels_``, ``cluster_centers_``, ``inertia_`` and
    ``history_`` (WCSS after every iteration of the kept run).
    """

    def __init__(self, n_clusters: int = 8, n_init: int = 10, max_iter: int = 300, random_state=0):
        self.n_clusters = n_clusters
        self.n_init = n_init
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        if not 1 <= self.n_clusters <= X.shape[0]:
            raise BadK(f"k={self.n_clusters} must be in [1, {X.shape[0]}]")
        rng = np.random.default_rng(self.random_state)
        best = None
        self.all_histories_ = []
        for _ in range(max(1, self.n_init)):
            labels, centers, history, n_iter = lloyd(X, self.n_clusters, rng, self.max_iter)
            self.all_histories_.append(history)
            if best is None or history[-1] < best[2][-1]:
                best = (labels, centers, history, n_iter)
        self.labels_, self.cluster_centers_, self.history_, self.n_iter_ = best
        self.inertia_ = self.history_[-1]
        return self

    def predict(self, X):
        check_is_fitted(self, "cluster_centers_")
        X = check_array(X, dtype=float)
        return _sq_dists(X, self.cluster_centers_).argmin(axis=1)


def kmeans_cluster(vectors, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 300):
    """Cluster ``vectors`` into ``k`` groups; returns ``(assignments, centroids)``."""
    X = np.asarray(vectors, dtype=float)
    if X.ndim != 2 or not 1 <= k <= X.shape[0]:
        raise BadK(f"k={k} must be in [1, {X.shape[0] if X.ndim == 2 else 0}]")
    model = LloydKMeans(n_clusters=k, n_init=n_init, max_iter=max_iter, random_state=seed).fit(X)
    return model.labels_, model.cluster_centers_
