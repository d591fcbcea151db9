"""k-means++ grouping of malware families by how the classifier confuses them.

Each family becomes a point: its row of the aggregated confusion matrix,
normalized to proportions. Families that are predicted as one another end up
close together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import KTooLarge, SingleCluster


@dataclass
class Clustering:
    k_requested: int
    labels: list[str]
    assignments: dict[str, int]
    nonempty_groups: list[list[str]]
    centroids: np.ndarray
    inertia_history: list[float] = field(default_factory=list)
    silhouette: float | None = None

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]

    def to_dict(self) -> dict:
        return {
            "k_requested": self.k_requested,
            "n_groups": len(self.nonempty_groups),
            "groups": self.nonempty_groups,
            "assignments": self.assignments,
            "silhouette": self.silhouette,
            "inertia": self.inertia,
        }


def family_points(confusion, classes) -> tuple[list[str], np.ndarray]:
    """Row-normalize a confusion matrix; rows with no support become all-zero."""
    C = np.asarray(confusion, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1] or C.shape[0] != len(classes):
        raise ValueError("confusion must be square and match the class list")
    totals = C.sum(axis=1, keepdims=True)
    P = np.divide(C, totals, out=np.zeros_like(C), where=totals > 0)
    return list(classes), P


def kmeanspp_init(points, k: int, rng) -> np.ndarray:
    """D^2 seeding. When every remaining squared distance is 0, the next pick
    is uniform over the points not yet chosen."""
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    if k > n:
        raise KTooLarge(f"k={k} exceeds {n} points")
    if k < 1:
        raise ValueError("k must be >= 1")
    chosen = [int(rng.integers(n))]
    d2 = ((X - X[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            pool = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(pool))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((X - X[nxt]) ** 2).sum(axis=1))
    return X[chosen].copy()


def _inertia(X, C, assign):
    return float(((X - C[assign]) ** 2).sum())


def kmeans(points, k: int, rng, max_iter: int = 300, tol: float = 1e-6, labels=None) -> Clustering:
    """Lloyd iterations from k-means++ seeds. Clusters that lose all points are
    dropped rather than re-seeded, so fewer than ``k`` groups may come back."""
    X = np.asarray(points, dtype=np.float64)
    labels = [str(i) for i in range(len(X))] if labels is None else list(labels)
    C = kmeanspp_init(X, k, rng)
    assign = cdist(X, C, "sqeuclidean").argmin(axis=1)
    history = [_inertia(X, C, assign)]
    for _ in range(max_iter):
        live = np.unique(assign)
        new_C = np.array([X[assign == c].mean(axis=0) for c in live])
        shift = 0.0 if len(live) != len(C) else float(np.abs(new_C - C).max())
        C = new_C
        assign = cdist(X, C, "sqeuclidean").argmin(axis=1)
        history.append(_inertia(X, C, assign))
        if len(live) == len(new_C) and shift < tol:
            break
    live = np.unique(assign)
    remap = {int(c): i for i, c in enumerate(live)}
    C = C[live]
    assign = np.array([remap[int(a)] for a in assign])
    return _clustering(k, labels, assign, C, history)


def _clustering(k, labels, assign, C, history):
    groups = {}
    for name, a in zip(labels, assign):
        groups.setdefault(int(a), []).append(name)
    ordered = sorted(groups.items(), key=lambda kv: (-len(kv[1]), sorted(kv[1])))
    relabel = {old: new for new, (old, _) in enumerate(ordered)}
    assignments = {name: relabel[int(a)] for name, a in zip(labels, assign)}
    nonempty = [sorted(members) for _, members in ordered]
    centroids = C[[old for old, _ in ordered]]
    return Clustering(k, labels, assignments, nonempty, centroids, history)


def silhouette(points, assignments) -> float:
    """Mean silhouette; points in singleton clusters score 0."""
    X = np.asarray(points, dtype=np.float64)
    a_ids = np.asarray(assignments)
    clusters = np.unique(a_ids)
    if len(clusters) < 2:
        raise SingleCluster("silhouette needs at least two nonempty clusters")
    D = cdist(X, X)
    scores = np.zeros(len(X))
    for i in range(len(X)):
        own = a_ids == a_ids[i]
        if own.sum() == 1:
            continue
        a = D[i, own].sum() / (own.sum() - 1)
        b = min(D[i, a_ids == c].mean() for c in clusters if c != a_ids[i])
        m = max(a, b)
        scores[i] = (b - a) / m if m > 0 else 0.0
    return float(scores.mean())


def _score(X, clustering: Clustering):
    try:
        return silhouette(X, [clustering.assignments[n] for n in clustering.labels])
    except SingleCluster:
        return None


def cluster_points(points, labels, k: int, seed: int = 0, n_init: int = 10) -> Clustering:
    """Best of ``n_init`` seeded k-means runs by final inertia, with its silhouette."""
    X = np.asarray(points, dtype=np.float64)
    best = None
    for rng_seed in np.random.SeedSequence(seed).spawn(n_init):
        c = kmeans(X, k, np.random.default_rng(rng_seed), labels=labels)
        if best is None or c.inertia < best.inertia - 1e-12:
            best = c
    best.silhouette = _score(X, best)
    return best


def cluster_families(eval_report, k: int, seed: int = 0, n_init: int = 10) -> Clustering:
    """Cluster the families of a multiclass ``EvalReport`` by their confusion rows."""
    names, X = family_points(eval_report.confusion, eval_report.classes)
    if len(names) < 2:
        raise SingleCluster("need at least two families")
    return cluster_points(X, names, k, seed, n_init)


def sweep(eval_report, k_values, seed: int = 0, n_init: int = 10) -> list[dict]:
    """Silhouette and group count for each k; k beyond the family count is skipped."""
    names, X = family_points(eval_report.confusion, eval_report.classes)
    rows = []
    for k in k_values:
        if k > len(names):
            continue
        c = cluster_points(X, names, k, seed, n_init)
        rows.append({"k": k, "n_groups": len(c.nonempty_groups), "silhouette": c.silhouette,
                     "inertia": c.inertia})
    return rows
