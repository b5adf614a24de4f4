"""Retrieval and clustering metrics plus class-collapse diagnostics."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .tensor import as_coords, set_geometry, sq_dist_rows

_QUERY_BLOCK = 512


def recall_at_k(emb, labels, ks) -> dict:
    """Fraction of queries with a same-label sample among their k nearest.

    The query itself is excluded; distance ties go to the lower index.
    """
    x = as_coords(emb)
    labels = np.asarray(labels)
    n = x.shape[0]
    ks = sorted(int(k) for k in ks)
    if ks[0] < 1 or ks[-1] >= n:
        raise ValueError(f"need 1 <= k < n={n}, got {ks}")
    kmax = ks[-1]
    first_hit = np.empty(n, dtype=np.int64)
    for s in range(0, n, _QUERY_BLOCK):
        rows = np.arange(s, min(n, s + _QUERY_BLOCK))
        d = sq_dist_rows(x, rows)
        d[np.arange(rows.size), rows] = np.inf
        nn = np.argsort(d, axis=1, kind="stable")[:, :kmax]
        hit = labels[nn] == labels[rows][:, None]
        first_hit[rows] = np.where(hit.any(axis=1), hit.argmax(axis=1), kmax)
    return {k: float(np.mean(first_hit < k)) for k in ks}


def _kmeanspp(x, K, rng):
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _assign(x, centers):
    d = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    a = d.argmin(axis=1)
    return a, d[np.arange(x.shape[0]), a]


def kmeans(emb, K: int, seed, max_iter: int = 300, tol: float = 1e-6,
           return_history: bool = False):
    """Lloyd's algorithm from k-means++ seeding.

    An empty cluster is re-seeded with the point farthest from its current
    centroid. ``return_history`` also yields the inertia after every step.
    """
    x = as_coords(emb)
    n = x.shape[0]
    if not 1 <= K <= n:
        raise ValueError(f"need 1 <= K <= n={n}, got K={K}")
    rng = np.random.default_rng(seed)
    centers = _kmeanspp(x, K, rng)
    history = []
    assign, dist = _assign(x, centers)
    for _ in range(max_iter):
        new = centers.copy()
        for c in range(K):
            members = assign == c
            if members.any():
                new[c] = x[members].mean(axis=0)
        counts = np.bincount(assign, minlength=K)
        for c in np.flatnonzero(counts == 0):
            far = int(np.argmax(dist))
            new[c] = x[far]
            dist[far] = 0.0
        shift = np.max(np.linalg.norm(new - centers, axis=1))
        centers = new
        assign, dist = _assign(x, centers)
        history.append(float(dist.sum()))
        if shift <= tol:
            break
    if return_history:
        return assign, centers, history
    return assign


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def nmi(assign_a, assign_b) -> float:
    """Mutual information over the arithmetic mean of the two entropies."""
    a = np.asarray(assign_a)
    b = np.asarray(assign_b)
    if a.shape != b.shape or a.size == 0:
        raise ValueError("assignments must be non-empty and of equal length")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)
    ha = _entropy(table.sum(axis=1))
    hb = _entropy(table.sum(axis=0))
    if ha == 0 and hb == 0:
        return 1.0
    if ha == 0 or hb == 0:
        return 0.0
    pij = table / a.size
    outer = np.outer(pij.sum(axis=1), pij.sum(axis=0))
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    return float(np.clip(mi / ((ha + hb) / 2), 0.0, 1.0))


def nmi_plus(emb, labels, multiplier: int, seed, target=None) -> float:
    """NMI of k-means with ``multiplier * #classes`` clusters.

    Scored against ``labels`` unless ``target`` (e.g. sub-mode labels) is
    given; the cluster count always comes from ``labels``.
    """
    labels = np.asarray(labels)
    K = int(multiplier) * np.unique(labels).size
    assign = kmeans(emb, K, seed)
    return nmi(assign, labels if target is None else target)


def collapse_diagnostics(emb, labels) -> dict:
    x = as_coords(emb)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ValueError("collapse diagnostics need at least two classes")
    diam = {}
    min_between = np.inf
    for c in classes:
        members = np.flatnonzero(labels == c)
        others = np.flatnonzero(labels != c)
        d, between = set_geometry(x, members, others)
        diam[int(c)] = d
        min_between = min(min_between, between)
    worst = max(diam.values())
    score = worst / min_between if min_between > 0 else float("inf")
    return {
        "class_diameter": diam,
        "max_within_sq": worst ** 2,
        "min_between": float(min_between),
        "collapse_score": float(score),
    }


@dataclass
class MetricsReport:
    recall: dict
    nmi: float
    nmi_plus: float
    class_diameter: dict
    min_between: float
    collapse_score: float
    cluster_hist: list = field(default_factory=list)
    mode_nmi_plus: float = float("nan")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["recall"] = {str(k): v for k, v in self.recall.items()}
        d["class_diameter"] = {str(k): v for k, v in self.class_diameter.items()}
        return d


def evaluate(emb, labels, ks=(1, 2, 4, 8), multiplier: int = 10, seed=0,
             mode_labels=None) -> MetricsReport:
    x = as_coords(emb)
    labels = np.asarray(labels)
    n_cls = np.unique(labels).size
    ks = [k for k in ks if k < x.shape[0]]
    assign = kmeans(x, n_cls, seed)
    k_plus = min(x.shape[0], multiplier * n_cls)
    assign_plus = kmeans(x, k_plus, seed)
    diag = collapse_diagnostics(x, labels)
    mode_score = float("nan")
    if mode_labels is not None:
        mode_score = nmi(assign_plus, mode_labels)
    return MetricsReport(
        recall=recall_at_k(x, labels, ks),
        nmi=nmi(assign, labels),
        nmi_plus=nmi(assign_plus, labels),
        class_diameter=diag["class_diameter"],
        min_between=diag["min_between"],
        collapse_score=diag["collapse_score"],
        cluster_hist=np.bincount(assign_plus, minlength=k_plus).tolist(),
        mode_nmi_plus=mode_score,
    )
