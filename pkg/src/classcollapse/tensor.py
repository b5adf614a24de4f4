"""Embedding storage, squared distances, neighbour ordering and set geometry."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# rows per block when materialising pairwise differences
_BLOCK_ELEMS = 2_000_000


@dataclass(frozen=True)
class EmbeddingSet:
    """``n`` points in ``R^m``; row ``i`` is the embedding of sample ``i``."""

    coords: np.ndarray
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64)
        if coords.ndim != 2 or coords.shape[0] < 1 or coords.shape[1] < 1:
            raise ValueError(f"coords must be a non-empty n x m matrix, got shape {coords.shape}")
        check_finite(coords)
        ids = np.arange(coords.shape[0]) if self.ids is None else np.asarray(self.ids)
        if not np.array_equal(ids, np.arange(coords.shape[0])):
            raise ValueError("ids must be exactly 0..n-1")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def m(self) -> int:
        return self.coords.shape[1]


def as_coords(emb) -> np.ndarray:
    if isinstance(emb, EmbeddingSet):
        return emb.coords
    coords = np.asarray(emb, dtype=np.float64)
    if coords.ndim != 2:
        raise ValueError(f"expected an n x m matrix, got shape {coords.shape}")
    return coords


def check_finite(coords: np.ndarray) -> None:
    bad = ~np.isfinite(coords)
    if bad.any():
        row = int(np.argwhere(bad)[0, 0])
        raise ValueError(f"non-finite coordinate in sample {row}: {coords[row].tolist()}")


def pairwise_sq_dist(emb) -> np.ndarray:
    """Exact squared Euclidean distances.

    Computed from explicit differences (not the Gram expansion) so the
    diagonal is exactly zero and the matrix exactly symmetric.
    """
    x = as_coords(emb)
    check_finite(x)
    n, m = x.shape
    out = np.empty((n, n))
    step = max(1, _BLOCK_ELEMS // max(1, n * m))
    for s in range(0, n, step):
        diff = x[s:s + step, None, :] - x[None, :, :]
        out[s:s + step] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def sq_dist_rows(x: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Squared distances from ``x[rows]`` to every point, shape (len(rows), n)."""
    diff = x[rows, None, :] - x[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def neighbor_order(d2: np.ndarray) -> np.ndarray:
    """Per-anchor ordering of the other samples by ascending distance.

    Returns an ``(n, n-1)`` integer array; ties go to the lower index.
    """
    d2 = np.asarray(d2)
    n = d2.shape[0]
    order = np.argsort(d2, axis=1, kind="stable")
    keep = order != np.arange(n)[:, None]
    return order[keep].reshape(n, n - 1)


def ranks_from_order(order: np.ndarray) -> np.ndarray:
    """``rank[i, j]`` = position of ``j`` in anchor ``i``'s order (-1 for ``j == i``)."""
    n = order.shape[0]
    rank = np.full((n, n), -1, dtype=np.int64)
    rows = np.repeat(np.arange(n), n - 1)
    rank[rows, order.ravel()] = np.tile(np.arange(n - 1), n)
    return rank


def set_geometry(emb, members_a, members_b) -> tuple[float, float]:
    """Diameter of A and distance between A and B, both in unsquared norm."""
    x = as_coords(emb)
    a = np.asarray(members_a, dtype=np.int64).ravel()
    b = np.asarray(members_b, dtype=np.int64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("set_geometry needs two non-empty index sets")
    if np.intersect1d(a, b).size:
        raise ValueError("index sets must be disjoint")
    diam = 0.0
    dist = np.inf
    xa, xb = x[a], x[b]
    step = max(1, _BLOCK_ELEMS // max(1, max(a.size, b.size) * x.shape[1]))
    for s in range(0, a.size, step):
        blk = xa[s:s + step]
        da = blk[:, None, :] - xa[None, :, :]
        diam = max(diam, float(np.einsum("ijk,ijk->ij", da, da).max()))
        db = blk[:, None, :] - xb[None, :, :]
        dist = min(dist, float(np.einsum("ijk,ijk->ij", db, db).min()))
    return float(np.sqrt(diam)), float(np.sqrt(dist))
