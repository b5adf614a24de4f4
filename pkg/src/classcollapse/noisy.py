"""Expected embedding objectives under independent label noise.

Each sample ``i`` has a true set ``A_c`` and draws its observed label from
``P(Y_i = c) = p`` if ``i`` is in ``A_c`` and ``q' = (1 - p) / (t - 1)``
otherwise. Because labels are independent, every expected indicator product
factorises into sums over classes of per-sample probabilities; those sums
are the coefficient tensors below. Sums run over distinct indices only.

:func:`enumerate_expected_objective` computes the same expectations by
brute force over all ``t**n`` label assignments and is the oracle for the
closed forms.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .tensor import as_coords, neighbor_order, pairwise_sq_dist, ranks_from_order

OBJECTIVES = ("trip", "margin", "eps_trip", "eps_margin")
MAX_STATES = 10 ** 7


@dataclass(frozen=True)
class NoisyLabelModel:
    partition: np.ndarray
    t: int
    p: float

    def __post_init__(self):
        part = np.asarray(self.partition, dtype=np.int64)
        object.__setattr__(self, "partition", part)
        if self.t < 2:
            raise ValueError("need at least two classes")
        if part.min() < 0 or part.max() >= self.t:
            raise ValueError("partition entries must lie in 0..t-1")
        sizes = np.bincount(part, minlength=self.t)
        if np.any(sizes != part.size // self.t) or part.size % self.t:
            raise ValueError(f"true sets must have equal size n/t, got sizes {sizes.tolist()}")
        if not 0.5 < self.p < 1.0:
            raise ValueError(f"p must lie in (0.5, 1), got {self.p}")

    @classmethod
    def balanced(cls, n: int, t: int, p: float) -> "NoisyLabelModel":
        """Contiguous blocks: samples ``[c n/t, (c+1) n/t)`` belong to ``A_c``."""
        if n % t:
            raise ValueError(f"t={t} must divide n={n}")
        return cls(np.repeat(np.arange(t), n // t), t, p)

    @property
    def n(self) -> int:
        return self.partition.size

    @property
    def q_other(self) -> float:
        return (1.0 - self.p) / (self.t - 1)

    @property
    def probs(self) -> np.ndarray:
        """``probs[i, c] = P(Y_i = c)``."""
        P = np.full((self.n, self.t), self.q_other)
        P[np.arange(self.n), self.partition] = self.p
        return P


@dataclass
class ExpectedObjectiveSpec:
    objective: str
    alpha: float = 0.2
    beta: Union[float, np.ndarray, None] = None

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    def beta_vector(self, n: int) -> np.ndarray:
        b = self.alpha if self.beta is None else self.beta
        b = np.broadcast_to(np.asarray(b, dtype=np.float64), (n,))
        return np.array(b)


# -- scalar coefficients ---------------------------------------------------

def pair_same_prob(model: NoisyLabelModel, i: int, j: int) -> float:
    """``E[1{Y_i = Y_j}]``."""
    if i == j:
        raise ValueError("pair_same_prob needs distinct samples")
    P = model.probs
    return float(P[i] @ P[j])


def triplet_coeff(model: NoisyLabelModel, i: int, j: int, k: int) -> float:
    """``E[1{Y_i = Y_j} 1{Y_i != Y_k}]``."""
    if len({i, j, k}) != 3:
        raise ValueError(f"indices must be distinct, got {(i, j, k)}")
    P = model.probs
    return float(np.sum(P[i] * P[j] * (1.0 - P[k])))


def eps_coeff(model: NoisyLabelModel, order: np.ndarray, i: int, j: int,
              k: Optional[int] = None) -> float:
    """``E[Phi(Y_i, Y_j) (1 - 1{Y_i = Y_k})]`` (``k`` optional).

    ``Phi`` holds when ``j`` shares ``i``'s label and nothing ranked before
    ``j`` in anchor ``i``'s order does.
    """
    n = model.n
    if not (0 <= i < n and 0 <= j < n) or i == j:
        raise ValueError(f"invalid anchor/positive pair {(i, j)}")
    if k is not None and (k in (i, j) or not 0 <= k < n):
        raise ValueError(f"invalid negative index {k}")
    P = model.probs
    row = np.asarray(order[i])
    r = int(np.flatnonzero(row == j)[0])
    closer = row[:r]
    term = P[i] * P[j] * np.prod(1.0 - P[closer], axis=0)
    if k is not None and k not in set(closer.tolist()):
        term = term * (1.0 - P[k])
    return float(term.sum())


# -- coefficient tensors ---------------------------------------------------

def _distinct3(n):
    idx = np.arange(n)
    return ((idx[:, None, None] != idx[None, :, None])
            & (idx[:, None, None] != idx[None, None, :])
            & (idx[None, :, None] != idx[None, None, :]))


def same_prob_matrix(model: NoisyLabelModel) -> np.ndarray:
    P = model.probs
    S = P @ P.T
    np.fill_diagonal(S, 0.0)
    return S


def triplet_coeff_tensor(model: NoisyLabelModel) -> np.ndarray:
    P = model.probs
    W = np.einsum("ic,jc,kc->ijk", P, P, 1.0 - P)
    return W * _distinct3(model.n)


def _eps_base(model, order):
    """``base[i, j, c] = P_i(c) P_j(c) prod_{t before j} (1 - P_t(c))``."""
    P = model.probs
    n, t = P.shape
    base = np.zeros((n, n, t))
    for i in range(n):
        row = order[i]
        survive = np.cumprod(1.0 - P[row], axis=0)
        excl = np.vstack([np.ones((1, t)), survive[:-1]])
        base[i, row] = P[i] * P[row] * excl
    return base


def eps_pair_coeffs(model: NoisyLabelModel, order: np.ndarray) -> np.ndarray:
    return _eps_base(model, order).sum(axis=2)


def eps_triplet_coeffs(model: NoisyLabelModel, order: np.ndarray) -> np.ndarray:
    P = model.probs
    n = model.n
    base = _eps_base(model, order)
    rank = ranks_from_order(order)
    W = np.empty((n, n, n))
    for i in range(n):
        later = rank[i][None, :] > rank[i][:, None]  # k after j
        W[i] = np.where(later, base[i] @ (1.0 - P).T, base[i].sum(axis=1)[:, None])
    return W * _distinct3(n)


# -- objectives ------------------------------------------------------------

def _norm(objective: str, n: int) -> float:
    return {"trip": n ** -3, "margin": n ** -2}.get(objective, 1.0 / n)


def _weights(x, model, spec):
    if spec.objective == "trip":
        return triplet_coeff_tensor(model), None
    if spec.objective == "margin":
        S = same_prob_matrix(model)
        return S, 1.0 - S
    order = neighbor_order(pairwise_sq_dist(x))
    if spec.objective == "eps_trip":
        return eps_triplet_coeffs(model, order), None
    S = same_prob_matrix(model)
    return eps_pair_coeffs(model, order), 1.0 - S


def fixed_weights(model: NoisyLabelModel, spec: ExpectedObjectiveSpec):
    """Coefficient tensors of the plain objectives, which do not depend on the embedding."""
    if spec.objective.startswith("eps"):
        raise ValueError("EPS coefficients depend on the embedding's neighbour order")
    return _weights(None, model, spec)


def objective_and_grad(emb, model: NoisyLabelModel, spec: ExpectedObjectiveSpec,
                       weights=None):
    """Closed-form expected objective with gradients for coords and beta.

    For the EPS objectives the neighbour order is held fixed at the current
    embedding, so the gradient is that of the active linear piece.
    ``weights`` may carry the output of :func:`fixed_weights` to skip
    recomputing it.
    """
    x = as_coords(emb)
    n = model.n
    if x.shape[0] != n:
        raise ValueError(f"embedding has {x.shape[0]} samples, model expects {n}")
    D = pairwise_sq_dist(x)
    alpha = spec.alpha
    scale = _norm(spec.objective, n)
    W, Wneg = weights if weights is not None else _weights(x, model, spec)

    if spec.objective in ("trip", "eps_trip"):
        H = D[:, :, None] - D[:, None, :] + alpha
        A = np.where(H > 0, W, 0.0)
        value = scale * float(np.sum(A * H))
        GD = A.sum(axis=2) - A.sum(axis=1)
        gbeta = np.zeros(n)
    else:
        beta = spec.beta_vector(n)
        off = ~np.eye(n, dtype=bool)
        hp = D - beta[:, None] + alpha
        hn = beta[:, None] - D + alpha
        ap = np.where((hp > 0) & off, W, 0.0)
        an = np.where((hn > 0) & off, Wneg, 0.0)
        value = scale * float(np.sum(ap * hp) + np.sum(an * hn))
        GD = ap - an
        gbeta = scale * (an.sum(axis=1) - ap.sum(axis=1))

    Gs = scale * (GD + GD.T)
    grad = 2.0 * (Gs.sum(axis=1)[:, None] * x - Gs @ x)
    return value, grad, gbeta


def expected_objective(emb, model: NoisyLabelModel, spec: ExpectedObjectiveSpec) -> float:
    return objective_and_grad(emb, model, spec)[0]


def pair_terms(emb, model, spec):
    """Per-pair (margin) or per-triplet (trip) expected contributions, unscaled."""
    x = as_coords(emb)
    D = pairwise_sq_dist(x)
    W, Wneg = _weights(x, model, spec)
    if spec.objective in ("trip", "eps_trip"):
        return W * np.maximum(D[:, :, None] - D[:, None, :] + spec.alpha, 0.0)
    beta = spec.beta_vector(model.n)[:, None]
    out = W * np.maximum(D - beta + spec.alpha, 0.0) + Wneg * np.maximum(beta - D + spec.alpha, 0.0)
    np.fill_diagonal(out, 0.0)
    return out


# -- enumeration oracle ----------------------------------------------------

def _assignments(n, t, chunk):
    it = itertools.product(range(t), repeat=n)
    while True:
        block = list(itertools.islice(it, chunk))
        if not block:
            return
        yield np.array(block, dtype=np.int64)


def enumerate_expected_objective(emb, model: NoisyLabelModel, spec: ExpectedObjectiveSpec,
                                 chunk: int = 256) -> float:
    """Expected objective by summing over every label assignment.

    Each assignment is weighted by its probability and scored with the
    deterministic loss: indicators are evaluated literally, and the EPS
    indicator checks every sample ranked strictly closer to the anchor.
    """
    x = np.asarray(as_coords(emb), dtype=np.float64)
    n, t = model.n, model.t
    if t ** n > MAX_STATES:
        raise ValueError(f"{t}**{n} label assignments exceeds the enumeration bound {MAX_STATES}")
    if x.shape[0] != n:
        raise ValueError("embedding/model size mismatch")
    diff = x[:, None, :] - x[None, :, :]
    D = (diff ** 2).sum(axis=-1)
    alpha = spec.alpha
    beta = spec.beta_vector(n)
    rank = ranks_from_order(neighbor_order(D))
    idx = np.arange(n)
    distinct2 = idx[:, None] != idx[None, :]
    distinct3 = (distinct2[:, :, None] & distinct2[:, None, :]
                 & (idx[None, :, None] != idx[None, None, :]))
    # closer[i, j, s]: s is ranked strictly before j for anchor i
    closer = (rank[:, None, :] < rank[:, :, None]) & (rank[:, None, :] >= 0)

    hinge3 = np.maximum(D[:, :, None] - D[:, None, :] + alpha, 0.0) * distinct3
    pos2 = np.maximum(D - beta[:, None] + alpha, 0.0) * distinct2
    neg2 = np.maximum(beta[:, None] - D + alpha, 0.0) * distinct2
    logp = np.log(model.probs)

    total = 0.0
    for Y in _assignments(n, t, chunk):
        weight = np.exp(logp[idx, Y].sum(axis=1))
        same = Y[:, :, None] == Y[:, None, :]
        if spec.objective.startswith("eps"):
            clash = np.einsum("ijs,ais->aij", closer, same) > 0
            first = same & ~clash
        else:
            first = same
        if spec.objective.endswith("trip"):
            ind = first[:, :, :, None] & ~same[:, :, None, :]
            scores = ind.reshape(len(Y), -1).astype(np.float64) @ hinge3.ravel()
        else:
            scores = (first.reshape(len(Y), -1).astype(np.float64) @ pos2.ravel()
                      + (~same).reshape(len(Y), -1).astype(np.float64) @ neg2.ravel())
        total += float(weight @ scores)
    return total * _norm(spec.objective, n)


# -- reference embeddings --------------------------------------------------

_GOLDEN = np.pi * (3.0 - np.sqrt(5.0))


def _jitter(n, jitter):
    i = np.arange(n)
    r = jitter * (i + 1) / n
    return np.stack([r * np.cos(i * _GOLDEN), r * np.sin(i * _GOLDEN)], axis=1)


def reference_embeddings(n: int, t: int = 2, alpha: float = 0.2, jitter: float = 1e-6):
    """Collapsed (f1) and two-mode (f2) embeddings in the plane.

    f1 puts each class at one point, the two points at squared distance
    ``alpha``. f2 splits the first class into two halves of ``n/(2t)``
    samples; the three clusters sit on an equilateral triangle of side
    ``sqrt(alpha)``. Per-sample offsets of size ``jitter`` make every
    neighbour order strict; the first class's halves are pulled together by
    ``3 * jitter`` so, from either half, the other half ranks before the
    second class.
    """
    if t != 2:
        raise ValueError("reference embeddings are defined for two classes")
    if n % (2 * t):
        raise ValueError(f"n={n} must be divisible by 2t={2 * t}")
    if jitter <= 0:
        raise ValueError("jitter must be positive so neighbour orders are strict")
    half, quarter = n // 2, n // 4
    side = np.sqrt(alpha)
    off = _jitter(n, jitter)

    f1 = np.zeros((n, 2))
    f1[half:] = [side, 0.0]
    f1 += off

    apex = np.array([side / 2, side * np.sqrt(3) / 2])
    f2 = np.zeros((n, 2))
    f2[quarter:half] = [side - 3 * jitter, 0.0]
    f2[half:] = apex
    f2 += off
    return f1, f2
