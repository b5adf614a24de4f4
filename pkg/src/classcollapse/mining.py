"""P x K batching and tuple mining, including easy positive sampling (EPS).

Selectors work on batch-local rows: ``coords`` holds the batch embeddings,
``labels`` their classes, and every returned index is a row of ``coords``.
Each anchor draws from its own substream so selection does not depend on
the order anchors are visited.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .tensor import as_coords

POSITIVE_STRATEGIES = ("random", "all_pairs", "easy_positive")
NEGATIVE_STRATEGIES = ("random", "semi_hard", "distance_weighted", "ms_mining")


@dataclass
class MinerConfig:
    positive_strategy: str = "easy_positive"
    negative_strategy: str = "random"
    classes_per_batch: int = 2
    samples_per_class: int = 32
    dw_clip: float = 100.0
    ms_epsilon: float = 0.1

    def __post_init__(self):
        if self.positive_strategy not in POSITIVE_STRATEGIES:
            raise ValueError(f"positive_strategy must be one of {POSITIVE_STRATEGIES}")
        if self.negative_strategy not in NEGATIVE_STRATEGIES:
            raise ValueError(f"negative_strategy must be one of {NEGATIVE_STRATEGIES}")
        if self.classes_per_batch < 2 or self.samples_per_class < 2:
            raise ValueError("need at least 2 classes per batch and 2 samples per class")
        if self.dw_clip <= 0:
            raise ValueError("dw_clip must be positive")


@dataclass
class Batch:
    members: np.ndarray
    kind: str  # "triplet" | "pair" | "set"
    triplets: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    pairs: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    same: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    sets: list = field(default_factory=list)
    provenance: list = field(default_factory=list)

    @property
    def size(self) -> int:
        if self.kind == "triplet":
            return len(self.triplets)
        if self.kind == "pair":
            return len(self.pairs)
        return len(self.sets)


def build_pk_batch(labels, P: int, K: int, rng_seed) -> np.ndarray:
    """Sample P classes, then K distinct samples from each."""
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    eligible = classes[counts >= K]
    if eligible.size < P:
        raise ValueError(f"need {P} classes with >= {K} samples, only {eligible.size} available")
    rng = np.random.default_rng(rng_seed)
    chosen = rng.choice(eligible, size=P, replace=False)
    out = [rng.choice(np.flatnonzero(labels == c), size=K, replace=False) for c in chosen]
    return np.concatenate(out)


def anchor_rng(seed, anchor: int) -> np.random.Generator:
    """Substream for one anchor; ``seed`` may be an int or a sequence of ints."""
    return np.random.default_rng([*np.atleast_1d(seed).astype(int).tolist(), int(anchor)])


def _row_sq(x, a):
    d = x - x[a]
    return np.einsum("ij,ij->i", d, d)


def _same_others(labels, anchor):
    mask = labels == labels[anchor]
    mask[anchor] = False
    return np.flatnonzero(mask)


def select_positive(emb, labels, anchor: int, strategy: str, rng) -> int:
    x = as_coords(emb)
    labels = np.asarray(labels)
    cands = _same_others(labels, anchor)
    if cands.size == 0:
        raise ValueError(f"anchor {anchor} is the only member of its class in the batch")
    if cands.size == 1:
        return int(cands[0])
    if strategy == "easy_positive":
        d = _row_sq(x, anchor)[cands]
        return int(cands[np.argmin(d)])  # argmin keeps the first (lowest) index on ties
    if strategy in ("random", "all_pairs"):
        return int(rng.choice(cands))
    raise ValueError(f"unknown positive strategy {strategy!r}")


def sphere_distance_weights(d: np.ndarray, dim: int, clip: float) -> np.ndarray:
    """``min(clip, 1/q(d))`` with q the pairwise-distance density on the unit sphere.

    ``q(d) ∝ d^(dim-2) (1 - d^2/4)^((dim-3)/2)``; evaluated in log space with
    ``d`` kept inside the open interval (0, 2).
    """
    d = np.clip(np.asarray(d, dtype=np.float64), 1e-8, 2.0 - 1e-8)
    log_q = (dim - 2) * np.log(d) + 0.5 * (dim - 3) * np.log1p(-0.25 * d * d)
    return np.exp(np.minimum(-log_q, np.log(clip)))


def _unit(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms == 0, 1.0, norms)


def ms_negative_set(emb, labels, anchor: int, positives, epsilon: float) -> np.ndarray:
    """Negatives with similarity above the hardest positive's, less ``epsilon``."""
    u = _unit(as_coords(emb))
    labels = np.asarray(labels)
    negs = np.flatnonzero(labels != labels[anchor])
    s = u @ u[anchor]
    thresh = np.min(s[np.asarray(positives)]) - epsilon
    return negs[s[negs] > thresh]


def ms_positive_set(emb, labels, anchor: int, epsilon: float) -> np.ndarray:
    """Positives with similarity below the hardest negative's, plus ``epsilon``."""
    u = _unit(as_coords(emb))
    labels = np.asarray(labels)
    pos = _same_others(labels, anchor)
    negs = np.flatnonzero(labels != labels[anchor])
    s = u @ u[anchor]
    if negs.size == 0:
        return pos
    return pos[s[pos] < np.max(s[negs]) + epsilon]


def select_negative(emb, labels, anchor: int, positive: int, strategy: str,
                    alpha: float, config: Optional[MinerConfig], rng) -> int:
    x = as_coords(emb)
    labels = np.asarray(labels)
    negs = np.flatnonzero(labels != labels[anchor])
    if negs.size == 0:
        raise ValueError(f"no negatives for anchor {anchor} in the batch")
    if negs.size == 1:
        return int(negs[0])
    config = config or MinerConfig()

    if strategy == "random":
        return int(rng.choice(negs))

    if strategy == "semi_hard":
        d = _row_sq(x, anchor)
        d_ap = d[positive]
        d_an = d[negs]
        band = negs[(d_an > d_ap) & (d_an < d_ap + alpha)]
        if band.size:
            return int(rng.choice(band))
        farther = d_an > d_ap
        if farther.any():
            cand = negs[farther]
            return int(cand[np.argmin(d[cand])])
        return int(negs[np.argmax(d_an)])

    if strategy == "distance_weighted":
        u = _unit(x)
        dist = np.sqrt(_row_sq(u, anchor)[negs])
        w = sphere_distance_weights(dist, x.shape[1], config.dw_clip)
        return int(rng.choice(negs, p=w / w.sum()))

    if strategy == "ms_mining":
        mined = ms_negative_set(x, labels, anchor, [positive], config.ms_epsilon)
        if mined.size == 0:
            mined = negs
        u = _unit(x)
        s = u[mined] @ u[anchor]
        return int(mined[np.argmax(s)])

    raise ValueError(f"unknown negative strategy {strategy!r}")


def _positives_for(x, labels, a, miner, rng):
    if miner.positive_strategy == "all_pairs":
        return list(_same_others(labels, a))
    return [select_positive(x, labels, a, miner.positive_strategy, rng)]


def expand_tuples(emb, members, labels, miner: MinerConfig, loss_variant: str,
                  rng_seed, alpha: float = 0.2) -> Batch:
    """Turn one batch into the tuples consumed by ``loss_variant``.

    Every batch row acts as an anchor once. Rows are batch-local; ``members``
    only records which dataset samples they came from.
    """
    x = as_coords(emb)
    labels = np.asarray(labels)
    members = np.asarray(members)
    tag = f"{miner.positive_strategy}+{miner.negative_strategy}"
    anchors = range(x.shape[0])

    if loss_variant == "multi_similarity":
        sets, prov = [], []
        for a in anchors:
            if _same_others(labels, a).size == 0:
                continue
            rng = anchor_rng(rng_seed, a)
            if miner.positive_strategy == "easy_positive":
                pos = np.array([select_positive(x, labels, a, "easy_positive", rng)])
            elif miner.positive_strategy == "random":
                pos = np.array([select_positive(x, labels, a, "random", rng)])
            else:
                pos = ms_positive_set(x, labels, a, miner.ms_epsilon)
            if pos.size == 0:
                continue
            if miner.negative_strategy == "ms_mining":
                neg = ms_negative_set(x, labels, a, pos, miner.ms_epsilon)
            else:
                neg = np.array([select_negative(x, labels, a, int(pos[0]),
                                                miner.negative_strategy, alpha, miner, rng)])
            if neg.size == 0:
                continue
            sets.append((a, pos, neg))
            prov.append(tag)
        return Batch(members=members, kind="set", sets=sets, provenance=prov)

    triples = []
    for a in anchors:
        if _same_others(labels, a).size == 0:
            continue
        rng = anchor_rng(rng_seed, a)
        for p in _positives_for(x, labels, a, miner, rng):
            n = select_negative(x, labels, a, p, miner.negative_strategy, alpha, miner, rng)
            triples.append((a, p, n))
    triples = np.array(triples, dtype=np.int64).reshape(-1, 3)
    prov = [tag] * len(triples)

    if loss_variant == "triplet":
        return Batch(members=members, kind="triplet", triplets=triples, provenance=prov)
    if loss_variant in ("contrastive", "margin"):
        pairs = np.empty((2 * len(triples), 2), dtype=np.int64)
        pairs[0::2] = triples[:, [0, 1]]
        pairs[1::2] = triples[:, [0, 2]]
        same = np.zeros(len(pairs), dtype=bool)
        same[0::2] = True
        return Batch(members=members, kind="pair", pairs=pairs, same=same,
                     provenance=[tag] * len(pairs))
    raise ValueError(f"unknown loss variant {loss_variant!r}")
