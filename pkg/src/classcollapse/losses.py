"""Contrastive, triplet, margin and multi-similarity losses with analytic gradients.

Distances are squared Euclidean throughout. Hinges use a zero subgradient at
the kink: a term is active only when its argument is strictly positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp, softmax

from .tensor import as_coords

VARIANTS = ("contrastive", "triplet", "margin", "multi_similarity")


@dataclass
class LossConfig:
    variant: str = "triplet"
    alpha: float = 0.2
    beta_init: float = 1.2
    ms_alpha: float = 2.0
    ms_beta: float = 50.0
    ms_lambda: float = 1.0
    trim_fraction: float = 0.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.alpha <= 0 or self.beta_init <= 0:
            raise ValueError("alpha and beta_init must be positive")
        if min(self.ms_alpha, self.ms_beta, self.ms_lambda) <= 0:
            raise ValueError("multi-similarity parameters must be positive")
        if not 0.0 <= self.trim_fraction < 1.0:
            raise ValueError("trim_fraction must lie in [0, 1)")


@dataclass
class LossGrad:
    loss: float
    grad: np.ndarray
    beta_grad: Optional[np.ndarray] = None


def _sqd(x, i, j):
    d = x[i] - x[j]
    return float(d @ d)


def contrastive_pair(emb, i: int, j: int, same_class: bool, alpha: float) -> LossGrad:
    x = as_coords(emb)
    if i == j:
        raise ValueError("contrastive_pair needs two distinct samples")
    grad = np.zeros_like(x)
    diff = x[i] - x[j]
    d = float(diff @ diff)
    if same_class:
        loss = d
        sign = 1.0
    else:
        loss = max(alpha - d, 0.0)
        sign = -1.0 if alpha - d > 0 else 0.0
    grad[i] += sign * 2 * diff
    grad[j] -= sign * 2 * diff
    return LossGrad(loss, grad)


def triplet(emb, a: int, p: int, n: int, alpha: float) -> LossGrad:
    """Anchor-based triplet hinge ``(D_ap - D_an + alpha)_+``."""
    x = as_coords(emb)
    if len({a, p, n}) != 3:
        raise ValueError(f"triplet indices must be distinct, got {(a, p, n)}")
    grad = np.zeros_like(x)
    arg = _sqd(x, a, p) - _sqd(x, a, n) + alpha
    if arg > 0:
        dp = x[a] - x[p]
        dn = x[a] - x[n]
        grad[a] += 2 * dp - 2 * dn
        grad[p] -= 2 * dp
        grad[n] += 2 * dn
    return LossGrad(max(arg, 0.0), grad)


def margin_pair(emb, beta, t: int, x_idx: int, same_class: bool, alpha: float) -> LossGrad:
    """Margin loss for anchor ``t``; ``beta`` is the per-sample boundary array."""
    x = as_coords(emb)
    beta = np.asarray(beta, dtype=np.float64)
    if t == x_idx:
        raise ValueError("margin_pair needs two distinct samples")
    grad = np.zeros_like(x)
    bgrad = np.zeros_like(beta)
    diff = x[t] - x[x_idx]
    d = float(diff @ diff)
    arg = (d - beta[t] + alpha) if same_class else (beta[t] - d + alpha)
    if arg > 0:
        s = 1.0 if same_class else -1.0
        grad[t] += s * 2 * diff
        grad[x_idx] -= s * 2 * diff
        bgrad[t] = -s
    return LossGrad(max(arg, 0.0), grad, bgrad)


def multi_similarity_anchor(emb_normalized, anchor: int, pos_set, neg_set,
                            ms_alpha: float = 2.0, ms_beta: float = 50.0,
                            ms_lambda: float = 1.0) -> LossGrad:
    """Multi-similarity loss of one anchor on unit-norm embeddings.

    The gradient is with respect to the normalised coordinates; use
    :func:`normalize_backward` to carry it to the raw embedding.
    """
    u = as_coords(emb_normalized)
    pos = np.asarray(pos_set, dtype=np.int64).ravel()
    neg = np.asarray(neg_set, dtype=np.int64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("multi-similarity needs non-empty positive and negative sets")
    if np.intersect1d(pos, neg).size:
        raise ValueError("positive and negative sets overlap")
    norms = np.linalg.norm(u, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("multi_similarity_anchor expects L2-normalised embeddings")

    s_pos = u[pos] @ u[anchor]
    s_neg = u[neg] @ u[anchor]
    zp = np.concatenate(([0.0], -ms_alpha * (s_pos - ms_lambda)))
    zn = np.concatenate(([0.0], ms_beta * (s_neg - ms_lambda)))
    loss = logsumexp(zp) / ms_alpha + logsumexp(zn) / ms_beta
    # d loss / d S for each pair
    g_pos = -softmax(zp)[1:]
    g_neg = softmax(zn)[1:]

    grad = np.zeros_like(u)
    grad[anchor] += g_pos @ u[pos] + g_neg @ u[neg]
    np.add.at(grad, pos, g_pos[:, None] * u[anchor])
    np.add.at(grad, neg, g_neg[:, None] * u[anchor])
    return LossGrad(float(loss), grad)


def l2_normalize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalise a zero embedding")
    return x / norms, norms


def normalize_backward(u: np.ndarray, norms: np.ndarray, grad_u: np.ndarray) -> np.ndarray:
    """Chain rule through ``u = x / |x|``."""
    radial = np.sum(u * grad_u, axis=1, keepdims=True)
    return (grad_u - u * radial) / norms


def kept_count(n_tuples: int, trim_fraction: float) -> int:
    # round() guards against (1 - f) * T landing a hair above an integer
    return max(1, math.ceil(round((1.0 - trim_fraction) * n_tuples, 9)))


def _trim_weights(losses: np.ndarray, trim_fraction: float) -> np.ndarray:
    """Per-tuple weight: 1/k for the k lowest-loss tuples, 0 for the rest."""
    t = losses.size
    k = kept_count(t, trim_fraction)
    w = np.zeros(t)
    w[np.argsort(losses, kind="stable")[:k]] = 1.0 / k
    return w


def batch_loss(emb, batch, config: LossConfig, beta=None) -> LossGrad:
    """Mean loss over the tuples of ``batch`` (optionally trimmed).

    Tuple indices refer to rows of ``emb``. For the margin variant ``beta``
    holds one boundary per row and its gradient is returned alongside.
    """
    x = as_coords(emb)
    if batch.size == 0:
        raise ValueError("empty batch: no tuples to score")
    grad = np.zeros_like(x)
    alpha = config.alpha
    v = config.variant

    if v == "triplet":
        if batch.kind != "triplet":
            raise ValueError(f"triplet loss needs triplet tuples, got {batch.kind}")
        a, p, n = batch.triplets.T
        dp = x[a] - x[p]
        dn = x[a] - x[n]
        arg = np.einsum("ij,ij->i", dp, dp) - np.einsum("ij,ij->i", dn, dn) + alpha
        losses = np.maximum(arg, 0.0)
        w = _trim_weights(losses, config.trim_fraction) * (arg > 0)
        np.add.at(grad, a, w[:, None] * (2 * dp - 2 * dn))
        np.add.at(grad, p, -w[:, None] * 2 * dp)
        np.add.at(grad, n, w[:, None] * 2 * dn)
        return LossGrad(float(np.sum(w * losses)), grad)

    if v in ("contrastive", "margin"):
        if batch.kind != "pair":
            raise ValueError(f"{v} loss needs pair tuples, got {batch.kind}")
        i, j = batch.pairs.T
        same = batch.same.astype(bool)
        diff = x[i] - x[j]
        d = np.einsum("ij,ij->i", diff, diff)
        if v == "contrastive":
            arg = np.where(same, d, alpha - d)
            losses = np.where(same, d, np.maximum(arg, 0.0))
            slope = np.where(same, 1.0, -(arg > 0).astype(np.float64))
            bgrad = None
        else:
            if beta is None:
                raise ValueError("margin loss needs per-sample beta")
            beta = np.asarray(beta, dtype=np.float64)
            arg = np.where(same, d - beta[i] + alpha, beta[i] - d + alpha)
            losses = np.maximum(arg, 0.0)
            slope = np.where(same, 1.0, -1.0) * (arg > 0)
        w = _trim_weights(losses, config.trim_fraction)
        coef = (w * slope)[:, None] * 2 * diff
        np.add.at(grad, i, coef)
        np.add.at(grad, j, -coef)
        if v == "margin":
            bgrad = np.zeros_like(beta)
            np.add.at(bgrad, i, -w * slope)
        return LossGrad(float(np.sum(w * losses)), grad, bgrad)

    if v == "multi_similarity":
        if batch.kind != "set":
            raise ValueError(f"multi-similarity loss needs per-anchor sets, got {batch.kind}")
        u, norms = l2_normalize(x)
        parts = [multi_similarity_anchor(u, a, pos, neg, config.ms_alpha,
                                         config.ms_beta, config.ms_lambda)
                 for a, pos, neg in batch.sets]
        losses = np.array([pg.loss for pg in parts])
        w = _trim_weights(losses, config.trim_fraction)
        grad_u = np.zeros_like(u)
        for wk, pg in zip(w, parts):
            if wk:
                grad_u += wk * pg.grad
        return LossGrad(float(np.sum(w * losses)), normalize_backward(u, norms, grad_u))

    raise ValueError(f"unknown loss variant {v!r}")
