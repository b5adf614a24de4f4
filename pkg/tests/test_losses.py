import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from classcollapse.losses import (LossConfig, batch_loss, contrastive_pair, kept_count, l2_normalize,
                                  margin_pair, multi_similarity_anchor, normalize_backward, triplet)
from classcollapse.mining import Batch
from fd import numeric_grad, rel_err


# -- frozen hand values ------------------------------------------------------

def test_contrastive_examples():
    x = np.array([[0.0, 0.0], [0.0, 0.0]])
    lg = contrastive_pair(x, 0, 1, True, 0.2)
    assert lg.loss == 0 and not lg.grad.any()
    x = np.array([[0.0, 0.0], [1.0, 0.0]])
    assert contrastive_pair(x, 0, 1, False, 0.2).loss == 0
    x = np.array([[0.0, 0.0], [0.1, 0.0]])
    assert contrastive_pair(x, 0, 1, False, 0.2).loss == pytest.approx(0.19, abs=1e-15)
    with pytest.raises(ValueError):
        contrastive_pair(x, 1, 1, True, 0.2)


def test_triplet_examples():
    x = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]])
    assert triplet(x, 0, 1, 2, 0.2).loss == 0
    x[2] = [np.sqrt(0.5), 0.0]
    assert triplet(x, 0, 1, 2, 0.2).loss == pytest.approx(0.7, abs=1e-12)
    x[2] = x[1]
    assert triplet(x, 0, 1, 2, 0.2).loss == 0.2
    with pytest.raises(ValueError):
        triplet(x, 0, 0, 2, 0.2)


def test_margin_examples():
    # boundaries checked with exactly representable values
    beta = np.array([1.5, 1.5])
    x = np.array([[0.0, 0.0], [1.0, 0.0]])  # D = 1 = beta - alpha
    lg = margin_pair(x, beta, 0, 1, True, 0.5)
    assert lg.loss == 0 and not lg.grad.any() and not lg.beta_grad.any()
    x[1] = [2.0, 0.0]  # D = 4, beta + alpha = 4 with alpha = 2.5
    assert margin_pair(x, beta, 0, 1, False, 2.5).loss == 0
    beta = np.array([1.2, 1.2])
    x[1] = [np.sqrt(1.2), 0.0]
    lg = margin_pair(x, beta, 0, 1, True, 0.2)
    assert lg.loss == pytest.approx(0.2, abs=1e-12)
    assert lg.beta_grad[0] == -1 and lg.beta_grad[1] == 0


def test_multi_similarity_examples():
    u = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    lg = multi_similarity_anchor(u, 0, [1], [2], 2.0, 50.0, 1.0)
    assert lg.loss == pytest.approx(math.log(2) / 2 + math.log1p(math.exp(-50)) / 50, rel=1e-14)
    # a negative at S = lambda contributes ln(2)/beta
    lg = multi_similarity_anchor(u, 0, [2], [1], 2.0, 50.0, 1.0)
    assert lg.loss == pytest.approx(math.log1p(math.exp(2.0)) / 2 + math.log(2) / 50, rel=1e-14)


def test_multi_similarity_errors():
    u = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        multi_similarity_anchor(u, 0, [], [2])
    with pytest.raises(ValueError):
        multi_similarity_anchor(u, 0, [1], [1, 2])
    with pytest.raises(ValueError):
        multi_similarity_anchor(2 * u, 0, [1], [2])


def test_kept_count():
    assert kept_count(4, 0.5) == 2
    assert kept_count(10, 0.0) == 10
    assert kept_count(10, 0.95) == 1
    assert kept_count(3, 0.7) == 1   # ceil(0.9)
    assert kept_count(5, 0.4) == 3   # exactly 3, no float spill to 4


def test_trimmed_batch_keeps_lowest():
    x = np.array([[0.0, 0.0], [0.0, 0.0], [5.0, 0.0], [2.0, 0.0], [1.0, 1.0], [0.0, 0.0]])
    b = Batch(members=np.arange(6), kind="triplet",
              triplets=np.array([[0, 1, 2], [1, 0, 2], [0, 1, 5], [0, 3, 4]]))
    per = [triplet(x, *t, 1.0).loss for t in b.triplets]
    assert per == [0.0, 0.0, 1.0, 3.0]
    lg = batch_loss(x, b, LossConfig("triplet", alpha=1.0, trim_fraction=0.5))
    assert lg.loss == 0.0 and not lg.grad.any()
    assert batch_loss(x, b, LossConfig("triplet", alpha=1.0)).loss == 1.0


def test_empty_batch_rejected():
    with pytest.raises(ValueError):
        batch_loss(np.zeros((2, 2)), Batch(np.arange(2), "triplet"), LossConfig())


def test_all_inactive_zero_grad():
    x = np.array([[0.0, 0.0], [0.0, 0.0], [3.0, 0.0]])
    b = Batch(np.arange(3), "triplet", triplets=np.array([[0, 1, 2], [1, 0, 2]]))
    lg = batch_loss(x, b, LossConfig("triplet", alpha=0.2))
    assert lg.loss == 0 and not lg.grad.any()


# -- gradients ---------------------------------------------------------------

def _batch_for(variant, rng, n=8):
    labels = np.repeat([0, 1], n // 2)
    if variant == "triplet":
        t = [(a, p, q) for a in range(n) for p in range(n) for q in range(n)
             if a != p and labels[a] == labels[p] and labels[a] != labels[q]]
        idx = rng.choice(len(t), size=10, replace=False)
        return Batch(np.arange(n), "triplet", triplets=np.array(t)[idx]), labels
    if variant in ("contrastive", "margin"):
        pairs = np.array([(i, j) for i in range(n) for j in range(n) if i != j])
        idx = rng.choice(len(pairs), size=12, replace=False)
        pairs = pairs[idx]
        return Batch(np.arange(n), "pair", pairs=pairs,
                     same=labels[pairs[:, 0]] == labels[pairs[:, 1]]), labels
    sets = []
    for a in range(n):
        pos = np.array([j for j in range(n) if j != a and labels[j] == labels[a]])
        neg = np.array([j for j in range(n) if labels[j] != labels[a]])
        sets.append((a, pos, neg))
    return Batch(np.arange(n), "set", sets=sets), labels


def _kink_free(x, batch, cfg, beta, eps=1e-3):
    if cfg.variant == "triplet":
        a, p, q = batch.triplets.T
        arg = ((x[a] - x[p]) ** 2).sum(1) - ((x[a] - x[q]) ** 2).sum(1) + cfg.alpha
        return np.all(np.abs(arg) > eps)
    if cfg.variant in ("contrastive", "margin"):
        i, j = batch.pairs.T
        d = ((x[i] - x[j]) ** 2).sum(1)
        if cfg.variant == "contrastive":
            arg = np.where(batch.same, 1.0, cfg.alpha - d)
        else:
            arg = np.where(batch.same, d - beta[i] + cfg.alpha, beta[i] - d + cfg.alpha)
        return np.all(np.abs(arg) > eps)
    return True


def gradient_errors(variant, points=100, seed=0):
    """Worst relative error of analytic vs numeric gradients over random kink-free points."""
    rng = np.random.default_rng(seed)
    cfg = LossConfig(variant, alpha=0.3, ms_beta=10.0)
    worst, used = 0.0, 0
    while used < points:
        batch, _ = _batch_for(variant, rng)
        x = rng.normal(scale=0.5, size=(8, 3))
        beta = rng.uniform(0.2, 0.8, size=8)
        if not _kink_free(x, batch, cfg, beta):
            continue
        lg = batch_loss(x, batch, cfg, beta)
        num = numeric_grad(lambda z: batch_loss(z, batch, cfg, beta).loss, x)
        worst = max(worst, rel_err(lg.grad, num))
        if variant == "margin":
            numb = numeric_grad(lambda b: batch_loss(x, batch, cfg, b).loss, beta)
            worst = max(worst, rel_err(lg.beta_grad, numb))
        used += 1
    return worst


@pytest.mark.parametrize("variant", ["contrastive", "triplet", "margin", "multi_similarity"])
def test_batch_gradients(variant):
    assert gradient_errors(variant, points=20, seed=1) <= 1e-5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_normalize_backward_matches_fd(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 3)) + 0.1
    w = rng.normal(size=(4, 3))
    f = lambda z: float(np.sum(w * l2_normalize(z)[0]))
    u, norms = l2_normalize(x)
    assert rel_err(normalize_backward(u, norms, w), numeric_grad(f, x)) <= 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.9))
def test_trimmed_loss_never_exceeds_plain(seed, frac):
    rng = np.random.default_rng(seed)
    batch, _ = _batch_for("triplet", rng)
    x = rng.normal(size=(8, 2))
    plain = batch_loss(x, batch, LossConfig("triplet")).loss
    trimmed = batch_loss(x, batch, LossConfig("triplet", trim_fraction=frac)).loss
    assert trimmed <= plain + 1e-12


def test_loss_config_validation():
    with pytest.raises(ValueError):
        LossConfig("hinge")
    with pytest.raises(ValueError):
        LossConfig(alpha=0)
    with pytest.raises(ValueError):
        LossConfig(trim_fraction=1.0)
