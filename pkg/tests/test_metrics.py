import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.metrics import normalized_mutual_info_score

from classcollapse.metrics import collapse_diagnostics, evaluate, kmeans, nmi, nmi_plus, recall_at_k
from classcollapse.noisy import reference_embeddings


def test_recall_examples():
    x = np.array([[0.0], [1.0], [10.0], [11.0]])
    assert recall_at_k(x, [0, 0, 1, 1], [1])[1] == 1.0
    assert recall_at_k(x, [0, 1, 0, 1], [1])[1] == 0.0
    # all points coincide: ties go to the lower index, so queries 1 and 2 both see sample 0
    same = np.zeros((3, 2))
    assert recall_at_k(same, [0, 1, 1], [1])[1] == 0.0
    assert recall_at_k(same, [0, 1, 1], [2])[2] == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        recall_at_k(x, [0, 0, 1, 1], [4])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_recall_monotone_in_k(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(30, 2))
    labels = rng.integers(0, 3, size=30)
    r = recall_at_k(x, labels, [1, 2, 4, 8, 16])
    vals = [r[k] for k in (1, 2, 4, 8, 16)]
    assert vals == sorted(vals)


def test_recall_blocks_match_single_pass():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(1100, 2))
    labels = rng.integers(0, 4, size=1100)
    r = recall_at_k(x, labels, [1])[1]
    d = ((x[:, None] - x[None]) ** 2).sum(-1)
    np.fill_diagonal(d, np.inf)
    nn = np.argsort(d, axis=1, kind="stable")[:, 0]
    assert r == np.mean(labels[nn] == labels)


def test_nmi_examples():
    assert nmi([0, 0, 1, 1], [1, 1, 0, 0]) == pytest.approx(1.0)
    assert nmi([0, 1, 0, 1], [0, 0, 1, 1]) == pytest.approx(0.0, abs=1e-15)
    assert nmi([0, 0, 0], [0, 0, 0]) == 1.0
    assert nmi([0, 0, 0], [0, 1, 2]) == 0.0
    with pytest.raises(ValueError):
        nmi([0, 1], [0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6), st.integers(2, 6))
def test_nmi_matches_sklearn(seed, ka, kb):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, ka, size=50)
    b = rng.integers(0, kb, size=50)
    ref = normalized_mutual_info_score(a, b, average_method="arithmetic")
    assert nmi(a, b) == pytest.approx(ref, abs=1e-12)


def test_kmeans_edges():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(7, 2))
    assert np.all(kmeans(x, 1, 0) == 0)
    assert np.unique(kmeans(x, 7, 0)).size == 7
    with pytest.raises(ValueError):
        kmeans(x, 8, 0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6))
def test_kmeans_inertia_non_increasing(seed, K):
    x = np.random.default_rng(seed).normal(size=(60, 2))
    _, _, hist = kmeans(x, K, seed, return_history=True)
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))


def test_kmeans_deterministic():
    x = np.random.default_rng(2).normal(size=(50, 3))
    assert np.array_equal(kmeans(x, 4, 9), kmeans(x, 4, 9))


def test_nmi_plus_recovers_modes():
    rng = np.random.default_rng(0)
    centers = np.array([[0.0, 0.0], [20.0, 0.0], [0.0, 20.0], [20.0, 20.0]])
    modes = np.repeat(np.arange(4), 25)
    x = centers[modes] + 0.1 * rng.normal(size=(100, 2))
    labels = modes % 2
    assert nmi_plus(x, labels, 2, 0, target=modes) == pytest.approx(1.0)


def test_collapse_diagnostics_reference_geometry():
    alpha = 0.2
    f1, f2 = reference_embeddings(8, 2, alpha)
    labels = np.repeat([0, 1], 4)
    d1 = collapse_diagnostics(f1, labels)
    assert d1["max_within_sq"] <= 1e-10
    assert d1["collapse_score"] <= 1e-4
    d2 = collapse_diagnostics(f2, labels)
    assert d2["class_diameter"][0] == pytest.approx(np.sqrt(alpha), abs=1e-4)
    with pytest.raises(ValueError):
        collapse_diagnostics(f1, np.zeros(8, int))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 10.0), st.floats(0, 2 * np.pi))
def test_collapse_score_similarity_invariant(seed, scale, theta):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(12, 2))
    labels = np.repeat([0, 1, 2], 4)
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    y = scale * x @ rot.T + rng.normal(size=2)
    a = collapse_diagnostics(x, labels)["collapse_score"]
    b = collapse_diagnostics(y, labels)["collapse_score"]
    assert a == pytest.approx(b, rel=1e-9)


def test_evaluate_report_fields():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(40, 2))
    labels = np.repeat([0, 1], 20)
    rep = evaluate(x, labels, multiplier=2, mode_labels=np.repeat([0, 1, 2, 3], 10))
    d = rep.to_dict()
    assert set(d["recall"]) == {"1", "2", "4", "8"}
    assert sum(d["cluster_hist"]) == 40 and len(d["cluster_hist"]) == 4
    assert 0.0 <= d["mode_nmi_plus"] <= 1.0
    assert np.isnan(evaluate(x, labels).mode_nmi_plus)
