# ==============================================================================
# TESTS - Masquage sémantique : calendriers, graphe, EM, scores
# ==============================================================================

import numpy as np
import pytest

from conftest import random_cloud
from engine.errors import ArgumentError, DataValidationError
from engine.geometry import patchify
from engine.semantic_mask import (
    affinity_graph,
    component_count,
    em_cluster,
    semantic_scores,
    synth_attention,
    threshold_schedule,
)
from models.schemas import AttentionMap, Clustering, PointCloud


def same_partition(first: np.ndarray, second: np.ndarray) -> bool:
    """Vrai si les deux étiquetages définissent la même partition (indice de Rand ajusté = 1)"""
    pairs = set(zip(first.tolist(), second.tolist()))
    return len(pairs) == len(set(first.tolist())) == len(set(second.tolist()))


def noisy_attention(rng, K: int) -> AttentionMap:
    patches = patchify(random_cloud(rng, 4 * K), K, 4)
    return synth_attention(patches, 0.7, seed=int(rng.integers(2**32)), noise=0.5)


# ==============================================================================
# CALENDRIERS
# ==============================================================================

def test_component_count_schedule():
    assert component_count(0, 100) == 40
    assert component_count(100, 100) == 10
    assert component_count(50, 100) == 25


def test_component_count_is_capped_by_patch_count():
    assert component_count(0, 100, 40, 10, K=16) == 16


def test_component_count_preconditions():
    with pytest.raises(ArgumentError):
        component_count(101, 100)
    with pytest.raises(ArgumentError):
        component_count(0, 100, c_max=5, c_min=10)
    with pytest.raises(ArgumentError):
        component_count(0, 0)


def test_threshold_endpoints_are_quantiles(rng):
    attn = noisy_attention(rng, 16)
    off = attn.a[~np.eye(16, dtype=bool)]
    assert threshold_schedule(attn, 0, 100) == pytest.approx(np.median(off), rel=1e-12)
    assert threshold_schedule(attn, 100, 100) == pytest.approx(np.percentile(off, 90), rel=1e-12)


def test_threshold_of_uniform_attention():
    K = 8
    attn = AttentionMap(a=np.full((K, K), 1.0 / K))
    for t in (0, 30, 100):
        assert threshold_schedule(attn, t, 100) == 1.0 / K


def test_threshold_needs_two_patches():
    with pytest.raises(ArgumentError):
        threshold_schedule(AttentionMap(a=[[1.0]]), 0, 10)


# ==============================================================================
# GRAPHE D'AFFINITÉ
# ==============================================================================

def test_affinity_zero_threshold_keeps_positive_weights(rng):
    attn = noisy_attention(rng, 8)
    np.testing.assert_array_equal(affinity_graph(attn, 0.0).w, attn.a)


def test_affinity_threshold_above_max_suppresses_everything(rng):
    attn = noisy_attention(rng, 8)
    assert not affinity_graph(attn, float(attn.a.max())).w.any()


def test_affinity_elementwise():
    a = np.array([[0.6, 0.3, 0.1], [0.1, 0.6, 0.3], [0.3, 0.1, 0.6]])
    graph = affinity_graph(AttentionMap(a=a), 0.25)
    np.testing.assert_array_equal(graph.w, np.where(a > 0.25, a, 0.0))


def test_affinity_is_idempotent(rng):
    graph = affinity_graph(noisy_attention(rng, 12), 0.05)
    np.testing.assert_array_equal(affinity_graph(graph, 0.05).w, graph.w)


def test_affinity_accepts_weights_within_row_sum_tolerance():
    attn = AttentionMap(a=[[1.0000005, 0.0], [0.5, 0.5]])
    graph = affinity_graph(attn, 0.0)
    assert graph.w[0, 0] == 1.0000005
    assert graph.w[0, 1] == 0.0


def test_affinity_negative_threshold():
    with pytest.raises(ArgumentError):
        affinity_graph(AttentionMap(a=[[1.0]]), -0.1)


# ==============================================================================
# EM
# ==============================================================================

def test_single_component_takes_everything(rng):
    clustering = em_cluster(rng.random((20, 5)), 1, seed=3)
    assert clustering.assignment.tolist() == [0] * 20
    assert (clustering.responsibilities == 1.0).all()


def test_more_components_than_rows():
    with pytest.raises(ArgumentError):
        em_cluster(np.zeros((4, 2)), 5)


def test_non_finite_features():
    features = np.ones((4, 2))
    features[2, 1] = np.inf
    with pytest.raises(DataValidationError):
        em_cluster(features, 2)


def test_log_likelihood_never_decreases(rng):
    for seed in range(100):
        attn = noisy_attention(rng, 32)
        C = int(rng.integers(2, 21))
        clustering = em_cluster(attn.a, C, seed=seed)
        steps = np.diff(clustering.log_likelihood_trace)
        assert (steps >= -1e-7).all()
        assert np.abs(clustering.responsibilities.sum(axis=1) - 1.0).max() <= 1e-9
        assert abs(clustering.weights.sum() - 1.0) <= 1e-9
        assert (clustering.variances >= clustering.variance_floor).all()
        np.testing.assert_array_equal(clustering.assignment, np.argmax(clustering.responsibilities, axis=1))


def test_two_separated_blobs_are_recovered():
    recovered = 0
    for seed in range(100):
        blob_rng = np.random.default_rng(seed)
        labels = np.repeat([0, 1], 32)
        features = labels[:, None] * 5.0 + 0.05 * blob_rng.standard_normal((64, 8))
        clustering = em_cluster(features, 2, seed=seed)
        recovered += same_partition(clustering.assignment, labels)
    assert recovered >= 95


def test_stops_after_max_iters(rng):
    clustering = em_cluster(noisy_attention(rng, 32).a, 10, seed=1, max_iters=3, tol=1e-300)
    assert len(clustering.log_likelihood_trace) <= 4


def test_degenerate_rows_keep_a_valid_mixture():
    # cinq composantes pour deux lignes distinctes : des composantes se vident
    features = np.repeat([[0.0, 0.0], [1.0, 1.0]], 5, axis=0)
    clustering = em_cluster(features, 5, seed=2)
    assert clustering.num_components == 5
    assert (np.diff(clustering.log_likelihood_trace) >= -1e-7).all()


def test_warm_start_from_previous_partition(rng):
    features = noisy_attention(rng, 32).a
    previous = em_cluster(features, 12, seed=5)
    shrunk = em_cluster(features, 8, seed=6, init=previous)
    grown = em_cluster(features, 16, seed=6, init=previous)
    assert shrunk.num_components == 8
    assert grown.num_components == 16
    for clustering in (shrunk, grown):
        assert (np.diff(clustering.log_likelihood_trace) >= -1e-7).all()


def test_warm_start_dimension_mismatch(rng):
    previous = em_cluster(rng.random((10, 3)), 2, seed=1)
    with pytest.raises(ArgumentError):
        em_cluster(rng.random((10, 4)), 2, seed=1, init=previous)


def test_em_is_deterministic(rng):
    features = noisy_attention(rng, 24).a
    first = em_cluster(features, 6, seed=77)
    second = em_cluster(features, 6, seed=77)
    np.testing.assert_array_equal(first.responsibilities, second.responsibilities)


# ==============================================================================
# SCORES SÉMANTIQUES
# ==============================================================================

def _clustering(assignment) -> Clustering:
    assignment = np.asarray(assignment)
    C = int(assignment.max()) + 1
    resp = np.eye(C)[assignment]
    return Clustering(
        assignment=assignment,
        responsibilities=resp,
        weights=resp.mean(axis=0),
        means=np.zeros((C, 2)),
        variances=np.ones((C, 2)),
        log_likelihood_trace=[0.0],
    )


def test_single_component_scores_are_equal():
    scores = semantic_scores(_clustering([0] * 6), seed=4).scores
    assert np.unique(scores).size == 1


def test_two_components_two_values():
    assignment = np.array([0, 1, 1, 0, 1])
    scores = semantic_scores(_clustering(assignment), seed=9)
    assert scores.stream == "semantic"
    assert np.unique(scores.scores).size == 2
    for label in (0, 1):
        assert np.unique(scores.scores[assignment == label]).size == 1


def test_semantic_scores_are_deterministic():
    clustering = _clustering([0, 1, 2, 1])
    np.testing.assert_array_equal(semantic_scores(clustering, 12).scores, semantic_scores(clustering, 12).scores)


# ==============================================================================
# ATTENTION SYNTHÉTIQUE
# ==============================================================================

def test_huge_bandwidth_gives_uniform_rows(sphere):
    attn = synth_attention(patchify(sphere, 16, 4), 1e9)
    assert np.abs(attn.a - 1.0 / 16).max() <= 1e-6


def test_small_bandwidth_keeps_mass_inside_clusters(rng):
    left = 0.1 * rng.standard_normal((32, 3))
    right = 0.1 * rng.standard_normal((32, 3)) + [10.0, 0.0, 0.0]
    patches = patchify(PointCloud(points=np.vstack([left, right])), 16, 4)
    attn = synth_attention(patches, 1.0)
    side = patches.center_coords[:, 0] > 5.0
    for i in range(16):
        assert attn.a[i, side == side[i]].sum() > 0.99


def test_rows_sum_to_one_with_noise(rng):
    attn = synth_attention(patchify(random_cloud(rng, 200), 20, 5), 0.5, seed=3, noise=1.0, iteration=7)
    assert np.abs(attn.a.sum(axis=1) - 1.0).max() <= 1e-9
    assert attn.iteration == 7


def test_vanishing_bandwidth_keeps_all_mass_on_the_diagonal(sphere):
    # bandwidth ** 2 sous-déborde vers 0 pour cette largeur
    attn = synth_attention(patchify(sphere, 16, 4), 1e-170)
    np.testing.assert_array_equal(attn.a, np.eye(16))
    noisy = synth_attention(patchify(sphere, 16, 4), 1e-170, seed=2, noise=0.5)
    np.testing.assert_array_equal(noisy.a, np.eye(16))


def test_bandwidth_must_be_positive(sphere):
    with pytest.raises(ArgumentError):
        synth_attention(patchify(sphere, 8, 2), 0.0)
