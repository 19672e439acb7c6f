# ==============================================================================
# TESTS - Masquage par grille spatiale
# ==============================================================================

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import random_cloud
from engine.errors import ArgumentError
from engine.geometry import patchify
from engine.grid_mask import grid_coordinates, grid_scores, make_cell_probs, rank_coordinates
from models.schemas import AxisRanks, GridAssignment, GridCellProbs


def test_ranks_sort_by_value():
    centers = np.array([[3.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    assert rank_coordinates(centers).pos[:, 0].tolist() == [2, 0, 1]


def test_equal_coordinates_rank_by_index():
    centers = np.zeros((5, 3))
    for d in range(3):
        assert rank_coordinates(centers).pos[:, d].tolist() == [0, 1, 2, 3, 4]


# valeurs entières : 2x + 7 reste exact en flottant
@given(arrays(np.float64, (12, 3), elements=st.integers(-1000, 1000).map(float)))
def test_ranks_invariant_under_increasing_transform(centers):
    base = rank_coordinates(centers).pos
    np.testing.assert_array_equal(rank_coordinates(2.0 * centers + 7.0).pos, base)


def test_grid_x_blocks_of_four():
    ranks = AxisRanks(pos=np.stack([np.arange(8)] * 3, axis=1))
    grid = grid_coordinates(ranks, (4, 4, 4))
    assert grid.grid_coords[:, 0].tolist() == [0, 0, 0, 0, 1, 1, 1, 1]


def test_grid_type_from_coordinates():
    grid = GridAssignment(grid_coords=[[1, 0, 1]], grid_type=[5], granularity=(4, 4, 4))
    assert grid.grid_type.tolist() == [5]


def test_grid_type_is_a_bijection_over_the_eight_cells():
    # G = 1 : grid_d est la parité du rang ; rangs choisis pour que le patch i tombe dans la cellule i
    pos = np.array([
        [0, 1, 2, 3, 4, 5, 6, 7],
        [0, 2, 1, 3, 4, 6, 5, 7],
        [0, 2, 4, 6, 1, 3, 5, 7],
    ]).T
    grid = grid_coordinates(AxisRanks(pos=pos), (1, 1, 1))
    assert grid.grid_type.tolist() == list(range(8))
    for t, (x, y, z) in enumerate(grid.grid_coords.tolist()):
        assert (x, y, z) == (t & 1, (t >> 1) & 1, (t >> 2) & 1)
    assert len({tuple(c) for c in grid.grid_coords.tolist()}) == 8


def test_grid_pattern_period_eight_for_k64():
    ranks = AxisRanks(pos=np.stack([np.arange(64)] * 3, axis=1))
    grid_x = grid_coordinates(ranks).grid_coords[:, 0]
    expected = np.tile([0, 0, 0, 0, 1, 1, 1, 1], 8)
    np.testing.assert_array_equal(grid_x, expected)


def test_zero_granularity_is_rejected():
    ranks = AxisRanks(pos=np.stack([np.arange(4)] * 3, axis=1))
    with pytest.raises(ArgumentError):
        grid_coordinates(ranks, (4, 0, 4))


# ==============================================================================
# PROBABILITÉS DE CELLULES
# ==============================================================================

def test_checkerboard_probabilities():
    assert make_cell_probs("checkerboard").p.tolist() == [0.9, 0.1, 0.1, 0.9, 0.1, 0.9, 0.9, 0.1]


def test_explicit_probabilities_are_copied():
    assert make_cell_probs("explicit", explicit=[0.5] * 8).p.tolist() == [0.5] * 8


def test_explicit_probabilities_out_of_range():
    with pytest.raises(ArgumentError):
        make_cell_probs("explicit", explicit=[0.5] * 7 + [1.5])


def test_explicit_required_iff_scheme_explicit():
    with pytest.raises(ArgumentError):
        make_cell_probs("explicit")
    with pytest.raises(ArgumentError):
        make_cell_probs("checkerboard", explicit=[0.5] * 8)


def test_uniform_random_is_deterministic():
    first = make_cell_probs("uniform-random", seed=17).p
    np.testing.assert_array_equal(first, make_cell_probs("uniform-random", seed=17).p)
    assert ((first >= 0) & (first <= 1)).all()


# ==============================================================================
# SCORES SPATIAUX
# ==============================================================================

def test_constant_cell_probabilities_give_constant_scores(rng):
    grid = grid_coordinates(rank_coordinates(rng.standard_normal((16, 3))))
    scores = grid_scores(grid, GridCellProbs(p=np.ones(8), scheme="explicit"))
    assert scores.stream == "spatial"
    assert scores.scores.tolist() == [1.0] * 16


def test_checkerboard_grid_type_five():
    grid = GridAssignment(grid_coords=[[1, 0, 1]], grid_type=[5], granularity=(4, 4, 4))
    assert grid_scores(grid, make_cell_probs("checkerboard")).scores.tolist() == [0.9]


def test_explicit_scores_follow_lookup(rng):
    p = np.array([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8])
    grid = grid_coordinates(rank_coordinates(rng.standard_normal((40, 3))), (2, 3, 5))
    scores = grid_scores(grid, make_cell_probs("explicit", explicit=p))
    np.testing.assert_array_equal(scores.scores, p[grid.grid_type])


def direct_grid_scores(centers: np.ndarray, G, p: np.ndarray) -> np.ndarray:
    """Évaluation directe, patch par patch, sans tri"""
    K = centers.shape[0]
    c = centers.tolist()
    out = np.empty(K)
    for i in range(K):
        cell = 0
        for d in range(3):
            pos = sum(1 for j in range(K) if c[j][d] < c[i][d] or (c[j][d] == c[i][d] and j < i))
            cell += ((pos // G[d]) % 2) << d
        out[i] = p[cell]
    return out


def test_grid_pipeline_matches_direct_oracle(rng):
    p = make_cell_probs("checkerboard").p
    for _ in range(200):
        cloud = random_cloud(rng, 1024)
        centers = patchify(cloud, 64, 1).center_coords
        ranks = rank_coordinates(centers)
        for d in range(3):
            assert sorted(ranks.pos[:, d].tolist()) == list(range(64))
        scores = grid_scores(grid_coordinates(ranks, (4, 4, 4)), make_cell_probs("checkerboard")).scores
        np.testing.assert_array_equal(scores, direct_grid_scores(centers, (4, 4, 4), p))
        assert np.unique(scores).size <= 8
