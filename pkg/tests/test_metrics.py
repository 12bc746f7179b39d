import math

import numpy as np
import pytest

from core.errors import DomainError, ShapeError
from core.volume import PatchGrid, SegmentationMask
from tools.metric_tools import (
    cell_index_map,
    diagonal_dominance,
    dice,
    dice_per_organ,
    js_divergence,
    jsd_matrix,
    organ_location_histogram,
    pooled_histogram,
)


def _mask(labels, num_classes=3):
    return SegmentationMask(np.asarray(labels, dtype=np.int64), num_classes)


def test_dice_identical_masks_is_one():
    labels = np.random.default_rng(0).integers(0, 3, size=(5, 5, 5))
    assert dice(_mask(labels), _mask(labels), 1) == 1.0
    assert dice_per_organ(_mask(labels), _mask(labels), 2) == [1.0, 1.0]


def test_dice_disjoint_is_zero_and_absent_is_one():
    a = np.zeros((4, 4, 4), dtype=np.int64)
    b = np.zeros((4, 4, 4), dtype=np.int64)
    a[:2] = 1
    b[2:] = 1
    assert dice(_mask(a), _mask(b), 1) == 0.0
    assert dice(_mask(a), _mask(b), 2) == 1.0


def test_dice_half_overlap():
    a = np.zeros((4, 4, 4), dtype=np.int64)
    b = np.zeros((4, 4, 4), dtype=np.int64)
    a[:2] = 1       # 32 voxels
    b[1:3] = 1      # 32 voxels, 16 shared
    assert dice(_mask(a), _mask(b), 1) == pytest.approx(0.5)


def test_dice_matches_brute_force():
    rng = np.random.default_rng(1)
    p = rng.integers(0, 3, size=(6, 5, 4))
    g = rng.integers(0, 3, size=(6, 5, 4))
    for organ in (1, 2):
        inter = sum(1 for v in zip(p.ravel(), g.ravel()) if v[0] == organ and v[1] == organ)
        expected = 2 * inter / (int((p == organ).sum()) + int((g == organ).sum()))
        assert dice(_mask(p), _mask(g), organ) == pytest.approx(expected)


def test_dice_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        dice(_mask(np.zeros((2, 2, 2))), _mask(np.zeros((2, 2, 3))), 1)


def test_jsd_of_identical_is_zero_and_disjoint_is_ln2():
    p = [0.5, 0.5, 0.0, 0.0]
    q = [0.0, 0.0, 0.25, 0.75]
    assert js_divergence(p, p) == pytest.approx(0.0, abs=1e-12)
    assert js_divergence(p, q) == pytest.approx(math.log(2.0))


def test_jsd_is_symmetric_and_bounded():
    rng = np.random.default_rng(2)
    for _ in range(10):
        p = rng.dirichlet(np.ones(8))
        q = rng.dirichlet(np.ones(8))
        d = js_divergence(p, q)
        assert d == pytest.approx(js_divergence(q, p))
        assert 0.0 <= d <= math.log(2.0)


def test_jsd_matches_direct_formula():
    p = np.array([0.1, 0.2, 0.7])
    q = np.array([0.3, 0.3, 0.4])
    m = (p + q) / 2
    expected = 0.5 * np.sum(p * np.log(p / m)) + 0.5 * np.sum(q * np.log(q / m))
    assert js_divergence(p, q) == pytest.approx(expected)


def test_jsd_rejects_non_distributions():
    with pytest.raises(DomainError):
        js_divergence([0.5, 0.6], [0.5, 0.5])
    with pytest.raises(DomainError):
        js_divergence([0.5, 0.5], [1.0, 0.0, 0.0])


def test_cell_index_map_is_row_major():
    grid = PatchGrid(2, 2, 2, (1, 1, 1))
    cells = cell_index_map((4, 4, 4), grid)
    assert cells[0, 0, 0] == 0
    assert cells[3, 0, 0] == 1
    assert cells[0, 3, 0] == 2
    assert cells[0, 0, 3] == 4
    assert cells[3, 3, 3] == 7


def test_histogram_counts_organ_voxels_per_cell():
    grid = PatchGrid(2, 1, 1, (1, 1, 1))
    labels = np.zeros((4, 2, 2), dtype=np.int64)
    labels[0, :, :] = 1     # 4 voxels in cell 0
    labels[3, :, :] = 1     # 4 voxels in cell 1
    labels[2, 0, 0] = 2     # 1 voxel in cell 1
    h = organ_location_histogram(_mask(labels), grid, num_organs=2)
    np.testing.assert_allclose(h.counts, [[4, 4], [0, 1]])
    np.testing.assert_allclose(h.probs, [[0.5, 0.5], [0.0, 1.0]])
    assert h.present.tolist() == [True, True]


def test_pooled_histogram_weights_by_voxel_count():
    grid = PatchGrid(2, 1, 1, (1, 1, 1))
    big = np.zeros((4, 2, 2), dtype=np.int64)
    big[:2] = 1                 # 8 voxels in cell 0
    small = np.zeros((4, 2, 2), dtype=np.int64)
    small[3, 0, 0] = 1          # 1 voxel in cell 1
    pooled = pooled_histogram([organ_location_histogram(_mask(m), grid, 1) for m in (big, small)])
    np.testing.assert_allclose(pooled.probs[0], [8 / 9, 1 / 9])


def test_jsd_matrix_self_comparison_has_zero_diagonal(tiny_cfg):
    from tools.phantom_tools import make_dataset

    cases = make_dataset(tiny_cfg.phantom, tiny_cfg.source_shift, n_cases=2, seed=0)
    masks = [c.mask for c in cases]
    matrix = jsd_matrix(masks, masks, tiny_cfg.grid.to_grid(), tiny_cfg.phantom.num_organs)
    assert matrix.shape == (2, 2)
    np.testing.assert_allclose(np.diag(matrix), 0.0, atol=1e-12)
    # the two organs live in opposite corners of the grid
    assert matrix[0, 1] == pytest.approx(math.log(2.0))
    assert diagonal_dominance(matrix).tolist() == [True, True]


def test_jsd_matrix_absent_organ_is_nan():
    grid = PatchGrid(2, 1, 1, (1, 1, 1))
    labels = np.zeros((4, 2, 2), dtype=np.int64)
    labels[0] = 1
    matrix = jsd_matrix([_mask(labels)], [_mask(labels)], grid, 2)
    assert matrix[0, 0] == pytest.approx(0.0)
    assert np.isnan(matrix[1, 1]) and np.isnan(matrix[0, 1])
    assert diagonal_dominance(matrix).tolist() == [False, False]


def test_independent_datasets_keep_organs_in_place(tiny_cfg):
    from tools.phantom_tools import make_domain_pair

    source, target = make_domain_pair(tiny_cfg.phantom, tiny_cfg.source_shift, tiny_cfg.target_shift,
                                      n_cases=2, seed=4)
    matrix = jsd_matrix([c.mask for c in source], [c.mask for c in target], tiny_cfg.grid.to_grid(),
                        tiny_cfg.phantom.num_organs)
    assert diagonal_dominance(matrix).all()
