import itertools
from collections import Counter

import numpy as np
import pytest

from core.errors import DomainError, IntegrityError, ShapeError, SizeError
from core.volume import (
    LabeledPatch,
    PatchGrid,
    Permutation,
    SegmentationMask,
    Volume,
    apply_permutation,
    cell_of_label,
    downsample_mask_axial,
    partition_mask,
    partition_volume,
    reassemble,
    resample_array,
    row_major_label,
    sample_permutation,
    sort_by_label,
    squeeze_axial,
)


@pytest.mark.parametrize("W,H,L", [(1, 1, 1), (2, 3, 4), (3, 3, 3), (5, 2, 1), (4, 4, 4)])
def test_row_major_labels_are_a_bijection(W, H, L):
    labels = [row_major_label(x, y, z, W, H) for z in range(L) for y in range(H) for x in range(W)]
    assert sorted(labels) == list(range(W * H * L))
    for label in labels:
        x, y, z = cell_of_label(label, W, H, L)
        assert row_major_label(x, y, z, W, H) == label


def test_row_major_label_known_values():
    assert row_major_label(0, 0, 0, 3, 3) == 0
    assert row_major_label(1, 0, 0, 3, 3) == 1
    assert row_major_label(0, 1, 0, 3, 3) == 3
    assert row_major_label(0, 0, 1, 3, 3) == 9
    assert row_major_label(2, 2, 2, 3, 3) == 26


def test_label_out_of_range_raises():
    with pytest.raises(DomainError):
        row_major_label(3, 0, 0, 3, 3)
    with pytest.raises(DomainError):
        cell_of_label(27, 3, 3, 3)


def test_partition_then_reassemble_is_identity_on_grid_shaped_volume():
    grid = PatchGrid(2, 3, 2, (4, 4, 4))
    data = np.random.default_rng(0).normal(size=grid.volume_shape)
    patches = partition_volume(Volume(data), grid)
    assert [p.label for p in patches] == list(range(grid.n))
    assert all(p.patch.shape == (4, 4, 4) for p in patches)
    np.testing.assert_array_equal(reassemble(patches, grid).data, data)


def test_partition_cell_contents_follow_row_major_layout():
    grid = PatchGrid(2, 2, 2, (2, 2, 2))
    data = np.zeros(grid.volume_shape)
    # mark cell (x=1, y=0, z=1) -> label 1 + 0 + 4 = 5
    data[2:4, 0:2, 2:4] = 1.0
    patches = partition_volume(Volume(data), grid)
    hot = [p.label for p in patches if p.patch.max() > 0]
    assert hot == [5]


def test_reassemble_ignores_sequence_order():
    grid = PatchGrid(2, 2, 2, (3, 3, 3))
    data = np.arange(np.prod(grid.volume_shape), dtype=np.float64).reshape(grid.volume_shape)
    patches = partition_volume(Volume(data), grid)
    rng = np.random.default_rng(1)
    for _ in range(5):
        perm = sample_permutation(grid.n, rng)
        shuffled = apply_permutation(patches, perm)
        np.testing.assert_array_equal(reassemble(shuffled, grid).data, data)


def test_permutation_inverse_restores_label_order():
    grid = PatchGrid(3, 3, 3, (2, 2, 2))
    patches = partition_volume(Volume(np.zeros(grid.volume_shape)), grid)
    perm = sample_permutation(grid.n, np.random.default_rng(2))
    shuffled = apply_permutation(patches, perm)
    assert [p.label for p in shuffled] == list(perm.order)
    restored = apply_permutation(shuffled, perm.inverse())
    assert [p.label for p in restored] == list(range(grid.n))
    assert [p.label for p in sort_by_label(shuffled)] == list(range(grid.n))


def test_reassemble_rejects_duplicate_or_missing_labels():
    grid = PatchGrid(2, 1, 1, (2, 2, 2))
    a = LabeledPatch(np.zeros((2, 2, 2)), 0)
    with pytest.raises(IntegrityError):
        reassemble([a, LabeledPatch(np.ones((2, 2, 2)), 0)], grid)
    with pytest.raises(IntegrityError):
        reassemble([a], grid)


def test_permutation_must_be_bijection():
    with pytest.raises(IntegrityError):
        Permutation((0, 0, 1))
    with pytest.raises(DomainError):
        sample_permutation(0, np.random.default_rng(0))


def test_partition_resamples_to_grid_shape():
    grid = PatchGrid(2, 2, 2, (4, 4, 8))
    vol = Volume(np.ones((10, 12, 5)), spacing=(1.0, 1.0, 4.0))
    patches = partition_volume(vol, grid)
    assert len(patches) == 8
    assert all(p.patch.shape == (4, 4, 8) for p in patches)
    np.testing.assert_allclose(reassemble(patches, grid).data, 1.0)


def test_partition_too_small_volume_raises():
    grid = PatchGrid(3, 3, 3, (4, 4, 4))
    with pytest.raises(SizeError):
        partition_volume(Volume(np.ones((2, 8, 8))), grid)


def test_partition_mask_keeps_label_set():
    grid = PatchGrid(2, 2, 2, (4, 4, 4))
    labels = np.zeros((6, 6, 3), dtype=np.int64)
    labels[:3, :3, :] = 1
    labels[3:, 3:, :] = 2
    patches = partition_mask(SegmentationMask(labels, 3), grid)
    values = set(np.unique(np.concatenate([p.patch.ravel() for p in patches])).tolist())
    assert values == {0, 1, 2}


def test_squeeze_axial_is_block_mean():
    patch = np.arange(4 * 4 * 8, dtype=np.float64).reshape(4, 4, 8)
    out = squeeze_axial(patch, 4)
    assert out.shape == (4, 4, 2)
    np.testing.assert_allclose(out[..., 0], patch[..., :4].mean(axis=-1))
    np.testing.assert_allclose(out[..., 1], patch[..., 4:].mean(axis=-1))


def test_squeeze_axial_is_linear():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(2, 3, 3, 8))
    np.testing.assert_allclose(squeeze_axial(2.0 * a + 3.0 * b, 4),
                               2.0 * squeeze_axial(a, 4) + 3.0 * squeeze_axial(b, 4))


def test_squeeze_factor_one_is_identity_copy():
    patch = np.random.default_rng(4).normal(size=(2, 2, 3))
    out = squeeze_axial(patch, 1)
    np.testing.assert_array_equal(out, patch)
    assert out is not patch


def test_squeeze_non_divisible_raises():
    with pytest.raises(SizeError):
        squeeze_axial(np.zeros((4, 4, 6)), 4)


def test_downsample_mask_keeps_centre_slices():
    labels = np.zeros((2, 2, 8), dtype=np.int64)
    labels[..., 2] = 1
    labels[..., 6] = 2
    out = downsample_mask_axial(SegmentationMask(labels, 3), 4)
    assert out.shape == (2, 2, 2)
    assert out.labels[0, 0, 0] == 1 and out.labels[0, 0, 1] == 2


def test_resample_array_matches_shape_and_nearest_preserves_labels():
    labels = np.random.default_rng(5).integers(0, 4, size=(7, 9, 3))
    out = resample_array(labels, (16, 16, 12), order=0)
    assert out.shape == (16, 16, 12)
    assert set(np.unique(out)) <= set(np.unique(labels))
    same = resample_array(labels, labels.shape)
    assert same is labels


def test_volume_and_mask_validation():
    with pytest.raises(ShapeError):
        Volume(np.zeros((4, 4)))
    with pytest.raises(DomainError):
        Volume(np.full((2, 2, 2), np.nan))
    with pytest.raises(DomainError):
        Volume(np.zeros((2, 2, 2)), spacing=(1.0, 0.0, 1.0))
    with pytest.raises(DomainError):
        SegmentationMask(np.full((2, 2, 2), 3), num_classes=3)
    with pytest.raises(ShapeError):
        SegmentationMask(np.zeros((2, 2, 2), dtype=np.int64), 2).check_matches(Volume(np.zeros((2, 2, 3))))


def test_sample_permutation_is_uniform_over_orderings():
    rng = np.random.default_rng(0)
    draws = 100_000
    counts = Counter(sample_permutation(3, rng).order for _ in range(draws))
    assert set(counts) == set(itertools.permutations(range(3)))
    for order, count in counts.items():
        assert count / draws == pytest.approx(1 / 6, abs=0.01), order
