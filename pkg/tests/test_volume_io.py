import json

import numpy as np
import pytest

from core.errors import ConfigurationError, IntegrityError
from core.volume import SegmentationMask, Volume
from tools.volume_io import (
    Case,
    import_nifti_mask,
    import_nifti_volume,
    load_dataset,
    read_mask,
    read_volume,
    write_dataset,
    write_mask,
    write_volume,
)


def test_raw_volume_is_x_fastest_little_endian(tmp_path):
    data = np.arange(2 * 3 * 4, dtype=np.float32).reshape(2, 3, 4)
    path = write_volume(Volume(data, spacing=(1.0, 2.0, 3.0)), tmp_path / "v.raw")
    flat = np.frombuffer(path.read_bytes(), dtype="<f4")
    # x varies fastest on disk
    assert flat[:2].tolist() == [data[0, 0, 0], data[1, 0, 0]]
    sidecar = json.loads(path.with_suffix(".json").read_text())
    assert sidecar["shape"] == [2, 3, 4]
    assert sidecar["spacing"] == [1.0, 2.0, 3.0]
    back = read_volume(path)
    np.testing.assert_array_equal(back.data, data)
    assert back.spacing == (1.0, 2.0, 3.0)


def test_mask_keeps_class_count(tmp_path):
    labels = np.random.default_rng(0).integers(0, 4, size=(3, 3, 2))
    back = read_mask(write_mask(SegmentationMask(labels, 9), tmp_path / "m.raw"))
    np.testing.assert_array_equal(back.labels, labels)
    assert back.num_classes == 9


def test_truncated_raw_file_is_rejected(tmp_path):
    path = write_volume(Volume(np.zeros((4, 4, 4), dtype=np.float32)), tmp_path / "v.raw")
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(IntegrityError):
        read_volume(path)


def test_kind_mismatch_is_rejected(tmp_path):
    path = write_volume(Volume(np.zeros((2, 2, 2), dtype=np.float32)), tmp_path / "v.raw")
    with pytest.raises(IntegrityError):
        read_mask(path)


def test_dataset_manifest_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    cases = [
        Case("a", Volume(rng.normal(size=(4, 4, 2)).astype(np.float32)),
             SegmentationMask(rng.integers(0, 2, size=(4, 4, 2)), 2), domain="target", seed=5),
        Case("b", Volume(rng.normal(size=(4, 4, 2)).astype(np.float32)), None, domain="target", seed=6),
    ]
    write_dataset(cases, tmp_path, "target")
    loaded = load_dataset(tmp_path)
    assert [c.case_id for c in loaded] == ["a", "b"]
    assert loaded[0].seed == 5 and loaded[0].domain == "target"
    assert loaded[1].mask is None
    np.testing.assert_array_equal(loaded[0].volume.data, cases[0].volume.data)
    assert load_dataset(tmp_path, with_masks=False)[0].mask is None


def test_missing_manifest_is_a_configuration_error(tmp_path):
    with pytest.raises(ConfigurationError):
        load_dataset(tmp_path / "nowhere")


def test_nifti_import(tmp_path):
    nib = pytest.importorskip("nibabel")
    data = np.random.default_rng(2).normal(size=(5, 4, 3)).astype(np.float32)
    affine = np.diag([0.8, 0.8, 2.5, 1.0])
    nib.save(nib.Nifti1Image(data, affine), str(tmp_path / "ct.nii.gz"))
    labels = np.zeros((5, 4, 3), dtype=np.int16)
    labels[1:3, 1:3, 1] = 2
    nib.save(nib.Nifti1Image(labels, affine), str(tmp_path / "seg.nii.gz"))

    vol = import_nifti_volume(tmp_path / "ct.nii.gz")
    assert vol.shape == (5, 4, 3)
    np.testing.assert_allclose(vol.spacing, (0.8, 0.8, 2.5), rtol=1e-6)
    np.testing.assert_allclose(vol.data, data, rtol=1e-6)

    mask = import_nifti_mask(tmp_path / "seg.nii.gz")
    assert mask.num_classes == 3
    assert int((mask.labels == 2).sum()) == 4
