import csv
import dataclasses
import itertools
import math

import pytest
import torch

from conftest import tiny_config_dict
from core.config import ExperimentConfig
from core.errors import ConfigurationError, NonFiniteLossError
from models.networks import encoder_forward, puzzle_logits, sr_forward
from models.params import checksum, load_checkpoint
from runners.trainer import LOSS_CURVE_HEADER, prepare_cases, train
from tools.batch_tools import fixed_permutations, make_puzzle_batch
from tools.loss_tools import joint_loss, puzzle_accuracy
from tools.phantom_tools import make_dataset
from tools.volume_io import Case


@pytest.fixture
def source_cases(tiny_cfg):
    return make_dataset(tiny_cfg.phantom, tiny_cfg.source_shift, n_cases=2, seed=0)


def test_train_writes_curve_and_checkpoint(tmp_path, tiny_cfg, source_cases):
    result = train(source_cases, tiny_cfg, "darr", tmp_path, dtype=torch.float64, show_progress=False)
    assert len(result.curve) == tiny_cfg.train.iterations
    assert all(torch.isfinite(torch.tensor(row["total"])) for row in result.curve)

    with open(tmp_path / "darr_loss_curve.csv", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == LOSS_CURVE_HEADER
    assert len(rows) == 1 + tiny_cfg.train.iterations

    model, meta = load_checkpoint(result.checkpoint_path)
    assert meta["variant"] == "darr"
    assert meta["iteration"] == tiny_cfg.train.iterations
    assert checksum(model) == checksum(result.model)


def test_training_is_seed_reproducible(tiny_cfg, source_cases):
    a = train(source_cases, tiny_cfg, "darr", dtype=torch.float64, show_progress=False)
    b = train(source_cases, tiny_cfg, "darr", dtype=torch.float64, show_progress=False)
    assert checksum(a.model) == checksum(b.model)
    assert [r["total"] for r in a.curve] == [r["total"] for r in b.curve]


def test_variant_without_puzzle_reports_zero_puzzle_term(tiny_cfg, source_cases):
    result = train(source_cases, tiny_cfg, "vnet_sr", dtype=torch.float64, show_progress=False)
    assert result.model.puzzle is None and result.model.sr is not None
    assert all(row["puzzle"] == 0.0 for row in result.curve)


def test_periodic_checkpoints(tmp_path, tiny_cfg, source_cases):
    cfg = dataclasses.replace(tiny_cfg, train=dataclasses.replace(tiny_cfg.train, checkpoint_every=1))
    train(source_cases, cfg, "lower_bound", tmp_path, dtype=torch.float64, show_progress=False)
    assert (tmp_path / "lower_bound_it000001.pt").exists()
    assert (tmp_path / "lower_bound_it000002.pt").exists()
    assert (tmp_path / "lower_bound.pt").exists()


def test_training_needs_masks(tiny_cfg, source_cases):
    unlabeled = [Case(c.case_id, c.volume, None) for c in source_cases]
    with pytest.raises(ConfigurationError):
        train(unlabeled, tiny_cfg, "darr", show_progress=False)
    with pytest.raises(ConfigurationError):
        train([], tiny_cfg, "darr", show_progress=False)


def test_non_finite_loss_dumps_state(tmp_path, monkeypatch, tiny_cfg, source_cases):
    def poisoned(batch, model, weights):
        out = joint_loss(batch, model, weights)
        out.total = out.total * float("nan")
        return out

    monkeypatch.setattr("runners.trainer.joint_loss", poisoned)
    with pytest.raises(NonFiniteLossError) as err:
        train(source_cases, tiny_cfg, "darr", tmp_path, dtype=torch.float64, show_progress=False)
    assert err.value.iteration == 1
    assert (tmp_path / "darr_nonfinite_dump.pt").exists()


def test_empty_phantom_drives_segmentation_loss_towards_zero():
    data = tiny_config_dict()
    data["phantom"]["organ_templates"] = []
    data["phantom"]["relative_offsets"] = []
    data["train"].update(iterations=200, learning_rate=1e-2)
    cfg = ExperimentConfig.from_dict(data)
    cases = make_dataset(cfg.phantom, cfg.source_shift, n_cases=2, seed=0)
    assert all(not case.mask.labels.any() for case in cases)

    result = train(cases, cfg, "darr", dtype=torch.float64, show_progress=False)
    tail = [row["seg"] for row in result.curve[-10:]]
    assert sum(tail) / len(tail) < math.log(cfg.network.num_classes) / 10


def _one_organ_per_cell() -> dict:
    data = tiny_config_dict()
    corners = list(itertools.product((-0.25, 0.25), repeat=3))
    data["phantom"]["organ_templates"] = [
        {"name": f"organ{k}", "half_axes": [2.5, 2.5, 2.5], "intensity": 40.0 + 20.0 * k}
        for k in range(len(corners))
    ]
    data["phantom"]["relative_offsets"] = [list(c) for c in corners]
    data["network"]["num_classes"] = len(corners) + 1
    data["train"].update(iterations=2000, learning_rate=1e-3, log_every=100)
    return data


@pytest.mark.slow
def test_puzzle_head_learns_to_place_distinct_patches():
    cfg = ExperimentConfig.from_dict(_one_organ_per_cell())
    cases = make_dataset(cfg.phantom, cfg.source_shift, n_cases=6, seed=0)
    result = train(cases[:5], cfg, "darr", dtype=torch.float64, show_progress=False)

    held_out = prepare_cases(cases[5:], cfg)[0]
    model = result.model
    accuracies = []
    with torch.no_grad():
        for perm in fixed_permutations(held_out.n, 20, seed=11):
            batch = make_puzzle_batch(held_out, perm, dtype=torch.float64, with_masks=False)
            features = encoder_forward(sr_forward(batch.lowres, model), model).features
            accuracies.append(puzzle_accuracy(puzzle_logits(features, model), batch.labels))
    assert sum(accuracies) / len(accuracies) >= 0.9
