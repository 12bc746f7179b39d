import copy
import dataclasses

import numpy as np
import pytest
import torch

from core.config import variant_network
from core.errors import ConfigurationError
from core.volume import resample_labels_to_shape
from models.networks import build_model
from models.params import checksum
from runners.adapter import (
    ADAPTED_GROUPS,
    adapt_to_image,
    case_seed,
    infer,
    predict_with_adaptation,
)
from runners.evaluator import evaluate_variants, variant_adapt_config
from tools.batch_tools import prepare_case
from tools.phantom_tools import make_dataset


def test_adaptation_changes_adapted_groups_only(tiny_cfg, tiny_model, random_volume):
    before = {g: checksum(tiny_model, [g]) for g in tiny_model.groups()}
    result = adapt_to_image(tiny_model, random_volume, tiny_cfg.adapt, tiny_cfg.intensity_scale)
    assert result.iterations == 2
    assert len(result.trajectory) == 2
    assert not result.fallback
    assert checksum(tiny_model, ["de"]) == before["de"]
    for g in ADAPTED_GROUPS:
        assert checksum(tiny_model, [g]) != before[g], g


def test_adaptation_restores_decoder_trainability(tiny_cfg, tiny_model, random_volume):
    adapt_to_image(tiny_model, random_volume, tiny_cfg.adapt, tiny_cfg.intensity_scale)
    assert all(p.requires_grad for p in tiny_model.decoder.parameters())
    assert all(p.grad is None for p in tiny_model.parameters())


def test_zero_iterations_leave_model_untouched(tiny_cfg, tiny_model, random_volume):
    before = checksum(tiny_model)
    cfg = dataclasses.replace(tiny_cfg.adapt, iterations=0)
    result = adapt_to_image(tiny_model, random_volume, cfg, tiny_cfg.intensity_scale)
    assert checksum(tiny_model) == before
    assert result.trajectory == []
    assert result.loss_after == result.loss_before


def test_predict_with_adaptation_rolls_back(tiny_cfg, tiny_model, random_volume):
    before = checksum(tiny_model)
    pred = predict_with_adaptation(tiny_model, random_volume, tiny_cfg.adapt, tiny_cfg.intensity_scale,
                                   case_id="case_a")
    assert checksum(tiny_model) == before
    assert pred.mask.shape == random_volume.shape
    assert pred.mask.num_classes == 3
    assert pred.adaptation.loss_before is not None and pred.adaptation.loss_after is not None


@pytest.mark.parametrize("variant", ["darr", "lower_bound"])
def test_zero_iteration_prediction_equals_plain_inference(tiny_cfg, random_volume, variant):
    model = build_model(variant_network(tiny_cfg.network, variant), tiny_cfg.grid, dtype=torch.float64, seed=0)
    cfg = dataclasses.replace(tiny_cfg.adapt, iterations=0)
    pred = predict_with_adaptation(model, random_volume, cfg, tiny_cfg.intensity_scale)
    grid = tiny_cfg.grid
    prepared = prepare_case("target", random_volume, grid.to_grid(), grid.squeeze_factor, tiny_cfg.intensity_scale)
    labels = infer(model, prepared)
    np.testing.assert_array_equal(pred.mask.labels, resample_labels_to_shape(labels, random_volume.shape))


def test_prediction_is_independent_of_case_order(tiny_cfg, tiny_model):
    cases = make_dataset(tiny_cfg.phantom, tiny_cfg.target_shift, n_cases=10, seed=0, domain="target")

    def run(order):
        return {c.case_id: predict_with_adaptation(tiny_model, c.volume, tiny_cfg.adapt,
                                                   tiny_cfg.intensity_scale, case_id=c.case_id)
                for c in order}

    forward = run(cases)
    backward = run(list(reversed(cases)))
    for case_id in forward:
        np.testing.assert_array_equal(forward[case_id].mask.labels, backward[case_id].mask.labels)
        assert forward[case_id].adaptation.trajectory == backward[case_id].adaptation.trajectory


def test_case_seed_depends_on_id_not_position():
    assert case_seed(0, "target_000") == case_seed(0, "target_000")
    assert case_seed(0, "target_000") != case_seed(0, "target_001")
    assert case_seed(0, "target_000") != case_seed(1, "target_000")


def test_model_without_puzzle_cannot_be_adapted(tiny_cfg, random_volume):
    model = build_model(variant_network(tiny_cfg.network, "vnet_sr"), tiny_cfg.grid, dtype=torch.float64)
    with pytest.raises(ConfigurationError):
        adapt_to_image(model, random_volume, tiny_cfg.adapt, tiny_cfg.intensity_scale)
    cfg = variant_adapt_config(model, tiny_cfg.adapt)
    assert cfg.iterations == 0
    pred = predict_with_adaptation(model, random_volume, cfg, tiny_cfg.intensity_scale)
    assert pred.adaptation.loss_before is None


def test_non_finite_loss_falls_back_to_snapshot(tiny_cfg, tiny_model, random_volume):
    with torch.no_grad():
        tiny_model.puzzle.fc[0].weight.fill_(float("nan"))
    before = checksum(tiny_model)
    result = adapt_to_image(tiny_model, random_volume, tiny_cfg.adapt, tiny_cfg.intensity_scale)
    assert result.fallback
    assert result.trajectory == []
    assert "rolled back" in result.message
    assert checksum(tiny_model) == before


def test_evaluate_variants_reports_every_case(tiny_cfg):
    cases = make_dataset(tiny_cfg.phantom, tiny_cfg.target_shift, n_cases=2, seed=0, domain="target")
    models = {
        v: build_model(variant_network(tiny_cfg.network, v), tiny_cfg.grid, dtype=torch.float64, seed=0).eval()
        for v in ("lower_bound", "darr")
    }
    report = evaluate_variants(models, cases, tiny_cfg, ["lower_bound", "darr"], show_progress=False)
    assert set(report.dsc) == {"lower_bound", "darr"}
    for v in report.variants:
        for c in cases:
            scores = report.dsc[v][c.case_id]
            assert len(scores) == 2
            assert all(0.0 <= s <= 1.0 for s in scores)
    assert set(report.adaptation) == {"darr"}
    assert set(report.adaptation["darr"]) == {c.case_id for c in cases}
    with pytest.raises(ConfigurationError):
        evaluate_variants(models, cases, tiny_cfg, ["vnet_sr"], show_progress=False)


def test_ten_consecutive_predictions_leave_the_model_untouched(tiny_cfg, tiny_model):
    cases = make_dataset(tiny_cfg.phantom, tiny_cfg.target_shift, n_cases=10, seed=1, domain="target")
    full = checksum(tiny_model)
    for case in cases:
        predict_with_adaptation(tiny_model, case.volume, tiny_cfg.adapt, tiny_cfg.intensity_scale,
                                case_id=case.case_id)
        assert checksum(tiny_model) == full

    # in-place adaptation keeps changing sr, en and p but never the decoder
    adapted = copy.deepcopy(tiny_model)
    decoder = checksum(adapted, ["de"])
    for case in cases:
        result = adapt_to_image(adapted, case.volume, tiny_cfg.adapt, tiny_cfg.intensity_scale,
                                case_id=case.case_id)
        assert len(result.trajectory) == tiny_cfg.adapt.iterations
        assert checksum(adapted, ["de"]) == decoder
    assert checksum(adapted, ["en"]) != checksum(tiny_model, ["en"])
