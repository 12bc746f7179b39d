import json
from pathlib import Path

import numpy as np
import pytest
import torch

from core.config import ExperimentConfig
from core.volume import SegmentationMask, Volume
from models.networks import build_model
from tools.batch_tools import prepare_case


def tiny_config_dict() -> dict:
    """A 16^3 two-organ world with a 2x2x2 grid of 8^3 patches; runs in seconds on cpu."""
    return {
        "phantom": {
            "organ_templates": [
                {"name": "left", "half_axes": [2.5, 2.5, 2.5], "intensity": 100.0},
                {"name": "right", "half_axes": [2.5, 2.5, 2.5], "intensity": 200.0},
            ],
            "relative_offsets": [[-0.25, -0.25, -0.25], [0.25, 0.25, 0.25]],
            "jitter": 0.02,
            "texture_sigma": 1.0,
            "base_shape": [16, 16, 16],
        },
        "source_shift": {},
        "target_shift": {
            "axial_spacing_factor": 2,
            "intensity_gain": 1.1,
            "intensity_bias": 5.0,
            "noise_sigma": 2.0,
            "blur_sigma": 0.5,
        },
        "grid": {"W": 2, "H": 2, "L": 2, "patch_shape": [8, 8, 8], "squeeze_factor": 2},
        "network": {
            "encoder_widths": [4, 6, 8],
            "decoder_widths": [6, 4],
            "sr_upscale": 2,
            "sr_width": 4,
            "sr_blocks": 1,
            "puzzle_hidden": 16,
            "num_classes": 3,
        },
        "train": {"iterations": 3, "log_every": 1, "checkpoint_every": 0, "seed": 0},
        "adapt": {"iterations": 2, "learning_rate": 1e-3, "eval_permutations": 2, "seed": 0},
        "intensity_scale": 200.0,
        "precision": "float64",
        "n_source_cases": 3,
        "n_target_cases": 2,
        "seed": 0,
    }


@pytest.fixture
def tiny_cfg() -> ExperimentConfig:
    return ExperimentConfig.from_dict(tiny_config_dict())


@pytest.fixture
def tiny_config_file(tmp_path) -> Path:
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(tiny_config_dict()), encoding="utf-8")
    return path


@pytest.fixture
def tiny_model(tiny_cfg):
    model = build_model(tiny_cfg.network, tiny_cfg.grid, dtype=torch.float64, seed=0)
    model.eval()
    return model


@pytest.fixture
def random_volume():
    rng = np.random.default_rng(7)
    return Volume(data=rng.normal(100.0, 20.0, size=(16, 16, 8)).astype(np.float32), spacing=(1.0, 1.0, 2.0))


@pytest.fixture
def random_mask():
    rng = np.random.default_rng(8)
    return SegmentationMask(labels=rng.integers(0, 3, size=(16, 16, 8)), num_classes=3)


@pytest.fixture
def prepared(tiny_cfg, random_volume, random_mask):
    return prepare_case("case", random_volume, tiny_cfg.grid.to_grid(), tiny_cfg.grid.squeeze_factor,
                        tiny_cfg.intensity_scale, random_mask)
