"""
Test-time jigsaw adaptation.

For every target image the model is snapshotted, finetuned on the puzzle
loss alone (decoder frozen), used for one frozen forward pass through the
segmentation branch, and rolled back to the snapshot.
"""
import zlib
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
import torch

from core.config import AdaptConfig
from core.errors import ConfigurationError
from core.volume import (
    LabeledPatch,
    SegmentationMask,
    Volume,
    reassemble_array,
    resample_labels_to_shape,
)
from models.networks import DARRModel
from models.params import restore, snapshot
from tools.batch_tools import (
    PreparedCase,
    fixed_permutations,
    label_order_batch,
    make_puzzle_batch,
    prepare_case,
    sample_puzzle_batch,
)
from tools.loss_tools import puzzle_only_loss

ADAPTED_GROUPS = ("sr", "en", "p")


@dataclass
class AdaptationResult:
    iterations: int
    trajectory: List[float] = field(default_factory=list)
    loss_before: Optional[float] = None
    loss_after: Optional[float] = None
    fallback: bool = False
    message: str = ""

    @property
    def improved(self) -> Optional[bool]:
        if self.loss_before is None or self.loss_after is None:
            return None
        return self.loss_after < self.loss_before

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "trajectory": list(self.trajectory),
            "loss_before": self.loss_before,
            "loss_after": self.loss_after,
            "fallback": self.fallback,
            "message": self.message,
        }


@dataclass
class PredictionResult:
    case_id: str
    mask: SegmentationMask
    adaptation: AdaptationResult


def case_seed(base_seed: int, case_id: str) -> int:
    """Per-case seed that does not depend on processing order."""
    return (int(base_seed) * 1_000_003 + zlib.crc32(case_id.encode("utf-8"))) % (2 ** 32)


def _prepare(model: DARRModel, case_id: str, target: Volume, intensity_scale: float) -> PreparedCase:
    grid = model.grid_cfg
    return prepare_case(case_id, target, grid.to_grid(), grid.squeeze_factor, intensity_scale)


def _eval_puzzle_loss(model: DARRModel, prepared: PreparedCase, cfg: AdaptConfig, seed: int) -> float:
    losses = []
    with torch.no_grad():
        for perm in fixed_permutations(prepared.n, cfg.eval_permutations, seed):
            batch = make_puzzle_batch(prepared, perm, model.dtype, model.device, with_masks=False)
            losses.append(float(puzzle_only_loss(batch, model)))
    return float(np.mean(losses))


def _adapt_prepared(model: DARRModel, prepared: PreparedCase, cfg: AdaptConfig, seed: int) -> AdaptationResult:
    cfg.validate()
    result = AdaptationResult(iterations=cfg.iterations)
    if model.puzzle is None:
        if cfg.iterations > 0:
            raise ConfigurationError(
                "adapt.iterations: a model without the puzzle module cannot be adapted; set it to 0"
            )
        return result

    eval_seed = seed ^ 0x5EED
    result.loss_before = _eval_puzzle_loss(model, prepared, cfg, eval_seed)
    if cfg.iterations == 0:
        result.loss_after = result.loss_before
        return result

    snap = snapshot(model)
    params = model.group_parameters(ADAPTED_GROUPS)
    decoder_flags = [p.requires_grad for p in model.decoder.parameters()]
    for p in model.decoder.parameters():
        p.requires_grad_(False)
    optimizer = torch.optim.SGD(params, lr=cfg.learning_rate)
    rng = np.random.default_rng(seed)

    try:
        for it in range(1, cfg.iterations + 1):
            optimizer.zero_grad(set_to_none=True)
            loss = sum(
                puzzle_only_loss(sample_puzzle_batch(prepared, rng, model.dtype, model.device, with_masks=False),
                                 model)
                for _ in range(cfg.permutations_per_iter)
            ) / cfg.permutations_per_iter
            if not torch.isfinite(loss.detach()):
                restore(model, snap)
                result.fallback = True
                result.message = f"non-finite puzzle loss at adaptation iteration {it}; rolled back"
                print(f"⚠️  {prepared.case_id}: {result.message}")
                return result
            loss.backward()
            optimizer.step()
            result.trajectory.append(float(loss.detach()))
    finally:
        model.zero_grad(set_to_none=True)
        for p, flag in zip(model.decoder.parameters(), decoder_flags):
            p.requires_grad_(flag)

    result.loss_after = _eval_puzzle_loss(model, prepared, cfg, eval_seed)
    return result


def adapt_to_image(model: DARRModel, target: Volume, cfg: AdaptConfig, intensity_scale: float = 250.0,
                   seed: Optional[int] = None, case_id: str = "target") -> AdaptationResult:
    """
    Finetunes theta_sr, theta_en and theta_p of `model` in place on the puzzle
    loss of one unlabeled target volume. theta_de is never touched.
    On a non-finite loss the model is restored and the result flagged.
    """
    prepared = _prepare(model, case_id, target, intensity_scale)
    return _adapt_prepared(model, prepared, cfg, case_seed(cfg.seed, case_id) if seed is None else seed)


def infer(model: DARRModel, prepared: PreparedCase, chunk: int = 4) -> np.ndarray:
    """Frozen forward pass; argmax labels at grid resolution, patches placed by label."""
    batch = label_order_batch(prepared, model.dtype, model.device)
    outputs = []
    with torch.no_grad():
        for start in range(0, batch.n, chunk):
            logits = model.segment(batch.lowres[start:start + chunk])
            outputs.append(logits.argmax(dim=1).cpu().numpy())
    labels = np.concatenate(outputs, axis=0)
    patches = [LabeledPatch(patch=labels[i], label=int(batch.labels[i])) for i in range(batch.n)]
    return reassemble_array(patches, model.grid_cfg.to_grid())


def predict_with_adaptation(model: DARRModel, target: Volume, cfg: AdaptConfig, intensity_scale: float = 250.0,
                            case_id: str = "target") -> PredictionResult:
    """
    snapshot -> adapt -> frozen segmentation -> restore. The model leaves this
    call bitwise identical to how it entered, whatever happens inside.
    The mask is returned at the target's native shape.
    """
    prepared = _prepare(model, case_id, target, intensity_scale)
    snap = snapshot(model)
    try:
        adaptation = _adapt_prepared(model, prepared, cfg, case_seed(cfg.seed, case_id))
        labels = infer(model, prepared)
    finally:
        restore(model, snap)

    native = resample_labels_to_shape(labels, prepared.native_shape).astype(np.int64)
    mask = SegmentationMask(labels=native, num_classes=model.cfg.num_classes)
    return PredictionResult(case_id=case_id, mask=mask, adaptation=adaptation)
