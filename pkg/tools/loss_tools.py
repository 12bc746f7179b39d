from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import torch
import torch.nn.functional as F

from core.config import LossWeights
from core.errors import DomainError, IntegrityError, ShapeError
from models.networks import (
    DARRModel,
    decoder_forward,
    encoder_forward,
    puzzle_logits,
    sr_forward,
)
from tools.batch_tools import PuzzleBatch


@dataclass
class LossBreakdown:
    total: torch.Tensor
    seg: torch.Tensor
    sr: torch.Tensor
    puzzle: torch.Tensor

    def as_floats(self) -> Dict[str, float]:
        return {
            "seg": float(self.seg.detach()),
            "sr": float(self.sr.detach()),
            "puzzle": float(self.puzzle.detach()),
            "total": float(self.total.detach()),
        }

    def is_finite(self) -> bool:
        return bool(torch.isfinite(self.total.detach()).item())


def sr_loss(predicted: torch.Tensor, original: torch.Tensor) -> torch.Tensor:
    """Mean squared voxel difference."""
    if predicted.shape != original.shape:
        raise ShapeError(f"sr_loss: predicted {tuple(predicted.shape)} vs original {tuple(original.shape)}")
    return F.mse_loss(predicted, original, reduction="mean")


def seg_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """
    Mean per-voxel cross entropy.
    logits: (B, C, X, Y, Z); labels: (B, X, Y, Z) class indices.
    """
    if logits.dim() != labels.dim() + 1 or logits.shape[0] != labels.shape[0] \
            or tuple(logits.shape[2:]) != tuple(labels.shape[1:]):
        raise ShapeError(f"seg_loss: logits {tuple(logits.shape)} do not match labels {tuple(labels.shape)}")
    num_classes = logits.shape[1]
    if labels.numel() and (int(labels.min()) < 0 or int(labels.max()) >= num_classes):
        raise DomainError(f"seg_loss: labels must lie in [0, {num_classes}), found max {int(labels.max())}")
    return F.cross_entropy(logits, labels.long(), reduction="mean")


def _check_bijection(labels: torch.Tensor, n: int) -> None:
    values = sorted(int(v) for v in labels.reshape(-1).tolist())
    if values != list(range(n)):
        raise IntegrityError(f"puzzle labels are not a bijection on [0, {n}): {labels.tolist()}")


def puzzle_loss(prob_matrix: torch.Tensor, permuted_labels: torch.Tensor) -> torch.Tensor:
    """-(1/n) sum_a log prob_matrix[a, l_a] on a row-stochastic n x n matrix."""
    n = prob_matrix.shape[0]
    if prob_matrix.dim() != 2 or prob_matrix.shape[1] != n:
        raise ShapeError(f"puzzle_loss: expected an n x n matrix, got {tuple(prob_matrix.shape)}")
    permuted_labels = torch.as_tensor(permuted_labels, dtype=torch.long, device=prob_matrix.device)
    _check_bijection(permuted_labels, n)
    picked = prob_matrix[torch.arange(n, device=prob_matrix.device), permuted_labels]
    return -torch.log(picked).mean()


def puzzle_loss_from_logits(logits: torch.Tensor, permuted_labels: torch.Tensor) -> torch.Tensor:
    """Same value as puzzle_loss(softmax(logits)), computed through log-softmax."""
    n = logits.shape[0]
    if logits.dim() != 2 or logits.shape[1] != n:
        raise ShapeError(f"puzzle_loss: expected n x n logits, got {tuple(logits.shape)}")
    permuted_labels = torch.as_tensor(permuted_labels, dtype=torch.long, device=logits.device)
    _check_bijection(permuted_labels, n)
    return F.cross_entropy(logits, permuted_labels, reduction="mean")


def puzzle_accuracy(logits: torch.Tensor, permuted_labels: torch.Tensor) -> float:
    """Fraction of patches whose most likely cell is their true cell."""
    return float((logits.argmax(dim=1) == permuted_labels).float().mean())


def puzzle_only_loss(batch: PuzzleBatch, model: DARRModel) -> torch.Tensor:
    """squeezed -> SR -> encoder -> puzzle head; reads no mask."""
    features = encoder_forward(sr_forward(batch.lowres, model), model).features
    return puzzle_loss_from_logits(puzzle_logits(features, model), batch.labels)


def joint_loss(batch: PuzzleBatch, model: DARRModel, weights: LossWeights) -> LossBreakdown:
    """
    total = seg + lambda_sr * sr + lambda_p * puzzle over one full puzzle.

    Without an SR module the sr term is still reported (interpolation vs
    original) but carries no gradient; without a puzzle head the puzzle term is 0.
    """
    if batch.masks is None:
        raise ShapeError("joint_loss needs mask patches in the batch")
    upsampled = sr_forward(batch.lowres, model)
    if model.sr is not None:
        sr = sr_loss(upsampled, batch.hires)
    else:
        with torch.no_grad():
            sr = sr_loss(upsampled, batch.hires)

    enc = encoder_forward(upsampled, model)
    seg = seg_loss(decoder_forward(enc, model), batch.masks)

    if model.puzzle is not None:
        puzzle = puzzle_loss_from_logits(puzzle_logits(enc.features, model), batch.labels)
    else:
        puzzle = torch.zeros((), dtype=seg.dtype, device=seg.device)

    total = seg + weights.lambda_sr * sr + weights.lambda_p * puzzle
    return LossBreakdown(total=total, seg=seg, sr=sr, puzzle=puzzle)
