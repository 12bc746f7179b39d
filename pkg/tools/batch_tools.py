from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import torch

from core.errors import DomainError, ShapeError
from core.volume import (
    LabeledPatch,
    PatchGrid,
    Permutation,
    SegmentationMask,
    Volume,
    apply_permutation,
    intensity_normalize,
    partition_mask,
    partition_volume,
    sample_permutation,
    squeeze_axial,
)


@dataclass
class PreparedCase:
    """
    One case resampled to the grid and tiled, patches in label order.
    `hires` holds normalized intensities, `lowres` their axial squeeze.
    """
    case_id: str
    hires: np.ndarray               # n x px x py x pz
    lowres: np.ndarray              # n x px x py x pz/f
    masks: Optional[np.ndarray]     # n x px x py x pz, int64
    native_shape: tuple
    spacing: tuple

    @property
    def n(self) -> int:
        return self.hires.shape[0]


@dataclass
class PuzzleBatch:
    """A full puzzle: position a holds the patch whose cell label is labels[a]."""
    lowres: torch.Tensor             # n x 1 x px x py x pz/f
    hires: torch.Tensor              # n x 1 x px x py x pz
    labels: torch.Tensor             # n, long
    masks: Optional[torch.Tensor]    # n x px x py x pz, long

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])


def _stack(patches: Sequence[LabeledPatch]) -> np.ndarray:
    return np.stack([p.patch for p in patches], axis=0)


def prepare_case(case_id: str, volume: Volume, grid: PatchGrid, squeeze_factor: int,
                 intensity_scale: float, mask: Optional[SegmentationMask] = None) -> PreparedCase:
    """Resample, partition and squeeze once; training and adaptation then only reorder."""
    if mask is not None:
        mask.check_matches(volume)
    normalized = Volume(data=intensity_normalize(volume.data, intensity_scale), spacing=volume.spacing)
    hires = _stack(partition_volume(normalized, grid))
    lowres = np.stack([squeeze_axial(p, squeeze_factor) for p in hires], axis=0)
    masks = _stack(partition_mask(mask, grid)).astype(np.int64) if mask is not None else None
    return PreparedCase(
        case_id=case_id,
        hires=hires,
        lowres=lowres,
        masks=masks,
        native_shape=volume.shape,
        spacing=volume.spacing,
    )


def _labeled(stack: np.ndarray) -> List[LabeledPatch]:
    # prepared stacks are in label order
    return [LabeledPatch(patch=p, label=i) for i, p in enumerate(stack)]


def make_puzzle_batch(prepared: PreparedCase, perm: Permutation, dtype: torch.dtype = torch.float32,
                      device: Optional[torch.device | str] = None, with_masks: bool = True) -> PuzzleBatch:
    if perm.n != prepared.n:
        raise DomainError(f"Permutation of size {perm.n} cannot shuffle {prepared.n} patches")
    shuffled = apply_permutation(_labeled(prepared.hires), perm)
    labels = [p.label for p in shuffled]

    hires = torch.as_tensor(_stack(shuffled), dtype=dtype, device=device).unsqueeze(1)
    lowres = torch.as_tensor(_stack(apply_permutation(_labeled(prepared.lowres), perm)),
                             dtype=dtype, device=device).unsqueeze(1)
    masks = None
    if with_masks:
        if prepared.masks is None:
            raise ShapeError(f"Case {prepared.case_id} has no mask patches")
        masks = torch.as_tensor(_stack(apply_permutation(_labeled(prepared.masks), perm)),
                                dtype=torch.long, device=device)
    return PuzzleBatch(
        lowres=lowres,
        hires=hires,
        labels=torch.as_tensor(labels, dtype=torch.long, device=device),
        masks=masks,
    )


def sample_puzzle_batch(prepared: PreparedCase, rng: np.random.Generator, dtype: torch.dtype = torch.float32,
                        device: Optional[torch.device | str] = None, with_masks: bool = True) -> PuzzleBatch:
    return make_puzzle_batch(prepared, sample_permutation(prepared.n, rng), dtype, device, with_masks)


def fixed_permutations(n: int, count: int, seed: int) -> List[Permutation]:
    """Seeded evaluation permutations; the same seed gives the same list."""
    rng = np.random.default_rng(seed)
    return [sample_permutation(n, rng) for _ in range(count)]


def label_order_batch(prepared: PreparedCase, dtype: torch.dtype = torch.float32,
                      device: Optional[torch.device | str] = None) -> PuzzleBatch:
    """Identity permutation; used for inference where patch order does not matter."""
    return make_puzzle_batch(prepared, Permutation(tuple(range(prepared.n))), dtype, device, with_masks=False)
