# core/volume.py
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage

from core.errors import DomainError, IntegrityError, ShapeError, SizeError

Shape3 = Tuple[int, int, int]
Spacing3 = Tuple[float, float, float]

DEFAULT_PATCH_SHAPE: Shape3 = (64, 64, 64)
DEFAULT_SQUEEZE_FACTOR = 4


@dataclass
class Volume:
    """
    3D scalar grid indexed (x, y, z) with z the axial (slice) axis.
    spacing is the physical voxel size in mm per axis.
    """
    data: np.ndarray
    spacing: Spacing3 = (1.0, 1.0, 1.0)

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ShapeError(f"Volume data must be 3D, got shape {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(not np.isfinite(s) or s <= 0 for s in self.spacing):
            raise DomainError(f"Volume spacing must be 3 positive values, got {self.spacing}")
        if not np.all(np.isfinite(self.data)):
            raise DomainError("Volume intensities must be finite")

    @property
    def shape(self) -> Shape3:
        return tuple(int(s) for s in self.data.shape)


@dataclass
class SegmentationMask:
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 3:
            raise ShapeError(f"Mask labels must be 3D, got shape {self.labels.shape}")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise DomainError(f"Mask labels must be integers, got {self.labels.dtype}")
        if self.num_classes < 1:
            raise DomainError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DomainError(
                f"Mask labels must lie in [0, {self.num_classes}), "
                f"found [{self.labels.min()}, {self.labels.max()}]"
            )

    @property
    def shape(self) -> Shape3:
        return tuple(int(s) for s in self.labels.shape)

    def check_matches(self, vol: Volume) -> None:
        if self.shape != vol.shape:
            raise ShapeError(f"Mask shape {self.shape} does not match volume shape {vol.shape}")


@dataclass(frozen=True)
class PatchGrid:
    W: int = 3
    H: int = 3
    L: int = 3
    patch_shape: Shape3 = DEFAULT_PATCH_SHAPE

    def __post_init__(self) -> None:
        if min(self.W, self.H, self.L) < 1:
            raise DomainError(f"Grid dimensions must be >= 1, got {self.dims}")
        if len(self.patch_shape) != 3 or min(self.patch_shape) < 1:
            raise DomainError(f"patch_shape must be 3 positive ints, got {self.patch_shape}")
        object.__setattr__(self, "patch_shape", tuple(int(p) for p in self.patch_shape))

    @property
    def dims(self) -> Shape3:
        return (self.W, self.H, self.L)

    @property
    def n(self) -> int:
        return self.W * self.H * self.L

    @property
    def volume_shape(self) -> Shape3:
        """Shape every volume is resampled to before partitioning."""
        px, py, pz = self.patch_shape
        return (self.W * px, self.H * py, self.L * pz)

    def cell_slices(self, label: int) -> Tuple[slice, slice, slice]:
        x, y, z = cell_of_label(label, self.W, self.H, self.L)
        px, py, pz = self.patch_shape
        return (
            slice(x * px, (x + 1) * px),
            slice(y * py, (y + 1) * py),
            slice(z * pz, (z + 1) * pz),
        )


@dataclass
class LabeledPatch:
    patch: np.ndarray
    label: int


@dataclass(frozen=True)
class Permutation:
    order: Tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        order = tuple(int(i) for i in self.order)
        if sorted(order) != list(range(len(order))):
            raise IntegrityError(f"Permutation is not a bijection on [0, {len(order)}): {order}")
        object.__setattr__(self, "order", order)

    @property
    def n(self) -> int:
        return len(self.order)

    def inverse(self) -> "Permutation":
        inv = [0] * self.n
        for a, src in enumerate(self.order):
            inv[src] = a
        return Permutation(tuple(inv))


# =========================
# Labels
# =========================
def row_major_label(x: int, y: int, z: int, W: int, H: int) -> int:
    """Cell (x, y, z) -> x + W*y + W*H*z."""
    if not (0 <= x < W) or not (0 <= y < H) or z < 0:
        raise DomainError(f"Cell index ({x}, {y}, {z}) out of range for W={W}, H={H}")
    return x + W * y + W * H * z


def cell_of_label(label: int, W: int, H: int, L: int) -> Shape3:
    if not (0 <= label < W * H * L):
        raise DomainError(f"Label {label} out of range for a {W}x{H}x{L} grid")
    z, rem = divmod(int(label), W * H)
    y, x = divmod(rem, W)
    return (x, y, z)


# =========================
# Resampling
# =========================
def resample_array(arr: np.ndarray, target_shape: Sequence[int], order: int = 1) -> np.ndarray:
    """
    Trilinear (order=1) or nearest-neighbour (order=0) resampling to an exact shape.
    Returns the input unchanged when the shape already matches.
    """
    target_shape = tuple(int(s) for s in target_shape)
    if arr.shape == target_shape:
        return arr
    zoom = [t / s for t, s in zip(target_shape, arr.shape)]
    out = ndimage.zoom(arr, zoom, order=order, mode="nearest", grid_mode=False)
    # zoom rounds the output shape; fall back to pad/crop on the rare off-by-one
    if out.shape != target_shape:
        fixed = np.zeros(target_shape, dtype=out.dtype)
        common = tuple(slice(0, min(a, b)) for a, b in zip(out.shape, target_shape))
        fixed[common] = out[common]
        out = fixed
    return out


def resample_to_grid(vol: Volume, grid: PatchGrid) -> Volume:
    target = grid.volume_shape
    data = resample_array(vol.data.astype(np.float64, copy=False), target, order=1)
    spacing = tuple(sp * s / t for sp, s, t in zip(vol.spacing, vol.shape, target))
    return Volume(data=data, spacing=spacing)


def resample_mask_to_grid(mask: SegmentationMask, grid: PatchGrid) -> SegmentationMask:
    labels = resample_array(mask.labels, grid.volume_shape, order=0)
    return SegmentationMask(labels=labels, num_classes=mask.num_classes)


# =========================
# Partitioning
# =========================
def partition_array(arr: np.ndarray, grid: PatchGrid) -> List[LabeledPatch]:
    """Tiles an array that already has grid.volume_shape into labelled cells."""
    if arr.shape != grid.volume_shape:
        raise ShapeError(f"Array shape {arr.shape} != grid volume shape {grid.volume_shape}")
    return [LabeledPatch(patch=arr[grid.cell_slices(label)].copy(), label=label) for label in range(grid.n)]


def partition_volume(vol: Volume, grid: PatchGrid) -> List[LabeledPatch]:
    """
    Resamples the volume to W*px x H*py x L*pz and tiles it into W*H*L disjoint
    patches returned in ascending row-major label order.
    """
    if any(s < g for s, g in zip(vol.shape, grid.dims)):
        raise SizeError(f"Volume shape {vol.shape} is smaller than one voxel per cell of grid {grid.dims}")
    return partition_array(resample_to_grid(vol, grid).data, grid)


def partition_mask(mask: SegmentationMask, grid: PatchGrid) -> List[LabeledPatch]:
    if any(s < g for s, g in zip(mask.shape, grid.dims)):
        raise SizeError(f"Mask shape {mask.shape} is smaller than one voxel per cell of grid {grid.dims}")
    return partition_array(resample_mask_to_grid(mask, grid).labels, grid)


def reassemble_array(patches: Sequence[LabeledPatch], grid: PatchGrid) -> np.ndarray:
    labels = [int(p.label) for p in patches]
    if sorted(labels) != list(range(grid.n)):
        missing = sorted(set(range(grid.n)) - set(labels))
        raise IntegrityError(
            f"Patch labels must cover [0, {grid.n}) exactly once; "
            f"got {len(labels)} patches, missing {missing}"
        )
    first = np.asarray(patches[0].patch)
    out = np.zeros(grid.volume_shape, dtype=first.dtype)
    for p in patches:
        if tuple(p.patch.shape) != grid.patch_shape:
            raise ShapeError(f"Patch shape {p.patch.shape} != grid patch shape {grid.patch_shape}")
        out[grid.cell_slices(p.label)] = p.patch
    return out


def reassemble(patches: Sequence[LabeledPatch], grid: PatchGrid,
               spacing: Spacing3 = (1.0, 1.0, 1.0)) -> Volume:
    """Places each patch at the cell its label encodes; position in the sequence is ignored."""
    return Volume(data=reassemble_array(patches, grid), spacing=spacing)


# =========================
# Permutations
# =========================
def sample_permutation(n: int, rng: np.random.Generator) -> Permutation:
    if n <= 0:
        raise DomainError(f"Permutation size must be >= 1, got {n}")
    return Permutation(tuple(int(i) for i in rng.permutation(n)))


def apply_permutation(patches: Sequence[LabeledPatch], perm: Permutation) -> List[LabeledPatch]:
    """Output position a holds input element perm.order[a]; labels travel with their patches."""
    if len(patches) != perm.n:
        raise DomainError(f"{len(patches)} patches cannot be reordered by a permutation of size {perm.n}")
    return [patches[src] for src in perm.order]


def sort_by_label(patches: Sequence[LabeledPatch]) -> List[LabeledPatch]:
    return sorted(patches, key=lambda p: p.label)


# =========================
# Axial squeeze
# =========================
def squeeze_axial(patch: np.ndarray, factor: int) -> np.ndarray:
    """Block-averages the last (axial) axis by `factor`."""
    if factor < 1:
        raise DomainError(f"Squeeze factor must be >= 1, got {factor}")
    patch = np.asarray(patch)
    if patch.ndim != 3:
        raise ShapeError(f"squeeze_axial expects a 3D patch, got shape {patch.shape}")
    X, Y, Z = patch.shape
    if Z % factor:
        raise SizeError(f"Axial extent {Z} is not divisible by squeeze factor {factor}")
    if factor == 1:
        return patch.copy()
    return patch.reshape(X, Y, Z // factor, factor).mean(axis=-1)


def squeeze_volume(vol: Volume, factor: int) -> Volume:
    data = squeeze_axial(vol.data, factor)
    sx, sy, sz = vol.spacing
    return Volume(data=data, spacing=(sx, sy, sz * factor))


def downsample_mask_axial(mask: SegmentationMask, factor: int) -> SegmentationMask:
    """Nearest-neighbour axial downsampling: keeps the centre slice of each block."""
    if factor < 1:
        raise DomainError(f"Downsample factor must be >= 1, got {factor}")
    Z = mask.shape[2]
    if Z % factor:
        raise SizeError(f"Axial extent {Z} is not divisible by factor {factor}")
    labels = mask.labels[:, :, factor // 2::factor].copy()
    return SegmentationMask(labels=labels, num_classes=mask.num_classes)


def resample_labels_to_shape(labels: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    return resample_array(labels, shape, order=0)


def intensity_normalize(data: np.ndarray, scale: float, offset: float = 0.0) -> np.ndarray:
    return (np.asarray(data, dtype=np.float64) - offset) / scale
