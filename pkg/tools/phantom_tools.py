from __future__ import annotations

from itertools import combinations
from typing import Iterable, List, Optional, Tuple

import numpy as np
from scipy import ndimage

from core.config import DomainShift, PhantomSpec
from core.errors import ConfigurationError
from core.volume import SegmentationMask, Volume, downsample_mask_axial, squeeze_volume
from tools.volume_io import Case

# Seed streams for the two domains never overlap.
SOURCE_SEED_OFFSET = 0
TARGET_SEED_OFFSET = 1_000_003


def _organ_extent(spec: PhantomSpec, k: int, axis: int) -> Tuple[float, float]:
    """Worst-case [lo, hi] voxel interval organ k can occupy on one axis after jitter."""
    n = spec.base_shape[axis]
    center = n / 2 + spec.relative_offsets[k][axis] * n
    reach = spec.organ_templates[k].half_axes[axis] + spec.jitter * n
    return center - reach, center + reach


def validate_spec(spec: PhantomSpec, shifts: Iterable[DomainShift] = ()) -> None:
    """
    Checks containment, jitter-proof disjointness and intensity separation.
    Raises ConfigurationError naming the offending organ(s).
    """
    if len(spec.relative_offsets) != spec.num_organs:
        raise ConfigurationError(
            f"phantom.relative_offsets: {len(spec.relative_offsets)} offsets for {spec.num_organs} organs"
        )
    if spec.jitter < 0:
        raise ConfigurationError(f"phantom.jitter: must be >= 0, got {spec.jitter}")
    if len(spec.base_shape) != 3 or min(spec.base_shape) < 1:
        raise ConfigurationError(f"phantom.base_shape: must be 3 positive ints, got {spec.base_shape}")

    for k, organ in enumerate(spec.organ_templates):
        if min(organ.half_axes) <= 0:
            raise ConfigurationError(f"phantom: organ {organ.name!r} has non-positive half-axes")
        for axis in range(3):
            lo, hi = _organ_extent(spec, k, axis)
            if lo < 0 or hi > spec.base_shape[axis] - 1:
                raise ConfigurationError(
                    f"phantom: organ {organ.name!r} may leave the volume on axis {axis} "
                    f"(reach [{lo:.1f}, {hi:.1f}] vs extent {spec.base_shape[axis]})"
                )

    # disjoint if some axis separates the jittered bounding boxes
    for i, j in combinations(range(spec.num_organs), 2):
        separated = False
        for axis in range(3):
            lo_i, hi_i = _organ_extent(spec, i, axis)
            lo_j, hi_j = _organ_extent(spec, j, axis)
            if hi_i < lo_j or hi_j < lo_i:
                separated = True
                break
        if not separated:
            raise ConfigurationError(
                f"phantom: organs {spec.organ_templates[i].name!r} and "
                f"{spec.organ_templates[j].name!r} may overlap after jitter"
            )

    intensities = [o.intensity for o in spec.organ_templates]
    min_gap = min((abs(a - b) for a, b in combinations(intensities, 2)), default=float("inf"))
    for shift in shifts:
        shift.validate()
        if min_gap < 2 * shift.noise_sigma:
            raise ConfigurationError(
                f"phantom: organ intensities are {min_gap:g} apart, less than "
                f"2x noise_sigma={shift.noise_sigma:g} of a configured shift"
            )


def organ_centers(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    """K x 3 jittered organ centres in voxel coordinates."""
    shape = np.asarray(spec.base_shape, dtype=np.float64)
    offsets = np.asarray(spec.relative_offsets, dtype=np.float64).reshape(-1, 3)
    jitter = rng.uniform(-spec.jitter, spec.jitter, size=offsets.shape)
    return shape / 2 + (offsets + jitter) * shape


def generate_phantom(spec: PhantomSpec, seed: int) -> Tuple[Volume, SegmentationMask]:
    """
    Draws one phantom: organ k is an ellipsoid at its jittered offset with label k+1.
    Intensities are the organ mean plus Gaussian texture noise.
    """
    validate_spec(spec)
    rng = np.random.default_rng(seed)
    centers = organ_centers(spec, rng)

    X, Y, Z = spec.base_shape
    gx, gy, gz = np.meshgrid(np.arange(X), np.arange(Y), np.arange(Z), indexing="ij")
    labels = np.zeros(spec.base_shape, dtype=np.int64)
    means = np.full(spec.base_shape, spec.background_intensity, dtype=np.float64)

    for k, organ in enumerate(spec.organ_templates):
        cx, cy, cz = centers[k]
        a, b, c = organ.half_axes
        inside = ((gx - cx) / a) ** 2 + ((gy - cy) / b) ** 2 + ((gz - cz) / c) ** 2 <= 1.0
        if not inside.any():
            raise ConfigurationError(f"phantom: organ {organ.name!r} covers no voxel")
        if np.any(labels[inside] != 0):
            raise ConfigurationError(f"phantom: organ {organ.name!r} overlaps an earlier organ")
        labels[inside] = k + 1
        means[inside] = organ.intensity

    data = means + rng.normal(0.0, spec.texture_sigma, size=means.shape) if spec.texture_sigma > 0 else means
    vol = Volume(data=data.astype(np.float32), spacing=spec.spacing)
    mask = SegmentationMask(labels=labels, num_classes=spec.num_organs + 1)
    return vol, mask


def apply_domain_shift(vol: Volume, shift: DomainShift, seed: int) -> Volume:
    """blur -> axial block-average downsample -> gain/bias -> additive noise."""
    shift.validate()
    data = np.asarray(vol.data, dtype=np.float64)
    if shift.blur_sigma > 0:
        data = ndimage.gaussian_filter(data, sigma=shift.blur_sigma, mode="nearest")
    shifted = squeeze_volume(Volume(data=data, spacing=vol.spacing), int(shift.axial_spacing_factor))
    data = shifted.data * shift.intensity_gain + shift.intensity_bias
    if shift.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        data = data + rng.normal(0.0, shift.noise_sigma, size=data.shape)
    return Volume(data=data.astype(np.float32), spacing=shifted.spacing)


def shift_mask(mask: SegmentationMask, shift: DomainShift) -> SegmentationMask:
    """Nearest-neighbour companion of apply_domain_shift for ground-truth masks."""
    return downsample_mask_axial(mask, int(shift.axial_spacing_factor))


def make_case(spec: PhantomSpec, shift: DomainShift, seed: int, domain: str, case_id: str) -> Case:
    vol, mask = generate_phantom(spec, seed)
    return Case(
        case_id=case_id,
        volume=apply_domain_shift(vol, shift, seed),
        mask=shift_mask(mask, shift),
        domain=domain,
        seed=seed,
    )


def make_dataset(spec: PhantomSpec, shift: DomainShift, n_cases: int, seed: int,
                 domain: str = "source", seed_offset: int = SOURCE_SEED_OFFSET) -> List[Case]:
    if n_cases < 1:
        raise ConfigurationError(f"cases: must be >= 1, got {n_cases}")
    validate_spec(spec, [shift])
    base = seed * 10_000 + seed_offset
    return [
        make_case(spec, shift, base + i, domain, f"{domain}_{i:03d}")
        for i in range(n_cases)
    ]


def make_domain_pair(spec: PhantomSpec, source_shift: DomainShift, target_shift: DomainShift,
                     n_cases: int, seed: int,
                     n_target_cases: Optional[int] = None) -> Tuple[List[Case], List[Case]]:
    """Same anatomy prior for both domains; they differ only through their shifts."""
    validate_spec(spec, [source_shift, target_shift])
    source = make_dataset(spec, source_shift, n_cases, seed, "source", SOURCE_SEED_OFFSET)
    target = make_dataset(spec, target_shift, n_target_cases or n_cases, seed, "target", TARGET_SEED_OFFSET)
    return source, target
