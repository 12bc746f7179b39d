from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy.special import rel_entr

from core.errors import DomainError, ShapeError
from core.volume import PatchGrid, SegmentationMask

NORMALIZATION_TOL = 1e-6


@dataclass
class OrganLocationHistogram:
    """
    probs[k] is the distribution of organ k+1's voxels over the W*H*L cells
    (row-major labels); counts keeps the raw voxel counts for pooling.
    """
    probs: np.ndarray   # K x n
    counts: np.ndarray  # K x n
    present: np.ndarray  # K bools

    @property
    def num_organs(self) -> int:
        return self.probs.shape[0]


def dice(pred: SegmentationMask, gt: SegmentationMask, organ: int) -> float:
    """2|P∩G| / (|P|+|G|); an organ absent from both masks scores 1.0."""
    if pred.shape != gt.shape:
        raise ShapeError(f"Prediction shape {pred.shape} != ground truth shape {gt.shape}")
    p = pred.labels == organ
    g = gt.labels == organ
    denom = int(p.sum()) + int(g.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / denom


def dice_per_organ(pred: SegmentationMask, gt: SegmentationMask, num_organs: int) -> List[float]:
    return [dice(pred, gt, k) for k in range(1, num_organs + 1)]


def cell_index_map(shape: Sequence[int], grid: PatchGrid) -> np.ndarray:
    """Row-major cell label of every voxel when `shape` is split into equal W x H x L cells."""
    X, Y, Z = shape
    cx = (np.arange(X) * grid.W) // X
    cy = (np.arange(Y) * grid.H) // Y
    cz = (np.arange(Z) * grid.L) // Z
    return cx[:, None, None] + grid.W * cy[None, :, None] + grid.W * grid.H * cz[None, None, :]


def organ_location_histogram(mask: SegmentationMask, grid: PatchGrid,
                             num_organs: int | None = None) -> OrganLocationHistogram:
    """Counts each organ's voxels per grid cell and normalizes per organ."""
    K = num_organs if num_organs is not None else mask.num_classes - 1
    if any(s < g for s, g in zip(mask.shape, grid.dims)):
        raise ShapeError(f"Mask shape {mask.shape} cannot be split into a {grid.dims} grid")
    cells = cell_index_map(mask.shape, grid).ravel()
    labels = mask.labels.ravel()
    fg = (labels >= 1) & (labels <= K)
    # joint (organ, cell) counting in one bincount
    flat = (labels[fg] - 1) * grid.n + cells[fg]
    counts = np.bincount(flat, minlength=K * grid.n).reshape(K, grid.n).astype(np.float64)
    return _normalize_counts(counts)


def _normalize_counts(counts: np.ndarray) -> OrganLocationHistogram:
    totals = counts.sum(axis=1)
    present = totals > 0
    probs = np.zeros_like(counts)
    probs[present] = counts[present] / totals[present, None]
    return OrganLocationHistogram(probs=probs, counts=counts, present=present)


def pooled_histogram(histograms: Sequence[OrganLocationHistogram]) -> OrganLocationHistogram:
    """Voxel-count weighted aggregate: counts are summed over cases, then normalized."""
    if not histograms:
        raise DomainError("Cannot pool an empty list of histograms")
    return _normalize_counts(np.sum([h.counts for h in histograms], axis=0))


def js_divergence(p: Sequence[float], q: Sequence[float]) -> float:
    """Jensen–Shannon divergence in nats; 0 log 0 := 0."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise DomainError(f"JSD needs two vectors of equal length, got {p.shape} and {q.shape}")
    for name, v in (("p", p), ("q", q)):
        if np.any(v < 0) or abs(v.sum() - 1.0) > NORMALIZATION_TOL:
            raise DomainError(f"JSD input {name} is not a probability vector (sum={v.sum():.8f})")
    m = 0.5 * (p + q)
    jsd = 0.5 * rel_entr(p, m).sum() + 0.5 * rel_entr(q, m).sum()
    return float(min(max(jsd, 0.0), np.log(2.0)))


def jsd_matrix(masks_a: Sequence[SegmentationMask], masks_b: Sequence[SegmentationMask],
               grid: PatchGrid, num_organs: int) -> np.ndarray:
    """
    Entry (i, j) compares organ i's pooled location histogram in dataset A with
    organ j's in dataset B. Organs absent from a whole dataset give NaN.
    """
    hist_a = pooled_histogram([organ_location_histogram(m, grid, num_organs) for m in masks_a])
    hist_b = pooled_histogram([organ_location_histogram(m, grid, num_organs) for m in masks_b])
    out = np.full((num_organs, num_organs), np.nan)
    for i in range(num_organs):
        if not hist_a.present[i]:
            continue
        for j in range(num_organs):
            if hist_b.present[j]:
                out[i, j] = js_divergence(hist_a.probs[i], hist_b.probs[j])
    return out


def diagonal_dominance(matrix: np.ndarray) -> np.ndarray:
    """Per row: True when the diagonal entry is below the mean of the defined off-diagonal entries."""
    K = matrix.shape[0]
    result = np.zeros(K, dtype=bool)
    for i in range(K):
        off = np.delete(matrix[i], i)
        off = off[~np.isnan(off)]
        if np.isnan(matrix[i, i]) or off.size == 0:
            continue
        result[i] = matrix[i, i] < off.mean()
    return result
