from __future__ import annotations

from pathlib import Path
from typing import List, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from tools.reporter_tools import VARIANT_TITLES, ExperimentReport  # noqa: E402

VARIANT_COLORS = {
    "lower_bound": "#9ca3af",
    "vnet_puzzle": "#60a5fa",
    "vnet_sr": "#34d399",
    "darr": "#f87171",
    "upper_bound": "#a78bfa",
}


def dsc_boxplot_figure(report: ExperimentReport):
    """One group of boxes per organ, one box per variant (DSC in %)."""
    organs = report.organ_names
    variants = report.variants
    k, v = len(organs), len(variants)
    width = 0.8 / max(v, 1)

    fig, ax = plt.subplots(figsize=(max(8, 1.4 * k), 4.5))
    for j, variant in enumerate(variants):
        data = [[100 * report.dsc[variant][c][i] for c in report.case_ids] for i in range(k)]
        positions = np.arange(k) + (j - (v - 1) / 2) * width
        bp = ax.boxplot(data, positions=positions, widths=width * 0.9, patch_artist=True,
                        showfliers=True, manage_ticks=False)
        for box in bp["boxes"]:
            box.set_facecolor(VARIANT_COLORS.get(variant, "#d1d5db"))
        bp["boxes"][0].set_label(VARIANT_TITLES.get(variant, variant))

    ax.set_xticks(np.arange(k))
    ax.set_xticklabels(organs, rotation=30, ha="right")
    ax.set_ylabel("DSC (%)")
    ax.set_ylim(0, 100)
    ax.grid(axis="y", alpha=0.3)
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    return fig


def jsd_heatmap_figure(matrix: np.ndarray, organ_names: List[str], row_label: str = "dataset A",
                       col_label: str = "dataset B"):
    fig, ax = plt.subplots(figsize=(1 + 0.7 * len(organ_names), 0.8 + 0.7 * len(organ_names)))
    masked = np.ma.masked_invalid(matrix)
    im = ax.imshow(masked, cmap="viridis_r", vmin=0.0, vmax=float(np.log(2.0)))
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            if not np.isnan(matrix[i, j]):
                ax.text(j, i, f"{matrix[i, j]:.2f}", ha="center", va="center", fontsize=7, color="white")
    ax.set_xticks(range(len(organ_names)))
    ax.set_xticklabels(organ_names, rotation=45, ha="right")
    ax.set_yticks(range(len(organ_names)))
    ax.set_yticklabels(organ_names)
    ax.set_xlabel(col_label)
    ax.set_ylabel(row_label)
    fig.colorbar(im, ax=ax, label="JSD (nats)")
    fig.tight_layout()
    return fig


def slice_preview_figure(volume: np.ndarray, mask: Optional[np.ndarray] = None,
                         prediction: Optional[np.ndarray] = None, z: Optional[int] = None):
    """Axial slice with ground-truth and prediction overlays side by side."""
    z = volume.shape[2] // 2 if z is None else int(z)
    panels = [("image", None)]
    if mask is not None:
        panels.append(("ground truth", mask))
    if prediction is not None:
        panels.append(("prediction", prediction))

    fig, axes = plt.subplots(1, len(panels), figsize=(3.2 * len(panels), 3.2), squeeze=False)
    for ax, (title, labels) in zip(axes[0], panels):
        ax.imshow(volume[:, :, z].T, cmap="gray", origin="lower")
        if labels is not None:
            overlay = np.ma.masked_equal(labels[:, :, z].T, 0)
            ax.imshow(overlay, cmap="tab10", alpha=0.5, origin="lower", interpolation="nearest")
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    return fig


def save_figure(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_dsc_boxplot(report: ExperimentReport, path: Path) -> Path:
    return save_figure(dsc_boxplot_figure(report), path)


def plot_jsd_heatmap(matrix: np.ndarray, organ_names: List[str], path: Path) -> Path:
    return save_figure(jsd_heatmap_figure(matrix, organ_names), path)
