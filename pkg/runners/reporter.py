from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from core.volume import PatchGrid, SegmentationMask
from tools.metric_tools import diagonal_dominance, jsd_matrix
from tools.reporter_tools import (
    ExperimentReport,
    build_markdown_report,
    save_report,
    write_dsc_per_case,
    write_jsd_matrix,
    write_variant_means,
)


def run_reporter(report: ExperimentReport, out_dir: str | Path) -> Dict[str, Any]:
    """
    Writes report.json, dsc_per_case.csv, variant_means.csv, report.md
    (plus jsd_matrix.csv when the report carries one).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    print(f"📊 Building report for {len(report.variants)} variant(s), {len(report.case_ids)} case(s)...")

    paths = {
        "report_json": save_report(report, out_dir),
        "dsc_per_case": write_dsc_per_case(report, out_dir / "dsc_per_case.csv"),
        "variant_means": write_variant_means(report, out_dir / "variant_means.csv"),
    }
    if report.jsd is not None:
        paths["jsd_matrix"] = write_jsd_matrix(report.jsd, report.organ_names, out_dir / "jsd_matrix.csv")

    report_md = build_markdown_report(report)
    (out_dir / "report.md").write_text(report_md, encoding="utf-8")
    paths["report_md"] = out_dir / "report.md"

    print("\n📝 REPORT SUMMARY:")
    print("-" * 40)
    for v in report.variants:
        print(f"   {v:<12} {100 * report.variant_mean(v):6.2f}")
    print("-" * 40)

    return {"report_md": report_md, "paths": {k: str(p) for k, p in paths.items()}}


def run_jsd_report(masks_a: Sequence[SegmentationMask], masks_b: Sequence[SegmentationMask], grid: PatchGrid,
                   organ_names: List[str], out_dir: Optional[str | Path] = None) -> Dict[str, Any]:
    """Organ-location divergence between two labelled datasets."""
    K = len(organ_names)
    print(f"🔹 Comparing organ locations of {len(masks_a)} vs {len(masks_b)} case(s) on a {grid.dims} grid...")
    matrix = jsd_matrix(masks_a, masks_b, grid, K)
    dominant = diagonal_dominance(matrix)

    defined = ~np.isnan(np.diag(matrix))
    print(f"✅ Diagonal below row mean for {int(dominant.sum())}/{int(defined.sum())} organ(s)")

    result: Dict[str, Any] = {"matrix": matrix, "diagonal_dominant": dominant.tolist()}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result["path"] = str(write_jsd_matrix(matrix, organ_names, out_dir / "jsd_matrix.csv"))
    return result
