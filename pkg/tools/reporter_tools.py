from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from core.config import load_json, save_json

VARIANT_TITLES = {
    "lower_bound": "Lower Bound",
    "vnet_puzzle": "VNET-Puzzle",
    "vnet_sr": "VNET-SR",
    "darr": "DARR",
    "upper_bound": "Upper Bound",
}


def now_iso() -> str:
    """Return current UTC time in ISO format."""
    return datetime.now(timezone.utc).isoformat(timespec="seconds").replace("+00:00", "Z")


def _nan_to_none(x: float) -> Optional[float]:
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else float(x)


@dataclass
class ExperimentReport:
    """
    dsc[variant][case_id] is the per-organ DSC list (organ order = organ_names).
    Means are always recomputed from these entries.
    """
    organ_names: List[str]
    variants: List[str]
    case_ids: List[str]
    dsc: Dict[str, Dict[str, List[float]]] = field(default_factory=dict)
    adaptation: Dict[str, Dict[str, Dict[str, Any]]] = field(default_factory=dict)
    jsd: Optional[np.ndarray] = None
    config: Dict[str, Any] = field(default_factory=dict)
    created: str = field(default_factory=now_iso)

    def per_organ_means(self, variant: str) -> List[float]:
        rows = np.asarray([self.dsc[variant][c] for c in self.case_ids], dtype=np.float64)
        return rows.mean(axis=0).tolist()

    def variant_mean(self, variant: str) -> float:
        return float(np.mean(self.per_organ_means(variant)))

    def case_mean(self, variant: str, case_id: str) -> float:
        return float(np.mean(self.dsc[variant][case_id]))

    def fallbacks(self, variant: str) -> List[str]:
        return [c for c, a in self.adaptation.get(variant, {}).items() if a.get("fallback")]

    def puzzle_improvements(self, variant: str) -> int:
        return sum(1 for a in self.adaptation.get(variant, {}).values()
                   if a.get("loss_before") is not None and a.get("loss_after") is not None
                   and a["loss_after"] < a["loss_before"])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "created": self.created,
            "organ_names": self.organ_names,
            "variants": self.variants,
            "case_ids": self.case_ids,
            "dsc": self.dsc,
            "means": {v: {"per_organ": self.per_organ_means(v), "mean": self.variant_mean(v)}
                      for v in self.variants},
            "adaptation": self.adaptation,
            "jsd": None if self.jsd is None else [[_nan_to_none(x) for x in row] for row in self.jsd.tolist()],
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentReport":
        jsd = data.get("jsd")
        return cls(
            organ_names=list(data["organ_names"]),
            variants=list(data["variants"]),
            case_ids=list(data["case_ids"]),
            dsc={v: {c: list(map(float, d)) for c, d in cases.items()} for v, cases in data["dsc"].items()},
            adaptation=data.get("adaptation", {}),
            jsd=None if jsd is None else np.asarray([[np.nan if x is None else x for x in row] for row in jsd]),
            config=data.get("config", {}),
            created=data.get("created", now_iso()),
        )


# =========================
# Delimited tables
# =========================
def write_dsc_per_case(report: ExperimentReport, path: Path) -> Path:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["variant", "case_id", *report.organ_names, "mean"])
        for v in report.variants:
            for c in report.case_ids:
                scores = report.dsc[v][c]
                w.writerow([v, c, *[f"{s:.6f}" for s in scores], f"{np.mean(scores):.6f}"])
    return path


def write_variant_means(report: ExperimentReport, path: Path) -> Path:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["variant", *report.organ_names, "mean", "fallbacks"])
        for v in report.variants:
            w.writerow([v, *[f"{s:.6f}" for s in report.per_organ_means(v)],
                        f"{report.variant_mean(v):.6f}", len(report.fallbacks(v))])
    return path


def write_jsd_matrix(matrix: np.ndarray, organ_names: List[str], path: Path) -> Path:
    """Rows: organs of dataset A, columns: organs of dataset B; undefined entries left empty."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["organ", *organ_names])
        for name, row in zip(organ_names, matrix):
            w.writerow([name, *["" if np.isnan(x) else f"{x:.6f}" for x in row]])
    return path


def read_jsd_matrix(path: Path) -> tuple[np.ndarray, List[str]]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    names = rows[0][1:]
    matrix = np.asarray([[np.nan if x == "" else float(x) for x in r[1:]] for r in rows[1:]], dtype=np.float64)
    return matrix, names


def save_report(report: ExperimentReport, out_dir: Path) -> Path:
    save_json(report.to_dict(), out_dir / "report.json")
    return out_dir / "report.json"


def load_report(path: Path) -> ExperimentReport:
    return ExperimentReport.from_dict(load_json(path))


# =========================
# Markdown
# =========================
def _pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def _bold_if(text: str, cond: bool) -> str:
    return f"**{text}**" if cond else text


def _column_best(rows: List[List[float]]) -> List[str]:
    """Formatted best value per column; ties share the bold."""
    best = []
    for col in zip(*rows):
        finite = [x for x in col if not np.isnan(x)]
        best.append(_pct(max(finite)) if finite else "")
    return best


def build_markdown_report(report: ExperimentReport) -> str:
    """Human-readable experiment summary: variant table, per-organ DSC, adaptation, JSD."""
    lines: List[str] = []

    lines.append("# DARR Experiment Report")
    lines.append(f"**Created:** `{report.created}`")
    lines.append("")

    lines.append("## Summary")
    lines.append(
        f"- **{len(report.case_ids)} target case(s)** evaluated with "
        f"**{len(report.variants)} variant(s)**.\n"
        f"- **{len(report.organ_names)} organs**: {', '.join(report.organ_names)}.\n"
    )
    if "lower_bound" in report.variants and "darr" in report.variants:
        gain = report.variant_mean("darr") - report.variant_mean("lower_bound")
        lines.append(f"- DARR vs lower bound: **{gain * 100:+.2f} DSC points**.")
        lines.append("")

    lines.append("## Mean DSC (%)")
    lines.append("| Variant | " + " | ".join(report.organ_names) + " | Mean |")
    lines.append("|---" * (len(report.organ_names) + 2) + "|")
    table = {v: report.per_organ_means(v) + [report.variant_mean(v)] for v in report.variants}
    best = _column_best(list(table.values()))
    for v, values in table.items():
        cells = " | ".join(_bold_if(_pct(x), _pct(x) == b) for x, b in zip(values, best))
        lines.append(f"| {VARIANT_TITLES.get(v, v)} | {cells} |")
    lines.append("")

    adapted = [v for v in report.variants if report.adaptation.get(v)]
    if adapted:
        lines.append("## Test-time adaptation")
        for v in adapted:
            n = len(report.adaptation[v])
            improved = report.puzzle_improvements(v)
            fallbacks = report.fallbacks(v)
            lines.append(f"**{VARIANT_TITLES.get(v, v)}**")
            lines.append(f"- Puzzle loss reduced in {improved}/{n} case(s)")
            if fallbacks:
                lines.append(f"- ⚠️ Fallback to the unadapted model: {', '.join(fallbacks)}")
            else:
                lines.append("- No fallbacks")
            lines.append("")

    if report.jsd is not None:
        lines.append("## Organ location JS divergence (nats)")
        lines.append("| | " + " | ".join(report.organ_names) + " |")
        lines.append("|---" * (len(report.organ_names) + 1) + "|")
        for name, row in zip(report.organ_names, report.jsd):
            cells = " | ".join("n/a" if np.isnan(x) else f"{x:.4f}" for x in row)
            lines.append(f"| {name} | {cells} |")
        lines.append("")

    lines.append("## Notes")
    lines.append("Results on procedural phantoms; reproducible from `config_echo.json` and the seeds it records.")

    return "\n".join(lines)
