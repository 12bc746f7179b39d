# core/contracts.py
"""Conversions from on-disk experiment artifacts to the payloads the UI zones render."""
from __future__ import annotations

from typing import Any, Dict, List, Tuple

import numpy as np

VARIANT_ORDER = ("lower_bound", "vnet_puzzle", "vnet_sr", "darr", "upper_bound")


def _safe_get(d: Dict[str, Any], path: List[str], default=None):
    cur: Any = d
    for p in path:
        if not isinstance(cur, dict) or p not in cur:
            return default
        cur = cur[p]
    return cur


def report_to_ui(report: Dict[str, Any]) -> Tuple[List[Dict[str, Any]], Dict[str, Any]]:
    """
    Input: report.json as written by the reporter.
    Output:
      rows: one dict per variant (variant, per-organ DSC %, mean %, fallbacks, puzzle improvements)
      summary: headline numbers for the summary card
    """
    if not isinstance(report, dict) or "variants" not in report:
        return [], {}

    organs = report.get("organ_names", [])
    means = report.get("means", {})
    adaptation = report.get("adaptation", {}) or {}
    variants = sorted(report["variants"], key=lambda v: VARIANT_ORDER.index(v) if v in VARIANT_ORDER else 99)

    rows: List[Dict[str, Any]] = []
    for v in variants:
        m = means.get(v, {})
        row: Dict[str, Any] = {"variant": v}
        for name, score in zip(organs, m.get("per_organ", [])):
            row[name] = round(100.0 * score, 2)
        row["mean"] = round(100.0 * m.get("mean", float("nan")), 2)
        cases = adaptation.get(v, {})
        row["fallbacks"] = sum(1 for a in cases.values() if a.get("fallback"))
        row["puzzle_improved"] = (
            f"{sum(1 for a in cases.values() if _improved(a))}/{len(cases)}" if cases else "n/a"
        )
        rows.append(row)

    best = max(rows, key=lambda r: r["mean"]) if rows else None
    gain = None
    lb = _safe_get(means, ["lower_bound", "mean"])
    darr = _safe_get(means, ["darr", "mean"])
    if lb is not None and darr is not None:
        gain = round(100.0 * (darr - lb), 2)

    summary = {
        "cases": len(report.get("case_ids", [])),
        "variants": len(variants),
        "best_variant": best["variant"] if best else None,
        "best_mean": best["mean"] if best else None,
        "darr_gain": gain,
        "any_fallback": any(r["fallbacks"] for r in rows),
        "created": report.get("created", ""),
    }
    return rows, summary


def _improved(a: Dict[str, Any]) -> bool:
    before, after = a.get("loss_before"), a.get("loss_after")
    return before is not None and after is not None and after < before


def case_scores_to_ui(report: Dict[str, Any], case_id: str) -> List[Dict[str, Any]]:
    """Per-variant mean DSC and adaptation losses of one case."""
    out = []
    for v in report.get("variants", []):
        scores = _safe_get(report, ["dsc", v, case_id])
        if scores is None:
            continue
        a = _safe_get(report, ["adaptation", v, case_id], {}) or {}
        out.append({
            "variant": v,
            "mean_dsc": round(100.0 * float(np.mean(scores)), 2),
            "puzzle_before": a.get("loss_before"),
            "puzzle_after": a.get("loss_after"),
            "fallback": bool(a.get("fallback", False)),
        })
    return out


def prediction_to_ui(case_id: str, variant: str, dsc: List[float], organ_names: List[str],
                     adaptation: Dict[str, Any]) -> Dict[str, Any]:
    return {
        "case_id": case_id,
        "variant": variant,
        "dsc": {name: round(100.0 * s, 2) for name, s in zip(organ_names, dsc)},
        "mean_dsc": round(100.0 * float(np.mean(dsc)), 2) if dsc else None,
        "trajectory": list(adaptation.get("trajectory", [])),
        "loss_before": adaptation.get("loss_before"),
        "loss_after": adaptation.get("loss_after"),
        "fallback": bool(adaptation.get("fallback", False)),
    }
