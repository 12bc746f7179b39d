# ui/components/zone_b.py
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, List, Optional

import markdown
import streamlit as st


def _badge(text: str, kind: str = "ok") -> str:
    cls = {"ok": "badge badge-ok", "warn": "badge badge-warn", "bad": "badge badge-bad"}.get(kind, "badge")
    return f'<span class="{cls}">{text}</span>'


def render_zone_b(
    rows: List[Dict[str, Any]],
    summary: Optional[Dict[str, Any]],
    experiment_dir: Optional[str],
) -> None:
    """
    Zone B renders the experiment results.

    rows / summary come from core/contracts.py report_to_ui.
    """
    st.markdown('<div class="darr-panel">', unsafe_allow_html=True)
    st.markdown("### ZONE B: RESULTS")

    if not summary:
        st.info("No report.json found. Run `darr adapt-eval` and point Zone A at its output directory.")
        st.markdown("</div>", unsafe_allow_html=True)
        return

    # ---- Summary card
    badges = _badge(f"{summary['cases']} case(s)", "ok") + _badge(f"{summary['variants']} variant(s)", "ok")
    if summary.get("darr_gain") is not None:
        kind = "ok" if summary["darr_gain"] > 0 else "bad"
        badges += _badge(f"DARR vs lower bound: {summary['darr_gain']:+.2f} DSC", kind)
    if summary.get("any_fallback"):
        badges += _badge("⚠️ adaptation fallbacks", "warn")
    st.markdown(badges, unsafe_allow_html=True)

    # ---- Variant table
    st.markdown("#### Mean DSC (%)")
    st.dataframe(rows, use_container_width=True, hide_index=True)

    exp = Path(experiment_dir) if experiment_dir else None
    if exp is not None:
        for name, title in (("dsc_boxplot.png", "Per-organ DSC"), ("jsd_heatmap.png", "Organ location JSD")):
            if (exp / name).exists():
                st.markdown(f"#### {title}")
                st.image(str(exp / name))

    # ---- Report
    report_md = st.session_state.get("report_md", "")
    col_txt, col_btns = st.columns([0.55, 0.45])
    with col_txt:
        st.markdown("#### Report")
    with col_btns:
        st.download_button(
            "Download report.md",
            data=report_md or "No report generated.",
            file_name="report.md",
            mime="text/markdown",
            use_container_width=True,
        )
        st.download_button(
            "Download report.json",
            data=json.dumps(st.session_state.get("report") or {}, indent=2),
            file_name="report.json",
            mime="application/json",
            use_container_width=True,
        )
    if report_md:
        report_html = markdown.markdown(report_md, extensions=["tables", "fenced_code"])
        st.markdown(f'<div class="report-container">{report_html}</div>', unsafe_allow_html=True)
    else:
        st.warning("report.md not found.")

    st.markdown("</div>", unsafe_allow_html=True)
