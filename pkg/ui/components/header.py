# ui/components/header.py
from __future__ import annotations

import html
from pathlib import Path
from typing import Optional, Sequence

import streamlit as st

from tools.reporter_tools import VARIANT_TITLES


def variant_chips(variants: Sequence[str]) -> str:
    return "".join(
        f'<span class="badge chip-{html.escape(v)}">{html.escape(VARIANT_TITLES.get(v, v))}</span>'
        for v in variants
    )


def render_header(experiment_dir: Optional[str] = None, variants: Sequence[str] = ()) -> bool:
    """Title, the loaded run with its variants, and RESET. Returns True if RESET was clicked."""
    col_title, col_run, col_btn = st.columns([5, 4, 1], vertical_alignment="center")

    with col_title:
        st.markdown("## 🧩 DARR: Test-Time Jigsaw Adaptation")

    with col_run:
        if experiment_dir:
            st.caption(f"📂 {Path(experiment_dir).name or experiment_dir}")
            if variants:
                st.markdown(variant_chips(variants), unsafe_allow_html=True)
        else:
            st.caption("No run loaded")

    with col_btn:
        reset_clicked = st.button("RESET", type="secondary")

    return reset_clicked
