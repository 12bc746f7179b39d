# ui/styles.py
from __future__ import annotations

from pathlib import Path
from typing import Dict

import streamlit as st

from tools.plot_tools import VARIANT_COLORS


def variant_chip_css(colors: Dict[str, str] = VARIANT_COLORS) -> str:
    """One `.chip-<variant>` rule per variant, in the colours the figures use."""
    rules = [
        f".chip-{name} {{ background: {color}; color: #111827; }}"
        for name, color in colors.items()
    ]
    return "\n".join(rules)


def load_css(css_path: str | Path) -> None:
    p = Path(css_path)
    css = p.read_text(encoding="utf-8") if p.exists() else ""
    st.markdown(f"<style>{css}\n{variant_chip_css()}</style>", unsafe_allow_html=True)
