# core/events.py
from __future__ import annotations

from datetime import datetime, timezone
from typing import Any, Dict, Optional

import streamlit as st


def now_ts() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def add_event(stage: str, text: str, level: str = "info", payload: Optional[Dict[str, Any]] = None) -> None:
    """stage is one of load | adapt | predict | report."""
    if "events" not in st.session_state:
        st.session_state.events = []
    st.session_state.events.append({
        "ts": now_ts(),
        "stage": stage,
        "level": level,
        "text": text,
        "payload": payload or {},
    })


def get_events() -> list[dict]:
    return st.session_state.get("events", [])
