from __future__ import annotations

import streamlit as st

DEFAULTS = {
    "experiment_dir": "",
    "status": "idle",          # idle | running | done | error
    "events": [],              # list[dict]
    "report": None,            # report.json dict | None
    "report_md": "",           # report.md contents
    "echo": None,              # config_echo.json dict | None
    "selected_case": None,     # case id shown in the preview
    "selected_variant": None,
    "prediction": None,        # dict from contracts.prediction_to_ui
    "ui_locked": False,        # prevents editing while running
    "run_logs": [],            # list[str] captured stdout
}


def init_session_state() -> None:
    """Initialize all session_state keys used by the results browser."""
    for k, v in DEFAULTS.items():
        if k not in st.session_state:
            st.session_state[k] = v if not isinstance(v, list) else list(v)


def reset_session_state() -> None:
    for k, v in DEFAULTS.items():
        st.session_state[k] = v if not isinstance(v, list) else list(v)
