import html
import sys
import threading

import streamlit as st

MAX_LIVE_LINES = 50


def _render_live(placeholder, logs) -> None:
    lines = [f'<p style="margin: 2px 0; color: #e5e7eb;">{html.escape(log)}</p>' for log in logs[-MAX_LIVE_LINES:]]
    placeholder.markdown(
        f'<div class="log-box-live" id="live-logs">{"".join(lines)}</div>'
        '<img src="x" style="display:none" onerror="var el=document.getElementById(\'live-logs\');'
        ' if(el) el.scrollTop=el.scrollHeight;">',
        unsafe_allow_html=True,
    )


class StreamlitLogger:
    """
    Tees stdout/stderr into st.session_state.run_logs so pipeline prints show up
    in the UI. tqdm redraws (carriage returns) keep only their latest state.
    """

    def __init__(self):
        self._stdout = sys.__stdout__
        self._lock = threading.Lock()

    def write(self, message):
        text = message.split("\r")[-1].rstrip()
        if text:
            with self._lock:
                try:
                    logs = st.session_state.setdefault("run_logs", [])
                    if "\r" in message and logs and logs[-1].split(":")[0] == text.split(":")[0]:
                        logs[-1] = text
                    else:
                        logs.append(text)
                    placeholder = st.session_state.get("live_log_placeholder")
                    if placeholder is not None:
                        _render_live(placeholder, logs)
                except Exception:
                    # outside a script run there is no session state
                    pass
        self._stdout.write(message)

    def flush(self):
        self._stdout.flush()


def enable_streamlit_logging():
    if not isinstance(sys.stdout, StreamlitLogger):
        logger = StreamlitLogger()
        sys.stdout = logger
        sys.stderr = logger
