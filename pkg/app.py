# app.py
from __future__ import annotations

import html
from pathlib import Path
from typing import Any, Dict, List, Optional

import streamlit as st

from core.config import ExperimentConfig, load_json
from core.contracts import prediction_to_ui, report_to_ui
from core.errors import DarrError
from core.events import add_event, get_events
from core.state import init_session_state, reset_session_state
from core.volume import SegmentationMask
from pipeline import load_models
from runners.adapter import predict_with_adaptation
from runners.evaluator import variant_adapt_config
from tools.metric_tools import dice_per_organ
from tools.volume_io import Case, load_dataset
from ui.components.header import render_header
from ui.components.zone_a import render_prediction, render_zone_a
from ui.components.zone_b import render_zone_b
from ui.components.zone_c import render_zone_c
from ui.styles import load_css
from utils.streamlit_logger import enable_streamlit_logging


def _update_live_logs():
    """Update the live log placeholder with current logs."""
    if getattr(st.session_state, "live_log_placeholder", None) is not None:
        logs = st.session_state.get("run_logs", [])
        if logs:
            lines = [f'<p style="margin: 2px 0; color: #e5e7eb;">{html.escape(log)}</p>' for log in logs[-50:]]
            st.session_state.live_log_placeholder.markdown(
                f'<div class="log-box-live" id="live-logs">{"".join(lines)}</div>', unsafe_allow_html=True
            )


@st.cache_resource(show_spinner="Loading checkpoints...")
def _cached_models(model_refs: tuple):
    models, _ = load_models(list(model_refs))
    return models


@st.cache_data(show_spinner="Loading target cases...")
def _cached_cases(data_dir: str) -> List[Case]:
    return load_dataset(data_dir, with_masks=True)


def _load_experiment(exp_dir: str) -> Dict[str, Any]:
    """report.json, report.md and config_echo.json of an adapt-eval output directory."""
    out: Dict[str, Any] = {"report": None, "report_md": "", "echo": None}
    if not exp_dir:
        return out
    p = Path(exp_dir)
    if (p / "report.json").exists():
        out["report"] = load_json(p / "report.json")
    if (p / "report.md").exists():
        out["report_md"] = (p / "report.md").read_text(encoding="utf-8")
    if (p / "config_echo.json").exists():
        out["echo"] = load_json(p / "config_echo.json")
    return out


def main() -> None:
    st.set_page_config(
        page_title="DARR: Test-Time Jigsaw Adaptation",
        layout="wide",
        initial_sidebar_state="collapsed",
    )

    init_session_state()
    load_css(Path(__file__).parent / "ui" / "styles.css")

    exp = _load_experiment(st.session_state.experiment_dir)
    variants = (exp["report"] or {}).get("variants", [])
    if render_header(st.session_state.experiment_dir, variants):
        reset_session_state()
        st.rerun()

    st.session_state.report = exp["report"]
    st.session_state.report_md = exp["report_md"]
    st.session_state.echo = exp["echo"]

    run_info = (exp["echo"] or {}).get("adapt_eval", {})
    cases: List[Case] = []
    models: Dict[str, Any] = {}
    try:
        if run_info.get("data"):
            cases = _cached_cases(run_info["data"])
        if run_info.get("models"):
            models = _cached_models(tuple(run_info["models"]))
    except DarrError as e:
        st.error(f"❌ {e}")

    cfg: Optional[ExperimentConfig] = None
    if exp["echo"] and exp["echo"].get("config"):
        cfg = ExperimentConfig.from_dict(exp["echo"]["config"])

    rows, summary = report_to_ui(exp["report"] or {})
    prediction = st.session_state.get("prediction")
    pred_labels = prediction.get("labels") if isinstance(prediction, dict) else None

    colA, colB = st.columns(2)
    with colA:
        case, variant, run_clicked = render_zone_a(
            cases=cases,
            variants=list(models),
            prediction_labels=pred_labels if prediction and prediction.get("case_id") == st.session_state.selected_case else None,
            ui_locked=st.session_state.ui_locked,
        )
        render_prediction({k: v for k, v in prediction.items() if k != "labels"} if prediction else None)
    with colB:
        render_zone_b(rows, summary, st.session_state.experiment_dir)

    enable_streamlit_logging()

    if run_clicked and case is not None and variant is not None and cfg is not None:
        st.session_state.ui_locked = True
        st.session_state.status = "running"
        st.session_state.run_logs = []

        st.markdown('<div class="darr-panel">', unsafe_allow_html=True)
        st.markdown("### ZONE C: RUN LOGS")
        st.info("🔄 Adapting... logs updating in real-time")
        log_placeholder = st.empty()
        st.session_state.live_log_placeholder = log_placeholder
        log_placeholder.markdown('<div class="log-box-live" id="live-logs">(starting...)</div>', unsafe_allow_html=True)
        st.markdown("</div>", unsafe_allow_html=True)

        try:
            model = models[variant]
            adapt = variant_adapt_config(model, cfg.adapt)
            add_event("adapt", f"{variant} on {case.case_id}: {adapt.iterations} iteration(s) at lr {adapt.learning_rate:g}")
            _update_live_logs()
            pred = predict_with_adaptation(model, case.volume, adapt, cfg.intensity_scale, case_id=case.case_id)
            gt = SegmentationMask(case.mask.labels, max(case.mask.num_classes, pred.mask.num_classes))
            dsc = dice_per_organ(pred.mask, gt, cfg.phantom.num_organs)
            payload = prediction_to_ui(case.case_id, variant, dsc, cfg.phantom.organ_names, pred.adaptation.to_dict())
            add_event("predict", f"mean DSC {payload['mean_dsc']:.2f}%", payload=payload)
            payload["labels"] = pred.mask.labels
            st.session_state.prediction = payload
            st.session_state.status = "done"
        except Exception as e:
            import traceback
            st.session_state.run_logs.append(f"❌ Error: {e}")
            st.session_state.run_logs.append(traceback.format_exc())
            add_event("predict", str(e), level="error")
            st.session_state.status = "error"
        finally:
            st.session_state.ui_locked = False
            st.session_state.live_log_placeholder = None
            st.rerun()
    else:
        events = get_events() + [{"ts": "", "stage": "log", "text": log}
                                 for log in st.session_state.get("run_logs", [])]
        shown = {k: v for k, v in prediction.items() if k != "labels"} if prediction else None
        render_zone_c(events=events, final_result=shown)


if __name__ == "__main__":
    main()
