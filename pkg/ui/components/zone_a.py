# ui/components/zone_a.py
from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import streamlit as st

from tools.plot_tools import slice_preview_figure
from tools.volume_io import Case


def axial_slider(depth: int) -> int:
    # st.slider rejects min == max
    if depth <= 1:
        st.caption("single axial slice")
        return 0
    return st.slider("slice", 0, depth - 1, depth // 2)


def render_zone_a(
    cases: List[Case],
    variants: List[str],
    prediction_labels: Optional[Any],
    ui_locked: bool,
) -> Tuple[Optional[Case], Optional[str], bool]:
    """
    Zone A: experiment picker + case preview + primary trigger.
    Returns: (selected case, selected variant, run_clicked)
    """
    st.markdown('<div class="darr-panel">', unsafe_allow_html=True)
    st.markdown("### ZONE A: TARGET CASES")

    exp_dir = st.text_input("Experiment directory (output of adapt-eval)",
                            value=st.session_state.get("experiment_dir", ""), disabled=ui_locked)
    if exp_dir != st.session_state.get("experiment_dir", ""):
        st.session_state.experiment_dir = exp_dir
        st.session_state.prediction = None
        st.rerun()

    if exp_dir and not Path(exp_dir).is_dir():
        st.error(f"Not a directory: {exp_dir}")

    if not cases:
        st.caption("No target cases loaded. The experiment's config_echo.json points at the data directory.")
        st.markdown("</div>", unsafe_allow_html=True)
        return None, None, False

    ids = [c.case_id for c in cases]
    case_id = st.selectbox("Case", ids, index=ids.index(st.session_state.selected_case)
                           if st.session_state.get("selected_case") in ids else 0, disabled=ui_locked)
    st.session_state.selected_case = case_id
    case = cases[ids.index(case_id)]

    variant = st.selectbox("Variant", variants, index=len(variants) - 1 if variants else 0, disabled=ui_locked)
    st.session_state.selected_variant = variant

    # --- Preview
    st.markdown("#### Axial slice")
    z = axial_slider(case.volume.shape[2])
    mask = case.mask.labels if case.mask is not None else None
    fig = slice_preview_figure(case.volume.data, mask, prediction_labels, z=z)
    st.pyplot(fig)
    st.caption(f"shape {case.volume.shape}, spacing {tuple(round(s, 2) for s in case.volume.spacing)} mm")

    # --- Primary Trigger
    run_clicked = st.button("Adapt & Segment  >", type="primary", disabled=ui_locked or not variants)

    st.markdown("</div>", unsafe_allow_html=True)
    return case, variant, run_clicked


def render_prediction(prediction: Optional[Dict[str, Any]]) -> None:
    if not prediction:
        return
    st.markdown("#### Last prediction")
    c1, c2 = st.columns(2)
    c1.metric("Mean DSC (%)", prediction["mean_dsc"])
    if prediction["loss_before"] is not None:
        c2.metric("Puzzle loss", f"{prediction['loss_after']:.4f}",
                  delta=f"{prediction['loss_after'] - prediction['loss_before']:+.4f}", delta_color="inverse")
    if prediction["fallback"]:
        st.warning("Adaptation diverged; the unadapted model was used.")
    if prediction["trajectory"]:
        st.line_chart(prediction["trajectory"])
    st.dataframe([prediction["dsc"]], use_container_width=True)
