import dataclasses
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

from tqdm import tqdm

from core.config import AdaptConfig, ExperimentConfig, VARIANTS
from core.errors import ConfigurationError
from core.volume import SegmentationMask
from models.networks import DARRModel
from runners.adapter import predict_with_adaptation
from tools.metric_tools import dice_per_organ
from tools.reporter_tools import ExperimentReport
from tools.volume_io import Case


def variant_adapt_config(model: DARRModel, cfg: AdaptConfig) -> AdaptConfig:
    """Only models with a puzzle head are adapted; the rest get plain inference."""
    return cfg if model.puzzle is not None else dataclasses.replace(cfg, iterations=0)


def _evaluate_case(models: Dict[str, DARRModel], variants: Sequence[str], case: Case, adapt: AdaptConfig,
                   intensity_scale: float, num_organs: int) -> Tuple[str, Dict[str, List[float]], Dict[str, dict]]:
    scores, meta = {}, {}
    for v in variants:
        model = models[v]
        pred = predict_with_adaptation(model, case.volume, variant_adapt_config(model, adapt),
                                       intensity_scale, case_id=case.case_id)
        # predicted label space may be wider than the ground truth's
        gt = SegmentationMask(labels=case.mask.labels, num_classes=max(case.mask.num_classes, pred.mask.num_classes))
        scores[v] = dice_per_organ(pred.mask, gt, num_organs)
        meta[v] = pred.adaptation.to_dict()
    return case.case_id, scores, meta


_WORKER_STATE: dict = {}


def _init_worker(models, variants, adapt, intensity_scale, num_organs):
    _WORKER_STATE.update(models=models, variants=variants, adapt=adapt,
                         intensity_scale=intensity_scale, num_organs=num_organs)


def _worker_case(case: Case):
    s = _WORKER_STATE
    return _evaluate_case(s["models"], s["variants"], case, s["adapt"], s["intensity_scale"], s["num_organs"])


def evaluate_variants(models: Dict[str, DARRModel], cases: Sequence[Case], cfg: ExperimentConfig,
                      variants: Optional[Sequence[str]] = None, workers: int = 1,
                      show_progress: bool = True) -> ExperimentReport:
    """
    Per-case, per-organ DSC of every variant on the same case list.
    Adapting variants run predict_with_adaptation with cfg.adapt; every model
    is rolled back after each case, so case order does not matter.
    """
    variants = list(variants) if variants is not None else list(VARIANTS)
    missing = [v for v in variants if v not in models]
    if missing:
        raise ConfigurationError(f"model: no checkpoint for variant(s) {', '.join(missing)}")
    if not cases:
        raise ConfigurationError("data: evaluation set is empty")
    unlabeled = [c.case_id for c in cases if c.mask is None]
    if unlabeled:
        raise ConfigurationError(f"data: evaluation needs masks, missing for {', '.join(unlabeled)}")

    num_organs = cfg.phantom.num_organs
    organ_names = cfg.phantom.organ_names
    report = ExperimentReport(
        organ_names=organ_names,
        variants=variants,
        case_ids=[c.case_id for c in cases],
        config=cfg.to_dict(),
    )
    report.dsc = {v: {} for v in variants}
    report.adaptation = {v: {} for v in variants if models[v].puzzle is not None and cfg.adapt.iterations > 0}

    print(f"🔹 Evaluating {len(variants)} variant(s) on {len(cases)} case(s) "
          f"(adapt {cfg.adapt.iterations} it @ lr {cfg.adapt.learning_rate:g}, workers={workers})...")

    if workers > 1:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx, initializer=_init_worker,
                                 initargs=(models, variants, cfg.adapt, cfg.intensity_scale, num_organs)) as pool:
            results = list(tqdm(pool.map(_worker_case, cases), total=len(cases), desc="Evaluate",
                                unit="case", disable=not show_progress, leave=False))
    else:
        results = [
            _evaluate_case(models, variants, case, cfg.adapt, cfg.intensity_scale, num_organs)
            for case in tqdm(cases, desc="Evaluate", unit="case", disable=not show_progress, leave=False)
        ]

    for case_id, scores, meta in results:
        for v in variants:
            report.dsc[v][case_id] = scores[v]
            if v in report.adaptation:
                report.adaptation[v][case_id] = meta[v]
                if meta[v]["fallback"]:
                    print(f"⚠️  {v}/{case_id}: {meta[v]['message']}")

    for v in variants:
        print(f"   • {v}: mean DSC {100 * report.variant_mean(v):.2f}")
    return report
