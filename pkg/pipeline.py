from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from core.config import (
    UPPER_BOUND,
    VARIANTS,
    DomainShift,
    ExperimentConfig,
    PhantomSpec,
    load_json,
    save_json,
    write_config_echo,
)
from core.errors import ConfigurationError
from core.volume import PatchGrid
from models.networks import DARRModel
from models.params import load_checkpoint
from runners.evaluator import evaluate_variants, variant_adapt_config
from runners.reporter import run_jsd_report, run_reporter
from runners.trainer import train_variants
from runners.adapter import predict_with_adaptation
from tools.metric_tools import dice_per_organ
from tools.phantom_tools import SOURCE_SEED_OFFSET, TARGET_SEED_OFFSET, make_dataset
from tools.plot_tools import plot_dsc_boxplot, plot_jsd_heatmap
from tools.reporter_tools import ExperimentReport, load_report, read_jsd_matrix
from tools.volume_io import Case, load_dataset, write_dataset
from utils.utils import get_device, resolve_dtype, seed_everything


def _banner(title: str) -> None:
    print("\n" + "=" * 70)
    print(title)
    print("=" * 70)


def _organ_names(cfg: Optional[ExperimentConfig], num_organs: int) -> List[str]:
    if cfg is not None and cfg.phantom.num_organs == num_organs:
        return cfg.phantom.organ_names
    return [f"organ_{k}" for k in range(1, num_organs + 1)]


def run_phantom_gen_pipeline(spec: PhantomSpec, shift: DomainShift, n_cases: int, seed: int, out_dir,
                             domain: str = "source", cfg: Optional[ExperimentConfig] = None) -> Path:
    _banner("🧪 PHANTOM-GEN - PROCEDURAL DATASET")
    out_dir = Path(out_dir)
    offset = TARGET_SEED_OFFSET if domain == "target" else SOURCE_SEED_OFFSET
    cases = make_dataset(spec, shift, n_cases, seed, domain, offset)
    manifest = write_dataset(cases, out_dir, domain)

    cfg = cfg or ExperimentConfig()
    cfg.phantom = spec
    if domain == "target":
        cfg.target_shift = shift
    else:
        cfg.source_shift = shift
    write_config_echo(cfg, out_dir, {"phantom_gen": {"cases": n_cases, "seed": seed, "domain": domain}})
    print(f"✅ Wrote {len(cases)} {domain} case(s) of shape {cases[0].volume.shape} to {manifest}")
    return manifest


def run_train_pipeline(cfg: ExperimentConfig, data_dir, out_dir, variants: Sequence[str],
                       domain: str = "source") -> Dict[str, Path]:
    _banner("🏋️  TRAIN - SOURCE-DOMAIN JOINT TRAINING" if domain == "source"
            else "🏋️  TRAIN - TARGET-DOMAIN UPPER BOUND")
    out_dir = Path(out_dir)
    seed_everything(cfg.seed)
    dtype = resolve_dtype(cfg.precision)
    device = get_device()

    cases = load_dataset(data_dir, with_masks=True)
    if domain == "target":
        variants = [UPPER_BOUND]
    write_config_echo(cfg, out_dir, {"train": {"data": str(data_dir), "variants": list(variants), "domain": domain}})
    results = train_variants(cases, cfg, variants, out_dir, dtype, device)
    return {v: r.checkpoint_path for v, r in results.items()}


def load_models(checkpoints: Sequence[str]) -> Tuple[Dict[str, DARRModel], Dict[str, dict]]:
    """Accepts checkpoint files or directories holding <variant>.pt files."""
    device = get_device()
    paths: List[Path] = []
    for ref in checkpoints:
        p = Path(ref)
        if p.is_dir():
            found = [p / f"{v}.pt" for v in (*VARIANTS, UPPER_BOUND) if (p / f"{v}.pt").exists()]
            if not found:
                raise ConfigurationError(f"model: no <variant>.pt checkpoints in {p}")
            paths.extend(found)
        else:
            paths.append(p)

    models: Dict[str, DARRModel] = {}
    echoes: Dict[str, dict] = {}
    for path in paths:
        model, meta = load_checkpoint(path, device=device)
        model.eval()
        variant = meta["variant"]
        if variant in models:
            raise ConfigurationError(f"model: variant {variant!r} given twice ({path})")
        models[variant] = model
        echoes[variant] = meta.get("experiment", {}).get("config") or {}
        print(f"🔹 Loaded {variant} from {path} (iteration {meta['iteration']})")
    return models, echoes


def _config_from_echoes(echoes: Dict[str, dict]) -> ExperimentConfig:
    for echo in echoes.values():
        if echo:
            return ExperimentConfig.from_dict(echo)
    return ExperimentConfig()


def run_adapt_eval_pipeline(checkpoints: Sequence[str], data_dir, out_dir, cfg: Optional[ExperimentConfig] = None,
                            adapt_iters: Optional[int] = None, adapt_lr: Optional[float] = None,
                            workers: int = 1, source_dir=None, save_masks: bool = False) -> ExperimentReport:
    _banner("🧩 ADAPT-EVAL - TEST-TIME JIGSAW ADAPTATION")
    out_dir = Path(out_dir)
    models, echoes = load_models(checkpoints)
    cfg = cfg or _config_from_echoes(echoes)
    if adapt_iters is not None:
        cfg.adapt.iterations = int(adapt_iters)
    if adapt_lr is not None:
        cfg.adapt.learning_rate = float(adapt_lr)
    cfg.validate()

    cases = load_dataset(data_dir, with_masks=True)
    variants = [v for v in (*VARIANTS, UPPER_BOUND) if v in models]
    report = evaluate_variants(models, cases, cfg, variants, workers=workers)

    if source_dir is not None:
        source = load_dataset(source_dir, with_masks=True)
        jsd = run_jsd_report([c.mask for c in source], [c.mask for c in cases], cfg.grid.to_grid(),
                             report.organ_names)
        report.jsd = jsd["matrix"]

    if save_masks:
        _save_predictions(models, cases, cfg, out_dir / "predictions")

    write_config_echo(cfg, out_dir, {"adapt_eval": {"models": list(map(str, checkpoints)), "data": str(data_dir),
                                                    "workers": workers}})
    run_reporter(report, out_dir)
    return report


def _save_predictions(models: Dict[str, DARRModel], cases: Sequence[Case], cfg: ExperimentConfig, out_dir: Path):
    for variant, model in models.items():
        adapt = variant_adapt_config(model, cfg.adapt)
        preds = []
        for case in cases:
            pred = predict_with_adaptation(model, case.volume, adapt, cfg.intensity_scale, case_id=case.case_id)
            preds.append(Case(case.case_id, case.volume, pred.mask, domain="prediction", seed=case.seed))
        write_dataset(preds, out_dir / variant, "prediction")
        print(f"✅ Saved {variant} predictions to {out_dir / variant}")


def run_eval_pipeline(pred_dir, gt_dir, out_dir, variant: str = "prediction",
                      cfg: Optional[ExperimentConfig] = None) -> ExperimentReport:
    _banner("📏 EVAL - DICE AGAINST GROUND TRUTH")
    preds = {c.case_id: c for c in load_dataset(pred_dir, with_masks=True)}
    gts = load_dataset(gt_dir, with_masks=True)
    missing = [c.case_id for c in gts if c.case_id not in preds]
    if missing:
        raise ConfigurationError(f"pred: no prediction for case(s) {', '.join(missing)}")

    num_organs = max(c.mask.num_classes for c in gts) - 1
    report = ExperimentReport(
        organ_names=_organ_names(cfg, num_organs),
        variants=[variant],
        case_ids=[c.case_id for c in gts],
        config=cfg.to_dict() if cfg else {},
    )
    report.dsc = {variant: {}}
    for gt in gts:
        pred = preds[gt.case_id]
        report.dsc[variant][gt.case_id] = dice_per_organ(pred.mask, gt.mask, num_organs)
    write_config_echo(cfg or ExperimentConfig(), out_dir, {"eval": {"pred": str(pred_dir), "gt": str(gt_dir)}})
    run_reporter(report, out_dir)
    return report


def run_jsd_pipeline(a_dir, b_dir, out_dir, grid: PatchGrid, cfg: Optional[ExperimentConfig] = None) -> Dict:
    _banner("📐 JSD-REPORT - ORGAN LOCATION DIVERGENCE")
    a = load_dataset(a_dir, with_masks=True)
    b = load_dataset(b_dir, with_masks=True)
    num_organs = max(c.mask.num_classes for c in (*a, *b)) - 1
    names = _organ_names(cfg, num_organs)
    result = run_jsd_report([c.mask for c in a], [c.mask for c in b], grid, names, out_dir)
    write_config_echo(cfg or ExperimentConfig(), out_dir,
                      {"jsd_report": {"a": str(a_dir), "b": str(b_dir), "grid": list(grid.dims)}})
    return result


def run_plot_pipeline(report_dir, out_dir=None) -> List[Path]:
    _banner("📈 PLOT - DSC BOX PLOTS AND JSD HEAT MAP")
    report_dir = Path(report_dir)
    out_dir = Path(out_dir) if out_dir is not None else report_dir
    written: List[Path] = []

    report_path = report_dir / "report.json"
    if report_path.exists():
        report = load_report(report_path)
        written.append(plot_dsc_boxplot(report, out_dir / "dsc_boxplot.png"))
        if report.jsd is not None:
            written.append(plot_jsd_heatmap(report.jsd, report.organ_names, out_dir / "jsd_heatmap.png"))
    jsd_path = report_dir / "jsd_matrix.csv"
    if jsd_path.exists() and not any(p.name == "jsd_heatmap.png" for p in written):
        matrix, names = read_jsd_matrix(jsd_path)
        written.append(plot_jsd_heatmap(matrix, names, out_dir / "jsd_heatmap.png"))
    if not written:
        raise ConfigurationError(f"report: neither report.json nor jsd_matrix.csv in {report_dir}")
    echo = report_dir / "config_echo.json"
    if echo.exists() and out_dir.resolve() != report_dir.resolve():
        save_json({**load_json(echo), "plot": {"report": str(report_dir)}}, out_dir / "config_echo.json")
    for p in written:
        print(f"✅ Wrote {p}")
    return written
