import argparse
import sys
from typing import List, Optional

from core.config import VARIANTS, DomainShift, ExperimentConfig, PhantomSpec, from_dict, load_json
from core.errors import DarrError
from core.volume import PatchGrid
from pipeline import (
    run_adapt_eval_pipeline,
    run_eval_pipeline,
    run_jsd_pipeline,
    run_phantom_gen_pipeline,
    run_plot_pipeline,
    run_train_pipeline,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2


def _load_config(path: Optional[str]) -> ExperimentConfig:
    return ExperimentConfig.load(path) if path else ExperimentConfig()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="darr", description="Test-time jigsaw adaptation toolkit for 3D segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom-gen", help="generate a procedural phantom dataset")
    p.add_argument("--config", help="experiment config JSON (phantom and shifts)")
    p.add_argument("--spec", help="phantom spec JSON; overrides the config's phantom")
    p.add_argument("--shift", help="domain shift JSON; overrides the config's shift for --domain")
    p.add_argument("--cases", type=int, help="number of cases (default from config)")
    p.add_argument("--seed", type=int, help="dataset seed (default from config)")
    p.add_argument("--domain", choices=["source", "target"], default="source")
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train one or all variants on a labelled dataset")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=[*VARIANTS, "all"], default="darr")
    p.add_argument("--domain", choices=["source", "target"], default="source",
                   help="'target' trains the upper bound on labelled target data")
    p.add_argument("--iterations", type=int, help="override train.iterations")

    p = sub.add_parser("adapt-eval", help="test-time adaptation and DSC evaluation of trained variants")
    p.add_argument("--model", action="append", required=True,
                   help="checkpoint file or directory of <variant>.pt files (repeatable)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="experiment config; defaults to the one stored in the checkpoint")
    p.add_argument("--adapt-iters", type=int)
    p.add_argument("--adapt-lr", type=float)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--source", help="labelled source dataset; adds the organ-location JSD matrix to the report")
    p.add_argument("--save-masks", action="store_true", help="write predicted masks under <out>/predictions")

    p = sub.add_parser("eval", help="DSC of saved predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", default="prediction")
    p.add_argument("--config")

    p = sub.add_parser("jsd-report", help="organ-location JS divergence between two datasets")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", type=int, nargs=3, metavar=("W", "H", "L"), default=None)
    p.add_argument("--config")

    p = sub.add_parser("plot", help="DSC box plots and JSD heat map from a report directory")
    p.add_argument("--report", required=True)
    p.add_argument("--out")
    return parser


def _dispatch(args: argparse.Namespace) -> None:
    if args.command == "phantom-gen":
        cfg = _load_config(args.config)
        spec = PhantomSpec.from_dict(load_json(args.spec)) if args.spec else cfg.phantom
        default_shift = cfg.target_shift if args.domain == "target" else cfg.source_shift
        shift = from_dict(DomainShift, load_json(args.shift), "shift") if args.shift else default_shift
        default_cases = cfg.n_target_cases if args.domain == "target" else cfg.n_source_cases
        run_phantom_gen_pipeline(
            spec, shift,
            n_cases=args.cases if args.cases is not None else default_cases,
            seed=args.seed if args.seed is not None else cfg.seed,
            out_dir=args.out, domain=args.domain, cfg=cfg,
        )

    elif args.command == "train":
        cfg = _load_config(args.config)
        if args.iterations is not None:
            cfg.train.iterations = args.iterations
            cfg.validate()
        variants = list(VARIANTS) if args.variant == "all" else [args.variant]
        run_train_pipeline(cfg, args.data, args.out, variants, domain=args.domain)

    elif args.command == "adapt-eval":
        run_adapt_eval_pipeline(
            args.model, args.data, args.out,
            cfg=ExperimentConfig.load(args.config) if args.config else None,
            adapt_iters=args.adapt_iters, adapt_lr=args.adapt_lr,
            workers=args.workers, source_dir=args.source, save_masks=args.save_masks,
        )

    elif args.command == "eval":
        run_eval_pipeline(args.pred, args.gt, args.out, variant=args.variant,
                          cfg=ExperimentConfig.load(args.config) if args.config else None)

    elif args.command == "jsd-report":
        cfg = ExperimentConfig.load(args.config) if args.config else None
        if args.grid is not None:
            grid = PatchGrid(*args.grid)
        elif cfg is not None:
            grid = cfg.grid.to_grid()
        else:
            grid = PatchGrid()
        run_jsd_pipeline(args.a, args.b, args.out, grid, cfg)

    elif args.command == "plot":
        run_plot_pipeline(args.report, args.out)


def run_subcommand(argv: List[str]) -> int:
    """Runs one subcommand; returns 0 on success, 1 on runtime/validation errors, 2 on usage errors."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    try:
        _dispatch(args)
    except DarrError as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, KeyError, TypeError, ValueError) as e:
        # malformed inputs that slipped past validation still end the run cleanly
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def main():
    sys.exit(run_subcommand(sys.argv[1:]))


if __name__ == "__main__":
    main()
