import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
from tqdm import tqdm

from core.config import ExperimentConfig, LossWeights, variant_network
from core.errors import ConfigurationError, NonFiniteLossError
from models.networks import DARRModel, build_model
from models.params import save_checkpoint
from tools.batch_tools import PreparedCase, prepare_case, sample_puzzle_batch
from tools.loss_tools import joint_loss
from tools.volume_io import Case

LOSS_CURVE_HEADER = ["iteration", "seg", "sr", "puzzle", "total", "wall_time"]


@dataclass
class TrainResult:
    model: DARRModel
    variant: str
    curve: List[Dict[str, float]] = field(default_factory=list)
    checkpoint_path: Optional[Path] = None


def prepare_cases(cases: Sequence[Case], cfg: ExperimentConfig) -> List[PreparedCase]:
    grid = cfg.grid.to_grid()
    prepared = []
    for case in cases:
        if case.mask is None:
            raise ConfigurationError(f"data: case {case.case_id} has no mask; training needs labels")
        prepared.append(prepare_case(case.case_id, case.volume, grid, cfg.grid.squeeze_factor,
                                     cfg.intensity_scale, case.mask))
    return prepared


class LossCurveWriter:
    """Append-only CSV; one row per logged iteration."""

    def __init__(self, path: Optional[Path]):
        self.path = path
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, "w", newline="") as f:
                csv.writer(f).writerow(LOSS_CURVE_HEADER)

    def append(self, row: Dict[str, float]) -> None:
        if self.path is None:
            return
        with open(self.path, "a", newline="") as f:
            csv.writer(f).writerow([row[k] for k in LOSS_CURVE_HEADER])


def train(cases: Sequence[Case], cfg: ExperimentConfig, variant: str = "darr",
          out_dir: Optional[str | Path] = None, dtype: torch.dtype = torch.float32,
          device: Optional[torch.device | str] = None, show_progress: bool = True) -> TrainResult:
    """
    Source-domain training. Each iteration draws one case and one permutation;
    all n patches of that case form the batch, and one Adam step updates every
    parameter group on the joint loss.
    """
    if not cases:
        raise ConfigurationError("data: training set is empty")
    cfg.validate()
    tcfg = cfg.train
    network = variant_network(cfg.network, variant)
    weights = cfg.weights if network.use_puzzle else LossWeights(cfg.weights.lambda_sr, 0.0)

    print(f"🔹 Training variant '{variant}' on {len(cases)} case(s) for {tcfg.iterations} iterations...")
    prepared = prepare_cases(cases, cfg)
    model = build_model(network, cfg.grid, dtype=dtype, device=device, seed=tcfg.seed)
    model.train()
    optimizer = torch.optim.Adam(
        model.parameters(),
        lr=tcfg.learning_rate,
        betas=tuple(tcfg.betas),
        weight_decay=tcfg.weight_decay,
    )
    rng = np.random.default_rng(tcfg.seed)

    out_path = Path(out_dir) if out_dir is not None else None
    writer = LossCurveWriter(out_path / f"{variant}_loss_curve.csv" if out_path else None)
    experiment = {"config": cfg.to_dict(), "variant": variant}
    curve: List[Dict[str, float]] = []
    start = time.perf_counter()

    progress = tqdm(range(1, tcfg.iterations + 1), desc=f"Train {variant}", unit="it",
                    disable=not show_progress, leave=False)
    for it in progress:
        case = prepared[int(rng.integers(len(prepared)))]
        batch = sample_puzzle_batch(case, rng, dtype=dtype, device=device)

        optimizer.zero_grad(set_to_none=True)
        losses = joint_loss(batch, model, weights)
        if not losses.is_finite():
            dump = None
            if out_path is not None:
                dump = save_checkpoint(out_path / f"{variant}_nonfinite_dump.pt", model, optimizer, it,
                                       variant, experiment)
            print(f"❌ Non-finite loss at iteration {it} ({losses.as_floats()})")
            raise NonFiniteLossError(
                f"train: non-finite loss at iteration {it} of variant {variant}",
                iteration=it,
                dump_path=str(dump) if dump else None,
            )
        losses.total.backward()
        optimizer.step()

        if it % tcfg.log_every == 0 or it == tcfg.iterations:
            row = {"iteration": it, **losses.as_floats(), "wall_time": time.perf_counter() - start}
            curve.append(row)
            writer.append(row)
            progress.set_postfix(seg=f"{row['seg']:.4f}", sr=f"{row['sr']:.4f}", puzzle=f"{row['puzzle']:.4f}")

        if out_path is not None and tcfg.checkpoint_every and it % tcfg.checkpoint_every == 0 \
                and it != tcfg.iterations:
            save_checkpoint(out_path / f"{variant}_it{it:06d}.pt", model, optimizer, it, variant, experiment)

    ckpt = None
    if out_path is not None:
        ckpt = save_checkpoint(out_path / f"{variant}.pt", model, optimizer, tcfg.iterations, variant, experiment)
        print(f"✅ Saved {ckpt}")
    last = curve[-1] if curve else {}
    print(f"✅ Variant '{variant}' done: seg={last.get('seg', float('nan')):.4f} "
          f"sr={last.get('sr', float('nan')):.4f} puzzle={last.get('puzzle', float('nan')):.4f}")
    model.eval()
    return TrainResult(model=model, variant=variant, curve=curve, checkpoint_path=ckpt)


def train_variants(cases: Sequence[Case], cfg: ExperimentConfig, variants: Sequence[str],
                   out_dir: Optional[str | Path] = None, dtype: torch.dtype = torch.float32,
                   device: Optional[torch.device | str] = None) -> Dict[str, TrainResult]:
    return {v: train(cases, cfg, v, out_dir, dtype, device) for v in variants}

