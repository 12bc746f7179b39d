"""Parameter snapshots, checksums and checkpoint archives for DARRModel."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Tuple

import torch

from core.config import GridConfig, NetworkConfig, from_dict, to_dict
from core.errors import IntegrityError
from models.networks import DARRModel, build_model

SNAPSHOT_VERSION = 1
CHECKPOINT_FORMAT = "darr-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ParamSnapshot:
    state: Dict[str, torch.Tensor]
    network: Dict[str, Any]
    grid: Dict[str, Any]
    version: int = SNAPSHOT_VERSION
    meta: Dict[str, Any] = field(default_factory=dict)


def _config_echo(model: DARRModel) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    return to_dict(model.cfg), to_dict(model.grid_cfg)


def snapshot(model: DARRModel) -> ParamSnapshot:
    """Deep copy of every tensor in all four groups; later in-place updates do not leak in."""
    network, grid = _config_echo(model)
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    return ParamSnapshot(state=state, network=network, grid=grid)


def restore(model: DARRModel, snap: ParamSnapshot) -> DARRModel:
    """Writes the snapshot back into `model` in place (bitwise)."""
    if snap.version != SNAPSHOT_VERSION:
        raise IntegrityError(f"Snapshot version {snap.version} != supported {SNAPSHOT_VERSION}")
    network, grid = _config_echo(model)
    if _normalized(snap.network) != _normalized(network) or _normalized(snap.grid) != _normalized(grid):
        raise IntegrityError("Snapshot was taken from a model with a different network or grid config")
    current = model.state_dict()
    if set(current) != set(snap.state):
        raise IntegrityError("Snapshot tensors do not match the model's parameter names")
    with torch.no_grad():
        for name, tensor in current.items():
            tensor.copy_(snap.state[name])
    return model


def _normalized(d: Dict[str, Any]) -> Dict[str, Any]:
    # tuples come back from disk as lists
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def checksum(model: DARRModel, groups: Optional[Iterable[str]] = None) -> str:
    """sha256 over the raw bytes of the selected groups (all by default)."""
    selected = model.groups()
    if groups is not None:
        wanted = set(groups)
        selected = {k: v for k, v in selected.items() if k in wanted}
    h = hashlib.sha256()
    for gname in sorted(selected):
        for name, tensor in sorted(selected[gname].state_dict().items()):
            h.update(f"{gname}.{name}".encode())
            h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def grouped_state(model: DARRModel) -> Dict[str, Dict[str, torch.Tensor]]:
    return {g: {k: v.detach().cpu().clone() for k, v in m.state_dict().items()} for g, m in model.groups().items()}


def save_snapshot(snap: ParamSnapshot, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "version": snap.version,
        "state": {k: v.cpu() for k, v in snap.state.items()},
        "network": snap.network,
        "grid": snap.grid,
        "meta": snap.meta,
    }, path)
    return path


def load_snapshot(path: str | Path) -> ParamSnapshot:
    raw = torch.load(Path(path), map_location="cpu", weights_only=False)
    return ParamSnapshot(state=raw["state"], network=raw["network"], grid=raw["grid"],
                         version=raw["version"], meta=raw.get("meta", {}))


def model_from_snapshot(snap: ParamSnapshot, device: Optional[str] = None) -> DARRModel:
    network = from_dict(NetworkConfig, snap.network)
    grid = from_dict(GridConfig, snap.grid)
    dtype = next(iter(snap.state.values())).dtype
    model = build_model(network, grid, dtype=dtype, device=device)
    return restore(model, snap)


# =========================
# Checkpoint archive
# =========================
def save_checkpoint(path: str | Path, model: DARRModel, optimizer: Optional[torch.optim.Optimizer] = None,
                    iteration: int = 0, variant: str = "darr",
                    experiment: Optional[Dict[str, Any]] = None) -> Path:
    """Single archive: versioned header, config echo, four groups, optimizer state, iteration."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    network, grid = _config_echo(model)
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "variant": variant,
        "iteration": int(iteration),
        "network": network,
        "grid": grid,
        "experiment": experiment or {},
        "groups": grouped_state(model),
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "checksum": checksum(model),
    }, path)
    return path


def load_checkpoint(path: str | Path, device: Optional[str] = None) -> Tuple[DARRModel, Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise IntegrityError(f"Checkpoint not found: {path}")
    raw = torch.load(path, map_location="cpu", weights_only=False)
    if raw.get("format") != CHECKPOINT_FORMAT:
        raise IntegrityError(f"{path} is not a {CHECKPOINT_FORMAT} archive")
    if raw.get("version") != CHECKPOINT_VERSION:
        raise IntegrityError(f"{path}: checkpoint version {raw.get('version')} != {CHECKPOINT_VERSION}")

    network = from_dict(NetworkConfig, raw["network"])
    grid = from_dict(GridConfig, raw["grid"])
    groups = raw["groups"]
    dtype = next(iter(groups["en"].values())).dtype
    model = build_model(network, grid, dtype=dtype)
    if set(groups) != set(model.groups()):
        raise IntegrityError(f"{path}: parameter groups {sorted(groups)} do not match the config")
    for gname, module in model.groups().items():
        module.load_state_dict(groups[gname], strict=True)
    if checksum(model) != raw.get("checksum"):
        raise IntegrityError(f"{path}: parameter checksum mismatch")
    if device is not None:
        model = model.to(device)
    meta = {k: raw[k] for k in ("variant", "iteration", "experiment", "optimizer", "network", "grid")}
    return model, meta
