from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from core.config import load_json, save_json
from core.errors import ConfigurationError, IntegrityError
from core.volume import SegmentationMask, Volume

MANIFEST_NAME = "manifest.json"
FORMAT_VERSION = 1


@dataclass
class Case:
    case_id: str
    volume: Volume
    mask: Optional[SegmentationMask] = None
    domain: str = "source"
    seed: int = 0


# =========================
# Portable raw + sidecar format
# =========================
def _sidecar_path(raw_path: Path) -> Path:
    return raw_path.with_suffix(".json")


def write_volume(vol: Volume, raw_path: str | Path) -> Path:
    """Little-endian float32, x-fastest, plus a JSON sidecar with shape/spacing/dtype."""
    raw_path = Path(raw_path)
    raw_path.parent.mkdir(parents=True, exist_ok=True)
    raw_path.write_bytes(np.asarray(vol.data, dtype="<f4").tobytes(order="F"))
    save_json({
        "format_version": FORMAT_VERSION,
        "kind": "volume",
        "shape": list(vol.shape),
        "spacing": list(vol.spacing),
        "dtype": "float32",
        "byte_order": "little",
        "order": "x-fastest",
    }, _sidecar_path(raw_path))
    return raw_path


def write_mask(mask: SegmentationMask, raw_path: str | Path) -> Path:
    raw_path = Path(raw_path)
    raw_path.parent.mkdir(parents=True, exist_ok=True)
    raw_path.write_bytes(np.asarray(mask.labels, dtype="<u2").tobytes(order="F"))
    save_json({
        "format_version": FORMAT_VERSION,
        "kind": "mask",
        "shape": list(mask.shape),
        "num_classes": int(mask.num_classes),
        "dtype": "uint16",
        "byte_order": "little",
        "order": "x-fastest",
    }, _sidecar_path(raw_path))
    return raw_path


def _read_raw(raw_path: Path, expected_kind: str) -> tuple[np.ndarray, Dict[str, Any]]:
    sidecar = _sidecar_path(raw_path)
    if not raw_path.exists() or not sidecar.exists():
        raise ConfigurationError(f"Missing raw file or sidecar for {raw_path}")
    meta = load_json(sidecar)
    if meta.get("kind") != expected_kind:
        raise IntegrityError(f"{raw_path}: expected a {expected_kind}, sidecar says {meta.get('kind')!r}")
    dtype = {"float32": "<f4", "uint16": "<u2"}[meta["dtype"]]
    shape = tuple(int(s) for s in meta["shape"])
    flat = np.frombuffer(raw_path.read_bytes(), dtype=dtype)
    if flat.size != int(np.prod(shape)):
        raise IntegrityError(f"{raw_path}: {flat.size} values on disk, sidecar shape {shape} needs {np.prod(shape)}")
    return flat.reshape(shape, order="F"), meta


def read_volume(raw_path: str | Path) -> Volume:
    data, meta = _read_raw(Path(raw_path), "volume")
    return Volume(data=data.astype(np.float32), spacing=tuple(meta["spacing"]))


def read_mask(raw_path: str | Path) -> SegmentationMask:
    labels, meta = _read_raw(Path(raw_path), "mask")
    return SegmentationMask(labels=labels.astype(np.int64), num_classes=int(meta["num_classes"]))


# =========================
# NIfTI import
# =========================
def import_nifti_volume(path: str | Path) -> Volume:
    import nibabel as nib

    img = nib.load(str(path))
    data = np.asarray(img.get_fdata(dtype=np.float32))
    if data.ndim == 4 and data.shape[3] == 1:
        data = data[..., 0]
    spacing = tuple(float(z) for z in img.header.get_zooms()[:3])
    return Volume(data=data, spacing=spacing)


def import_nifti_mask(path: str | Path, num_classes: Optional[int] = None) -> SegmentationMask:
    import nibabel as nib

    img = nib.load(str(path))
    labels = np.rint(np.asarray(img.dataobj)).astype(np.int64)
    if labels.ndim == 4 and labels.shape[3] == 1:
        labels = labels[..., 0]
    n = int(num_classes) if num_classes is not None else int(labels.max()) + 1
    return SegmentationMask(labels=labels, num_classes=n)


# =========================
# Datasets
# =========================
def write_dataset(cases: List[Case], out_dir: str | Path, domain: Optional[str] = None) -> Path:
    """Writes every case plus a manifest listing id, paths, domain tag and seed."""
    out_dir = Path(out_dir)
    entries = []
    for case in cases:
        vol_path = write_volume(case.volume, out_dir / "volumes" / f"{case.case_id}.raw")
        entry = {
            "case_id": case.case_id,
            "volume": os.path.relpath(vol_path, out_dir),
            "mask": None,
            "domain": case.domain,
            "seed": int(case.seed),
        }
        if case.mask is not None:
            mask_path = write_mask(case.mask, out_dir / "masks" / f"{case.case_id}.raw")
            entry["mask"] = os.path.relpath(mask_path, out_dir)
        entries.append(entry)
    manifest = out_dir / MANIFEST_NAME
    save_json({
        "format_version": FORMAT_VERSION,
        "domain": domain or (cases[0].domain if cases else "unknown"),
        "cases": entries,
    }, manifest)
    return manifest


def read_manifest(data_dir: str | Path) -> Dict[str, Any]:
    path = Path(data_dir) / MANIFEST_NAME
    if not path.exists():
        raise ConfigurationError(f"data: no {MANIFEST_NAME} in {data_dir}")
    return load_json(path)


def load_dataset(data_dir: str | Path, with_masks: bool = True) -> List[Case]:
    data_dir = Path(data_dir)
    manifest = read_manifest(data_dir)
    cases = []
    for entry in manifest.get("cases", []):
        mask = None
        if with_masks and entry.get("mask"):
            mask = read_mask(data_dir / entry["mask"])
        cases.append(Case(
            case_id=entry["case_id"],
            volume=read_volume(data_dir / entry["volume"]),
            mask=mask,
            domain=entry.get("domain", manifest.get("domain", "unknown")),
            seed=int(entry.get("seed", 0)),
        ))
    if not cases:
        raise ConfigurationError(f"data: manifest in {data_dir} lists no cases")
    return cases
