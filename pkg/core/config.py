# core/config.py
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Type, TypeVar

from core.errors import ConfigurationError
from core.volume import DEFAULT_PATCH_SHAPE, DEFAULT_SQUEEZE_FACTOR, PatchGrid

T = TypeVar("T")

VARIANTS = ("lower_bound", "vnet_puzzle", "vnet_sr", "darr")
UPPER_BOUND = "upper_bound"


def _coerce(value: Any, default: Any, where: str) -> Any:
    """Checks a JSON value against the type of the field default; JSON lists become tuples."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"{where}: expected bool, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{where}: expected int, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{where}: expected number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigurationError(f"{where}: expected string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigurationError(f"{where}: expected a list, got {value!r}")
        item = default[0] if default else None
        return tuple(_coerce(v, item, f"{where}[{i}]") for i, v in enumerate(value))
    return value


def from_dict(cls: Type[T], data: Optional[Dict[str, Any]], section: Optional[str] = None) -> T:
    """Builds a config dataclass from a dict, rejecting unknown keys and mistyped values."""
    section = section or cls.__name__
    if data is not None and not isinstance(data, dict):
        raise ConfigurationError(f"{section}: expected an object, got {data!r}")
    data = dict(data or {})
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigurationError(f"{section}: unknown field(s) {', '.join(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        kwargs[name] = _coerce(value, getattr(defaults, name), f"{section}.{name}")
    return cls(**kwargs)


def to_dict(obj: Any) -> Dict[str, Any]:
    return dataclasses.asdict(obj)


# =========================
# Geometry
# =========================
@dataclass
class GridConfig:
    W: int = 3
    H: int = 3
    L: int = 3
    patch_shape: Tuple[int, int, int] = DEFAULT_PATCH_SHAPE
    squeeze_factor: int = DEFAULT_SQUEEZE_FACTOR

    def validate(self) -> None:
        if min(self.W, self.H, self.L) < 1:
            raise ConfigurationError(f"grid: W, H, L must be >= 1, got {(self.W, self.H, self.L)}")
        if len(self.patch_shape) != 3 or min(self.patch_shape) < 1:
            raise ConfigurationError(f"grid.patch_shape: must be 3 positive ints, got {self.patch_shape}")
        if self.squeeze_factor < 1:
            raise ConfigurationError(f"grid.squeeze_factor: must be >= 1, got {self.squeeze_factor}")
        if self.patch_shape[2] % self.squeeze_factor:
            raise ConfigurationError(
                f"grid.squeeze_factor: axial patch extent {self.patch_shape[2]} "
                f"is not divisible by {self.squeeze_factor}"
            )

    def to_grid(self) -> PatchGrid:
        return PatchGrid(self.W, self.H, self.L, tuple(self.patch_shape))


# =========================
# Phantoms
# =========================
@dataclass
class OrganTemplate:
    name: str = "organ"
    half_axes: Tuple[float, float, float] = (8.0, 8.0, 8.0)
    intensity: float = 100.0


def _default_organs() -> List[OrganTemplate]:
    # half-axes in voxels for the default 96^3 phantom
    return [
        OrganTemplate("aorta", (4.0, 4.0, 26.0), 235.0),
        OrganTemplate("gallbladder", (5.0, 5.0, 6.0), 60.0),
        OrganTemplate("kidney_l", (7.0, 6.0, 8.0), 185.0),
        OrganTemplate("kidney_r", (7.0, 6.0, 8.0), 160.0),
        OrganTemplate("liver", (16.0, 14.0, 12.0), 135.0),
        OrganTemplate("pancreas", (14.0, 4.0, 4.0), 110.0),
        OrganTemplate("spleen", (8.0, 8.0, 8.0), 210.0),
        OrganTemplate("stomach", (10.0, 8.0, 9.0), 85.0),
    ]


def _default_offsets() -> List[Tuple[float, float, float]]:
    # centre offsets from the body anchor as a fraction of the volume extent
    return [
        (0 / 96, 12 / 96, 0 / 96),
        (-18 / 96, -18 / 96, -4 / 96),
        (24 / 96, 18 / 96, -8 / 96),
        (-22 / 96, 24 / 96, -12 / 96),
        (-28 / 96, -8 / 96, 19 / 96),
        (8 / 96, -4 / 96, -18 / 96),
        (30 / 96, 2 / 96, 13 / 96),
        (12 / 96, -22 / 96, 7 / 96),
    ]


@dataclass
class PhantomSpec:
    organ_templates: List[OrganTemplate] = field(default_factory=_default_organs)
    relative_offsets: List[Tuple[float, float, float]] = field(default_factory=_default_offsets)
    jitter: float = 0.02
    background_intensity: float = 0.0
    texture_sigma: float = 2.0
    base_shape: Tuple[int, int, int] = (96, 96, 96)
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    @property
    def num_organs(self) -> int:
        return len(self.organ_templates)

    @property
    def organ_names(self) -> List[str]:
        return [o.name for o in self.organ_templates]

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> "PhantomSpec":
        if data is not None and not isinstance(data, dict):
            raise ConfigurationError(f"phantom: expected an object, got {data!r}")
        data = dict(data or {})
        organs = data.pop("organ_templates", None)
        offsets = data.pop("relative_offsets", None)
        spec = from_dict(cls, data, "phantom")
        if organs is not None:
            if not isinstance(organs, list):
                raise ConfigurationError(f"phantom.organ_templates: expected a list, got {organs!r}")
            spec.organ_templates = [
                from_dict(OrganTemplate, o, f"phantom.organ_templates[{i}]") for i, o in enumerate(organs)
            ]
        if offsets is not None:
            if not isinstance(offsets, list):
                raise ConfigurationError(f"phantom.relative_offsets: expected a list, got {offsets!r}")
            spec.relative_offsets = [
                _coerce(o, (0.0, 0.0, 0.0), f"phantom.relative_offsets[{i}]") for i, o in enumerate(offsets)
            ]
        return spec


@dataclass
class DomainShift:
    axial_spacing_factor: int = 1
    intensity_gain: float = 1.0
    intensity_bias: float = 0.0
    noise_sigma: float = 0.0
    blur_sigma: float = 0.0

    def validate(self) -> None:
        values = dataclasses.astuple(self)
        if any(v != v or v in (float("inf"), float("-inf")) for v in values):
            raise ConfigurationError(f"shift: all fields must be finite, got {self}")
        if int(self.axial_spacing_factor) != self.axial_spacing_factor or self.axial_spacing_factor < 1:
            raise ConfigurationError(
                f"shift.axial_spacing_factor: must be an integer >= 1, got {self.axial_spacing_factor}"
            )
        if self.noise_sigma < 0:
            raise ConfigurationError(f"shift.noise_sigma: must be >= 0, got {self.noise_sigma}")
        if self.blur_sigma < 0:
            raise ConfigurationError(f"shift.blur_sigma: must be >= 0, got {self.blur_sigma}")

    @classmethod
    def default_target(cls, dynamic_range: float = 250.0) -> "DomainShift":
        return cls(
            axial_spacing_factor=4,
            intensity_gain=1.1,
            intensity_bias=5.0,
            noise_sigma=0.02 * dynamic_range,
            blur_sigma=1.0,
        )


# =========================
# Networks and optimization
# =========================
@dataclass
class NetworkConfig:
    in_channels: int = 1
    encoder_widths: Tuple[int, ...] = (16, 32, 64, 128, 256)
    decoder_widths: Tuple[int, ...] = (128, 64, 32, 16)
    sr_upscale: int = DEFAULT_SQUEEZE_FACTOR
    sr_width: int = 32
    sr_blocks: int = 4
    puzzle_hidden: int = 512
    puzzle_pool: str = "avg"  # avg | flatten
    num_classes: int = 9
    use_sr: bool = True
    use_puzzle: bool = True

    @property
    def depth(self) -> int:
        return len(self.encoder_widths) - 1

    def validate(self, grid: Optional[GridConfig] = None) -> None:
        if len(self.encoder_widths) < 2:
            raise ConfigurationError("network.encoder_widths: needs a stem width and at least one stage")
        if len(self.decoder_widths) != self.depth:
            raise ConfigurationError(
                f"network.decoder_widths: expected {self.depth} widths to mirror the encoder, "
                f"got {len(self.decoder_widths)}"
            )
        if self.num_classes < 1:
            raise ConfigurationError(f"network.num_classes: must be >= 1, got {self.num_classes}")
        if self.puzzle_pool not in ("avg", "flatten"):
            raise ConfigurationError(f"network.puzzle_pool: must be 'avg' or 'flatten', got {self.puzzle_pool!r}")
        if self.sr_upscale < 1 or self.sr_blocks < 0 or self.sr_width < 1:
            raise ConfigurationError("network: sr_upscale >= 1, sr_blocks >= 0 and sr_width >= 1 are required")
        if grid is not None:
            if self.sr_upscale != grid.squeeze_factor:
                raise ConfigurationError(
                    f"network.sr_upscale: {self.sr_upscale} must equal grid.squeeze_factor {grid.squeeze_factor}"
                )
            step = 2 ** self.depth
            if any(p % step for p in grid.patch_shape):
                raise ConfigurationError(
                    f"grid.patch_shape: {grid.patch_shape} must be divisible by 2^depth = {step}"
                )
            # InstanceNorm needs more than one voxel at the bottleneck
            if any(p // step < 2 for p in grid.patch_shape):
                raise ConfigurationError(
                    f"grid.patch_shape: {grid.patch_shape} leaves a bottleneck below 2 voxels per axis "
                    f"at network.depth = {self.depth}; use patches of at least {2 * step}"
                )


# (use_sr, use_puzzle) per ablation row; the upper bound is a plain V-Net on target data
VARIANT_MODULES: Dict[str, Tuple[bool, bool]] = {
    "lower_bound": (False, False),
    "vnet_puzzle": (False, True),
    "vnet_sr": (True, False),
    "darr": (True, True),
    UPPER_BOUND: (False, False),
}


def variant_network(network: NetworkConfig, variant: str) -> NetworkConfig:
    if variant not in VARIANT_MODULES:
        raise ConfigurationError(f"variant: unknown {variant!r}, expected one of {', '.join(VARIANT_MODULES)}")
    use_sr, use_puzzle = VARIANT_MODULES[variant]
    return dataclasses.replace(network, use_sr=use_sr, use_puzzle=use_puzzle)


@dataclass
class LossWeights:
    lambda_sr: float = 30.0
    lambda_p: float = 0.1

    def validate(self) -> None:
        if self.lambda_sr < 0 or self.lambda_p < 0:
            raise ConfigurationError(f"weights: lambda_sr and lambda_p must be >= 0, got {self}")


@dataclass
class TrainConfig:
    iterations: int = 40000
    batch_size: int = 1
    learning_rate: float = 3e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.0
    seed: int = 0
    checkpoint_every: int = 5000
    log_every: int = 1

    def validate(self) -> None:
        if self.iterations < 1:
            raise ConfigurationError(f"train.iterations: must be >= 1, got {self.iterations}")
        if self.batch_size < 1:
            raise ConfigurationError(f"train.batch_size: must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"train.learning_rate: must be > 0, got {self.learning_rate}")


@dataclass
class AdaptConfig:
    iterations: int = 30
    learning_rate: float = 1e-5
    optimizer: str = "sgd"
    permutations_per_iter: int = 1
    eval_permutations: int = 4
    seed: int = 0

    def validate(self) -> None:
        if self.iterations < 0:
            raise ConfigurationError(f"adapt.iterations: must be >= 0, got {self.iterations}")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"adapt.learning_rate: must be > 0, got {self.learning_rate}")
        if self.optimizer != "sgd":
            raise ConfigurationError(f"adapt.optimizer: only 'sgd' is supported, got {self.optimizer!r}")
        if self.permutations_per_iter < 1 or self.eval_permutations < 1:
            raise ConfigurationError("adapt: permutations_per_iter and eval_permutations must be >= 1")


# =========================
# Experiment
# =========================
@dataclass
class ExperimentConfig:
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    source_shift: DomainShift = field(default_factory=DomainShift)
    target_shift: DomainShift = field(default_factory=DomainShift.default_target)
    grid: GridConfig = field(default_factory=GridConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    intensity_scale: float = 250.0
    precision: str = "float32"
    n_source_cases: int = 20
    n_target_cases: int = 10
    output_dir: str = "runs/default"
    seed: int = 0

    def validate(self) -> None:
        from tools.phantom_tools import validate_spec

        self.source_shift.validate()
        self.target_shift.validate()
        validate_spec(self.phantom, [self.source_shift, self.target_shift])
        self.grid.validate()
        self.network.validate(self.grid)
        self.train.validate()
        self.adapt.validate()
        self.weights.validate()
        if self.precision not in ("float32", "float64"):
            raise ConfigurationError(f"precision: must be 'float32' or 'float64', got {self.precision!r}")
        if not self.intensity_scale > 0:
            raise ConfigurationError(f"intensity_scale: must be > 0, got {self.intensity_scale}")
        if self.network.num_classes < self.phantom.num_organs + 1:
            raise ConfigurationError(
                f"network.num_classes: {self.network.num_classes} cannot hold "
                f"{self.phantom.num_organs} organs plus background"
            )

    def to_dict(self) -> Dict[str, Any]:
        return to_dict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base_dir: Optional[Path] = None) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigurationError(f"config: expected an object, got {type(data).__name__}")
        data = dict(data)
        base_dir = base_dir or Path(".")
        sections: Dict[str, type] = {
            "phantom": PhantomSpec,
            "source_shift": DomainShift,
            "target_shift": DomainShift,
            "grid": GridConfig,
            "network": NetworkConfig,
            "train": TrainConfig,
            "adapt": AdaptConfig,
            "weights": LossWeights,
        }
        kwargs: Dict[str, Any] = {}
        for key, section_cls in sections.items():
            if key not in data:
                continue
            value = data.pop(key)
            # a string is a reference to a JSON file next to the config
            if isinstance(value, str):
                value = load_json(_resolve(base_dir, value, key))
            if section_cls is PhantomSpec:
                kwargs[key] = PhantomSpec.from_dict(value)
            else:
                kwargs[key] = from_dict(section_cls, value, key)
        plain = {f.name for f in dataclasses.fields(cls)} - set(sections)
        unknown = sorted(set(data) - plain)
        if unknown:
            raise ConfigurationError(f"config: unknown field(s) {', '.join(unknown)}")
        defaults = cls()
        for name, value in data.items():
            kwargs[name] = _coerce(value, getattr(defaults, name), name)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config: file not found: {path}")
        return cls.from_dict(load_json(path), base_dir=path.parent)


def _resolve(base_dir: Path, ref: str, key: str) -> Path:
    p = Path(ref)
    if not p.is_absolute():
        p = base_dir / p
    if not p.exists():
        raise ConfigurationError(f"{key}: referenced file not found: {p}")
    return p


def load_json(path: str | Path) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: invalid JSON ({e})") from e


def save_json(obj: Any, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, default=str)


def write_config_echo(cfg: ExperimentConfig, out_dir: str | Path, extra: Optional[Dict[str, Any]] = None) -> Path:
    """Writes the resolved config next to the artifacts it produced."""
    echo = {"config": cfg.to_dict()}
    if extra:
        echo.update(extra)
    path = Path(out_dir) / "config_echo.json"
    save_json(echo, path)
    return path
