"""
The three learnable components and the model that groups them.

  sr       axial super-resolution network (residual trunk + subpixel upsampling)
  encoder  V-Net style encoder, shared by segmentation and puzzle branches
  decoder  V-Net style decoder with skip connections
  puzzle   jigsaw head: pooled features of all n patches -> n x n location logits

Tensors are channels-first: a batch of patches is (B, C, X, Y, Z), z axial.
"""
from __future__ import annotations

from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from core.config import GridConfig, NetworkConfig
from core.errors import ConfigurationError, ShapeError

GROUP_NAMES = ("sr", "en", "de", "p")


class EncoderOutput(NamedTuple):
    features: torch.Tensor      # (B, C, s, s, s); one FeatureBlock per patch
    skips: List[torch.Tensor]   # full resolution first


class ConvBlock(nn.Module):
    """Two conv layers; `norm_out=False` leaves the last one un-normalized so pooled features keep their level."""

    def __init__(self, in_ch: int, out_ch: int, norm_out: bool = True):
        super().__init__()
        layers = [
            nn.Conv3d(in_ch, out_ch, kernel_size=3, padding=1),
            nn.InstanceNorm3d(out_ch, affine=True),
            nn.ReLU(inplace=True),
            nn.Conv3d(out_ch, out_ch, kernel_size=3, padding=1),
        ]
        if norm_out:
            layers.append(nn.InstanceNorm3d(out_ch, affine=True))
        layers.append(nn.ReLU(inplace=True))
        self.block = nn.Sequential(*layers)

    def forward(self, x):
        return self.block(x)


class DownStage(nn.Module):
    """Strided 2x2x2 convolution (V-Net down-conversion) followed by a conv block."""

    def __init__(self, in_ch: int, out_ch: int, norm_out: bool = True):
        super().__init__()
        self.down = nn.Sequential(
            nn.Conv3d(in_ch, out_ch, kernel_size=2, stride=2),
            nn.InstanceNorm3d(out_ch, affine=True),
            nn.ReLU(inplace=True),
        )
        self.conv = ConvBlock(out_ch, out_ch, norm_out=norm_out)

    def forward(self, x):
        return self.conv(self.down(x))


class UpStage(nn.Module):
    def __init__(self, in_ch: int, skip_ch: int, out_ch: int):
        super().__init__()
        self.up = nn.ConvTranspose3d(in_ch, out_ch, kernel_size=2, stride=2)
        self.conv = ConvBlock(out_ch + skip_ch, out_ch)

    def forward(self, x, skip):
        x = self.up(x)
        return self.conv(torch.cat([x, skip], dim=1))


class AxialPixelShuffle(nn.Module):
    r"""Rearranges (B, C*r, X, Y, Z) into (B, C, X, Y, Z*r): sub-pixel upsampling along z only."""

    def __init__(self, upscale_factor: int):
        super().__init__()
        self.upscale_factor = upscale_factor

    def forward(self, x):
        r = self.upscale_factor
        if r == 1:
            return x
        B, Cr, X, Y, Z = x.shape
        if Cr % r:
            raise ShapeError(f"AxialPixelShuffle: {Cr} channels not divisible by factor {r}")
        x = x.view(B, Cr // r, r, X, Y, Z)
        x = x.permute(0, 1, 3, 4, 5, 2).contiguous()
        return x.view(B, Cr // r, X, Y, Z * r)

    def extra_repr(self):
        return f"upscale_factor={self.upscale_factor}"


class ResidualBlock(nn.Module):
    def __init__(self, ch: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv3d(ch, ch, kernel_size=3, padding=1),
            nn.ReLU(inplace=True),
            nn.Conv3d(ch, ch, kernel_size=3, padding=1),
        )

    def forward(self, x):
        return x + self.body(x)


def axial_interpolate(lowres: torch.Tensor, patch_shape: Sequence[int]) -> torch.Tensor:
    """Trilinear upsampling to the high-resolution patch shape; the no-SR baseline."""
    if tuple(lowres.shape[-3:]) == tuple(patch_shape):
        return lowres
    return F.interpolate(lowres, size=tuple(patch_shape), mode="trilinear", align_corners=False)


class SRNet(nn.Module):
    """
    Generator-style super-resolution: residual convolutional trunk, one axial
    sub-pixel stage, and a global skip from the interpolated input.
    """

    def __init__(self, cfg: NetworkConfig, patch_shape: Sequence[int]):
        super().__init__()
        w, r = cfg.sr_width, cfg.sr_upscale
        self.patch_shape = tuple(patch_shape)
        self.upscale = r
        self.head = nn.Sequential(nn.Conv3d(cfg.in_channels, w, kernel_size=3, padding=1), nn.ReLU(inplace=True))
        self.trunk = nn.Sequential(*[ResidualBlock(w) for _ in range(cfg.sr_blocks)])
        self.upsample = nn.Sequential(
            nn.Conv3d(w, w * r, kernel_size=3, padding=1),
            AxialPixelShuffle(r),
            nn.ReLU(),
        )
        self.tail = nn.Conv3d(w, cfg.in_channels, kernel_size=3, padding=1)

    def forward(self, lowres):
        feat = self.head(lowres)
        feat = feat + self.trunk(feat)
        return self.tail(self.upsample(feat)) + axial_interpolate(lowres, self.patch_shape)


class Encoder(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        widths = cfg.encoder_widths
        self.stem = ConvBlock(cfg.in_channels, widths[0])
        self.stages = nn.ModuleList(
            DownStage(widths[i], widths[i + 1], norm_out=(i < cfg.depth - 1)) for i in range(cfg.depth)
        )

    def forward(self, x) -> EncoderOutput:
        x = self.stem(x)
        skips = []
        for stage in self.stages:
            skips.append(x)
            x = stage(x)
        return EncoderOutput(features=x, skips=skips)


class Decoder(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        enc, dec = cfg.encoder_widths, cfg.decoder_widths
        stages = []
        in_ch = enc[-1]
        for i, out_ch in enumerate(dec):
            stages.append(UpStage(in_ch, enc[cfg.depth - 1 - i], out_ch))
            in_ch = out_ch
        self.stages = nn.ModuleList(stages)
        self.head = nn.Conv3d(in_ch, cfg.num_classes, kernel_size=1)

    def forward(self, enc_out: EncoderOutput):
        x = enc_out.features
        for stage, skip in zip(self.stages, reversed(enc_out.skips)):
            x = stage(x, skip)
        return self.head(x)


class PuzzleHead(nn.Module):
    """
    Flatten each patch's features, concatenate in permuted order, two
    fully-connected layers, reshape to n x n location logits.
    """

    def __init__(self, cfg: NetworkConfig, n: int, feature_shape: Tuple[int, int, int, int]):
        super().__init__()
        self.n = n
        self.pool = cfg.puzzle_pool
        self.feature_shape = tuple(feature_shape)
        c = feature_shape[0]
        per_patch = c if self.pool == "avg" else c * feature_shape[1] * feature_shape[2] * feature_shape[3]
        self.fc = nn.Sequential(
            nn.Linear(n * per_patch, cfg.puzzle_hidden),
            nn.ReLU(inplace=True),
            nn.Linear(cfg.puzzle_hidden, n * n),
        )

    def forward(self, features):
        if features.shape[0] != self.n or tuple(features.shape[1:]) != self.feature_shape:
            raise ShapeError(
                f"Puzzle head expects {self.n} feature blocks of shape {self.feature_shape}, "
                f"got {tuple(features.shape)}"
            )
        if self.pool == "avg":
            flat = features.mean(dim=(2, 3, 4))
        else:
            flat = features.flatten(start_dim=1)
        return self.fc(flat.reshape(1, -1)).view(self.n, self.n)


class DARRModel(nn.Module):
    """
    The four parameter groups theta_sr, theta_en, theta_de, theta_p.
    `sr` is None when SR is disabled; `puzzle` is None when the puzzle module is.
    """

    def __init__(self, cfg: NetworkConfig, grid: GridConfig):
        super().__init__()
        cfg.validate(grid)
        self.cfg = cfg
        self.grid_cfg = grid
        self.patch_shape = tuple(grid.patch_shape)
        px, py, pz = self.patch_shape
        self.lowres_shape = (px, py, pz // grid.squeeze_factor)
        self.n = grid.W * grid.H * grid.L

        self.sr = SRNet(cfg, self.patch_shape) if cfg.use_sr else None
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)
        step = 2 ** cfg.depth
        feature_shape = (cfg.encoder_widths[-1], px // step, py // step, pz // step)
        self.puzzle = PuzzleHead(cfg, self.n, feature_shape) if cfg.use_puzzle else None

    def groups(self) -> Dict[str, nn.Module]:
        groups = {"sr": self.sr, "en": self.encoder, "de": self.decoder, "p": self.puzzle}
        return {k: v for k, v in groups.items() if v is not None}

    def group_parameters(self, names: Sequence[str]) -> List[nn.Parameter]:
        params: List[nn.Parameter] = []
        for name, module in self.groups().items():
            if name in names:
                params.extend(module.parameters())
        return params

    @property
    def dtype(self) -> torch.dtype:
        return next(self.encoder.parameters()).dtype

    @property
    def device(self) -> torch.device:
        return next(self.encoder.parameters()).device

    def upsample(self, lowres):
        return sr_forward(lowres, self)

    def segment(self, lowres):
        """squeezed patches -> (SR | interpolation) -> encoder -> decoder logits."""
        return decoder_forward(encoder_forward(self.upsample(lowres), self), self)

    def forward(self, lowres):
        return self.segment(lowres)


# =========================
# Functional forms of the four components
# =========================
def _check_patch(x: torch.Tensor, expected: Sequence[int], what: str) -> None:
    if x.dim() != 5 or tuple(x.shape[-3:]) != tuple(expected):
        raise ShapeError(f"{what}: expected (B, C, {', '.join(map(str, expected))}), got {tuple(x.shape)}")


def sr_forward(lowres: torch.Tensor, model: DARRModel) -> torch.Tensor:
    """Squeezed patches (B, 1, px, py, pz/f) -> (B, 1, px, py, pz)."""
    _check_patch(lowres, model.lowres_shape, "sr_forward")
    if model.sr is None:
        return axial_interpolate(lowres, model.patch_shape)
    return model.sr(lowres)


def encoder_forward(patch: torch.Tensor, model: DARRModel) -> EncoderOutput:
    _check_patch(patch, model.patch_shape, "encoder_forward")
    return model.encoder(patch)


def decoder_forward(enc_out: EncoderOutput, model: DARRModel) -> torch.Tensor:
    """Per-voxel class logits (B, num_classes, px, py, pz)."""
    expected = model.cfg.encoder_widths[-1]
    if enc_out.features.shape[1] != expected or len(enc_out.skips) != model.cfg.depth:
        raise ShapeError(
            f"decoder_forward: features with {enc_out.features.shape[1]} channels and "
            f"{len(enc_out.skips)} skips do not match the network config"
        )
    return model.decoder(enc_out)


def puzzle_logits(features: torch.Tensor, model: DARRModel) -> torch.Tensor:
    if model.puzzle is None:
        raise ConfigurationError("This model was built without the puzzle module (network.use_puzzle=false)")
    return model.puzzle(features)


def puzzle_forward(features: torch.Tensor, model: DARRModel) -> torch.Tensor:
    """n feature blocks in permuted order -> n x n matrix; row a is patch a's location distribution."""
    return torch.softmax(puzzle_logits(features, model), dim=1)


def build_model(cfg: NetworkConfig, grid: GridConfig, dtype: torch.dtype = torch.float32,
                device: Optional[torch.device | str] = None, seed: Optional[int] = None) -> DARRModel:
    if seed is not None:
        torch.manual_seed(seed)
    model = DARRModel(cfg, grid).to(dtype=dtype)
    if device is not None:
        model = model.to(device)
    return model
