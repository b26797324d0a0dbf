"""Multi-stage dual-encoder network and the patch discriminator.

Each stage owns a vision encoder (stride-2 convolutions, each followed by
ReLU then batch normalization), a two-layer fully-connected physical encoder
whose code is tiled over the bottleneck grid, and a shared skip-connected
transposed-convolution decoder. A strided head maps the full-resolution
decoder output to the pressure-map grid, and a unit-range sigmoid keeps
predictions in [0, 1]. Stages are stacked with independent weights: stage
k > 1 sees the input image concatenated with stage k-1's prediction
upsampled to image resolution, so parameter count grows linearly with the
stage count.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .core import VALID_BETA_LENGTHS, InvalidConfigError, InvalidInputError

CHECKPOINT_FORMAT = "pressure-checkpoint/1"

#: Margin beyond [0,1] that normalized physique entries may reach before the
#: forward pass warns; entries are clamped to [0,1] either way.
BETA_CLAMP_WARN_MARGIN = 0.1


@dataclass(frozen=True)
class StageConfig:
    """Geometry of one stage: vision input size and encoder/bottleneck widths."""

    input_size: tuple = (256, 256)
    base_channels: int = 64
    depth: int = 4
    code_channels: int = 64

    def __post_init__(self):
        h, w = self.input_size
        object.__setattr__(self, "input_size", (int(h), int(w)))
        if self.base_channels < 1 or self.depth < 1 or self.code_channels < 1:
            raise InvalidConfigError("base_channels, depth and code_channels must be positive")
        scale = 2**self.depth
        if h < scale or w < scale or h % scale or w % scale:
            raise InvalidConfigError(
                f"input size {self.input_size} must be divisible by 2^depth = {scale}"
            )


@dataclass(frozen=True)
class NetworkConfig:
    """Whole-network configuration: stage stack, physique length, output grid."""

    stage: StageConfig = field(default_factory=StageConfig)
    stages: int = 1
    beta_length: int = 10
    in_channels: int = 3
    output_size: tuple = (64, 32)
    output_activation: str = "sigmoid_unit_range"

    def __post_init__(self):
        m, n = self.output_size
        object.__setattr__(self, "output_size", (int(m), int(n)))
        if self.stages < 1:
            raise InvalidConfigError(f"stages must be >= 1, got {self.stages}")
        if self.beta_length not in VALID_BETA_LENGTHS:
            raise InvalidConfigError(
                f"beta_length must be one of {VALID_BETA_LENGTHS}, got {self.beta_length}"
            )
        if self.in_channels not in (1, 3):
            raise InvalidConfigError(f"in_channels must be 1 (LWIR) or 3 (RGB), got {self.in_channels}")
        if self.output_activation != "sigmoid_unit_range":
            raise InvalidConfigError(
                f"unsupported output_activation {self.output_activation!r}"
            )
        h, w = self.stage.input_size
        if m < 1 or n < 1 or h % m or w % n:
            raise InvalidConfigError(
                f"output size {self.output_size} must divide input size {self.stage.input_size}"
            )

    def to_dict(self) -> dict:
        return {
            "stages": self.stages,
            "beta_length": self.beta_length,
            "in_channels": self.in_channels,
            "output_size": list(self.output_size),
            "output_activation": self.output_activation,
            "stage": {
                "input_size": list(self.stage.input_size),
                "base_channels": self.stage.base_channels,
                "depth": self.stage.depth,
                "code_channels": self.stage.code_channels,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        stage = d["stage"]
        return cls(
            stage=StageConfig(
                input_size=tuple(stage["input_size"]),
                base_channels=stage["base_channels"],
                depth=stage["depth"],
                code_channels=stage["code_channels"],
            ),
            stages=d["stages"],
            beta_length=d["beta_length"],
            in_channels=d["in_channels"],
            output_size=tuple(d["output_size"]),
            output_activation=d["output_activation"],
        )


def _encoder_channels(base: int, depth: int) -> list:
    # channel growth base -> 2x -> 4x -> 8x, capped at 8x for deeper stacks
    return [base * 2 ** min(i, 3) for i in range(depth)]


def _head_geometry(stride: int):
    """Kernel/padding for one axis of the strided head so that an input of
    length L·stride maps to exactly L."""
    if stride == 1:
        return 3, 1
    if stride % 2 == 0:
        return 2 * stride, stride // 2
    return 2 * stride + 1, (stride + 1) // 2


class _PhysicalEncoder(nn.Module):
    """Two fully-connected layers mapping the physique vector to a code."""

    def __init__(self, beta_length: int, code_channels: int):
        super().__init__()
        self.fc1 = nn.Linear(beta_length, code_channels)
        self.fc2 = nn.Linear(code_channels, code_channels)

    def forward(self, beta: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.relu(self.fc1(beta)))


class _StageNet(nn.Module):
    """One encoder-decoder stage; later stages take an extra input channel
    carrying the previous stage's prediction."""

    def __init__(self, config: NetworkConfig, first: bool):
        super().__init__()
        stage = config.stage
        channels = _encoder_channels(stage.base_channels, stage.depth)
        in_ch = config.in_channels + (0 if first else 1)

        downs = []
        prev = in_ch
        for ch in channels:
            downs.append(
                nn.Sequential(nn.Conv2d(prev, ch, 4, 2, 1), nn.ReLU(inplace=True), nn.BatchNorm2d(ch))
            )
            prev = ch
        self.downs = nn.ModuleList(downs)

        self.physical = _PhysicalEncoder(config.beta_length, stage.code_channels)

        ups = []
        depth = stage.depth
        for j in range(depth):
            up_in = channels[depth - 1] + stage.code_channels if j == 0 else 2 * channels[depth - 1 - j]
            up_out = channels[depth - 2 - j] if depth - 2 - j >= 0 else stage.base_channels
            ups.append(
                nn.Sequential(
                    nn.ConvTranspose2d(up_in, up_out, 4, 2, 1),
                    nn.ReLU(inplace=True),
                    nn.BatchNorm2d(up_out),
                )
            )
        self.ups = nn.ModuleList(ups)

        h, w = stage.input_size
        m, n = config.output_size
        kh, ph = _head_geometry(h // m)
        kw, pw = _head_geometry(w // n)
        self.head = nn.Conv2d(stage.base_channels, 1, (kh, kw), (h // m, w // n), (ph, pw))

    def forward(self, image: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
        feats = []
        x = image
        for down in self.downs:
            x = down(x)
            feats.append(x)
        code = self.physical(beta)
        code = code[:, :, None, None].expand(-1, -1, x.shape[-2], x.shape[-1])
        x = torch.cat([x, code], dim=1)
        depth = len(self.ups)
        for j, up in enumerate(self.ups):
            x = up(x)
            skip = depth - 2 - j
            if skip >= 0:
                x = torch.cat([x, feats[skip]], dim=1)
        return torch.sigmoid(self.head(x))


def _init_module(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm2d):
        nn.init.normal_(module.weight, 1.0, 0.02)
        nn.init.zeros_(module.bias)


class PressureNet(nn.Module):
    """The full stage stack. ``forward`` returns one prediction per stage."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        self.stage_nets = nn.ModuleList(
            _StageNet(config, first=(k == 0)) for k in range(config.stages)
        )
        self.apply(_init_module)
        # Small head weights with zero bias keep initial outputs near
        # sigmoid(0) = 0.5 while leaving gradients nonzero.
        for stage in self.stage_nets:
            nn.init.normal_(stage.head.weight, 0.0, 0.005)
            nn.init.zeros_(stage.head.bias)

    def _check_inputs(self, images: torch.Tensor, beta: torch.Tensor) -> None:
        cfg = self.config
        if images.ndim != 4 or images.shape[1] != cfg.in_channels:
            raise InvalidInputError(
                f"images must be (B, {cfg.in_channels}, H, W), got {tuple(images.shape)}"
            )
        if tuple(images.shape[-2:]) != cfg.stage.input_size:
            raise InvalidInputError(
                f"images must be sized {cfg.stage.input_size}, got {tuple(images.shape[-2:])}"
            )
        if beta.ndim != 2 or beta.shape[1] != cfg.beta_length:
            raise InvalidInputError(
                f"beta must be (B, {cfg.beta_length}), got {tuple(beta.shape)}"
            )
        if images.shape[0] != beta.shape[0]:
            raise InvalidInputError(
                f"batch sizes disagree: {images.shape[0]} images vs {beta.shape[0]} physique rows"
            )

    @staticmethod
    def _clamp_beta(beta: torch.Tensor) -> torch.Tensor:
        lo, hi = float(beta.min()), float(beta.max())
        if lo < -BETA_CLAMP_WARN_MARGIN or hi > 1.0 + BETA_CLAMP_WARN_MARGIN:
            warnings.warn(
                f"normalized physique entries span [{lo:.3f}, {hi:.3f}], beyond the "
                f"{BETA_CLAMP_WARN_MARGIN:.0%} margin around [0, 1]; clamping",
                stacklevel=3,
            )
        return beta.clamp(0.0, 1.0)

    def forward(self, images: torch.Tensor, beta: torch.Tensor) -> list:
        self._check_inputs(images, beta)
        beta = self._clamp_beta(beta)
        preds = []
        stage_input = images
        for k, stage in enumerate(self.stage_nets):
            out = stage(stage_input, beta)
            preds.append(out[:, 0])
            if k + 1 < len(self.stage_nets):
                fed_back = F.interpolate(
                    out, size=self.config.stage.input_size, mode="bilinear", align_corners=False
                )
                stage_input = torch.cat([images, fed_back], dim=1)
        return preds

    def encode_physical(self, beta: torch.Tensor, bottleneck_hw: tuple) -> torch.Tensor:
        """First stage's physique code tiled over an (h, w) bottleneck grid."""
        if beta.ndim != 2 or beta.shape[1] != self.config.beta_length:
            raise InvalidInputError(
                f"beta must be (B, {self.config.beta_length}), got {tuple(beta.shape)}"
            )
        beta = self._clamp_beta(beta)
        code = self.stage_nets[0].physical(beta)
        h, w = bottleneck_hw
        return code[:, :, None, None].expand(-1, -1, h, w)


class PatchDiscriminator(nn.Module):
    """Three stride-2 blocks (64 -> 128 -> 256) and a 1-channel score conv:
    an input grid of (M, N) yields an (M/8, N/8) grid of patch scores.

    With ``conditional=True`` (default) the pressure map is concatenated with
    the vision image resized to the map frame, pix2pix style; set it to False
    to judge the map alone.
    """

    MIN_SIDE = 8

    def __init__(self, condition_channels: int = 3, conditional: bool = True):
        super().__init__()
        self.conditional = conditional
        self.condition_channels = condition_channels
        in_ch = 1 + (condition_channels if conditional else 0)
        self.net = nn.Sequential(
            nn.Conv2d(in_ch, 64, 4, 2, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(64, 128, 4, 2, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.BatchNorm2d(128),
            nn.Conv2d(128, 256, 4, 2, 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.BatchNorm2d(256),
            nn.Conv2d(256, 1, 3, 1, 1),
        )
        self.apply(_init_module)

    def forward(self, pm: torch.Tensor, condition: torch.Tensor = None) -> torch.Tensor:
        if pm.ndim == 3:
            pm = pm[:, None]
        if pm.ndim != 4 or pm.shape[1] != 1:
            raise InvalidInputError(f"pressure input must be (B, 1, M, N), got {tuple(pm.shape)}")
        m, n = pm.shape[-2:]
        if m < self.MIN_SIDE or n < self.MIN_SIDE or m % self.MIN_SIDE or n % self.MIN_SIDE:
            raise InvalidInputError(
                f"discriminator input must be a multiple of {self.MIN_SIDE} per side, got {(m, n)}"
            )
        if self.conditional:
            if condition is None:
                raise InvalidInputError("conditional discriminator needs a condition image")
            if condition.shape[0] != pm.shape[0] or tuple(condition.shape[-2:]) != (m, n):
                raise InvalidInputError(
                    "condition must match the pressure batch and be resized to the map frame"
                )
            pm = torch.cat([pm, condition], dim=1)
        elif condition is not None:
            raise InvalidInputError("unconditional discriminator takes no condition")
        return self.net(pm)


def save_checkpoint(path, model: PressureNet, extras: dict = None) -> None:
    """Single-archive checkpoint: format tag, config, weights, extras."""
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "config": model.config.to_dict(),
            "state": model.state_dict(),
            "extras": dict(extras or {}),
        },
        path,
    )


def load_checkpoint(path):
    """Returns ``(model, extras)``; the model is in eval mode."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise InvalidInputError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise InvalidInputError(
            f"unsupported checkpoint format in {path}, expected {CHECKPOINT_FORMAT!r}"
        )
    model = PressureNet(NetworkConfig.from_dict(payload["config"]))
    model.load_state_dict(payload["state"])
    model.eval()
    return model, payload.get("extras", {})
