"""All ten segmentation architectures.

Single-timestep U-Net over two compact backbones, the proposed
3xU-Net -> ConvLSTM model (shared or unshared branch weights), and the
ablation variants: Only-LSTM, 9-Channel (with and without a leading
channel-wise convolution), Pre-LSTM and Cascading (each with concat or
Hadamard fusion).

Every model takes its flight inputs oldest first and emits probability
masks oldest first; sequence models supervise all outputs against the
final target mask.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, ShapeError, ValidationError
from .nn import (
    Conv1x1,
    Conv2dSame,
    Conv3dSame,
    ConvLSTM2d,
    MaxPool2x2,
    Swish,
    Upsample2x,
    init_parameters,
)
from .raster import Raster


class ArchitectureKind(Enum):
    SINGLE_UNET = "single_unet"
    PROPOSED_SHARED = "proposed_shared"
    PROPOSED_UNSHARED = "proposed_unshared"
    ONLY_LSTM = "only_lstm"
    NINE_CHANNEL = "nine_channel"
    NINE_CHANNEL_CONV1D = "nine_channel_conv1d"
    PRE_LSTM_CONCAT = "pre_lstm_concat"
    PRE_LSTM_MULTIPLY = "pre_lstm_multiply"
    CASCADING_CONCAT = "cascading_concat"
    CASCADING_MULTIPLY = "cascading_multiply"

    @property
    def num_inputs(self) -> int:
        return 1 if self is ArchitectureKind.SINGLE_UNET else 3

    @property
    def num_outputs(self) -> int:
        if self in (
            ArchitectureKind.SINGLE_UNET,
            ArchitectureKind.NINE_CHANNEL,
            ArchitectureKind.NINE_CHANNEL_CONV1D,
        ):
            return 1
        return 3


class BackboneKind(Enum):
    COMPACT_VGG = "compact_vgg"
    COMPACT_EFFNET = "compact_effnet"

    @property
    def channel_plan(self) -> tuple[int, ...]:
        if self is BackboneKind.COMPACT_VGG:
            return (16, 32, 64, 128)
        return (16, 24, 40, 80)


@dataclass(frozen=True)
class ConvLstmSpec:
    layers: int = 2
    hidden_channels: int = 16
    kernel: int = 3


@dataclass(frozen=True)
class ModelConfig:
    arch: ArchitectureKind
    backbone: BackboneKind = BackboneKind.COMPACT_EFFNET
    input_channels: int = 3
    freeze_encoder: bool = False
    convlstm: ConvLstmSpec = field(default_factory=ConvLstmSpec)
    width_mult: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.input_channels not in (1, 3, 4, 9):
            raise ConfigError(f"input_channels must be 1, 3, 4 or 9, got {self.input_channels}")
        nine = self.arch in (ArchitectureKind.NINE_CHANNEL, ArchitectureKind.NINE_CHANNEL_CONV1D)
        if nine and self.input_channels != 9:
            raise ConfigError(f"{self.arch.value} requires input_channels=9")
        if not nine and self.input_channels == 9:
            raise ConfigError(f"{self.arch.value} cannot take a 9-channel input")

    @property
    def per_flight_channels(self) -> int:
        return self.input_channels // 3 if self.input_channels == 9 else self.input_channels

    def to_json(self) -> str:
        d = asdict(self)
        d["arch"] = self.arch.value
        d["backbone"] = self.backbone.value
        return json.dumps(d)

    @staticmethod
    def from_json(s: str) -> "ModelConfig":
        d = json.loads(s)
        d["arch"] = ArchitectureKind(d["arch"])
        d["backbone"] = BackboneKind(d["backbone"])
        d["convlstm"] = ConvLstmSpec(**d["convlstm"])
        return ModelConfig(**d)


@dataclass
class PredictionSet:
    """Per-timestep probability masks, oldest first (..., P_t last)."""

    masks: list[Raster]
    intermediates: dict[str, Raster] = field(default_factory=dict)

    @property
    def final(self) -> Raster:
        return self.masks[-1]


def _scaled(plan: tuple[int, ...], mult: float) -> list[int]:
    return [max(1, round(c * mult)) for c in plan]


class _VggBlock(nn.Module):
    def __init__(self, in_ch, out_ch, activation=nn.ReLU):
        super().__init__()
        self.body = nn.Sequential(
            Conv2dSame(in_ch, out_ch), activation(),
            Conv2dSame(out_ch, out_ch), activation(),
        )

    def forward(self, x):
        return self.body(x)


class _SqueezeExcite(nn.Module):
    def __init__(self, channels):
        super().__init__()
        mid = max(1, channels // 4)
        self.reduce = Conv1x1(channels, mid)
        self.expand = Conv1x1(mid, channels)
        self.act = Swish()

    def forward(self, x):
        s = x.mean(dim=(2, 3), keepdim=True)
        s = torch.sigmoid(self.expand(self.act(self.reduce(s))))
        return x * s


class _MbConvBlock(nn.Module):
    """Inverted residual with squeeze-excitation, expansion 4."""

    def __init__(self, in_ch, out_ch, expansion=4):
        super().__init__()
        mid = in_ch * expansion
        self.expand = Conv1x1(in_ch, mid)
        self.depthwise = nn.Conv2d(mid, mid, 3, padding=1, groups=mid)
        self.se = _SqueezeExcite(mid)
        self.project = Conv1x1(mid, out_ch)
        self.act = Swish()
        self.residual = in_ch == out_ch

    def forward(self, x):
        y = self.act(self.expand(x))
        y = self.act(self.depthwise(y))
        y = self.project(self.se(y))
        return x + y if self.residual else y


class UNet(nn.Module):
    """Compact encoder-decoder with skip connections; downsamples x16.

    Emits single-channel logits at the input resolution; spatial dims must
    be divisible by 16.
    """

    def __init__(self, in_channels: int, backbone: BackboneKind, width_mult: float = 1.0):
        super().__init__()
        chans = _scaled(backbone.channel_plan, width_mult)
        block = _VggBlock if backbone is BackboneKind.COMPACT_VGG else _MbConvBlock
        act = nn.ReLU if backbone is BackboneKind.COMPACT_VGG else Swish

        self.encoder = nn.ModuleList()
        self.downs = nn.ModuleList()
        prev = in_channels
        for c in chans:
            self.encoder.append(block(prev, c))
            if backbone is BackboneKind.COMPACT_VGG:
                self.downs.append(MaxPool2x2())
            else:
                # EfficientNet-style strided depthwise conv.
                self.downs.append(nn.Conv2d(c, c, 3, stride=2, padding=1, groups=c))
            prev = c
        self.bottleneck = block(prev, prev)
        self.up = Upsample2x()
        self.decoder = nn.ModuleList()
        deep = prev
        for c in reversed(chans):
            self.decoder.append(_VggBlock(deep + c, c, activation=act))
            deep = c
        self.head = Conv1x1(deep, 1)

    def encoder_parameters(self):
        yield from self.encoder.parameters()
        yield from self.downs.parameters()

    def forward(self, x):
        h, w = x.shape[-2:]
        if h % 16 or w % 16:
            raise ShapeError(f"UNet input dims must be divisible by 16, got {h}x{w}")
        skips = []
        for stage, down in zip(self.encoder, self.downs):
            x = stage(x)
            skips.append(x)
            x = down(x)
        x = self.bottleneck(x)
        for stage, skip in zip(self.decoder, reversed(skips)):
            x = self.up(x)
            x = stage(torch.cat([x, skip], dim=1))
        return self.head(x)


class TimeBatchNorm(nn.Module):
    """Per-channel batch normalization across (batch, time, h, w)."""

    def __init__(self, channels):
        super().__init__()
        self.bn = nn.BatchNorm3d(channels)

    def forward(self, x):  # (b, t, c, h, w)
        return self.bn(x.permute(0, 2, 1, 3, 4)).permute(0, 2, 1, 3, 4)


class ConvLstmHead(nn.Module):
    """Stacked ConvLSTM + BatchNorm layers, then a 3D conv over (t, h, w)
    and a sigmoid; one probability mask per timestep."""

    def __init__(self, in_channels: int, spec: ConvLstmSpec):
        super().__init__()
        layers = []
        prev = in_channels
        for _ in range(spec.layers):
            layers.append(ConvLSTM2d(prev, spec.hidden_channels, spec.kernel))
            layers.append(TimeBatchNorm(spec.hidden_channels))
            prev = spec.hidden_channels
        self.body = nn.Sequential(*layers)
        self.conv3d = Conv3dSame(prev, 1, 3)

    def forward(self, x):  # (b, t, c, h, w) -> (b, t, 1, h, w)
        y = self.body(x)
        y = self.conv3d(y.permute(0, 2, 1, 3, 4)).permute(0, 2, 1, 3, 4)
        return torch.sigmoid(y)


class NdsModel(nn.Module):
    """Base class: forward takes flight tensors oldest first, returns
    probability masks oldest first."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config

    @property
    def num_inputs(self) -> int:
        return self.config.arch.num_inputs

    @property
    def num_outputs(self) -> int:
        return self.config.arch.num_outputs

    def _check_inputs(self, inputs):
        if len(inputs) != self.num_inputs:
            raise ValidationError(
                f"{self.config.arch.value} expects {self.num_inputs} inputs, got {len(inputs)}"
            )

    def branch_parameter_count(self) -> int:
        """Parameters in the per-flight U-Net branch(es)."""
        return 0

    def intermediates(self) -> dict[str, torch.Tensor]:
        return {}


class SingleUNetModel(NdsModel):
    def __init__(self, config):
        super().__init__(config)
        self.unet = UNet(config.input_channels, config.backbone, config.width_mult)

    def branch_parameter_count(self):
        return sum(p.numel() for p in self.unet.parameters())

    def forward(self, *inputs):
        self._check_inputs(inputs)
        return [torch.sigmoid(self.unet(inputs[0]))]


class ProposedModel(NdsModel):
    """3 parallel U-Net branches feeding a ConvLSTM head."""

    def __init__(self, config, shared: bool):
        super().__init__(config)
        self.shared = shared
        n_unets = 1 if shared else 3
        self.unets = nn.ModuleList(
            UNet(config.input_channels, config.backbone, config.width_mult)
            for _ in range(n_unets)
        )
        self.lstm_head = ConvLstmHead(1, config.convlstm)
        self._branch_maps: dict[str, torch.Tensor] = {}

    def branch_parameter_count(self):
        return sum(p.numel() for p in self.unets.parameters())

    def intermediates(self):
        return dict(self._branch_maps)

    def forward(self, *inputs):
        self._check_inputs(inputs)
        maps = []
        for i, x in enumerate(inputs):
            unet = self.unets[0] if self.shared else self.unets[i]
            maps.append(torch.sigmoid(unet(x)))
        self._branch_maps = {f"branch_{i}": m for i, m in enumerate(maps)}
        out = self.lstm_head(torch.stack(maps, dim=1))
        return [out[:, t] for t in range(out.shape[1])]


class OnlyLstmModel(NdsModel):
    def __init__(self, config):
        super().__init__(config)
        self.lstm_head = ConvLstmHead(config.input_channels, config.convlstm)

    def forward(self, *inputs):
        self._check_inputs(inputs)
        out = self.lstm_head(torch.stack(list(inputs), dim=1))
        return [out[:, t] for t in range(out.shape[1])]


class NineChannelModel(NdsModel):
    def __init__(self, config, reduce_1d: bool):
        super().__init__(config)
        per_flight = config.per_flight_channels
        self.reduce = Conv1x1(3 * per_flight, per_flight) if reduce_1d else None
        unet_in = per_flight if reduce_1d else 3 * per_flight
        self.unet = UNet(unet_in, config.backbone, config.width_mult)

    def branch_parameter_count(self):
        return sum(p.numel() for p in self.unet.parameters())

    def forward(self, *inputs):
        self._check_inputs(inputs)
        x = torch.cat(list(inputs), dim=1)
        if self.reduce is not None:
            x = self.reduce(x)
        return [torch.sigmoid(self.unet(x))]


def _fuse(image: torch.Tensor, mask: torch.Tensor, concat: bool) -> torch.Tensor:
    if concat:
        return torch.cat([image, mask], dim=1)
    return image * mask  # 1-channel mask broadcasts across image channels


class PreLstmModel(NdsModel):
    """ConvLSTM first, producing intermediate maps fused with the raw
    images before three parallel U-Nets."""

    def __init__(self, config, concat: bool):
        super().__init__(config)
        self.concat = concat
        self.lstm_head = ConvLstmHead(config.input_channels, config.convlstm)
        unet_in = config.input_channels + 1 if concat else config.input_channels
        self.unets = nn.ModuleList(
            UNet(unet_in, config.backbone, config.width_mult) for _ in range(3)
        )
        self._stage_maps: dict[str, torch.Tensor] = {}

    def branch_parameter_count(self):
        return sum(p.numel() for p in self.unets.parameters())

    def intermediates(self):
        return dict(self._stage_maps)

    def forward(self, *inputs):
        self._check_inputs(inputs)
        s_maps = self.lstm_head(torch.stack(list(inputs), dim=1))
        self._stage_maps = {f"s_{i}": s_maps[:, i] for i in range(s_maps.shape[1])}
        return [
            torch.sigmoid(self.unets[i](_fuse(x, s_maps[:, i], self.concat)))
            for i, x in enumerate(inputs)
        ]


class CascadingModel(NdsModel):
    """Sequential U-Nets; each stage's mask is fused with the next flight.

    No gradient detachment: the loss on the final mask reaches all three
    U-Nets through the fusion path.
    """

    def __init__(self, config, concat: bool):
        super().__init__(config)
        self.concat = concat
        c = config.input_channels
        first_in = c
        later_in = c + 1 if concat else c
        self.unets = nn.ModuleList(
            [UNet(first_in, config.backbone, config.width_mult)]
            + [UNet(later_in, config.backbone, config.width_mult) for _ in range(2)]
        )

    def branch_parameter_count(self):
        return sum(p.numel() for p in self.unets.parameters())

    def forward(self, *inputs):
        self._check_inputs(inputs)
        masks = []
        mask = torch.sigmoid(self.unets[0](inputs[0]))
        masks.append(mask)
        for i in (1, 2):
            mask = torch.sigmoid(self.unets[i](_fuse(inputs[i], mask, self.concat)))
            masks.append(mask)
        return masks


def build_model(cfg: ModelConfig) -> NdsModel:
    """Construct and deterministically initialize one architecture."""
    a = ArchitectureKind
    if cfg.arch is a.SINGLE_UNET:
        model = SingleUNetModel(cfg)
    elif cfg.arch is a.PROPOSED_SHARED:
        model = ProposedModel(cfg, shared=True)
    elif cfg.arch is a.PROPOSED_UNSHARED:
        model = ProposedModel(cfg, shared=False)
    elif cfg.arch is a.ONLY_LSTM:
        model = OnlyLstmModel(cfg)
    elif cfg.arch is a.NINE_CHANNEL:
        model = NineChannelModel(cfg, reduce_1d=False)
    elif cfg.arch is a.NINE_CHANNEL_CONV1D:
        model = NineChannelModel(cfg, reduce_1d=True)
    elif cfg.arch is a.PRE_LSTM_CONCAT:
        model = PreLstmModel(cfg, concat=True)
    elif cfg.arch is a.PRE_LSTM_MULTIPLY:
        model = PreLstmModel(cfg, concat=False)
    elif cfg.arch is a.CASCADING_CONCAT:
        model = CascadingModel(cfg, concat=True)
    elif cfg.arch is a.CASCADING_MULTIPLY:
        model = CascadingModel(cfg, concat=False)
    else:  # pragma: no cover
        raise ConfigError(f"unknown architecture {cfg.arch}")
    init_parameters(model, cfg.seed)
    if cfg.freeze_encoder:
        for m in model.modules():
            if isinstance(m, UNet):
                for p in m.encoder_parameters():
                    p.requires_grad_(False)
    return model


def rasters_to_tensors(inputs: list[Raster]) -> list[torch.Tensor]:
    return [
        torch.from_numpy(np.ascontiguousarray(r.values.transpose(2, 0, 1))).unsqueeze(0)
        for r in inputs
    ]


def forward_sequence(model: NdsModel, inputs: list[Raster], mode: str = "infer") -> PredictionSet:
    """Run one sequence of rasters through a model."""
    tensors = rasters_to_tensors(inputs)
    model.train(mode == "train")
    if mode == "train":
        masks = model(*tensors)
    else:
        with torch.no_grad():
            masks = model(*tensors)
    to_raster = lambda t: Raster(t.detach().numpy()[0].transpose(1, 2, 0))
    return PredictionSet(
        masks=[to_raster(m) for m in masks],
        intermediates={k: to_raster(v) for k, v in model.intermediates().items()},
    )
