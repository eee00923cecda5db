"""Differentiable building blocks and gradient verification.

Layer kinds: 2D/1x1/3D convolution ("same" padding, odd kernels), batch
normalization, 2x2 max pooling, 2x upsampling, ConvLSTM over (time, h, w),
sigmoid/relu/swish activations, and the concat/Hadamard fusion ops.

Analytic gradients come from reverse-mode autodiff; `finite_diff_check`
is the independent oracle, re-running every perturbation in 64-bit with
central differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, ValidationError


class LayerKind(Enum):
    CONV2D = "conv2d"
    CONV1X1 = "conv1x1"
    CONV3D = "conv3d"
    CONVLSTM2D = "convlstm2d"
    BATCHNORM = "batchnorm"
    MAXPOOL2X2 = "maxpool2x2"
    UPSAMPLE2X = "upsample2x"
    ACTIVATION = "activation"
    CONCAT = "concat"
    HADAMARD_FUSE = "hadamard_fuse"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    in_channels: int = 0
    out_channels: int = 0
    kernel: int = 3
    hidden_channels: int = 0
    activation: str = "relu"
    many_to_many: bool = True

    def __post_init__(self):
        if self.kind in (LayerKind.CONV2D, LayerKind.CONV3D, LayerKind.CONVLSTM2D):
            if self.kernel % 2 == 0:
                raise ConfigError(f"{self.kind.value}: kernel size must be odd")


def same_pad(kernel: int) -> int:
    return kernel // 2


class Conv2dSame(nn.Conv2d):
    def __init__(self, in_ch, out_ch, kernel=3):
        super().__init__(in_ch, out_ch, kernel, padding=same_pad(kernel))


class Conv1x1(nn.Conv2d):
    """Channel-wise (1D) convolution."""

    def __init__(self, in_ch, out_ch):
        super().__init__(in_ch, out_ch, 1)


class Conv3dSame(nn.Conv3d):
    """3D convolution over (time, h, w) with "same" padding on all axes."""

    def __init__(self, in_ch, out_ch, kernel=3):
        super().__init__(in_ch, out_ch, kernel, padding=same_pad(kernel))


class Swish(nn.Module):
    def forward(self, x):
        return x * torch.sigmoid(x)


def make_activation(name: str) -> nn.Module:
    if name == "relu":
        return nn.ReLU()
    if name == "sigmoid":
        return nn.Sigmoid()
    if name == "swish":
        return Swish()
    raise ConfigError(f"unknown activation {name!r}")


class MaxPool2x2(nn.MaxPool2d):
    def __init__(self):
        super().__init__(2)


class Upsample2x(nn.Upsample):
    def __init__(self):
        super().__init__(scale_factor=2, mode="nearest")


class ConcatFuse(nn.Module):
    """Channel concatenation of two maps with equal spatial dims."""

    def forward(self, a, b):
        return torch.cat([a, b], dim=1)


class HadamardFuse(nn.Module):
    """Pixel-wise product; a 1-channel mask broadcasts across channels."""

    def forward(self, image, mask):
        return image * mask


class ConvLSTM2d(nn.Module):
    """Convolutional LSTM over a (batch, time, channels, h, w) stack.

    Gates: i, f, o = sigmoid(conv), g = tanh(conv); c' = f*c + i*g;
    h' = o * tanh(c').  In many-to-many mode the output stacks one hidden
    map per timestep; otherwise only the final hidden map is returned.
    """

    def __init__(self, in_channels: int, hidden_channels: int, kernel: int = 3,
                 many_to_many: bool = True):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.many_to_many = many_to_many
        self.gates = Conv2dSame(in_channels + hidden_channels, 4 * hidden_channels, kernel)

    def forward(self, x):
        if x.dim() != 5:
            raise ValidationError(f"ConvLSTM2d expects (b, t, c, h, w), got {tuple(x.shape)}")
        b, t, _, h, w = x.shape
        hc = self.hidden_channels
        hidden = x.new_zeros((b, hc, h, w))
        cell = x.new_zeros((b, hc, h, w))
        outputs = []
        for step in range(t):
            gates = self.gates(torch.cat([x[:, step], hidden], dim=1))
            i, f, o, g = gates.chunk(4, dim=1)
            i, f, o = torch.sigmoid(i), torch.sigmoid(f), torch.sigmoid(o)
            g = torch.tanh(g)
            cell = f * cell + i * g
            hidden = o * torch.tanh(cell)
            outputs.append(hidden)
        if self.many_to_many:
            return torch.stack(outputs, dim=1)
        return hidden


def build_layer(spec: LayerSpec) -> nn.Module:
    k = spec.kind
    if k is LayerKind.CONV2D:
        return Conv2dSame(spec.in_channels, spec.out_channels, spec.kernel)
    if k is LayerKind.CONV1X1:
        return Conv1x1(spec.in_channels, spec.out_channels)
    if k is LayerKind.CONV3D:
        return Conv3dSame(spec.in_channels, spec.out_channels, spec.kernel)
    if k is LayerKind.CONVLSTM2D:
        return ConvLSTM2d(spec.in_channels, spec.hidden_channels, spec.kernel,
                          spec.many_to_many)
    if k is LayerKind.BATCHNORM:
        return nn.BatchNorm2d(spec.in_channels)
    if k is LayerKind.MAXPOOL2X2:
        return MaxPool2x2()
    if k is LayerKind.UPSAMPLE2X:
        return Upsample2x()
    if k is LayerKind.ACTIVATION:
        return make_activation(spec.activation)
    if k is LayerKind.CONCAT:
        return ConcatFuse()
    if k is LayerKind.HADAMARD_FUSE:
        return HadamardFuse()
    raise ConfigError(f"unknown layer kind {k}")


def init_parameters(module: nn.Module, seed: int):
    """He-uniform conv kernels, zero biases, identity BatchNorm; deterministic."""
    gen = torch.Generator().manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv1d, nn.Conv2d, nn.Conv3d)):
            fan_in = (m.in_channels // m.groups) * int(np.prod(m.kernel_size))
            bound = float(np.sqrt(6.0 / fan_in))
            with torch.no_grad():
                m.weight.uniform_(-bound, bound, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, (nn.BatchNorm1d, nn.BatchNorm2d, nn.BatchNorm3d)):
            m.reset_parameters()
            m.reset_running_stats()
    return module


class ParameterStore:
    """Named view over a module's trainable arrays and their gradients."""

    def __init__(self, module: nn.Module):
        self.module = module

    def names(self) -> list[str]:
        return [n for n, _ in self.module.named_parameters()]

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: p.detach().cpu().numpy().copy() for n, p in self.module.named_parameters()}

    def gradients(self) -> dict[str, np.ndarray]:
        out = {}
        for n, p in self.module.named_parameters():
            g = p.grad
            out[n] = np.zeros(p.shape, dtype=np.float32) if g is None else g.cpu().numpy().copy()
        return out

    def num_parameters(self, trainable_only: bool = False) -> int:
        return sum(
            p.numel()
            for p in self.module.parameters()
            if p.requires_grad or not trainable_only
        )

    def zero_gradients(self):
        self.module.zero_grad()


def forward(module: nn.Module, x: torch.Tensor, mode: str = "infer") -> torch.Tensor:
    """Run the module; 'train' keeps the graph, 'infer' is pure and detached."""
    if mode not in ("train", "infer"):
        raise ValidationError(f"mode must be 'train' or 'infer', got {mode!r}")
    module.train(mode == "train")
    if mode == "train":
        return module(x)
    with torch.no_grad():
        return module(x)


def backward(output: torch.Tensor, output_gradient: torch.Tensor):
    """Accumulate parameter gradients for a train-mode forward result."""
    if not output.requires_grad:
        raise ValidationError("backward requires a train-mode forward with trainable parameters")
    output.backward(output_gradient)


@dataclass
class FiniteDiffReport:
    passed: bool
    max_rel_error: float
    worst_param: str
    errors: dict[str, float] = field(default_factory=dict)


def finite_diff_check(
    module: nn.Module,
    inputs,
    loss_fn,
    step: float = 1e-4,
    tol: float = 1e-3,
    check_input: bool = False,
    max_params: int = 50_000,
    chunk_size: int = 512,
) -> FiniteDiffReport:
    """Compare autodiff gradients to 64-bit central finite differences.

    `inputs` is a tensor or tuple of tensors; `loss_fn` maps the module
    output to a scalar.  Relative error denominator is
    max(|analytic|, |numeric|, 1e-8).

    Perturbed forward passes are batched with `torch.func.vmap` where the
    network allows it (falling back to an element loop otherwise); either
    way the numeric side stays an independent central-difference oracle.
    """
    module = module.double()
    module.train(True)
    # Freeze running-statistic updates so the vmapped functional forwards
    # stay side-effect free; train-mode outputs use batch stats regardless.
    bn_restore = []
    for m in module.modules():
        if isinstance(m, nn.modules.batchnorm._BatchNorm):
            bn_restore.append((m, m.track_running_stats))
            m.track_running_stats = False
    if not isinstance(inputs, (tuple, list)):
        inputs = (inputs,)
    inputs = tuple(t.detach().double().clone() for t in inputs)

    n_params = sum(p.numel() for p in module.parameters())
    if n_params > max_params:
        raise ValidationError(f"network has {n_params} parameters, limit {max_params}")

    for t in inputs:
        t.requires_grad_(check_input)
    module.zero_grad()
    loss = loss_fn(module(*inputs))
    loss.backward()

    params = dict(module.named_parameters())
    buffers = dict(module.named_buffers())

    def loop_fd(param: torch.Tensor) -> torch.Tensor:
        flat = param.data.reshape(-1)
        numeric = torch.empty_like(flat)
        with torch.no_grad():
            for j in range(flat.numel()):
                orig = float(flat[j])
                flat[j] = orig + step
                up = float(loss_fn(module(*inputs)))
                flat[j] = orig - step
                down = float(loss_fn(module(*inputs)))
                flat[j] = orig
                numeric[j] = (up - down) / (2 * step)
        return numeric

    def vmap_fd_param(name: str, param: torch.Tensor) -> torch.Tensor:
        k = param.numel()
        base = param.detach().reshape(-1)
        eye = step * torch.eye(k, dtype=torch.float64)
        perturbed = torch.cat([base + eye, base - eye]).reshape(2 * k, *param.shape)

        def f(pt):
            newp = {n: (pt if n == name else v.detach()) for n, v in params.items()}
            return loss_fn(torch.func.functional_call(module, (newp, buffers), args=inputs))

        losses = torch.func.vmap(f, chunk_size=chunk_size)(perturbed).detach()
        return (losses[:k] - losses[k:]) / (2 * step)

    def numeric_for(name: str, param: torch.Tensor) -> torch.Tensor:
        if name.startswith("<input"):
            return loop_fd(param)
        try:
            return vmap_fd_param(name, param)
        except RuntimeError:
            return loop_fd(param)

    targets = list(params.items())
    if check_input:
        targets += [(f"<input:{i}>", t) for i, t in enumerate(inputs)]

    errors: dict[str, float] = {}
    worst_name, worst_err = "", 0.0
    for name, param in targets:
        grad = param.grad
        analytic = (torch.zeros_like(param) if grad is None else grad).reshape(-1)
        numeric = numeric_for(name, param)
        denom = torch.maximum(
            torch.maximum(analytic.abs(), numeric.abs()),
            torch.tensor(1e-8, dtype=torch.float64),
        )
        layer_err = float(((analytic - numeric).abs() / denom).max())
        errors[name] = layer_err
        if layer_err > worst_err:
            worst_err, worst_name = layer_err, name
    for m, flag in bn_restore:
        m.track_running_stats = flag
    return FiniteDiffReport(
        passed=worst_err <= tol,
        max_rel_error=worst_err,
        worst_param=worst_name,
        errors=errors,
    )


# --- checkpoint format -------------------------------------------------------

CKPT_MAGIC = b"NDCK"
CKPT_VERSION = 1


def _write_str(f, s: str):
    b = s.encode("utf-8")
    f.write(struct.pack("<H", len(b)))
    f.write(b)


def _read_str(f) -> str:
    (n,) = struct.unpack("<H", f.read(2))
    return f.read(n).decode("utf-8")


def _write_table(f, table: dict[str, np.ndarray]):
    f.write(struct.pack("<I", len(table)))
    for name, arr in table.items():
        _write_str(f, name)
        arr = np.asarray(arr, dtype="<f4")
        f.write(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            f.write(struct.pack("<I", d))
        f.write(np.ascontiguousarray(arr).tobytes())


def _read_table(f) -> dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", f.read(4))
    table = {}
    for _ in range(count):
        name = _read_str(f)
        (ndim,) = struct.unpack("<B", f.read(1))
        shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
        n = int(np.prod(shape)) if shape else 1
        table[name] = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape).copy()
    return table


def save_checkpoint(
    path: Path,
    arch_tag: str,
    parameters: dict[str, np.ndarray],
    config_json: str = "{}",
    optimizer_state: dict[str, np.ndarray] | None = None,
):
    """Write the binary checkpoint: magic NDCK, version, arch tag, config,
    named f32 parameter table, then optimizer state."""
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<H", CKPT_VERSION))
        _write_str(f, arch_tag)
        cfg = config_json.encode("utf-8")
        f.write(struct.pack("<I", len(cfg)))
        f.write(cfg)
        _write_table(f, parameters)
        _write_table(f, optimizer_state or {})


def load_checkpoint(path: Path):
    with open(path, "rb") as f:
        if f.read(4) != CKPT_MAGIC:
            raise ValidationError(f"{path}: not an NDCK checkpoint")
        (version,) = struct.unpack("<H", f.read(2))
        if version != CKPT_VERSION:
            raise ValidationError(f"{path}: unsupported checkpoint version {version}")
        arch_tag = _read_str(f)
        (cfg_len,) = struct.unpack("<I", f.read(4))
        config_json = f.read(cfg_len).decode("utf-8")
        parameters = _read_table(f)
        optimizer_state = _read_table(f)
    return arch_tag, config_json, parameters, optimizer_state
