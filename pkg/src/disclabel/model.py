"""Fully-convolutional inception heatmap network.

Every layer is an unpadded stride-1 convolution, so each output pixel sees a
single 40x40 window of the zero-padded input and every input pixel is seen by
many overlapping windows (redundant counting).  The input is padded by
20 px top/left and 19 px bottom/right so the output aligns 1:1 with it.

Checkpoint layout (little-endian)::

    b"DLCK" | u32 version | u32 header_len | header JSON | float32 payload

The header holds the model config, per-tensor offsets into the payload and
training metadata.  The payload is the model state (weights, biases and
batch-norm statistics) optionally followed by optimizer moments.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CorruptCheckpoint, InputTooSmall, IoError, UnsupportedVersion, ValidationError

CHECKPOINT_MAGIC = b"DLCK"
CHECKPOINT_VERSION = 1
ABLATION_STRIDE = 2


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    kernel_px: int
    channels_out: int | tuple[int, int]

    def __post_init__(self):
        if self.kind not in ("conv", "inception", "output"):
            raise ValidationError(f"unknown layer kind {self.kind!r}")
        if self.kernel_px < 1:
            raise ValidationError("kernel_px must be >= 1")
        ch = self.channels_out
        if self.kind == "inception":
            if isinstance(ch, list):
                object.__setattr__(self, "channels_out", tuple(ch))
                ch = self.channels_out
            if not (isinstance(ch, tuple) and len(ch) == 2 and min(ch) >= 1):
                raise ValidationError("inception layers need a pair of branch widths")
            if self.kernel_px % 2 == 0:
                raise ValidationError("inception kernel must be odd to centre the 1x1 branch")
        elif not (isinstance(ch, int) and ch >= 1):
            raise ValidationError("channels_out must be a positive integer")


# 1 + (2+2+2+15+2+2+14+0+0) = 40
DEFAULT_LAYERS = (
    LayerSpec("conv", 3, 64),
    LayerSpec("inception", 3, (16, 16)),
    LayerSpec("inception", 3, (16, 32)),
    LayerSpec("conv", 16, 16),
    LayerSpec("inception", 3, (112, 48)),
    LayerSpec("inception", 3, (40, 40)),
    LayerSpec("conv", 15, 32),
    LayerSpec("conv", 1, 64),
    LayerSpec("output", 1, 1),
)


@dataclass(frozen=True)
class ModelConfig:
    layers: tuple[LayerSpec, ...] = DEFAULT_LAYERS
    leaky_slope: float = 0.01
    redundant_counting: bool = True
    width_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.layers:
            raise ValidationError("empty layer list")
        last = self.layers[-1]
        if last.kind != "output" or last.kernel_px != 1 or last.channels_out != 1:
            raise ValidationError("last layer must be a 1x1 output layer with one channel")
        if any(l.kind == "output" for l in self.layers[:-1]):
            raise ValidationError("only the last layer may be an output layer")
        if not self.width_scale > 0:
            raise ValidationError("width_scale must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["layers"] = [
            {"kind": l.kind, "kernel_px": l.kernel_px,
             "channels_out": list(l.channels_out) if isinstance(l.channels_out, tuple) else l.channels_out}
            for l in self.layers
        ]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "layers" in d:
            d["layers"] = tuple(
                LayerSpec(l["kind"], int(l["kernel_px"]),
                          tuple(l["channels_out"]) if isinstance(l["channels_out"], list) else int(l["channels_out"]))
                for l in d["layers"]
            )
        return cls(**d)


def receptive_field_of(layers) -> int:
    """Receptive field of a stack of stride-1 layers: 1 + sum(kernel - 1)."""
    if not layers:
        raise ValidationError("empty layer list")
    return 1 + sum(l.kernel_px - 1 for l in layers)


def _scaled(c: int, scale: float) -> int:
    return max(1, int(round(c * scale)))


class ConvBlock(nn.Module):
    def __init__(self, cin, cout, k, slope, stride=1):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, k, stride=stride)
        self.bn = nn.BatchNorm2d(cout)
        self.slope = slope

    def forward(self, x):
        return F.leaky_relu(self.bn(self.conv(x)), self.slope)


class Inception(nn.Module):
    """1x1 and kxk branches, both unpadded; the 1x1 branch is centre-cropped to match."""

    def __init__(self, cin, c1, ck, k, slope):
        super().__init__()
        self.b1 = ConvBlock(cin, c1, 1, slope)
        self.bk = ConvBlock(cin, ck, k, slope)
        self.trim = (k - 1) // 2

    def forward(self, x):
        t = self.trim
        a = self.b1(x[:, :, t:x.shape[2] - t, t:x.shape[3] - t] if t else x)
        return torch.cat([a, self.bk(x)], 1)


class HeatmapNet(nn.Module):
    def __init__(self, config: ModelConfig = ModelConfig()):
        super().__init__()
        self.config = config
        s, slope = config.width_scale, config.leaky_slope
        blocks = []
        cin = 1
        # without redundant counting the large kernels move in strides, so far fewer windows overlap
        big = sorted(range(len(config.layers)), key=lambda i: -config.layers[i].kernel_px)[:2]
        self.strided = set() if config.redundant_counting else {i for i in big if config.layers[i].kernel_px > 3}
        for i, spec in enumerate(config.layers):
            if spec.kind == "conv":
                cout = _scaled(spec.channels_out, s)
                stride = ABLATION_STRIDE if i in self.strided else 1
                blocks.append(ConvBlock(cin, cout, spec.kernel_px, slope, stride))
            elif spec.kind == "inception":
                c1, ck = (_scaled(c, s) for c in spec.channels_out)
                blocks.append(Inception(cin, c1, ck, spec.kernel_px, slope))
                cout = c1 + ck
            else:
                blocks.append(nn.Conv2d(cin, 1, 1))
                cout = 1
            cin = cout
        self.blocks = nn.ModuleList(blocks)
        self.rf = receptive_field_of(config.layers)
        self.out_stride = ABLATION_STRIDE ** len(self.strided)
        self.effective_rf = 1
        jump = 1
        for i, spec in enumerate(config.layers):
            self.effective_rf += (spec.kernel_px - 1) * jump
            jump *= ABLATION_STRIDE if i in self.strided else 1
        self.reset_parameters(config.seed)

    def reset_parameters(self, seed: int) -> None:
        """Seeded fan-in scaled uniform init; batch norm starts as identity."""
        g = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for m in self.modules():
                if isinstance(m, nn.Conv2d):
                    fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
                    bound = 1.0 / fan_in ** 0.5
                    m.weight.copy_(torch.rand(m.weight.shape, generator=g) * 2 * bound - bound)
                    m.bias.copy_(torch.rand(m.bias.shape, generator=g) * 2 * bound - bound)
                elif isinstance(m, nn.BatchNorm2d):
                    m.reset_parameters()

    def padding(self, h: int, w: int) -> tuple[int, int, int, int]:
        """(left, right, top, bottom) zero padding for an h x w input."""
        if not self.strided:
            lead = self.rf // 2
            return (lead, self.rf - 1 - lead, lead, self.rf - 1 - lead)
        # centre each window on the block of output pixels it is copied to
        lead = round((self.effective_rf - self.out_stride) / 2)
        return (lead, self._tail(w, lead), lead, self._tail(h, lead))

    def _out_len(self, n: int) -> int:
        for i, spec in enumerate(self.config.layers):
            st = ABLATION_STRIDE if i in self.strided else 1
            n = (n - spec.kernel_px) // st + 1
        return n

    def _tail(self, n: int, lead: int) -> int:
        tail = 0
        while self._out_len(n + lead + tail) * self.out_stride < n:
            tail += 1
        return tail

    def logits(self, x):
        if x.dim() == 3:
            x = x.unsqueeze(1)
        h, w = x.shape[-2:]
        if h < self.rf or w < self.rf:
            raise InputTooSmall(f"input {h}x{w} is smaller than the {self.rf}x{self.rf} receptive field")
        y = F.pad(x, self.padding(h, w))
        for b in self.blocks:
            y = b(y)
        if self.out_stride > 1:
            y = y.repeat_interleave(self.out_stride, -2).repeat_interleave(self.out_stride, -1)
            y = y[..., :h, :w]
        return y

    def forward(self, x):
        """(N, H, W) or (N, 1, H, W) images -> (N, H, W) heatmaps in (0, 1)."""
        return torch.sigmoid(self.logits(x))[:, 0]


def build_model(config: ModelConfig = ModelConfig()) -> HeatmapNet:
    return HeatmapNet(config)


def forward(model: HeatmapNet, images) -> np.ndarray:
    """Inference on a batch of Image2D (or an array) in eval mode; returns float32 heatmaps."""
    if isinstance(images, np.ndarray):
        arr = images
    else:
        arr = np.stack([im.pixels for im in images])
    dtype = next(model.parameters()).dtype
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            out = model(torch.tensor(np.asarray(arr), dtype=dtype))
    finally:
        model.train(was_training)
    return out.numpy()


# --- checkpoints -----------------------------------------------------------

def state_layout(model: nn.Module):
    """(name, shape) of every float tensor stored in a checkpoint, in order."""
    return [(k, tuple(v.shape)) for k, v in model.state_dict().items() if v.is_floating_point()]


def parameter_count(config: ModelConfig) -> int:
    return sum(int(np.prod(s)) for _, s in state_layout(HeatmapNet(config)))


@dataclass
class Checkpoint:
    config: ModelConfig
    state: dict
    meta: dict = field(default_factory=dict)
    optimizer: dict | None = None

    def model(self) -> HeatmapNet:
        m = HeatmapNet(self.config)
        m.load_state_dict(self.state, strict=False)
        m.eval()
        return m

    @classmethod
    def from_model(cls, model: HeatmapNet, meta=None, optimizer=None) -> "Checkpoint":
        state = {k: v.detach().clone() for k, v in model.state_dict().items() if v.is_floating_point()}
        return cls(model.config, state, dict(meta or {}), optimizer)


def _flatten(tensors):
    if not tensors:
        return np.zeros(0, dtype="<f4")
    return np.concatenate([t.detach().to(torch.float32).numpy().ravel() for t in tensors]).astype("<f4")


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    layout = state_layout(HeatmapNet(ckpt.config))
    offsets, pos = [], 0
    for name, shape in layout:
        offsets.append({"name": name, "offset": pos, "shape": list(shape)})
        pos += int(np.prod(shape))
    parts = [ckpt.state[name] for name, _ in layout]
    opt_header = None
    if ckpt.optimizer is not None:
        # Adam moments, same order and shapes as the trainable parameters
        opt_header = {"step": int(ckpt.optimizer["step"]), "n": 2 * len(ckpt.optimizer["exp_avg"])}
        parts += list(ckpt.optimizer["exp_avg"]) + list(ckpt.optimizer["exp_avg_sq"])
    header = json.dumps({
        "config": ckpt.config.to_dict(),
        "n_params": pos,
        "offsets": offsets,
        "optimizer": opt_header,
        "meta": ckpt.meta,
    }, sort_keys=True).encode("utf-8")
    payload = _flatten(parts).tobytes()
    try:
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(header)) + header + payload)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def load_checkpoint(path) -> Checkpoint:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if len(data) < 12 or data[:4] != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint(f"{path}: not a checkpoint")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != CHECKPOINT_VERSION:
        raise UnsupportedVersion(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
        config = ModelConfig.from_dict(header["config"])
    except (ValueError, KeyError, TypeError) as e:
        raise CorruptCheckpoint(f"{path}: unreadable header: {e}") from e
    layout = state_layout(HeatmapNet(config))
    n_params = sum(int(np.prod(s)) for _, s in layout)
    if header.get("n_params") != n_params:
        raise CorruptCheckpoint(f"{path}: header declares {header.get('n_params')} parameters, config implies {n_params}")
    flat = np.frombuffer(data[12 + hlen:], dtype="<f4")
    model = HeatmapNet(config)
    trainable = [tuple(p.shape) for p in model.parameters()]
    n_opt = 2 * sum(int(np.prod(s)) for s in trainable) if header.get("optimizer") else 0
    if flat.size != n_params + n_opt:
        raise CorruptCheckpoint(f"{path}: payload holds {flat.size} values, expected {n_params + n_opt}")
    state, pos = {}, 0
    for name, shape in layout:
        k = int(np.prod(shape))
        state[name] = torch.from_numpy(flat[pos:pos + k].copy()).reshape(shape)
        pos += k
    optimizer = None
    if header.get("optimizer"):
        moments = []
        for _ in range(2):
            group = []
            for shape in trainable:
                k = int(np.prod(shape))
                group.append(torch.from_numpy(flat[pos:pos + k].copy()).reshape(shape))
                pos += k
            moments.append(group)
        optimizer = {"step": header["optimizer"]["step"], "exp_avg": moments[0], "exp_avg_sq": moments[1]}
    return Checkpoint(config, state, header.get("meta", {}), optimizer)


def checkpoint_roundtrip(path, model: HeatmapNet, meta=None) -> HeatmapNet:
    save_checkpoint(path, Checkpoint.from_model(model, meta))
    return load_checkpoint(path).model()


def with_width(config: ModelConfig, width_scale: float) -> ModelConfig:
    return replace(config, width_scale=width_scale)
