"""Segmentation models: a compact 3D U-Net and its frequency-fusion variants.

Three model modes share one backbone:

  none   raw volume -> U-Net -> per-class sigmoid
  early  high/low parts -> one conv branch each -> channel concat -> U-Net
  late   high part -> branch -> U-Net logits, plus a 1x1x1 projection of the
         low branch added at the logit level

Branches are single 3x3x3 same-padded convolutions with leaky ReLU. All
parameters are float64 tensors; checkpoints round-trip them bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autograd import ShapeError, Tensor, add
from .data import Volume
from .frequency import disentangle
from .layers import (
    ConvParams,
    concat_channels,
    conv3d,
    conv3d_transpose,
    leaky_relu,
    make_conv_params,
    maxpool3d,
    sigmoid,
)

_AXES = "xyz"
MODES = ("none", "early", "late")

CKPT_MAGIC = b"FSEGCKPT"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    """Malformed or mismatched checkpoint file."""


@dataclass
class UNetConfig:
    in_channels: int = 1
    num_classes: int = 1
    depth: int = 3
    base_channels: int = 8

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        if min(self.in_channels, self.num_classes, self.base_channels) < 1:
            raise ValueError("channel counts must be >= 1")

    @property
    def required_multiple(self) -> int:
        return 2 ** (self.depth - 1)


@dataclass
class FusionConfig:
    mode: str = "none"
    theta: float = 0.5
    branch_channels: int = 8

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown fusion mode {self.mode!r}, expected one of {MODES}")
        if not 0.0 < self.theta < 1.0:
            raise ValueError(f"theta must lie in (0,1), got {self.theta}")
        if self.branch_channels < 1:
            raise ValueError("branch_channels must be >= 1")


class _DoubleConv:
    """Two same-padded 3x3x3 convolutions, each followed by leaky ReLU."""

    def __init__(self, rng, in_ch: int, out_ch: int, name: str):
        self.conv1 = make_conv_params(rng, in_ch, out_ch, 3, padding=1, name=f"{name}.conv1")
        self.conv2 = make_conv_params(rng, out_ch, out_ch, 3, padding=1, name=f"{name}.conv2")

    def forward(self, x: Tensor) -> Tensor:
        x = leaky_relu(conv3d(x, self.conv1))
        return leaky_relu(conv3d(x, self.conv2))

    def conv_params(self) -> list[ConvParams]:
        return [self.conv1, self.conv2]


class UNet3D:
    """Encoder/decoder with skip connections; returns logits [B,num_classes,...]."""

    def __init__(self, config: UNetConfig, rng: np.random.Generator):
        self.config = config
        chans = [config.base_channels * 2**d for d in range(config.depth)]
        self.encoders = []
        in_ch = config.in_channels
        for d in range(config.depth - 1):
            self.encoders.append(_DoubleConv(rng, in_ch, chans[d], f"enc{d}"))
            in_ch = chans[d]
        self.bottleneck = _DoubleConv(rng, chans[-2], chans[-1], "bottleneck")
        self.upsamples = []
        self.decoders = []
        for d in reversed(range(config.depth - 1)):
            self.upsamples.append(
                make_conv_params(rng, chans[d + 1], chans[d], 2, stride=2, name=f"up{d}")
            )
            self.decoders.append(_DoubleConv(rng, 2 * chans[d], chans[d], f"dec{d}"))
        self.head = make_conv_params(rng, chans[0], config.num_classes, 1, name="head")

    def check_extents(self, spatial) -> None:
        mult = self.config.required_multiple
        for axis, e in enumerate(spatial):
            if e % mult != 0:
                raise ShapeError(
                    f"axis {_AXES[axis]} extent {e} is not a multiple of {mult} "
                    f"(required at depth {self.config.depth})"
                )

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 5:
            raise ShapeError(f"expected [B,C,X,Y,Z] input, got shape {x.shape}")
        if x.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"expected {self.config.in_channels} input channels, got {x.shape[1]}"
            )
        self.check_extents(x.shape[2:])
        skips = []
        for enc in self.encoders:
            x = enc.forward(x)
            skips.append(x)
            x = maxpool3d(x, 2)
        x = self.bottleneck.forward(x)
        for up, dec, skip in zip(self.upsamples, self.decoders, reversed(skips)):
            x = conv3d_transpose(x, up)
            x = dec.forward(concat_channels(skip, x))
        return conv3d(x, self.head)

    def conv_params(self) -> list[ConvParams]:
        groups = []
        for enc in self.encoders:
            groups.extend(enc.conv_params())
        groups.extend(self.bottleneck.conv_params())
        for up, dec in zip(self.upsamples, self.decoders):
            groups.append(up)
            groups.extend(dec.conv_params())
        groups.append(self.head)
        return groups


def _as_input(a) -> Tensor:
    if isinstance(a, Tensor):
        return a
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 3:
        a = a[None, None]
    if a.ndim != 5:
        raise ShapeError(f"model input must be 3-d or [B,C,X,Y,Z], got shape {a.shape}")
    return Tensor(a)


class SegmentationModel:
    """Shared surface: prepare() turns a volume into forward() inputs."""

    mode: str

    def __init__(self, unet_config: UNetConfig, fusion: FusionConfig, seed: int):
        self.unet_config = unet_config
        self.fusion = fusion
        self.seed = seed

    def conv_params(self) -> list[ConvParams]:
        raise NotImplementedError

    def prepare(self, volume: Volume) -> tuple[np.ndarray, ...]:
        raise NotImplementedError

    def forward(self, *inputs) -> Tensor:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        out = []
        for cp in self.conv_params():
            out.append(cp.weights)
            out.append(cp.bias)
        return out

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(p.name, p) for p in self.parameters()]

    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())


class BaselineModel(SegmentationModel):
    mode = "none"

    def __init__(self, unet_config: UNetConfig, fusion: FusionConfig, seed: int):
        super().__init__(unet_config, fusion, seed)
        self.unet = UNet3D(unet_config, np.random.default_rng(seed))

    def prepare(self, volume: Volume) -> tuple[np.ndarray, ...]:
        return (volume.data[None, None],)

    def forward(self, x) -> Tensor:
        return sigmoid(self.unet.forward(_as_input(x)))

    def conv_params(self) -> list[ConvParams]:
        return self.unet.conv_params()


class EarlyFusionModel(SegmentationModel):
    mode = "early"

    def __init__(self, unet_config: UNetConfig, fusion: FusionConfig, seed: int):
        super().__init__(unet_config, fusion, seed)
        rng = np.random.default_rng(seed)
        bc = fusion.branch_channels
        self.branch_high = make_conv_params(rng, 1, bc, 3, padding=1, name="branch_high")
        self.branch_low = make_conv_params(rng, 1, bc, 3, padding=1, name="branch_low")
        self.unet = UNet3D(unet_config, rng)

    def prepare(self, volume: Volume) -> tuple[np.ndarray, ...]:
        pair = disentangle(volume.data, self.fusion.theta)
        return (pair.high[None, None], pair.low[None, None])

    def forward(self, high, low) -> Tensor:
        o_h = leaky_relu(conv3d(_as_input(high), self.branch_high))
        o_l = leaky_relu(conv3d(_as_input(low), self.branch_low))
        return sigmoid(self.unet.forward(concat_channels(o_h, o_l)))

    def conv_params(self) -> list[ConvParams]:
        return [self.branch_high, self.branch_low] + self.unet.conv_params()


class LateFusionModel(SegmentationModel):
    mode = "late"

    def __init__(self, unet_config: UNetConfig, fusion: FusionConfig, seed: int):
        super().__init__(unet_config, fusion, seed)
        rng = np.random.default_rng(seed)
        bc = fusion.branch_channels
        self.branch_high = make_conv_params(rng, 1, bc, 3, padding=1, name="branch_high")
        self.branch_low = make_conv_params(rng, 1, bc, 3, padding=1, name="branch_low")
        self.unet = UNet3D(unet_config, rng)
        self.proj = make_conv_params(rng, bc, unet_config.num_classes, 1, name="proj")

    def prepare(self, volume: Volume) -> tuple[np.ndarray, ...]:
        pair = disentangle(volume.data, self.fusion.theta)
        return (pair.high[None, None], pair.low[None, None])

    def forward(self, high, low) -> Tensor:
        o_h = leaky_relu(conv3d(_as_input(high), self.branch_high))
        o_l = leaky_relu(conv3d(_as_input(low), self.branch_low))
        seg_high = self.unet.forward(o_h)
        return sigmoid(add(seg_high, conv3d(o_l, self.proj)))

    def conv_params(self) -> list[ConvParams]:
        return [self.branch_high, self.branch_low] + self.unet.conv_params() + [self.proj]


def expected_in_channels(fusion: FusionConfig) -> int:
    if fusion.mode == "early":
        return 2 * fusion.branch_channels
    if fusion.mode == "late":
        return fusion.branch_channels
    return 1


def build_model(unet_config: UNetConfig, fusion: FusionConfig, seed: int) -> SegmentationModel:
    expected = expected_in_channels(fusion)
    if unet_config.in_channels != expected:
        raise ValueError(
            f"fusion mode {fusion.mode!r} feeds the backbone {expected} channels, "
            f"but in_channels is {unet_config.in_channels}"
        )
    cls = {"none": BaselineModel, "early": EarlyFusionModel, "late": LateFusionModel}
    return cls[fusion.mode](unet_config, fusion, seed)


def _conv_param_total(in_ch: int, out_ch: int, kernel: int) -> int:
    return out_ch * in_ch * kernel**3 + out_ch


def expected_parameter_count(unet_config: UNetConfig, fusion: FusionConfig) -> int:
    """Closed-form trainable-scalar count, for auditing the built models."""
    cfg = unet_config
    chans = [cfg.base_channels * 2**d for d in range(cfg.depth)]
    total = 0
    in_ch = cfg.in_channels
    for d in range(cfg.depth - 1):
        total += _conv_param_total(in_ch, chans[d], 3) + _conv_param_total(chans[d], chans[d], 3)
        in_ch = chans[d]
    total += _conv_param_total(chans[-2], chans[-1], 3) + _conv_param_total(chans[-1], chans[-1], 3)
    for d in reversed(range(cfg.depth - 1)):
        total += _conv_param_total(chans[d + 1], chans[d], 2)
        total += _conv_param_total(2 * chans[d], chans[d], 3) + _conv_param_total(chans[d], chans[d], 3)
    total += _conv_param_total(chans[0], cfg.num_classes, 1)
    if fusion.mode in ("early", "late"):
        total += 2 * _conv_param_total(1, fusion.branch_channels, 3)
    if fusion.mode == "late":
        total += _conv_param_total(fusion.branch_channels, cfg.num_classes, 1)
    return total


def save_checkpoint(path, model: SegmentationModel) -> None:
    """Binary parameter dump; float64 little-endian, bit-exact on reload."""
    named = model.named_parameters()
    parts = [CKPT_MAGIC, struct.pack("<HI", CKPT_VERSION, len(named))]
    for name, p in named:
        encoded = name.encode()
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", p.ndim))
        parts.append(struct.pack(f"<{p.ndim}Q", *p.shape))
        parts.append(p.data.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < len(CKPT_MAGIC) + 6:
        raise CheckpointError(f"{path}: file shorter than the checkpoint header")
    if raw[: len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:len(CKPT_MAGIC)]!r}")
    offset = len(CKPT_MAGIC)
    version, count = struct.unpack_from("<HI", raw, offset)
    offset += 6
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    params: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset : offset + name_len].decode()
            offset += name_len
            (rank,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            shape = struct.unpack_from(f"<{rank}Q", raw, offset)
            offset += 8 * rank
            n = int(np.prod(shape, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(raw, dtype="<f8", count=n, offset=offset)
            offset += 8 * n
            params[name] = arr.astype(np.float64).reshape(shape)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from exc
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes after parameters")
    return params


def load_checkpoint_into(path, model: SegmentationModel) -> None:
    params = load_checkpoint(path)
    named = dict(model.named_parameters())
    missing = sorted(set(named) - set(params))
    extra = sorted(set(params) - set(named))
    if missing or extra:
        raise CheckpointError(
            f"{path}: parameter names do not match the model "
            f"(missing {missing or 'none'}, unexpected {extra or 'none'})"
        )
    for name, tensor in named.items():
        if params[name].shape != tensor.shape:
            raise CheckpointError(
                f"{path}: {name} has shape {params[name].shape}, model expects {tensor.shape}"
            )
    for name, tensor in named.items():
        tensor.data = params[name]
        tensor.grad = None
