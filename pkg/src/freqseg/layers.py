"""Differentiable 3D layers: convolution, pooling, activations, Dice loss, Adam.

Conventions: activations are [B, C, X, Y, Z]; convolution weights are
[out_ch, in_ch, kx, ky, kz]; convolution means cross-correlation (no kernel
flip). Kernels are vectorized through BLAS (tensordot / matmul over strided
window views); forward passes are deterministic for a fixed thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autograd import ShapeError, Tensor, _make, add, div, mean_all, mul, sum_over

_AXES = "xyz"


class OptimizerError(RuntimeError):
    """Optimizer misuse, e.g. stepping a parameter that has no gradient."""


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(e) for e in v)
    if len(t) != 3:
        raise ShapeError(f"expected a triple, got {v!r}")
    return t


def same_padding(kernel) -> tuple[int, int, int]:
    """Padding that preserves spatial extents at stride 1; kernels must be odd."""
    k = _triple(kernel)
    for axis, e in enumerate(k):
        if e % 2 == 0:
            raise ShapeError(f"same padding needs odd kernels, axis {_AXES[axis]} has extent {e}")
    return tuple(e // 2 for e in k)


@dataclass
class ConvParams:
    """Weights/bias plus stride and padding for conv3d / conv3d_transpose."""

    weights: Tensor  # [out_ch, in_ch, kx, ky, kz]
    bias: Tensor  # [out_ch]
    stride: tuple[int, int, int] = (1, 1, 1)
    padding: tuple[int, int, int] = (0, 0, 0)

    def __post_init__(self):
        self.stride = _triple(self.stride)
        self.padding = _triple(self.padding)
        if self.weights.ndim != 5:
            raise ShapeError(f"conv weights must be 5-d, got shape {self.weights.shape}")
        if self.weights.shape[0] < 1 or self.weights.shape[1] < 1:
            raise ShapeError("conv channel counts must be >= 1")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"bias shape {self.bias.shape} does not match out_ch {self.weights.shape[0]}"
            )

    @property
    def out_ch(self) -> int:
        return self.weights.shape[0]

    @property
    def in_ch(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel(self) -> tuple[int, int, int]:
        return self.weights.shape[2:]


def _windows(xp: np.ndarray, kernel, stride, out_sp) -> np.ndarray:
    """Strided view [B, C, Xo, Yo, Zo, kx, ky, kz] over the padded input."""
    b, c = xp.shape[:2]
    sb, sc, sx, sy, sz = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(b, c) + tuple(out_sp) + tuple(kernel),
        strides=(sb, sc, sx * stride[0], sy * stride[1], sz * stride[2], sx, sy, sz),
        writeable=False,
    )


def conv3d(x: Tensor, params: ConvParams) -> Tensor:
    """3D cross-correlation with bias, differentiable in x, weights, and bias."""
    if x.ndim != 5:
        raise ShapeError(f"conv3d input must be [B,C,X,Y,Z], got shape {x.shape}")
    if x.shape[1] != params.in_ch:
        raise ShapeError(
            f"conv3d: channel axis has {x.shape[1]} channels, params expect {params.in_ch}"
        )
    w, bias = params.weights, params.bias
    kernel, stride, padding = params.kernel, params.stride, params.padding
    out_sp = []
    for axis in range(3):
        padded = x.shape[2 + axis] + 2 * padding[axis]
        if padded < kernel[axis]:
            raise ShapeError(
                f"conv3d: axis {_AXES[axis]} extent {padded} after padding is smaller "
                f"than kernel extent {kernel[axis]}"
            )
        out_sp.append((padded - kernel[axis]) // stride[axis] + 1)

    pads = ((0, 0), (0, 0)) + tuple((p, p) for p in padding)
    xp = np.pad(x.data, pads) if any(padding) else x.data
    win = _windows(xp, kernel, stride, out_sp)
    out = np.tensordot(win, w.data, axes=([1, 5, 6, 7], [1, 2, 3, 4]))  # [B,Xo,Yo,Zo,O]
    out = np.ascontiguousarray(np.moveaxis(out, -1, 1))
    out += bias.data.reshape(1, -1, 1, 1, 1)

    def backward(gout):
        if bias.requires_grad:
            bias.accumulate_grad(gout.sum(axis=(0, 2, 3, 4)))
        if w.requires_grad:
            w.accumulate_grad(
                np.tensordot(gout, win, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
            )
        if x.requires_grad:
            # d/dx of a correlation is a stride-1 correlation of the
            # (stride-dilated, kernel-padded) output gradient with the
            # kernel flipped spatially and transposed in channels
            dil_sp = tuple((out_sp[a] - 1) * stride[a] + 1 for a in range(3))
            if stride == (1, 1, 1):
                gd = gout
            else:
                gd = np.zeros(gout.shape[:2] + dil_sp)
                gd[:, :, :: stride[0], :: stride[1], :: stride[2]] = gout
            gdp = np.pad(gd, ((0, 0), (0, 0)) + tuple((k - 1, k - 1) for k in kernel))
            q_sp = tuple(dil_sp[a] + kernel[a] - 1 for a in range(3))
            win_g = _windows(gdp, kernel, (1, 1, 1), q_sp)
            flipped = w.data[:, :, ::-1, ::-1, ::-1]
            gq = np.tensordot(win_g, flipped, axes=([1, 5, 6, 7], [0, 2, 3, 4]))
            gq = np.moveaxis(gq, -1, 1)  # [B,C,Qx,Qy,Qz]
            padded_sp = tuple(x.shape[2 + a] + 2 * padding[a] for a in range(3))
            if q_sp != padded_sp:
                # strides that do not tile the input leave trailing voxels
                # unvisited; their gradient is zero
                gfull = np.zeros(x.shape[:2] + padded_sp)
                gfull[:, :, : q_sp[0], : q_sp[1], : q_sp[2]] = gq
                gq = gfull
            if any(padding):
                px, py, pz = padding
                gq = gq[:, :, px : px + x.shape[2], py : py + x.shape[3], pz : pz + x.shape[4]]
            x.accumulate_grad(np.ascontiguousarray(gq))

    return _make(out, (x, w, bias), backward)


def conv3d_transpose(x: Tensor, params: ConvParams) -> Tensor:
    """Transposed 3D convolution (stride-s scatter); strides of 1 or 2, no padding."""
    if x.ndim != 5:
        raise ShapeError(f"conv3d_transpose input must be [B,C,X,Y,Z], got shape {x.shape}")
    if x.shape[1] != params.in_ch:
        raise ShapeError(
            f"conv3d_transpose: channel axis has {x.shape[1]} channels, "
            f"params expect {params.in_ch}"
        )
    if any(p != 0 for p in params.padding):
        raise ShapeError("conv3d_transpose supports zero padding only")
    for axis, s in enumerate(params.stride):
        if s not in (1, 2):
            raise ShapeError(f"conv3d_transpose: unsupported stride {s} on axis {_AXES[axis]}")
    w, bias = params.weights, params.bias
    kernel, stride = params.kernel, params.stride
    in_sp = x.shape[2:]
    out_sp = tuple((in_sp[a] - 1) * stride[a] + kernel[a] for a in range(3))

    xt = np.ascontiguousarray(np.moveaxis(x.data, 1, -1))  # [B,X,Y,Z,C]
    out_l = np.zeros((x.shape[0],) + out_sp + (params.out_ch,))
    slices = []
    for i in range(kernel[0]):
        tx = slice(i, i + in_sp[0] * stride[0], stride[0])
        for j in range(kernel[1]):
            ty = slice(j, j + in_sp[1] * stride[1], stride[1])
            for k in range(kernel[2]):
                tz = slice(k, k + in_sp[2] * stride[2], stride[2])
                slices.append((i, j, k, tx, ty, tz))
                out_l[:, tx, ty, tz, :] += xt @ w.data[:, :, i, j, k].T
    out = np.ascontiguousarray(np.moveaxis(out_l, -1, 1))
    out += bias.data.reshape(1, -1, 1, 1, 1)

    def backward(gout):
        if bias.requires_grad:
            bias.accumulate_grad(gout.sum(axis=(0, 2, 3, 4)))
        gl = np.ascontiguousarray(np.moveaxis(gout, 1, -1))  # [B,Xo,Yo,Zo,O]
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for i, j, k, tx, ty, tz in slices:
                sl = gl[:, tx, ty, tz, :]
                gw[:, :, i, j, k] = np.tensordot(sl, xt, axes=([0, 1, 2, 3], [0, 1, 2, 3]))
            w.accumulate_grad(gw)
        if x.requires_grad:
            gx_l = np.zeros_like(xt)
            for i, j, k, tx, ty, tz in slices:
                gx_l += gl[:, tx, ty, tz, :] @ w.data[:, :, i, j, k]
            x.accumulate_grad(np.moveaxis(gx_l, -1, 1))

    return _make(out, (x, w, bias), backward)


def maxpool3d(x: Tensor, window) -> Tensor:
    """Max pooling over non-overlapping windows; backward routes the gradient
    to the argmax voxel of each window (ties to the lowest linear index)."""
    if x.ndim != 5:
        raise ShapeError(f"maxpool3d input must be [B,C,X,Y,Z], got shape {x.shape}")
    wdw = _triple(window)
    for axis in range(3):
        if x.shape[2 + axis] % wdw[axis] != 0:
            raise ShapeError(
                f"maxpool3d: axis {_AXES[axis]} extent {x.shape[2 + axis]} is not "
                f"divisible by window {wdw[axis]}"
            )
    b, c = x.shape[:2]
    ox, oy, oz = (x.shape[2 + a] // wdw[a] for a in range(3))
    tiled = x.data.reshape(b, c, ox, wdw[0], oy, wdw[1], oz, wdw[2])
    tiled = np.ascontiguousarray(tiled.transpose(0, 1, 2, 4, 6, 3, 5, 7))
    flat = tiled.reshape(b, c, ox, oy, oz, -1)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(gout):
        if x.requires_grad:
            g = np.zeros_like(flat)
            np.put_along_axis(g, arg[..., None], gout[..., None], axis=-1)
            g = g.reshape(b, c, ox, oy, oz, wdw[0], wdw[1], wdw[2])
            g = g.transpose(0, 1, 2, 5, 3, 6, 4, 7).reshape(x.shape)
            x.accumulate_grad(g)

    return _make(out, (x,), backward)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)

    def backward(gout):
        if x.requires_grad:
            x.accumulate_grad(gout * np.where(pos, 1.0, slope))

    return _make(out, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ex = np.exp(d[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(gout):
        if x.requires_grad:
            x.accumulate_grad(gout * out * (1.0 - out))

    return _make(out, (x,), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack two activations along the channel axis."""
    if a.ndim != 5 or b.ndim != 5:
        raise ShapeError("concat_channels expects [B,C,X,Y,Z] operands")
    for axis in (0, 2, 3, 4):
        if a.shape[axis] != b.shape[axis]:
            name = "batch" if axis == 0 else _AXES[axis - 2]
            raise ShapeError(
                f"concat_channels: axis {name} has extents {a.shape[axis]} vs {b.shape[axis]}"
            )
    na = a.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward(gout):
        if a.requires_grad:
            a.accumulate_grad(gout[:, :na])
        if b.requires_grad:
            b.accumulate_grad(gout[:, na:])

    return _make(out, (a, b), backward)


def soft_dice_loss(pred: Tensor, target: np.ndarray, eps: float = 1e-5) -> Tensor:
    """1 minus the smoothed overlap ratio with squared-magnitude denominator,
    averaged over batch and class channels.

    pred holds per-voxel probabilities in [0,1], target is binary {0,1} with
    the same [B,C,X,Y,Z] shape. eps guards empty targets.
    """
    t = np.asarray(target)
    if t.shape != pred.shape:
        raise ShapeError(f"soft_dice_loss: target shape {t.shape} vs pred shape {pred.shape}")
    if not np.isin(t, (0, 1)).all():
        raise ValueError("soft_dice_loss: target must be binary {0,1}")
    g = Tensor(t)
    spatial = (2, 3, 4)
    inter = sum_over(mul(pred, g), spatial)
    psq = sum_over(mul(pred, pred), spatial)
    gsq = Tensor((t.astype(np.float64) ** 2).sum(axis=spatial))
    dice = div(add(mul(inter, 2.0), eps), add(add(psq, gsq), eps))
    return 1.0 - mean_all(dice)


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    """Uniform init scaled by fan-in: U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def make_conv_params(
    rng: np.random.Generator,
    in_ch: int,
    out_ch: int,
    kernel,
    stride=1,
    padding=0,
    name: str = "conv",
) -> ConvParams:
    """Fresh trainable ConvParams with fan-in-scaled uniform weights, zero bias."""
    k = _triple(kernel)
    fan_in = in_ch * k[0] * k[1] * k[2]
    w = Tensor(fan_in_uniform(rng, (out_ch, in_ch) + k, fan_in), requires_grad=True,
               name=f"{name}.weight")
    b = Tensor(np.zeros(out_ch), requires_grad=True, name=f"{name}.bias")
    return ConvParams(w, b, _triple(stride), _triple(padding))


class Adam:
    """Adam with bias correction; ``step`` zeroes gradients after the update."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not 0.0 < beta1 < 1.0 or not 0.0 < beta2 < 1.0:
            raise ValueError("Adam betas must lie in (0,1)")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                label = p.name if p.name else f"parameter #{i}"
                raise OptimizerError(f"{label} has no gradient; run backward first")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for i, p in enumerate(self.params):
            g = p.grad
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / c1
            v_hat = self.v[i] / c2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
