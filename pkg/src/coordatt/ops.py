"""Differentiable layer primitives on :class:`~coordatt.tensor.Tensor`.

Convolutions are cross-correlations evaluated as a sum over kernel taps, each
tap a grouped channel contraction; the backward pass scatters the same taps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Rng, ShapeError, Tensor

__all__ = [
    "ConvParams",
    "BatchNormParams",
    "LinearParams",
    "conv2d",
    "conv_output_extent",
    "global_avg_pool",
    "global_max_pool",
    "pool_x",
    "pool_y",
    "channel_pool_mean_max",
    "sigmoid",
    "relu",
    "relu6",
    "hard_swish",
    "activation",
    "ACTIVATIONS",
    "batchnorm",
    "linear",
    "flatten",
    "softmax",
    "cross_entropy",
    "kaiming_uniform",
]


@dataclass
class ConvParams:
    weight: Tensor
    bias: Tensor | None = None
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ShapeError(f"conv weight must be [Cout, Cin/groups, kH, kW], got {list(self.weight.shape)}")
        cout = self.weight.shape[0]
        if self.groups < 1 or cout % self.groups:
            raise ShapeError(f"groups={self.groups} does not divide Cout={cout}")
        if self.bias is not None and self.bias.shape != (cout,):
            raise ShapeError(f"bias shape {list(self.bias.shape)} != [{cout}]")
        if self.stride < 1 or self.padding < 0:
            raise ShapeError("stride must be >= 1 and padding >= 0")

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def out_channels(self) -> int:
        return self.weight.shape[0]

    @property
    def kernel_size(self) -> tuple[int, int]:
        return self.weight.shape[2], self.weight.shape[3]

    @classmethod
    def init(cls, rng: Rng, cin: int, cout: int, kernel: int = 1, stride: int = 1,
             padding: int | None = None, groups: int = 1, bias: bool = False) -> "ConvParams":
        if cin % groups:
            raise ShapeError(f"groups={groups} does not divide Cin={cin}")
        shape = (cout, cin // groups, kernel, kernel)
        w = Tensor(kaiming_uniform(rng, shape), requires_grad=True)
        b = Tensor.zeros((cout,), requires_grad=True) if bias else None
        pad = (kernel - 1) // 2 if padding is None else padding
        return cls(w, b, stride=stride, padding=pad, groups=groups)


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: Tensor = field(metadata={"buffer": True})
    running_var: Tensor = field(metadata={"buffer": True})
    eps: float = 1e-5
    momentum: float = 0.1
    mode: str = "train"

    @classmethod
    def init(cls, channels: int, eps: float = 1e-5, momentum: float = 0.1) -> "BatchNormParams":
        return cls(
            gamma=Tensor.ones((channels,), requires_grad=True),
            beta=Tensor.zeros((channels,), requires_grad=True),
            running_mean=Tensor.zeros((channels,)),
            running_var=Tensor.ones((channels,)),
            eps=eps,
            momentum=momentum,
        )

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


@dataclass
class LinearParams:
    weight: Tensor  # [Cout, Cin]
    bias: Tensor | None = None

    @classmethod
    def init(cls, rng: Rng, cin: int, cout: int, bias: bool = True) -> "LinearParams":
        w = Tensor(kaiming_uniform(rng, (cout, cin)), requires_grad=True)
        b = Tensor.zeros((cout,), requires_grad=True) if bias else None
        return cls(w, b)


def kaiming_uniform(rng: Rng, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(shape, -bound, bound)


# -- convolution


def conv_output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects [N,C,H,W], got {list(x.shape)}")
    n, cin, h, w = x.shape
    if cin != p.in_channels:
        raise ShapeError(f"input has {cin} channels, conv expects {p.in_channels}")
    g = p.groups
    cout = p.out_channels
    kh, kw = p.kernel_size
    s, pad = p.stride, p.padding
    ho = conv_output_extent(h, kh, s, pad)
    wo = conv_output_extent(w, kw, s, pad)
    if ho < 1 or wo < 1:
        raise ShapeError(f"kernel {kh}x{kw} does not fit input {h}x{w} with padding {pad}")
    cig, cog = cin // g, cout // g

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    xg = xp.reshape(n, g, cig, h + 2 * pad, w + 2 * pad)
    wg = p.weight.data.reshape(g, cog, cig, kh, kw)
    hspan, wspan = s * (ho - 1) + 1, s * (wo - 1) + 1
    depthwise = cig == 1 and cog == 1

    out = np.zeros((n, g, cog, ho, wo))
    for i in range(kh):
        for j in range(kw):
            patch = xg[:, :, :, i:i + hspan:s, j:j + wspan:s]
            if depthwise:
                out[:, :, 0] += patch[:, :, 0] * wg[None, :, 0, 0, i, j, None, None]
            elif kh == kw == 1:
                # accumulate input channels in a fixed order so every spatial
                # position sees identical arithmetic (BLAS may not)
                for k in range(cig):
                    out += wg[None, :, :, k, i, j, None, None] * patch[:, :, None, k]
            else:
                cols = patch.reshape(n, g, cig, ho * wo)
                out += np.matmul(wg[None, :, :, :, i, j], cols).reshape(n, g, cog, ho, wo)
    out = out.reshape(n, cout, ho, wo)
    if p.bias is not None:
        out += p.bias.data[None, :, None, None]

    parents = (x, p.weight) + ((p.bias,) if p.bias is not None else ())

    def bwd(grad):
        gg = grad.reshape(n, g, cog, ho, wo)
        gcols = grad.reshape(n, g, cog, ho * wo)
        dx = np.zeros_like(xg) if x.requires_grad else None
        dw = np.zeros_like(wg) if p.weight.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                sl = (slice(None),) * 3 + (slice(i, i + hspan, s), slice(j, j + wspan, s))
                if depthwise:
                    if dx is not None:
                        dx[sl] += gg * wg[None, :, 0, 0, i, j, None, None, None]
                    if dw is not None:
                        dw[:, 0, 0, i, j] += (gg[:, :, 0] * xg[sl][:, :, 0]).sum(axis=(0, 2, 3))
                else:
                    if dx is not None:
                        wt = wg[:, :, :, i, j].transpose(0, 2, 1)[None]
                        dx[sl] += np.matmul(wt, gcols).reshape(n, g, cig, ho, wo)
                    if dw is not None:
                        cols = xg[sl].reshape(n, g, cig, ho * wo)
                        dw[:, :, :, i, j] += np.matmul(gcols, cols.transpose(0, 1, 3, 2)).sum(axis=0)
        grads = []
        if dx is not None:
            dx = dx.reshape(n, cin, h + 2 * pad, w + 2 * pad)
            if pad:
                dx = dx[:, :, pad:pad + h, pad:pad + w]
            dx = np.ascontiguousarray(dx)
        grads.append(dx)
        grads.append(None if dw is None else dw.reshape(p.weight.shape))
        if p.bias is not None:
            grads.append(grad.sum(axis=(0, 2, 3)))
        return grads

    return Tensor.from_op(out, "conv2d", parents, bwd)


# -- pooling


def _check4(x: Tensor, op: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op} expects [N,C,H,W], got {list(x.shape)}")


def _orderfree_sum(a: np.ndarray, axis) -> np.ndarray:
    # summing in sorted order makes the result a function of the multiset of
    # values, so pooled outputs are bit-identical under permutations
    if isinstance(axis, tuple):
        lead = a.shape[:axis[0]]
        a = a.reshape(lead + (-1,))
        return np.sort(a, axis=-1).sum(axis=-1).reshape(lead + (1,) * len(axis))
    return np.sort(a, axis=axis).sum(axis=axis, keepdims=True)


def global_avg_pool(x: Tensor) -> Tensor:
    """Per-channel mean over all H*W positions, invariant to any spatial permutation."""
    _check4(x, "global_avg_pool")
    n, c, h, w = x.shape
    out = _orderfree_sum(x.data, (2, 3)) / (h * w)
    return Tensor.from_op(
        out, "global_avg_pool", (x,),
        lambda g: (np.broadcast_to(g / (h * w), x.shape).copy(),),
    )


def pool_x(x: Tensor) -> Tensor:
    """Average along width: one value per row, shape [N,C,H,1]."""
    _check4(x, "pool_x")
    w = x.shape[3]
    out = _orderfree_sum(x.data, 3) / w
    return Tensor.from_op(
        out, "pool_x", (x,), lambda g: (np.broadcast_to(g / w, x.shape).copy(),))


def pool_y(x: Tensor) -> Tensor:
    """Average along height: one value per column, shape [N,C,1,W]."""
    _check4(x, "pool_y")
    h = x.shape[2]
    out = _orderfree_sum(x.data, 2) / h
    return Tensor.from_op(
        out, "pool_y", (x,), lambda g: (np.broadcast_to(g / h, x.shape).copy(),))


def global_max_pool(x: Tensor) -> Tensor:
    """Per-channel max; the gradient goes to the first maximum in row-major order."""
    _check4(x, "global_max_pool")
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    idx = flat.argmax(axis=2)
    out = np.take_along_axis(flat, idx[..., None], axis=2).reshape(n, c, 1, 1)

    def bwd(g):
        dx = np.zeros((n, c, h * w))
        np.put_along_axis(dx, idx[..., None], g.reshape(n, c, 1), axis=2)
        return (dx.reshape(x.shape),)

    return Tensor.from_op(out, "global_max_pool", (x,), bwd)


def channel_pool_mean_max(x: Tensor) -> Tensor:
    """[N,C,H,W] -> [N,2,H,W]: channel 0 is the mean over C, channel 1 the max."""
    _check4(x, "channel_pool_mean_max")
    n, c, h, w = x.shape
    idx = x.data.argmax(axis=1)[:, None]
    mx = np.take_along_axis(x.data, idx, axis=1)
    out = np.concatenate([x.data.sum(axis=1, keepdims=True) / c, mx], axis=1)

    def bwd(g):
        dx = np.broadcast_to(g[:, :1] / c, x.shape).copy()
        np.put_along_axis(dx, idx, np.take_along_axis(dx, idx, axis=1) + g[:, 1:], axis=1)
        return (dx,)

    return Tensor.from_op(out, "channel_pool_mean_max", (x,), bwd)


# -- activations


def sigmoid(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(-np.abs(d))
    y = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return Tensor.from_op(y, "sigmoid", (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Tensor) -> Tensor:
    d = x.data
    return Tensor.from_op(np.maximum(d, 0.0), "relu", (x,), lambda g: (g * (d > 0),))


def relu6(x: Tensor) -> Tensor:
    d = x.data
    return Tensor.from_op(
        np.clip(d, 0.0, 6.0), "relu6", (x,), lambda g: (g * ((d > 0) & (d < 6)),))


def hard_swish(x: Tensor) -> Tensor:
    d = x.data
    y = d * np.clip(d + 3.0, 0.0, 6.0) / 6.0
    # derivative: 0 below -3, 1 above 3, (2x + 3) / 6 between
    dy = np.where(d <= -3.0, 0.0, np.where(d >= 3.0, 1.0, (2.0 * d + 3.0) / 6.0))
    return Tensor.from_op(y, "hard_swish", (x,), lambda g: (g * dy,))


ACTIVATIONS = {"relu": relu, "relu6": relu6, "hard_swish": hard_swish, "sigmoid": sigmoid}


def activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}") from None


# -- normalization


def batchnorm(x: Tensor, p: BatchNormParams) -> Tensor:
    """Per-channel normalization over (N, H, W).

    Train mode normalizes with biased batch statistics and folds the unbiased
    variance into the running estimate; eval mode is a fixed affine map.
    """
    if x.ndim != 4 or x.shape[1] != p.channels:
        raise ShapeError(f"batchnorm over {p.channels} channels got {list(x.shape)}")
    gamma = p.gamma.data[None, :, None, None]
    beta = p.beta.data[None, :, None, None]

    if p.mode == "eval":
        inv = 1.0 / np.sqrt(p.running_var.data + p.eps)[None, :, None, None]
        xhat = (x.data - p.running_mean.data[None, :, None, None]) * inv
        out = xhat * gamma + beta

        def bwd_eval(g):
            return g * gamma * inv, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

        return Tensor.from_op(out, "batchnorm_eval", (x, p.gamma, p.beta), bwd_eval)

    if p.mode != "train":
        raise ValueError(f"batchnorm mode must be 'train' or 'eval', got {p.mode!r}")
    m = x.shape[0] * x.shape[2] * x.shape[3]
    mean = x.data.mean(axis=(0, 2, 3), keepdims=True)
    xc = x.data - mean
    var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + p.eps)
    xhat = xc * inv
    out = xhat * gamma + beta

    unbiased = var.ravel() * (m / (m - 1)) if m > 1 else var.ravel()
    mom = p.momentum
    p.running_mean.data = (1 - mom) * p.running_mean.data + mom * mean.ravel()
    p.running_var.data = (1 - mom) * p.running_var.data + mom * unbiased

    def bwd_train(g):
        dxhat = g * gamma
        dx = inv * (dxhat - dxhat.mean(axis=(0, 2, 3), keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True))
        return dx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return Tensor.from_op(out, "batchnorm_train", (x, p.gamma, p.beta), bwd_train)


# -- dense head


def flatten(x: Tensor) -> Tensor:
    return x.reshape(x.shape[0], int(np.prod(x.shape[1:])))


def linear(x: Tensor, p: LinearParams) -> Tensor:
    if x.ndim != 2 or x.shape[1] != p.weight.shape[1]:
        raise ShapeError(f"linear expects [N,{p.weight.shape[1]}], got {list(x.shape)}")
    w = p.weight.data
    out = x.data @ w.T
    if p.bias is not None:
        out = out + p.bias.data
    parents = (x, p.weight) + ((p.bias,) if p.bias is not None else ())

    def bwd(g):
        grads = [g @ w, g.T @ x.data]
        if p.bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return Tensor.from_op(out, "linear", parents, bwd)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [N,K] logits, got {list(logits.shape)}")
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -logp[np.arange(n), labels].mean()

    def bwd(g):
        d = np.exp(logp)
        d[np.arange(n), labels] -= 1.0
        return (d * (g[0] / n),)

    return Tensor.from_op(np.array([loss]), "cross_entropy", (logits,), bwd)
