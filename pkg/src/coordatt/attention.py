"""Attention blocks: squeeze-and-excitation, CBAM, and coordinate attention
with its single-direction ablations.

Every block maps [N,C,H,W] to the same shape by multiplying the input with
sigmoid gates, so each output element is bounded by its input element.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ops
from .ops import BatchNormParams, ConvParams
from .tensor import Rng, ShapeError, Tensor, broadcast_mul, concat_spatial, split_spatial

__all__ = [
    "ATTENTION_KINDS",
    "AttentionConfig",
    "SEParams",
    "CBAMParams",
    "CAParams",
    "mid_channels",
    "attach",
    "se_forward",
    "cbam_forward",
    "ca_gates",
    "ca_forward",
    "attention_forward",
]

ATTENTION_KINDS = ("none", "se", "cbam", "ca", "ca_x", "ca_y")
DELTA_ACTIVATIONS = ("relu", "relu6", "hard_swish")


@dataclass(frozen=True)
class AttentionConfig:
    kind: str = "none"
    reduction: int = 32
    mid_channels_min: int = 8
    delta_activation: str = "hard_swish"
    cbam_kernel: int = 7
    # BatchNorm after the shared 1x1 transform of coordinate attention
    use_bn: bool = True
    # None: bias on exactly when no BatchNorm follows the conv
    f1_bias: bool | None = None

    def __post_init__(self):
        if self.kind not in ATTENTION_KINDS:
            raise ValueError(f"unknown attention kind {self.kind!r}; expected one of {ATTENTION_KINDS}")
        if self.reduction < 1:
            raise ValueError(f"reduction must be >= 1, got {self.reduction}")
        if self.mid_channels_min < 1:
            raise ValueError(f"mid_channels_min must be >= 1, got {self.mid_channels_min}")
        if self.delta_activation not in DELTA_ACTIVATIONS:
            raise ValueError(
                f"unknown delta activation {self.delta_activation!r}; expected one of {DELTA_ACTIVATIONS}")
        if self.cbam_kernel < 1 or self.cbam_kernel % 2 == 0:
            raise ValueError(f"cbam_kernel must be a positive odd extent, got {self.cbam_kernel}")

    @property
    def is_coordinate(self) -> bool:
        return self.kind in ("ca", "ca_x", "ca_y")


def mid_channels(channels: int, cfg: AttentionConfig) -> int:
    return max(channels // cfg.reduction, cfg.mid_channels_min)


@dataclass
class SEParams:
    t1: ConvParams  # C -> mid, 1x1
    t2: ConvParams  # mid -> C, 1x1


@dataclass
class CBAMParams:
    fc1: ConvParams  # shared channel MLP, C -> mid
    fc2: ConvParams  # mid -> C
    spatial: ConvParams  # 2 -> 1, k x k


@dataclass
class CAParams:
    f1: ConvParams
    bn: BatchNormParams | None
    fh: ConvParams | None  # absent for the width-only ablation
    fw: ConvParams | None  # absent for the height-only ablation


AttentionParams = SEParams | CBAMParams | CAParams


def attach(kind: str, channels: int, cfg: AttentionConfig, rng: Rng) -> AttentionParams | None:
    """Allocate freshly initialized parameters for an attention block on
    ``channels`` features. Returns None for kind ``none``."""
    if kind == "none":
        return None
    mid = mid_channels(channels, cfg)
    if kind == "se":
        return SEParams(
            t1=ConvParams.init(rng, channels, mid, 1, bias=True),
            t2=ConvParams.init(rng, mid, channels, 1, bias=True),
        )
    if kind == "cbam":
        k = cfg.cbam_kernel
        return CBAMParams(
            fc1=ConvParams.init(rng, channels, mid, 1, bias=True),
            fc2=ConvParams.init(rng, mid, channels, 1, bias=True),
            spatial=ConvParams.init(rng, 2, 1, k, padding=(k - 1) // 2, bias=True),
        )
    if kind in ("ca", "ca_x", "ca_y"):
        f1_bias = (not cfg.use_bn) if cfg.f1_bias is None else cfg.f1_bias
        return CAParams(
            f1=ConvParams.init(rng, channels, mid, 1, bias=f1_bias),
            bn=BatchNormParams.init(mid) if cfg.use_bn else None,
            fh=ConvParams.init(rng, mid, channels, 1, bias=True) if kind != "ca_y" else None,
            fw=ConvParams.init(rng, mid, channels, 1, bias=True) if kind != "ca_x" else None,
        )
    raise ValueError(f"unknown attention kind {kind!r}")


def _check_channels(x: Tensor, expected: int) -> None:
    if x.ndim != 4 or x.shape[1] != expected:
        raise ShapeError(f"attention block built for {expected} channels got input {list(x.shape)}")


def se_forward(x: Tensor, p: SEParams) -> Tensor:
    _check_channels(x, p.t1.in_channels)
    z = ops.global_avg_pool(x)
    z_hat = ops.conv2d(ops.relu(ops.conv2d(z, p.t1)), p.t2)
    return x * ops.sigmoid(z_hat)


def cbam_forward(x: Tensor, p: CBAMParams) -> Tensor:
    _check_channels(x, p.fc1.in_channels)

    def mlp(v: Tensor) -> Tensor:
        return ops.conv2d(ops.relu(ops.conv2d(v, p.fc1)), p.fc2)

    channel_gate = ops.sigmoid(mlp(ops.global_avg_pool(x)) + mlp(ops.global_max_pool(x)))
    x1 = x * channel_gate
    spatial_gate = ops.sigmoid(ops.conv2d(ops.channel_pool_mean_max(x1), p.spatial))
    return x1 * spatial_gate


def ca_gates(x: Tensor, p: CAParams, cfg: AttentionConfig) -> tuple[Tensor, Tensor]:
    """Row gates [N,C,H,1] and column gates [N,C,1,W] of coordinate attention.

    A direction removed by the ``ca_x`` / ``ca_y`` ablations gets constant
    gates of one; the shared transform still sees both pooled profiles.
    """
    _check_channels(x, p.f1.in_channels)
    n, c, h, w = x.shape
    z = concat_spatial(ops.pool_x(x), ops.pool_y(x))
    f = ops.conv2d(z, p.f1)
    if p.bn is not None:
        f = ops.batchnorm(f, p.bn)
    f = ops.activation(cfg.delta_activation)(f)
    f_h, f_w = split_spatial(f, h)
    g_h = ops.sigmoid(ops.conv2d(f_h, p.fh)) if p.fh is not None else Tensor.ones((n, c, h, 1))
    g_w = ops.sigmoid(ops.conv2d(f_w, p.fw)) if p.fw is not None else Tensor.ones((n, c, 1, w))
    return g_h, g_w


def ca_forward(x: Tensor, p: CAParams, cfg: AttentionConfig) -> Tensor:
    g_h, g_w = ca_gates(x, p, cfg)
    return broadcast_mul(x, g_h, g_w)


def attention_forward(x: Tensor, p: AttentionParams | None, cfg: AttentionConfig) -> Tensor:
    if p is None:
        return x
    if isinstance(p, SEParams):
        return se_forward(x, p)
    if isinstance(p, CBAMParams):
        return cbam_forward(x, p)
    return ca_forward(x, p, cfg)
