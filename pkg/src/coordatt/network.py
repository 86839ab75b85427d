"""MobileNetV2 inverted residual and MobileNeXt sandglass blocks, built-in
presets, and whole-network assembly with attention inserted per block."""

from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import ops
from .attention import AttentionConfig, AttentionParams, attach, attention_forward
from .ops import BatchNormParams, ConvParams, LinearParams
from .tensor import Rng, ShapeError, Tensor

__all__ = [
    "BLOCK_TYPES",
    "PLACEMENTS",
    "PRESETS",
    "BlockSpec",
    "NetworkSpec",
    "ConvBN",
    "InvertedResidualParams",
    "SandglassParams",
    "Network",
    "SpecError",
    "channel_round",
    "mobilenetv2_spec",
    "mobilenext_spec",
    "preset",
    "with_attention",
    "init_block",
    "block_body",
    "block_forward",
    "inverted_residual_forward",
    "sandglass_forward",
    "build_network",
    "walk_tensors",
]

BLOCK_TYPES = ("inverted_residual", "sandglass")
PLACEMENTS = ("pre_project", "post_project")


class SpecError(ValueError):
    """Invalid network description; the message starts with the field path."""


def channel_round(c: float, divisor: int = 8, min_value: int | None = None) -> int:
    """Round to the nearest multiple of ``divisor``, bumping up one step if
    that lost more than 10% of ``c``."""
    min_value = divisor if min_value is None else min_value
    rounded = max(min_value, int(c + divisor / 2) // divisor * divisor)
    if rounded < 0.9 * c:
        rounded += divisor
    return rounded


@dataclass(frozen=True)
class BlockSpec:
    block_type: str
    in_channels: int
    out_channels: int
    stride: int = 1
    # inverted residual: expansion ratio t; sandglass: reduction ratio
    expansion: float = 6
    attention: AttentionConfig = field(default_factory=AttentionConfig)
    placement: str = "pre_project"
    # sandglass only: leading / trailing depthwise convs (MobileNeXt drops
    # them in some channel-changing transition blocks)
    dw_in: bool = True
    dw_out: bool = True

    def __post_init__(self):
        if self.block_type not in BLOCK_TYPES:
            raise SpecError(f"block_type: unknown block type {self.block_type!r}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise SpecError("channels must be positive")
        if self.stride not in (1, 2):
            raise SpecError(f"stride: must be 1 or 2, got {self.stride}")
        if self.expansion <= 0:
            raise SpecError(f"expansion: must be positive, got {self.expansion}")
        if self.placement not in PLACEMENTS:
            raise SpecError(f"placement: expected one of {PLACEMENTS}, got {self.placement!r}")
        if self.block_type == "sandglass" and self.stride == 2 and not self.dw_out:
            raise SpecError("dw_out: a strided sandglass block needs its trailing depthwise conv")

    @property
    def has_shortcut(self) -> bool:
        return self.stride == 1 and self.in_channels == self.out_channels

    @property
    def hidden_channels(self) -> int:
        if self.block_type == "inverted_residual":
            return int(round(self.in_channels * self.expansion))
        hidden = int(self.in_channels // self.expansion)
        if hidden < self.out_channels / 6.0:
            hidden = channel_round(math.ceil(self.out_channels / 6.0), 16)
        return hidden

    @property
    def attention_channels(self) -> int:
        if self.placement == "post_project":
            return self.out_channels
        if self.block_type == "inverted_residual":
            return self.hidden_channels
        return self.out_channels


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    blocks: tuple[BlockSpec, ...]
    stem_channels: int
    head_channels: int | None = 1280
    num_classes: int = 1000
    input_shape: tuple[int, int, int] = (3, 224, 224)
    width_multiplier: float = 1.0
    stem_stride: int = 2
    batchnorm: bool = True

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        self.validate()

    def validate(self) -> None:
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise SpecError(f"input_shape: expected positive (C, H, W), got {list(self.input_shape)}")
        if self.stem_channels < 1:
            raise SpecError("stem.channels: must be positive")
        if self.stem_stride not in (1, 2):
            raise SpecError(f"stem.stride: must be 1 or 2, got {self.stem_stride}")
        if self.num_classes < 1:
            raise SpecError("head.num_classes: must be positive")
        if self.head_channels is not None and self.head_channels < 1:
            raise SpecError("head.conv_channels: must be positive or null")
        if not self.blocks:
            raise SpecError("blocks: at least one block is required")
        prev = self.stem_channels
        for i, b in enumerate(self.blocks):
            if b.in_channels != prev:
                raise SpecError(
                    f"blocks[{i}].in_channels: {b.in_channels} does not match previous output {prev}")
            prev = b.out_channels

    @property
    def feature_channels(self) -> int:
        return self.head_channels if self.head_channels is not None else self.blocks[-1].out_channels


# -- presets

_MOBILENETV2_TABLE = [
    # t, c, n, s
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
]

_MOBILENEXT_TABLE = [
    # reduction, c, n, s
    (2, 96, 1, 2),
    (6, 144, 1, 1),
    (6, 192, 3, 2),
    (6, 288, 3, 2),
    (6, 384, 4, 1),
    (6, 576, 4, 2),
    (6, 960, 3, 1),
    (6, 1280, 1, 1),
]


def mobilenetv2_spec(width: float = 1.0, num_classes: int = 1000,
                     input_shape=(3, 224, 224)) -> NetworkSpec:
    stem = channel_round(32 * width)
    blocks = []
    cin = stem
    for t, c, n, s in _MOBILENETV2_TABLE:
        cout = channel_round(c * width)
        for i in range(n):
            blocks.append(BlockSpec("inverted_residual", cin, cout, s if i == 0 else 1, t))
            cin = cout
    return NetworkSpec(
        name=f"mobilenetv2-{width}",
        blocks=tuple(blocks),
        stem_channels=stem,
        head_channels=channel_round(1280 * max(1.0, width)),
        num_classes=num_classes,
        input_shape=tuple(input_shape),
        width_multiplier=width,
    )


def mobilenext_spec(width: float = 1.0, num_classes: int = 1000,
                    input_shape=(3, 224, 224)) -> NetworkSpec:
    """MobileNeXt: every block is a sandglass. The first block of a stage
    that changes channels keeps only the depthwise convs it needs: none when
    stride 1, only the trailing strided one when stride 2."""
    stem = channel_round(32 * width)
    blocks = []
    cin = stem
    for t, c, n, s in _MOBILENEXT_TABLE:
        cout = 1280 if (c == 1280 and width < 1) else channel_round(c * width)
        for i in range(n):
            stride = s if i == 0 else 1
            keep = n == 1 and s == 1
            transition = cin != cout and t != 2 and not keep
            blocks.append(BlockSpec(
                "sandglass", cin, cout, stride, t,
                dw_in=not transition,
                dw_out=not (transition and stride == 1),
            ))
            cin = cout
    return NetworkSpec(
        name=f"mobilenext-{width}",
        blocks=tuple(blocks),
        stem_channels=stem,
        head_channels=None,
        num_classes=num_classes,
        input_shape=tuple(input_shape),
        width_multiplier=width,
    )


PRESETS = {
    f"{family}-{w}": (builder, w)
    for family, builder in (("mobilenetv2", mobilenetv2_spec), ("mobilenext", mobilenext_spec))
    for w in (1.0, 0.75, 0.5)
}


def preset(name: str, attention: AttentionConfig | None = None, **kwargs) -> NetworkSpec:
    try:
        builder, width = PRESETS[name]
    except KeyError:
        raise SpecError(f"preset: unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None
    spec = builder(width, **kwargs)
    return with_attention(spec, attention) if attention is not None else spec


def with_attention(spec: NetworkSpec, attention: AttentionConfig,
                   placement: str | None = None) -> NetworkSpec:
    """Same network with ``attention`` (and optionally ``placement``) on every block."""
    blocks = tuple(
        dataclasses.replace(b, attention=attention, placement=placement or b.placement)
        for b in spec.blocks
    )
    return dataclasses.replace(spec, blocks=blocks)


# -- parameters


@dataclass
class ConvBN:
    conv: ConvParams
    bn: BatchNormParams | None

    @classmethod
    def init(cls, rng: Rng, cin: int, cout: int, kernel: int = 1, stride: int = 1,
             groups: int = 1, batchnorm: bool = True) -> "ConvBN":
        conv = ConvParams.init(rng, cin, cout, kernel, stride, groups=groups, bias=not batchnorm)
        return cls(conv, BatchNormParams.init(cout) if batchnorm else None)


def conv_bn(x: Tensor, p: ConvBN, act: str | None = None) -> Tensor:
    y = ops.conv2d(x, p.conv)
    if p.bn is not None:
        y = ops.batchnorm(y, p.bn)
    return ops.activation(act)(y) if act else y


@dataclass
class InvertedResidualParams:
    expand: ConvBN | None
    depthwise: ConvBN
    attn: AttentionParams | None
    project: ConvBN


@dataclass
class SandglassParams:
    dw_in: ConvBN | None
    reduce: ConvBN
    expand: ConvBN
    attn: AttentionParams | None
    dw_out: ConvBN | None


BlockParams = InvertedResidualParams | SandglassParams


def init_block(spec: BlockSpec, rng: Rng, batchnorm: bool = True) -> BlockParams:
    cin, cout, hid = spec.in_channels, spec.out_channels, spec.hidden_channels
    kw = {"batchnorm": batchnorm}
    if spec.block_type == "inverted_residual":
        expand = ConvBN.init(rng, cin, hid, 1, **kw) if spec.expansion != 1 else None
        depthwise = ConvBN.init(rng, hid, hid, 3, spec.stride, groups=hid, **kw)
        attn = attach(spec.attention.kind, spec.attention_channels, spec.attention, rng)
        project = ConvBN.init(rng, hid, cout, 1, **kw)
        return InvertedResidualParams(expand, depthwise, attn, project)
    dw_in = ConvBN.init(rng, cin, cin, 3, 1, groups=cin, **kw) if spec.dw_in else None
    reduce = ConvBN.init(rng, cin, hid, 1, **kw)
    expand = ConvBN.init(rng, hid, cout, 1, **kw)
    attn = attach(spec.attention.kind, spec.attention_channels, spec.attention, rng)
    dw_out = ConvBN.init(rng, cout, cout, 3, spec.stride, groups=cout, **kw) if spec.dw_out else None
    return SandglassParams(dw_in, reduce, expand, attn, dw_out)


def _check_input(x: Tensor, spec: BlockSpec) -> None:
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise ShapeError(f"block expects [N,{spec.in_channels},H,W], got {list(x.shape)}")


def block_body(x: Tensor, p: BlockParams, spec: BlockSpec,
               tap: Callable[[Tensor], None] | None = None) -> Tensor:
    """The residual branch of a block (everything but the shortcut add).
    ``tap`` is called with the tensor entering the attention module."""
    _check_input(x, spec)
    cfg = spec.attention

    def attend(y: Tensor) -> Tensor:
        if tap is not None and p.attn is not None:
            tap(y)
        return attention_forward(y, p.attn, cfg)

    pre = spec.placement == "pre_project"
    if spec.block_type == "inverted_residual":
        y = conv_bn(x, p.expand, "relu6") if p.expand is not None else x
        y = conv_bn(y, p.depthwise, "relu6")
        if pre:
            y = attend(y)
        y = conv_bn(y, p.project)
        return y if pre else attend(y)
    y = conv_bn(x, p.dw_in, "relu6") if p.dw_in is not None else x
    y = conv_bn(y, p.reduce)
    y = conv_bn(y, p.expand, "relu6")
    if pre:
        y = attend(y)
    if p.dw_out is not None:
        y = conv_bn(y, p.dw_out)
    return y if pre else attend(y)


def block_forward(x: Tensor, p: BlockParams, spec: BlockSpec,
                  tap: Callable[[Tensor], None] | None = None) -> Tensor:
    body = block_body(x, p, spec, tap)
    return x + body if spec.has_shortcut else body


def inverted_residual_forward(x: Tensor, p: InvertedResidualParams, spec: BlockSpec) -> Tensor:
    if spec.block_type != "inverted_residual":
        raise SpecError(f"block_type: expected inverted_residual, got {spec.block_type!r}")
    return block_forward(x, p, spec)


def sandglass_forward(x: Tensor, p: SandglassParams, spec: BlockSpec) -> Tensor:
    if spec.block_type != "sandglass":
        raise SpecError(f"block_type: expected sandglass, got {spec.block_type!r}")
    return block_forward(x, p, spec)


# -- network


def walk_tensors(obj, prefix: str = "") -> Iterator[tuple[str, Tensor, bool]]:
    """Yield (dotted name, tensor, is_buffer) for every tensor reachable
    through dataclass fields and lists, in declaration order."""
    if isinstance(obj, Tensor):
        yield prefix, obj, False
        return
    if isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from walk_tensors(item, f"{prefix}.{i}" if prefix else str(i))
        return
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            if value is None or isinstance(value, (int, float, str, bool)):
                continue
            name = f"{prefix}.{f.name}" if prefix else f.name
            if f.metadata.get("buffer"):
                yield name, value, True
            else:
                yield from walk_tensors(value, name)


@dataclass
class Network:
    spec: NetworkSpec
    stem: ConvBN
    blocks: list
    head: ConvBN | None
    classifier: LinearParams

    def named_state(self) -> list[tuple[str, Tensor, bool]]:
        state = []
        for part in ("stem", "blocks", "head", "classifier"):
            value = getattr(self, part)
            if value is not None:
                state.extend(walk_tensors(value, part))
        return state

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        return [(name, t) for name, t, buf in self.named_state() if not buf]

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def batchnorms(self) -> Iterator[BatchNormParams]:
        def visit(obj):
            if isinstance(obj, BatchNormParams):
                yield obj
            elif isinstance(obj, (list, tuple)):
                for item in obj:
                    yield from visit(item)
            elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
                for f in dataclasses.fields(obj):
                    yield from visit(getattr(obj, f.name))

        for part in (self.stem, self.blocks, self.head):
            yield from visit(part)

    def train(self) -> "Network":
        for bn in self.batchnorms():
            bn.mode = "train"
        return self

    def eval(self) -> "Network":
        for bn in self.batchnorms():
            bn.mode = "eval"
        return self

    def zero_grad(self) -> None:
        for t in self.parameters():
            t.grad = None

    def features(self, x: Tensor, taps: dict | None = None) -> Tensor:
        """Everything before global pooling. ``taps`` (if given) receives the
        input of each block's attention module under ``blocks.<i>.attn``."""
        c = self.spec.input_shape[0]
        if x.ndim != 4 or x.shape[1] != c:
            raise ShapeError(f"network expects [N,{c},H,W], got {list(x.shape)}")
        y = conv_bn(x, self.stem, "relu6")
        for i, (p, bs) in enumerate(zip(self.blocks, self.spec.blocks)):
            tap = None
            if taps is not None:
                tap = functools.partial(taps.__setitem__, f"blocks.{i}.attn")
            y = block_forward(y, p, bs, tap)
        if self.head is not None:
            y = conv_bn(y, self.head, "relu6")
        return y

    def forward(self, x: Tensor, taps: dict | None = None) -> Tensor:
        y = ops.global_avg_pool(self.features(x, taps))
        return ops.linear(ops.flatten(y), self.classifier)

    __call__ = forward

    def predict_proba(self, x: Tensor) -> np.ndarray:
        return ops.softmax(self.forward(x).data)


def build_network(spec: NetworkSpec, rng: Rng) -> Network:
    spec.validate()
    bn = spec.batchnorm
    c_in = spec.input_shape[0]
    stem = ConvBN.init(rng, c_in, spec.stem_channels, 3, spec.stem_stride, batchnorm=bn)
    blocks = [init_block(b, rng, batchnorm=bn) for b in spec.blocks]
    last = spec.blocks[-1].out_channels
    head = ConvBN.init(rng, last, spec.head_channels, 1, batchnorm=bn) if spec.head_channels else None
    classifier = LinearParams.init(rng, spec.feature_channels, spec.num_classes)
    return Network(spec, stem, blocks, head, classifier)
