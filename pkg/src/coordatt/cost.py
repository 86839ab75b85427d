"""Parameter and multiply-add accounting for built networks.

Counting is structural: it reads weight shapes and propagates spatial
extents, never touching parameter values. A multiply-add is one
multiply-accumulate of a convolution or linear layer at batch size 1;
batchnorm, activations, pooling and the gating multiplies are free.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

from .attention import CAParams, CBAMParams, SEParams
from .network import ConvBN, InvertedResidualParams, Network
from .ops import BatchNormParams, ConvParams, LinearParams, conv_output_extent

__all__ = ["CONVENTION", "COLUMNS", "LayerCost", "CostReport", "count_params", "count_madds",
           "cost_report", "emit_report", "BUDGET_TARGETS", "check_budgets"]

CONVENTION = "mac-conv-linear-n1"
COLUMNS = ("layer", "kind", "params", "madds", "out_shape")


@dataclass(frozen=True)
class LayerCost:
    layer: str
    kind: str
    params: int
    madds: int
    out_shape: tuple[int, ...]


@dataclass
class CostReport:
    network: str
    input_shape: tuple[int, int, int]
    rows: list[LayerCost] = field(default_factory=list)
    convention: str = CONVENTION

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    @property
    def total_params_without_bn(self) -> int:
        return sum(r.params for r in self.rows if r.kind != "bn")

    @property
    def total_madds(self) -> int:
        return sum(r.madds for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "network": self.network,
            "input_shape": list(self.input_shape),
            "convention": self.convention,
            "layers": [
                {"layer": r.layer, "kind": r.kind, "params": r.params, "madds": r.madds,
                 "out_shape": _shape_str(r.out_shape)}
                for r in self.rows
            ],
            "totals": {
                "params": self.total_params,
                "params_without_bn": self.total_params_without_bn,
                "madds": self.total_madds,
            },
        }


def _shape_str(shape) -> str:
    return "x".join(str(s) for s in shape)


class _Tracer:
    def __init__(self):
        self.rows: list[LayerCost] = []

    def conv(self, name: str, p: ConvParams, shape: tuple[int, int, int],
             repeat: int = 1) -> tuple[int, int, int]:
        c, h, w = shape
        if c != p.in_channels:
            raise ValueError(f"{name}: expects {p.in_channels} input channels, traced {c}")
        kh, kw = p.kernel_size
        ho = conv_output_extent(h, kh, p.stride, p.padding)
        wo = conv_output_extent(w, kw, p.stride, p.padding)
        out = (p.out_channels, ho, wo)
        params = p.weight.size + (p.bias.size if p.bias is not None else 0)
        macs_per_out = kh * kw * p.in_channels // p.groups
        depthwise = p.groups == p.in_channels and p.groups > 1
        kind = "dwconv" if depthwise else f"conv{kh}x{kw}"
        self.rows.append(LayerCost(name, kind, params, repeat * macs_per_out * p.out_channels * ho * wo, out))
        return out

    def bn(self, name: str, p: BatchNormParams | None, shape):
        if p is not None:
            self.rows.append(LayerCost(name, "bn", p.gamma.size + p.beta.size, 0, tuple(shape)))
        return shape

    def conv_bn(self, name: str, p: ConvBN | None, shape):
        if p is None:
            return shape
        shape = self.conv(f"{name}.conv", p.conv, shape)
        return self.bn(f"{name}.bn", p.bn, shape)

    def attention(self, name: str, p, shape):
        c, h, w = shape
        if p is None:
            return shape
        if isinstance(p, SEParams):
            z = self.conv(f"{name}.t1", p.t1, (c, 1, 1))
            self.conv(f"{name}.t2", p.t2, z)
        elif isinstance(p, CBAMParams):
            # shared MLP runs on both the average- and max-pooled descriptors
            z = self.conv(f"{name}.fc1", p.fc1, (c, 1, 1), repeat=2)
            self.conv(f"{name}.fc2", p.fc2, z, repeat=2)
            self.conv(f"{name}.spatial", p.spatial, (2, h, w))
        elif isinstance(p, CAParams):
            f = self.conv(f"{name}.f1", p.f1, (c, 1, h + w))
            self.bn(f"{name}.bn", p.bn, f)
            mid = f[0]
            if p.fh is not None:
                self.conv(f"{name}.fh", p.fh, (mid, h, 1))
            if p.fw is not None:
                self.conv(f"{name}.fw", p.fw, (mid, 1, w))
        else:
            raise TypeError(f"{name}: unknown attention parameters {type(p).__name__}")
        return shape

    def linear(self, name: str, p: LinearParams, features: int):
        cout, cin = p.weight.shape
        if cin != features:
            raise ValueError(f"{name}: expects {cin} features, traced {features}")
        params = p.weight.size + (p.bias.size if p.bias is not None else 0)
        self.rows.append(LayerCost(name, "linear", params, cin * cout, (cout,)))


def cost_report(net: Network, input_shape: tuple[int, int, int] | None = None) -> CostReport:
    shape = tuple(input_shape or net.spec.input_shape)
    if len(shape) != 3:
        raise ValueError(f"input shape must be (C, H, W), got {list(shape)}")
    if shape[0] != net.spec.input_shape[0]:
        raise ValueError(f"network takes {net.spec.input_shape[0]} input channels, got {shape[0]}")
    tr = _Tracer()
    s = tr.conv_bn("stem", net.stem, shape)
    for i, (p, bs) in enumerate(zip(net.blocks, net.spec.blocks)):
        name = f"blocks.{i}"
        pre = bs.placement == "pre_project"
        if isinstance(p, InvertedResidualParams):
            t = tr.conv_bn(f"{name}.expand", p.expand, s)
            t = tr.conv_bn(f"{name}.depthwise", p.depthwise, t)
            if pre:
                t = tr.attention(f"{name}.attn", p.attn, t)
            t = tr.conv_bn(f"{name}.project", p.project, t)
        else:
            t = tr.conv_bn(f"{name}.dw_in", p.dw_in, s)
            t = tr.conv_bn(f"{name}.reduce", p.reduce, t)
            t = tr.conv_bn(f"{name}.expand", p.expand, t)
            if pre:
                t = tr.attention(f"{name}.attn", p.attn, t)
            t = tr.conv_bn(f"{name}.dw_out", p.dw_out, t)
        if not pre:
            t = tr.attention(f"{name}.attn", p.attn, t)
        s = t
    s = tr.conv_bn("head", net.head, s)
    tr.linear("classifier", net.classifier, s[0])
    return CostReport(net.spec.name, shape, tr.rows)


def count_params(net: Network) -> int:
    """Learnable scalars: conv/linear weights and biases, BN gamma and beta."""
    return sum(t.size for _, t in net.named_parameters())


def count_madds(net: Network, input_shape: tuple[int, int, int] | None = None) -> int:
    return cost_report(net, input_shape).total_madds


def emit_report(report: CostReport, fmt: str = "csv") -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2) + "\n"
    if fmt != "csv":
        raise ValueError(f"unknown report format {fmt!r}; expected csv or json")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for r in report.rows:
        writer.writerow([r.layer, r.kind, r.params, r.madds, _shape_str(r.out_shape)])
    writer.writerow(["total", "total", report.total_params, report.total_madds,
                     _shape_str(report.rows[-1].out_shape) if report.rows else ""])
    return buf.getvalue()


# Published budgets at 3x224x224: (label, preset, attention kind, reduction,
# metric, target, relative tolerance).
BUDGET_TARGETS = (
    ("mobilenetv2-1.0 params", "mobilenetv2-1.0", "none", 32, "params", 3.5e6, 0.03),
    ("mobilenetv2-1.0 madds", "mobilenetv2-1.0", "none", 32, "madds", 300e6, 0.05),
    ("mobilenetv2-1.0 +se r24 params", "mobilenetv2-1.0", "se", 24, "params", 3.89e6, 0.03),
    ("mobilenetv2-1.0 +ca r32 params", "mobilenetv2-1.0", "ca", 32, "params", 3.95e6, 0.03),
    ("mobilenetv2-1.0 +ca r32 madds", "mobilenetv2-1.0", "ca", 32, "madds", 310e6, 0.05),
    ("mobilenetv2-0.75 params", "mobilenetv2-0.75", "none", 32, "params", 2.5e6, 0.03),
    ("mobilenetv2-0.75 madds", "mobilenetv2-0.75", "none", 32, "madds", 200e6, 0.05),
    ("mobilenetv2-0.5 params", "mobilenetv2-0.5", "none", 32, "params", 2.0e6, 0.03),
    ("mobilenetv2-0.5 madds", "mobilenetv2-0.5", "none", 32, "madds", 100e6, 0.05),
    ("mobilenext-1.0 params", "mobilenext-1.0", "none", 32, "params", 3.5e6, 0.03),
    ("mobilenext-1.0 madds", "mobilenext-1.0", "none", 32, "madds", 300e6, 0.05),
    ("mobilenext-1.0 +ca params", "mobilenext-1.0", "ca", 32, "params", 4.09e6, 0.03),
    ("mobilenext-1.0 +ca madds", "mobilenext-1.0", "ca", 32, "madds", 330e6, 0.05),
    ("mobilenetv2-1.0 +ca r16 params", "mobilenetv2-1.0", "ca", 16, "params", 4.37e6, 0.03),
)


def check_budgets(seed: int = 0) -> list[dict]:
    """Measure every entry of BUDGET_TARGETS; one result dict per entry."""
    from .attention import AttentionConfig
    from .network import build_network, preset
    from .tensor import Rng

    reports: dict[tuple, CostReport] = {}
    results = []
    for label, name, kind, r, metric, target, tol in BUDGET_TARGETS:
        key = (name, kind, r)
        if key not in reports:
            spec = preset(name, AttentionConfig(kind, reduction=r))
            reports[key] = cost_report(build_network(spec, Rng(seed)), (3, 224, 224))
        rep = reports[key]
        measured = rep.total_params if metric == "params" else rep.total_madds
        rel = measured / target - 1.0
        results.append({"label": label, "metric": metric, "measured": measured, "target": target,
                        "relative_deviation": rel, "tolerance": tol, "passed": abs(rel) <= tol})
    return results
