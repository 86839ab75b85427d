"""Independent verification: central-difference gradients and scalar-loop
transcriptions of the attention blocks.

The loop oracles use only ``math`` and Python lists, never the vectorized
kernels in :mod:`coordatt.ops`, so agreement between the two is evidence
about both.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import ops
from .attention import (AttentionConfig, CAParams, CBAMParams, SEParams, attach, ca_forward,
                        cbam_forward, se_forward)
from .network import BlockSpec, NetworkSpec, block_forward, build_network, init_block
from .ops import BatchNormParams, ConvParams, LinearParams
from .tensor import Rng, Tensor, backward, broadcast_mul, concat_spatial, split_spatial

__all__ = [
    "EPS",
    "STEP",
    "OP_TOL",
    "NETWORK_TOL",
    "CheckReport",
    "numeric_gradient",
    "numeric_gradient_at",
    "relative_error",
    "oracle_forward_se",
    "oracle_forward_cbam",
    "oracle_forward_ca",
    "TARGETS",
    "GROUPS",
    "run_check",
    "run_checks",
    "oracle_agreement",
]

EPS = 1e-12
STEP = 1e-5
OP_TOL = 1e-6
NETWORK_TOL = 1e-5
KINK_MARGIN = 1e-3
# a whole network has thousands of kink-bearing activations; 10x the step
# still keeps every perturbation on one smooth piece
NETWORK_KINK_MARGIN = 1e-4


@dataclass
class CheckReport:
    name: str
    shapes: list[list[int]]
    max_rel_err: float
    max_abs_err: float
    threshold: float
    cases: int
    passed: bool
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


def numeric_gradient(f: Callable[[Tensor], "Tensor | float"], x: Tensor, step: float = STEP) -> Tensor:
    """Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every element of x."""
    return Tensor(numeric_gradient_at(f, x, np.arange(x.size), step).reshape(x.shape))


def numeric_gradient_at(f, x: Tensor, indices, step: float = STEP) -> np.ndarray:
    """Central differences at the given flat indices only. ``x`` is perturbed
    in place and restored afterwards."""
    flat = x.data.reshape(-1)
    out = np.empty(len(indices))
    for k, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + step
        fp = _scalar(f(x))
        flat[i] = orig - step
        fm = _scalar(f(x))
        flat[i] = orig
        out[k] = (fp - fm) / (2.0 * step)
    return out


def _scalar(v) -> float:
    return float(v.data.reshape(-1)[0]) if isinstance(v, Tensor) else float(v)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> tuple[float, float]:
    """(|a - n| / max(|a|, |n|, EPS), max_i |a_i - n_i|) with |.| the 2-norm
    over the whole gradient tensor.

    Taken per tensor rather than per element: entries whose true gradient is
    near zero carry difference noise of about 1e-11 that would dominate an
    elementwise ratio.
    """
    a, n = np.ravel(analytic), np.ravel(numeric)
    diff = a - n
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(n)), EPS)
    return float(np.linalg.norm(diff)) / denom, float(np.abs(diff).max(initial=0.0))


# -- kink detection on the recorded graph

_KINKS = {"relu": (0.0,), "relu6": (0.0, 6.0), "hard_swish": (-3.0, 3.0)}


def _top2_gap(a: np.ndarray, axis: int) -> float:
    if a.shape[axis] < 2:
        return math.inf
    part = -np.partition(-a, 1, axis=axis)
    first = np.take(part, 0, axis=axis)
    second = np.take(part, 1, axis=axis)
    return float((first - second).min())


def kink_margin(out: Tensor) -> float:
    """Smallest distance of any recorded pre-activation to a non-smooth point
    (activation kinks, runner-up gaps of max reductions)."""
    margin = math.inf
    seen = set()
    stack = [out]
    while stack:
        t = stack.pop()
        if id(t) in seen or t.node is None:
            continue
        seen.add(id(t))
        node = t.node
        src = node.parents[0].data
        if node.op in _KINKS:
            for k in _KINKS[node.op]:
                margin = min(margin, float(np.abs(src - k).min()))
        elif node.op == "global_max_pool":
            n, c = src.shape[:2]
            margin = min(margin, _top2_gap(src.reshape(n, c, -1), 2))
        elif node.op == "channel_pool_mean_max":
            margin = min(margin, _top2_gap(src, 1))
        stack.extend(node.parents)
    return margin


# -- gradient checking core


@dataclass
class _Case:
    forward: Callable[[], Tensor]
    wrt: list[Tensor]
    # max entries to probe per tensor (None = all)
    sample: int | None = None
    label: list[int] = field(default_factory=list)


def _check_case(case: _Case, rng: Rng, sabotage: bool) -> tuple[float, float]:
    out = case.forward()
    proj = Tensor(rng.normal(out.shape))

    def objective(_=None) -> Tensor:
        o = case.forward()
        loss = (o * proj).sum()
        if sabotage:
            # invisible to autograd, visible to finite differences
            loss = loss + Tensor([0.01 * float((o.data ** 2).sum())])
        return loss

    for t in case.wrt:
        t.grad = None
    backward(objective())
    worst_rel = worst_abs = 0.0
    for t in case.wrt:
        analytic = t.grad if t.grad is not None else np.zeros(t.shape)
        if case.sample is not None and t.size > case.sample:
            idx = np.sort(rng.permutation(t.size)[:case.sample])
        else:
            idx = np.arange(t.size)
        numeric = numeric_gradient_at(objective, t, idx)
        rel, ab = relative_error(analytic.reshape(-1)[idx], numeric)
        worst_rel, worst_abs = max(worst_rel, rel), max(worst_abs, ab)
    return worst_rel, worst_abs


def _leaf(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


def _away_from(values: np.ndarray, kinks, rng: Rng) -> np.ndarray:
    # resample entries closer than KINK_MARGIN to a kink
    for _ in range(100):
        bad = np.zeros(values.shape, dtype=bool)
        for k in kinks:
            bad |= np.abs(values - k) < KINK_MARGIN
        if not bad.any():
            return values
        values = np.where(bad, rng.uniform(values.shape, -4.0, 8.0), values)
    raise RuntimeError("could not sample away from kinks")


def _randomize(p, rng: Rng, scale: float = 0.5) -> None:
    """Give biases and BN affine/statistics non-trivial values."""
    if isinstance(p, ConvParams):
        if p.bias is not None:
            p.bias.data = rng.uniform(p.bias.shape, -scale, scale)
    elif isinstance(p, BatchNormParams):
        c = p.channels
        p.gamma.data = rng.uniform(c, 0.5, 1.5)
        p.beta.data = rng.uniform(c, -scale, scale)
        p.running_mean.data = rng.uniform(c, -scale, scale)
        p.running_var.data = rng.uniform(c, 0.5, 1.5)
    elif isinstance(p, (list, tuple)):
        for item in p:
            _randomize(item, rng, scale)
    elif hasattr(p, "__dataclass_fields__"):
        for name in p.__dataclass_fields__:
            v = getattr(p, name)
            if v is not None and not isinstance(v, (int, float, str, bool, Tensor)):
                _randomize(v, rng, scale)


def _set_bn_mode(p, mode: str) -> None:
    if isinstance(p, BatchNormParams):
        p.mode = mode
    elif hasattr(p, "__dataclass_fields__"):
        for name in p.__dataclass_fields__:
            _set_bn_mode(getattr(p, name), mode)


def _params_of(p) -> list[Tensor]:
    from .network import walk_tensors
    return [t for _, t, buf in walk_tensors(p) if not buf]


def _shape(rng: Rng, n=(1, 2), c=(1, 4), h=(1, 5), w=(1, 5)) -> tuple[int, int, int, int]:
    def pick(lo_hi):
        lo, hi = lo_hi
        return int(lo + rng.integers(hi - lo + 1, 1)[0])
    return pick(n), pick(c), pick(h), pick(w)


# each builder: (rng) -> _Case ; drawn fresh per seeded case


def _case_conv(kind: str):
    def build(rng: Rng) -> _Case:
        n, _, h, w = _shape(rng, h=(3, 5), w=(3, 5))
        if kind == "depthwise":
            cin = cout = int(rng.integers(4, 1)[0]) + 1
            groups, k, stride = cin, 3, 1
        elif kind == "grouped":
            cin, cout, groups, k, stride = 4, 6, 2, 3, 1
        elif kind == "strided":
            cin, cout, groups, k, stride = 3, 4, 1, 3, 2
        else:
            cin, cout, groups, k, stride = 3, 4, 1, 1, 1
        p = ConvParams.init(rng, cin, cout, k, stride, groups=groups, bias=True)
        _randomize(p, rng)
        x = _leaf(rng.uniform((n, cin, h, w), -2, 2))
        return _Case(lambda: ops.conv2d(x, p), [x, p.weight, p.bias], label=list(x.shape))
    return build


def _case_unary(fn, kinks=()):
    def build(rng: Rng) -> _Case:
        shape = _shape(rng)
        data = rng.uniform(shape, -4.0, 8.0) if kinks else rng.uniform(shape, -2.0, 2.0)
        x = _leaf(_away_from(data, kinks, rng))
        return _Case(lambda: fn(x), [x], label=list(shape))
    return build


def _case_batchnorm(mode: str):
    def build(rng: Rng) -> _Case:
        n, c, h, w = _shape(rng, n=(2, 2), c=(1, 4), h=(2, 5), w=(2, 5))
        p = BatchNormParams.init(c)
        _randomize(p, rng)
        p.mode = mode
        x = _leaf(rng.uniform((n, c, h, w), -2, 2))
        return _Case(lambda: ops.batchnorm(x, p), [x, p.gamma, p.beta], label=[n, c, h, w])
    return build


def _case_linear(rng: Rng) -> _Case:
    n, cin, cout = 2, int(rng.integers(6, 1)[0]) + 1, 3
    p = LinearParams.init(rng, cin, cout)
    p.bias.data = rng.uniform(cout, -0.5, 0.5)
    x = _leaf(rng.uniform((n, cin), -2, 2))
    return _Case(lambda: ops.linear(x, p), [x, p.weight, p.bias], label=[n, cin])


def _case_cross_entropy(rng: Rng) -> _Case:
    n, k = 3, 5
    x = _leaf(rng.uniform((n, k), -2, 2))
    labels = rng.integers(k, n)
    return _Case(lambda: ops.cross_entropy(x, labels), [x], label=[n, k])


def _case_concat_split(rng: Rng) -> _Case:
    n, c, h, w = _shape(rng, h=(1, 5), w=(1, 5))
    a = _leaf(rng.uniform((n, c, h, 1), -2, 2))
    b = _leaf(rng.uniform((n, c, 1, w), -2, 2))
    scale_h = Tensor(rng.uniform((1, c, h, 1), 0.5, 1.5))
    scale_w = Tensor(rng.uniform((1, c, 1, w), 0.5, 1.5))

    def fwd():
        fh, fw = split_spatial(concat_spatial(a, b), h)
        # recombine both halves so each one reaches the loss
        return concat_spatial(fh * scale_h, fw * scale_w)

    return _Case(fwd, [a, b], label=[n, c, h, w])


def _case_broadcast_mul(rng: Rng) -> _Case:
    n, c, h, w = _shape(rng)
    x = _leaf(rng.uniform((n, c, h, w), -2, 2))
    gh = _leaf(rng.uniform((n, c, h, 1), 0.1, 0.9))
    gw = _leaf(rng.uniform((n, c, 1, w), 0.1, 0.9))
    return _Case(lambda: broadcast_mul(x, gh, gw), [x, gh, gw], label=[n, c, h, w])


def _block_input(rng: Rng, c: int, h=(1, 5), w=(1, 6)) -> Tensor:
    n, _, hh, ww = _shape(rng, n=(1, 2), h=h, w=w)
    return _leaf(rng.uniform((n, c, hh, ww), -2, 2))


def _case_attention(kind: str, bn_mode: str = "eval"):
    def build(rng: Rng) -> _Case:
        c = int(rng.integers(5, 1)[0]) + 4  # 4..8 channels
        cfg = AttentionConfig(kind if kind != "ca_train" else "ca", reduction=2,
                              mid_channels_min=2, cbam_kernel=3)
        p = attach(cfg.kind, c, cfg, rng)
        _randomize(p, rng)
        if isinstance(p, CAParams) and p.bn is not None:
            p.bn.mode = bn_mode
        x = _block_input(rng, c, h=(2, 5) if bn_mode == "train" else (1, 5))
        if cfg.kind == "se":
            fwd = lambda: se_forward(x, p)  # noqa: E731
        elif cfg.kind == "cbam":
            fwd = lambda: cbam_forward(x, p)  # noqa: E731
        else:
            fwd = lambda: ca_forward(x, p, cfg)  # noqa: E731
        return _Case(fwd, [x] + _params_of(p), label=list(x.shape))
    return build


def _case_block(block_type: str, kind: str):
    def build(rng: Rng) -> _Case:
        c = 8
        cfg = AttentionConfig(kind, reduction=4, mid_channels_min=2)
        stride = 1 + int(rng.integers(2, 1)[0])
        spec = BlockSpec(block_type, c, c if stride == 1 else 16, stride, 2, attention=cfg)
        p = init_block(spec, rng)
        _randomize(p, rng)
        _set_bn_mode(p, "eval")
        x = _block_input(rng, c, h=(3, 6), w=(3, 6))
        return _Case(lambda: block_forward(x, p, spec), [x] + _params_of(p), sample=24,
                     label=list(x.shape))
    return build


def mini_network_spec(attention: str = "ca") -> NetworkSpec:
    """Two blocks, 8-16 channels, 8x8 input."""
    cfg = AttentionConfig(attention, reduction=4, mid_channels_min=4)
    return NetworkSpec(
        name="mini-2block",
        blocks=(
            BlockSpec("inverted_residual", 8, 8, 1, 2, attention=cfg),
            BlockSpec("sandglass", 8, 16, 2, 2, attention=cfg),
        ),
        stem_channels=8,
        stem_stride=1,
        head_channels=None,
        num_classes=4,
        input_shape=(3, 8, 8),
    )


def _case_network(rng: Rng) -> _Case:
    net = build_network(mini_network_spec(), rng)
    _randomize([net.stem, net.blocks], rng)
    net.eval()
    x = _leaf(rng.uniform((2, 3, 8, 8), -2, 2))
    return _Case(lambda: net.forward(x), [x] + net.parameters(), sample=16, label=[2, 3, 8, 8])


# target -> (group, case builder, tolerance)
TARGETS: dict[str, tuple[str, Callable[[Rng], _Case], float]] = {
    "conv2d": ("op", _case_conv("plain"), OP_TOL),
    "conv2d_3x3_stride2": ("op", _case_conv("strided"), OP_TOL),
    "conv2d_grouped": ("op", _case_conv("grouped"), OP_TOL),
    "conv2d_depthwise": ("op", _case_conv("depthwise"), OP_TOL),
    "global_avg_pool": ("op", _case_unary(ops.global_avg_pool), OP_TOL),
    "global_max_pool": ("op", _case_unary(ops.global_max_pool), OP_TOL),
    "pool_x": ("op", _case_unary(ops.pool_x), OP_TOL),
    "pool_y": ("op", _case_unary(ops.pool_y), OP_TOL),
    "channel_pool_mean_max": ("op", _case_unary(ops.channel_pool_mean_max), OP_TOL),
    "sigmoid": ("op", _case_unary(ops.sigmoid), OP_TOL),
    "relu": ("op", _case_unary(ops.relu, (0.0,)), OP_TOL),
    "relu6": ("op", _case_unary(ops.relu6, (0.0, 6.0)), OP_TOL),
    "hard_swish": ("op", _case_unary(ops.hard_swish, (-3.0, 3.0)), OP_TOL),
    "batchnorm_train": ("op", _case_batchnorm("train"), OP_TOL),
    "batchnorm_eval": ("op", _case_batchnorm("eval"), OP_TOL),
    "linear": ("op", _case_linear, OP_TOL),
    "cross_entropy": ("op", _case_cross_entropy, OP_TOL),
    "concat_split_spatial": ("op", _case_concat_split, OP_TOL),
    "broadcast_mul": ("op", _case_broadcast_mul, OP_TOL),
    "se": ("block", _case_attention("se"), OP_TOL),
    "cbam": ("block", _case_attention("cbam"), OP_TOL),
    "ca": ("block", _case_attention("ca"), OP_TOL),
    "ca_bn_train": ("block", _case_attention("ca_train", "train"), OP_TOL),
    "ca_x": ("block", _case_attention("ca_x"), OP_TOL),
    "ca_y": ("block", _case_attention("ca_y"), OP_TOL),
    "inverted_residual_ca": ("block", _case_block("inverted_residual", "ca"), OP_TOL),
    "sandglass_ca": ("block", _case_block("sandglass", "ca"), OP_TOL),
    "network": ("network", _case_network, NETWORK_TOL),
}

GROUPS = ("op", "block", "network")


def run_check(target: str, seed: int = 0, cases: int = 20, sabotage: bool = False) -> CheckReport:
    if target not in TARGETS:
        raise KeyError(f"unknown gradcheck target {target!r}")
    group, builder, tol = TARGETS[target]
    margin = NETWORK_KINK_MARGIN if group == "network" else KINK_MARGIN
    t0 = time.perf_counter()
    worst_rel = worst_abs = 0.0
    shapes = []
    for i in range(cases):
        rng = Rng(seed * 1_000_003 + i)
        for _ in range(50):
            case = builder(rng)
            if kink_margin(case.forward()) >= margin:
                break
        else:
            raise RuntimeError(f"{target}: no kink-free sample found")
        rel, ab = _check_case(case, rng, sabotage)
        worst_rel, worst_abs = max(worst_rel, rel), max(worst_abs, ab)
        shapes.append(case.label)
    return CheckReport(target, shapes, worst_rel, worst_abs, tol, cases, worst_rel < tol,
                       round(time.perf_counter() - t0, 3))


def resolve_targets(target: str) -> list[str]:
    """``all``, a group name (op/block/network) or a single target name."""
    if target == "all":
        return list(TARGETS)
    if target in GROUPS:
        return [name for name, (group, _, _) in TARGETS.items() if group == target]
    if target in TARGETS:
        return [target]
    raise KeyError(f"unknown gradcheck target {target!r}; expected all, one of {GROUPS}, "
                   f"or one of {sorted(TARGETS)}")


def run_checks(target: str = "all", seed: int = 0, cases: int = 20, sabotage: bool = False,
               jobs: int = 1) -> list[CheckReport]:
    names = resolve_targets(target)
    if jobs <= 1:
        return [run_check(n, seed, cases, sabotage) for n in names]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda n: run_check(n, seed, cases, sabotage), names))


# -- scalar-loop oracles


def _sig(v: float) -> float:
    if v >= 0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def _delta(name: str, v: float) -> float:
    if name == "relu":
        return v if v > 0 else 0.0
    if name == "relu6":
        return min(max(v, 0.0), 6.0)
    return v * min(max(v + 3.0, 0.0), 6.0) / 6.0


def _dense(weight, bias, vec):
    """out[o] = sum_i weight[o][i][0][0] * vec[i] + bias[o]"""
    out = []
    for o in range(len(weight)):
        acc = 0.0
        for i in range(len(vec)):
            acc += weight[o][i][0][0] * vec[i]
        out.append(acc + (bias[o] if bias is not None else 0.0))
    return out


def _lists(p: ConvParams):
    return p.weight.data.tolist(), (p.bias.data.tolist() if p.bias is not None else None)


def oracle_forward_se(x: np.ndarray, p: SEParams) -> np.ndarray:
    xs = np.asarray(x).tolist()
    w1, b1 = _lists(p.t1)
    w2, b2 = _lists(p.t2)
    out = []
    for sample in xs:
        c_n = len(sample)
        h_n, w_n = len(sample[0]), len(sample[0][0])
        z = []
        for c in range(c_n):
            acc = 0.0
            for i in range(h_n):
                for j in range(w_n):
                    acc += sample[c][i][j]
            z.append(acc / (h_n * w_n))
        hidden = [max(v, 0.0) for v in _dense(w1, b1, z)]
        s = [_sig(v) for v in _dense(w2, b2, hidden)]
        out.append([[[sample[c][i][j] * s[c] for j in range(w_n)] for i in range(h_n)]
                    for c in range(c_n)])
    return np.array(out)


def oracle_forward_cbam(x: np.ndarray, p: CBAMParams) -> np.ndarray:
    xs = np.asarray(x).tolist()
    w1, b1 = _lists(p.fc1)
    w2, b2 = _lists(p.fc2)
    ws, bs = _lists(p.spatial)
    k = len(ws[0][0])
    pad = (k - 1) // 2
    out = []
    for sample in xs:
        c_n = len(sample)
        h_n, w_n = len(sample[0]), len(sample[0][0])
        avg, mx = [], []
        for c in range(c_n):
            acc, best = 0.0, -math.inf
            for i in range(h_n):
                for j in range(w_n):
                    acc += sample[c][i][j]
                    best = max(best, sample[c][i][j])
            avg.append(acc / (h_n * w_n))
            mx.append(best)
        mlp_avg = _dense(w2, b2, [max(v, 0.0) for v in _dense(w1, b1, avg)])
        mlp_max = _dense(w2, b2, [max(v, 0.0) for v in _dense(w1, b1, mx)])
        ch = [_sig(a + b) for a, b in zip(mlp_avg, mlp_max)]
        x1 = [[[sample[c][i][j] * ch[c] for j in range(w_n)] for i in range(h_n)] for c in range(c_n)]
        pooled = [[[0.0] * w_n for _ in range(h_n)] for _ in range(2)]
        for i in range(h_n):
            for j in range(w_n):
                col = [x1[c][i][j] for c in range(c_n)]
                pooled[0][i][j] = sum(col) / c_n
                pooled[1][i][j] = max(col)
        y = []
        gate = [[0.0] * w_n for _ in range(h_n)]
        for i in range(h_n):
            for j in range(w_n):
                acc = bs[0]
                for m in range(2):
                    for a in range(k):
                        for b in range(k):
                            ii, jj = i + a - pad, j + b - pad
                            if 0 <= ii < h_n and 0 <= jj < w_n:
                                acc += ws[0][m][a][b] * pooled[m][ii][jj]
                gate[i][j] = _sig(acc)
        y = [[[x1[c][i][j] * gate[i][j] for j in range(w_n)] for i in range(h_n)] for c in range(c_n)]
        out.append(y)
    return np.array(out)


def oracle_forward_ca(x: np.ndarray, p: CAParams, cfg: AttentionConfig) -> np.ndarray:
    xs = np.asarray(x).tolist()
    n_n = len(xs)
    c_n = len(xs[0])
    h_n, w_n = len(xs[0][0]), len(xs[0][0][0])
    w1, b1 = _lists(p.f1)
    mid = len(w1)

    # row profiles then column profiles, H + W positions per channel
    pooled = []
    for sample in xs:
        z = []
        for c in range(c_n):
            prof = []
            for i in range(h_n):
                prof.append(sum(sample[c][i][j] for j in range(w_n)) / w_n)
            for j in range(w_n):
                prof.append(sum(sample[c][i][j] for i in range(h_n)) / h_n)
            z.append(prof)
        pooled.append(z)

    length = h_n + w_n
    f = []
    for z in pooled:
        fs = []
        for m in range(mid):
            row = []
            for k in range(length):
                acc = 0.0
                for c in range(c_n):
                    acc += w1[m][c][0][0] * z[c][k]
                row.append(acc + (b1[m] if b1 is not None else 0.0))
            fs.append(row)
        f.append(fs)

    if p.bn is not None:
        gamma, beta = p.bn.gamma.data.tolist(), p.bn.beta.data.tolist()
        for m in range(mid):
            if p.bn.mode == "eval":
                mean = float(p.bn.running_mean.data[m])
                var = float(p.bn.running_var.data[m])
            else:
                vals = [f[s][m][k] for s in range(n_n) for k in range(length)]
                mean = sum(vals) / len(vals)
                var = sum((v - mean) ** 2 for v in vals) / len(vals)
            inv = 1.0 / math.sqrt(var + p.bn.eps)
            for s in range(n_n):
                for k in range(length):
                    f[s][m][k] = (f[s][m][k] - mean) * inv * gamma[m] + beta[m]

    out = []
    for s, sample in enumerate(xs):
        fa = [[_delta(cfg.delta_activation, v) for v in row] for row in f[s]]
        gh = [[1.0] * h_n for _ in range(c_n)]
        gw = [[1.0] * w_n for _ in range(c_n)]
        if p.fh is not None:
            wh, bh = _lists(p.fh)
            for c in range(c_n):
                for i in range(h_n):
                    gh[c][i] = _sig(sum(wh[c][m][0][0] * fa[m][i] for m in range(mid)) + bh[c])
        if p.fw is not None:
            ww, bw = _lists(p.fw)
            for c in range(c_n):
                for j in range(w_n):
                    gw[c][j] = _sig(sum(ww[c][m][0][0] * fa[m][h_n + j] for m in range(mid)) + bw[c])
        out.append([[[sample[c][i][j] * gh[c][i] * gw[c][j] for j in range(w_n)]
                     for i in range(h_n)] for c in range(c_n)])
    return np.array(out)


def oracle_agreement(kind: str, seed: int = 0, cases: int = 20) -> float:
    """Worst absolute difference between the fast forward and the loop oracle
    over ``cases`` seeded random inputs in [-2, 2]."""
    worst = 0.0
    for i in range(cases):
        rng = Rng(seed * 7919 + i)
        c = int(rng.integers(7, 1)[0]) + 2
        n, _, h, w = _shape(rng, n=(1, 2), h=(1, 7), w=(1, 7))
        cfg = AttentionConfig(kind, reduction=2, mid_channels_min=2, cbam_kernel=3 + 2 * (i % 3))
        p = attach(kind, c, cfg, rng)
        _randomize(p, rng)
        if isinstance(p, CAParams) and p.bn is not None:
            p.bn.mode = "eval" if i % 2 == 0 else "train"
            if p.bn.mode == "train" and n * (h + w) < 2:
                p.bn.mode = "eval"
        x = Tensor(rng.uniform((n, c, h, w), -2, 2))
        if kind == "se":
            fast, slow = se_forward(x, p).data, oracle_forward_se(x.data, p)
        elif kind == "cbam":
            fast, slow = cbam_forward(x, p).data, oracle_forward_cbam(x.data, p)
        else:
            fast, slow = ca_forward(x, p, cfg).data, oracle_forward_ca(x.data, p, cfg)
        worst = max(worst, float(np.abs(fast - slow).max()))
    return worst
