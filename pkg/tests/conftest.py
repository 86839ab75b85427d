import dataclasses

import numpy as np
import pytest

from coordatt.network import walk_tensors
from coordatt.ops import BatchNormParams
from coordatt.tensor import Rng, Tensor


def ref_conv(x, w, b, stride, pad, groups):
    """Six nested loops, no vectorization."""
    n, cin, h, wd = x.shape
    cout, cig, kh, kw = w.shape
    cog = cout // groups
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for a in range(n):
        for o in range(cout):
            gidx = o // cog
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0 if b is None else b[o]
                    for k in range(cig):
                        for u in range(kh):
                            for v in range(kw):
                                r, c = i * stride + u - pad, j * stride + v - pad
                                if 0 <= r < h and 0 <= c < wd:
                                    acc += x[a, gidx * cig + k, r, c] * w[o, k, u, v]
                    out[a, o, i, j] = acc
    return out


def zero_weights(params) -> None:
    """Zero every learnable tensor and make every BN an exact identity."""
    for _, t, is_buffer in walk_tensors(params):
        if not is_buffer:
            t.data[...] = 0.0
    for bn in iter_bns(params):
        bn.gamma.data[...] = 1.0
        bn.running_mean.data[...] = 0.0
        bn.running_var.data[...] = 1.0
        bn.eps = 0.0
        bn.mode = "eval"


def iter_bns(obj):
    if isinstance(obj, BatchNormParams):
        yield obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            yield from iter_bns(getattr(obj, f.name))
    elif isinstance(obj, (list, tuple)):
        for item in obj:
            yield from iter_bns(item)


@pytest.fixture
def rng():
    return Rng(1234)


def rand(rng: Rng, shape, lo=-2.0, hi=2.0) -> Tensor:
    return Tensor(rng.uniform(shape, lo, hi))


_CRITERIA: list[str] = []


@pytest.fixture
def criterion(capsys):
    """Print and record one PASS/FAIL line, then assert it."""

    def record(name: str, ok: bool, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
        _CRITERIA.append(line)
        with capsys.disabled():
            print("\n" + line, end="")
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
