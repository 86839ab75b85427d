"""Dense float64 NCHW tensors with a recorded graph for reverse-mode autodiff.

Every op that consumes a tensor with ``requires_grad`` attaches a :class:`Node`
to its output. The nodes form a DAG that :func:`backward` walks once in
reverse topological order; a consumed graph cannot be replayed.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Node",
    "GraphError",
    "ShapeError",
    "Rng",
    "backward",
    "concat_spatial",
    "split_spatial",
    "broadcast_mul",
]


class ShapeError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Node:
    """One recorded op: its kind, its inputs and a closure mapping the
    output gradient to one gradient per input (``None`` when not needed)."""

    __slots__ = ("op", "parents", "backward_fn", "consumed")

    def __init__(self, op: str, parents: tuple["Tensor", ...], backward_fn: BackwardFn):
        self.op = op
        self.parents = parents
        self.backward_fn: BackwardFn | None = backward_fn
        self.consumed = False

    def __repr__(self) -> str:
        return f"Node({self.op!r}, inputs={len(self.parents)})"


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, copy=True, order="C")
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not 1 <= arr.ndim <= 4:
            raise ShapeError(f"tensor rank must be 1..4, got {arr.ndim}")
        if arr.size == 0:
            raise ShapeError(f"all extents must be >= 1, got {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node: Node | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.ascontiguousarray(arr, dtype=np.float64)
        t.grad = None
        t.requires_grad = False
        t.node = None
        t.name = None
        return t

    @classmethod
    def from_op(cls, arr: np.ndarray, op: str, parents: Iterable["Tensor"],
                backward_fn: BackwardFn) -> "Tensor":
        """Output of ``op``; records a node only if some input needs a gradient."""
        out = cls._wrap(arr)
        parents = tuple(parents)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.node = Node(op, parents, backward_fn)
        return out

    @classmethod
    def zeros(cls, shape: Sequence[int], requires_grad: bool = False) -> "Tensor":
        return cls(np.zeros(tuple(shape)), requires_grad=requires_grad)

    @classmethod
    def ones(cls, shape: Sequence[int], requires_grad: bool = False) -> "Tensor":
        return cls(np.ones(tuple(shape)), requires_grad=requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}{flag})"

    # -- arithmetic (numpy broadcasting, gradients reduced back to input shapes)

    def __add__(self, other) -> "Tensor":
        other = _as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor.from_op(
            self.data + other.data, "add", (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        other = _as_tensor(other)
        a, b = self.data, other.data

        def bwd(g):
            return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)

        return Tensor.from_op(a * b, "mul", (self, other), bwd)

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return Tensor.from_op(-self.data, "neg", (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Tensor":
        return self + (-_as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return _as_tensor(other) + (-self)

    def sum(self) -> "Tensor":
        shape = self.shape
        return Tensor.from_op(
            np.array([self.data.sum()]), "sum", (self,),
            lambda g: (np.full(shape, g[0]),),
        )

    def mean(self) -> "Tensor":
        n = self.size
        shape = self.shape
        return Tensor.from_op(
            np.array([self.data.mean()]), "mean", (self,),
            lambda g: (np.full(shape, g[0] / n),),
        )

    def reshape(self, *shape: int) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor.from_op(
            self.data.reshape(shape), "reshape", (self,),
            lambda g: (g.reshape(old),),
        )


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
    return order


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every leaf that
    requires a gradient. The graph is consumed and cannot be replayed."""
    if root.size != 1:
        raise GraphError(f"backward needs a scalar root, got shape {list(root.shape)}")
    if not root.requires_grad:
        raise GraphError("root does not depend on any tensor that requires grad")
    order = _topo_order(root)
    for t in order:
        if t.node is not None and t.node.consumed:
            raise GraphError("graph already consumed by a previous backward call")

    grads: dict[int, np.ndarray] = {id(root): np.ones(root.shape)}
    for t in reversed(order):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        node = t.node
        parent_grads = node.backward_fn(g)
        node.consumed = True
        node.backward_fn = None
        for p, pg in zip(node.parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg


class Rng:
    """SplitMix64 stream. Pure uint64 arithmetic, so the same seed yields the
    same bits on every platform.

    The k-th output of a stream at state s is mix(s + k * GOLDEN), after which
    the state advances by n * GOLDEN for n draws.
    """

    GOLDEN = np.uint64(0x9E3779B97F4A7C15)
    _M1 = np.uint64(0xBF58476D1CE4E5B9)
    _M2 = np.uint64(0x94D049BB133111EB)

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.state = np.uint64(self.seed)

    def next_u64(self, n: int) -> np.ndarray:
        k = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = self.state + k * self.GOLDEN
            self.state = self.state + np.uint64(n) * self.GOLDEN
            z = (z ^ (z >> np.uint64(30))) * self._M1
            z = (z ^ (z >> np.uint64(27))) * self._M2
        return z ^ (z >> np.uint64(31))

    def random(self, shape: Sequence[int] | int) -> np.ndarray:
        """Uniform floats in [0, 1) with 53 random bits each."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        bits = self.next_u64(n) >> np.uint64(11)
        return (bits.astype(np.float64) * 2.0 ** -53).reshape(shape)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return low + (high - low) * self.random(shape)

    def normal(self, shape) -> np.ndarray:
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        u1 = 1.0 - self.random(m)  # (0, 1]
        u2 = self.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.concatenate([r * np.cos(2 * np.pi * u2), r * np.sin(2 * np.pi * u2)])
        return z[:n].reshape(shape)

    def integers(self, high: int, shape) -> np.ndarray:
        return np.floor(self.random(shape) * high).astype(np.int64)

    def permutation(self, n: int) -> np.ndarray:
        # stable argsort of uniform keys keeps the result platform independent
        return np.argsort(self.random(n), kind="stable")

    def spawn(self) -> "Rng":
        return Rng(int(self.next_u64(1)[0]))


# -- structural ops used by coordinate attention


def concat_spatial(a: Tensor, b: Tensor) -> Tensor:
    """Join a [N,C,H,1] row profile and a [N,C,1,W] column profile into one
    [N,C,1,H+W] strip: the row profile is laid out along the last axis first."""
    if a.ndim != 4 or b.ndim != 4 or a.shape[3] != 1 or b.shape[2] != 1:
        raise ShapeError(f"expected [N,C,H,1] and [N,C,1,W], got {list(a.shape)} and {list(b.shape)}")
    if a.shape[:2] != b.shape[:2]:
        raise ShapeError(f"N,C mismatch: {list(a.shape)} vs {list(b.shape)}")
    h = a.shape[2]
    a_shape = a.shape
    out = np.concatenate([a.data.transpose(0, 1, 3, 2), b.data], axis=3)
    return Tensor.from_op(
        out, "concat_spatial", (a, b),
        lambda g: (g[..., :h].transpose(0, 1, 3, 2).reshape(a_shape), g[..., h:].copy()),
    )


def split_spatial(f: Tensor, h: int) -> tuple[Tensor, Tensor]:
    """Inverse of :func:`concat_spatial`: ([N,C,h,1], [N,C,1,L-h])."""
    if f.ndim != 4 or f.shape[2] != 1:
        raise ShapeError(f"expected [N,C,1,L], got {list(f.shape)}")
    length = f.shape[3]
    if not 0 < h < length:
        raise ShapeError(f"split point {h} out of range (0, {length})")
    shape = f.shape

    def bwd_h(g):
        full = np.zeros(shape)
        full[..., :h] = g.transpose(0, 1, 3, 2)
        return (full,)

    def bwd_w(g):
        full = np.zeros(shape)
        full[..., h:] = g
        return (full,)

    fh = Tensor.from_op(f.data[..., :h].transpose(0, 1, 3, 2), "split_h", (f,), bwd_h)
    fw = Tensor.from_op(f.data[..., h:], "split_w", (f,), bwd_w)
    return fh, fw


def broadcast_mul(x: Tensor, gh: Tensor, gw: Tensor) -> Tensor:
    """y[n,c,i,j] = x[n,c,i,j] * gh[n,c,i,0] * gw[n,c,0,j], both gates at once.

    Evaluated left to right, (x * gh) * gw, so it matches a scalar loop bit for bit.
    """
    if x.ndim != 4:
        raise ShapeError(f"expected rank-4 x, got {list(x.shape)}")
    n, c, h, w = x.shape
    if gh.shape != (n, c, h, 1) or gw.shape != (n, c, 1, w):
        raise ShapeError(
            f"gates {list(gh.shape)}, {list(gw.shape)} do not match x {list(x.shape)}")
    xd, ghd, gwd = x.data, gh.data, gw.data

    def bwd(g):
        return (
            g * ghd * gwd,
            (g * xd * gwd).sum(axis=3, keepdims=True),
            (g * xd * ghd).sum(axis=2, keepdims=True),
        )

    return Tensor.from_op(xd * ghd * gwd, "broadcast_mul", (x, gh, gw), bwd)
