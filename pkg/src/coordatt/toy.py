"""Synthetic positional task and a small SGD trainer.

Each 16x16 single-channel image holds one bright horizontal or vertical
bar over faint noise. The label is the bar's row (or column) index
quantized into 8 bins, so solving it requires knowing where the bar is,
not just that it exists.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .attention import AttentionConfig
from .network import BlockSpec, Network, NetworkSpec, build_network
from .tensor import Rng, Tensor, backward

__all__ = ["TOY_SIZE", "TOY_CLASSES", "ToyConfig", "toy_batch", "toy_spec", "SGD", "train_toy",
           "metrics_csv"]

TOY_SIZE = 16
TOY_CLASSES = 8
METRIC_COLUMNS = ("step", "loss", "accuracy")


@dataclass(frozen=True)
class ToyConfig:
    attention: str = "ca"
    steps: int = 200
    seed: int = 0
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 4e-5
    noise: float = 0.1
    width: int = 8


def toy_batch(rng: Rng, n: int, noise: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Images [n,1,16,16] and integer labels [n]."""
    x = noise * rng.random((n, 1, TOY_SIZE, TOY_SIZE))
    pos = rng.integers(TOY_SIZE, (n,))
    vertical = rng.integers(2, (n,)).astype(bool)
    idx = np.arange(n)
    x[idx[~vertical], 0, pos[~vertical], :] = 1.0
    x[idx[vertical], 0, :, pos[vertical]] = 1.0
    return x, pos // (TOY_SIZE // TOY_CLASSES)


def toy_spec(attention: str = "ca", width: int = 8) -> NetworkSpec:
    cfg = AttentionConfig(kind=attention, reduction=4, mid_channels_min=4)
    blocks = (
        BlockSpec("inverted_residual", width, width, 1, 2, cfg),
        BlockSpec("inverted_residual", width, width, 1, 2, cfg),
        BlockSpec("inverted_residual", width, width, 1, 2, cfg),
    )
    return NetworkSpec(name=f"toy-{attention}", blocks=blocks, stem_channels=width, head_channels=None,
                       num_classes=TOY_CLASSES, input_shape=(1, TOY_SIZE, TOY_SIZE), stem_stride=1)


@dataclass
class SGD:
    params: list[Tensor]
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        for p, v in zip(self.params, self.velocity):
            if p.grad is None:
                continue
            v *= self.momentum
            v += p.grad + self.weight_decay * p.data
            p.data -= lr * v


def train_toy(cfg: ToyConfig) -> tuple[Network, list[tuple[int, float, float]]]:
    """Train from a fixed seed; returns the network and (step, loss, accuracy)
    rows, where each row is measured on that step's batch before the update."""
    rng = Rng(cfg.seed)
    net = build_network(toy_spec(cfg.attention, cfg.width), rng.spawn()).train()
    data_rng = rng.spawn()
    opt = SGD(net.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay)
    rows = []
    for step in range(1, cfg.steps + 1):
        x, y = toy_batch(data_rng, cfg.batch_size, cfg.noise)
        net.zero_grad()
        logits = net(Tensor(x))
        loss = ops.cross_entropy(logits, y)
        backward(loss)
        # cosine decay to zero over the run
        opt.step(0.5 * cfg.lr * (1 + np.cos(np.pi * (step - 1) / cfg.steps)))
        acc = float(np.mean(np.argmax(logits.data, axis=1) == y))
        rows.append((step, float(loss.data[0]), acc))
    return net, rows


def metrics_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for step, loss, acc in rows:
        w.writerow([step, f"{loss:.6f}", f"{acc:.4f}"])
    return buf.getvalue()
