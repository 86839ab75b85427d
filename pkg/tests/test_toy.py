
import numpy as np

from coordatt.toy import TOY_CLASSES, ToyConfig, toy_batch, toy_spec, train_toy
from coordatt.tensor import Rng

def test_toy_batch_contents():
    x, y = toy_batch(Rng(0), 64)
    assert x.shape == (64, 1, 16, 16) and y.shape == (64,)
    assert y.min() >= 0 and y.max() < TOY_CLASSES
    for img, label in zip(x[:, 0], y):
        rows = np.flatnonzero(np.all(img == 1.0, axis=1))
        cols = np.flatnonzero(np.all(img == 1.0, axis=0))
        pos = rows if len(rows) == 1 else cols
        assert len(pos) == 1 and pos[0] // 2 == label

def test_toy_network_has_three_blocks():
    spec = toy_spec("ca")
    assert len(spec.blocks) == 3 and spec.num_classes == TOY_CLASSES
    assert spec.input_shape == (1, 16, 16)

def test_short_runs_are_deterministic():
    a = train_toy(ToyConfig(steps=4, seed=3))[1]
    b = train_toy(ToyConfig(steps=4, seed=3))[1]
    assert a == b
    assert train_toy(ToyConfig(steps=0))[1] == []
