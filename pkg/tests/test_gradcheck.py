import numpy as np
import pytest

from coordatt import ops
from coordatt.gradcheck import (TARGETS, kink_margin, numeric_gradient, oracle_agreement,
                                relative_error, resolve_targets, run_check, run_checks)
from coordatt.tensor import Rng, Tensor


def test_numeric_gradient_of_square():
    g = numeric_gradient(lambda t: float((t.data ** 2).sum()), Tensor(np.array([1.0, 2.0])))
    assert np.max(np.abs(g.data - [2.0, 4.0])) < 1e-8


def test_numeric_gradient_of_sigmoid_at_zero():
    g = numeric_gradient(lambda t: ops.sigmoid(t).sum(), Tensor(np.zeros(4)))
    assert np.max(np.abs(g.data - 0.25)) < 1e-9


def test_relative_error_uses_floor():
    rel, ab = relative_error(np.zeros(3), np.full(3, 1e-14))
    assert rel == pytest.approx(np.sqrt(3) * 1e-14 / 1e-12) and ab == 1e-14
    rel, _ = relative_error(np.array([1.0, 0.0]), np.array([1.0, 1e-3]))
    assert rel == pytest.approx(1e-3 / np.hypot(1.0, 1e-3))
    assert relative_error(np.zeros(2), np.zeros(2)) == (0.0, 0.0)


def test_kink_margin_tracks_relu_inputs():
    x = Tensor(np.array([0.5, -2e-4, 3.0]), requires_grad=True)
    assert kink_margin(ops.relu(x).sum()) == pytest.approx(2e-4)


def test_target_resolution():
    assert resolve_targets("all") == list(TARGETS)
    assert "ca" in resolve_targets("block") or "ca" in resolve_targets("op")
    assert resolve_targets("network") == ["network"]
    with pytest.raises(KeyError):
        resolve_targets("nope")


@pytest.mark.parametrize("target", ["conv2d_depthwise", "broadcast_mul", "ca", "se", "cbam"])
def test_selected_targets_pass(target):
    rep = run_check(target, seed=3, cases=5)
    assert rep.passed and rep.max_rel_err < rep.threshold and rep.cases == 5


def test_sabotage_is_detected():
    rep = run_check("ca", seed=0, cases=3, sabotage=True)
    assert not rep.passed and rep.max_rel_err > 1e-3


def test_parallel_matches_serial():
    serial = run_checks("op", seed=1, cases=2, jobs=1)
    parallel = run_checks("op", seed=1, cases=2, jobs=4)
    assert [r.max_rel_err for r in serial] == [r.max_rel_err for r in parallel]


@pytest.mark.parametrize("kind", ["se", "cbam", "ca", "ca_x", "ca_y"])
def test_oracle_agreement_small_run(kind):
    assert oracle_agreement(kind, seed=1, cases=4) < 1e-10
