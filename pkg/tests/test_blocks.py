import dataclasses

import numpy as np
import pytest

from conftest import rand, zero_weights
from coordatt.attention import AttentionConfig
from coordatt.gradcheck import _randomize
from coordatt.network import (PRESETS, BlockSpec, NetworkSpec, SpecError, block_body, block_forward,
                              build_network, channel_round, init_block, inverted_residual_forward,
                              preset, sandglass_forward, with_attention)
from coordatt.tensor import Rng, ShapeError, Tensor

CA = AttentionConfig("ca", reduction=4, mid_channels_min=2)


def test_channel_round_examples():
    assert channel_round(32 * 0.75) == 24
    assert channel_round(16 * 0.5) == 8
    assert channel_round(24 * 0.75) == 24
    assert channel_round(3) == 8
    assert channel_round(1280) == 1280


def test_identity_inverted_residual_doubles_input():
    spec = BlockSpec("inverted_residual", 4, 4, 1, 1)
    p = init_block(spec, Rng(0), batchnorm=False)
    assert p.expand is None
    dw = np.zeros((4, 1, 3, 3))
    dw[:, 0, 1, 1] = 1.0
    p.depthwise.conv.weight.data = dw
    p.project.conv.weight.data = np.eye(4).reshape(4, 4, 1, 1)
    x = rand(Rng(1), (2, 4, 5, 5), 0.0, 5.0)
    assert np.array_equal(inverted_residual_forward(x, p, spec).data, 2 * x.data)


@pytest.mark.parametrize("block_type", ["inverted_residual", "sandglass"])
@pytest.mark.parametrize("hw", [(8, 8), (7, 5)])
def test_stride_two_halves_extents(block_type, hw):
    spec = BlockSpec(block_type, 8, 16, 2, 2 if block_type == "sandglass" else 6, CA)
    p = init_block(spec, Rng(2))
    y = block_forward(rand(Rng(2), (1, 8) + hw), p, spec)
    assert y.shape == (1, 16, -(-hw[0] // 2), -(-hw[1] // 2))


@pytest.mark.parametrize("block_type", ["inverted_residual", "sandglass"])
def test_forward_equals_input_plus_body_exactly(block_type):
    spec = BlockSpec(block_type, 8, 8, 1, 2, CA)
    p = init_block(spec, Rng(3))
    _randomize(p, Rng(4))
    x = rand(Rng(5), (2, 8, 6, 6))
    assert spec.has_shortcut
    out = block_forward(x, p, spec).data
    body = block_body(x, p, spec).data
    assert np.array_equal(out, x.data + body)
    assert not BlockSpec(block_type, 8, 8, 2, 2).has_shortcut
    assert not BlockSpec(block_type, 8, 16, 1, 2).has_shortcut


def test_zero_weight_ca_scales_pre_projection_tensor_by_quarter():
    cfg = AttentionConfig("ca", reduction=4, mid_channels_min=2, use_bn=False)
    spec = BlockSpec("inverted_residual", 4, 8, 2, 6, cfg)
    p = init_block(spec, Rng(6), batchnorm=False)
    zero_weights(p.attn)
    plain_spec = dataclasses.replace(spec, attention=AttentionConfig())
    plain = dataclasses.replace(p, attn=None)
    x = rand(Rng(7), (2, 4, 6, 6))
    taps = []
    with_ca = block_forward(x, p, spec, tap=taps.append).data
    without = block_forward(x, plain, plain_spec).data
    assert np.max(np.abs(with_ca - 0.25 * without)) < 1e-12
    # the attention input is the expanded depthwise output
    assert taps[0].shape == (2, 24, 3, 3)


def test_sandglass_identity_friendly_init_is_finite():
    spec = BlockSpec("sandglass", 8, 8, 1, 1)
    p = init_block(spec, Rng(8))
    y = sandglass_forward(rand(Rng(8), (1, 8, 5, 5)), p, spec)
    assert y.shape == (1, 8, 5, 5) and np.all(np.isfinite(y.data))


def test_sandglass_with_se_differs_from_plain():
    spec = BlockSpec("sandglass", 8, 8, 1, 2, AttentionConfig("se", reduction=4))
    p = init_block(spec, Rng(9))
    _randomize(p, Rng(10))
    plain = dataclasses.replace(p, attn=None)
    plain_spec = dataclasses.replace(spec, attention=AttentionConfig())
    x = rand(Rng(11), (1, 8, 5, 5))
    assert np.max(np.abs(sandglass_forward(x, p, spec).data - sandglass_forward(x, plain, plain_spec).data)) > 1e-6


def test_wrong_forward_for_block_type():
    spec = BlockSpec("sandglass", 8, 8)
    with pytest.raises(SpecError):
        inverted_residual_forward(Tensor.ones((1, 8, 4, 4)), init_block(spec, Rng(0)), spec)
    with pytest.raises(ShapeError):
        sandglass_forward(Tensor.ones((1, 4, 4, 4)), init_block(spec, Rng(0)), spec)


def test_post_project_placement_attends_on_output_channels():
    spec = BlockSpec("inverted_residual", 8, 16, 1, 6, CA, placement="post_project")
    p = init_block(spec, Rng(12))
    assert p.attn.f1.in_channels == 16
    assert block_forward(rand(Rng(12), (1, 8, 4, 4)), p, spec).shape == (1, 16, 4, 4)


def test_bad_channel_chain_and_unknown_preset():
    blocks = (BlockSpec("inverted_residual", 8, 16), BlockSpec("inverted_residual", 24, 24))
    with pytest.raises(SpecError, match=r"blocks\[1\]\.in_channels"):
        NetworkSpec("bad", blocks, stem_channels=8)
    with pytest.raises(SpecError, match="preset"):
        preset("mobilenetv3-1.0")


def test_mobilenetv2_table_structure():
    spec = preset("mobilenetv2-1.0")
    assert len(spec.blocks) == 17 and spec.stem_channels == 32 and spec.head_channels == 1280
    assert [b.out_channels for b in spec.blocks][::4] == [16, 32, 64, 96, 320]
    assert sum(b.stride == 2 for b in spec.blocks) + 1 == 5


def test_mobilenetv2_full_resolution_forward_shape():
    net = build_network(preset("mobilenetv2-1.0"), Rng(0)).eval()
    out = net(rand(Rng(0), (1, 3, 224, 224)))
    assert out.shape == (1, 1000)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_forward_finite_and_deterministic(name):
    spec = preset(name, num_classes=10, input_shape=(3, 32, 32))
    x = rand(Rng(1), (2, 3, 32, 32))
    a = build_network(spec, Rng(5)).eval()(x).data
    b = build_network(spec, Rng(5)).eval()(x).data
    assert a.shape == (2, 10) and np.all(np.isfinite(a)) and np.array_equal(a, b)


def test_attention_kind_changes_params_but_not_output_shape():
    base = preset("mobilenetv2-0.5", num_classes=7, input_shape=(3, 32, 32))
    x = rand(Rng(2), (1, 3, 32, 32))
    counts = set()
    for kind in ("none", "se", "cbam", "ca", "ca_x", "ca_y"):
        net = build_network(with_attention(base, AttentionConfig(kind, reduction=16)), Rng(0)).eval()
        assert net(x).shape == (1, 7)
        counts.add(sum(t.size for t in net.parameters()))
    assert len(counts) == 5  # ca_x and ca_y have equal size


def test_network_taps_capture_attention_inputs():
    spec = preset("mobilenext-0.5", AttentionConfig("ca"), num_classes=4, input_shape=(3, 32, 32))
    net = build_network(spec, Rng(0)).eval()
    taps = {}
    net.features(rand(Rng(0), (1, 3, 32, 32)), taps)
    assert sorted(taps, key=lambda k: int(k.split(".")[1])) == [f"blocks.{i}.attn" for i in range(len(spec.blocks))]
