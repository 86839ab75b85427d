import csv
import io
import json

import pytest

from coordatt.attention import AttentionConfig
from coordatt.cost import COLUMNS, CONVENTION, cost_report, count_madds, count_params, emit_report
from coordatt.network import BlockSpec, NetworkSpec, build_network, preset
from coordatt.ops import ConvParams
from coordatt.cost import _Tracer
from coordatt.tensor import Rng


def test_single_pointwise_conv_counts():
    p = ConvParams.init(Rng(0), 4, 8, 1, bias=True)
    tr = _Tracer()
    assert tr.conv("c", p, (4, 2, 2)) == (8, 2, 2)
    assert tr.rows[0].params == 40 and tr.rows[0].madds == 128


def _single_block_net(kind, hw):
    block = BlockSpec("inverted_residual", 16, 16, 1, 6, AttentionConfig(kind))
    spec = NetworkSpec("one", (block,), stem_channels=16, head_channels=None, num_classes=10,
                       input_shape=(3, hw, hw), stem_stride=1)
    return build_network(spec, Rng(0))


def test_ca_madds_grow_with_height_plus_width():
    def ca_madds(hw):
        rows = cost_report(_single_block_net("ca", hw)).rows
        return sum(r.madds for r in rows if ".attn." in r.layer)

    small, large = ca_madds(56), ca_madds(112)
    assert large == 2 * small  # every CA conv runs over H+W positions


def test_any_attention_adds_parameters():
    base = count_params(_single_block_net("none", 8))
    for kind in ("se", "cbam", "ca", "ca_x", "ca_y"):
        assert count_params(_single_block_net(kind, 8)) > base


def test_counting_ignores_values_and_seed():
    spec = preset("mobilenetv2-0.5")
    a = cost_report(build_network(spec, Rng(1)))
    b = cost_report(build_network(spec, Rng(2)))
    assert a.rows == b.rows


def test_report_totals_and_formats_agree():
    net = build_network(preset("mobilenetv2-1.0", AttentionConfig("ca")), Rng(0))
    rep = cost_report(net)
    assert rep.total_params == count_params(net) == sum(r.params for r in rep.rows)
    assert rep.total_madds == count_madds(net)
    rows = list(csv.reader(io.StringIO(emit_report(rep, "csv"))))
    assert tuple(rows[0]) == COLUMNS
    assert rows[-1][0] == "total"
    doc = json.loads(emit_report(rep, "json"))
    assert doc["convention"] == CONVENTION
    assert int(rows[-1][2]) == doc["totals"]["params"] and int(rows[-1][3]) == doc["totals"]["madds"]
    assert doc["totals"]["params_without_bn"] < doc["totals"]["params"]
    assert emit_report(rep, "csv") == emit_report(cost_report(net), "csv")
    with pytest.raises(ValueError):
        emit_report(rep, "xml")


def test_ca_delta_over_baseline():
    base = count_params(build_network(preset("mobilenetv2-1.0"), Rng(0)))
    ca = count_params(build_network(preset("mobilenetv2-1.0", AttentionConfig("ca")), Rng(0)))
    assert abs((ca - base) - 0.45e6) / 0.45e6 < 0.03


def test_input_channel_mismatch():
    with pytest.raises(ValueError):
        cost_report(build_network(preset("mobilenetv2-0.5"), Rng(0)), (1, 224, 224))
