"""Coordinate attention, SE and CBAM on a small numpy autodiff core, with
MobileNetV2 / MobileNeXt block builders, cost accounting and gradient checks."""

from .attention import AttentionConfig, attach, attention_forward, ca_forward, ca_gates
from .cost import cost_report, count_madds, count_params
from .network import BlockSpec, Network, NetworkSpec, SpecError, build_network, preset
from .serialization import load_weights, parse_spec, save_weights, spec_to_dict
from .tensor import Rng, ShapeError, Tensor, backward

__all__ = [
    "AttentionConfig", "attach", "attention_forward", "ca_forward", "ca_gates",
    "cost_report", "count_madds", "count_params",
    "BlockSpec", "Network", "NetworkSpec", "SpecError", "build_network", "preset",
    "load_weights", "parse_spec", "save_weights", "spec_to_dict",
    "Rng", "ShapeError", "Tensor", "backward",
]
