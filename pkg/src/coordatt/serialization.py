"""Network spec documents (JSON) and the CAW1 binary weight format.

Weight file layout, all integers little-endian u32::

    b"CAW1" | version | tensor count |
    per tensor: name length | name (utf-8) | rank | extents... | float32 LE payload
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .attention import ATTENTION_KINDS, AttentionConfig
from .network import BlockSpec, Network, NetworkSpec, SpecError, preset, with_attention

__all__ = [
    "SpecError",
    "SPEC_VERSION",
    "WEIGHT_MAGIC",
    "WEIGHT_VERSION",
    "WeightFileError",
    "parse_spec",
    "load_spec",
    "spec_to_dict",
    "dump_spec",
    "encode_weights",
    "decode_weights",
    "save_weights",
    "load_weights",
]

SPEC_VERSION = 1
WEIGHT_MAGIC = b"CAW1"
WEIGHT_VERSION = 1

_ATTENTION_KEYS = {"kind", "reduction", "mid_channels_min", "delta_activation", "cbam_kernel",
                   "use_bn", "f1_bias"}
_BLOCK_KEYS = {"type", "in_channels", "out_channels", "stride", "expansion", "attention",
               "placement", "dw_in", "dw_out"}
_PRESET_KEYS = {"version", "preset", "attention", "placement", "num_classes", "input_shape"}
_EXPLICIT_KEYS = {"version", "name", "width_multiplier", "input_shape", "batchnorm", "stem",
                  "blocks", "head", "attention", "placement"}


class WeightFileError(ValueError):
    pass


# -- typed field access with path-qualified errors


def _expect_obj(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise SpecError(f"{path}: expected an object, got {type(value).__name__}")
    return value


def _reject_unknown(obj: dict, allowed: set[str], path: str) -> None:
    unknown = sorted(set(obj) - allowed)
    if unknown:
        prefix = f"{path}." if path else ""
        raise SpecError(f"{prefix}{unknown[0]}: unknown field")


def _int(obj: dict, key: str, path: str, default=None, minimum: int | None = None):
    if key not in obj:
        if default is None:
            raise SpecError(f"{path}{key}: required field missing")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise SpecError(f"{path}{key}: expected an integer, got {json.dumps(v)}")
    if minimum is not None and v < minimum:
        raise SpecError(f"{path}{key}: must be >= {minimum}, got {v}")
    return v


def _num(obj: dict, key: str, path: str, default=None) -> float:
    if key not in obj:
        if default is None:
            raise SpecError(f"{path}{key}: required field missing")
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v) or v <= 0:
        raise SpecError(f"{path}{key}: expected a positive number, got {json.dumps(v)}")
    return v


def _bool(obj: dict, key: str, path: str, default: bool) -> bool:
    v = obj.get(key, default)
    if not isinstance(v, bool):
        raise SpecError(f"{path}{key}: expected true or false, got {json.dumps(v)}")
    return v


def _str(obj: dict, key: str, path: str, default=None, choices=None) -> str:
    if key not in obj:
        if default is None:
            raise SpecError(f"{path}{key}: required field missing")
        return default
    v = obj[key]
    if not isinstance(v, str):
        raise SpecError(f"{path}{key}: expected a string, got {json.dumps(v)}")
    if choices is not None and v not in choices:
        raise SpecError(f"{path}{key}: unknown value {v!r}; expected one of {list(choices)}")
    return v


def _input_shape(obj: dict, path: str, default):
    if "input_shape" not in obj:
        return default
    v = obj["input_shape"]
    if (not isinstance(v, list) or len(v) != 3
            or any(isinstance(e, bool) or not isinstance(e, int) or e < 1 for e in v)):
        raise SpecError(f"{path}input_shape: expected [C, H, W] of positive integers, got {json.dumps(v)}")
    return tuple(v)


def _attention(value, path: str) -> AttentionConfig:
    obj = _expect_obj(value, path)
    _reject_unknown(obj, _ATTENTION_KEYS, path)
    p = path + "."
    f1_bias = obj.get("f1_bias")
    if f1_bias is not None and not isinstance(f1_bias, bool):
        raise SpecError(f"{p}f1_bias: expected true, false or null, got {json.dumps(f1_bias)}")
    try:
        return AttentionConfig(
            kind=_str(obj, "kind", p, choices=ATTENTION_KINDS),
            reduction=_int(obj, "reduction", p, 32, minimum=1),
            mid_channels_min=_int(obj, "mid_channels_min", p, 8, minimum=1),
            delta_activation=_str(obj, "delta_activation", p, "hard_swish"),
            cbam_kernel=_int(obj, "cbam_kernel", p, 7, minimum=1),
            use_bn=_bool(obj, "use_bn", p, True),
            f1_bias=f1_bias,
        )
    except SpecError:
        raise
    except ValueError as exc:
        raise SpecError(f"{path}: {exc}") from None


def _block(value, path: str, default_attention: AttentionConfig, default_placement: str) -> BlockSpec:
    obj = _expect_obj(value, path)
    _reject_unknown(obj, _BLOCK_KEYS, path)
    p = path + "."
    attention = _attention(obj["attention"], p + "attention") if "attention" in obj else default_attention
    try:
        return BlockSpec(
            block_type=_str(obj, "type", p, choices=("inverted_residual", "sandglass")),
            in_channels=_int(obj, "in_channels", p, minimum=1),
            out_channels=_int(obj, "out_channels", p, minimum=1),
            stride=_int(obj, "stride", p, 1),
            expansion=_num(obj, "expansion", p, 6),
            attention=attention,
            placement=_str(obj, "placement", p, default_placement),
            dw_in=_bool(obj, "dw_in", p, True),
            dw_out=_bool(obj, "dw_out", p, True),
        )
    except SpecError as exc:
        msg = str(exc)
        raise SpecError(msg if msg.startswith(path) else f"{p}{msg}") from None


def parse_spec(document: str | bytes | dict) -> NetworkSpec:
    """Validate a spec document. Every failure, including undecodable bytes
    and malformed JSON, raises :class:`SpecError` naming the offending field."""
    if isinstance(document, (bytes, bytearray)):
        try:
            document = bytes(document).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SpecError(f"document: not valid UTF-8 ({exc.reason})") from None
    if isinstance(document, str):
        try:
            document = json.loads(document)
        except (json.JSONDecodeError, RecursionError) as exc:
            raise SpecError(f"document: invalid JSON ({exc})") from None
    doc = _expect_obj(document, "document")
    version = _int(doc, "version", "", minimum=0)
    if version != SPEC_VERSION:
        raise SpecError(f"version: unsupported spec version {version}; expected {SPEC_VERSION}")

    from .network import PLACEMENTS
    placement = _str(doc, "placement", "", "pre_project", choices=PLACEMENTS)
    attention = _attention(doc["attention"], "attention") if "attention" in doc else None

    if "preset" in doc:
        _reject_unknown(doc, _PRESET_KEYS, "")
        name = _str(doc, "preset", "")
        kwargs = {}
        if "num_classes" in doc:
            kwargs["num_classes"] = _int(doc, "num_classes", "", minimum=1)
        if "input_shape" in doc:
            kwargs["input_shape"] = _input_shape(doc, "", None)
        spec = preset(name, **kwargs)
        if attention is not None or "placement" in doc:
            spec = with_attention(spec, attention or AttentionConfig(), placement)
        return spec

    _reject_unknown(doc, _EXPLICIT_KEYS, "")
    stem = _expect_obj(doc.get("stem"), "stem") if "stem" in doc else None
    if stem is None:
        raise SpecError("stem: required field missing")
    _reject_unknown(stem, {"channels", "stride"}, "stem")
    head = _expect_obj(doc["head"], "head") if "head" in doc else {}
    _reject_unknown(head, {"conv_channels", "num_classes"}, "head")
    head_channels = head.get("conv_channels", 1280)
    if "conv_channels" in head and head_channels is not None:
        head_channels = _int(head, "conv_channels", "head.", minimum=1)
    blocks_doc = doc.get("blocks")
    if not isinstance(blocks_doc, list):
        raise SpecError(f"blocks: expected a list, got {json.dumps(blocks_doc)[:40]}")
    default_attention = attention or AttentionConfig()
    blocks = tuple(_block(b, f"blocks[{i}]", default_attention, placement)
                   for i, b in enumerate(blocks_doc))
    return NetworkSpec(
        name=_str(doc, "name", "", "custom"),
        blocks=blocks,
        stem_channels=_int(stem, "channels", "stem.", minimum=1),
        stem_stride=_int(stem, "stride", "stem.", 2),
        head_channels=head_channels,
        num_classes=_int(head, "num_classes", "head.", 1000, minimum=1),
        input_shape=_input_shape(doc, "", (3, 224, 224)),
        width_multiplier=_num(doc, "width_multiplier", "", 1.0),
        batchnorm=_bool(doc, "batchnorm", "", True),
    )


def load_spec(path: str | Path) -> NetworkSpec:
    return parse_spec(Path(path).read_bytes())


def _attention_dict(cfg: AttentionConfig) -> dict:
    return {
        "kind": cfg.kind,
        "reduction": cfg.reduction,
        "mid_channels_min": cfg.mid_channels_min,
        "delta_activation": cfg.delta_activation,
        "cbam_kernel": cfg.cbam_kernel,
        "use_bn": cfg.use_bn,
        "f1_bias": cfg.f1_bias,
    }


def spec_to_dict(spec: NetworkSpec) -> dict:
    """Explicit (preset-free) document; ``parse_spec`` inverts it exactly."""
    return {
        "version": SPEC_VERSION,
        "name": spec.name,
        "width_multiplier": spec.width_multiplier,
        "input_shape": list(spec.input_shape),
        "batchnorm": spec.batchnorm,
        "stem": {"channels": spec.stem_channels, "stride": spec.stem_stride},
        "blocks": [
            {
                "type": b.block_type,
                "in_channels": b.in_channels,
                "out_channels": b.out_channels,
                "stride": b.stride,
                "expansion": b.expansion,
                "attention": _attention_dict(b.attention),
                "placement": b.placement,
                "dw_in": b.dw_in,
                "dw_out": b.dw_out,
            }
            for b in spec.blocks
        ],
        "head": {"conv_channels": spec.head_channels, "num_classes": spec.num_classes},
    }


def dump_spec(spec: NetworkSpec) -> str:
    return json.dumps(spec_to_dict(spec), indent=2) + "\n"


# -- weights


def encode_weights(net: Network) -> bytes:
    state = net.named_state()
    parts = [WEIGHT_MAGIC, struct.pack("<II", WEIGHT_VERSION, len(state))]
    for name, t, _ in state:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)))
        parts.append(raw)
        parts.append(struct.pack(f"<I{t.ndim}I", t.ndim, *t.shape))
        parts.append(t.data.astype("<f4").tobytes())
    return b"".join(parts)


def decode_weights(blob: bytes) -> list[tuple[str, np.ndarray]]:
    view = memoryview(blob)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise WeightFileError(f"truncated weight file while reading {what} at byte {pos}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != WEIGHT_MAGIC:
        raise WeightFileError(f"bad magic {bytes(view[:4])!r}; expected {WEIGHT_MAGIC!r}")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != WEIGHT_VERSION:
        raise WeightFileError(f"unsupported weight format version {version}")
    tensors = []
    for k in range(count):
        (name_len,) = struct.unpack("<I", take(4, f"tensor {k} name length"))
        try:
            name = bytes(take(name_len, f"tensor {k} name")).decode("utf-8")
        except UnicodeDecodeError:
            raise WeightFileError(f"tensor {k}: name is not valid UTF-8") from None
        (rank,) = struct.unpack("<I", take(4, f"{name} rank"))
        if not 1 <= rank <= 4:
            raise WeightFileError(f"{name}: rank {rank} outside 1..4")
        shape = struct.unpack(f"<{rank}I", take(4 * rank, f"{name} extents"))
        n = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(take(4 * n, f"{name} payload"), dtype="<f4").reshape(shape)
        tensors.append((name, data.astype(np.float64)))
    if pos != len(view):
        raise WeightFileError(f"{len(view) - pos} trailing bytes after {count} tensors")
    return tensors


def save_weights(net: Network, path: str | Path) -> None:
    Path(path).write_bytes(encode_weights(net))


def load_weights(path: str | Path, net: Network) -> Network:
    """Fill ``net`` in place from a weight file; names and shapes must match exactly."""
    loaded = dict(decode_weights(Path(path).read_bytes()))
    state = {name: t for name, t, _ in net.named_state()}
    missing = sorted(set(state) - set(loaded))
    unexpected = sorted(set(loaded) - set(state))
    mismatched = sorted(
        f"{name} {list(loaded[name].shape)} != {list(t.shape)}"
        for name, t in state.items() if name in loaded and loaded[name].shape != t.shape
    )
    problems = []
    if missing:
        problems.append("missing: " + ", ".join(missing))
    if unexpected:
        problems.append("unexpected: " + ", ".join(unexpected))
    if mismatched:
        problems.append("shape mismatch: " + ", ".join(mismatched))
    if problems:
        raise WeightFileError("weight file does not match network; " + "; ".join(problems))
    for name, t in state.items():
        t.data = loaded[name].copy()
    return net
