"""Binary PGM (P5) / PPM (P6) reading and PGM writing."""

from __future__ import annotations

from pathlib import Path

import numpy as np

__all__ = ["PNMError", "parse_pnm", "read_pnm", "encode_pgm", "write_pgm"]


class PNMError(ValueError):
    pass


def _header_tokens(blob: bytes, count: int) -> tuple[list[int], int]:
    tokens: list[int] = []
    pos = 2
    while len(tokens) < count:
        while pos < len(blob) and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos:pos + 1] == b"#":
            while pos < len(blob) and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and blob[pos:pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise PNMError("malformed header")
        tokens.append(int(blob[start:pos]))
    if pos >= len(blob) or not blob[pos:pos + 1].isspace():
        raise PNMError("malformed header")
    return tokens, pos + 1


def parse_pnm(blob: bytes) -> np.ndarray:
    """Decode to float64 [C,H,W] scaled into [0,1] (C=1 for P5, 3 for P6)."""
    magic = blob[:2]
    if magic not in (b"P5", b"P6"):
        raise PNMError(f"unsupported image magic {magic!r}; expected P5 or P6")
    (w, h, maxval), pos = _header_tokens(blob, 3)
    if w < 1 or h < 1 or not 1 <= maxval <= 65535:
        raise PNMError(f"bad image header {w}x{h} maxval {maxval}")
    c = 1 if magic == b"P5" else 3
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * c * dtype.itemsize
    if len(blob) - pos < need:
        raise PNMError(f"truncated image: expected {need} payload bytes, got {len(blob) - pos}")
    px = np.frombuffer(blob, dtype=dtype, count=w * h * c, offset=pos).reshape(h, w, c)
    return px.transpose(2, 0, 1).astype(np.float64) / maxval


def read_pnm(path: str | Path) -> np.ndarray:
    return parse_pnm(Path(path).read_bytes())


def encode_pgm(values: np.ndarray) -> bytes:
    """8-bit P5 of a 2-D array in [0,1]; pixel = round(255 * value)."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise PNMError(f"PGM needs a 2-D array, got shape {list(a.shape)}")
    px = np.rint(np.clip(a, 0.0, 1.0) * 255).astype(np.uint8)
    return f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode() + px.tobytes()


def write_pgm(path: str | Path, values: np.ndarray) -> None:
    Path(path).write_bytes(encode_pgm(values))
