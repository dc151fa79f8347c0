"""Minimal binary PGM (P5) and PBM (P4) codecs.

8-bit PGM holds frame luminance; P4 PBM holds binary mattes (1 = inside).
Only the subset of the netpbm spec needed for the bundle format is
implemented: one image per file, maxval 255, '#' comments in headers.
"""

from __future__ import annotations

import numpy as np


def _read_header_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read `count` whitespace-separated integer tokens, skipping comments.

    Returns the tokens and the offset of the byte after the single
    whitespace character that terminates the header.
    """
    tokens: list[int] = []
    i = 0
    while len(tokens) < count:
        if i >= len(data):
            raise ValueError("truncated netpbm header")
        c = data[i : i + 1]
        if c == b"#":
            while i < len(data) and data[i : i + 1] not in (b"\n", b"\r"):
                i += 1
        elif c.isspace():
            i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace() and data[j : j + 1] != b"#":
                j += 1
            tokens.append(int(data[i:j]))
            i = j
    # exactly one whitespace byte separates header from raster
    if i >= len(data) or not data[i : i + 1].isspace():
        raise ValueError("netpbm header not terminated by whitespace")
    return tokens, i + 1


def write_pgm(path, intensity: np.ndarray) -> bytes:
    """Encode a [0, 1] float image as binary 8-bit PGM; write if path given."""
    arr = np.asarray(intensity, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("intensity must be 2-D")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("intensity values must lie in [0, 1]")
    h, w = arr.shape
    raster = np.rint(arr * 255.0).astype(np.uint8)
    payload = b"P5\n%d %d\n255\n" % (w, h) + raster.tobytes()
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(payload)
    return payload


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM file")
    (w, h, maxval), offset = _read_header_tokens(data[2:], 3)
    offset += 2
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    raster = np.frombuffer(data, dtype=np.uint8, count=h * w, offset=offset)
    return raster.reshape(h, w).astype(np.float64) / 255.0


def write_pbm(path, mask: np.ndarray) -> bytes:
    """Encode a boolean mask as binary PBM (P4); write if path given."""
    arr = np.asarray(mask, dtype=bool)
    if arr.ndim != 2:
        raise ValueError("mask must be 2-D")
    h, w = arr.shape
    packed = np.packbits(arr, axis=1)
    payload = b"P4\n%d %d\n" % (w, h) + packed.tobytes()
    if path is not None:
        with open(path, "wb") as fh:
            fh.write(payload)
    return payload


def read_pbm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P4"):
        raise ValueError(f"{path}: not a binary PBM file")
    (w, h), offset = _read_header_tokens(data[2:], 2)
    offset += 2
    row_bytes = (w + 7) // 8
    raster = np.frombuffer(data, dtype=np.uint8, count=h * row_bytes, offset=offset)
    bits = np.unpackbits(raster.reshape(h, row_bytes), axis=1)[:, :w]
    return bits.astype(bool)
