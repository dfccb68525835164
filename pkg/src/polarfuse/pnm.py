"""Binary PGM (P5) and PPM (P6) read/write, 8-bit only."""

from __future__ import annotations

import re

import numpy as np

from .errors import InputError

_TOKEN = re.compile(rb"^\s*(?:#[^\n]*\n\s*)*(\S+)")


def _read_tokens(data: bytes, count: int):
    """Read `count` header tokens, skipping comments; returns (tokens, offset)."""
    pos = 0
    tokens = []
    for _ in range(count):
        m = _TOKEN.match(data[pos:])
        if not m:
            raise InputError("truncated PNM header")
        tokens.append(m.group(1))
        pos += m.end()
    return tokens, pos


def _load(path: str, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = _read_tokens(data, 4)
    if tokens[0] != magic:
        raise InputError(f"{path}: expected {magic.decode()} file, got {tokens[0]!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise InputError(f"{path}: malformed PNM header")
    if width <= 0 or height <= 0:
        raise InputError(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise InputError(f"{path}: only 8-bit images supported (maxval {maxval})")
    pos += 1  # single whitespace byte after maxval
    need = width * height * channels
    raster = data[pos:pos + need]
    if len(raster) < need:
        raise InputError(f"{path}: truncated raster data")
    arr = np.frombuffer(raster, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width).copy()
    return arr.reshape(height, width, channels).copy()


def read_pgm(path: str) -> np.ndarray:
    """Read a binary 8-bit PGM into a (height, width) uint8 array."""
    return _load(path, b"P5", 1)


def read_ppm(path: str) -> np.ndarray:
    """Read a binary 8-bit PPM into a (height, width, 3) uint8 array."""
    return _load(path, b"P6", 3)


def _save(path: str, magic: bytes, arr: np.ndarray) -> None:
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (w, h))
        fh.write(np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


def write_pgm(path: str, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise InputError("PGM output needs a single-channel image")
    _save(path, b"P5", image)


def write_ppm(path: str, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise InputError("PPM output needs a 3-channel image")
    _save(path, b"P6", image)
