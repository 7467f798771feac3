"""Binary netpbm reading and writing (P5 graymaps and P6 pixmaps).

Only the raw variants are supported. Samples are big-endian when maxval
exceeds 255, as the netpbm format requires.
"""

from __future__ import annotations

import os
import re

import numpy as np

from ._io import atomic_write

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


class NetpbmError(ValueError):
    """Raised for malformed or unsupported netpbm data."""


def _parse_header(data: bytes) -> tuple[bytes, int, int, int, int]:
    pos = 0
    tokens = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise NetpbmError("truncated netpbm header")
        tokens.append(m.group(1))
        pos = m.end()
    # exactly one whitespace byte separates maxval from the raster
    if pos >= len(data) or data[pos:pos + 1] not in b" \t\r\n":
        raise NetpbmError("missing whitespace after maxval")
    pos += 1
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise NetpbmError(f"non-numeric header field: {exc}") from None
    if width < 1 or height < 1:
        raise NetpbmError(f"invalid dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise NetpbmError(f"maxval {maxval} outside 1..65535")
    return magic, width, height, maxval, pos


def decode(data: bytes) -> tuple[np.ndarray, int]:
    """Decode P5/P6 bytes into an integer array and its maxval.

    P5 yields shape ``(height, width)``; P6 yields ``(height, width, 3)``.
    """
    magic, width, height, maxval, pos = _parse_header(data)
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise NetpbmError(f"unsupported magic {magic!r}; only P5 and P6 are read")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    need = count * dtype.itemsize
    if len(data) - pos < need:
        raise NetpbmError("raster shorter than header promises")
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    if np.any(arr > maxval):
        raise NetpbmError("sample exceeds maxval")
    shape = (height, width) if channels == 1 else (height, width, 3)
    return arr.reshape(shape).astype(np.uint16 if maxval > 255 else np.uint8), maxval


def encode(arr: np.ndarray, maxval: int | None = None) -> bytes:
    """Encode an integer array as P5 (2-D) or P6 (H x W x 3)."""
    arr = np.asarray(arr)
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise NetpbmError(f"cannot encode array of shape {arr.shape}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise NetpbmError("netpbm samples must be integers")
    if maxval is None:
        maxval = 255 if arr.max(initial=0) <= 255 else 65535
    if arr.size and (arr.min() < 0 or arr.max() > maxval):
        raise NetpbmError("sample outside 0..maxval")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    h, w = arr.shape[:2]
    header = b"%s\n%d %d\n%d\n" % (magic, w, h, maxval)
    return header + np.ascontiguousarray(arr, dtype=dtype).tobytes()


def read(path: str | os.PathLike) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        return decode(fh.read())


def write(path: str | os.PathLike, arr: np.ndarray, maxval: int | None = None) -> None:
    atomic_write(path, encode(arr, maxval))


def read_gray(path: str | os.PathLike) -> np.ndarray:
    """Read a P5/P6 file as float intensities in [0, 1].

    Colour input is returned as ``(H, W, 3)``.
    """
    arr, maxval = read(path)
    return arr.astype(np.float64) / maxval


def read_mask(path: str | os.PathLike) -> np.ndarray:
    """Read a P5 mask with values {0, maxval} as a {0, 1} uint8 grid."""
    arr, maxval = read(path)
    if arr.ndim != 2:
        raise NetpbmError("mask must be a P5 graymap")
    if not np.all((arr == 0) | (arr == maxval)):
        raise NetpbmError("mask values must be 0 or maxval")
    return (arr == maxval).astype(np.uint8)


def write_mask(path: str | os.PathLike, mask: np.ndarray) -> None:
    write(path, (np.asarray(mask) != 0).astype(np.uint8) * 255, 255)


def to_bytes_gray(img: np.ndarray) -> np.ndarray:
    """Quantize a [0, 1] float image to 8-bit samples."""
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
