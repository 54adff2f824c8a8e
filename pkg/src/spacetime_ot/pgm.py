"""Minimal binary/ascii PGM reading and 16-bit binary writing."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DataError


def _tokens(data: bytes, count: int, start=0):
    """First `count` header tokens (comments skipped) and the offset after them."""
    out = []
    i = start
    n = len(data)
    while len(out) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i < n and data[i:i + 1] == b"#":
            while i < n and data[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < n and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
            j += 1
        if j == i:
            raise DataError("truncated PGM header")
        out.append(data[i:j])
        i = j
    return out, i


def read_pgm(path):
    """Return (image, maxval); row 0 of the file is row 0 of the array."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    (magic, w, h, maxval), off = _tokens(data, 4)
    w, h, maxval = int(w), int(h), int(maxval)
    if not 0 < maxval < 65536:
        raise DataError(f"{path}: bad maxval {maxval}")
    if magic == b"P5":
        dt = ">u2" if maxval > 255 else "u1"
        size = np.dtype(dt).itemsize * w * h
        raw = data[off + 1:off + 1 + size]
        if len(raw) != size:
            raise DataError(f"{path}: pixel data truncated")
        img = np.frombuffer(raw, dtype=dt).reshape(h, w)
    elif magic == b"P2":
        vals, _ = _tokens(data, w * h, off)
        img = np.array([int(v) for v in vals]).reshape(h, w)
    else:
        raise DataError(f"{path}: not a PGM file")
    return img.astype(np.int64), maxval


def write_pgm16(path, img):
    """Binary 16-bit PGM with a fixed header, so equal arrays give equal bytes."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise DataError("PGM frames must be two-dimensional")
    if img.min() < 0 or img.max() > 65535:
        raise DataError("PGM values must lie in [0, 65535]")
    h, w = img.shape
    header = f"P5\n{w} {h}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + img.astype(">u2").tobytes())
