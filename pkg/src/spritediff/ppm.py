"""Binary PPM (P6, maxval 255) image I/O for images in [-1, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import CheckpointError


def to_uint8(img: np.ndarray) -> np.ndarray:
    """[3, H, W] in [-1, 1] -> [H, W, 3] uint8."""
    x = np.clip((np.asarray(img, dtype=np.float64) + 1.0) * 127.5, 0, 255)
    return np.round(x).astype(np.uint8).transpose(1, 2, 0)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float64).transpose(2, 0, 1) / 127.5 - 1.0


def encode_ppm(img: np.ndarray) -> bytes:
    px = to_uint8(img)
    h, w, _ = px.shape
    return b"P6\n%d %d\n255\n" % (w, h) + px.tobytes()


def decode_ppm(raw: bytes) -> np.ndarray:
    parts = []
    pos = 0
    while len(parts) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos)
            continue
        end = pos
        while end < len(raw) and not raw[end : end + 1].isspace():
            end += 1
        if end == pos:
            raise CheckpointError("truncated PPM header")
        parts.append(raw[pos:end])
        pos = end
    if parts[0] != b"P6" or parts[3] != b"255":
        raise CheckpointError("only binary PPM with maxval 255 is supported")
    w, h = int(parts[1]), int(parts[2])
    data = raw[pos + 1 : pos + 1 + 3 * w * h]
    if len(data) != 3 * w * h:
        raise CheckpointError("truncated PPM pixel data")
    return from_uint8(np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3))


def write_ppm(path, img: np.ndarray) -> None:
    Path(path).write_bytes(encode_ppm(img))


def read_ppm(path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"image not found: {p}")
    return decode_ppm(p.read_bytes())
