"""PNG encode/decode between numpy RGBA buffers and bytes (Pillow-backed)."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import CorruptFileError
from .io_util import atomic_write_bytes, read_bytes


def encode_png(pixels: np.ndarray) -> bytes:
    """Lossless PNG bytes from an (H, W, 4) uint8 RGBA buffer."""
    if pixels.ndim != 3 or pixels.shape[2] != 4 or pixels.dtype != np.uint8:
        raise ValueError(f"expected (H, W, 4) uint8, got {pixels.shape} {pixels.dtype}")
    img = Image.fromarray(pixels, mode="RGBA")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def encode_gray_png(values: np.ndarray) -> bytes:
    """8-bit grayscale PNG from an (H, W) uint8 buffer."""
    img = Image.fromarray(values, mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes, mode: str = "RGBA") -> np.ndarray:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise CorruptFileError(f"undecodable PNG payload: {exc}") from exc
    return np.asarray(img.convert(mode))


def save_png(pixels: np.ndarray, path: str | Path) -> None:
    atomic_write_bytes(path, encode_png(pixels))


def load_png(path: str | Path, mode: str = "RGBA") -> np.ndarray:
    return decode_png(read_bytes(path), mode=mode)
