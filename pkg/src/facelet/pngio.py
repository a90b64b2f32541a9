"""PNG <-> float tensor conversion, shared by the generator, CLI and service.

All images are RGB, stored row-major as (3, H, W) float32 in [0,1]. Encoding
uses fixed Pillow settings so equal pixel data always yields equal bytes.
"""
from __future__ import annotations

import io

import numpy as np
from PIL import Image


def to_uint8(img: np.ndarray) -> np.ndarray:
    arr = np.clip(np.asarray(img, dtype=np.float32), 0.0, 1.0)
    return np.round(arr * 255.0).astype(np.uint8)


def from_uint8(arr: np.ndarray) -> np.ndarray:
    return arr.astype(np.float32) / np.float32(255.0)


def encode_png(img: np.ndarray) -> bytes:
    """(3,H,W) float in [0,1] -> PNG bytes (deterministic)."""
    u8 = to_uint8(img).transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(u8, mode="RGB").save(buf, format="PNG", compress_level=6)
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    """PNG bytes -> (3,H,W) float32 in [0,1]."""
    with Image.open(io.BytesIO(data)) as im:
        rgb = im.convert("RGB")
        return from_uint8(np.asarray(rgb).transpose(2, 0, 1))


def encode_png_gray(img: np.ndarray) -> bytes:
    """(H,W) uint8 or float in [0,1] -> grayscale PNG bytes."""
    arr = np.asarray(img)
    if arr.dtype != np.uint8:
        arr = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="L").save(buf, format="PNG", compress_level=6)
    return buf.getvalue()


def save_png(img: np.ndarray, path):
    with open(path, "wb") as f:
        f.write(encode_png(img))


def load_png(path) -> np.ndarray:
    with open(path, "rb") as f:
        return decode_png(f.read())
