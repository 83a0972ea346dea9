"""PNG load/save helpers; images are (3,H,W) float32 in [0,1] internally."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image


def load_image(path) -> np.ndarray:
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        arr = np.asarray(rgb, dtype=np.uint8)
    return np.ascontiguousarray(arr.transpose(2, 0, 1).astype(np.float32) / 255.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    return np.round(arr * 255.0).astype(np.uint8)


def encode_png(img: np.ndarray) -> bytes:
    """Lossless 8-bit RGB PNG bytes for a (3,H,W) float image."""
    arr = to_uint8(img).transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_image(path, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(img))


def decode_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return np.ascontiguousarray(arr.transpose(2, 0, 1).astype(np.float32) / 255.0)
