"""PNG IO. Images are float64 arrays (3, H, W) in [0, 1]; masks are
(H, W) in [0, 1] stored as single-channel PNGs with 255 = edit region.
The uint8 round trip is exact: load(save(img)) == img for quantized data.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image as PILImage

from .errors import ValidationError


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def image_to_png_bytes(img: np.ndarray) -> bytes:
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValidationError(f"expected (3, H, W) image, got {img.shape}")
    arr = np.moveaxis(to_uint8(img), 0, -1)
    buf = io.BytesIO()
    PILImage.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def image_from_png_bytes(data: bytes) -> np.ndarray:
    with PILImage.open(io.BytesIO(data)) as pil:
        arr = np.asarray(pil.convert("RGB"), dtype=np.float64) / 255.0
    return np.moveaxis(arr, -1, 0)


def save_image(path, img: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(image_to_png_bytes(img))


def load_image(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return image_from_png_bytes(fh.read())


def mask_to_png_bytes(mask: np.ndarray) -> bytes:
    if mask.ndim != 2:
        raise ValidationError(f"expected (H, W) mask, got {mask.shape}")
    buf = io.BytesIO()
    arr = np.round(np.clip(mask, 0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def mask_from_png_bytes(data: bytes, *, binary: bool = False) -> np.ndarray:
    with PILImage.open(io.BytesIO(data)) as pil:
        arr = np.asarray(pil.convert("L"), dtype=np.float64) / 255.0
    if binary and not np.all(np.isin(np.unique(arr), (0.0, 1.0))):
        raise ValidationError("mask PNG is not binary (only 0 and 255 allowed)")
    return arr


def save_mask(path, mask: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(mask_to_png_bytes(mask))


def load_mask(path, *, binary: bool = False) -> np.ndarray:
    with open(path, "rb") as fh:
        return mask_from_png_bytes(fh.read(), binary=binary)


def b64_encode(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64_decode(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"))
