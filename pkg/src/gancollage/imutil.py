"""PNG and base64 helpers; images travel as (3, H, W) float arrays in [0, 1],
masks as (H, W) floats in [0, 1]."""

from __future__ import annotations

import base64
import hashlib
import io

import numpy as np
from PIL import Image

from .errors import ValidationError


def image_to_png_bytes(img: np.ndarray) -> bytes:
    img = np.asarray(img)
    if img.ndim == 3:
        arr = np.clip(np.rint(img.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
        pil = Image.fromarray(arr, mode="RGB")
    elif img.ndim == 2:
        arr = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
        pil = Image.fromarray(arr, mode="L")
    else:
        raise ValidationError("expected (3,H,W) image or (H,W) mask")
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_image(data: bytes) -> np.ndarray:
    try:
        pil = Image.open(io.BytesIO(data)).convert("RGB")
    except Exception as exc:
        raise ValidationError(f"not a decodable image: {exc}") from exc
    arr = np.asarray(pil, dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def png_bytes_to_mask(data: bytes) -> np.ndarray:
    try:
        pil = Image.open(io.BytesIO(data)).convert("L")
    except Exception as exc:
        raise ValidationError(f"not a decodable mask image: {exc}") from exc
    return np.asarray(pil, dtype=np.float64) / 255.0


def encode_png_b64(img: np.ndarray) -> str:
    return base64.b64encode(image_to_png_bytes(img)).decode("ascii")


def decode_b64(data: str) -> bytes:
    if data.startswith("data:"):
        data = data.split(",", 1)[-1]
    try:
        return base64.b64decode(data, validate=True)
    except Exception as exc:
        raise ValidationError(f"invalid base64 payload: {exc}") from exc


def image_digest(data: bytes) -> str:
    return "sha256:" + hashlib.sha256(data).hexdigest()
