"""Reading and writing images as channel-first float arrays in [0, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigurationError, StyleForgeError


class ImageFileError(StyleForgeError):
    """An image file could not be opened or decoded."""


def read_image(path) -> np.ndarray:
    """Load an image as RGB, shape (3, H, W), float32 values in [0, 1].

    Greyscale images are replicated across channels; alpha is dropped.
    """
    try:
        with Image.open(path) as im:
            rgb = im.convert("RGB")
            arr = np.asarray(rgb, dtype=np.float32) / 255.0
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ImageFileError(f"could not read image {path}: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def read_mask(path) -> np.ndarray:
    """Load a greyscale mask as (H, W) float32 in [0, 1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise ImageFileError(f"could not read mask {path}: {exc}") from exc
    return arr


def save_image(path, image: np.ndarray) -> None:
    """Write a (3, H, W) float array as an 8-bit PNG, clipping to [0, 1]."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ConfigurationError(f"image must have shape (3, H, W), got {image.shape}")
    data = np.clip(image, 0.0, 1.0)
    data = (data * 255.0).round().astype(np.uint8).transpose(1, 2, 0)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def encode_png(image: np.ndarray) -> bytes:
    """PNG bytes of a (3, H, W) float array, clipped to [0, 1]."""
    import io

    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ConfigurationError(f"image must have shape (3, H, W), got {image.shape}")
    data = np.clip(image, 0.0, 1.0)
    data = (data * 255.0).round().astype(np.uint8).transpose(1, 2, 0)
    buf = io.BytesIO()
    Image.fromarray(data, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_image(data: bytes) -> np.ndarray:
    """Decode encoded image bytes to (3, H, W) float32 in [0, 1]."""
    import io

    try:
        with Image.open(io.BytesIO(data)) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    except Exception as exc:
        raise ImageFileError(f"could not decode image bytes: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def decode_mask(data: bytes) -> np.ndarray:
    """Decode encoded greyscale bytes to (H, W) float32 in [0, 1]."""
    import io

    try:
        with Image.open(io.BytesIO(data)) as im:
            arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    except Exception as exc:
        raise ImageFileError(f"could not decode mask bytes: {exc}") from exc
    return arr
