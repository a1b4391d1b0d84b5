"""8-bit lossless PNG storage for images in [-1, 1] and mask planes in [0, 1]."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image as PILImage


def to_uint8(image) -> np.ndarray:
    arr = np.clip(np.asarray(image, dtype=np.float64), -1.0, 1.0)
    return np.round((arr + 1.0) * 127.5).astype(np.uint8)


def from_uint8(arr) -> np.ndarray:
    return np.asarray(arr, dtype=np.float64) / 127.5 - 1.0


def write_image(path, image) -> Path:
    """Write an H x W x C array in [-1, 1] as PNG (C = 1 or 3)."""
    path = Path(path)
    data = to_uint8(image)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    PILImage.fromarray(data).save(path, format="PNG", optimize=False, compress_level=6)
    return path


def read_image(path) -> np.ndarray:
    """Read a PNG into an H x W x C float64 array in [-1, 1]."""
    with PILImage.open(path) as im:
        if im.mode not in ("L", "RGB"):
            im = im.convert("RGB")
        arr = np.asarray(im)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return from_uint8(arr)


def write_masks(path, planes) -> Path:
    """Store (3, H, W) mask planes in [0, 1] as the RGB channels of a PNG."""
    planes = np.clip(np.asarray(planes, dtype=np.float64), 0.0, 1.0)
    data = np.round(np.moveaxis(planes, 0, -1) * 255.0).astype(np.uint8)
    PILImage.fromarray(data).save(Path(path), format="PNG")
    return Path(path)


def read_masks(path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.moveaxis(arr, -1, 0)


def image_grid(rows, pad: int = 2) -> np.ndarray:
    """Tile a list of rows (each a list of equal-size H x W x C images) into one array."""
    h, w, c = np.asarray(rows[0][0]).shape
    ncols = max(len(r) for r in rows)
    out = -np.ones((len(rows) * (h + pad) - pad, ncols * (w + pad) - pad, c))
    for i, row in enumerate(rows):
        for j, img in enumerate(row):
            out[i * (h + pad) : i * (h + pad) + h, j * (w + pad) : j * (w + pad) + w] = img
    return out
