"""Image conventions and file I/O.

Internally every image is a float32 numpy array of shape (C, H, W) with
values in [-1, 1]. Masks are single-channel images whose values are exactly
-1 (background / keep) or +1 (foreground / editable). Depth maps are
single-channel with values in [0, 1], where 0 marks background. At the file
boundary everything is 8-bit PNG in [0, 1].
"""

from __future__ import annotations

import numpy as np
from PIL import Image as PILImage


class ImageContractError(ValueError):
    """Raised when an array violates the image conventions above."""


def check_image(x: np.ndarray, channels: int | None = None) -> np.ndarray:
    if not isinstance(x, np.ndarray) or x.ndim != 3:
        raise ImageContractError(f"expected (C, H, W) array, got {getattr(x, 'shape', type(x))}")
    if channels is not None and x.shape[0] != channels:
        raise ImageContractError(f"expected {channels} channels, got {x.shape[0]}")
    if not np.isfinite(x).all():
        raise ImageContractError("image contains non-finite values")
    return x


def check_mask(m: np.ndarray) -> np.ndarray:
    check_image(m, channels=1)
    vals = np.unique(m)
    if not np.all(np.isin(vals, (-1.0, 1.0))):
        raise ImageContractError(f"mask values must be exactly -1/+1, got {vals[:8]}")
    return m


def mask_to_weights(m: np.ndarray) -> np.ndarray:
    """{-1,+1} mask -> {0,1} float weights (1 where the mask is set)."""
    check_mask(m)
    return (m + 1.0) / 2.0


def weights_to_mask(w: np.ndarray) -> np.ndarray:
    return np.where(w >= 0.5, 1.0, -1.0).astype(np.float32)


def solid(value, height: int, width: int, channels: int = 3) -> np.ndarray:
    out = np.empty((channels, height, width), dtype=np.float32)
    out[:] = np.asarray(value, dtype=np.float32).reshape(-1, 1, 1)
    return out


def all_white_mask(height: int, width: int) -> np.ndarray:
    return solid(1.0, height, width, channels=1)


def all_black_image(height: int, width: int, channels: int = 3) -> np.ndarray:
    return solid(-1.0, height, width, channels=channels)


def to_unit(x: np.ndarray) -> np.ndarray:
    """[-1, 1] -> [0, 1]."""
    return (x + 1.0) / 2.0


def from_unit(x: np.ndarray) -> np.ndarray:
    return x * 2.0 - 1.0


def save_image(path, x: np.ndarray) -> None:
    check_image(x)
    u = np.clip(to_unit(x), 0.0, 1.0)
    u8 = np.round(u * 255.0).astype(np.uint8)
    if x.shape[0] == 1:
        PILImage.fromarray(u8[0], mode="L").save(path)
    else:
        PILImage.fromarray(np.moveaxis(u8, 0, -1), mode="RGB").save(path)


def load_image(path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return from_unit(np.moveaxis(arr, -1, 0)).astype(np.float32)


def save_mask(path, m: np.ndarray) -> None:
    check_mask(m)
    u8 = np.where(m[0] > 0, 255, 0).astype(np.uint8)
    PILImage.fromarray(u8, mode="L").save(path)


def load_mask(path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return np.where(arr > 127, 1.0, -1.0).astype(np.float32)[None]


def save_depth(path, d: np.ndarray) -> None:
    check_image(d, channels=1)
    u8 = np.round(np.clip(d[0], 0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(u8, mode="L").save(path)


def load_depth(path) -> np.ndarray:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    return arr.astype(np.float32)[None]
