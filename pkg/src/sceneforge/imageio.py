"""On-disk image and array formats.

Frames are 8-bit RGB PNG; instance masks are 8-bit paletted PNG whose pixel
values are the instance ids; index passes are 16-bit grayscale PNG; depth
maps are float32 ``.npy`` (self-describing shape/dtype header). Float images
live in [0, 1] and quantize with round-to-nearest.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def img_to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def u8_to_img(u8: np.ndarray) -> np.ndarray:
    return (u8.astype(np.float32)) / 255.0


def save_frame_png(path, img: np.ndarray) -> None:
    """img: (H, W, 3) float in [0,1] or uint8."""
    arr = img if img.dtype == np.uint8 else img_to_u8(img)
    Image.fromarray(arr, mode="RGB").save(path)


def load_frame_png(path) -> np.ndarray:
    """Returns (H, W, 3) float32 in [0,1]."""
    return u8_to_img(np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8))


def _id_palette() -> list[int]:
    # Deterministic bright palette so mask files are inspectable by eye;
    # pixel VALUES (not colors) carry the instance ids.
    rng = np.random.default_rng(7)
    pal = rng.integers(40, 255, size=(256, 3), dtype=np.uint8)
    pal[0] = 0
    return [int(x) for x in pal.reshape(-1)]


def save_mask_png(path, ids: np.ndarray) -> None:
    """ids: (H, W) integer instance ids in [0, 255]."""
    arr = np.asarray(ids)
    if arr.max(initial=0) > 255 or arr.min(initial=0) < 0:
        raise ValueError("mask ids must fit in uint8")
    img = Image.fromarray(arr.astype(np.uint8), mode="P")
    img.putpalette(_id_palette())
    img.save(path)


def load_mask_png(path) -> np.ndarray:
    img = Image.open(path)
    if img.mode != "P":
        img = img.convert("P")
    return np.asarray(img, dtype=np.int32)


def save_index_png(path, index: np.ndarray) -> None:
    """index: (H, W) integer instance ids in [0, 65535]."""
    arr = np.asarray(index)
    if arr.max(initial=0) > 65535 or arr.min(initial=0) < 0:
        raise ValueError("index ids must fit in uint16")
    Image.fromarray(arr.astype(np.uint16)).save(path)


def load_index_png(path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.int32)


def save_depth(path, depth: np.ndarray) -> None:
    np.save(path, np.asarray(depth, dtype=np.float32), allow_pickle=False)


def load_depth(path) -> np.ndarray:
    return np.load(path, allow_pickle=False)


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
