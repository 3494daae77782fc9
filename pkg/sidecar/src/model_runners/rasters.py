"""Raster helpers for the mock adapters.

These intentionally re-derive the pipeline's raster conventions from the
file contracts (0/255 single-channel mask PNGs, border-ring mean fill)
rather than importing the consumer package, so the runner stays a
standalone producer.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

BORDER_RING_WIDTH = 4


def clip_box(x: int, y: int, w: int, h: int, image_w: int, image_h: int):
    """Clip a box to the frame; None when nothing remains."""
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + w, image_w), min(y + h, image_h)
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        return None
    return x0, y0, x1 - x0, y1 - y0


def rasterize_box(x: int, y: int, w: int, h: int, image_w: int, image_h: int) -> np.ndarray:
    pixels = np.zeros((image_h, image_w), dtype=bool)
    clipped = clip_box(x, y, w, h, image_w, image_h)
    if clipped is not None:
        cx, cy, cw, ch = clipped
        pixels[cy : cy + ch, cx : cx + cw] = True
    return pixels


def save_mask(pixels: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    raster = np.where(pixels, np.uint8(255), np.uint8(0))
    Image.fromarray(raster, mode="L").save(path, format="PNG")


def load_mask(path: Path) -> np.ndarray:
    with Image.open(path) as image:
        raster = np.asarray(image.convert("L"))
    return raster >= 128


def grow(pixels: np.ndarray, radius: int) -> np.ndarray:
    """Set every pixel within Chebyshev ``radius`` of a set pixel,
    clipped at the border (direct shift-and-OR accumulation)."""
    h, w = pixels.shape
    out = np.zeros_like(pixels)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            ys = slice(max(0, dy), min(h, h + dy))
            xs = slice(max(0, dx), min(w, w + dx))
            src_ys = slice(max(0, -dy), min(h, h - dy))
            src_xs = slice(max(0, -dx), min(w, w - dx))
            out[ys, xs] |= pixels[src_ys, src_xs]
    return out


def ring_mean_fill(image: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Replace the masked region with the mean color of the unmasked ring
    within ``BORDER_RING_WIDTH`` pixels of it; fall back to the mean of
    all unmasked pixels, then to mid-gray."""
    ring = grow(mask, BORDER_RING_WIDTH) & ~mask
    if ring.any():
        fill = image[ring].mean(axis=0, dtype=np.float64)
    elif (~mask).any():
        fill = image[~mask].mean(axis=0, dtype=np.float64)
    else:
        fill = np.full(image.shape[2], 127.0)
    out = image.copy()
    out[mask] = np.rint(fill).astype(np.uint8)
    return out


def load_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as image:
        return np.asarray(image.convert("RGB"))


def save_rgb(pixels: np.ndarray, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(pixels, mode="RGB").save(path, format="PNG")


def crop(image: np.ndarray, x: int, y: int, w: int, h: int) -> np.ndarray:
    clipped = clip_box(x, y, w, h, image.shape[1], image.shape[0])
    if clipped is None:
        return image[0:0, 0:0]
    cx, cy, cw, ch = clipped
    return image[cy : cy + ch, cx : cx + cw]
