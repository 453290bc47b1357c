"""PNG input/output: images, palette masks, overlays, probability dumps."""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
from PIL import Image

# distinct colors for category ids; shared verbatim with the browser client
PALETTE = [
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 190), (0, 128, 128), (128, 128, 0),
]


def load_image(path) -> np.ndarray:
    """RGB image as (3,H,W) float32 in [0,1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def decode_image(data: bytes) -> np.ndarray:
    return load_image(io.BytesIO(data))


def save_image(arr: np.ndarray, path) -> None:
    """(3,H,W) float in [0,1] -> RGB PNG."""
    u8 = np.clip(np.asarray(arr) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(u8.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")


def _palette_bytes() -> list[int]:
    flat = [v for rgb in PALETTE for v in rgb]
    flat += [0] * (768 - len(flat))
    return flat


def save_mask(mask: np.ndarray, path_or_buf) -> None:
    """Palette-indexed PNG of category ids."""
    mask = np.asarray(mask)
    if mask.min() < 0 or mask.max() > 255:
        raise ValueError("mask ids must fit a palette byte")
    im = Image.fromarray(mask.astype(np.uint8), mode="P")
    im.putpalette(_palette_bytes())
    im.save(path_or_buf, format="PNG")


def mask_png_bytes(mask: np.ndarray) -> bytes:
    buf = io.BytesIO()
    save_mask(mask, buf)
    return buf.getvalue()


def load_mask(path) -> np.ndarray:
    """Palette or grayscale PNG -> (H,W) int32 ids; byte 255 becomes -1 (ignore)."""
    with Image.open(path) as im:
        if im.mode not in ("P", "L"):
            im = im.convert("P", palette=Image.ADAPTIVE)
        arr = np.asarray(im, dtype=np.int32)
    return np.where(arr == 255, -1, arr)


def overlay(image: np.ndarray, mask: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend category colors over the image at fixed alpha; returns (3,H,W) floats."""
    colors = np.asarray(PALETTE, dtype=np.float32) / 255.0
    ids = np.clip(np.asarray(mask), 0, len(PALETTE) - 1)
    color_map = colors[ids].transpose(2, 0, 1)
    return (1.0 - alpha) * np.asarray(image, dtype=np.float32) + alpha * color_map


def overlay_png_bytes(image: np.ndarray, mask: np.ndarray, alpha: float = 0.5) -> bytes:
    buf = io.BytesIO()
    u8 = np.clip(overlay(image, mask, alpha) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    Image.fromarray(u8.transpose(1, 2, 0), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def save_probs(probs: np.ndarray, path, sidecar: dict | None = None) -> None:
    """Raw little-endian f32 planar dump plus a JSON sidecar next to it."""
    path = Path(path)
    arr = np.asarray(probs, dtype="<f4")
    path.write_bytes(arr.tobytes())
    doc = {"shape": list(arr.shape), "dtype": "f32le", "order": "planar"}
    if sidecar:
        doc.update(sidecar)
    path.with_suffix(".json").write_text(json.dumps(doc, indent=2))


def load_probs(path) -> np.ndarray:
    path = Path(path)
    doc = json.loads(path.with_suffix(".json").read_text())
    return np.frombuffer(path.read_bytes(), dtype="<f4").reshape(doc["shape"]).copy()
