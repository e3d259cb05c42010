"""Image helpers: float<->uint8, PNG/PFM files, PSNR, patch (un)packing."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np
from PIL import Image


def to_uint8(img: np.ndarray) -> np.ndarray:
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def from_uint8(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float64) / 255.0


def save_png(path, img: np.ndarray) -> None:
    """img: float [0,1] HxWx3 or HxW, or uint8."""
    arr = img if img.dtype == np.uint8 else to_uint8(img)
    Image.fromarray(arr).save(Path(path), format="PNG")


def load_png(path) -> np.ndarray:
    return from_uint8(np.asarray(Image.open(Path(path))))


def png_bytes(img: np.ndarray) -> bytes:
    arr = img if img.dtype == np.uint8 else to_uint8(img)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def png_decode(data: bytes) -> np.ndarray:
    return from_uint8(np.asarray(Image.open(io.BytesIO(data))))


def save_pfm(path, depth: np.ndarray) -> None:
    """Grayscale PFM, little-endian f32, rows bottom-to-top per the format."""
    d = np.asarray(depth, dtype="<f4")
    if d.ndim != 2:
        raise ValueError(f"PFM depth must be 2-d, got {d.shape}")
    with open(Path(path), "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{d.shape[1]} {d.shape[0]}\n".encode())
        f.write(b"-1.0\n")
        f.write(d[::-1].tobytes())


def load_pfm(path) -> np.ndarray:
    with open(Path(path), "rb") as f:
        if f.readline().strip() != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM")
        w, h = map(int, f.readline().split())
        scale = float(f.readline())
        data = np.frombuffer(f.read(4 * w * h), dtype="<f4" if scale < 0 else ">f4")
        return data.reshape(h, w)[::-1].astype(np.float64)


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


def patchify(img: np.ndarray, patch: int) -> np.ndarray:
    """(H, W, C) -> (H/p * W/p, p*p*C) row-major patch tokens."""
    H, W, C = img.shape
    if H % patch or W % patch:
        raise ValueError(f"image {H}x{W} not divisible by patch {patch}")
    x = img.reshape(H // patch, patch, W // patch, patch, C)
    x = x.transpose(0, 2, 1, 3, 4)
    return x.reshape((H // patch) * (W // patch), patch * patch * C)


def unpatchify(tokens: np.ndarray, patch: int, H: int, W: int, C: int = 3) -> np.ndarray:
    x = tokens.reshape(H // patch, W // patch, patch, patch, C)
    x = x.transpose(0, 2, 1, 3, 4)
    return x.reshape(H, W, C)
