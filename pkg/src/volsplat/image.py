"""RGBA image buffers, tone mapping, and file IO.

Pixel data is float64 (height, width, 4), linear RGB premultiplied by alpha.
PNG output is 16-bit RGBA with sRGB-encoded color; float output is raw
little-endian f32 with a JSON sidecar.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import cv2
import numpy as np


@dataclass
class ToneMapSettings:
    """Exposure multiply, Reinhard x/(1+x), then sRGB encode."""

    exposure: float = 1.0
    operator: str = "reinhard-srgb"


@dataclass
class RgbaImage:
    pixels: np.ndarray  # (h, w, 4) float64, premultiplied rgb, alpha in [0, 1]
    tone_mapped: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 4:
            raise ValueError("pixels must be (h, w, 4)")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def rgb(self) -> np.ndarray:
        return self.pixels[..., :3]

    @property
    def alpha(self) -> np.ndarray:
        return self.pixels[..., 3]

    @classmethod
    def zeros(cls, width: int, height: int) -> "RgbaImage":
        return cls(np.zeros((height, width, 4)))


def srgb_encode(linear: np.ndarray) -> np.ndarray:
    linear = np.clip(linear, 0.0, None)
    return np.where(linear <= 0.0031308, 12.92 * linear,
                    1.055 * np.power(linear, 1.0 / 2.4) - 0.055)


def srgb_decode(encoded: np.ndarray) -> np.ndarray:
    encoded = np.clip(encoded, 0.0, 1.0)
    return np.where(encoded <= 0.04045, encoded / 12.92,
                    np.power((encoded + 0.055) / 1.055, 2.4))


def tone_map(image: RgbaImage, settings: ToneMapSettings | None = None) -> RgbaImage:
    """Apply the fixed display transform to a linear image; alpha unchanged."""
    settings = settings or ToneMapSettings()
    if image.tone_mapped:
        raise ValueError("image is already tone mapped")
    rgb = image.rgb * settings.exposure
    rgb = rgb / (1.0 + rgb)
    rgb = srgb_encode(rgb)
    out = np.concatenate([rgb, image.alpha[..., None]], axis=-1)
    meta = dict(image.meta)
    meta["tone_map"] = {"exposure": settings.exposure,
                        "operator": settings.operator}
    return RgbaImage(out, tone_mapped=True, meta=meta)


def write_png(image: RgbaImage, path: str) -> None:
    """16-bit RGBA PNG. Pixels are clipped to [0, 1] and scaled to 65535."""
    arr = np.clip(image.pixels, 0.0, 1.0)
    arr16 = np.round(arr * 65535.0).astype(np.uint16)
    bgra = arr16[..., [2, 1, 0, 3]]
    if not cv2.imwrite(path, bgra):
        raise IOError(f"failed to write {path}")


def read_png(path: str) -> RgbaImage:
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"failed to read {path}")
    if raw.ndim == 2:
        raw = raw[..., None].repeat(4, axis=2)
    if raw.shape[2] == 3:
        alpha = np.full(raw.shape[:2] + (1,), np.iinfo(raw.dtype).max,
                        dtype=raw.dtype)
        raw = np.concatenate([raw, alpha], axis=2)
    scale = 65535.0 if raw.dtype == np.uint16 else 255.0
    rgba = raw[..., [2, 1, 0, 3]].astype(np.float64) / scale
    return RgbaImage(rgba, tone_mapped=True)


def write_float_image(image: RgbaImage, path: str) -> None:
    """Raw little-endian f32 rgba planes plus a .json sidecar."""
    image.pixels.astype("<f4").tofile(path)
    sidecar = {"width": image.width, "height": image.height, "channels": 4,
               "dtype": "f32", "layout": "rgba interleaved, row-major",
               "tone_mapped": image.tone_mapped, "meta": image.meta}
    with open(path + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1)


def read_float_image(path: str) -> RgbaImage:
    with open(path + ".json") as fh:
        sidecar = json.load(fh)
    w, h = sidecar["width"], sidecar["height"]
    data = np.fromfile(path, dtype="<f4").astype(np.float64)
    if data.size != w * h * 4:
        raise IOError(f"{path}: size does not match sidecar dimensions")
    return RgbaImage(data.reshape(h, w, 4),
                     tone_mapped=sidecar.get("tone_mapped", False),
                     meta=sidecar.get("meta", {}))


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Plain PSNR over whole arrays; +inf for identical inputs."""
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)
