"""Equirectangular HDR environment maps with luminance importance sampling.

Mapping: v in [0,1] is the polar angle theta = v*pi measured from +y (world
up), u in [0,1] is the azimuth phi = u*2*pi around +y starting at +x.
Radiance is piecewise constant per texel; draws are uniform within a texel's
exact solid-angle patch, so the returned pdf is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

_LUM = np.array([0.2126, 0.7152, 0.0722])


@dataclass(frozen=True)
class EnvironmentMap:
    rgb: np.ndarray        # (h, w, 3) linear float64
    row_cdf: np.ndarray    # (h,) non-decreasing, ends at 1
    cond_cdf: np.ndarray   # (h, w) per-row conditional CDFs
    cos_edges: np.ndarray  # (h + 1,) cos(theta) at row edges, 1 ... -1
    total_power: float     # integral of luminance over the sphere

    @classmethod
    def from_array(cls, rgb) -> "EnvironmentMap":
        rgb = np.asarray(rgb, dtype=np.float64)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError("environment map must be (h, w, 3)")
        h, w, _ = rgb.shape
        lum = rgb @ _LUM
        theta_edges = np.linspace(0.0, np.pi, h + 1)
        cos_edges = np.cos(theta_edges)
        row_solid = (cos_edges[:-1] - cos_edges[1:]) * (2.0 * np.pi / w)

        weights = lum * row_solid[:, None]
        row_w = weights.sum(axis=1)
        total = float(row_w.sum())
        if total <= 0.0:
            # black map: keep sampling well defined (uniform)
            weights = np.ones_like(weights) * row_solid[:, None]
            row_w = weights.sum(axis=1)
            total_for_cdf = float(row_w.sum())
        else:
            total_for_cdf = total
        row_cdf = np.cumsum(row_w) / total_for_cdf
        row_cdf[-1] = 1.0
        # zero-luminance rows fall back to a uniform conditional
        row_sums = weights.sum(axis=1, keepdims=True)
        safe = np.where(row_sums > 0, weights, 1.0)
        cond = np.cumsum(safe, axis=1)
        cond /= cond[:, -1:]
        cond[:, -1] = 1.0
        return cls(rgb, row_cdf, cond, cos_edges, total)

    @classmethod
    def constant(cls, value, height: int = 8, width: int = 16) -> "EnvironmentMap":
        value = np.broadcast_to(np.asarray(value, dtype=np.float64), (3,))
        return cls.from_array(np.tile(value, (height, width, 1)))

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    def texel_solid_angle(self, row: int) -> float:
        return float((self.cos_edges[row] - self.cos_edges[row + 1])
                     * 2.0 * np.pi / self.width)

    def texel_probability(self, row: int, col: int) -> float:
        """Probability of drawing the given texel."""
        pr = self.row_cdf[row] - (self.row_cdf[row - 1] if row else 0.0)
        pc = self.cond_cdf[row, col] - (self.cond_cdf[row, col - 1] if col else 0.0)
        return float(pr * pc)

    def sample(self, u: np.ndarray):
        """Map four uniforms to (direction, radiance, pdf in solid angle)."""
        row = int(np.searchsorted(self.row_cdf, u[0], side="left"))
        row = min(row, self.height - 1)
        col = int(np.searchsorted(self.cond_cdf[row], u[1], side="left"))
        col = min(col, self.width - 1)

        cos_t = self.cos_edges[row] + (self.cos_edges[row + 1]
                                       - self.cos_edges[row]) * u[2]
        sin_t = np.sqrt(max(0.0, 1.0 - cos_t * cos_t))
        phi = (col + u[3]) * 2.0 * np.pi / self.width
        direction = np.array([sin_t * np.cos(phi), cos_t, sin_t * np.sin(phi)])

        pdf = self.texel_probability(row, col) / self.texel_solid_angle(row)
        return direction, self.rgb[row, col].copy(), float(pdf)

    def lookup(self, direction) -> np.ndarray:
        """Nearest-texel radiance for a unit direction."""
        d = np.asarray(direction, dtype=np.float64)
        theta = np.arccos(np.clip(d[1], -1.0, 1.0))
        phi = np.arctan2(d[2], d[0]) % (2.0 * np.pi)
        row = min(int(theta / np.pi * self.height), self.height - 1)
        col = min(int(phi / (2.0 * np.pi) * self.width), self.width - 1)
        return self.rgb[row, col].copy()

    def integral(self) -> np.ndarray:
        """Exact rgb integral over the sphere (sum of texel rgb * solid angle)."""
        sa = np.array([self.texel_solid_angle(r) for r in range(self.height)])
        return (self.rgb * sa[:, None, None]).sum(axis=(0, 1))

    def tables(self):
        """Flat arrays for jitted kernels."""
        return (np.ascontiguousarray(self.rgb),
                np.ascontiguousarray(self.row_cdf),
                np.ascontiguousarray(self.cond_cdf),
                np.ascontiguousarray(self.cos_edges))


def load_hdr(path: str) -> EnvironmentMap:
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"failed to read {path}")
    rgb = raw[..., [2, 1, 0]].astype(np.float64)
    return EnvironmentMap.from_array(np.clip(rgb, 0.0, None))


def save_hdr(env: EnvironmentMap, path: str) -> None:
    bgr = env.rgb[..., [2, 1, 0]].astype(np.float32)
    if not cv2.imwrite(path, bgr):
        raise IOError(f"failed to write {path}")
