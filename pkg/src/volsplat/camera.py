"""Pinhole cameras: pose, projection, rays, frustum tests, and list IO.

Camera space is right-handed with x right, y down, z forward, so projected
pixel coordinates grow left-to-right and top-to-bottom. Pixel (i, j) is
sampled at (i + 0.5, j + 0.5).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

NEAR_PLANE = 0.01


@dataclass(frozen=True)
class Camera:
    position: tuple[float, float, float]
    look_at: tuple[float, float, float]
    up: tuple[float, float, float]
    vertical_fov: float  # radians
    width: int
    height: int

    def __post_init__(self):
        if np.allclose(self.position, self.look_at):
            raise ValueError("camera position must differ from look_at")
        if not 0.0 < self.vertical_fov < np.pi:
            raise ValueError("vertical_fov must lie in (0, pi)")

    @property
    def focal(self) -> float:
        """Focal length in pixels (square pixels, fx == fy)."""
        return self.height / (2.0 * np.tan(self.vertical_fov / 2.0))

    def view_matrix(self) -> np.ndarray:
        """4x4 rigid world-to-camera transform."""
        pos = np.asarray(self.position, dtype=np.float64)
        fwd = np.asarray(self.look_at, dtype=np.float64) - pos
        fwd = fwd / np.linalg.norm(fwd)
        up = np.asarray(self.up, dtype=np.float64)
        right = np.cross(fwd, up)
        nr = np.linalg.norm(right)
        if nr < 1e-9:
            # forward parallel to up; pick any perpendicular axis
            alt = np.array([1.0, 0.0, 0.0]) if abs(fwd[0]) < 0.9 \
                else np.array([0.0, 1.0, 0.0])
            right = np.cross(fwd, alt)
            nr = np.linalg.norm(right)
        right = right / nr
        down = np.cross(fwd, right)
        m = np.eye(4)
        m[0, :3], m[1, :3], m[2, :3] = right, down, fwd
        m[:3, 3] = -m[:3, :3] @ pos
        return m

    def project(self, points):
        """World points -> (pixel xy, camera-space depth).

        Points behind the camera keep their (negative) depth; callers cull.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        m = self.view_matrix()
        cam = pts @ m[:3, :3].T + m[:3, 3]
        z = cam[:, 2]
        f = self.focal
        with np.errstate(divide="ignore", invalid="ignore"):
            px = f * cam[:, 0] / z + self.width / 2.0
            py = f * cam[:, 1] / z + self.height / 2.0
        return np.stack([px, py], axis=-1), z

    def ray_directions(self) -> np.ndarray:
        """(height, width, 3) unit world-space directions through pixel centers."""
        f = self.focal
        xs = (np.arange(self.width) + 0.5 - self.width / 2.0) / f
        ys = (np.arange(self.height) + 0.5 - self.height / 2.0) / f
        gx, gy = np.meshgrid(xs, ys)
        d_cam = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
        d_cam /= np.linalg.norm(d_cam, axis=-1, keepdims=True)
        r = self.view_matrix()[:3, :3]
        return d_cam @ r  # rows of r are camera axes, so this is r.T applied

    def in_frustum(self, points, aspect: float | None = None) -> np.ndarray:
        """True where a world point lies inside the (near-clipped) frustum."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        m = self.view_matrix()
        cam = pts @ m[:3, :3].T + m[:3, 3]
        if aspect is None:
            aspect = self.width / self.height
        tan_v = np.tan(self.vertical_fov / 2.0)
        tan_h = tan_v * aspect
        z = cam[:, 2]
        ok = z > NEAR_PLANE
        with np.errstate(divide="ignore", invalid="ignore"):
            ok &= np.abs(cam[:, 0]) <= tan_h * z
            ok &= np.abs(cam[:, 1]) <= tan_v * z
        return ok

    def frustum_contains_bbox(self, lo, hi) -> bool:
        """All 8 bbox corners inside the frustum."""
        corners = _bbox_corners(lo, hi)
        return bool(np.all(self.in_frustum(corners)))

    def frustum_intersects_bbox(self, lo, hi) -> bool:
        """Conservative frustum/bbox overlap: bbox not fully outside any plane."""
        corners = _bbox_corners(lo, hi)
        m = self.view_matrix()
        cam = corners @ m[:3, :3].T + m[:3, 3]
        tan_v = np.tan(self.vertical_fov / 2.0)
        tan_h = tan_v * self.width / self.height
        z = cam[:, 2]
        # each test: all corners on the outside of one plane -> disjoint
        if np.all(z <= NEAR_PLANE):
            return False
        if np.all(cam[:, 0] > tan_h * z) or np.all(cam[:, 0] < -tan_h * z):
            return False
        if np.all(cam[:, 1] > tan_v * z) or np.all(cam[:, 1] < -tan_v * z):
            return False
        return True


def _bbox_corners(lo, hi) -> np.ndarray:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    corners = np.array([[lo[0], lo[1], lo[2]], [hi[0], lo[1], lo[2]],
                        [lo[0], hi[1], lo[2]], [hi[0], hi[1], lo[2]],
                        [lo[0], lo[1], hi[2]], [hi[0], lo[1], hi[2]],
                        [lo[0], hi[1], hi[2]], [hi[0], hi[1], hi[2]]])
    return corners


def save_cameras(cameras, path: str) -> None:
    doc = [{"position": list(map(float, c.position)),
            "look_at": list(map(float, c.look_at)),
            "up": list(map(float, c.up)),
            "vertical_fov": float(c.vertical_fov),
            "width": c.width, "height": c.height} for c in cameras]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_cameras(path: str) -> list[Camera]:
    with open(path) as fh:
        doc = json.load(fh)
    return [Camera(tuple(c["position"]), tuple(c["look_at"]), tuple(c["up"]),
                   float(c["vertical_fov"]), int(c["width"]), int(c["height"]))
            for c in doc]
