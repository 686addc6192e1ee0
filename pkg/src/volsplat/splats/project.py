"""Perspective projection of 3D Gaussians to screen-space splats.

The 2D covariance is J W Sigma W^T J^T with J the affine perspective
Jacobian at the camera-space mean. Footprint and blending constants live
here so the rasterizer, its brute-force oracle, and the viewer agree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..camera import NEAR_PLANE, Camera
from . import sh as shmod
from .scene import SplatScene, quat_to_matrix

DILATION_2D = 0.3          # classic screen-space dilation (mip off), px^2
MIP_FILTER_VAR = 0.1 ** 2  # 2D mip filter variance (mip on), px^2
SMOOTH_3D_SCALE = 0.2      # 3D low-pass: added std is SMOOTH_3D_SCALE / nu
FOOTPRINT_SIGMA = 3.0      # splats extend this many sigmas on screen
ALPHA_FLOOR = 1.0 / 255.0  # contributions below this are skipped
EXIT_TRANSMITTANCE = 1e-4  # early blending exit


@dataclass(frozen=True)
class ProjectedSplat:
    mean2d: np.ndarray   # pixel coordinates
    cov2d: np.ndarray    # 2x2, after dilation / mip filtering
    depth: float         # camera-space z
    color: np.ndarray    # evaluated SH color
    alpha: float         # opacity after mip compensation
    radius: float        # footprint half-extent in pixels


def project_batch(scene: SplatScene, cam: Camera, mip: bool):
    """Screen-space quantities for every Gaussian (vectorized).

    Returns a dict of arrays; `valid` marks splats in front of the near plane
    whose footprint touches the image.
    """
    n = scene.count
    m = cam.view_matrix()
    r = m[:3, :3]
    f = cam.focal
    cx, cy = cam.width / 2.0, cam.height / 2.0

    t = scene.positions @ r.T + m[:3, 3]
    tz = t[:, 2]
    in_front = tz > NEAR_PLANE
    tz_safe = np.where(in_front, tz, 1.0)

    mean2d = np.empty((n, 2))
    mean2d[:, 0] = f * t[:, 0] / tz_safe + cx
    mean2d[:, 1] = f * t[:, 1] / tz_safe + cy

    rot = quat_to_matrix(scene.unit_rotations())
    a = rot * np.exp(scene.log_scales)[:, None, :]
    sigma = a @ np.transpose(a, (0, 2, 1))

    j = np.zeros((n, 2, 3))
    j[:, 0, 0] = f / tz_safe
    j[:, 0, 2] = -f * t[:, 0] / tz_safe ** 2
    j[:, 1, 1] = f / tz_safe
    j[:, 1, 2] = -f * t[:, 1] / tz_safe ** 2
    t2 = j @ r
    cov_raw = t2 @ sigma @ np.transpose(t2, (0, 2, 1))

    if mip:
        cov = cov_raw + MIP_FILTER_VAR * np.eye(2)
        det_raw = np.linalg.det(cov_raw)
        det_f = np.linalg.det(cov)
        comp = np.sqrt(np.maximum(det_raw, 0.0) / np.maximum(det_f, 1e-300))
    else:
        cov = cov_raw + DILATION_2D * np.eye(2)
        comp = np.ones(n)

    det = cov[:, 0, 0] * cov[:, 1, 1] - cov[:, 0, 1] ** 2
    ok_det = det > 0
    det_safe = np.where(ok_det, det, 1.0)
    conic = np.empty((n, 3))
    conic[:, 0] = cov[:, 1, 1] / det_safe
    conic[:, 1] = -cov[:, 0, 1] / det_safe
    conic[:, 2] = cov[:, 0, 0] / det_safe

    mid = 0.5 * (cov[:, 0, 0] + cov[:, 1, 1])
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = FOOTPRINT_SIGMA * np.sqrt(np.maximum(lam_max, 0.0))

    on_image = ((mean2d[:, 0] + radius > 0) & (mean2d[:, 0] - radius < cam.width)
                & (mean2d[:, 1] + radius > 0)
                & (mean2d[:, 1] - radius < cam.height))
    valid = in_front & ok_det & on_image

    cam_pos = np.asarray(cam.position)
    delta = scene.positions - cam_pos
    dist = np.linalg.norm(delta, axis=1, keepdims=True)
    dirs = delta / np.maximum(dist, 1e-12)
    color, clamped = shmod.eval_sh(scene.sh, dirs, scene.sh_degree)
    alpha = scene.opacities() * comp

    return {
        "valid": valid, "depth": tz, "t_cam": t, "mean2d": mean2d,
        "cov_raw": cov_raw, "cov": cov, "conic": conic, "comp": comp,
        "radius": radius, "color": color, "clamped": clamped, "alpha": alpha,
        "dirs": dirs, "dist": dist[:, 0], "rot": rot, "sigma": sigma, "j": j,
        "t2": t2, "view_r": r, "focal": f,
    }


def project(gaussian, cam: Camera, mip: bool = False) -> ProjectedSplat | None:
    """Project one Gaussian; None when behind the near plane or off screen."""
    scene = SplatScene.from_gaussians([gaussian],
                                      int(np.sqrt(gaussian.sh.shape[0])) - 1)
    batch = project_batch(scene, cam, mip)
    if not batch["valid"][0]:
        return None
    return ProjectedSplat(batch["mean2d"][0], batch["cov"][0],
                          float(batch["depth"][0]), batch["color"][0],
                          float(batch["alpha"][0]), float(batch["radius"][0]))
