"""3D low-pass smoothing: cap Gaussian frequency by the training sampling rate."""

from __future__ import annotations

import numpy as np

from .project import SMOOTH_3D_SCALE
from .scene import SplatScene, quat_to_matrix


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """(n, 3, 3) rotation matrices -> (n, 4) unit quaternions (w, x, y, z)."""
    n = m.shape[0]
    q = np.empty((n, 4))
    tr = m[:, 0, 0] + m[:, 1, 1] + m[:, 2, 2]
    for i in range(n):
        t = tr[i]
        a = m[i]
        if t > 0:
            s = np.sqrt(t + 1.0) * 2
            q[i] = [0.25 * s, (a[2, 1] - a[1, 2]) / s,
                    (a[0, 2] - a[2, 0]) / s, (a[1, 0] - a[0, 1]) / s]
        elif a[0, 0] > a[1, 1] and a[0, 0] > a[2, 2]:
            s = np.sqrt(1.0 + a[0, 0] - a[1, 1] - a[2, 2]) * 2
            q[i] = [(a[2, 1] - a[1, 2]) / s, 0.25 * s,
                    (a[0, 1] + a[1, 0]) / s, (a[0, 2] + a[2, 0]) / s]
        elif a[1, 1] > a[2, 2]:
            s = np.sqrt(1.0 + a[1, 1] - a[0, 0] - a[2, 2]) * 2
            q[i] = [(a[0, 2] - a[2, 0]) / s, (a[0, 1] + a[1, 0]) / s,
                    0.25 * s, (a[1, 2] + a[2, 1]) / s]
        else:
            s = np.sqrt(1.0 + a[2, 2] - a[0, 0] - a[1, 1]) * 2
            q[i] = [(a[1, 0] - a[0, 1]) / s, (a[0, 2] + a[2, 0]) / s,
                    (a[1, 2] + a[2, 1]) / s, 0.25 * s]
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def max_sampling_rate(scene: SplatScene, cameras) -> np.ndarray:
    """Per-Gaussian nu: the highest focal/depth over cameras that see it.

    Gaussians outside every frustum fall back to the scene-wide maximum.
    """
    n = scene.count
    nu = np.zeros(n)
    for cam in cameras:
        m = cam.view_matrix()
        t = scene.positions @ m[:3, :3].T + m[:3, 3]
        inside = cam.in_frustum(scene.positions)
        rate = np.where(inside, cam.focal / np.maximum(t[:, 2], 1e-9), 0.0)
        nu = np.maximum(nu, rate)
    if nu.max() <= 0:
        raise ValueError("no Gaussian is visible from any camera")
    nu[nu == 0] = nu.max()
    return nu


def smooth3d(scene: SplatScene, cameras) -> SplatScene:
    """Fold the per-Gaussian low-pass variance into rotation + log scales.

    Idempotent: a scene already carrying the `smoothed` flag is returned
    unchanged.
    """
    if scene.smoothed:
        return scene
    if not cameras:
        raise ValueError("need at least one training camera")
    nu = max_sampling_rate(scene, cameras)
    var = (SMOOTH_3D_SCALE / nu) ** 2

    cov = scene.covariances() + var[:, None, None] * np.eye(3)
    eigval, eigvec = np.linalg.eigh(cov)
    # keep the eigenbasis right-handed so it maps to a proper rotation
    flip = np.linalg.det(eigvec) < 0
    eigvec[flip, :, 2] *= -1.0
    out = scene.copy()
    out.log_scales = 0.5 * np.log(np.maximum(eigval, 1e-300))
    out.rotations = matrix_to_quat(eigvec)
    out.smoothed = True
    out.meta = dict(scene.meta, smoothing_nu_max=float(nu.max()))
    return out
