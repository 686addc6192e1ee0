"""Training-camera selection: ellipsoid sweep, then visibility-gain
maximization with Gaussian-process guided candidate search.

The visibility volume lives on the occupancy-block grid: one cell per block,
holding the best transmittance any accepted camera has achieved to that
cell's center. Gain of a candidate camera is the summed positive increase it
would contribute over occupied cells.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange

from .camera import NEAR_PLANE, Camera
from .gp import GaussianProcess
from .tracer.kernels import ray_bbox, sigma_at
from .volume import OccupancyGrid, Preset, VolumeGrid

PHASE1_AXIS_SCALE = 1.3        # ellipsoid semi-axes = 1.3 x bbox axis lengths
PHASE1_RADIUS_RANGE = (0.85, 1.3)
PHASE2_FOV = np.deg2rad(60.0)
ENLARGED_BBOX = 1.5            # candidate positions live in 1.5 x data bbox


class DegenerateSceneError(RuntimeError):
    """No valid candidate pose could be sampled."""


@dataclass
class VisibilityVolume:
    """Best-seen transmittance per occupancy block; non-occupied cells stay 0."""

    values: np.ndarray       # (bz, by, bx) float64 in [0, 1]
    occupied: np.ndarray     # (bz, by, bx) bool

    @classmethod
    def zeros(cls, occ: OccupancyGrid) -> "VisibilityVolume":
        return cls(np.zeros(occ.flags.shape), occ.flags.astype(bool))

    def commit(self, transmittance: np.ndarray) -> None:
        np.maximum(self.values, np.where(self.occupied, transmittance, 0.0),
                   out=self.values)

    def coverage(self, threshold: float) -> float:
        n_occ = int(self.occupied.sum())
        if n_occ == 0:
            return 0.0
        return float((self.values[self.occupied] > threshold).sum() / n_occ)


@dataclass
class BOState:
    thetas: list = field(default_factory=list)   # 6-vectors in [0, 1]
    gains: list = field(default_factory=list)
    kappa: float = 10.0
    candidates_per_iter: int = 128
    eval_budget: int = 8
    lengthscale: float = 0.2
    noise: float = 1e-6


@njit(cache=True, parallel=True)
def _transmittance_kernel(values, occupied, cell_size, grid_lo, grid_hi,
                          cam_pos, cam_r, tan_h, tan_v,
                          data, nx, ny, nz, ox, oy, oz, sx, sy, sz,
                          tf_pos, tf_sig, planes):
    bz, by, bx = occupied.shape
    step = min(cell_size[0], min(cell_size[1], cell_size[2]))
    total = bz * by * bx
    for flat in prange(total):
        k = flat // (by * bx)
        rem = flat - k * (by * bx)
        j = rem // bx
        i = rem - j * bx
        if occupied[k, j, i] == 0:
            values[k, j, i] = 0.0
            continue
        cx = grid_lo[0] + (i + 0.5) * cell_size[0]
        cy = grid_lo[1] + (j + 0.5) * cell_size[1]
        cz = grid_lo[2] + (k + 0.5) * cell_size[2]
        # camera-space frustum test
        rx = cx - cam_pos[0]
        ry = cy - cam_pos[1]
        rz = cz - cam_pos[2]
        zc = cam_r[2, 0] * rx + cam_r[2, 1] * ry + cam_r[2, 2] * rz
        if zc <= NEAR_PLANE:
            values[k, j, i] = 0.0
            continue
        xc = cam_r[0, 0] * rx + cam_r[0, 1] * ry + cam_r[0, 2] * rz
        yc = cam_r[1, 0] * rx + cam_r[1, 1] * ry + cam_r[1, 2] * rz
        if abs(xc) > tan_h * zc or abs(yc) > tan_v * zc:
            values[k, j, i] = 0.0
            continue
        dist = np.sqrt(rx * rx + ry * ry + rz * rz)
        inv = 1.0 / dist
        dx = rx * inv
        dy = ry * inv
        dz = rz * inv
        # only the segment inside the volume carries material
        t0, t1 = ray_bbox(cam_pos[0], cam_pos[1], cam_pos[2], dx, dy, dz,
                          grid_lo[0], grid_lo[1], grid_lo[2],
                          grid_hi[0], grid_hi[1], grid_hi[2])
        t0 = max(t0, 0.0)
        t1 = min(t1, dist)
        if t1 <= t0:
            values[k, j, i] = 1.0
            continue
        n_steps = int(np.ceil((t1 - t0) / step))
        dt = (t1 - t0) / n_steps
        tau = 0.0
        for s in range(n_steps):
            t = t0 + (s + 0.5) * dt
            tau += dt * sigma_at(data, nx, ny, nz, ox, oy, oz, sx, sy, sz,
                                 tf_pos, tf_sig, planes,
                                 cam_pos[0] + t * dx, cam_pos[1] + t * dy,
                                 cam_pos[2] + t * dz)
            if tau > 30.0:
                break
        values[k, j, i] = np.exp(-tau)


def transmittance_to_voxels(volume: VolumeGrid, preset: Preset,
                            occ: OccupancyGrid, cam: Camera,
                            vis: VisibilityVolume) -> np.ndarray:
    """Per-cell transmittance from the camera to occupied cell centers.

    Cells outside the frustum (or behind the camera) get 0: the camera
    contributes nothing to them.
    """
    lo, hi = volume.bbox
    cell = np.array([occ.block_size * s for s in volume.spacing])
    out = np.zeros(vis.values.shape)
    tf_pos, tf_col, tf_sig, planes = preset.tables()
    m = cam.view_matrix()
    tan_v = np.tan(cam.vertical_fov / 2.0)
    tan_h = tan_v * cam.width / cam.height
    _transmittance_kernel(
        out, vis.occupied.astype(np.uint8), cell, np.asarray(lo),
        np.asarray(hi),
        np.asarray(cam.position, dtype=np.float64),
        np.ascontiguousarray(m[:3, :3]), tan_h, tan_v,
        volume.data, volume.dims[0], volume.dims[1], volume.dims[2],
        volume.origin[0], volume.origin[1], volume.origin[2],
        volume.spacing[0], volume.spacing[1], volume.spacing[2],
        tf_pos, tf_sig, planes)
    return out


def visibility_gain(transmittance: np.ndarray, vis: VisibilityVolume) -> float:
    """Summed positive visibility increase; does not mutate vis."""
    if transmittance.shape != vis.values.shape:
        raise ValueError("shape mismatch")
    delta = transmittance - vis.values
    return float(np.sum(np.maximum(delta, 0.0)[vis.occupied]))


def _fov_for_containment(pos, center, half_extents) -> float:
    r_sphere = float(np.linalg.norm(half_extents))
    dist = float(np.linalg.norm(np.asarray(pos) - np.asarray(center)))
    half = np.arcsin(min(r_sphere / max(dist, r_sphere + 1e-9), 0.999))
    return float(np.clip(2.2 * half, 0.3, 3.0))


def phase1_ellipsoid(volume: VolumeGrid, preset: Preset, occ: OccupancyGrid,
                     vis: VisibilityVolume, n: int, seed: int,
                     resolution: int = 256) -> list[Camera]:
    """Fibonacci-sphere cameras on the containing ellipsoid, looking at the
    center, each committed to the visibility volume as it is accepted."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = volume.bbox
    center = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    semi_axes = PHASE1_AXIS_SCALE * (hi - lo)  # contains the data bbox

    golden = np.pi * (3.0 - np.sqrt(5.0))
    cams = []
    for i in range(n):
        z = 1.0 - 2.0 * (i + 0.5) / n
        r = np.sqrt(max(1.0 - z * z, 0.0))
        azim = golden * i
        unit = np.array([r * np.cos(azim), r * np.sin(azim), z])
        radius = rng.uniform(*PHASE1_RADIUS_RANGE)
        pos = center + unit * semi_axes * radius
        fov = _fov_for_containment(pos, center, half)
        cam = Camera(tuple(pos), tuple(center), (0.0, 1.0, 0.0), fov,
                     resolution, resolution)
        vis.commit(transmittance_to_voxels(volume, preset, occ, cam, vis))
        cams.append(cam)
    return cams


def _decode_pose(theta: np.ndarray, lo, hi, resolution: int) -> Camera | None:
    center = 0.5 * (lo + hi)
    span = hi - lo
    pos = center + (theta[:3] - 0.5) * span * ENLARGED_BBOX
    look = lo + theta[3:] * span
    if np.linalg.norm(pos - look) < 1e-6:
        return None
    return Camera(tuple(pos), tuple(look), (0.0, 1.0, 0.0), PHASE2_FOV,
                  resolution, resolution)


def _pose_valid(cam: Camera, volume: VolumeGrid, occ: OccupancyGrid) -> bool:
    lo, hi = volume.bbox
    if not cam.frustum_intersects_bbox(lo, hi):
        return False
    # reject camera positions inside material (coarse occupancy test)
    p = np.asarray(cam.position)
    if np.all(p >= lo) and np.all(p <= hi):
        cell = np.array([occ.block_size * s for s in volume.spacing])
        idx = np.floor((p - lo) / cell).astype(int)
        idx = np.minimum(np.maximum(idx, 0),
                         np.array(occ.flags.shape)[::-1] - 1)
        if occ.flags[idx[2], idx[1], idx[0]]:
            return False
    return True


def phase2_propose(state: BOState, vis: VisibilityVolume, volume: VolumeGrid,
                   preset: Preset, occ: OccupancyGrid,
                   rng: np.random.Generator,
                   resolution: int = 256) -> tuple[Camera, float]:
    """One optimization step: sample candidates, rank by UCB, evaluate the
    top few true gains, commit the best camera."""
    lo, hi = volume.bbox
    k = state.candidates_per_iter
    thetas = []
    cams = []
    attempts = 0
    while len(cams) < k:
        attempts += 1
        if attempts > 10 * k:
            raise DegenerateSceneError(
                "could not sample a valid candidate pose")
        theta = rng.random(6)
        cam = _decode_pose(theta, lo, hi, resolution)
        if cam is None or not _pose_valid(cam, volume, occ):
            continue
        thetas.append(theta)
        cams.append(cam)
    thetas = np.asarray(thetas)

    if state.thetas:
        gp = GaussianProcess(state.lengthscale, state.noise)
        gp.fit(np.asarray(state.thetas), np.asarray(state.gains))
        scores = gp.ucb(thetas, state.kappa)
    else:
        scores = np.zeros(k)  # no prior: plain random search
    top = np.argsort(-scores, kind="stable")[:state.eval_budget]

    best_gain = -1.0
    best_idx = -1
    best_field = None
    for idx in top:
        field_t = transmittance_to_voxels(volume, preset, occ, cams[idx], vis)
        gain = visibility_gain(field_t, vis)
        state.thetas.append(thetas[idx])
        state.gains.append(gain)
        if gain > best_gain:
            best_gain = gain
            best_idx = idx
            best_field = field_t
    vis.commit(best_field)
    return cams[best_idx], best_gain


@dataclass
class ViewSelectConfig:
    n_phase1: int = 64
    n_phase2: int = 35
    seed: int = 0
    resolution: int = 256
    kappa: float = 10.0
    candidates_per_iter: int = 128
    eval_budget: int = 8


def select_views(volume: VolumeGrid, preset: Preset, cfg: ViewSelectConfig,
                 occ: OccupancyGrid | None = None):
    """Full camera-set selection.

    Returns (cameras, vis, report): the report carries coverage fractions of
    occupied cells above visibility 0.1 and 0.5.
    """
    from .volume import build_occupancy
    if occ is None:
        occ = build_occupancy(volume, preset)
    vis = VisibilityVolume.zeros(occ)
    cams = phase1_ellipsoid(volume, preset, occ, vis, cfg.n_phase1, cfg.seed,
                            cfg.resolution)
    state = BOState(kappa=cfg.kappa,
                    candidates_per_iter=cfg.candidates_per_iter,
                    eval_budget=cfg.eval_budget)
    rng = np.random.default_rng(cfg.seed + 1)
    for _ in range(cfg.n_phase2):
        cam, _ = phase2_propose(state, vis, volume, preset, occ, rng,
                                cfg.resolution)
        cams.append(cam)
    report = {
        "n_cameras": len(cams),
        "n_phase1": cfg.n_phase1,
        "n_phase2": cfg.n_phase2,
        "occupied_cells": int(vis.occupied.sum()),
        "coverage_0.1": vis.coverage(0.1),
        "coverage_0.5": vis.coverage(0.5),
    }
    return cams, vis, report


def save_coverage_report(report: dict, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1)
        fh.write("\n")
