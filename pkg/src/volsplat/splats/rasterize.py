"""Tile rasterizer: frustum cull, global depth sort, 16x16 binning, blending.

Forward and backward share identical traversal rules (footprint rectangle,
alpha floor, early exit) so analytic gradients match the rendered image.
Parallel work is partitioned by tile (forward) and tile row (backward) with
fixed reduction order, so results do not depend on thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from ..camera import Camera
from ..image import RgbaImage
from . import sh as shmod
from .project import (ALPHA_FLOOR, DILATION_2D, EXIT_TRANSMITTANCE,
                      MIP_FILTER_VAR, project_batch)
from .scene import SplatScene

TILE = 16


@njit(cache=True)
def _bin_counts(mean2d, radius, width, height, ntx, nty, counts):
    n = mean2d.shape[0]
    total = 0
    for i in range(n):
        tx0, tx1, ty0, ty1 = _tile_rect(mean2d[i, 0], mean2d[i, 1], radius[i],
                                        width, height, ntx, nty)
        c = (tx1 - tx0) * (ty1 - ty0)
        counts[i] = c
        total += c
    return total


@njit(cache=True, inline="always")
def _tile_rect(mx, my, r, width, height, ntx, nty):
    # pixels px with |px + 0.5 - mx| <= r live in these tiles
    tx0 = int(np.floor((mx - r - 0.5) / TILE))
    tx1 = int(np.floor((mx + r - 0.5) / TILE)) + 1
    ty0 = int(np.floor((my - r - 0.5) / TILE))
    ty1 = int(np.floor((my + r - 0.5) / TILE)) + 1
    tx0 = min(max(tx0, 0), ntx)
    tx1 = min(max(tx1, 0), ntx)
    ty0 = min(max(ty0, 0), nty)
    ty1 = min(max(ty1, 0), nty)
    if tx1 < tx0:
        tx1 = tx0
    if ty1 < ty0:
        ty1 = ty0
    return tx0, tx1, ty0, ty1


@njit(cache=True)
def _bin_fill(mean2d, radius, width, height, ntx, nty, offsets,
              tile_ids, entry_ids):
    n = mean2d.shape[0]
    for i in range(n):
        o = offsets[i]
        tx0, tx1, ty0, ty1 = _tile_rect(mean2d[i, 0], mean2d[i, 1], radius[i],
                                        width, height, ntx, nty)
        for ty in range(ty0, ty1):
            for tx in range(tx0, tx1):
                tile_ids[o] = ty * ntx + tx
                entry_ids[o] = i
                o += 1


@njit(cache=True, parallel=True)
def _blend_forward(width, height, ntx, nty, ranges, entries,
                   mean2d, conic, color, alpha, radius):
    out = np.zeros((height, width, 4))
    final_t = np.ones((height, width))
    n_tiles = ntx * nty
    for tile in prange(n_tiles):
        ty = tile // ntx
        tx = tile - ty * ntx
        y0 = ty * TILE
        x0 = tx * TILE
        y1 = min(y0 + TILE, height)
        x1 = min(x0 + TILE, width)
        lo = ranges[tile, 0]
        hi = ranges[tile, 1]
        for py in range(y0, y1):
            for px in range(x0, x1):
                t = 1.0
                cr = 0.0
                cg = 0.0
                cb = 0.0
                for e in range(lo, hi):
                    i = entries[e]
                    dx = px + 0.5 - mean2d[i, 0]
                    dy = py + 0.5 - mean2d[i, 1]
                    r = radius[i]
                    if dx > r or dx < -r or dy > r or dy < -r:
                        continue
                    power = -0.5 * (conic[i, 0] * dx * dx
                                    + conic[i, 2] * dy * dy) \
                        - conic[i, 1] * dx * dy
                    if power > 0.0:
                        continue
                    a = alpha[i] * np.exp(power)
                    if a < ALPHA_FLOOR:
                        continue
                    cr += color[i, 0] * a * t
                    cg += color[i, 1] * a * t
                    cb += color[i, 2] * a * t
                    t *= 1.0 - a
                    if t < EXIT_TRANSMITTANCE:
                        break
                out[py, px, 0] = cr
                out[py, px, 1] = cg
                out[py, px, 2] = cb
                out[py, px, 3] = 1.0 - t
                final_t[py, px] = t
    return out, final_t


@njit(cache=True, parallel=True)
def _blend_backward(width, height, ntx, nty, ranges, entries,
                    mean2d, conic, color, alpha, radius,
                    out_img, final_t, dimg):
    """Replays blending; returns per-tile-row gradient buffers (fixed order).

    Buffer layout per active splat: [dmx, dmy, dc0, dc1, dc2, dr, dg, db, da].
    """
    na = mean2d.shape[0]
    bufs = np.zeros((nty, na, 9))
    for ty in prange(nty):
        buf = bufs[ty]
        for tx in range(ntx):
            tile = ty * ntx + tx
            y0 = ty * TILE
            x0 = tx * TILE
            y1 = min(y0 + TILE, height)
            x1 = min(x0 + TILE, width)
            lo = ranges[tile, 0]
            hi = ranges[tile, 1]
            for py in range(y0, y1):
                for px in range(x0, x1):
                    dlr = dimg[py, px, 0]
                    dlg = dimg[py, px, 1]
                    dlb = dimg[py, px, 2]
                    dla = dimg[py, px, 3]
                    if dlr == 0.0 and dlg == 0.0 and dlb == 0.0 \
                            and dla == 0.0:
                        continue
                    t_end = final_t[py, px]
                    tot_r = out_img[py, px, 0]
                    tot_g = out_img[py, px, 1]
                    tot_b = out_img[py, px, 2]
                    t = 1.0
                    pr = 0.0
                    pg = 0.0
                    pb = 0.0
                    for e in range(lo, hi):
                        i = entries[e]
                        dx = px + 0.5 - mean2d[i, 0]
                        dy = py + 0.5 - mean2d[i, 1]
                        r = radius[i]
                        if dx > r or dx < -r or dy > r or dy < -r:
                            continue
                        power = -0.5 * (conic[i, 0] * dx * dx
                                        + conic[i, 2] * dy * dy) \
                            - conic[i, 1] * dx * dy
                        if power > 0.0:
                            continue
                        g = np.exp(power)
                        a = alpha[i] * g
                        if a < ALPHA_FLOOR:
                            continue
                        one_m = 1.0 - a
                        pr += color[i, 0] * a * t
                        pg += color[i, 1] * a * t
                        pb += color[i, 2] * a * t
                        # d(out)/d(alpha_i'): own term minus suffix rescale,
                        # plus the alpha-channel path through final T
                        da_acc = (dlr * (color[i, 0] * t - (tot_r - pr) / one_m)
                                  + dlg * (color[i, 1] * t - (tot_g - pg) / one_m)
                                  + dlb * (color[i, 2] * t - (tot_b - pb) / one_m)
                                  + dla * (t_end / one_m))
                        buf[i, 5] += dlr * a * t
                        buf[i, 6] += dlg * a * t
                        buf[i, 7] += dlb * a * t
                        buf[i, 8] += da_acc * g
                        dpow = da_acc * alpha[i] * g
                        gx = conic[i, 0] * dx + conic[i, 1] * dy
                        gy = conic[i, 1] * dx + conic[i, 2] * dy
                        buf[i, 0] += dpow * gx
                        buf[i, 1] += dpow * gy
                        buf[i, 2] += dpow * (-0.5 * dx * dx)
                        buf[i, 3] += dpow * (-dx * dy)
                        buf[i, 4] += dpow * (-0.5 * dy * dy)
                        t *= one_m
                        if t < EXIT_TRANSMITTANCE:
                            break
    return bufs


@dataclass
class RasterCache:
    """Everything the backward pass needs to replay the forward blend."""

    scene: SplatScene
    cam: Camera
    mip: bool
    active: np.ndarray        # indices of blended Gaussians, depth order
    batch: dict               # project_batch output (full-size arrays)
    ranges: np.ndarray
    entries: np.ndarray
    image: np.ndarray         # (h, w, 4) forward output
    final_t: np.ndarray


def render_forward(scene: SplatScene, cam: Camera, mip: bool = False):
    """Rasterize and keep the state needed for gradients.

    Returns (RgbaImage, RasterCache).
    """
    if scene.count == 0:
        raise ValueError("cannot rasterize an empty scene")
    batch = project_batch(scene, cam, mip)
    valid = batch["valid"]
    idx = np.nonzero(valid)[0]
    # stable depth sort; original index breaks ties for reproducibility
    order = np.argsort(batch["depth"][idx], kind="stable")
    active = idx[order]

    ntx = (cam.width + TILE - 1) // TILE
    nty = (cam.height + TILE - 1) // TILE
    mean2d = np.ascontiguousarray(batch["mean2d"][active])
    conic = np.ascontiguousarray(batch["conic"][active])
    color = np.ascontiguousarray(batch["color"][active])
    alpha = np.ascontiguousarray(batch["alpha"][active])
    radius = np.ascontiguousarray(batch["radius"][active])

    counts = np.zeros(active.size, dtype=np.int64)
    total = _bin_counts(mean2d, radius, cam.width, cam.height, ntx, nty,
                        counts)
    offsets = np.zeros(active.size, dtype=np.int64)
    if active.size:
        offsets[1:] = np.cumsum(counts)[:-1]
    tile_ids = np.empty(total, dtype=np.int64)
    entry_ids = np.empty(total, dtype=np.int64)
    _bin_fill(mean2d, radius, cam.width, cam.height, ntx, nty, offsets,
              tile_ids, entry_ids)
    srt = np.argsort(tile_ids, kind="stable")  # keeps depth order per tile
    tile_sorted = tile_ids[srt]
    entries = np.ascontiguousarray(entry_ids[srt])
    n_tiles = ntx * nty
    starts = np.searchsorted(tile_sorted, np.arange(n_tiles), side="left")
    ends = np.searchsorted(tile_sorted, np.arange(n_tiles), side="right")
    ranges = np.ascontiguousarray(np.stack([starts, ends], axis=1))

    out, final_t = _blend_forward(cam.width, cam.height, ntx, nty, ranges,
                                  entries, mean2d, conic, color, alpha,
                                  radius)
    cache = RasterCache(scene, cam, mip, active, batch, ranges, entries,
                        out, final_t)
    return RgbaImage(out, meta={"renderer": "splats", "mip": mip}), cache


def rasterize(scene: SplatScene, cam: Camera, mip: bool = False) -> RgbaImage:
    """Forward-only rendering."""
    image, _ = render_forward(scene, cam, mip)
    return image


@dataclass
class SceneGrads:
    positions: np.ndarray
    rotations: np.ndarray
    log_scales: np.ndarray
    opacity_logits: np.ndarray
    sh: np.ndarray
    view_grad_norm: np.ndarray  # NDC positional gradient norm (densification)
    touched: np.ndarray         # splats that took part in blending

    def as_tuple(self):
        return (self.positions, self.rotations, self.log_scales,
                self.opacity_logits, self.sh)


def render_backward(cache: RasterCache, dimg: np.ndarray) -> SceneGrads:
    """Gradients of a scalar loss w.r.t. every Gaussian parameter.

    `dimg` is dL/d(output rgba), shape (h, w, 4).
    """
    scene = cache.scene
    cam = cache.cam
    batch = cache.batch
    active = cache.active
    n = scene.count
    na = active.size
    ntx = (cam.width + TILE - 1) // TILE
    nty = (cam.height + TILE - 1) // TILE

    mean2d = np.ascontiguousarray(batch["mean2d"][active])
    conic = np.ascontiguousarray(batch["conic"][active])
    color = np.ascontiguousarray(batch["color"][active])
    alpha = np.ascontiguousarray(batch["alpha"][active])
    radius = np.ascontiguousarray(batch["radius"][active])

    bufs = _blend_backward(cam.width, cam.height, ntx, nty, cache.ranges,
                           cache.entries, mean2d, conic, color, alpha,
                           radius, cache.image, cache.final_t,
                           np.ascontiguousarray(dimg))
    acc = bufs.sum(axis=0)  # fixed reduction order over tile rows

    d_mean = acc[:, 0:2]
    d_conic = acc[:, 2:5]
    d_color = acc[:, 5:8]
    d_alpha = acc[:, 8]

    grads = SceneGrads(np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 3)),
                       np.zeros(n), np.zeros_like(scene.sh),
                       np.zeros(n), np.zeros(n, dtype=bool))
    if na == 0:
        return grads
    grads.touched[active] = True

    # ---- conic -> filtered covariance -------------------------------------
    lam = np.zeros((na, 2, 2))
    lam[:, 0, 0] = conic[:, 0]
    lam[:, 0, 1] = conic[:, 1]
    lam[:, 1, 0] = conic[:, 1]
    lam[:, 1, 1] = conic[:, 2]
    dlam = np.zeros((na, 2, 2))
    dlam[:, 0, 0] = d_conic[:, 0]
    dlam[:, 0, 1] = 0.5 * d_conic[:, 1]
    dlam[:, 1, 0] = 0.5 * d_conic[:, 1]
    dlam[:, 1, 1] = d_conic[:, 2]
    d_cov = -lam @ dlam @ lam

    # ---- mip compensation / opacity ----------------------------------------
    sig_o = scene.opacities()[active]
    comp = batch["comp"][active]
    d_comp = d_alpha * sig_o
    d_opacity = d_alpha * comp * sig_o * (1.0 - sig_o)

    d_cov_raw = d_cov.copy()
    if cache.mip:
        cov_raw = batch["cov_raw"][active]
        cov_f = batch["cov"][active]
        det_raw = cov_raw[:, 0, 0] * cov_raw[:, 1, 1] - cov_raw[:, 0, 1] ** 2
        det_f = cov_f[:, 0, 0] * cov_f[:, 1, 1] - cov_f[:, 0, 1] ** 2
        ok = det_raw > 1e-12
        adj_raw = np.empty_like(cov_raw)
        adj_raw[:, 0, 0] = cov_raw[:, 1, 1]
        adj_raw[:, 0, 1] = -cov_raw[:, 1, 0]
        adj_raw[:, 1, 0] = -cov_raw[:, 0, 1]
        adj_raw[:, 1, 1] = cov_raw[:, 0, 0]
        adj_f = np.empty_like(cov_f)
        adj_f[:, 0, 0] = cov_f[:, 1, 1]
        adj_f[:, 0, 1] = -cov_f[:, 1, 0]
        adj_f[:, 1, 0] = -cov_f[:, 0, 1]
        adj_f[:, 1, 1] = cov_f[:, 0, 0]
        scale_r = np.where(ok, d_comp * comp / (2.0 * det_raw), 0.0)
        scale_f = np.where(ok, d_comp * comp / (2.0 * det_f), 0.0)
        d_cov_raw += scale_r[:, None, None] * adj_raw \
            - scale_f[:, None, None] * adj_f

    # ---- covariance -> (Sigma, J, t) ---------------------------------------
    t2 = batch["t2"][active]
    sigma = batch["sigma"][active]
    d_sigma = np.einsum("nji,njk,nkl->nil", t2, d_cov_raw, t2)
    d_t2 = 2.0 * np.einsum("nij,njk,nkl->nil", d_cov_raw, t2, sigma)
    r = batch["view_r"]
    d_j = d_t2 @ r.T

    t_cam = batch["t_cam"][active]
    f = batch["focal"]
    tz = t_cam[:, 2]
    d_t = np.zeros((na, 3))
    d_t[:, 0] = d_j[:, 0, 2] * (-f / tz ** 2) + d_mean[:, 0] * f / tz
    d_t[:, 1] = d_j[:, 1, 2] * (-f / tz ** 2) + d_mean[:, 1] * f / tz
    d_t[:, 2] = ((d_j[:, 0, 0] + d_j[:, 1, 1]) * (-f / tz ** 2)
                 + d_j[:, 0, 2] * (2.0 * f * t_cam[:, 0] / tz ** 3)
                 + d_j[:, 1, 2] * (2.0 * f * t_cam[:, 1] / tz ** 3)
                 - (d_mean[:, 0] * t_cam[:, 0]
                    + d_mean[:, 1] * t_cam[:, 1]) * f / tz ** 2)
    d_pos = d_t @ r

    # ---- Sigma -> (quaternion, log scales) ---------------------------------
    rot = batch["rot"][active]
    exp_s = np.exp(scene.log_scales[active])
    a_mat = rot * exp_s[:, None, :]
    d_a = 2.0 * d_sigma @ a_mat
    d_m = d_a * exp_s[:, None, :]
    d_logs = np.einsum("nik,nik->nk", rot, d_a) * exp_s

    g01, g02, g10 = d_m[:, 0, 1], d_m[:, 0, 2], d_m[:, 1, 0]
    g12, g20, g21 = d_m[:, 1, 2], d_m[:, 2, 0], d_m[:, 2, 1]
    g00, g11, g22 = d_m[:, 0, 0], d_m[:, 1, 1], d_m[:, 2, 2]
    qu = scene.unit_rotations()[active]
    w, x, y, z = qu[:, 0], qu[:, 1], qu[:, 2], qu[:, 3]
    dq_unit = np.stack([
        2.0 * (z * (g10 - g01) + y * (g02 - g20) + x * (g21 - g12)),
        2.0 * (y * (g01 + g10) + z * (g02 + g20) + w * (g21 - g12))
        - 4.0 * x * (g11 + g22),
        2.0 * (x * (g01 + g10) + w * (g02 - g20) + z * (g12 + g21))
        - 4.0 * y * (g00 + g22),
        2.0 * (x * (g02 + g20) + w * (g10 - g01) + y * (g12 + g21))
        - 4.0 * z * (g00 + g11)], axis=1)
    qn = np.linalg.norm(scene.rotations[active], axis=1, keepdims=True)
    d_quat = (dq_unit - qu * np.sum(qu * dq_unit, axis=1, keepdims=True)) / qn

    # ---- color -> (SH coefficients, view direction, position) --------------
    k = shmod.n_coeffs(scene.sh_degree)
    dirs = batch["dirs"][active]
    b = shmod.basis(dirs, scene.sh_degree)
    not_clamped = ~batch["clamped"][active]
    d_color_eff = d_color * not_clamped
    d_sh = b[:, :, None] * d_color_eff[:, None, :]
    gb = shmod.basis_gradient(dirs, scene.sh_degree)
    d_dir = np.einsum("nkc,nkd->nd",
                      scene.sh[active, :k] * d_color_eff[:, None, :], gb)
    dist = batch["dist"][active][:, None]
    proj = np.eye(3)[None] - dirs[:, :, None] * dirs[:, None, :]
    d_pos += np.einsum("nij,nj->ni", proj, d_dir) / dist

    # ---- scatter back to full-size arrays ----------------------------------
    grads.positions[active] = d_pos
    grads.rotations[active] = d_quat
    grads.log_scales[active] = d_logs
    grads.opacity_logits[active] = d_opacity
    grads.sh[active] = d_sh
    grads.view_grad_norm[active] = np.hypot(d_mean[:, 0] * cam.width / 2.0,
                                            d_mean[:, 1] * cam.height / 2.0)
    return grads
