"""Jitted kernels: RNG streams, volume sampling, delta tracking, path tracing.

Every kernel is deterministic for a fixed seed: per-pixel RNG streams are
derived by hashing (seed, pixel index, sample index), and parallel loops only
write pixel-private state.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

U64 = np.uint64
_GOLDEN = U64(0x9E3779B97F4A7C15)
_MIX1 = U64(0xBF58476D1CE4E5B9)
_MIX2 = U64(0x94D049BB133111EB)

# ---------------------------------------------------------------------------
# counter-based RNG (splitmix64)


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z + _GOLDEN)
    z = (z ^ (z >> U64(30))) * _MIX1
    z = (z ^ (z >> U64(27))) * _MIX2
    return z ^ (z >> U64(31))


@njit(cache=True, inline="always")
def rng_init(seed, pixel_index, sample_index):
    s = _mix64(U64(seed) ^ _mix64(U64(pixel_index)))
    return _mix64(s ^ _mix64(U64(sample_index)))


@njit(cache=True, inline="always")
def rng_next(state):
    state = state + _GOLDEN
    return state, _mix64(state)


@njit(cache=True, inline="always")
def rng_uniform(state):
    """Advance the stream and return a double in [0, 1)."""
    state, z = rng_next(state)
    return state, (z >> U64(11)) * (1.0 / 9007199254740992.0)


# ---------------------------------------------------------------------------
# volume sampling and classification


@njit(cache=True, inline="always")
def trilinear(data, nx, ny, nz, ox, oy, oz, sx, sy, sz, px, py, pz):
    """Edge-replicated trilinear sample; 0 outside the world bounding box."""
    gx = (px - ox) / sx
    gy = (py - oy) / sy
    gz = (pz - oz) / sz
    if gx < -0.5 or gy < -0.5 or gz < -0.5:
        return 0.0
    if gx > nx - 0.5 or gy > ny - 0.5 or gz > nz - 0.5:
        return 0.0
    ix = int(np.floor(gx))
    iy = int(np.floor(gy))
    iz = int(np.floor(gz))
    fx = gx - ix
    fy = gy - iy
    fz = gz - iz
    acc = 0.0
    for dz in range(2):
        cz = min(max(iz + dz, 0), nz - 1)
        wz = fz if dz == 1 else 1.0 - fz
        for dy in range(2):
            cy = min(max(iy + dy, 0), ny - 1)
            wy = fy if dy == 1 else 1.0 - fy
            base = nx * (cy + ny * cz)
            for dx in range(2):
                cx = min(max(ix + dx, 0), nx - 1)
                wx = fx if dx == 1 else 1.0 - fx
                acc += wx * wy * wz * data[cx + base]
    return acc


@njit(cache=True, inline="always")
def tf_sigma(tf_pos, tf_sig, s):
    """Piecewise-linear scaled extinction at scalar s (tables pre-scaled)."""
    n = tf_pos.shape[0]
    if s <= tf_pos[0]:
        return tf_sig[0]
    for i in range(1, n):
        if s <= tf_pos[i]:
            w = (s - tf_pos[i - 1]) / (tf_pos[i] - tf_pos[i - 1])
            return tf_sig[i - 1] + w * (tf_sig[i] - tf_sig[i - 1])
    return tf_sig[n - 1]


@njit(cache=True, inline="always")
def tf_color(tf_pos, tf_col, s, out):
    n = tf_pos.shape[0]
    if s <= tf_pos[0]:
        out[0] = tf_col[0, 0]
        out[1] = tf_col[0, 1]
        out[2] = tf_col[0, 2]
        return
    for i in range(1, n):
        if s <= tf_pos[i]:
            w = (s - tf_pos[i - 1]) / (tf_pos[i] - tf_pos[i - 1])
            out[0] = tf_col[i - 1, 0] + w * (tf_col[i, 0] - tf_col[i - 1, 0])
            out[1] = tf_col[i - 1, 1] + w * (tf_col[i, 1] - tf_col[i - 1, 1])
            out[2] = tf_col[i - 1, 2] + w * (tf_col[i, 2] - tf_col[i - 1, 2])
            return
    out[0] = tf_col[n - 1, 0]
    out[1] = tf_col[n - 1, 1]
    out[2] = tf_col[n - 1, 2]


@njit(cache=True, inline="always")
def clipped(planes, px, py, pz):
    for i in range(planes.shape[0]):
        if planes[i, 0] * px + planes[i, 1] * py + planes[i, 2] * pz \
                - planes[i, 3] < 0.0:
            return True
    return False


@njit(cache=True, inline="always")
def sigma_at(data, nx, ny, nz, ox, oy, oz, sx, sy, sz,
             tf_pos, tf_sig, planes, px, py, pz):
    if clipped(planes, px, py, pz):
        return 0.0
    s = trilinear(data, nx, ny, nz, ox, oy, oz, sx, sy, sz, px, py, pz)
    return tf_sigma(tf_pos, tf_sig, s)


# ---------------------------------------------------------------------------
# geometry helpers


@njit(cache=True, inline="always")
def ray_bbox(ox, oy, oz, dx, dy, dz, lox, loy, loz, hix, hiy, hiz):
    """Slab intersection; returns (t0, t1) with t1 < t0 when missed."""
    t0 = 0.0
    t1 = 1.0e30
    for axis in range(3):
        if axis == 0:
            o, d, lo, hi = ox, dx, lox, hix
        elif axis == 1:
            o, d, lo, hi = oy, dy, loy, hiy
        else:
            o, d, lo, hi = oz, dz, loz, hiz
        if abs(d) < 1e-300:
            if o < lo or o > hi:
                return 1.0, -1.0
        else:
            ta = (lo - o) / d
            tb = (hi - o) / d
            if ta > tb:
                ta, tb = tb, ta
            if ta > t0:
                t0 = ta
            if tb < t1:
                t1 = tb
    return t0, t1


@njit(cache=True, inline="always")
def block_exit_t(px, py, pz, dx, dy, dz, lox, loy, loz, bwx, bwy, bwz,
                 bx, by, bz, t):
    """Exit distance of the current occupancy block along the ray."""
    t_exit = 1.0e30
    if dx > 0.0:
        tx = (lox + (bx + 1) * bwx - px) / dx
    elif dx < 0.0:
        tx = (lox + bx * bwx - px) / dx
    else:
        tx = 1.0e30
    if tx < t_exit:
        t_exit = tx
    if dy > 0.0:
        ty = (loy + (by + 1) * bwy - py) / dy
    elif dy < 0.0:
        ty = (loy + by * bwy - py) / dy
    else:
        ty = 1.0e30
    if ty < t_exit:
        t_exit = ty
    if dz > 0.0:
        tz = (loz + (bz + 1) * bwz - pz) / dz
    elif dz < 0.0:
        tz = (loz + bz * bwz - pz) / dz
    else:
        tz = 1.0e30
    if tz < t_exit:
        t_exit = tz
    return t + t_exit


@njit(cache=True)
def next_collision(state, ox, oy, oz, dx, dy, dz, t, t_end,
                   flags, nbx, nby, nbz, bwx, bwy, bwz,
                   lox, loy, loz, sigma_max, use_skipping):
    """Delta-tracking free flight: next tentative collision distance.

    Returns (state, t_coll) with t_coll < 0 when the ray escapes. Exponential
    memorylessness permits restarting the flight at block boundaries.
    """
    if sigma_max <= 0.0:
        return state, -1.0
    eps = 1e-7 * (bwx + bwy + bwz)
    while t < t_end:
        px = ox + t * dx
        py = oy + t * dy
        pz = oz + t * dz
        bx = int((px - lox) / bwx)
        by = int((py - loy) / bwy)
        bz = int((pz - loz) / bwz)
        if bx < 0:
            bx = 0
        if by < 0:
            by = 0
        if bz < 0:
            bz = 0
        if bx >= nbx:
            bx = nbx - 1
        if by >= nby:
            by = nby - 1
        if bz >= nbz:
            bz = nbz - 1
        t_exit = block_exit_t(px, py, pz, dx, dy, dz, lox, loy, loz,
                              bwx, bwy, bwz, bx, by, bz, t)
        if use_skipping and flags[bz, by, bx] == 0:
            t = t_exit + eps
            continue
        state, u = rng_uniform(state)
        t_new = t - np.log(1.0 - u) / sigma_max
        if t_new <= t_exit:
            if t_new <= t_end:
                return state, t_new
            return state, -1.0
        t = t_exit + eps  # flew past the block; restart (memoryless)
    return state, -1.0


@njit(cache=True, inline="always")
def hg_cos(g, u):
    """Inverse-CDF sample of the Henyey-Greenstein cosine."""
    if abs(g) < 1e-6:
        return 1.0 - 2.0 * u
    sq = (1.0 - g * g) / (1.0 - g + 2.0 * g * u)
    return (1.0 + g * g - sq * sq) / (2.0 * g)


@njit(cache=True, inline="always")
def hg_phase(g, cos_t):
    """HG phase function value (normalized over the sphere)."""
    denom = 1.0 + g * g - 2.0 * g * cos_t
    return (1.0 - g * g) / (4.0 * np.pi * denom * np.sqrt(denom))


@njit(cache=True, inline="always")
def orthonormal_basis(wx, wy, wz):
    """Branchless frame construction (Duff et al. style)."""
    s = 1.0 if wz >= 0.0 else -1.0
    a = -1.0 / (s + wz)
    b = wx * wy * a
    ux = 1.0 + s * wx * wx * a
    uy = s * b
    uz = -s * wx
    vx = b
    vy = s + wy * wy * a
    vz = -wy
    return ux, uy, uz, vx, vy, vz


@njit(cache=True)
def direction_from_cos(wx, wy, wz, cos_t, phi):
    sin_t = np.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    ux, uy, uz, vx, vy, vz = orthonormal_basis(wx, wy, wz)
    cp = np.cos(phi)
    sp = np.sin(phi)
    nx = sin_t * (cp * ux + sp * vx) + cos_t * wx
    ny = sin_t * (cp * uy + sp * vy) + cos_t * wy
    nz = sin_t * (cp * uz + sp * vz) + cos_t * wz
    inv = 1.0 / np.sqrt(nx * nx + ny * ny + nz * nz)
    return nx * inv, ny * inv, nz * inv


@njit(cache=True)
def env_sample(state, env_rgb, row_cdf, cond_cdf, cos_edges):
    """Draw (direction, rgb, pdf) from the luminance-weighted texel CDFs."""
    state, u0 = rng_uniform(state)
    state, u1 = rng_uniform(state)
    state, u2 = rng_uniform(state)
    state, u3 = rng_uniform(state)
    h = row_cdf.shape[0]
    w = cond_cdf.shape[1]
    row = np.searchsorted(row_cdf, u0)
    if row >= h:
        row = h - 1
    col = np.searchsorted(cond_cdf[row], u1)
    if col >= w:
        col = w - 1
    cos_t = cos_edges[row] + (cos_edges[row + 1] - cos_edges[row]) * u2
    sin_t = np.sqrt(max(0.0, 1.0 - cos_t * cos_t))
    phi = (col + u3) * 2.0 * np.pi / w
    dx = sin_t * np.cos(phi)
    dy = cos_t
    dz = sin_t * np.sin(phi)
    p_row = row_cdf[row] - (row_cdf[row - 1] if row > 0 else 0.0)
    p_col = cond_cdf[row, col] - (cond_cdf[row, col - 1] if col > 0 else 0.0)
    solid = (cos_edges[row] - cos_edges[row + 1]) * 2.0 * np.pi / w
    pdf = p_row * p_col / solid
    return state, dx, dy, dz, env_rgb[row, col, 0], env_rgb[row, col, 1], \
        env_rgb[row, col, 2], pdf


# ---------------------------------------------------------------------------
# iso-surface marching


@njit(cache=True, inline="always")
def trilinear_clamped(data, nx, ny, nz, ox, oy, oz, sx, sy, sz, px, py, pz):
    """Edge-replicated trilinear sample without the outside-bbox zeroing."""
    gx = (px - ox) / sx
    gy = (py - oy) / sy
    gz = (pz - oz) / sz
    ix = int(np.floor(gx))
    iy = int(np.floor(gy))
    iz = int(np.floor(gz))
    fx = min(max(gx - ix, 0.0), 1.0)
    fy = min(max(gy - iy, 0.0), 1.0)
    fz = min(max(gz - iz, 0.0), 1.0)
    acc = 0.0
    for dz in range(2):
        cz = min(max(iz + dz, 0), nz - 1)
        wz = fz if dz == 1 else 1.0 - fz
        for dy in range(2):
            cy = min(max(iy + dy, 0), ny - 1)
            wy = fy if dy == 1 else 1.0 - fy
            base = nx * (cy + ny * cz)
            for dx in range(2):
                cx = min(max(ix + dx, 0), nx - 1)
                wx = fx if dx == 1 else 1.0 - fx
                acc += wx * wy * wz * data[cx + base]
    return acc


@njit(cache=True)
def gradient_at(data, nx, ny, nz, ox, oy, oz, sx, sy, sz, px, py, pz):
    """Central differences on the edge-replicated field (no bbox cliff)."""
    gx = (trilinear_clamped(data, nx, ny, nz, ox, oy, oz, sx, sy, sz,
                            px + sx, py, pz)
          - trilinear_clamped(data, nx, ny, nz, ox, oy, oz, sx, sy, sz,
                              px - sx, py, pz)) / (2.0 * sx)
    gy = (trilinear_clamped(data, nx, ny, nz, ox, oy, oz, sx, sy, sz,
                            px, py + sy, pz)
          - trilinear_clamped(data, nx, ny, nz, ox, oy, oz, sx, sy, sz,
                              px, py - sy, pz)) / (2.0 * sy)
    gz = (trilinear_clamped(data, nx, ny, nz, ox, oy, oz, sx, sy, sz,
                            px, py, pz + sz)
          - trilinear_clamped(data, nx, ny, nz, ox, oy, oz, sx, sy, sz,
                              px, py, pz - sz)) / (2.0 * sz)
    return gx, gy, gz


@njit(cache=True)
def iso_march(data, nx, ny, nz, ox, oy, oz, sx, sy, sz,
              rox, roy, roz, dx, dy, dz, t_a, t_b, step, threshold, armed):
    """March [t_a, t_b] at fixed steps; rising-edge gradient-threshold hit.

    Returns (t_hit, nx, ny, nz) with t_hit < 0 when no surface is found.
    `armed` should be False when the ray starts on a surface (reflection).
    """
    t = t_a + 0.5 * step
    while t <= t_b:
        px = rox + t * dx
        py = roy + t * dy
        pz = roz + t * dz
        gx, gy, gz = gradient_at(data, nx, ny, nz, ox, oy, oz, sx, sy, sz,
                                 px, py, pz)
        mag = np.sqrt(gx * gx + gy * gy + gz * gz)
        if mag > threshold:
            if armed:
                inv = -1.0 / mag
                return t, gx * inv, gy * inv, gz * inv
        else:
            armed = True
        t += step
    return -1.0, 0.0, 0.0, 0.0


# ---------------------------------------------------------------------------
# transmittance along shadow rays (ratio tracking, surfaces block)


@njit(cache=True)
def shadow_transmittance(state, px, py, pz, dx, dy, dz, t_max,
                         data, nx, ny, nz, ox, oy, oz, sx, sy, sz,
                         tf_pos, tf_sig, planes,
                         tflags, nbx, nby, nbz, bwx, bwy, bwz,
                         lox, loy, loz, hix, hiy, hiz,
                         sigma_max, use_skipping,
                         iso_on, iso_step, iso_threshold):
    t0, t1 = ray_bbox(px, py, pz, dx, dy, dz, lox, loy, loz, hix, hiy, hiz)
    if t1 < t0:
        return state, 1.0
    t_end = min(t1, t_max)
    if t_end <= 0.0:
        return state, 1.0
    if iso_on:
        th, _, _, _ = iso_march(data, nx, ny, nz, ox, oy, oz, sx, sy, sz,
                                px, py, pz, dx, dy, dz, max(t0, 0.0), t_end,
                                iso_step, iso_threshold, False)
        if th >= 0.0:
            return state, 0.0
    w = 1.0
    t = max(t0, 0.0)
    while True:
        state, t = next_collision(state, px, py, pz, dx, dy, dz, t, t_end,
                                  tflags, nbx, nby, nbz, bwx, bwy, bwz,
                                  lox, loy, loz, sigma_max, use_skipping)
        if t < 0.0:
            return state, w
        sig = sigma_at(data, nx, ny, nz, ox, oy, oz, sx, sy, sz,
                       tf_pos, tf_sig, planes,
                       px + t * dx, py + t * dy, pz + t * dz)
        r = sig / sigma_max
        if r > 1.0:
            r = 1.0
        w *= 1.0 - r
        if w < 1e-6:
            return state, 0.0


# ---------------------------------------------------------------------------
# scattered / reflected sub-path (analog delta tracking, NEE-only lighting)


@njit(cache=True)
def subpath_radiance(state, sx0, sy0, sz0, dirx, diry, dirz,
                     wr, wg, wb, scatter_count,
                     data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                     tf_pos, tf_sig, tf_col, planes, albedo,
                     tflags, nbx, nby, nbz, bwx, bwy, bwz,
                     lox, loy, loz, hix, hiy, hiz, sigma_max, use_skipping,
                     env_mode, env_rgb, row_cdf, cond_cdf, cos_edges,
                     head_intensity, camx, camy, camz,
                     hg_g, max_scatter, rr_start,
                     iso_on, iso_step, iso_threshold,
                     iso_pos, iso_col, iso_sig, armed):
    """Walk a scattered/reflected path; returns (state, r, g, b) radiance."""
    out_r = 0.0
    out_g = 0.0
    out_b = 0.0
    px = sx0
    py = sy0
    pz = sz0
    col = np.empty(3)
    while True:
        t0, t1 = ray_bbox(px, py, pz, dirx, diry, dirz,
                          lox, loy, loz, hix, hiy, hiz)
        if t1 < max(t0, 0.0):
            return state, out_r, out_g, out_b
        t_start = max(t0, 0.0)
        state, t_c = next_collision(state, px, py, pz, dirx, diry, dirz,
                                    t_start, t1, tflags, nbx, nby, nbz,
                                    bwx, bwy, bwz, lox, loy, loz,
                                    sigma_max, use_skipping)
        t_surf = -1.0
        snx = sny = snz = 0.0
        if iso_on:
            seg_end = t_c if t_c >= 0.0 else t1
            t_surf, snx, sny, snz = iso_march(
                data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                px, py, pz, dirx, diry, dirz, t_start, seg_end,
                iso_step, iso_threshold, armed)
        armed = True

        if t_surf >= 0.0:
            # opaque surface: NEE + cosine-sampled reflection
            hx = px + t_surf * dirx
            hy = py + t_surf * diry
            hz = pz + t_surf * dirz
            s_val = trilinear(data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                              hx, hy, hz)
            tf_color(iso_pos, iso_col, s_val, col)
            state, out_r, out_g, out_b = _surface_nee(
                state, hx, hy, hz, snx, sny, snz, col[0] * wr, col[1] * wg,
                col[2] * wb, out_r, out_g, out_b,
                data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                tf_pos, tf_sig, planes, tflags, nbx, nby, nbz, bwx, bwy, bwz,
                lox, loy, loz, hix, hiy, hiz, sigma_max, use_skipping,
                env_mode, env_rgb, row_cdf, cond_cdf, cos_edges,
                head_intensity, camx, camy, camz,
                iso_on, iso_step, iso_threshold)
            state, u1 = rng_uniform(state)
            state, u2 = rng_uniform(state)
            cos_t = np.sqrt(u1)
            phi = 2.0 * np.pi * u2
            ndx, ndy, ndz = direction_from_cos(snx, sny, snz, cos_t, phi)
            wr *= col[0]
            wg *= col[1]
            wb *= col[2]
            px, py, pz = hx + 1e-6 * snx, hy + 1e-6 * sny, hz + 1e-6 * snz
            dirx, diry, dirz = ndx, ndy, ndz
            scatter_count += 1
            armed = False
        elif t_c < 0.0:
            return state, out_r, out_g, out_b
        else:
            hx = px + t_c * dirx
            hy = py + t_c * diry
            hz = pz + t_c * dirz
            sig = sigma_at(data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                           tf_pos, tf_sig, planes, hx, hy, hz)
            r = sig / sigma_max
            if r > 1.0:
                r = 1.0
            state, u = rng_uniform(state)
            if u >= r:
                px, py, pz = hx, hy, hz
                t_dummy = 0.0  # null collision: continue unchanged
                continue
            state, u2 = rng_uniform(state)
            if u2 >= albedo:
                # absorption: emit and terminate
                s_val = trilinear(data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                                  hx, hy, hz)
                tf_color(tf_pos, tf_col, s_val, col)
                out_r += wr * col[0]
                out_g += wg * col[1]
                out_b += wb * col[2]
                return state, out_r, out_g, out_b
            # scatter: NEE then a new HG direction
            state, out_r, out_g, out_b = _scatter_nee(
                state, hx, hy, hz, dirx, diry, dirz, wr, wg, wb,
                out_r, out_g, out_b,
                data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                tf_pos, tf_sig, planes, tflags, nbx, nby, nbz, bwx, bwy, bwz,
                lox, loy, loz, hix, hiy, hiz, sigma_max, use_skipping,
                env_mode, env_rgb, row_cdf, cond_cdf, cos_edges,
                head_intensity, camx, camy, camz, hg_g,
                iso_on, iso_step, iso_threshold)
            state, uc = rng_uniform(state)
            state, up = rng_uniform(state)
            cos_t = hg_cos(hg_g, uc)
            phi = 2.0 * np.pi * up
            dirx, diry, dirz = direction_from_cos(dirx, diry, dirz, cos_t, phi)
            px, py, pz = hx, hy, hz
            scatter_count += 1

        if scatter_count > max_scatter:
            return state, out_r, out_g, out_b
        if scatter_count >= rr_start:
            lum = 0.2126 * wr + 0.7152 * wg + 0.0722 * wb
            p_survive = min(max(lum, 0.05), 1.0)
            state, u = rng_uniform(state)
            if u >= p_survive:
                return state, out_r, out_g, out_b
            wr /= p_survive
            wg /= p_survive
            wb /= p_survive


@njit(cache=True)
def _scatter_nee(state, hx, hy, hz, dirx, diry, dirz, wr, wg, wb,
                 out_r, out_g, out_b,
                 data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                 tf_pos, tf_sig, planes, tflags, nbx, nby, nbz, bwx, bwy, bwz,
                 lox, loy, loz, hix, hiy, hiz, sigma_max, use_skipping,
                 env_mode, env_rgb, row_cdf, cond_cdf, cos_edges,
                 head_intensity, camx, camy, camz, hg_g,
                 iso_on, iso_step, iso_threshold):
    if env_mode == 0:
        state, ldx, ldy, ldz, lr, lg, lb, pdf = env_sample(
            state, env_rgb, row_cdf, cond_cdf, cos_edges)
        if pdf <= 0.0:
            return state, out_r, out_g, out_b
        cos_t = dirx * ldx + diry * ldy + dirz * ldz
        ph = hg_phase(hg_g, cos_t)
        state, tr = shadow_transmittance(
            state, hx, hy, hz, ldx, ldy, ldz, 1.0e30,
            data, nx, ny, nz, ox, oy, oz, svx, svy, svz, tf_pos, tf_sig,
            planes, tflags, nbx, nby, nbz, bwx, bwy, bwz,
            lox, loy, loz, hix, hiy, hiz, sigma_max, use_skipping,
            iso_on, iso_step, iso_threshold)
        scale = ph * tr / pdf
        out_r += wr * lr * scale
        out_g += wg * lg * scale
        out_b += wb * lb * scale
    else:
        ldx = camx - hx
        ldy = camy - hy
        ldz = camz - hz
        dist = np.sqrt(ldx * ldx + ldy * ldy + ldz * ldz)
        if dist < 1e-9:
            return state, out_r, out_g, out_b
        ldx /= dist
        ldy /= dist
        ldz /= dist
        cos_t = dirx * ldx + diry * ldy + dirz * ldz
        ph = hg_phase(hg_g, cos_t)
        state, tr = shadow_transmittance(
            state, hx, hy, hz, ldx, ldy, ldz, dist,
            data, nx, ny, nz, ox, oy, oz, svx, svy, svz, tf_pos, tf_sig,
            planes, tflags, nbx, nby, nbz, bwx, bwy, bwz,
            lox, loy, loz, hix, hiy, hiz, sigma_max, use_skipping,
            iso_on, iso_step, iso_threshold)
        scale = ph * tr * head_intensity
        out_r += wr * scale
        out_g += wg * scale
        out_b += wb * scale
    return state, out_r, out_g, out_b


@njit(cache=True)
def _surface_nee(state, hx, hy, hz, snx, sny, snz, wr, wg, wb,
                 out_r, out_g, out_b,
                 data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                 tf_pos, tf_sig, planes, tflags, nbx, nby, nbz, bwx, bwy, bwz,
                 lox, loy, loz, hix, hiy, hiz, sigma_max, use_skipping,
                 env_mode, env_rgb, row_cdf, cond_cdf, cos_edges,
                 head_intensity, camx, camy, camz,
                 iso_on, iso_step, iso_threshold):
    """Lambertian next-event estimation at a surface hit (weights include albedo)."""
    offx = hx + 1e-6 * snx
    offy = hy + 1e-6 * sny
    offz = hz + 1e-6 * snz
    if env_mode == 0:
        state, ldx, ldy, ldz, lr, lg, lb, pdf = env_sample(
            state, env_rgb, row_cdf, cond_cdf, cos_edges)
        cos_l = snx * ldx + sny * ldy + snz * ldz
        if pdf <= 0.0 or cos_l <= 0.0:
            return state, out_r, out_g, out_b
        state, tr = shadow_transmittance(
            state, offx, offy, offz, ldx, ldy, ldz, 1.0e30,
            data, nx, ny, nz, ox, oy, oz, svx, svy, svz, tf_pos, tf_sig,
            planes, tflags, nbx, nby, nbz, bwx, bwy, bwz,
            lox, loy, loz, hix, hiy, hiz, sigma_max, use_skipping,
            iso_on, iso_step, iso_threshold)
        scale = cos_l * tr / (np.pi * pdf)
        out_r += wr * lr * scale
        out_g += wg * lg * scale
        out_b += wb * lb * scale
    else:
        ldx = camx - hx
        ldy = camy - hy
        ldz = camz - hz
        dist = np.sqrt(ldx * ldx + ldy * ldy + ldz * ldz)
        if dist < 1e-9:
            return state, out_r, out_g, out_b
        ldx /= dist
        ldy /= dist
        ldz /= dist
        cos_l = snx * ldx + sny * ldy + snz * ldz
        if cos_l <= 0.0:
            return state, out_r, out_g, out_b
        state, tr = shadow_transmittance(
            state, offx, offy, offz, ldx, ldy, ldz, dist,
            data, nx, ny, nz, ox, oy, oz, svx, svy, svz, tf_pos, tf_sig,
            planes, tflags, nbx, nby, nbz, bwx, bwy, bwz,
            lox, loy, loz, hix, hiy, hiz, sigma_max, use_skipping,
            iso_on, iso_step, iso_threshold)
        scale = cos_l * tr * head_intensity / np.pi
        out_r += wr * scale
        out_g += wg * scale
        out_b += wb * scale
    return state, out_r, out_g, out_b


# ---------------------------------------------------------------------------
# primary rays: weighted emission/alpha accumulation with analog spawns


@njit(cache=True)
def trace_primary(state, rox, roy, roz, dirx, diry, dirz,
                  data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                  tf_pos, tf_sig, tf_col, planes, albedo,
                  tflags, nbx, nby, nbz, bwx, bwy, bwz,
                  lox, loy, loz, hix, hiy, hiz, sigma_max, use_skipping,
                  env_mode, env_rgb, row_cdf, cond_cdf, cos_edges,
                  head_intensity, camx, camy, camz,
                  hg_g, max_scatter, rr_start,
                  iso_on, iso_step, iso_threshold, iso_pos, iso_col, iso_sig):
    """One camera-ray sample: returns (state, r, g, b, alpha).

    Emission and alpha use expected-value (ratio-tracking) weights along the
    primary ray; in-scattering spawns at most one analog sub-path with the
    proper probability correction; surfaces terminate the primary ray.
    """
    out_r = 0.0
    out_g = 0.0
    out_b = 0.0
    col = np.empty(3)
    t0, t1 = ray_bbox(rox, roy, roz, dirx, diry, dirz,
                      lox, loy, loz, hix, hiy, hiz)
    if t1 < max(t0, 0.0) or sigma_max <= 0.0:
        return state, 0.0, 0.0, 0.0, 0.0
    w_t = 1.0   # ratio-tracking transmittance weight (alpha, emission)
    w_s = 1.0   # spawn-probability correction for the scattered sub-path
    spawned = False
    t = max(t0, 0.0)
    while True:
        state, t_c = next_collision(state, rox, roy, roz, dirx, diry, dirz,
                                    t, t1, tflags, nbx, nby, nbz,
                                    bwx, bwy, bwz, lox, loy, loz,
                                    sigma_max, use_skipping)
        if iso_on:
            seg_end = t_c if t_c >= 0.0 else t1
            t_surf, snx, sny, snz = iso_march(
                data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                rox, roy, roz, dirx, diry, dirz, t, seg_end,
                iso_step, iso_threshold, True)
            if t_surf >= 0.0:
                hx = rox + t_surf * dirx
                hy = roy + t_surf * diry
                hz = roz + t_surf * dirz
                s_val = trilinear(data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                                  hx, hy, hz)
                tf_color(iso_pos, iso_col, s_val, col)
                cr = w_t * col[0]
                cg = w_t * col[1]
                cb = w_t * col[2]
                state, out_r, out_g, out_b = _surface_nee(
                    state, hx, hy, hz, snx, sny, snz, cr, cg, cb,
                    out_r, out_g, out_b,
                    data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                    tf_pos, tf_sig, planes, tflags, nbx, nby, nbz,
                    bwx, bwy, bwz, lox, loy, loz, hix, hiy, hiz,
                    sigma_max, use_skipping,
                    env_mode, env_rgb, row_cdf, cond_cdf, cos_edges,
                    head_intensity, camx, camy, camz,
                    iso_on, iso_step, iso_threshold)
                state, u1 = rng_uniform(state)
                state, u2 = rng_uniform(state)
                cos_b = np.sqrt(u1)
                phi = 2.0 * np.pi * u2
                rdx, rdy, rdz = direction_from_cos(snx, sny, snz, cos_b, phi)
                state, sr, sg, sb = subpath_radiance(
                    state, hx + 1e-6 * snx, hy + 1e-6 * sny, hz + 1e-6 * snz,
                    rdx, rdy, rdz, cr, cg, cb, 1,
                    data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                    tf_pos, tf_sig, tf_col, planes, albedo,
                    tflags, nbx, nby, nbz, bwx, bwy, bwz,
                    lox, loy, loz, hix, hiy, hiz, sigma_max, use_skipping,
                    env_mode, env_rgb, row_cdf, cond_cdf, cos_edges,
                    head_intensity, camx, camy, camz,
                    hg_g, max_scatter, rr_start,
                    iso_on, iso_step, iso_threshold,
                    iso_pos, iso_col, iso_sig, False)
                out_r += sr
                out_g += sg
                out_b += sb
                return state, out_r, out_g, out_b, 1.0  # opaque: w_t -> 0
        if t_c < 0.0:
            break
        hx = rox + t_c * dirx
        hy = roy + t_c * diry
        hz = roz + t_c * dirz
        sig = sigma_at(data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                       tf_pos, tf_sig, planes, hx, hy, hz)
        r = sig / sigma_max
        if r > 1.0:
            r = 1.0
        if r > 0.0 and albedo < 1.0:
            s_val = trilinear(data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                              hx, hy, hz)
            tf_color(tf_pos, tf_col, s_val, col)
            e_w = w_t * r * (1.0 - albedo)
            out_r += e_w * col[0]
            out_g += e_w * col[1]
            out_b += e_w * col[2]
        if not spawned and albedo > 0.0 and r > 0.0:
            state, u = rng_uniform(state)
            if u < r * albedo:
                spawned = True
                state, out_r, out_g, out_b = _scatter_nee(
                    state, hx, hy, hz, dirx, diry, dirz, w_s, w_s, w_s,
                    out_r, out_g, out_b,
                    data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                    tf_pos, tf_sig, planes, tflags, nbx, nby, nbz,
                    bwx, bwy, bwz, lox, loy, loz, hix, hiy, hiz,
                    sigma_max, use_skipping,
                    env_mode, env_rgb, row_cdf, cond_cdf, cos_edges,
                    head_intensity, camx, camy, camz, hg_g,
                    iso_on, iso_step, iso_threshold)
                state, uc = rng_uniform(state)
                state, up = rng_uniform(state)
                cos_t = hg_cos(hg_g, uc)
                phi = 2.0 * np.pi * up
                sdx, sdy, sdz = direction_from_cos(dirx, diry, dirz,
                                                   cos_t, phi)
                state, sr, sg, sb = subpath_radiance(
                    state, hx, hy, hz, sdx, sdy, sdz, w_s, w_s, w_s, 1,
                    data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                    tf_pos, tf_sig, tf_col, planes, albedo,
                    tflags, nbx, nby, nbz, bwx, bwy, bwz,
                    lox, loy, loz, hix, hiy, hiz, sigma_max, use_skipping,
                    env_mode, env_rgb, row_cdf, cond_cdf, cos_edges,
                    head_intensity, camx, camy, camz,
                    hg_g, max_scatter, rr_start,
                    iso_on, iso_step, iso_threshold,
                    iso_pos, iso_col, iso_sig, True)
                out_r += sr
                out_g += sg
                out_b += sb
            else:
                denom = 1.0 - r * albedo
                w_t *= 1.0 - r
                if denom > 1e-12:
                    w_s *= (1.0 - r) / denom
                else:
                    w_s = 0.0
                t = t_c
                if w_t < 1e-7:
                    break
                continue
        w_t *= 1.0 - r
        t = t_c
        if w_t < 1e-7 and (spawned or albedo <= 0.0):
            break
    return state, out_r, out_g, out_b, 1.0 - w_t


@njit(cache=True, parallel=True)
def path_trace_image(width, height, cam_r, cam_pos, focal, spp, seed,
                     data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                     tf_pos, tf_sig, tf_col, planes, albedo,
                     tflags, nbx, nby, nbz, bwx, bwy, bwz,
                     lox, loy, loz, hix, hiy, hiz, sigma_max, use_skipping,
                     env_mode, env_rgb, row_cdf, cond_cdf, cos_edges,
                     head_intensity, hg_g, max_scatter, rr_start,
                     iso_on, iso_step, iso_threshold, iso_pos, iso_col, iso_sig):
    out = np.zeros((height, width, 4))
    inv_spp = 1.0 / spp
    for row in prange(height):
        for colm in range(width):
            acc_r = 0.0
            acc_g = 0.0
            acc_b = 0.0
            acc_a = 0.0
            a = (colm + 0.5 - width / 2.0) / focal
            b = (row + 0.5 - height / 2.0) / focal
            dx = cam_r[0, 0] * a + cam_r[1, 0] * b + cam_r[2, 0]
            dy = cam_r[0, 1] * a + cam_r[1, 1] * b + cam_r[2, 1]
            dz = cam_r[0, 2] * a + cam_r[1, 2] * b + cam_r[2, 2]
            inv = 1.0 / np.sqrt(dx * dx + dy * dy + dz * dz)
            dx *= inv
            dy *= inv
            dz *= inv
            pix = row * width + colm
            for s in range(spp):
                state = rng_init(seed, pix, s)
                state, pr, pg, pb, pa = trace_primary(
                    state, cam_pos[0], cam_pos[1], cam_pos[2], dx, dy, dz,
                    data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                    tf_pos, tf_sig, tf_col, planes, albedo,
                    tflags, nbx, nby, nbz, bwx, bwy, bwz,
                    lox, loy, loz, hix, hiy, hiz, sigma_max, use_skipping,
                    env_mode, env_rgb, row_cdf, cond_cdf, cos_edges,
                    head_intensity, cam_pos[0], cam_pos[1], cam_pos[2],
                    hg_g, max_scatter, rr_start,
                    iso_on, iso_step, iso_threshold, iso_pos, iso_col, iso_sig)
                acc_r += pr
                acc_g += pg
                acc_b += pb
                acc_a += pa
            out[row, colm, 0] = acc_r * inv_spp
            out[row, colm, 1] = acc_g * inv_spp
            out[row, colm, 2] = acc_b * inv_spp
            out[row, colm, 3] = acc_a * inv_spp
    return out


@njit(cache=True, parallel=True)
def ea_render_image(width, height, cam_r, cam_pos, focal, step,
                    data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                    tf_pos, tf_sig, tf_col, planes,
                    lox, loy, loz, hix, hiy, hiz):
    """Deterministic front-to-back emission-absorption compositing."""
    out = np.zeros((height, width, 4))
    col = np.empty(3)
    for row in prange(height):
        col_local = np.empty(3)
        for colm in range(width):
            a = (colm + 0.5 - width / 2.0) / focal
            b = (row + 0.5 - height / 2.0) / focal
            dx = cam_r[0, 0] * a + cam_r[1, 0] * b + cam_r[2, 0]
            dy = cam_r[0, 1] * a + cam_r[1, 1] * b + cam_r[2, 1]
            dz = cam_r[0, 2] * a + cam_r[1, 2] * b + cam_r[2, 2]
            inv = 1.0 / np.sqrt(dx * dx + dy * dy + dz * dz)
            dx *= inv
            dy *= inv
            dz *= inv
            t0, t1 = ray_bbox(cam_pos[0], cam_pos[1], cam_pos[2], dx, dy, dz,
                              lox, loy, loz, hix, hiy, hiz)
            t0 = max(t0, 0.0)
            if t1 < t0:
                continue
            trans = 1.0
            cr = 0.0
            cg = 0.0
            cb = 0.0
            t = t0 + 0.5 * step
            while t < t1:
                px = cam_pos[0] + t * dx
                py = cam_pos[1] + t * dy
                pz = cam_pos[2] + t * dz
                if not clipped(planes, px, py, pz):
                    s_val = trilinear(data, nx, ny, nz, ox, oy, oz,
                                      svx, svy, svz, px, py, pz)
                    sig = tf_sigma(tf_pos, tf_sig, s_val)
                    if sig > 0.0:
                        tf_color(tf_pos, tf_col, s_val, col_local)
                        absorb = 1.0 - np.exp(-sig * step)
                        cr += trans * col_local[0] * absorb
                        cg += trans * col_local[1] * absorb
                        cb += trans * col_local[2] * absorb
                        trans *= 1.0 - absorb
                        if trans < 1e-7:
                            break
                t += step
            out[row, colm, 0] = cr
            out[row, colm, 1] = cg
            out[row, colm, 2] = cb
            out[row, colm, 3] = 1.0 - trans
    return out


@njit(cache=True)
def delta_track_single(state, rox, roy, roz, dirx, diry, dirz,
                       data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                       tf_pos, tf_sig, tf_col, planes, albedo,
                       tflags, nbx, nby, nbz, bwx, bwy, bwz,
                       lox, loy, loz, hix, hiy, hiz, sigma_max, use_skipping):
    """Binary delta tracking to the first real event.

    Returns (state, code, px, py, pz, er, eg, eb): code 0 = absorb,
    1 = scatter, 2 = escape (transmitted weight 1).
    """
    col = np.empty(3)
    t0, t1 = ray_bbox(rox, roy, roz, dirx, diry, dirz,
                      lox, loy, loz, hix, hiy, hiz)
    if t1 < max(t0, 0.0) or sigma_max <= 0.0:
        return state, 2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    t = max(t0, 0.0)
    while True:
        state, t = next_collision(state, rox, roy, roz, dirx, diry, dirz,
                                  t, t1, tflags, nbx, nby, nbz, bwx, bwy, bwz,
                                  lox, loy, loz, sigma_max, use_skipping)
        if t < 0.0:
            return state, 2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
        px = rox + t * dirx
        py = roy + t * diry
        pz = roz + t * dirz
        sig = sigma_at(data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                       tf_pos, tf_sig, planes, px, py, pz)
        r = sig / sigma_max
        if r > 1.0:
            r = 1.0
        state, u = rng_uniform(state)
        if u < r:
            state, u2 = rng_uniform(state)
            if u2 < albedo:
                return state, 1, px, py, pz, 0.0, 0.0, 0.0
            s_val = trilinear(data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                              px, py, pz)
            tf_color(tf_pos, tf_col, s_val, col)
            return state, 0, px, py, pz, col[0], col[1], col[2]


@njit(cache=True, parallel=True)
def delta_track_events(n_rays, seed, rox, roy, roz, dirx, diry, dirz,
                       data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
                       tf_pos, tf_sig, tf_col, planes, albedo,
                       tflags, nbx, nby, nbz, bwx, bwy, bwz,
                       lox, loy, loz, hix, hiy, hiz, sigma_max, use_skipping):
    """Event histogram over n rays: [absorb, scatter, escape] counts."""
    counts = np.zeros((n_rays, 3), dtype=np.int64)
    for i in prange(n_rays):
        state = rng_init(seed, i, 0)
        state, code, _, _, _, _, _, _ = delta_track_single(
            state, rox, roy, roz, dirx, diry, dirz,
            data, nx, ny, nz, ox, oy, oz, svx, svy, svz,
            tf_pos, tf_sig, tf_col, planes, albedo,
            tflags, nbx, nby, nbz, bwx, bwy, bwz,
            lox, loy, loz, hix, hiy, hiz, sigma_max, use_skipping)
        counts[i, code] = 1
    out = np.zeros(3, dtype=np.int64)
    for i in range(n_rays):
        for j in range(3):
            out[j] += counts[i, j]
    return out
