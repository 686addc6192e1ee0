"""Shared scene builders and independent (oracle) reference implementations."""

import numpy as np

from volsplat.camera import Camera
from volsplat.splats import Gaussian3D, SplatScene


def random_scene(n, seed, spread=1.0, sh_degree=1):
    rng = np.random.default_rng(seed)
    k = (sh_degree + 1) ** 2
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return SplatScene(
        positions=rng.uniform(-spread, spread, size=(n, 3)),
        rotations=q,
        log_scales=rng.uniform(np.log(0.02), np.log(0.25), size=(n, 3)),
        opacity_logits=rng.uniform(-2.0, 2.0, size=n),
        sh=rng.normal(size=(n, k, 3)) * 0.4,
        sh_degree=sh_degree,
        bbox=((-spread,) * 3, (spread,) * 3))


def random_camera(seed, res=48):
    rng = np.random.default_rng(seed)
    pos = rng.normal(size=3)
    pos = pos / np.linalg.norm(pos) * rng.uniform(3.0, 5.0)
    return Camera(tuple(pos), tuple(rng.uniform(-0.3, 0.3, 3)), (0, 1, 0),
                  rng.uniform(0.5, 1.1), res, res)


def single_gaussian(position=(0, 0, 0), scale=0.3, opacity_logit=8.0,
                    color_raw=(0.5, 0.0, -0.5)):
    sh = np.zeros((1, 3))
    sh[0] = np.asarray(color_raw) / 0.28209479177387814
    return Gaussian3D(np.asarray(position, dtype=float),
                      np.array([1.0, 0, 0, 0]),
                      np.full(3, np.log(scale)), opacity_logit, sh)


def reference_ssim(x, y, window_size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Scalar double-loop SSIM with zero-padded windows (independent oracle)."""
    half = window_size // 2
    ax = np.arange(-half, half + 1, dtype=float)
    w1 = np.exp(-ax * ax / (2 * sigma * sigma))
    w1 /= w1.sum()
    w2 = np.outer(w1, w1)
    c1 = k1 ** 2
    c2 = k2 ** 2
    h, w = x.shape
    xp = np.pad(x, half)
    yp = np.pad(y, half)
    total = 0.0
    for i in range(h):
        for j in range(w):
            wx = xp[i:i + window_size, j:j + window_size]
            wy = yp[i:i + window_size, j:j + window_size]
            mx = (w2 * wx).sum()
            my = (w2 * wy).sum()
            vx = (w2 * wx * wx).sum() - mx * mx
            vy = (w2 * wy * wy).sum() - my * my
            vxy = (w2 * wx * wy).sum() - mx * my
            total += ((2 * mx * my + c1) * (2 * vxy + c2)
                      / ((mx * mx + my * my + c1) * (vx + vy + c2)))
    return total / (h * w)


def run_gradient_suite(scene, cam, target, ssim_weight=0.2, mip=False,
                       max_per_group=None, base_h=1e-3, rel_tol=1e-3,
                       abs_floor=1e-6, pos_scale=0.01, other_scale=0.1):
    """Central finite differences of the full loss versus analytic gradients.

    The step is base_h scaled per parameter group (world-space positions are
    the most sensitive) so the secant stays inside the smooth region between
    footprint-membership and L1-sign crossings. Returns a list of
    (group, index, fd, analytic, error) violation tuples; empty means the
    suite passed.
    """
    from volsplat.splats import render_forward
    from volsplat.train import backward, loss_and_image_grad

    def full_loss(s):
        img, _ = render_forward(s, cam, mip)
        rep, _ = loss_and_image_grad(img.pixels, target.pixels, ssim_weight)
        return rep.total

    _, grads = backward(scene, cam, target, ssim_weight, mip)
    h_pos = base_h * pos_scale
    h_other = base_h * other_scale
    groups = [("positions", scene.positions, grads.positions, h_pos),
              ("rotations", scene.rotations, grads.rotations, h_other),
              ("log_scales", scene.log_scales, grads.log_scales, h_other),
              ("opacity_logits", scene.opacity_logits, grads.opacity_logits,
               h_other),
              ("sh", scene.sh, grads.sh, h_other)]
    violations = []
    for name, arr, grad, h in groups:
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        idx = range(flat.size) if max_per_group is None \
            else np.random.default_rng(0).choice(
                flat.size, size=min(max_per_group, flat.size), replace=False)
        for kk in idx:
            orig = flat[kk]
            flat[kk] = orig + h
            lp = full_loss(scene)
            flat[kk] = orig - h
            lm = full_loss(scene)
            flat[kk] = orig
            fd = (lp - lm) / (2 * h)
            err = abs(fd - gflat[kk])
            tol = max(rel_tol * max(abs(fd), abs(gflat[kk])), abs_floor)
            if err > tol:
                violations.append((name, int(kk), fd, float(gflat[kk]), err))
    return violations
