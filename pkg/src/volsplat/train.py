"""Differentiable fitting of a Gaussian scene to posed RGBA images."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .image import RgbaImage
from .metrics import evaluate
from .splats import (SceneGrads, SplatScene, n_coeffs, render_backward,
                     render_forward, smooth3d)
from .ssim import ssim_and_grad_planes
from .volume import Preset, VolumeGrid, classify


class TrainingDiverged(RuntimeError):
    """Raised on non-finite loss; carries the diagnostic checkpoint path."""


@dataclass
class TrainConfig:
    iterations: int = 15000
    lr_position: float = 1.6e-4    # scaled by scene extent, log-decayed
    lr_position_final: float = 1.6e-6
    lr_rotation: float = 1e-3
    lr_scale: float = 5e-3
    lr_opacity: float = 0.05
    lr_sh: float = 2.5e-3          # higher orders run at 1/20 of this
    densify_interval: int = 100
    densify_start: int = 500
    densify_stop: int | None = None     # default: iterations // 2
    grad_threshold: float = 2e-4        # tau_g on the NDC gradient norm
    opacity_prune: float = 0.005        # tau_alpha
    percent_dense: float = 0.01
    split_scale_factor: float = 1.6
    max_gaussians: int = 200_000
    ssim_weight: float = 0.2            # lambda
    sh_degree_interval: int = 1000
    alpha_supervision: bool = True
    mip: bool = False
    seed: int = 0
    eval_interval: int = 500
    checkpoint_dir: str | None = None

    def __post_init__(self):
        if not 0.0 <= self.ssim_weight <= 1.0:
            raise ValueError("ssim_weight must lie in [0, 1]")
        if self.grad_threshold <= 0 or self.opacity_prune <= 0:
            raise ValueError("thresholds must be > 0")
        if self.densify_stop is None:
            self.densify_stop = self.iterations // 2


@dataclass(frozen=True)
class LossReport:
    """l1_* are mean absolute errors; ssim_* store the (1 - SSIM) terms."""

    total: float
    l1_color: float
    ssim_color: float
    l1_alpha: float
    ssim_alpha: float


def loss(rendered: RgbaImage, target: RgbaImage,
         ssim_weight: float = 0.2, alpha_supervision: bool = True) -> LossReport:
    report, _ = loss_and_image_grad(rendered.pixels, target.pixels,
                                    ssim_weight, alpha_supervision)
    return report


def loss_and_image_grad(rendered: np.ndarray, target: np.ndarray,
                        ssim_weight: float, alpha_supervision: bool = True):
    """LossReport plus dL/d(rendered rgba)."""
    if rendered.shape != target.shape:
        raise ValueError("image dimensions differ")
    lam = ssim_weight
    diff_rgb = rendered[..., :3] - target[..., :3]
    diff_a = rendered[..., 3] - target[..., 3]
    l1_color = float(np.mean(np.abs(diff_rgb)))
    l1_alpha = float(np.mean(np.abs(diff_a)))

    grad = np.zeros_like(rendered)
    grad[..., :3] = (1.0 - lam) * np.sign(diff_rgb) / diff_rgb.size

    values, ssim_grads = ssim_and_grad_planes(rendered, target)
    ssim_color = float(np.mean(1.0 - values[:3]))
    grad[..., :3] += lam * (-ssim_grads[..., :3]) / 3.0

    if alpha_supervision:
        grad[..., 3] = (1.0 - lam) * np.sign(diff_a) / diff_a.size
        ssim_alpha = float(1.0 - values[3])
        grad[..., 3] += lam * (-ssim_grads[..., 3])
        l1_alpha_term = l1_alpha
    else:
        # color-only ablation: alpha terms are reported but not optimized
        ssim_alpha = 0.0
        l1_alpha_term = 0.0

    total = (1.0 - lam) * (l1_color + l1_alpha_term) \
        + lam * (ssim_color + ssim_alpha)
    return LossReport(total, l1_color, ssim_color, l1_alpha, ssim_alpha), grad


def backward(scene: SplatScene, cam, target: RgbaImage,
             ssim_weight: float = 0.2, mip: bool = False,
             alpha_supervision: bool = True):
    """Render, compare, and differentiate: (LossReport, SceneGrads)."""
    image, cache = render_forward(scene, cam, mip)
    report, dimg = loss_and_image_grad(image.pixels, target.pixels,
                                       ssim_weight, alpha_supervision)
    return report, render_backward(cache, dimg)


# ---------------------------------------------------------------------------
# initialization


def init_random(bbox, n: int, seed: int, sh_degree: int = 3) -> SplatScene:
    """Uniform positions in the box, grey color, opacity 0.1.

    The isotropic scale comes from the expected nearest-neighbor distance of
    the random placement.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    lo = np.asarray(bbox[0], dtype=np.float64)
    hi = np.asarray(bbox[1], dtype=np.float64)
    pos = rng.uniform(lo, hi, size=(n, 3))
    if n > 1:
        tree = cKDTree(pos)
        d, _ = tree.query(pos, k=2)
        mean_nn = float(np.mean(d[:, 1]))
    else:
        mean_nn = float(np.linalg.norm(hi - lo)) / 2.0
    k = n_coeffs(sh_degree)
    sh = np.zeros((n, k, 3))  # zero DC plus the 0.5 offset renders grey
    quat = np.zeros((n, 4))
    quat[:, 0] = 1.0
    return SplatScene(
        positions=pos, rotations=quat,
        log_scales=np.full((n, 3), np.log(max(mean_nn, 1e-6))),
        opacity_logits=np.full(n, _logit(0.1)),
        sh=sh, sh_degree=sh_degree, bbox=(tuple(lo), tuple(hi)))


def init_volume_guided(volume: VolumeGrid, preset: Preset, downsample: int,
                       max_n: int, seed: int, sh_degree: int = 3) -> SplatScene:
    """One Gaussian per non-empty coarse voxel, colored by the preset."""
    if downsample < 1:
        raise ValueError("downsample must be >= 1")
    nx, ny, nz = volume.dims
    arr = volume.as_array()
    cx = (nx + downsample - 1) // downsample
    cy = (ny + downsample - 1) // downsample
    cz = (nz + downsample - 1) // downsample
    pad = np.zeros((cx * downsample, cy * downsample, cz * downsample))
    pad[:nx, :ny, :nz] = arr
    coarse = pad.reshape(cx, downsample, cy, downsample,
                         cz, downsample).mean(axis=(1, 3, 5))

    ix, iy, iz = np.meshgrid(np.arange(cx), np.arange(cy), np.arange(cz),
                             indexing="ij")
    idx = np.stack([ix, iy, iz], axis=-1).reshape(-1, 3)
    centers = (np.asarray(volume.origin)
               + (idx * downsample + (downsample - 1) / 2.0)
               * np.asarray(volume.spacing))
    colors, sigmas = classify(preset, coarse.reshape(-1), centers)
    keep = np.nonzero(sigmas > 0)[0]
    if keep.size == 0:
        raise ValueError("volume classifies to empty under this preset")
    rng = np.random.default_rng(seed)
    if keep.size > max_n:
        keep = keep[np.sort(rng.choice(keep.size, size=max_n, replace=False))]

    n = keep.size
    k = n_coeffs(sh_degree)
    sh = np.zeros((n, k, 3))
    sh[:, 0, :] = (np.clip(colors[keep], 0.0, 1.0) - 0.5) / 0.28209479177387814
    voxel = np.asarray(volume.spacing) * downsample
    # opacity from the voxel's optical depth, kept inside a sane logit range
    alpha = 1.0 - np.exp(-sigmas[keep] * float(np.mean(voxel)))
    alpha = np.clip(alpha, 0.02, 0.95)
    quat = np.zeros((n, 4))
    quat[:, 0] = 1.0
    lo, hi = volume.bbox
    return SplatScene(
        positions=centers[keep], rotations=quat,
        log_scales=np.tile(np.log(voxel * 0.5), (n, 1)),
        opacity_logits=_logit(alpha),
        sh=sh, sh_degree=sh_degree, bbox=(tuple(lo), tuple(hi)))


def _logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """First/second-moment adaptive updates, one state pair per array."""

    def __init__(self, params: dict, lrs: dict,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lrs = dict(lrs)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict, lr_overrides: dict | None = None):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for key, g in grads.items():
            lr = (lr_overrides or {}).get(key, self.lrs[key])
            m = self.m[key]
            v = self.v[key]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            self.params[key] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def select(self, keep):
        """Keep optimizer state for a subset of Gaussians."""
        for k in self.params:
            self.m[k] = self.m[k][keep]
            self.v[k] = self.v[k][keep]

    def append(self, extras: dict):
        """Zero-state rows for newly added Gaussians."""
        for k, arr in extras.items():
            self.m[k] = np.concatenate([self.m[k], np.zeros_like(arr)])
            self.v[k] = np.concatenate([self.v[k], np.zeros_like(arr)])


# ---------------------------------------------------------------------------
# densification


def densify_and_prune(scene: SplatScene, mean_grad_norm: np.ndarray,
                      cfg: TrainConfig, extent: float, rng,
                      optimizer: Adam | None = None) -> SplatScene:
    """Clone small / split large high-gradient Gaussians, drop faint ones."""
    n = scene.count
    alphas = scene.opacities()
    keep = alphas >= cfg.opacity_prune
    hot = (mean_grad_norm > cfg.grad_threshold) & keep
    max_scale = np.exp(scene.log_scales).max(axis=1)
    small = hot & (max_scale <= cfg.percent_dense * extent)
    large = hot & (max_scale > cfg.percent_dense * extent)
    if scene.count >= cfg.max_gaussians:
        small[:] = False
        large[:] = False

    parts = {
        "positions": [scene.positions[keep]],
        "rotations": [scene.rotations[keep]],
        "log_scales": [scene.log_scales[keep]],
        "opacity_logits": [scene.opacity_logits[keep]],
        "sh": [scene.sh[keep]],
    }
    if optimizer is not None:
        optimizer.select(keep)

    extras = {k: [] for k in parts}
    if small.any():
        extras["positions"].append(scene.positions[small])
        extras["rotations"].append(scene.rotations[small])
        extras["log_scales"].append(scene.log_scales[small])
        extras["opacity_logits"].append(scene.opacity_logits[small])
        extras["sh"].append(scene.sh[small])
    if large.any():
        cov = scene.covariances()[large]
        chol = np.linalg.cholesky(cov + 1e-12 * np.eye(3))
        for _ in range(2):
            offs = np.einsum("nij,nj->ni", chol,
                             rng.standard_normal((large.sum(), 3)))
            extras["positions"].append(scene.positions[large] + offs)
            extras["rotations"].append(scene.rotations[large])
            extras["log_scales"].append(
                scene.log_scales[large] - np.log(cfg.split_scale_factor))
            extras["opacity_logits"].append(scene.opacity_logits[large])
            extras["sh"].append(scene.sh[large])

    new_counts = {k: np.concatenate(v) if v else
                  np.zeros((0,) + parts[k][0].shape[1:])
                  for k, v in extras.items()}
    # split parents are replaced by their children
    if large.any():
        drop = np.nonzero(large[keep])[0]
        mask = np.ones(parts["positions"][0].shape[0], dtype=bool)
        mask[drop] = False
        for k in parts:
            parts[k][0] = parts[k][0][mask]
        if optimizer is not None:
            optimizer.select(mask)

    out = {k: np.concatenate(parts[k] + [new_counts[k]]) for k in parts}
    if optimizer is not None:
        optimizer.append(new_counts)
        for k in out:
            optimizer.params[k] = out[k]
    return SplatScene(out["positions"], out["rotations"], out["log_scales"],
                      out["opacity_logits"], out["sh"], scene.sh_degree,
                      scene.bbox, scene.smoothed, dict(scene.meta))


# ---------------------------------------------------------------------------
# training loop


def train(targets: list[RgbaImage], cameras, cfg: TrainConfig,
          init_scene: SplatScene, val_targets=None, val_cameras=None):
    """Optimize the scene against the posed targets.

    Returns (scene, history): history rows carry the loss terms, Gaussian
    count, and (at eval intervals) validation metrics.
    """
    if len(targets) < 2:
        raise ValueError("need at least two posed images")
    if len(targets) != len(cameras):
        raise ValueError("images and cameras differ in length")
    shape = targets[0].pixels.shape
    if any(t.pixels.shape != shape for t in targets):
        raise ValueError("all training images must share one resolution")

    rng = np.random.default_rng(cfg.seed)
    scene = init_scene.copy()
    extent = 0.5 * float(np.linalg.norm(np.asarray(scene.bbox[1])
                                        - np.asarray(scene.bbox[0])))
    params = {"positions": scene.positions, "rotations": scene.rotations,
              "log_scales": scene.log_scales,
              "opacity_logits": scene.opacity_logits, "sh": scene.sh}
    lrs = {"positions": cfg.lr_position * extent,
           "rotations": cfg.lr_rotation, "log_scales": cfg.lr_scale,
           "opacity_logits": cfg.lr_opacity, "sh": cfg.lr_sh}
    opt = Adam(params, lrs)

    grad_accum = np.zeros(scene.count)
    seen_count = np.zeros(scene.count)
    history = []
    order = rng.permutation(len(targets))
    cursor = 0
    active_degree = 0

    for it in range(cfg.iterations):
        if cursor >= len(order):
            order = rng.permutation(len(targets))
            cursor = 0
        view = int(order[cursor])
        cursor += 1

        if it > 0 and it % cfg.sh_degree_interval == 0:
            active_degree = min(active_degree + 1, scene.sh_degree)

        report, grads = backward(scene, cameras[view], targets[view],
                                 cfg.ssim_weight, cfg.mip,
                                 cfg.alpha_supervision)
        if not np.isfinite(report.total):
            path = None
            if cfg.checkpoint_dir:
                from .splats import save_scene
                os.makedirs(cfg.checkpoint_dir, exist_ok=True)
                path = os.path.join(cfg.checkpoint_dir,
                                    f"diverged_{it:06d}.gsrw")
                save_scene(scene, path)
            raise TrainingDiverged(
                f"non-finite loss at iteration {it}"
                + (f"; checkpoint: {path}" if path else ""))

        # freeze spherical-harmonic orders not yet activated
        k_active = n_coeffs(active_degree)
        grads.sh[:, k_active:, :] = 0.0
        sh_lr = np.full((1, scene.sh.shape[1], 1), cfg.lr_sh / 20.0)
        sh_lr[0, 0, 0] = cfg.lr_sh

        pos_lr = _log_lerp(cfg.lr_position * extent,
                           cfg.lr_position_final * extent,
                           it / max(cfg.iterations - 1, 1))
        opt.step({"positions": grads.positions, "rotations": grads.rotations,
                  "log_scales": grads.log_scales,
                  "opacity_logits": grads.opacity_logits, "sh": grads.sh},
                 lr_overrides={"positions": pos_lr, "sh": sh_lr})
        scene.normalize_rotations()

        grad_accum += grads.view_grad_norm
        seen_count += grads.touched

        in_window = cfg.densify_start <= it < cfg.densify_stop
        if in_window and it % cfg.densify_interval == 0 and it > 0:
            mean_grad = grad_accum / np.maximum(seen_count, 1.0)
            scene = densify_and_prune(scene, mean_grad, cfg, extent, rng, opt)
            grad_accum = np.zeros(scene.count)
            seen_count = np.zeros(scene.count)

        if it % cfg.eval_interval == 0 or it == cfg.iterations - 1:
            row = {"iteration": it, "count": scene.count,
                   "total": report.total, "l1_color": report.l1_color,
                   "ssim_color": report.ssim_color,
                   "l1_alpha": report.l1_alpha,
                   "ssim_alpha": report.ssim_alpha}
            if val_targets is not None and val_cameras is not None:
                psnrs = []
                ssims = []
                for vt, vc in zip(val_targets, val_cameras):
                    img, _ = render_forward(scene, vc, cfg.mip)
                    rep = evaluate(img, vt)
                    if rep.psnr_masked is not None:
                        psnrs.append(min(rep.psnr_masked, 100.0))
                        ssims.append(rep.ssim)
                if psnrs:
                    row["val_psnr_masked"] = float(np.mean(psnrs))
                    row["val_ssim"] = float(np.mean(ssims))
            history.append(row)

    if cfg.checkpoint_dir:
        os.makedirs(cfg.checkpoint_dir, exist_ok=True)
        save_training_state(opt, cfg.iterations,
                            os.path.join(cfg.checkpoint_dir,
                                         "train_state.npz"))
    if cfg.mip:
        scene = smooth3d(scene, list(cameras))
    return scene, history


def _log_lerp(a: float, b: float, t: float) -> float:
    t = min(max(t, 0.0), 1.0)
    return float(np.exp(np.log(a) * (1 - t) + np.log(b) * t))


def save_training_state(opt: Adam, iteration: int, path: str) -> None:
    arrays = {}
    for k in opt.params:
        arrays[f"m_{k}"] = opt.m[k]
        arrays[f"v_{k}"] = opt.v[k]
    np.savez(path, iteration=iteration, t=opt.t, **arrays)


def load_training_state(path: str) -> dict:
    with np.load(path) as data:
        return {k: data[k] for k in data.files}
