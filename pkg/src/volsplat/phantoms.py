"""Synthetic volumes and presets for tests, demos, and benchmarks."""

from __future__ import annotations

import numpy as np

from .volume import Preset, TransferFunction, VolumeGrid


def _radial_grid(n: int):
    """Normalized radius from the volume center, for an n^3 grid."""
    c = (n - 1) / 2.0
    ax = (np.arange(n) - c) / c
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    return np.sqrt(x * x + y * y + z * z)


def sphere_volume(n: int = 64, radius: float = 0.7, falloff: float = 0.15) -> VolumeGrid:
    """Soft-edged solid ball: scalar 1 inside, smooth ramp to 0 at the surface."""
    r = _radial_grid(n)
    v = np.clip((radius - r) / falloff + 0.5, 0.0, 1.0)
    return VolumeGrid.from_array(v, spacing=(2.0 / n,) * 3,
                                 origin=(-1.0 + 1.0 / n,) * 3)


def hollow_shell_volume(n: int = 64, outer: float = 0.8, inner: float = 0.55,
                        falloff: float = 0.08) -> VolumeGrid:
    """Spherical shell with an empty interior cavity."""
    r = _radial_grid(n)
    outer_m = np.clip((outer - r) / falloff + 0.5, 0.0, 1.0)
    inner_m = np.clip((r - inner) / falloff + 0.5, 0.0, 1.0)
    return VolumeGrid.from_array(outer_m * inner_m, spacing=(2.0 / n,) * 3,
                                 origin=(-1.0 + 1.0 / n,) * 3)


def shell_with_core_volume(n: int = 64, outer: float = 0.8, inner: float = 0.6,
                           core: float = 0.22, falloff: float = 0.06) -> VolumeGrid:
    """Opaque shell around an empty gap hiding a small core object.

    Exterior cameras see the core only through the shell, so covering it
    demands viewpoints inside the cavity (the rib-cage situation).
    """
    r = _radial_grid(n)
    shell = np.clip((outer - r) / falloff + 0.5, 0.0, 1.0) \
        * np.clip((r - inner) / falloff + 0.5, 0.0, 1.0)
    core_m = np.clip((core - r) / falloff + 0.5, 0.0, 1.0)
    return VolumeGrid.from_array(np.maximum(shell, core_m),
                                 spacing=(2.0 / n,) * 3,
                                 origin=(-1.0 + 1.0 / n,) * 3)


def nested_spheres_volume(n: int = 64, outer: float = 0.8,
                          inner: float = 0.4) -> VolumeGrid:
    """Two materials: scalar ~0.45 in the outer shell, ~0.95 in the core."""
    r = _radial_grid(n)
    v = np.zeros_like(r)
    v[r <= outer] = 0.45
    v[r <= inner] = 0.95
    # small smooth ramps keep gradients finite for iso tests
    v = 0.9 * v + 0.1 * np.clip(1.0 - r, 0.0, 1.0) * (v > 0)
    return VolumeGrid.from_array(v, spacing=(2.0 / n,) * 3,
                                 origin=(-1.0 + 1.0 / n,) * 3)


def ramp_preset(density_scale: float = 12.0, threshold: float = 0.25,
                color=(0.9, 0.62, 0.45), albedo: float = 0.8,
                clip_planes=()) -> Preset:
    """Monotone threshold ramp: empty below `threshold`, tinted material above."""
    tf = TransferFunction.from_nodes(
        [(0.0, (0.0, 0.0, 0.0), 0.0),
         (threshold, (0.0, 0.0, 0.0), 0.0),
         (min(threshold + 0.2, 0.999), color, 0.8),
         (1.0, color, 1.0)],
        density_scale=density_scale)
    return Preset(tf, clip_planes=tuple(clip_planes), scatter_albedo=albedo)


def two_material_preset(density_scale: float = 14.0) -> Preset:
    """Distinct soft outer tissue and a dense bright core."""
    tf = TransferFunction.from_nodes(
        [(0.0, (0.0, 0.0, 0.0), 0.0),
         (0.2, (0.0, 0.0, 0.0), 0.0),
         (0.45, (0.85, 0.4, 0.3), 0.35),
         (0.7, (0.85, 0.5, 0.35), 0.5),
         (0.9, (0.95, 0.9, 0.75), 1.0),
         (1.0, (1.0, 0.97, 0.9), 1.0)],
        density_scale=density_scale)
    return Preset(tf)


def sphere_scene(n: int = 64):
    """Convenience bundle used by most tests: (volume, preset)."""
    return sphere_volume(n), ramp_preset()


def hollow_shell_scene(n: int = 64):
    return hollow_shell_volume(n), ramp_preset(density_scale=20.0)
