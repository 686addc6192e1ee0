"""Monte Carlo volume path tracing and the deterministic ray-march oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..camera import Camera
from ..envmap import EnvironmentMap
from ..image import RgbaImage, ToneMapSettings, tone_map
from ..volume import OccupancyGrid, Preset, VolumeGrid
from . import kernels as K


@dataclass
class PathTraceConfig:
    spp: int = 64
    max_scatter_events: int = 32
    russian_roulette_start: int = 4
    hg_anisotropy: float = 0.0
    seed: int = 0
    tone_map: ToneMapSettings = field(default_factory=ToneMapSettings)
    tone_map_enabled: bool = True
    empty_space_skipping: bool = True

    def __post_init__(self):
        if self.spp < 1:
            raise ValueError("spp must be >= 1")
        if not -1.0 < self.hg_anisotropy < 1.0:
            raise ValueError("hg anisotropy must lie in (-1, 1)")
        if self.russian_roulette_start > self.max_scatter_events:
            raise ValueError("russian_roulette_start must be <= max_scatter_events")


@dataclass(frozen=True)
class Absorb:
    point: np.ndarray
    emission: np.ndarray


@dataclass(frozen=True)
class Scatter:
    point: np.ndarray


@dataclass(frozen=True)
class Escape:
    transmitted: float = 1.0


def _volume_args(volume: VolumeGrid):
    lo, hi = volume.bbox
    return (volume.data, volume.dims[0], volume.dims[1], volume.dims[2],
            volume.origin[0], volume.origin[1], volume.origin[2],
            volume.spacing[0], volume.spacing[1], volume.spacing[2]), lo, hi


def _occ_args(volume: VolumeGrid, occ: OccupancyGrid):
    lo, _ = volume.bbox
    bw = (occ.block_size * volume.spacing[0],
          occ.block_size * volume.spacing[1],
          occ.block_size * volume.spacing[2])
    return (np.ascontiguousarray(occ.traversal_flags),
            occ.dims[0], occ.dims[1], occ.dims[2],
            bw[0], bw[1], bw[2])


def _iso_args(volume: VolumeGrid, preset: Preset):
    if preset.iso is None:
        dummy = np.zeros(2)
        dummy_col = np.zeros((2, 3))
        return (False, 1.0, 0.0, np.array([0.0, 1.0]), dummy_col, dummy)
    step = 0.5 * min(volume.spacing)
    tf = preset.iso.surface_tf
    return (True, step, preset.iso.gradient_threshold,
            np.asarray(tf.positions), np.asarray(tf.colors),
            np.asarray(tf.sigmas) * tf.density_scale)


def _env_args(preset: Preset, env: EnvironmentMap | None):
    if preset.lighting.mode == "environment":
        if env is None:
            raise ValueError("preset uses environment lighting; pass an "
                             "EnvironmentMap")
        rgb, row_cdf, cond_cdf, cos_edges = env.tables()
        return 0, rgb, row_cdf, cond_cdf, cos_edges, 0.0
    dummy_rgb = np.zeros((1, 2, 3))
    return (1, dummy_rgb, np.ones(1), np.ones((1, 2)),
            np.array([1.0, -1.0]), preset.lighting.headlight_intensity)


def delta_track(volume: VolumeGrid, preset: Preset, occ: OccupancyGrid,
                origin, direction, rng: np.random.Generator,
                use_skipping: bool = True):
    """Sample one binary collision event along a ray.

    Returns Absorb(point, emission), Scatter(point), or Escape(transmitted=1).
    """
    vol, lo, hi = _volume_args(volume)
    tf_pos, tf_col, tf_sig, planes = preset.tables()
    occ_a = _occ_args(volume, occ)
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    o = np.asarray(origin, dtype=np.float64)
    state = np.uint64(K.rng_init(int(rng.integers(0, 2**63)), 0, 0))
    _, code, px, py, pz, er, eg, eb = K.delta_track_single(
        state, o[0], o[1], o[2], d[0], d[1], d[2], *vol,
        tf_pos, tf_sig, tf_col, planes, preset.scatter_albedo, *occ_a,
        lo[0], lo[1], lo[2], hi[0], hi[1], hi[2], occ.sigma_max, use_skipping)
    if code == 2:
        return Escape()
    if code == 1:
        return Scatter(np.array([px, py, pz]))
    return Absorb(np.array([px, py, pz]), np.array([er, eg, eb]))


def delta_track_event_counts(volume: VolumeGrid, preset: Preset,
                             occ: OccupancyGrid, origin, direction,
                             n_rays: int, seed: int,
                             use_skipping: bool = True) -> dict:
    """Event histogram over many identical rays (statistical tests)."""
    vol, lo, hi = _volume_args(volume)
    tf_pos, tf_col, tf_sig, planes = preset.tables()
    occ_a = _occ_args(volume, occ)
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    o = np.asarray(origin, dtype=np.float64)
    counts = K.delta_track_events(
        n_rays, seed, o[0], o[1], o[2], d[0], d[1], d[2], *vol,
        tf_pos, tf_sig, tf_col, planes, preset.scatter_albedo, *occ_a,
        lo[0], lo[1], lo[2], hi[0], hi[1], hi[2], occ.sigma_max, use_skipping)
    return {"absorb": int(counts[0]), "scatter": int(counts[1]),
            "escape": int(counts[2])}


def hg_sample(g: float, incoming, rng: np.random.Generator) -> np.ndarray:
    """Henyey-Greenstein direction sample around the propagation direction."""
    if not -1.0 < g < 1.0:
        raise ValueError("g must lie in (-1, 1)")
    w = np.asarray(incoming, dtype=np.float64)
    w = w / np.linalg.norm(w)
    cos_t = K.hg_cos(g, float(rng.random()))
    phi = 2.0 * np.pi * float(rng.random())
    return np.array(K.direction_from_cos(w[0], w[1], w[2], cos_t, phi))


def hg_pdf(g: float, cos_theta) -> np.ndarray:
    """Phase-function value, normalized over the sphere."""
    cos_theta = np.asarray(cos_theta, dtype=np.float64)
    denom = 1.0 + g * g - 2.0 * g * cos_theta
    return (1.0 - g * g) / (4.0 * np.pi * denom ** 1.5)


def iso_intersect(volume: VolumeGrid, preset: Preset, origin, direction):
    """First gradient-threshold surface hit: (point, normal) or None."""
    if preset.iso is None:
        raise ValueError("preset has no iso-surface configuration")
    vol, lo, hi = _volume_args(volume)
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    o = np.asarray(origin, dtype=np.float64)
    t0, t1 = K.ray_bbox(o[0], o[1], o[2], d[0], d[1], d[2],
                        lo[0], lo[1], lo[2], hi[0], hi[1], hi[2])
    t0 = max(t0, 0.0)
    if t1 < t0:
        return None
    step = 0.5 * min(volume.spacing)
    t_hit, nx, ny, nz = K.iso_march(*vol, o[0], o[1], o[2], d[0], d[1], d[2],
                                    t0, t1, step,
                                    preset.iso.gradient_threshold, True)
    if t_hit < 0.0:
        return None
    return o + t_hit * d, np.array([nx, ny, nz])


def nee_light_sample(env: EnvironmentMap, shade_point, rng: np.random.Generator):
    """Importance-sample the environment: (direction, radiance, pdf)."""
    return env.sample(rng.random(4))


def path_trace(volume: VolumeGrid, preset: Preset, occ: OccupancyGrid,
               cam: Camera, cfg: PathTraceConfig,
               env: EnvironmentMap | None = None) -> RgbaImage:
    """Monte Carlo estimate of the preset-baked view; deterministic per seed.

    Pixels average cfg.spp primary-ray samples; alpha is one minus the mean
    transmittance to escape; the configured tone map is applied unless
    disabled. The output stores premultiplied color over a transparent
    background (environment light enters only by scattering).
    """
    vol, lo, hi = _volume_args(volume)
    tf_pos, tf_col, tf_sig, planes = preset.tables()
    occ_a = _occ_args(volume, occ)
    iso_on, iso_step, iso_thr, iso_pos, iso_col, iso_sig = _iso_args(volume, preset)
    env_mode, env_rgb, row_cdf, cond_cdf, cos_edges, head_i = _env_args(preset, env)

    m = cam.view_matrix()
    cam_r = np.ascontiguousarray(m[:3, :3])
    cam_pos = np.asarray(cam.position, dtype=np.float64)
    pixels = K.path_trace_image(
        cam.width, cam.height, cam_r, cam_pos, cam.focal,
        cfg.spp, cfg.seed, *vol,
        tf_pos, tf_sig, tf_col, planes, preset.scatter_albedo, *occ_a,
        lo[0], lo[1], lo[2], hi[0], hi[1], hi[2], occ.sigma_max,
        cfg.empty_space_skipping,
        env_mode, env_rgb, row_cdf, cond_cdf, cos_edges, head_i,
        cfg.hg_anisotropy, cfg.max_scatter_events, cfg.russian_roulette_start,
        iso_on, iso_step, iso_thr, iso_pos, iso_col, iso_sig)
    image = RgbaImage(pixels, meta={
        "renderer": "path-tracer", "spp": cfg.spp, "seed": cfg.seed})
    if cfg.tone_map_enabled:
        image = tone_map(image, cfg.tone_map)
    return image


def emission_absorption_render(volume: VolumeGrid, preset: Preset, cam: Camera,
                               step_scale: float = 0.25) -> RgbaImage:
    """Deterministic emission-absorption compositing (linear output).

    step_scale is the march step as a fraction of the smallest voxel spacing.
    """
    if step_scale <= 0.0:
        raise ValueError("step_scale must be > 0")
    vol, lo, hi = _volume_args(volume)
    tf_pos, tf_col, tf_sig, planes = preset.tables()
    step = step_scale * min(volume.spacing)
    m = cam.view_matrix()
    cam_r = np.ascontiguousarray(m[:3, :3])
    cam_pos = np.asarray(cam.position, dtype=np.float64)
    pixels = K.ea_render_image(cam.width, cam.height, cam_r, cam_pos,
                               cam.focal, step, *vol,
                               tf_pos, tf_sig, tf_col, planes,
                               lo[0], lo[1], lo[2], hi[0], hi[1], hi[2])
    return RgbaImage(pixels, meta={"renderer": "emission-absorption",
                                   "step_scale": step_scale})
