import dataclasses

import numpy as np
import pytest
from scipy import stats

from volsplat import phantoms
from volsplat.camera import Camera
from volsplat.envmap import EnvironmentMap
from volsplat.image import psnr, tone_map
from volsplat.tracer import (Absorb, Escape, PathTraceConfig, Scatter,
                             delta_track, delta_track_event_counts,
                             emission_absorption_render, hg_sample,
                             iso_intersect, path_trace)
from volsplat.volume import (IsoConfig, Preset, TransferFunction, VolumeGrid,
                             build_occupancy)

from conftest import make_homogeneous_cube


def front_camera(res=48, dist=3.0, fov=0.8):
    return Camera((0, 0, -dist), (0, 0, 0), (0, 1, 0), fov, res, res)


class TestDeltaTracking:
    def test_empty_volume_always_escapes(self):
        vol = VolumeGrid.from_array(np.zeros((8, 8, 8)))
        preset = phantoms.ramp_preset()
        occ = build_occupancy(vol, preset, 4)
        rng = np.random.default_rng(0)
        for _ in range(20):
            ev = delta_track(vol, preset, occ, [-2, 0, 0], [1, 0, 0], rng)
            assert isinstance(ev, Escape)
            assert ev.transmitted == 1.0

    @pytest.mark.parametrize("sigma_d", [0.5, 1.0, 3.0])
    def test_beer_lambert_escape_fraction(self, sigma_d):
        vol, preset = make_homogeneous_cube(side=1.0, sigma=sigma_d)
        occ = build_occupancy(vol, preset, 4)
        n = 100_000
        counts = delta_track_event_counts(vol, preset, occ, [-2, 0, 0],
                                          [1, 0, 0], n, seed=11)
        p_want = np.exp(-sigma_d)
        se = np.sqrt(p_want * (1 - p_want) / n)
        p_got = counts["escape"] / n
        assert abs(p_got - p_want) <= 3 * se

    def test_loose_majorant_statistically_unchanged(self):
        vol, preset = make_homogeneous_cube(side=1.0, sigma=1.0)
        occ = build_occupancy(vol, preset, 4)
        loose = dataclasses.replace(occ, sigma_max=occ.sigma_max * 2.0)
        n = 100_000
        tight_c = delta_track_event_counts(vol, preset, occ, [-2, 0, 0],
                                           [1, 0, 0], n, seed=21)
        loose_c = delta_track_event_counts(vol, preset, loose, [-2, 0, 0],
                                           [1, 0, 0], n, seed=22)
        p1 = tight_c["escape"] / n
        p2 = loose_c["escape"] / n
        pooled = (tight_c["escape"] + loose_c["escape"]) / (2 * n)
        z = (p1 - p2) / np.sqrt(pooled * (1 - pooled) * 2 / n)
        assert abs(z) <= 3.0

    def test_albedo_splits_absorb_scatter(self):
        vol, preset = make_homogeneous_cube(side=1.0, sigma=3.0, albedo=0.5)
        occ = build_occupancy(vol, preset, 4)
        n = 50_000
        c = delta_track_event_counts(vol, preset, occ, [-2, 0, 0],
                                     [1, 0, 0], n, seed=31)
        collided = c["absorb"] + c["scatter"]
        assert collided > 0
        frac_scatter = c["scatter"] / collided
        se = np.sqrt(0.25 / collided)
        assert abs(frac_scatter - 0.5) <= 3 * se

    def test_event_types_carry_points(self):
        vol, preset = make_homogeneous_cube(side=1.0, sigma=50.0, albedo=0.5)
        occ = build_occupancy(vol, preset, 4)
        rng = np.random.default_rng(5)
        seen = set()
        for _ in range(50):
            ev = delta_track(vol, preset, occ, [-2, 0, 0], [1, 0, 0], rng)
            seen.add(type(ev).__name__)
            if isinstance(ev, (Absorb, Scatter)):
                assert -0.5 <= ev.point[0] <= 0.5
            if isinstance(ev, Absorb):
                assert np.all(ev.emission >= 0)
        assert "Absorb" in seen and "Scatter" in seen


class TestHenyeyGreenstein:
    def test_isotropic_cos_theta_uniform(self):
        rng = np.random.default_rng(0)
        incoming = np.array([0.0, 0.0, 1.0])
        cos_t = np.array([hg_sample(0.0, incoming, rng) @ incoming
                          for _ in range(20_000)])
        res = stats.kstest(cos_t, stats.uniform(loc=-1, scale=2).cdf)
        assert res.pvalue > 0.01

    def test_mean_cos_theta_equals_g(self):
        g = 0.7
        rng = np.random.default_rng(1)
        incoming = np.array([0.0, 1.0, 0.0])
        cos_t = np.array([hg_sample(g, incoming, rng) @ incoming
                          for _ in range(20_000)])
        se = cos_t.std(ddof=1) / np.sqrt(cos_t.size)
        assert abs(cos_t.mean() - g) <= 3 * se

    def test_output_always_unit(self):
        rng = np.random.default_rng(2)
        for _ in range(10_000):
            g = rng.uniform(-0.95, 0.95)
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            out = hg_sample(g, d, rng)
            assert abs(np.linalg.norm(out) - 1.0) <= 1e-6

    def test_g_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            hg_sample(1.0, np.array([0, 0, 1.0]), np.random.default_rng(0))


def iso_preset(threshold):
    surface_tf = TransferFunction.from_nodes(
        [(0.0, (0.8, 0.8, 0.8), 1.0), (1.0, (0.8, 0.8, 0.8), 1.0)])
    tf = TransferFunction.from_nodes(
        [(0.0, (0, 0, 0), 0.0), (1.0, (1, 1, 1), 0.1)], density_scale=1.0)
    return Preset(tf, iso=IsoConfig(threshold, surface_tf))


class TestIsoIntersect:
    def test_constant_volume_never_hits(self):
        vol = VolumeGrid.from_array(np.full((8, 8, 8), 0.5))
        hit = iso_intersect(vol, iso_preset(0.01), [-2, 0, 0], [1, 0, 0])
        assert hit is None

    def test_axis_aligned_step_plane(self):
        n = 16
        data = np.zeros((n, n, n))
        data[n // 2:, :, :] = 1.0  # step from 0 to 1 across x = plane
        vol = VolumeGrid.from_array(data, spacing=(1.0 / n,) * 3)
        # central differences across the step reach 0.5/h; use half that
        preset = iso_preset(0.25 * n)
        hit = iso_intersect(vol, preset, [-1.0, 0.5 - 0.5 / n, 0.5 - 0.5 / n],
                            [1, 0, 0])
        assert hit is not None
        point, normal = hit
        plane_x = vol.origin[0] + (n // 2 - 0.5) * vol.spacing[0]
        assert abs(point[0] - plane_x) <= 2.5 * vol.spacing[0]
        # gradient points +x; normal is its negation
        assert normal @ np.array([1.0, 0, 0]) < -0.95

    def test_threshold_above_max_gradient(self):
        vol = phantoms.sphere_volume(16)
        hit = iso_intersect(vol, iso_preset(1e9), [-2, 0, 0], [1, 0, 0])
        assert hit is None


class TestEmissionAbsorption:
    def test_empty_volume_fully_transparent(self):
        vol = VolumeGrid.from_array(np.zeros((8, 8, 8)))
        img = emission_absorption_render(vol, phantoms.ramp_preset(),
                                         front_camera(32))
        assert np.all(img.pixels == 0.0)

    def test_step_halving_converged(self):
        vol, preset = phantoms.sphere_scene(32)
        cam = front_camera(48)
        a = emission_absorption_render(vol, preset, cam, 0.0625)
        b = emission_absorption_render(vol, preset, cam, 0.03125)
        assert np.max(np.abs(a.pixels - b.pixels)) <= 1e-3

    def test_single_opaque_voxel_saturates(self):
        vol = VolumeGrid.from_array(np.ones((1, 1, 1)))
        tf = TransferFunction.from_nodes(
            [(0.0, (1, 1, 1), 1.0), (1.0, (1, 1, 1), 1.0)], density_scale=1e4)
        img = emission_absorption_render(vol, Preset(tf), front_camera(9, 2.0))
        assert img.alpha[4, 4] >= 0.99

    def test_deterministic(self):
        vol, preset = phantoms.sphere_scene(16)
        cam = front_camera(24)
        a = emission_absorption_render(vol, preset, cam)
        b = emission_absorption_render(vol, preset, cam)
        assert np.array_equal(a.pixels, b.pixels)


class TestPathTrace:
    def test_empty_volume_transparent_black(self):
        vol = VolumeGrid.from_array(np.zeros((8, 8, 8)))
        preset = phantoms.ramp_preset()
        occ = build_occupancy(vol, preset, 4)
        env = EnvironmentMap.constant(3.0)
        preset_env = dataclasses.replace(
            preset, lighting=dataclasses.replace(
                preset.lighting, mode="environment",
                environment_path="(in-memory)"))
        img = path_trace(vol, preset_env, occ, front_camera(16),
                         PathTraceConfig(spp=4, seed=0), env=env)
        assert np.all(img.pixels == 0.0)

    def test_fixed_seed_bit_identical(self, sphere_scene):
        vol, preset, occ = sphere_scene
        cfg = PathTraceConfig(spp=8, seed=42)
        a = path_trace(vol, preset, occ, front_camera(24), cfg)
        b = path_trace(vol, preset, occ, front_camera(24), cfg)
        assert np.array_equal(a.pixels, b.pixels)

    def test_alpha_matches_beer_lambert_on_slab(self):
        sigma = 2.0
        vol, preset = make_homogeneous_cube(side=1.0, sigma=sigma, albedo=0.3)
        occ = build_occupancy(vol, preset, 4)
        cam = Camera((0, 0, -4), (0, 0, 0), (0, 1, 0), 0.25, 17, 17)
        img = path_trace(vol, preset, occ, cam,
                         PathTraceConfig(spp=128, seed=3,
                                         tone_map_enabled=False))
        want = 1.0 - np.exp(-sigma * 1.0)
        assert abs(img.alpha[8, 8] - want) <= 0.02

    def test_matches_ray_marcher_albedo_zero(self):
        vol = phantoms.sphere_volume(64)
        preset = phantoms.ramp_preset(albedo=0.0)
        occ = build_occupancy(vol, preset, 4)
        cam = front_camera(64)
        ea = tone_map(emission_absorption_render(vol, preset, cam, 0.125))
        pt = path_trace(vol, preset, occ, cam, PathTraceConfig(spp=64, seed=7))
        assert psnr(pt.pixels, ea.pixels) >= 35.0

    def test_energy_bound_under_constant_environment(self):
        radiance = 2.0
        vol, preset = make_homogeneous_cube(side=1.0, sigma=4.0, albedo=0.9,
                                            color=(0.0, 0.0, 0.0))
        preset = dataclasses.replace(
            preset, lighting=dataclasses.replace(
                preset.lighting, mode="environment",
                environment_path="(in-memory)"))
        occ = build_occupancy(vol, preset, 4)
        env = EnvironmentMap.constant(radiance)
        img = path_trace(vol, preset, occ, front_camera(24),
                         PathTraceConfig(spp=256, seed=9,
                                         tone_map_enabled=False),
                         env=env)
        assert img.rgb.max() <= radiance * 1.15

    def test_empty_space_skipping_changes_only_noise(self, sphere_scene):
        vol, preset, occ = sphere_scene
        cam = front_camera(32)
        base = PathTraceConfig(spp=16, seed=100, tone_map_enabled=False)
        img_on = path_trace(vol, preset, occ, cam, base)
        img_off = path_trace(vol, preset, occ, cam,
                             dataclasses.replace(base,
                                                 empty_space_skipping=False))
        other_seed = path_trace(vol, preset, occ, cam,
                                dataclasses.replace(base, seed=101))
        noise = np.sqrt(np.mean((img_on.pixels - other_seed.pixels) ** 2))
        diff = np.sqrt(np.mean((img_on.pixels - img_off.pixels) ** 2))
        assert diff <= 1.5 * noise

    def test_headlight_scattering_adds_light(self, sphere_scene):
        vol, preset, occ = sphere_scene
        cam = front_camera(24)
        lit = path_trace(vol, preset, occ, cam,
                         PathTraceConfig(spp=32, seed=1,
                                         tone_map_enabled=False))
        dark = path_trace(vol, dataclasses.replace(preset, scatter_albedo=0.0),
                          occ, cam, PathTraceConfig(spp=32, seed=1,
                                                    tone_map_enabled=False))
        assert lit.rgb.sum() != dark.rgb.sum()

    def test_iso_surface_renders_opaque(self):
        vol = phantoms.sphere_volume(32)
        surface_tf = TransferFunction.from_nodes(
            [(0.0, (0.9, 0.2, 0.2), 1.0), (1.0, (0.9, 0.2, 0.2), 1.0)])
        tf = TransferFunction.from_nodes(
            [(0.0, (0, 0, 0), 0.0), (1.0, (0.5, 0.5, 0.5), 0.05)])
        preset = Preset(tf, iso=IsoConfig(2.0, surface_tf))
        occ = build_occupancy(vol, preset, 4)
        img = path_trace(vol, preset, occ, front_camera(24),
                         PathTraceConfig(spp=16, seed=4,
                                         tone_map_enabled=False))
        assert img.alpha[12, 12] >= 0.999
