import numpy as np
import pytest

from volsplat.camera import Camera, load_cameras, save_cameras
from volsplat.image import (RgbaImage, ToneMapSettings, psnr, read_float_image,
                            read_png, srgb_decode, srgb_encode, tone_map,
                            write_float_image, write_png)


@pytest.fixture
def cam():
    return Camera((0, 0, -3), (0, 0, 0), (0, 1, 0), 0.8, 64, 48)


class TestCamera:
    def test_view_matrix_is_rigid(self, cam):
        m = cam.view_matrix()
        r = m[:3, :3]
        assert np.allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.isclose(np.linalg.det(r), 1.0)

    def test_look_at_projects_to_center(self, cam):
        pix, z = cam.project([cam.look_at])
        assert np.allclose(pix[0], [cam.width / 2, cam.height / 2])
        assert z[0] > 0

    def test_behind_camera_negative_depth(self, cam):
        _, z = cam.project([[0, 0, -10]])
        assert z[0] < 0

    def test_ray_directions_unit_and_forward(self, cam):
        dirs = cam.ray_directions()
        assert np.allclose(np.linalg.norm(dirs, axis=-1), 1.0, atol=1e-12)
        fwd = np.asarray(cam.look_at) - np.asarray(cam.position)
        fwd = fwd / np.linalg.norm(fwd)
        center = dirs[cam.height // 2, cam.width // 2]
        assert center @ fwd > 0.999

    def test_frustum_tests(self, cam):
        assert cam.in_frustum([[0, 0, 0]])[0]
        assert not cam.in_frustum([[0, 0, -10]])[0]
        assert cam.frustum_contains_bbox([-0.3, -0.3, -0.3], [0.3, 0.3, 0.3])
        assert cam.frustum_intersects_bbox([-0.3, -0.3, -0.3], [0.3, 0.3, 0.3])
        assert not cam.frustum_intersects_bbox([50, 50, 50], [51, 51, 51])

    def test_camera_list_round_trip(self, tmp_path, cam):
        cams = [cam, Camera((1, 2, 3), (0, 0, 0), (0, 0, 1), 1.0, 32, 32)]
        path = tmp_path / "cams.json"
        save_cameras(cams, str(path))
        back = load_cameras(str(path))
        assert back == cams


class TestImage:
    def test_png_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        img = RgbaImage(rng.random((17, 23, 4)), tone_mapped=True)
        path = str(tmp_path / "x.png")
        write_png(img, path)
        back = read_png(path)
        assert back.pixels.shape == img.pixels.shape
        assert np.max(np.abs(back.pixels - img.pixels)) <= 0.5 / 65535 + 1e-9

    def test_float_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        img = RgbaImage(rng.random((5, 7, 4)) * 3.0, meta={"spp": 4})
        path = str(tmp_path / "x.rgba32")
        write_float_image(img, path)
        back = read_float_image(path)
        assert np.allclose(back.pixels, img.pixels, atol=1e-6)
        assert back.meta == {"spp": 4}

    def test_srgb_round_trip(self):
        x = np.linspace(0, 1, 256)
        assert np.allclose(srgb_decode(srgb_encode(x)), x, atol=1e-12)

    def test_tone_map_alpha_unchanged_and_monotone(self):
        rng = np.random.default_rng(2)
        img = RgbaImage(rng.random((4, 4, 4)) * 5)
        out = tone_map(img, ToneMapSettings(exposure=2.0))
        assert np.array_equal(out.alpha, img.alpha)
        assert out.tone_mapped
        # Reinhard + sRGB keeps values in [0, 1) and preserves order
        assert out.rgb.max() < 1.0
        flat_in = img.rgb.ravel()
        flat_out = out.rgb.ravel()
        order = np.argsort(flat_in)
        assert np.all(np.diff(flat_out[order]) >= -1e-12)

    def test_double_tone_map_rejected(self):
        img = tone_map(RgbaImage(np.zeros((2, 2, 4))))
        with pytest.raises(ValueError):
            tone_map(img)

    def test_psnr_closed_form(self):
        # MSE of 0.01 -> exactly 20 dB
        a = np.zeros((10, 10))
        b = np.full((10, 10), 0.1)
        assert np.isclose(psnr(a, b), 20.0)
        assert psnr(a, a) == float("inf")
