import json
import os

import numpy as np
import pytest

from volsplat import phantoms
from volsplat.cli import (ManifestError, load_manifest, main, run_compress,
                          run_decompress, run_evaluate, run_render,
                          run_select_views, run_train)
from volsplat.volume import save_preset, save_volume


@pytest.fixture
def workdir(tmp_path):
    vol = phantoms.sphere_volume(32)
    preset = phantoms.ramp_preset(density_scale=6.0, albedo=0.0)
    save_volume(vol, str(tmp_path / "vol.raw"), dtype="u8")
    save_preset(preset, str(tmp_path / "preset.json"))
    manifest = {
        "volume": "vol.raw",
        "preset": "preset.json",
        "output_dir": "out",
        "seed": 3,
        "view_selection": {"n_phase1": 8, "n_phase2": 2, "resolution": 48,
                           "candidates_per_iter": 16, "eval_budget": 2},
        "render": {"mode": "ea", "step_scale": 0.25, "test_every": 4},
        "train": {"iterations": 120, "init": "volume", "init_downsample": 4,
                  "sh_degree": 1, "densify_start": 40, "densify_interval": 40,
                  "densify_stop": 100, "eval_interval": 40},
        "compress": {"profiles": ["HQ", "HR"], "finetune_iters": 10,
                     "codebook_size": 16},
    }
    mpath = tmp_path / "run.json"
    mpath.write_text(json.dumps(manifest))
    return str(mpath)


class TestManifest:
    def test_missing_volume_names_path(self, tmp_path):
        mpath = tmp_path / "bad.json"
        mpath.write_text(json.dumps({"volume": "nope.raw",
                                     "preset": "p.json",
                                     "output_dir": "out"}))
        with pytest.raises(ManifestError) as ex:
            load_manifest(str(mpath))
        assert "nope.raw" in str(ex.value)

    def test_missing_key(self, tmp_path):
        mpath = tmp_path / "bad.json"
        mpath.write_text(json.dumps({"volume": "v.raw"}))
        with pytest.raises(ManifestError):
            load_manifest(str(mpath))

    def test_cli_exit_codes(self, tmp_path):
        mpath = tmp_path / "bad.json"
        mpath.write_text(json.dumps({"volume": "nope.raw",
                                     "preset": "p.json",
                                     "output_dir": "out"}))
        assert main(["select-views", str(mpath)]) == 2
        assert main(["select-views", str(tmp_path / "missing.json")]) == 2


class TestStages:
    def test_select_views_writes_cameras(self, workdir):
        manifest = load_manifest(workdir)
        out = run_select_views(manifest)
        assert out["n_cameras"] == 10
        assert os.path.exists(out["cameras"])
        assert os.path.exists(out["coverage"])

    def test_select_views_default_count_is_99(self, workdir):
        manifest = load_manifest(workdir)
        del manifest["view_selection"]["n_phase1"]
        del manifest["view_selection"]["n_phase2"]
        # default phase counts follow the 64 + 35 convention
        from volsplat.views import ViewSelectConfig
        assert ViewSelectConfig().n_phase1 + ViewSelectConfig().n_phase2 == 99

    def test_rerun_same_seed_identical_cameras(self, workdir):
        manifest = load_manifest(workdir)
        run_select_views(manifest)
        first = open(os.path.join(manifest["output_dir"],
                                  "cameras.json"), "rb").read()
        run_select_views(manifest)
        second = open(os.path.join(manifest["output_dir"],
                                   "cameras.json"), "rb").read()
        assert first == second

    def test_render_split_arithmetic(self, workdir):
        manifest = load_manifest(workdir)
        run_select_views(manifest)
        out = run_render(manifest)
        # 10 cameras, every 4th held out starting at index 3 -> 2 test views
        assert out["n_test"] == 2
        assert out["n_train"] == 8

    def test_full_pipeline_smoke(self, workdir):
        manifest = load_manifest(workdir)
        run_select_views(manifest)
        run_render(manifest)
        t = run_train(manifest)
        assert os.path.exists(t["scene"])
        assert t["gaussians"] > 0
        c = run_compress(manifest)
        assert os.path.exists(c["HQ"]["path"])
        assert os.path.exists(c["HR"]["path"])
        assert c["HQ"]["bytes"] > c["HR"]["bytes"] * 0.3  # both nonempty
        d = run_decompress(manifest)
        assert os.path.exists(d["HQ"]) and os.path.exists(d["HR"])
        e = run_evaluate(manifest)
        assert "raw" in e["scenes"] and "HQ" in e["scenes"]
        # summary sizes must match the encoder-reported sizes exactly
        assert e["scenes"]["HQ"]["bytes"] == c["HQ"]["bytes"]
        assert e["scenes"]["HR"]["bytes"] == c["HR"]["bytes"]
        summary = json.load(open(os.path.join(manifest["output_dir"],
                                              "run_summary.json")))
        assert "compression_factors" in summary

    def test_empty_preset_renders_transparent(self, workdir, tmp_path):
        manifest = load_manifest(workdir)
        from volsplat.volume import TransferFunction, Preset
        empty = Preset(TransferFunction.from_nodes(
            [(0.0, (0, 0, 0), 0.0), (1.0, (0, 0, 0), 0.0)]))
        save_preset(empty, manifest["preset"])
        run_select_views(manifest)
        run_render(manifest)
        from volsplat.image import read_float_image
        img = read_float_image(os.path.join(manifest["output_dir"], "images",
                                            "view_0000.rgba32"))
        assert np.all(img.pixels == 0.0)
