"""Pipeline orchestration: one manifest, one subcommand per stage.

Stages communicate only through files in the manifest's output directory, so
any stage can be re-run in isolation; artifact hashes are logged to make
reproducibility checkable. Exit codes: 0 success, 2 manifest/validation
error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import compress as C
from . import metrics as M
from . import train as T
from .camera import load_cameras, save_cameras
from .envmap import load_hdr
from .image import (RgbaImage, ToneMapSettings, read_float_image, tone_map,
                    write_float_image, write_png)
from .splats import load_scene, rasterize, save_scene
from .tracer import PathTraceConfig, emission_absorption_render, path_trace
from .views import ViewSelectConfig, save_coverage_report, select_views
from .volume import build_occupancy, load_preset, load_volume


class ManifestError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage


def load_manifest(path: str) -> dict:
    if not os.path.exists(path):
        raise ManifestError(f"manifest not found: {path}")
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest is not valid JSON: {exc}") from exc
    for key in ("volume", "preset", "output_dir"):
        if key not in doc:
            raise ManifestError(f"manifest missing required key {key!r}")
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    doc["volume"] = resolve(doc["volume"])
    doc["preset"] = resolve(doc["preset"])
    if "volume_meta" in doc:
        doc["volume_meta"] = resolve(doc["volume_meta"])
    doc["output_dir"] = resolve(doc["output_dir"])
    for key, required in (("volume", True), ("preset", True),
                          ("volume_meta", False)):
        if key in doc and not os.path.exists(doc[key]):
            if required or key in doc:
                raise ManifestError(f"{key} file not found: {doc[key]}")
    doc.setdefault("seed", 0)
    return doc


def _load_scene_inputs(manifest):
    volume = load_volume(manifest["volume"], manifest.get("volume_meta"))
    preset = load_preset(manifest["preset"])
    return volume, preset


def _out(manifest, *parts) -> str:
    path = os.path.join(manifest["output_dir"], *parts)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    return path


def _log_hashes(manifest, paths):
    entry = {}
    for p in paths:
        with open(p, "rb") as fh:
            entry[os.path.relpath(p, manifest["output_dir"])] = \
                hashlib.sha256(fh.read()).hexdigest()
    log_path = _out(manifest, "hashes.json")
    existing = {}
    if os.path.exists(log_path):
        with open(log_path) as fh:
            existing = json.load(fh)
    existing.update(entry)
    with open(log_path, "w") as fh:
        json.dump(existing, fh, indent=1, sort_keys=True)
        fh.write("\n")


def run_select_views(manifest: dict) -> dict:
    volume, preset = _load_scene_inputs(manifest)
    cfg_doc = manifest.get("view_selection", {})
    cfg = ViewSelectConfig(
        n_phase1=cfg_doc.get("n_phase1", 64),
        n_phase2=cfg_doc.get("n_phase2", 35),
        seed=manifest["seed"],
        resolution=cfg_doc.get("resolution", 256),
        candidates_per_iter=cfg_doc.get("candidates_per_iter", 128),
        eval_budget=cfg_doc.get("eval_budget", 8))
    occ = build_occupancy(volume, preset,
                          cfg_doc.get("block_size", 4))
    cams, vis, report = select_views(volume, preset, cfg, occ)
    cam_path = _out(manifest, "cameras.json")
    save_cameras(cams, cam_path)
    report_path = _out(manifest, "coverage.json")
    save_coverage_report(report, report_path)
    _log_hashes(manifest, [cam_path, report_path])
    return {"cameras": cam_path, "coverage": report_path,
            "n_cameras": len(cams), "report": report}


def run_render(manifest: dict) -> dict:
    volume, preset = _load_scene_inputs(manifest)
    cam_path = _out(manifest, "cameras.json")
    if not os.path.exists(cam_path):
        raise StageError("render", f"cameras file missing: {cam_path}; "
                         "run select-views first")
    cams = load_cameras(cam_path)
    cfg = manifest.get("render", {})
    mode = cfg.get("mode", "pathtrace")
    test_every = cfg.get("test_every", 8)

    env = None
    if preset.lighting.mode == "environment":
        env_path = preset.lighting.environment_path
        if not os.path.isabs(env_path):
            env_path = os.path.join(os.path.dirname(manifest["preset"]),
                                    env_path)
        env = load_hdr(env_path)

    occ = None
    if mode == "pathtrace":
        occ = build_occupancy(volume, preset, cfg.get("block_size", 4))

    paths = []
    for i, cam in enumerate(cams):
        if mode == "ea":
            img = emission_absorption_render(volume, preset, cam,
                                             cfg.get("step_scale", 0.125))
        elif mode == "pathtrace":
            pt_cfg = PathTraceConfig(
                spp=cfg.get("spp", 64),
                seed=manifest["seed"] * 100003 + i,
                hg_anisotropy=cfg.get("hg_anisotropy", 0.0),
                max_scatter_events=cfg.get("max_scatter_events", 32),
                russian_roulette_start=cfg.get("russian_roulette_start", 4),
                tone_map=ToneMapSettings(exposure=preset.exposure))
            img = path_trace(volume, preset, occ, cam, pt_cfg, env)
        else:
            raise StageError("render", f"unknown render mode {mode!r}")
        raw_path = _out(manifest, "images", f"view_{i:04d}.rgba32")
        write_float_image(img, raw_path)
        png = img if img.tone_mapped else tone_map(
            img, ToneMapSettings(exposure=preset.exposure))
        write_png(png, _out(manifest, "images", f"view_{i:04d}.png"))
        paths.append(raw_path)

    # hold out every test_every-th view, starting so n=99 -> 87 + 12
    test_idx = list(range(test_every - 1, len(cams), test_every))
    train_idx = [i for i in range(len(cams)) if i not in set(test_idx)]
    split_path = _out(manifest, "split.json")
    with open(split_path, "w") as fh:
        json.dump({"train": train_idx, "test": test_idx}, fh)
        fh.write("\n")
    _log_hashes(manifest, paths + [split_path])
    return {"n_train": len(train_idx), "n_test": len(test_idx),
            "split": split_path}


def _load_split(manifest):
    split_path = _out(manifest, "split.json")
    if not os.path.exists(split_path):
        raise StageError("train", f"split file missing: {split_path}; "
                         "run render first")
    with open(split_path) as fh:
        split = json.load(fh)
    cams = load_cameras(_out(manifest, "cameras.json"))

    def load_set(indices):
        images = [read_float_image(
            _out(manifest, "images", f"view_{i:04d}.rgba32"))
            for i in indices]
        return images, [cams[i] for i in indices]

    train_imgs, train_cams = load_set(split["train"])
    test_imgs, test_cams = load_set(split["test"])
    return train_imgs, train_cams, test_imgs, test_cams


def run_train(manifest: dict) -> dict:
    volume, preset = _load_scene_inputs(manifest)
    train_imgs, train_cams, test_imgs, test_cams = _load_split(manifest)
    cfg_doc = manifest.get("train", {})
    sh_degree = cfg_doc.get("sh_degree", 2)
    if cfg_doc.get("init", "volume") == "volume":
        init = T.init_volume_guided(volume, preset,
                                    cfg_doc.get("init_downsample", 4),
                                    cfg_doc.get("init_max", 50_000),
                                    manifest["seed"], sh_degree)
    else:
        init = T.init_random(volume.bbox, cfg_doc.get("init_count", 5000),
                             manifest["seed"], sh_degree)
    cfg = T.TrainConfig(
        iterations=cfg_doc.get("iterations", 15_000),
        seed=manifest["seed"],
        mip=cfg_doc.get("mip", False),
        ssim_weight=cfg_doc.get("ssim_weight", 0.2),
        alpha_supervision=cfg_doc.get("alpha_supervision", True),
        densify_interval=cfg_doc.get("densify_interval", 100),
        densify_start=cfg_doc.get("densify_start", 500),
        densify_stop=cfg_doc.get("densify_stop"),
        max_gaussians=cfg_doc.get("max_gaussians", 200_000),
        eval_interval=cfg_doc.get("eval_interval", 500),
        sh_degree_interval=cfg_doc.get("sh_degree_interval", 1000),
        checkpoint_dir=manifest["output_dir"])
    scene, history = T.train(train_imgs, train_cams, cfg, init,
                             test_imgs, test_cams)
    scene_path = _out(manifest, "scene.gsrw")
    save_scene(scene, scene_path)
    hist_path = _out(manifest, "metrics_history.csv")
    cols = sorted({k for row in history for k in row})
    M.write_report_csv([{c: row.get(c, "") for c in cols}
                        for row in history], hist_path)
    logged = [scene_path, hist_path]
    state_path = _out(manifest, "train_state.npz")
    if os.path.exists(state_path):
        logged.append(state_path)
    _log_hashes(manifest, logged)
    return {"scene": scene_path, "history": hist_path,
            "gaussians": scene.count,
            "final": history[-1] if history else {}}


def run_compress(manifest: dict, profiles=None) -> dict:
    train_imgs, train_cams, _, _ = _load_split(manifest)
    scene_path = _out(manifest, "scene.gsrw")
    if not os.path.exists(scene_path):
        raise StageError("compress", f"scene missing: {scene_path}; "
                         "run train first")
    scene = load_scene(scene_path)
    cfg_doc = manifest.get("compress", {})
    profiles = profiles or cfg_doc.get("profiles", ["HQ", "HR"])
    finetune_iters = cfg_doc.get("finetune_iters", 1000)
    out = {}
    paths = []
    sens = C.compute_sensitivity(scene, train_imgs, train_cams)
    for profile in profiles:
        fcfg = C.FinetuneConfig(
            iterations=finetune_iters,
            codebook_size=cfg_doc.get("codebook_size"),
            seed=manifest["seed"])
        tuned = C.quantization_aware_finetune(scene, profile, train_imgs,
                                              train_cams, fcfg)
        container = C.encode(tuned, profile, sens,
                             cfg_doc.get("codebook_size"),
                             seed=manifest["seed"])
        path = _out(manifest, f"scene_{profile.lower()}.cgsv")
        container.save(path)
        out[profile] = {"path": path, "bytes": container.size,
                        "chunks": container.chunk_sizes}
        paths.append(path)
    _log_hashes(manifest, paths)
    out["raw_bytes"] = os.path.getsize(scene_path)
    return out


def run_decompress(manifest: dict) -> dict:
    out = {}
    for profile in ("hq", "hr"):
        path = _out(manifest, f"scene_{profile}.cgsv")
        if not os.path.exists(path):
            continue
        scene = C.decode(C.CompressedSceneContainer.load(path))
        dst = _out(manifest, f"scene_{profile}_decoded.gsrw")
        save_scene(scene, dst)
        out[profile.upper()] = dst
    if not out:
        raise StageError("decompress", "no containers found; run compress")
    _log_hashes(manifest, list(out.values()))
    return out


def run_evaluate(manifest: dict) -> dict:
    _, _, test_imgs, test_cams = _load_split(manifest)
    scene_path = _out(manifest, "scene.gsrw")
    results = {}
    rows = []
    candidates = [("raw", scene_path)]
    for profile in ("hq", "hr"):
        path = _out(manifest, f"scene_{profile}.cgsv")
        if os.path.exists(path):
            candidates.append((profile.upper(), path))
    mip = manifest.get("train", {}).get("mip", False)
    for name, path in candidates:
        if not os.path.exists(path):
            continue
        if path.endswith(".cgsv"):
            scene = C.decode(C.CompressedSceneContainer.load(path))
            size = os.path.getsize(path)
        else:
            scene = load_scene(path)
            size = os.path.getsize(path)
        reports = []
        for i, (img, cam) in enumerate(zip(test_imgs, test_cams)):
            rendered = rasterize(scene, cam, mip=mip and scene.smoothed)
            rep = M.evaluate(rendered, img)
            row = {"scene": name, "view": i}
            row.update(rep.as_dict())
            rows.append(row)
            reports.append(rep)
        valid = [r for r in reports if r.psnr_masked is not None]
        results[name] = {
            "bytes": size,
            "psnr_masked": float(np.mean([min(r.psnr_masked, 99.0)
                                          for r in valid])) if valid else None,
            "psnr_alpha": float(np.mean([min(r.psnr_alpha, 99.0)
                                         for r in reports])),
            "ssim": float(np.mean([r.ssim for r in valid])) if valid else None,
        }
    eval_json = _out(manifest, "evaluation.json")
    M.write_report_json(results, eval_json)
    eval_csv = _out(manifest, "evaluation.csv")
    M.write_report_csv(rows, eval_csv)
    summary = {"seed": manifest["seed"], "scenes": results}
    if "raw" in results:
        raw_bytes = results["raw"]["bytes"]
        for name in results:
            if name != "raw":
                summary.setdefault("compression_factors", {})[name] = \
                    raw_bytes / results[name]["bytes"]
    summary_path = _out(manifest, "run_summary.json")
    with open(summary_path, "w") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")
    _log_hashes(manifest, [eval_json, eval_csv, summary_path])
    return summary


STAGES = {
    "select-views": run_select_views,
    "render": run_render,
    "train": run_train,
    "compress": run_compress,
    "decompress": run_decompress,
    "evaluate": run_evaluate,
}


def run_all(manifest: dict) -> dict:
    out = {}
    for name in ("select-views", "render", "train", "compress", "decompress",
                 "evaluate"):
        t0 = time.time()
        out[name] = STAGES[name](manifest)
        out[name + "_seconds"] = round(time.time() - t0, 2)
    return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="volsplat",
        description="volume -> path-traced views -> Gaussian scene -> "
                    "compressed container")
    parser.add_argument("command",
                        choices=list(STAGES) + ["all"])
    parser.add_argument("manifest", help="run manifest (JSON)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the manifest seed")
    parser.add_argument("--workers", type=int, default=0,
                        help="kernel thread count (0 = library default)")
    parser.add_argument("--profile", choices=["HQ", "HR"], default=None,
                        help="restrict compression to one profile")
    parser.add_argument("--codebook-size", type=int, default=None,
                        help="override the HR codebook size")
    parser.add_argument("--finetune-iters", type=int, default=None,
                        help="override quantization-aware fine-tune length")
    args = parser.parse_args(argv)

    try:
        manifest = load_manifest(args.manifest)
    except ManifestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.seed is not None:
        manifest["seed"] = args.seed
    if args.workers > 0:
        import numba
        numba.set_num_threads(args.workers)
    if args.codebook_size is not None:
        manifest.setdefault("compress", {})["codebook_size"] = \
            args.codebook_size
    if args.finetune_iters is not None:
        manifest.setdefault("compress", {})["finetune_iters"] = \
            args.finetune_iters

    try:
        if args.command == "all":
            result = run_all(manifest)
        elif args.command == "compress" and args.profile:
            result = run_compress(manifest, [args.profile])
        else:
            result = STAGES[args.command](manifest)
    except (StageError, Exception) as exc:  # noqa: BLE001
        if isinstance(exc, ManifestError):
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(result, indent=1, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
