"""Generate viewer conformance fixtures.

Writes small containers plus the reference decoder's attribute dumps (f32)
and a golden rendering, so the frontend test suite can verify byte-level
decoder conformance and pixel-level renderer agreement.

Usage: python tools/make_conformance.py [output_dir]
"""

import json
import os
import sys

import numpy as np

from volsplat.camera import Camera
from volsplat.compress import decode, encode
from volsplat.splats import SplatScene, rasterize


def build_scene(n: int, seed: int, sh_degree: int) -> SplatScene:
    rng = np.random.default_rng(seed)
    k = (sh_degree + 1) ** 2
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return SplatScene(
        positions=rng.uniform(-0.8, 0.8, size=(n, 3)),
        rotations=q,
        log_scales=rng.uniform(np.log(0.05), np.log(0.3), size=(n, 3)),
        opacity_logits=rng.uniform(-1.5, 2.5, size=n),
        sh=rng.normal(size=(n, k, 3)) * 0.5,
        sh_degree=sh_degree,
        bbox=((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0)))


def dump_scene(scene, prefix):
    for name, arr in (("positions", scene.positions),
                      ("rotations", scene.rotations),
                      ("log_scales", scene.log_scales),
                      ("opacity_logits", scene.opacity_logits),
                      ("sh", scene.sh)):
        np.ascontiguousarray(arr, dtype="<f4").tofile(f"{prefix}.{name}.f32")


def main(out_dir):
    os.makedirs(out_dir, exist_ok=True)
    cam = Camera((0.3, -0.6, -2.8), (0.0, 0.1, 0.0), (0, 1, 0), 0.85, 64, 64)
    cam_doc = {"position": list(cam.position), "look_at": list(cam.look_at),
               "up": list(cam.up), "vertical_fov": cam.vertical_fov,
               "width": cam.width, "height": cam.height}

    vectors = [
        ("hq_small", build_scene(40, 1, sh_degree=2), "HQ", None),
        ("hr_small", build_scene(48, 2, sh_degree=1), "HR", 12),
        ("hr_deg3", build_scene(300, 3, sh_degree=3), "HR", 300),
        ("hq_empty", build_scene(1, 4, sh_degree=0).subset(
            np.zeros(0, dtype=int)), "HQ", None),
    ]
    index = []
    for name, scene, profile, k in vectors:
        container = encode(scene, profile, codebook_size=k, seed=9)
        path = os.path.join(out_dir, f"{name}.cgsv")
        container.save(path)
        decoded = decode(container)
        dump_scene(decoded, os.path.join(out_dir, name))
        entry = {"name": name, "profile": profile, "count": decoded.count,
                 "sh_degree": decoded.sh_degree}
        if decoded.count:
            for mip in (False, True):
                img = rasterize(decoded, cam, mip=mip)
                suffix = "golden_mip" if mip else "golden"
                img.pixels.astype("<f4").tofile(
                    os.path.join(out_dir, f"{name}.{suffix}.f32"))
            entry["camera"] = cam_doc
        index.append(entry)
    with open(os.path.join(out_dir, "index.json"), "w") as fh:
        json.dump(index, fh, indent=1)
        fh.write("\n")
    print(f"wrote {len(vectors)} conformance vectors to {out_dir}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1
         else os.path.join(os.path.dirname(__file__), "..", "frontend",
                           "test", "fixtures"))
