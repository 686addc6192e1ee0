"""Compressed scene containers: sensitivity-weighted VQ, quantization-aware
fine-tuning, Morton-ordered streams, DEFLATE chunks with CRC32.

Container fixed point: encode(decode(encode(s))) is byte-identical to
encode(s). Scalar quantization stores the attained (min, max) endpoints and
dequantizes by exact endpoint interpolation; codebooks are rounded to f32
before assignment; positions round-trip through fp16 against the f32 header
bbox. docs/format.md specifies the byte layout (shared with the web viewer).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .splats import SplatScene, n_coeffs, render_forward
from .train import Adam, loss_and_image_grad

MAGIC = b"CGSV"
VERSION = 1
PROFILES = {"HQ": 0, "HR": 1}
PROFILE_NAMES = {v: k for k, v in PROFILES.items()}
MAX_CODEBOOK = 4096


class CorruptContainerError(ValueError):
    """Container fails structural validation (magic, version, CRC, bounds)."""


# ---------------------------------------------------------------------------
# sensitivity


@dataclass
class SensitivityTable:
    """Per-Gaussian accumulated |dL/dparam| magnitudes, mean-normalized."""

    sh: np.ndarray    # (n,)
    cov: np.ndarray   # (n,) rotation + scale group

    @classmethod
    def uniform(cls, n: int) -> "SensitivityTable":
        return cls(np.ones(n), np.ones(n))


def compute_sensitivity(scene: SplatScene, targets, cameras,
                        ssim_weight: float = 0.2) -> SensitivityTable:
    """One backward sweep over the training views, accumulating gradient
    magnitude per attribute group."""
    from .splats import render_backward

    sh_acc = np.zeros(scene.count)
    cov_acc = np.zeros(scene.count)
    for target, cam in zip(targets, cameras):
        image, cache = render_forward(scene, cam, mip=False)
        _, dimg = loss_and_image_grad(image.pixels, target.pixels,
                                      ssim_weight)
        grads = render_backward(cache, dimg)
        sh_acc += np.abs(grads.sh).sum(axis=(1, 2))
        cov_acc += np.abs(grads.rotations).sum(axis=1) \
            + np.abs(grads.log_scales).sum(axis=1)

    def norm(a):
        m = a.mean()
        return a / m if m > 0 else np.ones_like(a)

    return SensitivityTable(norm(sh_acc), norm(cov_acc))


# ---------------------------------------------------------------------------
# weighted vector quantization


def vq_fit(vectors: np.ndarray, weights: np.ndarray, k: int, seed: int,
           max_iters: int = 50, tol: float = 1e-4):
    """Weighted k-means with k-means++ seeding and canonical output.

    The returned codebook is float32-rounded, pruned of unused entries, and
    sorted lexicographically; assignments index into it. When the input has
    at most k distinct rows the fit is exact.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    n = vectors.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds vector count {n}")
    if k < 1:
        raise ValueError("k must be >= 1")

    uniq, inverse = np.unique(vectors, axis=0, return_inverse=True)
    agg_w = np.bincount(inverse, weights=weights,
                        minlength=uniq.shape[0]).astype(np.float64)
    if uniq.shape[0] <= k:
        centroids = uniq
    else:
        centroids = _weighted_lloyd(uniq, agg_w, k, seed, max_iters, tol)

    return _canonicalize(vectors, centroids)


def _weighted_lloyd(pts, w, k, seed, max_iters, tol):
    rng = np.random.default_rng(seed)
    n = pts.shape[0]
    # k-means++ seeding on weighted squared distances
    centers = np.empty((k, pts.shape[1]))
    first = rng.choice(n, p=w / w.sum())
    centers[0] = pts[first]
    d2 = ((pts - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        probs = w * d2
        s = probs.sum()
        if s <= 0:
            centers[i] = pts[rng.integers(0, n)]
        else:
            centers[i] = pts[rng.choice(n, p=probs / s)]
        d2 = np.minimum(d2, ((pts - centers[i]) ** 2).sum(axis=1))

    prev_inertia = np.inf
    assign = _nearest(pts, centers)
    for _ in range(max_iters):
        for c in range(k):
            mask = assign == c
            wc = w[mask]
            if wc.sum() > 0:
                centers[c] = (pts[mask] * wc[:, None]).sum(0) / wc.sum()
            else:
                # re-seed an empty cluster at the worst-served point
                far = np.argmax(((pts - centers[assign]) ** 2).sum(1) * w)
                centers[c] = pts[far]
        assign = _nearest(pts, centers)
        inertia = float((w * ((pts - centers[assign]) ** 2).sum(1)).sum())
        if prev_inertia - inertia <= tol * max(prev_inertia, 1e-12):
            break
        prev_inertia = inertia
    return centers


def _nearest(pts, centers, chunk=2048):
    out = np.empty(pts.shape[0], dtype=np.int64)
    c2 = (centers ** 2).sum(axis=1)
    for lo in range(0, pts.shape[0], chunk):
        hi = min(lo + chunk, pts.shape[0])
        d = c2[None, :] - 2.0 * pts[lo:hi] @ centers.T
        out[lo:hi] = np.argmin(d, axis=1)
    return out


def _canonicalize(vectors, centroids):
    cb32 = centroids.astype(np.float32).astype(np.float64)
    cb32 = np.unique(cb32, axis=0)
    assign = _nearest(vectors, cb32)
    used = np.unique(assign)
    cb_final = cb32[used]
    remap = np.full(cb32.shape[0], -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return cb_final, remap[assign]


# ---------------------------------------------------------------------------
# scalar quantization (exact-endpoint affine)


def quant_codes(values: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
    if vmax <= vmin:
        return np.zeros(values.shape, dtype=np.uint8)
    q = np.rint((values - vmin) * (255.0 / (vmax - vmin)))
    return np.clip(q, 0, 255).astype(np.uint8)


def dequant_codes(codes: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
    u = codes.astype(np.float64) / 255.0
    # endpoint interpolation: codes 0 and 255 restore min / max exactly
    return vmin * (1.0 - u) + vmax * u


def fake_quant(values: np.ndarray) -> np.ndarray:
    """Quantize-dequantize at 8 bits against the array's own range."""
    vmin = float(values.min())
    vmax = float(values.max())
    return dequant_codes(quant_codes(values, vmin, vmax), vmin, vmax)


# ---------------------------------------------------------------------------
# Morton order


def _spread_bits(v: np.ndarray) -> np.ndarray:
    v = v.astype(np.uint64) & np.uint64(0x1FFFFF)
    v = (v | (v << np.uint64(32))) & np.uint64(0x1F00000000FFFF)
    v = (v | (v << np.uint64(16))) & np.uint64(0x1F0000FF0000FF)
    v = (v | (v << np.uint64(8))) & np.uint64(0x100F00F00F00F00F)
    v = (v | (v << np.uint64(4))) & np.uint64(0x10C30C30C30C30C3)
    v = (v | (v << np.uint64(2))) & np.uint64(0x1249249249249249)
    return v


def morton_codes(normalized: np.ndarray) -> np.ndarray:
    """21-bit-per-axis Morton codes for positions normalized to [0, 1]."""
    q = np.clip(normalized * (2 ** 21 - 1), 0, 2 ** 21 - 1).astype(np.uint64)
    return (_spread_bits(q[:, 0]) | (_spread_bits(q[:, 1]) << np.uint64(1))
            | (_spread_bits(q[:, 2]) << np.uint64(2)))


# ---------------------------------------------------------------------------
# quantization-aware fine-tuning


@dataclass
class FinetuneConfig:
    # HR fine-tuning must undo real vector-quantization error, so it runs at
    # training-strength rates; the HQ path scales these down (its residual is
    # 8-bit dust, and the Adam/L1 equilibrium error scales with the rates)
    iterations: int = 1000
    codebook_size: int | None = None
    ssim_weight: float = 0.2
    seed: int = 0
    lr_position: float = 1.6e-4
    lr_rotation: float = 1e-3
    lr_scale: float = 5e-3
    lr_opacity: float = 0.05
    lr_sh: float = 2.5e-3
    hq_lr_scale: float = 0.1
    reassign_interval: int = 200  # HR: re-map members to nearest entries


def default_codebook_size(n: int) -> int:
    return int(min(MAX_CODEBOOK, max(64, n // 24)))


def quantization_aware_finetune(scene: SplatScene, profile: str, targets,
                                cameras, cfg: FinetuneConfig | None = None):
    """Fine-tune under the profile's quantized forward model.

    HQ: all groups except positions see 8-bit fake quantization; gradients
    pass straight through to full-precision latents. HR: SH and shape groups
    become codebook lookups and the codebook entries themselves are
    optimized. iterations == 0 returns the scene unchanged.
    """
    cfg = cfg or FinetuneConfig()
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    if cfg.iterations == 0:
        return scene.copy()
    if profile == "HQ":
        return _finetune_hq(scene, targets, cameras, cfg)
    return _finetune_hr(scene, targets, cameras, cfg)


def _rotate_views(n_views: int, iterations: int, seed: int):
    rng = np.random.default_rng(seed)
    order = rng.permutation(n_views)
    cursor = 0
    for _ in range(iterations):
        if cursor >= n_views:
            order = rng.permutation(n_views)
            cursor = 0
        yield int(order[cursor])
        cursor += 1


def _finetune_hq(scene, targets, cameras, cfg):
    from .splats import render_backward

    out = scene.copy()
    params = {"positions": out.positions, "rotations": out.rotations,
              "log_scales": out.log_scales,
              "opacity_logits": out.opacity_logits, "sh": out.sh}
    extent = 0.5 * float(np.linalg.norm(np.asarray(out.bbox[1])
                                        - np.asarray(out.bbox[0])))
    s = cfg.hq_lr_scale
    opt = Adam(params, {"positions": cfg.lr_position * extent * s,
                        "rotations": cfg.lr_rotation * s,
                        "log_scales": cfg.lr_scale * s,
                        "opacity_logits": cfg.lr_opacity * s,
                        "sh": cfg.lr_sh * s})
    for view in _rotate_views(len(targets), cfg.iterations, cfg.seed):
        quant_scene = out.copy()
        quant_scene.rotations = fake_quant(out.rotations)
        quant_scene.log_scales = fake_quant(out.log_scales)
        quant_scene.opacity_logits = fake_quant(out.opacity_logits)
        quant_scene.sh = fake_quant(out.sh)
        image, cache = render_forward(quant_scene, cameras[view], mip=False)
        _, dimg = loss_and_image_grad(image.pixels, targets[view].pixels,
                                      cfg.ssim_weight)
        grads = render_backward(cache, dimg)
        opt.step({"positions": grads.positions, "rotations": grads.rotations,
                  "log_scales": grads.log_scales,
                  "opacity_logits": grads.opacity_logits, "sh": grads.sh})
        out.normalize_rotations()
    return out


def _finetune_hr(scene, targets, cameras, cfg):
    from .splats import render_backward

    sens = compute_sensitivity(scene, targets, cameras, cfg.ssim_weight)
    k = cfg.codebook_size or default_codebook_size(scene.count)
    k = min(k, scene.count)
    n = scene.count
    kc = n_coeffs(scene.sh_degree)

    latent_sh = scene.sh.reshape(n, 3 * kc).copy()
    latent_cv = np.concatenate([scene.unit_rotations(), scene.log_scales],
                               axis=1)
    cb_sh, idx_sh = vq_fit(latent_sh, sens.sh, k, cfg.seed)
    cb_cv, idx_cv = vq_fit(latent_cv, sens.cov, k, cfg.seed + 1)

    out = scene.copy()
    latents = {"positions": out.positions,
               "opacity_logits": out.opacity_logits,
               "latent_sh": latent_sh, "latent_cv": latent_cv,
               "cb_sh": cb_sh, "cb_cv": cb_cv}
    extent = 0.5 * float(np.linalg.norm(np.asarray(out.bbox[1])
                                        - np.asarray(out.bbox[0])))
    opt = Adam(latents, {"positions": cfg.lr_position * extent,
                         "opacity_logits": cfg.lr_opacity,
                         "latent_sh": cfg.lr_sh, "latent_cv": cfg.lr_rotation,
                         "cb_sh": cfg.lr_sh, "cb_cv": cfg.lr_rotation})
    it = 0
    for view in _rotate_views(len(targets), cfg.iterations, cfg.seed):
        it += 1
        if cfg.reassign_interval and it % cfg.reassign_interval == 0:
            # let members migrate to whichever entries now fit them best
            idx_sh = _nearest(latent_sh, cb_sh)
            idx_cv = _nearest(latent_cv, cb_cv)
        out.sh = cb_sh[idx_sh].reshape(n, kc, 3)
        out.rotations = cb_cv[idx_cv, :4]
        out.log_scales = cb_cv[idx_cv, 4:]
        out.opacity_logits = fake_quant(latents["opacity_logits"])
        image, cache = render_forward(out, cameras[view], mip=False)
        _, dimg = loss_and_image_grad(image.pixels, targets[view].pixels,
                                      cfg.ssim_weight)
        grads = render_backward(cache, dimg)
        # straight-through: per-Gaussian gradients drive the latents and sum
        # into the shared codebook entries
        g_sh_flat = grads.sh.reshape(n, 3 * kc)
        g_cv_flat = np.concatenate([grads.rotations, grads.log_scales],
                                   axis=1)
        g_sh = np.zeros_like(cb_sh)
        np.add.at(g_sh, idx_sh, g_sh_flat)
        g_cv = np.zeros(cb_cv.shape)
        np.add.at(g_cv, idx_cv, g_cv_flat)
        opt.step({"positions": grads.positions,
                  "opacity_logits": grads.opacity_logits,
                  "latent_sh": g_sh_flat, "latent_cv": g_cv_flat,
                  "cb_sh": g_sh, "cb_cv": g_cv})
        # keep rotation parts unit-length
        for arr, sl in ((cb_cv, slice(0, 4)), (latent_cv, slice(0, 4))):
            qn = np.linalg.norm(arr[:, sl], axis=1, keepdims=True)
            arr[:, sl] /= np.maximum(qn, 1e-12)

    out.sh = cb_sh[idx_sh].reshape(n, kc, 3)
    out.rotations = cb_cv[idx_cv, :4].copy()
    out.log_scales = cb_cv[idx_cv, 4:].copy()
    out.opacity_logits = fake_quant(latents["opacity_logits"])
    out.positions = latents["positions"]
    return out


# ---------------------------------------------------------------------------
# container encode / decode


@dataclass
class CompressedSceneContainer:
    profile: str
    count: int
    sh_degree: int
    bbox: tuple
    data: bytes
    chunk_sizes: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.data)

    def save(self, path: str) -> None:
        with open(path, "wb") as fh:
            fh.write(self.data)

    @classmethod
    def load(cls, path: str) -> "CompressedSceneContainer":
        with open(path, "rb") as fh:
            data = fh.read()
        header = _parse_header(data)
        return cls(PROFILE_NAMES[header["profile"]], header["count"],
                   header["sh_degree"], header["bbox"], data,
                   {cid.decode("ascii").strip("\x00"): comp
                    for cid, _, comp, _, _ in header["chunks"]})


def _deflate(raw: bytes) -> bytes:
    comp = zlib.compressobj(level=9, wbits=-15)
    return comp.compress(raw) + comp.flush()


def _inflate(blob: bytes, expected_len: int) -> bytes:
    try:
        out = zlib.decompress(blob, wbits=-15)
    except zlib.error as exc:
        raise CorruptContainerError(f"chunk inflate failed: {exc}") from exc
    if len(out) != expected_len:
        raise CorruptContainerError("chunk raw length mismatch")
    return out


def _planar_u8(arr: np.ndarray) -> bytes:
    """(n, c) uint8 -> component-major byte planes, delta-coded per plane.

    Morton ordering makes neighboring values similar, so storing successive
    differences (mod 256) concentrates the byte histogram for DEFLATE.
    """
    planes = np.ascontiguousarray(arr.T)
    delta = planes.copy()
    if planes.shape[-1] > 1:
        delta[..., 1:] = planes[..., 1:] - planes[..., :-1]
    return delta.tobytes()


def _unplanar_u8(raw: bytes, n: int, comps: int) -> np.ndarray:
    """Inverse of _planar_u8: (n, comps) uint8."""
    planes = np.frombuffer(raw, dtype=np.uint8).reshape(comps, n).copy()
    np.cumsum(planes, axis=1, dtype=np.uint8, out=planes)
    return planes.T


def _f16_planes(values: np.ndarray) -> bytes:
    """(m, d) float16 -> 2d delta-coded byte planes (low bytes, high bytes)."""
    b = np.ascontiguousarray(values.astype("<f2")).view(np.uint8)
    m, d2 = b.shape  # d2 == 2 * d
    lo = b[:, 0::2].T
    hi = b[:, 1::2].T
    return _planar_u8(np.concatenate([lo, hi], axis=0).T)


def _f16_unplanes(raw: bytes, m: int, d: int) -> np.ndarray:
    planes = _unplanar_u8(raw, m, 2 * d)
    b = np.empty((m, 2 * d), dtype=np.uint8)
    b[:, 0::2] = planes[:, :d]
    b[:, 1::2] = planes[:, d:]
    return np.ascontiguousarray(b).view("<f2").astype(np.float64)


def encode(scene: SplatScene, profile: str,
           sensitivity: SensitivityTable | None = None,
           codebook_size: int | None = None,
           seed: int = 0) -> CompressedSceneContainer:
    """Serialize the scene under the chosen profile (see docs/format.md)."""
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}")
    n = scene.count
    kc = n_coeffs(scene.sh_degree)
    if sensitivity is None:
        sensitivity = SensitivityTable.uniform(n)

    # header bbox is f32; all normalization math uses the rounded values
    lo32 = np.asarray(scene.bbox[0], dtype=np.float32)
    hi32 = np.asarray(scene.bbox[1], dtype=np.float32)
    lo = lo32.astype(np.float64)
    span = np.maximum(hi32.astype(np.float64) - lo, 1e-12)

    norm16 = ((scene.positions - lo) / span).astype(np.float16)
    order = np.argsort(morton_codes(norm16.astype(np.float64)),
                       kind="stable")

    pos16 = norm16[order]
    rot = scene.rotations[order]  # stored as-is; renderers normalize
    lsc = scene.log_scales[order]
    opa = scene.opacity_logits[order]
    sh = scene.sh[order].reshape(n, 3 * kc)

    groups = {}
    chunks = []

    def add_scalar_group(name: bytes, cid: bytes, values: np.ndarray):
        vmin = float(values.min()) if values.size else 0.0
        vmax = float(values.max()) if values.size else 0.0
        groups[name] = (vmin, vmax)
        codes = quant_codes(values, vmin, vmax)
        if codes.ndim == 1:
            codes = codes[:, None]
        chunks.append((cid, _planar_u8(codes)))

    pos_bytes = np.ascontiguousarray(pos16.view(np.uint16)).view(np.uint8)
    chunks.append((b"POS\x00",
                   _planar_u8(pos_bytes.reshape(n, 6)[:, [0, 2, 4, 1, 3, 5]])))

    if profile == "HQ":
        add_scalar_group(b"rotq", b"ROT\x00", rot)
        add_scalar_group(b"lsca", b"SCL\x00", lsc)
        add_scalar_group(b"opac", b"OPA\x00", opa)
        add_scalar_group(b"shco", b"SH\x00\x00", sh)
    else:
        add_scalar_group(b"opac", b"OPA\x00", opa)
        if n == 0:
            cb_sh = np.zeros((1, 3 * kc))
            cb_cv = np.zeros((1, 7))
            idx_sh = idx_cv = np.zeros(0, dtype=np.int64)
        else:
            k = codebook_size or default_codebook_size(n)
            k = min(k, n)
            cb_sh, _ = vq_fit(sh, sensitivity.sh[order], k, seed)
            cov_vec = np.concatenate([rot, lsc], axis=1)
            cb_cv, _ = vq_fit(cov_vec, sensitivity.cov[order], k, seed + 1)
            # entries are stored f16: dedupe and re-assign after rounding so
            # decode -> re-encode reproduces the container byte-for-byte
            cb_sh, idx_sh = _refit_f16(cb_sh, sh)
            cb_cv, idx_cv = _refit_f16(cb_cv, cov_vec)
        chunks.append((b"CBSH", struct.pack("<II", cb_sh.shape[0],
                                            cb_sh.shape[1])
                       + _f16_planes(cb_sh)))
        chunks.append((b"IXSH", _index_bytes(idx_sh, cb_sh.shape[0], n)))
        chunks.append((b"CBCV", struct.pack("<II", cb_cv.shape[0],
                                            cb_cv.shape[1])
                       + _f16_planes(cb_cv)))
        chunks.append((b"IXCV", _index_bytes(idx_cv, cb_cv.shape[0], n)))

    header = bytearray()
    header += MAGIC
    header += struct.pack("<I", VERSION)
    header += struct.pack("<I", 0)  # header CRC32, patched below
    header += struct.pack("<B3x", PROFILES[profile])
    header += struct.pack("<II", n, scene.sh_degree)
    header += lo32.tobytes() + hi32.tobytes()
    header += struct.pack("<I", len(groups))
    for name, (vmin, vmax) in groups.items():
        header += name + struct.pack("<dd", vmin, vmax)
    header += struct.pack("<I", len(chunks))

    table_off = len(header)
    payload_off = table_off + 32 * len(chunks)
    table = bytearray()
    payload = bytearray()
    sizes = {}
    for cid, raw in chunks:
        blob = _deflate(raw)
        table += cid + struct.pack("<QQQI", payload_off + len(payload),
                                   len(blob), len(raw),
                                   zlib.crc32(blob) & 0xFFFFFFFF)
        payload += blob
        sizes[cid.decode("ascii").strip("\x00")] = len(blob)

    head = bytearray(bytes(header) + bytes(table))
    crc = zlib.crc32(bytes(head[:8]) + b"\x00" * 4 + bytes(head[12:])) \
        & 0xFFFFFFFF
    struct.pack_into("<I", head, 8, crc)
    data = bytes(head) + bytes(payload)
    return CompressedSceneContainer(profile, n, scene.sh_degree,
                                    (tuple(lo32.astype(float)),
                                     tuple(hi32.astype(float))),
                                    data, sizes)


def _refit_f16(codebook: np.ndarray, vectors: np.ndarray):
    """Round entries to f16, dedupe, re-assign, prune unused (lex-sorted)."""
    cb16 = np.unique(codebook.astype(np.float16).astype(np.float64), axis=0)
    assign = _nearest(vectors, cb16)
    used = np.unique(assign)
    remap = np.full(cb16.shape[0], -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return cb16[used], remap[assign]


def _index_bytes(idx: np.ndarray, n_entries: int, n: int) -> bytes:
    if n_entries <= 256:
        return _planar_u8(idx.astype(np.uint8)[:, None])
    u16 = idx.astype("<u2")[:, None].view(np.uint8)  # (n, 2) lo/hi bytes
    return _planar_u8(u16)


def _parse_header(data: bytes) -> dict:
    if len(data) < 52 or data[:4] != MAGIC:
        raise CorruptContainerError("bad magic")
    version, = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise CorruptContainerError(f"unsupported version {version}")
    header_crc, = struct.unpack_from("<I", data, 8)
    profile, = struct.unpack_from("<B", data, 12)
    if profile not in PROFILE_NAMES:
        raise CorruptContainerError(f"unknown profile id {profile}")
    count, sh_degree = struct.unpack_from("<II", data, 16)
    if sh_degree > 3:
        raise CorruptContainerError("sh_degree out of range")
    bbox_lo = struct.unpack_from("<3f", data, 24)
    bbox_hi = struct.unpack_from("<3f", data, 36)
    off = 48
    n_groups, = struct.unpack_from("<I", data, off)
    off += 4
    groups = {}
    if n_groups > 16:
        raise CorruptContainerError("implausible group count")
    for _ in range(n_groups):
        if off + 20 > len(data):
            raise CorruptContainerError("truncated group table")
        name = data[off:off + 4]
        vmin, vmax = struct.unpack_from("<dd", data, off + 4)
        groups[name] = (vmin, vmax)
        off += 20
    n_chunks, = struct.unpack_from("<I", data, off)
    off += 4
    if n_chunks > 64:
        raise CorruptContainerError("implausible chunk count")
    chunks = []
    for _ in range(n_chunks):
        if off + 32 > len(data):
            raise CorruptContainerError("truncated chunk table")
        cid = data[off:off + 4]
        c_off, c_len, r_len, crc = struct.unpack_from("<QQQI", data, off + 4)
        chunks.append((cid, c_off, c_len, r_len, crc))
        off += 32
    want_crc = zlib.crc32(data[:8] + b"\x00" * 4 + data[12:off]) \
        & 0xFFFFFFFF
    if want_crc != header_crc:
        raise CorruptContainerError("header CRC mismatch")
    end = off
    for cid, c_off, c_len, r_len, crc in chunks:
        if c_off != end:
            raise CorruptContainerError("chunks must be contiguous")
        end = c_off + c_len
        if end > len(data):
            raise CorruptContainerError("chunk exceeds file size")
    if end != len(data):
        raise CorruptContainerError("trailing bytes after last chunk")
    return {"profile": profile, "count": count, "sh_degree": sh_degree,
            "bbox": (bbox_lo, bbox_hi), "groups": groups, "chunks": chunks,
            "header_end": off}


def decode(container) -> SplatScene:
    """Reconstruct the quantized scene; raises CorruptContainerError on any
    structural damage (bad magic/version, CRC mismatch, truncation)."""
    data = container.data if isinstance(container, CompressedSceneContainer) \
        else bytes(container)
    header = _parse_header(data)
    n = header["count"]
    profile = PROFILE_NAMES[header["profile"]]
    kc = n_coeffs(header["sh_degree"])

    raw = {}
    for cid, c_off, c_len, r_len, crc in header["chunks"]:
        blob = data[c_off:c_off + c_len]
        if (zlib.crc32(blob) & 0xFFFFFFFF) != crc:
            raise CorruptContainerError(
                f"chunk {cid!r} CRC mismatch")
        raw[cid] = _inflate(blob, r_len)

    def expect(cid: bytes, length: int) -> bytes:
        if cid not in raw:
            raise CorruptContainerError(f"missing chunk {cid!r}")
        if len(raw[cid]) != length:
            raise CorruptContainerError(f"chunk {cid!r} has wrong size")
        return raw[cid]

    lo = np.asarray(header["bbox"][0], dtype=np.float64)
    hi = np.asarray(header["bbox"][1], dtype=np.float64)
    span = np.maximum(hi - lo, 1e-12)

    pos_codes = _unplanar_u8(expect(b"POS\x00", 6 * n), n, 6)
    pos_bytes = pos_codes[:, [0, 3, 1, 4, 2, 5]]
    pos16 = np.ascontiguousarray(pos_bytes).view(np.float16).astype(np.float64)
    positions = lo + pos16 * span

    groups = header["groups"]

    def scalar_group(name: bytes, cid: bytes, comps: int) -> np.ndarray:
        if name not in groups:
            raise CorruptContainerError(f"missing group metadata {name!r}")
        codes = _unplanar_u8(expect(cid, comps * n), n, comps)
        vmin, vmax = groups[name]
        out = dequant_codes(codes, vmin, vmax)
        return out[:, 0] if comps == 1 else out

    opa = scalar_group(b"opac", b"OPA\x00", 1)
    if profile == "HQ":
        rot = scalar_group(b"rotq", b"ROT\x00", 4)
        lsc = scalar_group(b"lsca", b"SCL\x00", 3)
        sh = scalar_group(b"shco", b"SH\x00\x00", 3 * kc).reshape(n, kc, 3)
    else:
        cb_sh, idx_sh = _read_codebook(raw, b"CBSH", b"IXSH", n, 3 * kc)
        cb_cv, idx_cv = _read_codebook(raw, b"CBCV", b"IXCV", n, 7)
        sh = cb_sh[idx_sh].reshape(n, kc, 3)
        rot = cb_cv[idx_cv, :4]
        lsc = cb_cv[idx_cv, 4:]

    return SplatScene(positions, np.ascontiguousarray(rot),
                      np.ascontiguousarray(lsc), opa,
                      np.ascontiguousarray(sh), header["sh_degree"],
                      (tuple(lo), tuple(hi)),
                      meta={"profile": profile})


def _read_codebook(raw: dict, cb_id: bytes, ix_id: bytes, n: int, dim: int):
    if cb_id not in raw or ix_id not in raw:
        raise CorruptContainerError(f"missing codebook chunk {cb_id!r}")
    blob = raw[cb_id]
    if len(blob) < 8:
        raise CorruptContainerError(f"chunk {cb_id!r} too short")
    entries, got_dim = struct.unpack_from("<II", blob, 0)
    if got_dim != dim or entries < 1 or entries > MAX_CODEBOOK:
        raise CorruptContainerError(f"chunk {cb_id!r} has bad geometry")
    if len(blob) != 8 + entries * dim * 2:
        raise CorruptContainerError(f"chunk {cb_id!r} has wrong size")
    cb = _f16_unplanes(blob[8:], entries, dim)
    width = 1 if entries <= 256 else 2
    if len(raw[ix_id]) != width * n:
        raise CorruptContainerError(f"chunk {ix_id!r} has wrong size")
    codes = _unplanar_u8(raw[ix_id], n, width)
    if width == 1:
        idx = codes[:, 0].astype(np.int64)
    else:
        idx = np.ascontiguousarray(codes).view("<u2")[:, 0].astype(np.int64)
    if idx.size and idx.max() >= entries:
        raise CorruptContainerError("codebook index out of range")
    return cb, idx
