"""The trainable Gaussian scene: struct-of-arrays storage and file IO."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .sh import n_coeffs

GSRW_MAGIC = b"GSRW"
GSRW_VERSION = 1


@dataclass(frozen=True)
class Gaussian3D:
    """Single-primitive view, mainly for tests and small-scene construction."""

    position: np.ndarray      # (3,)
    rotation: np.ndarray      # (4,) quaternion (w, x, y, z), unit
    log_scale: np.ndarray     # (3,)
    opacity_logit: float
    sh: np.ndarray            # (K, 3)

    @property
    def opacity(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.opacity_logit)))

    def covariance(self) -> np.ndarray:
        r = quat_to_matrix(self.rotation[None])[0]
        a = r * np.exp(self.log_scale)[None, :]
        return a @ a.T


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """(n, 4) unit quaternions (w, x, y, z) -> (n, 3, 3) rotation matrices."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    m = np.empty((q.shape[0], 3, 3))
    m[:, 0, 0] = 1 - 2 * (y * y + z * z)
    m[:, 0, 1] = 2 * (x * y - w * z)
    m[:, 0, 2] = 2 * (x * z + w * y)
    m[:, 1, 0] = 2 * (x * y + w * z)
    m[:, 1, 1] = 1 - 2 * (x * x + z * z)
    m[:, 1, 2] = 2 * (y * z - w * x)
    m[:, 2, 0] = 2 * (x * z - w * y)
    m[:, 2, 1] = 2 * (y * z + w * x)
    m[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return m


@dataclass
class SplatScene:
    positions: np.ndarray       # (n, 3)
    rotations: np.ndarray       # (n, 4) quaternions (w, x, y, z)
    log_scales: np.ndarray      # (n, 3)
    opacity_logits: np.ndarray  # (n,)
    sh: np.ndarray              # (n, K, 3)
    sh_degree: int
    bbox: tuple = ((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
    smoothed: bool = False      # 3D low-pass already folded into the scales
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.positions.shape[0]
        k = n_coeffs(self.sh_degree)
        if self.sh.shape != (n, k, 3):
            raise ValueError(f"sh must be ({n}, {k}, 3), got {self.sh.shape}")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("positions must be finite")

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def opacities(self) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.opacity_logits))

    def unit_rotations(self) -> np.ndarray:
        n = np.linalg.norm(self.rotations, axis=1, keepdims=True)
        return self.rotations / n

    def normalize_rotations(self) -> None:
        self.rotations /= np.linalg.norm(self.rotations, axis=1, keepdims=True)

    def covariances(self) -> np.ndarray:
        r = quat_to_matrix(self.unit_rotations())
        a = r * np.exp(self.log_scales)[:, None, :]
        return a @ np.transpose(a, (0, 2, 1))

    def gaussian(self, i: int) -> Gaussian3D:
        q = self.rotations[i]
        return Gaussian3D(self.positions[i].copy(),
                          q / np.linalg.norm(q),
                          self.log_scales[i].copy(),
                          float(self.opacity_logits[i]),
                          self.sh[i].copy())

    @classmethod
    def from_gaussians(cls, gaussians, sh_degree: int, bbox=None) -> "SplatScene":
        pos = np.stack([g.position for g in gaussians]).astype(np.float64)
        rot = np.stack([g.rotation for g in gaussians]).astype(np.float64)
        ls = np.stack([g.log_scale for g in gaussians]).astype(np.float64)
        op = np.array([g.opacity_logit for g in gaussians], dtype=np.float64)
        sh = np.stack([g.sh for g in gaussians]).astype(np.float64)
        if bbox is None:
            lo = pos.min(axis=0) - 1.0
            hi = pos.max(axis=0) + 1.0
            bbox = (tuple(lo), tuple(hi))
        return cls(pos, rot, ls, op, sh, sh_degree, bbox)

    def subset(self, index) -> "SplatScene":
        return SplatScene(self.positions[index].copy(),
                          self.rotations[index].copy(),
                          self.log_scales[index].copy(),
                          self.opacity_logits[index].copy(),
                          self.sh[index].copy(),
                          self.sh_degree, self.bbox, self.smoothed,
                          dict(self.meta))

    def copy(self) -> "SplatScene":
        return self.subset(slice(None))

    def param_bytes(self) -> bytes:
        """Canonical byte serialization for hashing/determinism checks."""
        h = b"".join(np.ascontiguousarray(a).tobytes() for a in
                     (self.positions, self.rotations, self.log_scales,
                      self.opacity_logits, self.sh))
        return h

    def content_hash(self) -> str:
        return hashlib.sha256(self.param_bytes()).hexdigest()


def save_scene(scene: SplatScene, path: str) -> None:
    """Fixed-stride little-endian f32 records; the raw-size baseline file."""
    k = n_coeffs(scene.sh_degree)
    with open(path, "wb") as fh:
        fh.write(GSRW_MAGIC)
        fh.write(struct.pack("<II", GSRW_VERSION, scene.count))
        fh.write(struct.pack("<I", scene.sh_degree))
        fh.write(struct.pack("<B", 1 if scene.smoothed else 0))
        fh.write(b"\x00" * 3)
        lo, hi = scene.bbox
        fh.write(np.asarray(lo, dtype="<f4").tobytes())
        fh.write(np.asarray(hi, dtype="<f4").tobytes())
        rec = np.concatenate([
            scene.positions,
            scene.rotations,
            scene.log_scales,
            scene.opacity_logits[:, None],
            scene.sh.reshape(scene.count, 3 * k)], axis=1)
        fh.write(rec.astype("<f4").tobytes())


def load_scene(path: str) -> SplatScene:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != GSRW_MAGIC:
        raise ValueError(f"{path}: not a raw Gaussian scene file")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != GSRW_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    sh_degree, = struct.unpack_from("<I", raw, 12)
    smoothed = raw[16] != 0
    off = 20
    lo = np.frombuffer(raw, dtype="<f4", count=3, offset=off).astype(np.float64)
    hi = np.frombuffer(raw, dtype="<f4", count=3,
                       offset=off + 12).astype(np.float64)
    off += 24
    k = n_coeffs(sh_degree)
    stride = 3 + 4 + 3 + 1 + 3 * k
    rec = np.frombuffer(raw, dtype="<f4", count=count * stride, offset=off)
    rec = rec.reshape(count, stride).astype(np.float64)
    return SplatScene(rec[:, 0:3].copy(), rec[:, 3:7].copy(),
                      rec[:, 7:10].copy(), rec[:, 10].copy(),
                      rec[:, 11:].reshape(count, k, 3).copy(),
                      sh_degree, (tuple(lo), tuple(hi)), smoothed)
