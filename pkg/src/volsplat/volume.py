"""Scalar volume grids, transfer-function presets, and occupancy grids.

Coordinate conventions: voxel (ix, iy, iz) has its center at
``origin + (ix, iy, iz) * spacing``; the volume's world bounding box extends
half a voxel beyond the outermost centers. Data is stored flat, x-fastest.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

_DTYPE_MAP = {"u8": np.uint8, "u16": np.uint16, "f32": np.float32}
_DTYPE_SCALE = {"u8": 255.0, "u16": 65535.0, "f32": 1.0}


class VolumeFormatError(ValueError):
    """Raised when a volume file or its metadata is malformed."""


@dataclass(frozen=True)
class VolumeGrid:
    """A 3D scalar field with world placement. Immutable after construction."""

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float]
    data: np.ndarray  # flat float64, length prod(dims), x-fastest, values in [0, 1]

    def __post_init__(self):
        if any(d < 1 for d in self.dims):
            raise ValueError(f"dims must be >= 1, got {self.dims}")
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be > 0, got {self.spacing}")
        n = self.dims[0] * self.dims[1] * self.dims[2]
        if self.data.shape != (n,):
            raise ValueError(f"data length {self.data.shape} != prod(dims) {n}")
        if self.data.size and (self.data.min() < 0.0 or self.data.max() > 1.0):
            raise ValueError("volume values must lie in [0, 1]")
        self.data.setflags(write=False)

    @classmethod
    def from_array(cls, values, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
        """Build from an (nx, ny, nz)-indexed array."""
        values = np.asarray(values, dtype=np.float64)
        flat = np.ascontiguousarray(values.transpose(2, 1, 0)).ravel()
        return cls(tuple(values.shape), tuple(map(float, spacing)),
                   tuple(map(float, origin)), flat)

    def as_array(self) -> np.ndarray:
        """View of the data indexed [ix, iy, iz]."""
        nx, ny, nz = self.dims
        return self.data.reshape(nz, ny, nx).transpose(2, 1, 0)

    @property
    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        """World bounding box (lo, hi), half a voxel beyond outer centers."""
        o = np.asarray(self.origin)
        sp = np.asarray(self.spacing)
        d = np.asarray(self.dims)
        return o - 0.5 * sp, o + (d - 0.5) * sp

    @property
    def center(self) -> np.ndarray:
        lo, hi = self.bbox
        return 0.5 * (lo + hi)

    def voxel_centers(self) -> np.ndarray:
        """(n, 3) world coordinates of every voxel center, x-fastest order."""
        nx, ny, nz = self.dims
        zz, yy, xx = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx),
                                 indexing="ij")
        idx = np.stack([xx, yy, zz], axis=-1).reshape(-1, 3).astype(np.float64)
        return np.asarray(self.origin) + idx * np.asarray(self.spacing)


@dataclass(frozen=True)
class TransferFunction:
    """Piecewise-linear map from normalized scalar to (rgb emission, extinction)."""

    positions: np.ndarray  # strictly increasing, first 0.0, last 1.0
    colors: np.ndarray     # (n, 3) in [0, 1]
    sigmas: np.ndarray     # (n,) >= 0, multiplied by density_scale
    density_scale: float = 1.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 1 or pos.size < 2:
            raise ValueError("need at least two transfer-function nodes")
        if not np.all(np.diff(pos) > 0):
            raise ValueError("node positions must be strictly increasing")
        if pos[0] != 0.0 or pos[-1] != 1.0:
            raise ValueError("first node must sit at 0.0 and last at 1.0")
        if self.density_scale <= 0:
            raise ValueError("density_scale must be > 0")
        if np.any(np.asarray(self.sigmas) < 0):
            raise ValueError("node opacities must be >= 0")

    @classmethod
    def from_nodes(cls, nodes, density_scale=1.0):
        """nodes: iterable of (position, (r, g, b), sigma)."""
        pos = np.array([n[0] for n in nodes], dtype=np.float64)
        col = np.array([n[1] for n in nodes], dtype=np.float64)
        sig = np.array([n[2] for n in nodes], dtype=np.float64)
        return cls(pos, col, sig, float(density_scale))

    def evaluate(self, s):
        """Piecewise-linear color and density-scaled extinction at scalar s."""
        s = np.asarray(s, dtype=np.float64)
        r = np.interp(s, self.positions, self.colors[:, 0])
        g = np.interp(s, self.positions, self.colors[:, 1])
        b = np.interp(s, self.positions, self.colors[:, 2])
        sig = np.interp(s, self.positions, self.sigmas) * self.density_scale
        return np.stack([r, g, b], axis=-1), sig

    def max_sigma_on_interval(self, lo: float, hi: float) -> float:
        """Upper bound of the scaled extinction over scalar values in [lo, hi].

        Piecewise-linear curves attain their maximum at nodes or interval ends.
        """
        lo, hi = max(0.0, min(lo, hi)), min(1.0, max(lo, hi))
        inside = (self.positions >= lo) & (self.positions <= hi)
        cands = [float(np.interp(lo, self.positions, self.sigmas)),
                 float(np.interp(hi, self.positions, self.sigmas))]
        if np.any(inside):
            cands.append(float(np.max(self.sigmas[inside])))
        return max(cands) * self.density_scale


@dataclass(frozen=True)
class ClipPlane:
    """Half-space (unit normal, offset); material with n.p - offset < 0 is removed."""

    normal: tuple[float, float, float]
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        if abs(np.linalg.norm(n) - 1.0) > 1e-6:
            raise ValueError("clip-plane normal must be unit length")


@dataclass(frozen=True)
class IsoConfig:
    """Opaque iso-surface shading: gradient threshold plus a surface color map."""

    gradient_threshold: float
    surface_tf: TransferFunction
    brdf: str = "lambertian"

    def __post_init__(self):
        if self.gradient_threshold < 0:
            raise ValueError("gradient_threshold must be >= 0")
        if self.brdf != "lambertian":
            raise ValueError(f"unsupported brdf {self.brdf!r}")


@dataclass(frozen=True)
class Lighting:
    """Environment-map path or a camera headlight."""

    mode: str = "headlight"  # "environment" | "headlight"
    environment_path: str | None = None
    headlight_intensity: float = 1.0

    def __post_init__(self):
        if self.mode not in ("environment", "headlight"):
            raise ValueError(f"unknown lighting mode {self.mode!r}")
        if self.mode == "environment" and not self.environment_path:
            raise ValueError("environment lighting needs a map path")


@dataclass(frozen=True)
class Preset:
    """Fixed rendering configuration baked into generated images."""

    tf: TransferFunction
    clip_planes: tuple[ClipPlane, ...] = ()
    iso: IsoConfig | None = None
    lighting: Lighting = field(default_factory=Lighting)
    exposure: float = 1.0
    scatter_albedo: float = 0.8

    def __post_init__(self):
        if len(self.clip_planes) > 6:
            raise ValueError("at most 6 clip planes are supported")
        if not 0.0 <= self.scatter_albedo <= 1.0:
            raise ValueError("scatter_albedo must lie in [0, 1]")

    def clip_mask(self, points) -> np.ndarray:
        """True where a point is removed by some clip plane."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        removed = np.zeros(pts.shape[0], dtype=bool)
        for pl in self.clip_planes:
            removed |= pts @ np.asarray(pl.normal) - pl.offset < 0
        return removed

    def tables(self):
        """Flat arrays for jitted kernels: (tf_pos, tf_col, tf_sig*scale, planes)."""
        planes = np.zeros((len(self.clip_planes), 4), dtype=np.float64)
        for i, pl in enumerate(self.clip_planes):
            planes[i, :3] = pl.normal
            planes[i, 3] = pl.offset
        return (np.asarray(self.tf.positions, dtype=np.float64),
                np.asarray(self.tf.colors, dtype=np.float64),
                np.asarray(self.tf.sigmas, dtype=np.float64) * self.tf.density_scale,
                planes)


@dataclass(frozen=True)
class OccupancyGrid:
    """Coarse per-block material flags plus a global extinction majorant.

    ``flags[b] == 1`` iff some voxel center in block b classifies to sigma > 0.
    ``traversal_flags`` is the one-block dilation used for skipping so that
    trilinear interpolation reaching across block borders stays conservative.
    """

    dims: tuple[int, int, int]
    block_size: int
    flags: np.ndarray            # (bz, by, bx) uint8, contract flags
    traversal_flags: np.ndarray  # dilated flags actually used for skipping
    sigma_max: float

    @property
    def occupied_count(self) -> int:
        return int(self.flags.sum())


def load_volume(path: str, meta: str | dict | None = None) -> VolumeGrid:
    """Load a raw little-endian volume with its sidecar metadata.

    ``meta`` may be a path to the metadata file, a parsed dict, or None to
    look for ``<path minus extension>.meta``. Values are normalized to [0, 1]
    using the element type's full range.
    """
    if meta is None:
        meta = os.path.splitext(path)[0] + ".meta"
    if isinstance(meta, str):
        meta = parse_volume_meta(meta)

    dims = tuple(int(v) for v in meta["dims"])
    dtype = str(meta["dtype"])
    spacing = tuple(float(v) for v in meta.get("spacing", (1.0, 1.0, 1.0)))
    origin = tuple(float(v) for v in meta.get("origin", (0.0, 0.0, 0.0)))
    if dtype not in _DTYPE_MAP:
        raise VolumeFormatError(f"unsupported element type {dtype!r}")

    n = dims[0] * dims[1] * dims[2]
    expected = n * np.dtype(_DTYPE_MAP[dtype]).itemsize
    actual = os.path.getsize(path)
    if actual != expected:
        raise VolumeFormatError(
            f"{path}: file holds {actual} bytes but dims {dims} with {dtype} "
            f"require {expected}")

    raw = np.fromfile(path, dtype=np.dtype(_DTYPE_MAP[dtype]).newbyteorder("<"))
    data = raw.astype(np.float64) / _DTYPE_SCALE[dtype]
    if dtype == "f32":
        data = np.clip(data, 0.0, 1.0)
    return VolumeGrid(dims, spacing, origin, data)


def save_volume(volume: VolumeGrid, path: str, dtype: str = "f32") -> None:
    """Write a raw volume plus its ``.meta`` sidecar."""
    if dtype not in _DTYPE_MAP:
        raise VolumeFormatError(f"unsupported element type {dtype!r}")
    scaled = volume.data * _DTYPE_SCALE[dtype]
    if dtype != "f32":
        scaled = np.round(scaled)
    arr = scaled.astype(np.dtype(_DTYPE_MAP[dtype]).newbyteorder("<"))
    arr.tofile(path)
    meta_path = os.path.splitext(path)[0] + ".meta"
    with open(meta_path, "w") as fh:
        fh.write(f"dims = {volume.dims[0]} {volume.dims[1]} {volume.dims[2]}\n")
        fh.write(f"dtype = {dtype}\n")
        fh.write(f"spacing = {volume.spacing[0]} {volume.spacing[1]} {volume.spacing[2]}\n")
        fh.write(f"origin = {volume.origin[0]} {volume.origin[1]} {volume.origin[2]}\n")


def parse_volume_meta(path: str) -> dict:
    """Parse the key = value sidecar format."""
    meta: dict = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or "=" not in line:
                continue
            key, _, value = line.partition("=")
            meta[key.strip()] = value.split()
    meta_out: dict = {}
    if "dims" in meta:
        meta_out["dims"] = [int(v) for v in meta["dims"]]
    if "dtype" in meta:
        meta_out["dtype"] = meta["dtype"][0]
    for key in ("spacing", "origin"):
        if key in meta:
            meta_out[key] = [float(v) for v in meta[key]]
    return meta_out


def sample(volume: VolumeGrid, points) -> np.ndarray:
    """Trilinear interpolation at world points; 0 outside the bounding box.

    Border voxels are edge-replicated inside the half-voxel shell between the
    outermost centers and the bounding box.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    lo, hi = volume.bbox
    inside = np.all((pts >= lo) & (pts <= hi), axis=1)

    g = (pts - np.asarray(volume.origin)) / np.asarray(volume.spacing)
    nx, ny, nz = volume.dims
    i0 = np.floor(g).astype(np.int64)
    f = g - i0
    out = np.zeros(pts.shape[0], dtype=np.float64)
    arr = volume.data

    def fetch(ix, iy, iz):
        ix = np.clip(ix, 0, nx - 1)
        iy = np.clip(iy, 0, ny - 1)
        iz = np.clip(iz, 0, nz - 1)
        return arr[ix + nx * (iy + ny * iz)]

    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    c = np.zeros(pts.shape[0])
    for dz in (0, 1):
        wz = fz if dz else 1.0 - fz
        for dy in (0, 1):
            wy = fy if dy else 1.0 - fy
            for dx in (0, 1):
                wx = fx if dx else 1.0 - fx
                c = c + wx * wy * wz * fetch(i0[:, 0] + dx, i0[:, 1] + dy,
                                             i0[:, 2] + dz)
    out[inside] = c[inside]
    if np.asarray(points).ndim == 1:
        return float(out[0])
    return out


def classify(preset: Preset, s, points):
    """Map scalar values at world points to (emission rgb, extinction sigma).

    Clipped points yield sigma = 0 (and black emission).
    """
    s = np.asarray(s, dtype=np.float64)
    scalar_input = s.ndim == 0
    color, sigma = preset.tf.evaluate(np.atleast_1d(s))
    removed = preset.clip_mask(points)
    sigma = np.where(removed, 0.0, sigma)
    color = np.where(removed[:, None], 0.0, color)
    if scalar_input:
        return color[0], float(sigma[0])
    return color, sigma


def build_occupancy(volume: VolumeGrid, preset: Preset, block_size: int = 4) -> OccupancyGrid:
    """Flag coarse blocks containing material and record a safe majorant.

    The majorant bounds the transfer function over the continuous scalar range
    spanned by material-bearing blocks and their one-block neighborhood, which
    stays valid under trilinear interpolation (the flags themselves remain the
    voxel-center contract).
    """
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    nx, ny, nz = volume.dims
    centers = volume.voxel_centers()
    _, sigma = classify(preset, volume.data, centers)
    sig3d = sigma.reshape(nz, ny, nx)

    bx = (nx + block_size - 1) // block_size
    by = (ny + block_size - 1) // block_size
    bz = (nz + block_size - 1) // block_size
    pad = (bz * block_size - nz, by * block_size - ny, bx * block_size - nx)
    sig_pad = np.pad(sig3d, ((0, pad[0]), (0, pad[1]), (0, pad[2])))
    blocks = sig_pad.reshape(bz, block_size, by, block_size, bx, block_size)
    flags = (blocks.max(axis=(1, 3, 5)) > 0).astype(np.uint8)

    traversal = ndimage.binary_dilation(flags, structure=np.ones((3, 3, 3))) \
        .astype(np.uint8)

    sigma_max = 0.0
    if flags.any():
        data3d = volume.data.reshape(nz, ny, nx)
        voxel_flags = np.kron(flags, np.ones((block_size,) * 3, dtype=np.uint8))
        voxel_flags = voxel_flags[:nz, :ny, :nx].astype(bool)
        support = ndimage.binary_dilation(voxel_flags,
                                          structure=np.ones((3, 3, 3)))
        vals = data3d[support]
        sigma_max = preset.tf.max_sigma_on_interval(float(vals.min()),
                                                    float(vals.max()))
    return OccupancyGrid((bx, by, bz), block_size, flags, traversal, sigma_max)


def load_preset(path: str) -> Preset:
    """Read a preset document (JSON tree; field names in docs/format.md)."""
    with open(path) as fh:
        doc = json.load(fh)
    tf_doc = doc["transfer_function"]
    tf = TransferFunction.from_nodes(
        [(n["scalar"], n["color"], n["density"]) for n in tf_doc["nodes"]],
        tf_doc.get("density_scale", 1.0))
    clips = tuple(ClipPlane(tuple(c["normal"]), float(c["offset"]))
                  for c in doc.get("clip_planes", []))
    iso = None
    if doc.get("iso"):
        iso_doc = doc["iso"]
        iso = IsoConfig(
            float(iso_doc["gradient_threshold"]),
            TransferFunction.from_nodes(
                [(n["scalar"], n["color"], n["density"])
                 for n in iso_doc["surface_nodes"]],
                iso_doc.get("density_scale", 1.0)),
            iso_doc.get("brdf", "lambertian"))
    light_doc = doc.get("lighting", {"mode": "headlight"})
    lighting = Lighting(light_doc["mode"], light_doc.get("path"),
                        light_doc.get("intensity", 1.0))
    return Preset(tf, clips, iso, lighting,
                  float(doc.get("exposure", 1.0)),
                  float(doc.get("scatter_albedo", 0.8)))


def save_preset(preset: Preset, path: str) -> None:
    doc = {
        "transfer_function": {
            "nodes": [{"scalar": float(p), "color": [float(v) for v in c],
                       "density": float(s)}
                      for p, c, s in zip(preset.tf.positions, preset.tf.colors,
                                         preset.tf.sigmas)],
            "density_scale": preset.tf.density_scale,
        },
        "clip_planes": [{"normal": list(pl.normal), "offset": pl.offset}
                        for pl in preset.clip_planes],
        "iso": None,
        "lighting": {"mode": preset.lighting.mode},
        "exposure": preset.exposure,
        "scatter_albedo": preset.scatter_albedo,
    }
    if preset.iso is not None:
        doc["iso"] = {
            "gradient_threshold": preset.iso.gradient_threshold,
            "surface_nodes": [
                {"scalar": float(p), "color": [float(v) for v in c],
                 "density": float(s)}
                for p, c, s in zip(preset.iso.surface_tf.positions,
                                   preset.iso.surface_tf.colors,
                                   preset.iso.surface_tf.sigmas)],
            "density_scale": preset.iso.surface_tf.density_scale,
            "brdf": preset.iso.brdf,
        }
    if preset.lighting.mode == "environment":
        doc["lighting"]["path"] = preset.lighting.environment_path
    else:
        doc["lighting"]["intensity"] = preset.lighting.headlight_intensity
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
