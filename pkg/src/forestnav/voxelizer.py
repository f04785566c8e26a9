"""Rasterize a world into terrain and obstacle point clouds.

The 2D generator emits one point per ground cell at the interpolated
terrain height; the 3D generator emits the centers of voxels intersecting a
tree trunk.  Both are pure functions of the world: work is split across
worker threads but merged and sorted deterministically, so the bytes on
disk never depend on scheduling.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from forestnav.errors import ConfigError
from forestnav.worldgen import World

PLY_MAGIC = b"FNPC"


@dataclass(frozen=True)
class VoxelizerConfig:
    voxel_size: float
    mode: str  # "2d-terrain" | "3d-obstacle"
    extent: tuple[float, float, float]
    z_min: float = 0.0
    workers: int = 1

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise ConfigError("voxel_size must be positive")
        if self.mode not in ("2d-terrain", "3d-obstacle"):
            raise ConfigError(f"unknown voxelizer mode {self.mode!r}")
        if any(e <= 0 for e in self.extent):
            raise ConfigError("extent must be positive")


@dataclass
class PointCloud:
    points: np.ndarray  # (n, 3)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)

    @property
    def count(self) -> int:
        return self.points.shape[0]

    # --- persistence -----------------------------------------------------

    def save_ply(self, path) -> None:
        lines = [
            "ply",
            "format ascii 1.0",
            f"element vertex {self.count}",
            "property float x",
            "property float y",
            "property float z",
            "end_header",
        ]
        body = "\n".join(
            f"{p[0]!r} {p[1]!r} {p[2]!r}" for p in self.points.tolist()
        )
        Path(path).write_text("\n".join(lines) + "\n" + body + ("\n" if body else ""))

    @classmethod
    def load_ply(cls, path) -> "PointCloud":
        text = Path(path).read_text().splitlines()
        if not text or text[0].strip() != "ply":
            raise ConfigError(f"{path} is not a PLY file")
        try:
            end = text.index("end_header")
        except ValueError:
            raise ConfigError(f"{path}: missing end_header") from None
        count = 0
        for line in text[:end]:
            if line.startswith("element vertex"):
                count = int(line.split()[-1])
        rows = [tuple(map(float, line.split())) for line in text[end + 1:end + 1 + count]]
        if len(rows) != count:
            raise ConfigError(f"{path}: expected {count} vertices, found {len(rows)}")
        return cls(points=np.array(rows, dtype=float).reshape(-1, 3))

    def save_binary(self, path) -> None:
        """Compact variant: magic, u32 count, little-endian f32 xyz triples."""
        with open(path, "wb") as f:
            f.write(PLY_MAGIC)
            f.write(struct.pack("<I", self.count))
            f.write(self.points.astype("<f4").tobytes())

    @classmethod
    def load_binary(cls, path) -> "PointCloud":
        raw = Path(path).read_bytes()
        if raw[:4] != PLY_MAGIC:
            raise ConfigError(f"{path}: bad magic")
        (count,) = struct.unpack("<I", raw[4:8])
        pts = np.frombuffer(raw[8:], dtype="<f4").astype(float)
        if pts.size != 3 * count:
            raise ConfigError(f"{path}: truncated point data")
        return cls(points=pts.reshape(-1, 3))


def _sorted_by_row_major(points: np.ndarray) -> np.ndarray:
    """Deterministic (z, y, x) lexicographic order with x varying fastest."""
    if points.shape[0] == 0:
        return points
    order = np.lexsort((points[:, 0], points[:, 1], points[:, 2]))
    return points[order]


def voxelize_terrain_2d(world: World, cfg: VoxelizerConfig) -> PointCloud:
    """One point per ground cell at z = height_at(cell center)."""
    if cfg.mode != "2d-terrain":
        raise ConfigError("config mode must be 2d-terrain")
    L, W, _ = cfg.extent
    l = cfg.voxel_size
    nx = int(math.ceil(L / l))
    ny = int(math.ceil(W / l))
    cx = (np.arange(nx) + 0.5) * l
    cy = (np.arange(ny) + 0.5) * l
    # Cells from the ceil overhang may center slightly outside; clamp the query.
    cx = np.minimum(cx, L)
    cy = np.minimum(cy, W)
    gx, gy = np.meshgrid(cx, cy)
    gz = world.height_at(gx.ravel(), gy.ravel())
    pts = np.column_stack([gx.ravel(), gy.ravel(), gz])
    return PointCloud(points=_sorted_by_row_major(pts))


def _tree_voxels(world: World, cfg: VoxelizerConfig,
                 tree: np.ndarray) -> np.ndarray:
    """Integer (ix, iy, iz) indices of voxels intersecting one trunk cylinder."""
    L, W, H = cfg.extent
    l = cfg.voxel_size
    nx = int(math.ceil(L / l))
    ny = int(math.ceil(W / l))
    nz = int(math.ceil(H / l))
    tx, ty, radius, height = tree
    reach = radius + 0.5 * l
    ground = world.height_at(tx, ty)

    ix0 = max(0, int(math.floor((tx - reach) / l - 0.5)) - 1)
    ix1 = min(nx - 1, int(math.ceil((tx + reach) / l - 0.5)) + 1)
    iy0 = max(0, int(math.floor((ty - reach) / l - 0.5)) - 1)
    iy1 = min(ny - 1, int(math.ceil((ty + reach) / l - 0.5)) + 1)
    iz0 = max(0, int(math.floor((ground - cfg.z_min) / l - 0.5)) - 1)
    iz1 = min(nz - 1, int(math.ceil((ground + height - cfg.z_min) / l - 0.5)) + 1)
    if ix0 > ix1 or iy0 > iy1 or iz0 > iz1:
        return np.zeros((0, 3), dtype=np.int64)

    ix = np.arange(ix0, ix1 + 1)
    iy = np.arange(iy0, iy1 + 1)
    iz = np.arange(iz0, iz1 + 1)
    cx = (ix + 0.5) * l
    cy = (iy + 0.5) * l
    cz = cfg.z_min + (iz + 0.5) * l

    # Exact occupancy tests (<= on the surface counts as occupied).
    horiz = np.hypot(cx[:, None] - tx, cy[None, :] - ty) <= reach
    vert = (cz >= ground) & (cz <= ground + height)
    occ = horiz[:, :, None] & vert[None, None, :]
    sel = np.argwhere(occ)
    if sel.size == 0:
        return np.zeros((0, 3), dtype=np.int64)
    return np.column_stack([ix[sel[:, 0]], iy[sel[:, 1]], iz[sel[:, 2]]])


def voxelize_obstacles_3d(world: World, cfg: VoxelizerConfig) -> PointCloud:
    """Centers of voxels occupied by a trunk; identical for any worker count."""
    if cfg.mode != "3d-obstacle":
        raise ConfigError("config mode must be 3d-obstacle")
    l = cfg.voxel_size
    trees = world.trees
    if trees.shape[0] == 0:
        return PointCloud(points=np.zeros((0, 3)))

    workers = max(1, cfg.workers)
    if workers == 1:
        chunks = [_tree_voxels(world, cfg, t) for t in trees]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda t: _tree_voxels(world, cfg, t), trees))

    idx = np.vstack(chunks)
    if idx.shape[0] == 0:
        return PointCloud(points=np.zeros((0, 3)))
    # Overlapping trunks may claim the same voxel; the cloud holds it once.
    idx = np.unique(idx, axis=0)
    centers = np.column_stack(
        [
            (idx[:, 0] + 0.5) * l,
            (idx[:, 1] + 0.5) * l,
            cfg.z_min + (idx[:, 2] + 0.5) * l,
        ]
    )
    return PointCloud(points=_sorted_by_row_major(centers))
