"""Depth rendering against the analytic world, plus capture utilities.

Rays are cast per pixel against the heightmap (marched, then refined by
bisection) and the tree trunks (closed-form cylinder intersection); depth
is the Euclidean range along the ray, encoded as 16-bit millimeters with 0
meaning no return.

Pixels sample bearing and elevation uniformly in angle, so a column band of
width/m_theta columns covers exactly one anchor cell of the lattice, with
column index increasing with bearing.  Rendering is deterministic for a
given pose and seed regardless of how many worker threads run.
"""

from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from forestnav.errors import ConfigError, DomainError
from forestnav.worldgen import World


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    fov_h: float
    fov_v: float
    max_range: float = 12.0
    mm_per_unit: float = 1.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ConfigError("image dimensions must be positive")
        if not (0 < self.fov_h < math.pi and 0 < self.fov_v < math.pi):
            raise ConfigError("FOV must be in (0, pi)")
        if self.max_range <= 0:
            raise ConfigError("max_range must be positive")

    def bearing_of_column(self, col) -> np.ndarray:
        """Azimuth of the pixel-center ray; increases with column index."""
        c = np.asarray(col, dtype=float)
        return -0.5 * self.fov_h + (c + 0.5) * self.fov_h / self.width

    def elevation_of_row(self, row) -> np.ndarray:
        """Elevation of the pixel-center ray; row 0 looks up."""
        r = np.asarray(row, dtype=float)
        return 0.5 * self.fov_v - (r + 0.5) * self.fov_v / self.height

    def column_band(self, col: int, m_theta: int) -> int:
        """Lattice cell index owning this column (bands of width/m_theta)."""
        if self.width % m_theta != 0:
            raise ConfigError(f"width {self.width} not divisible by {m_theta}")
        return col // (self.width // m_theta)


@dataclass
class DepthImage:
    """16-bit range image; sample = clamp(round(depth_m * 1000), 0, 65535)."""

    data: np.ndarray
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint16)
        if self.data.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ConfigError(
                f"image shape {self.data.shape} does not match intrinsics"
            )

    @property
    def validity(self) -> np.ndarray:
        return self.data > 0

    def depths_m(self) -> np.ndarray:
        """Float depths in meters; invalid pixels are NaN."""
        out = self.data.astype(float) / 1000.0
        out[~self.validity] = np.nan
        return out

    # --- persistence: binary PGM (P5, maxval 65535, big-endian samples) ---

    def save_pgm(self, path) -> None:
        header = f"P5\n{self.data.shape[1]} {self.data.shape[0]}\n65535\n"
        with open(path, "wb") as f:
            f.write(header.encode("ascii"))
            f.write(self.data.astype(">u2").tobytes())

    @classmethod
    def load_pgm(cls, path, intrinsics: CameraIntrinsics = None) -> "DepthImage":
        raw = Path(path).read_bytes()
        m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+(\d+)\s", raw)
        if not m:
            raise ConfigError(f"{path} is not a binary PGM")
        w, h, maxval = (int(m.group(i)) for i in (1, 2, 3))
        if maxval != 65535:
            raise ConfigError(f"{path}: expected 16-bit PGM, maxval {maxval}")
        data = np.frombuffer(raw[m.end():], dtype=">u2")
        if data.size != w * h:
            raise ConfigError(f"{path}: truncated pixel data")
        if intrinsics is None:
            intrinsics = CameraIntrinsics(
                width=w, height=h,
                fov_h=math.radians(80), fov_v=math.radians(55),
            )
        return cls(data=data.reshape(h, w).astype(np.uint16), intrinsics=intrinsics)


def encode_depth(depth_m: np.ndarray, valid: np.ndarray) -> np.ndarray:
    counts = np.clip(np.round(depth_m * 1000.0), 0, 65535).astype(np.uint16)
    counts[~valid] = 0
    return counts


def _ray_directions(intr: CameraIntrinsics, yaw: float) -> np.ndarray:
    """(h, w, 3) unit world-frame directions through the pixel centers."""
    bearing = intr.bearing_of_column(np.arange(intr.width)) + yaw
    elevation = intr.elevation_of_row(np.arange(intr.height))
    ce = np.cos(elevation)[:, None]
    se = np.sin(elevation)[:, None]
    cb = np.cos(bearing)[None, :]
    sb = np.sin(bearing)[None, :]
    return np.stack([ce * cb, ce * sb, np.broadcast_to(se, (intr.height, intr.width))],
                    axis=-1)


def _terrain_hits(world: World, origin: np.ndarray, dirs: np.ndarray,
                  max_range: float) -> np.ndarray:
    """Range to the terrain per ray (inf when no hit), marched then bisected."""
    n = dirs.shape[0]
    step = world.cell * 0.5
    n_steps = int(math.ceil(max_range / step)) + 1
    ts = np.arange(1, n_steps + 1) * step
    hit_t = np.full(n, np.inf)
    lo = np.zeros(n)
    found = np.zeros(n, dtype=bool)

    L, W, _ = world.extent
    prev_t = np.zeros(n)
    for t in ts:
        active = ~found
        if not active.any():
            break
        pts = origin[None, :] + t * dirs[active]
        inside = (
            (pts[:, 0] >= 0) & (pts[:, 0] <= L)
            & (pts[:, 1] >= 0) & (pts[:, 1] <= W)
        )
        below = np.zeros(pts.shape[0], dtype=bool)
        if inside.any():
            h = world.height_at(pts[inside, 0], pts[inside, 1])
            below[inside] = pts[inside, 2] <= h
        idx = np.flatnonzero(active)[below]
        hit_t[idx] = t
        lo[idx] = prev_t[idx]
        found[idx] = True
        prev_t[active] = t

    # Bisection refine on the bracketing interval [lo, hit_t].
    idx = np.flatnonzero(found)
    if idx.size:
        a = lo[idx]
        b = hit_t[idx]
        d = dirs[idx]
        for _ in range(40):
            mid = 0.5 * (a + b)
            pts = origin[None, :] + mid[:, None] * d
            px = np.clip(pts[:, 0], 0.0, L)
            py = np.clip(pts[:, 1], 0.0, W)
            below = pts[:, 2] <= world.height_at(px, py)
            b = np.where(below, mid, b)
            a = np.where(below, a, mid)
        hit_t[idx] = 0.5 * (a + b)
    return hit_t


def _tree_hits(world: World, origin: np.ndarray, dirs: np.ndarray,
               max_range: float) -> np.ndarray:
    """Range to the nearest trunk per ray (inf when no hit)."""
    n = dirs.shape[0]
    best = np.full(n, np.inf)
    if world.trees.shape[0] == 0:
        return best
    cam_xy = origin[:2]
    for tx, ty, radius, height in world.trees:
        if math.hypot(tx - cam_xy[0], ty - cam_xy[1]) > max_range + radius:
            continue
        ground = world.height_at(tx, ty)
        ox = origin[0] - tx
        oy = origin[1] - ty
        dx = dirs[:, 0]
        dy = dirs[:, 1]
        a = dx * dx + dy * dy
        b = 2.0 * (ox * dx + oy * dy)
        c = ox * ox + oy * oy - radius * radius
        disc = b * b - 4.0 * a * c
        ok = (disc >= 0) & (a > 1e-12)
        if not ok.any():
            continue
        sq = np.sqrt(np.where(ok, disc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            t0 = (-b - sq) / (2.0 * a)
            t1 = (-b + sq) / (2.0 * a)
        for t in (t0, t1):
            z = origin[2] + t * dirs[:, 2]
            valid = ok & (t > 0) & (z >= ground) & (z <= ground + height)
            best = np.where(valid & (t < best), t, best)
    return best


def render_depth(
    world: World,
    pose: tuple[float, float, float, float],
    intr: CameraIntrinsics,
    noise_sigma_coeff: float = 0.0,
    noise_dropout: float = 0.0,
    noise_seed: int = 0,
    workers: int = 1,
) -> DepthImage:
    """Cast one ray per pixel and take the nearest terrain or trunk return.

    `pose` is (x, y, z, yaw).  Raises DomainError when the camera sits below
    the local terrain.  Optional sensor noise applies a multiplicative
    Gaussian with sigma proportional to depth^2 plus dropout-to-invalid; it
    is generated by a counter-based RNG over pixel indices, so results do
    not depend on the worker count.
    """
    x, y, z, yaw = pose
    if not world.contains(x, y):
        raise DomainError("camera outside world extent")
    if z <= world.height_at(x, y):
        raise DomainError("camera below terrain")
    origin = np.array([x, y, z], dtype=float)
    dirs = _ray_directions(intr, yaw).reshape(-1, 3)

    def render_rows(sl):
        d = dirs[sl]
        t_terrain = _terrain_hits(world, origin, d, intr.max_range)
        t_tree = _tree_hits(world, origin, d, intr.max_range)
        return np.minimum(t_terrain, t_tree)

    if workers <= 1:
        t_hit = render_rows(slice(None))
    else:
        bounds = np.linspace(0, dirs.shape[0], workers + 1).astype(int)
        slices = [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            t_hit = np.concatenate(list(pool.map(render_rows, slices)))

    depth = t_hit.reshape(intr.height, intr.width)
    valid = np.isfinite(depth) & (depth <= intr.max_range)

    if noise_sigma_coeff > 0.0 or noise_dropout > 0.0:
        gen = np.random.Generator(np.random.Philox(key=noise_seed))
        gauss = gen.standard_normal(depth.shape)
        drop = gen.uniform(size=depth.shape)
        safe = np.where(valid, depth, 0.0)
        depth = np.where(valid, depth + gauss * noise_sigma_coeff * safe * safe, depth)
        valid &= drop >= noise_dropout
        valid &= depth > 0

    return DepthImage(
        data=encode_depth(np.where(valid, depth, 0.0), valid), intrinsics=intr
    )


def downsample_nearest(img: DepthImage, factor: int) -> DepthImage:
    """Nearest-neighbor decimation used for the supersampled capture path."""
    if factor < 1:
        raise ConfigError("factor must be >= 1")
    h, w = img.data.shape
    if h % factor or w % factor:
        raise ConfigError("image dimensions must be divisible by factor")
    data = img.data[factor // 2::factor, factor // 2::factor]
    intr = replace(img.intrinsics, width=w // factor, height=h // factor)
    return DepthImage(data=data, intrinsics=intr)


def sample_viewpoints(
    world: World,
    min_spacing: float,
    count: int,
    camera_height: float = 0.5,
    seed: int = 0,
    margin: float = 2.0,
) -> list[tuple[float, float, float, float]]:
    """Poisson-disk camera poses: spaced >= min_spacing, never inside a tree.

    Returns (x, y, z, yaw) tuples with z sitting camera_height above the
    local ground and yaw uniform.  Raises ConfigError naming the achievable
    count when the request does not fit.
    """
    from forestnav.worldgen import _poisson_disk

    L, W, _ = world.extent
    if count < 1:
        raise ConfigError("count must be >= 1")
    rng = np.random.default_rng([seed, 2])
    inner_x = L - 2.0 * margin
    inner_y = W - 2.0 * margin
    if inner_x <= 0 or inner_y <= 0:
        raise ConfigError("margin leaves no sampling area")
    candidates = _poisson_disk(inner_x, inner_y, min_spacing, rng)
    free = [
        (cx + margin, cy + margin)
        for cx, cy in candidates
        if world.clearance(cx + margin, cy + margin) > 0.0
    ]
    if len(free) < count:
        raise ConfigError(
            f"only {len(free)} viewpoints achievable at spacing {min_spacing} m "
            f"(requested {count})"
        )
    keep = np.sort(rng.choice(len(free), size=count, replace=False))
    poses = []
    for i in keep:
        px, py = free[int(i)]
        yaw = float(rng.uniform(-math.pi, math.pi))
        poses.append((px, py, world.height_at(px, py) + camera_height, yaw))
    return poses


def inpaint(img: DepthImage, tol_mm: float = 1.0, max_iterations: int = 10000) -> DepthImage:
    """Fill invalid pixels by neighbor-averaging diffusion.

    Invalid pixels start from their nearest valid value and relax under
    4-neighbor Jacobi iteration until the largest update drops below tol_mm.
    Valid pixels never change, so inpainting an already-complete image is
    the identity (and the operation is idempotent).
    """
    valid = img.validity
    if not valid.any():
        raise DomainError("cannot inpaint an all-invalid image")
    if valid.all():
        return DepthImage(data=img.data.copy(), intrinsics=img.intrinsics)

    field = img.data.astype(float)
    _, (fi, fj) = ndimage.distance_transform_edt(~valid, return_indices=True)
    field = field[fi, fj]
    field[valid] = img.data[valid]

    kernel = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])
    ones = np.ones_like(field)
    denom = ndimage.convolve(ones, kernel, mode="constant", cval=0.0)
    hole = ~valid
    for _ in range(max_iterations):
        avg = ndimage.convolve(field, kernel, mode="constant", cval=0.0) / denom
        delta = np.abs(avg[hole] - field[hole]).max() if hole.any() else 0.0
        field[hole] = avg[hole]
        if delta < tol_mm:
            break
    out = np.clip(np.round(field), 1, 65535).astype(np.uint16)
    out[valid] = img.data[valid]
    return DepthImage(data=out, intrinsics=img.intrinsics)
