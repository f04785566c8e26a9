"""Procedural forest worlds.

A world is a Perlin-noise heightmap plus cylindrical trees placed by
Poisson-disk sampling.  It is the analytic ground truth that voxelization,
depth rendering, closed-loop simulation, and metrics all query, so every
query here must be cheap, deterministic, and defined over the whole extent.
Worlds are immutable after construction; generation is single-threaded so
that a seed always reproduces the same world bit-for-bit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from forestnav.errors import ConfigError, DomainError


@dataclass
class TerrainParams:
    """Noise and tree-placement parameters.

    Defaults are tuned (not derived) so that default worlds land near an
    average slope of ~6 degrees with maxima around ~25 degrees.
    """

    octaves: int = 5
    base_frequency: float = 0.025
    amplitude: float = 3.5
    seed: int = 0
    tree_density: float = 1.0 / 75.0
    tree_radius: float = 0.25
    tree_spacing: float = 2.0
    tree_height: float = 5.0
    heightmap_cell: float = 0.5
    size_z: float = 20.0
    z_min: float = -5.0
    persistence: float = 0.65
    lacunarity: float = 2.0

    def validate(self):
        if self.tree_density < 0:
            raise ConfigError("tree_density must be >= 0")
        if self.tree_density > 0 and self.tree_spacing <= 2.0 * self.tree_radius:
            raise ConfigError(
                f"tree_spacing ({self.tree_spacing}) must exceed twice the tree "
                f"radius ({self.tree_radius})"
            )
        if self.octaves < 1 or self.base_frequency <= 0 or self.amplitude < 0:
            raise ConfigError("invalid noise parameters")


def _perlin_grid(xs: np.ndarray, ys: np.ndarray, perm: np.ndarray,
                 grad_angles: np.ndarray) -> np.ndarray:
    """Classic 2D gradient noise on the mesh xs x ys, values roughly in [-1, 1]."""
    gx = np.cos(grad_angles)
    gy = np.sin(grad_angles)

    x = xs[None, :]
    y = ys[:, None]
    xi = np.floor(x).astype(np.int64)
    yi = np.floor(y).astype(np.int64)
    xf = x - xi
    yf = y - yi

    def grad_dot(ix, iy, dx, dy):
        h = perm[(perm[ix & 255] + iy) & 255]
        return gx[h] * dx + gy[h] * dy

    n00 = grad_dot(xi, yi, xf, yf)
    n10 = grad_dot(xi + 1, yi, xf - 1.0, yf)
    n01 = grad_dot(xi, yi + 1, xf, yf - 1.0)
    n11 = grad_dot(xi + 1, yi + 1, xf - 1.0, yf - 1.0)

    u = xf * xf * xf * (xf * (xf * 6.0 - 15.0) + 10.0)
    v = yf * yf * yf * (yf * (yf * 6.0 - 15.0) + 10.0)

    nx0 = n00 + u * (n10 - n00)
    nx1 = n01 + u * (n11 - n01)
    return nx0 + v * (nx1 - nx0)


def _multi_octave_heightmap(nx: int, ny: int, dx: float, dy: float,
                            params: TerrainParams) -> np.ndarray:
    rng = np.random.default_rng([params.seed, 0])
    perm = rng.permutation(256).astype(np.int64)
    grad_angles = rng.uniform(0.0, 2.0 * math.pi, 256)

    xs = np.arange(nx) * dx
    ys = np.arange(ny) * dy
    total = np.zeros((ny, nx))
    amp = 1.0
    freq = params.base_frequency
    amp_sum = 0.0
    for octave in range(params.octaves):
        # Decorrelate octaves by offsetting into distinct noise-lattice regions.
        off = 1000.0 * (octave + 1)
        total += amp * _perlin_grid(xs * freq + off, ys * freq + off, perm, grad_angles)
        amp_sum += amp
        amp *= params.persistence
        freq *= params.lacunarity
    return params.amplitude * total / amp_sum


def _poisson_disk(extent_x: float, extent_y: float, spacing: float,
                  rng: np.random.Generator, k: int = 30) -> list[tuple[float, float]]:
    """Bridson dart throwing: maximal point set with pairwise distance >= spacing."""
    cell = spacing / math.sqrt(2.0)
    gw = max(1, int(math.ceil(extent_x / cell)))
    gh = max(1, int(math.ceil(extent_y / cell)))
    grid: list[int] = [-1] * (gw * gh)
    points: list[tuple[float, float]] = []
    active: list[int] = []

    def cell_of(p):
        return min(int(p[0] / cell), gw - 1), min(int(p[1] / cell), gh - 1)

    def fits(p):
        cx, cy = cell_of(p)
        for oy in range(max(0, cy - 2), min(gh, cy + 3)):
            for ox in range(max(0, cx - 2), min(gw, cx + 3)):
                j = grid[ox + oy * gw]
                if j >= 0:
                    q = points[j]
                    if (p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 < spacing * spacing:
                        return False
        return True

    def insert(p):
        points.append(p)
        active.append(len(points) - 1)
        cx, cy = cell_of(p)
        grid[cx + cy * gw] = len(points) - 1

    insert((float(rng.uniform(0, extent_x)), float(rng.uniform(0, extent_y))))
    while active:
        pick = int(rng.integers(len(active)))
        base = points[active[pick]]
        placed = False
        for _ in range(k):
            ang = rng.uniform(0.0, 2.0 * math.pi)
            rad = spacing * (1.0 + rng.uniform())
            cand = (base[0] + rad * math.cos(ang), base[1] + rad * math.sin(ang))
            if 0.0 <= cand[0] < extent_x and 0.0 <= cand[1] < extent_y and fits(cand):
                insert(cand)
                placed = True
                break
        if not placed:
            active.pop(pick)
    return points


@dataclass
class World:
    """Heightmap + trees with analytic height/occupancy queries."""

    heightmap: np.ndarray          # (ny, nx) elevations, row index = y
    cell: float                    # heightmap node spacing (m)
    origin: tuple[float, float]    # world coords of node (0, 0)
    extent: tuple[float, float, float]  # (L, W, H)
    z_min: float
    trees: np.ndarray              # (n, 4): x, y, radius, height
    seed: int
    params: TerrainParams = field(default_factory=TerrainParams, repr=False)

    def __post_init__(self):
        self.heightmap = np.ascontiguousarray(self.heightmap, dtype=np.float32)
        self.trees = np.asarray(self.trees, dtype=float).reshape(-1, 4)
        L, W, _ = self.extent
        if self.trees.size:
            ok = (
                (self.trees[:, 0] >= self.origin[0])
                & (self.trees[:, 0] <= self.origin[0] + L)
                & (self.trees[:, 1] >= self.origin[1])
                & (self.trees[:, 1] <= self.origin[1] + W)
            )
            if not np.all(ok):
                raise ConfigError("tree center outside world extent")
            if np.any(self.trees[:, 2] <= 0):
                raise ConfigError("tree radius must be positive")

    def contains(self, x, y) -> bool:
        L, W, _ = self.extent
        return (
            self.origin[0] <= x <= self.origin[0] + L
            and self.origin[1] <= y <= self.origin[1] + W
        )

    def height_at(self, x, y):
        """Bilinear heightmap interpolation; accepts scalars or equal-shape arrays."""
        x_arr = np.asarray(x, dtype=float)
        y_arr = np.asarray(y, dtype=float)
        L, W, _ = self.extent
        ux = (x_arr - self.origin[0]) / self.cell
        uy = (y_arr - self.origin[1]) / self.cell
        ny, nx = self.heightmap.shape
        if np.any(ux < -1e-9) or np.any(ux > nx - 1 + 1e-9) or \
           np.any(uy < -1e-9) or np.any(uy > ny - 1 + 1e-9):
            raise DomainError(f"height query outside extent {L}x{W}")
        ix = np.clip(np.floor(ux).astype(np.int64), 0, nx - 2)
        iy = np.clip(np.floor(uy).astype(np.int64), 0, ny - 2)
        fx = ux - ix
        fy = uy - iy
        h = self.heightmap.astype(float, copy=False)
        h00 = h[iy, ix]
        h10 = h[iy, ix + 1]
        h01 = h[iy + 1, ix]
        h11 = h[iy + 1, ix + 1]
        out = (
            h00 * (1.0 - fx) * (1.0 - fy)
            + h10 * fx * (1.0 - fy)
            + h01 * (1.0 - fx) * fy
            + h11 * fx * fy
        )
        return float(out) if np.isscalar(x) or np.ndim(x) == 0 else out

    def clearance(self, x, y):
        """Distance from (x, y) to the nearest tree surface; inf when no trees."""
        if self.trees.shape[0] == 0:
            if np.ndim(x) == 0:
                return math.inf
            return np.full(np.shape(np.asarray(x)), np.inf)
        x_arr = np.asarray(x, dtype=float)
        y_arr = np.asarray(y, dtype=float)
        dx = x_arr[..., None] - self.trees[:, 0]
        dy = y_arr[..., None] - self.trees[:, 1]
        d = np.hypot(dx, dy) - self.trees[:, 2]
        out = d.min(axis=-1)
        return float(out) if np.ndim(x) == 0 else out

    def slope_stats(self, samples: int = 200_000, seed: int = 0) -> tuple[float, float]:
        """(average, maximum) terrain slope in radians from heightmap gradients."""
        gy, gx = np.gradient(self.heightmap.astype(float), self.cell)
        slope = np.arctan(np.hypot(gx, gy))
        return float(slope.mean()), float(slope.max())

    # --- persistence -----------------------------------------------------

    def save(self, directory) -> None:
        """Write `world.json` + `world.hgt` (little-endian f32, row-major)."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        header = {
            "extent": list(self.extent),
            "z_min": self.z_min,
            "cell": self.cell,
            "origin": list(self.origin),
            "shape": list(self.heightmap.shape),
            "seed": self.seed,
            "trees": [
                {"x": t[0], "y": t[1], "radius": t[2], "height": t[3]}
                for t in self.trees.tolist()
            ],
        }
        (d / "world.json").write_text(json.dumps(header, indent=2, sort_keys=True))
        self.heightmap.astype("<f4").tofile(d / "world.hgt")

    @classmethod
    def load(cls, directory) -> "World":
        d = Path(directory)
        header = json.loads((d / "world.json").read_text())
        shape = tuple(header["shape"])
        blob = np.fromfile(d / "world.hgt", dtype="<f4")
        if blob.size != shape[0] * shape[1]:
            raise ConfigError(
                f"heightmap blob has {blob.size} floats, header says {shape}"
            )
        trees = np.array(
            [[t["x"], t["y"], t["radius"], t["height"]] for t in header["trees"]],
            dtype=float,
        ).reshape(-1, 4)
        return cls(
            heightmap=blob.reshape(shape),
            cell=header["cell"],
            origin=tuple(header["origin"]),
            extent=tuple(header["extent"]),
            z_min=header["z_min"],
            trees=trees,
            seed=header["seed"],
        )


def generate_world(params: TerrainParams, extent: tuple[float, float]) -> World:
    """Generate a forest world over [0, L] x [0, W].

    The heightmap is multi-octave Perlin noise scaled by `amplitude`; trees
    are a Poisson-disk set thinned to round(density * L * W) stems.  The same
    params and seed always produce the identical world.
    """
    params.validate()
    L, W = float(extent[0]), float(extent[1])
    if L <= 0 or W <= 0:
        raise ConfigError("extent must be positive")

    nx = int(round(L / params.heightmap_cell)) + 1
    ny = int(round(W / params.heightmap_cell)) + 1
    dx = L / (nx - 1)
    dy = W / (ny - 1)
    if abs(dx - dy) > 1e-9:
        raise ConfigError(
            f"heightmap_cell {params.heightmap_cell} must evenly divide both "
            f"extents ({L} x {W})"
        )
    if params.amplitude == 0.0:
        heightmap = np.zeros((ny, nx), dtype=np.float32)
    else:
        heightmap = _multi_octave_heightmap(nx, ny, dx, dx, params)

    target = int(round(params.tree_density * L * W))
    if target == 0:
        trees = np.zeros((0, 4))
    else:
        rng = np.random.default_rng([params.seed, 1])
        candidates = _poisson_disk(L, W, params.tree_spacing, rng)
        if len(candidates) < target:
            raise ConfigError(
                f"tree density {params.tree_density:.5f}/m^2 is infeasible at "
                f"minimum spacing {params.tree_spacing} m "
                f"(got {len(candidates)} sites, need {target})"
            )
        keep = np.sort(rng.choice(len(candidates), size=target, replace=False))
        pts = np.array([candidates[i] for i in keep])
        trees = np.column_stack(
            [
                pts[:, 0],
                pts[:, 1],
                np.full(target, params.tree_radius),
                np.full(target, params.tree_height),
            ]
        )

    return World(
        heightmap=heightmap,
        cell=dx,
        origin=(0.0, 0.0),
        extent=(L, W, params.size_z),
        z_min=params.z_min,
        trees=trees,
        seed=params.seed,
        params=params,
    )
