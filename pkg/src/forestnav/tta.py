"""Terrain traversability analysis: point clouds to a differentiable cost map.

The pipeline rasterizes terrain points into a digital elevation map with
slope and roughness layers (local least-squares plane fits), thresholds and
dilates them into an obstacle mask, computes an exact Euclidean distance
field, combines geometry and obstacle-proximity costs, and exposes the
result through an interpolating bicubic surface so gradient-based
optimizers see a C1 function everywhere.

Grids are immutable after construction; `cost_at` may be called from any
number of threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from forestnav.errors import ConfigError, DomainError
from forestnav.voxelizer import PointCloud

# Interpolating (Catmull-Rom) cubic: f(t) = [1 t t^2 t^3] @ CR @ [f_-1 f_0 f_1 f_2]^T.
# Reproduces node values and is C1 with centered-difference node derivatives.
CATMULL_ROM = 0.5 * np.array(
    [
        [0.0, 2.0, 0.0, 0.0],
        [-1.0, 0.0, 1.0, 0.0],
        [2.0, -5.0, 4.0, -1.0],
        [-1.0, 3.0, -3.0, 1.0],
    ]
)


@dataclass(frozen=True)
class TtaConfig:
    cell_size: float = 0.2
    slope_max: float = math.radians(20.0)   # G_s threshold
    roughness_max: float = 0.1              # G_r threshold (m)
    r_dilate: float = 0.4
    d_0: float = 0.6
    k: float = 0.5
    lambda_r: float = 1.0
    lambda_s: float = 1.0
    lambda_c: float = 2.0
    feature_radius: float = 0.6

    def __post_init__(self):
        for name in (
            "cell_size", "slope_max", "roughness_max", "r_dilate",
            "d_0", "k", "lambda_r", "lambda_s", "lambda_c", "feature_radius",
        ):
            if not getattr(self, name) > 0:
                raise ConfigError(f"TtaConfig.{name} must be strictly positive")

    @property
    def d_t_cap(self) -> float:
        """Finite stand-in for 'no obstacles anywhere'; keeps C_safety ~ 0."""
        return 10.0 * self.d_0


@dataclass
class Dem:
    """Elevation / slope / roughness grids plus the projected obstacle mask."""

    elevation: np.ndarray   # (ny, nx) m
    slope: np.ndarray       # (ny, nx) rad, in [0, pi/2]
    roughness: np.ndarray   # (ny, nx) m
    cell_size: float
    origin: tuple[float, float]
    obstacle_mask: np.ndarray = None  # (ny, nx) bool, cells holding obstacle points

    def __post_init__(self):
        if self.obstacle_mask is None:
            self.obstacle_mask = np.zeros(self.elevation.shape, dtype=bool)
        shapes = {self.elevation.shape, self.slope.shape, self.roughness.shape,
                  self.obstacle_mask.shape}
        if len(shapes) != 1:
            raise ConfigError("DEM layers must share dimensions")


def _disk_kernel(radius_cells: float) -> np.ndarray:
    r = int(math.floor(radius_cells))
    ii, jj = np.mgrid[-r:r + 1, -r:r + 1]
    return (np.hypot(ii, jj) <= radius_cells).astype(float)


def rasterize_dem(terrain: PointCloud, obstacles: PointCloud, cfg: TtaConfig) -> Dem:
    """Bin terrain points into cells; fit local planes for slope and roughness.

    Elevation is the mean point height per cell (empty cells copy their
    nearest filled neighbor).  Slope is the angle between the least-squares
    plane over all points within `feature_radius` and the vertical;
    roughness is the standard deviation of perpendicular point-to-plane
    distances.  Cells whose neighborhood has fewer than 3 points (or a
    degenerate fit) are marked with the maximum slope.
    """
    if terrain.count == 0:
        raise ConfigError("terrain cloud is empty")
    cell = cfg.cell_size
    pts = terrain.points
    xmin = math.floor(pts[:, 0].min() / cell) * cell
    ymin = math.floor(pts[:, 1].min() / cell) * cell
    nx = int(math.floor((pts[:, 0].max() - xmin) / cell)) + 1
    ny = int(math.floor((pts[:, 1].max() - ymin) / cell)) + 1

    ix = np.clip(((pts[:, 0] - xmin) / cell).astype(np.int64), 0, nx - 1)
    iy = np.clip(((pts[:, 1] - ymin) / cell).astype(np.int64), 0, ny - 1)
    flat = iy * nx + ix

    # Per-cell moment sums; coordinates are taken relative to each cell
    # center later, so accumulate raw moments here.
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    def acc(w):
        return np.bincount(flat, weights=w, minlength=nx * ny).reshape(ny, nx)

    s1 = acc(np.ones_like(x))
    sx, sy, sz = acc(x), acc(y), acc(z)
    sxx, syy, szz = acc(x * x), acc(y * y), acc(z * z)
    sxy, sxz, syz = acc(x * y), acc(x * z), acc(y * z)

    counts = s1.copy()
    with np.errstate(invalid="ignore"):
        elevation = np.where(counts > 0, sz / np.maximum(counts, 1), np.nan)
    if np.isnan(elevation).any():
        _, (fi, fj) = ndimage.distance_transform_edt(
            np.isnan(elevation), return_indices=True
        )
        elevation = elevation[fi, fj]

    kernel = _disk_kernel(cfg.feature_radius / cell)
    def nb(grid):
        return ndimage.convolve(grid, kernel, mode="constant", cval=0.0)

    n = nb(s1)
    nsx, nsy, nsz = nb(sx), nb(sy), nb(sz)
    nsxx, nsyy, nszz = nb(sxx), nb(syy), nb(szz)
    nsxy, nsxz, nsyz = nb(sxy), nb(sxz), nb(syz)

    # Shift to cell-center-relative coordinates for conditioning.
    cxs = xmin + (np.arange(nx) + 0.5) * cell
    cys = ymin + (np.arange(ny) + 0.5) * cell
    cx = np.broadcast_to(cxs[None, :], (ny, nx))
    cy = np.broadcast_to(cys[:, None], (ny, nx))
    lsx = nsx - n * cx
    lsy = nsy - n * cy
    lsxx = nsxx - 2.0 * cx * nsx + n * cx * cx
    lsyy = nsyy - 2.0 * cy * nsy + n * cy * cy
    lsxy = nsxy - cx * nsy - cy * nsx + n * cx * cy
    lsxz = nsxz - cx * nsz
    lsyz = nsyz - cy * nsz

    A = np.empty((ny, nx, 3, 3))
    A[..., 0, 0], A[..., 0, 1], A[..., 0, 2] = lsxx, lsxy, lsx
    A[..., 1, 0], A[..., 1, 1], A[..., 1, 2] = lsxy, lsyy, lsy
    A[..., 2, 0], A[..., 2, 1], A[..., 2, 2] = lsx, lsy, n
    b = np.stack([lsxz, lsyz, nsz], axis=-1)

    det = np.linalg.det(A)
    ok = (n >= 3) & (np.abs(det) > 1e-12 * np.maximum(n, 1.0) ** 3 * cell ** 4)
    A_ok = A.copy()
    A_ok[~ok] = np.eye(3)
    sol = np.linalg.solve(A_ok, b[..., None])[..., 0]
    a, bb, c = sol[..., 0], sol[..., 1], sol[..., 2]

    slope = np.where(ok, np.arctan(np.hypot(a, bb)), 0.5 * math.pi)
    ss_res = nszz - a * lsxz - bb * lsyz - c * nsz
    ss_res = np.maximum(ss_res, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        rough = np.sqrt(ss_res / np.maximum(n, 1.0)) / np.sqrt(1.0 + a * a + bb * bb)
    roughness = np.where(ok, rough, 0.0)

    obstacle_mask = np.zeros((ny, nx), dtype=bool)
    if obstacles is not None and obstacles.count > 0:
        ox = ((obstacles.points[:, 0] - xmin) / cell).astype(np.int64)
        oy = ((obstacles.points[:, 1] - ymin) / cell).astype(np.int64)
        keep = (ox >= 0) & (ox < nx) & (oy >= 0) & (oy < ny)
        obstacle_mask[oy[keep], ox[keep]] = True

    return Dem(
        elevation=elevation,
        slope=slope,
        roughness=roughness,
        cell_size=cell,
        origin=(xmin, ymin),
        obstacle_mask=obstacle_mask,
    )


def obstacle_map(dem: Dem, cfg: TtaConfig) -> np.ndarray:
    """Binary mask: feature overflow (strict >) or a projected obstacle point."""
    v_c = (dem.slope > cfg.slope_max) | (dem.roughness > cfg.roughness_max)
    return (v_c | dem.obstacle_mask).astype(np.uint8)


def distance_field(v_c: np.ndarray, cfg: TtaConfig) -> np.ndarray:
    """Meters from each cell center to the nearest dilated-obstacle cell center.

    The mask is first dilated by a circular kernel of radius r_dilate, then
    an exact Euclidean distance transform is applied.  A grid with no
    obstacles at all gets the finite cap instead of infinities.
    """
    v_c = np.asarray(v_c)
    if v_c.size == 0:
        raise ConfigError("occupancy grid is empty")
    cell = cfg.cell_size
    if not v_c.any():
        return np.full(v_c.shape, cfg.d_t_cap, dtype=float)
    dist_to_obstacle = ndimage.distance_transform_edt(v_c == 0) * cell
    dilated = dist_to_obstacle <= cfg.r_dilate
    if dilated.all():
        return np.zeros(v_c.shape, dtype=float)
    return ndimage.distance_transform_edt(~dilated) * cell


@dataclass
class CostMap:
    """Combined traversability cost with a C1 bicubic continuous view."""

    elevation: np.ndarray
    slope: np.ndarray
    roughness: np.ndarray
    v_c: np.ndarray
    d_t: np.ndarray
    c_map: np.ndarray
    cell_size: float
    origin: tuple[float, float]
    config: TtaConfig = field(default_factory=TtaConfig)
    _coeffs: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self._coeffs is None:
            self._coeffs = _bicubic_coefficients(self.c_map)

    @property
    def shape(self) -> tuple[int, int]:
        return self.c_map.shape

    def node_position(self, iy: int, ix: int) -> np.ndarray:
        """World position of grid node (= cell center) (iy, ix)."""
        return np.array(
            [
                self.origin[0] + (ix + 0.5) * self.cell_size,
                self.origin[1] + (iy + 0.5) * self.cell_size,
            ]
        )

    def margin_bounds(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the valid bicubic query region."""
        ny, nx = self.c_map.shape
        xmin = self.origin[0] + 1.5 * self.cell_size
        ymin = self.origin[1] + 1.5 * self.cell_size
        xmax = self.origin[0] + (nx - 1.5) * self.cell_size
        ymax = self.origin[1] + (ny - 1.5) * self.cell_size
        return xmin, ymin, xmax, ymax

    def contains(self, points: np.ndarray) -> np.ndarray:
        xmin, ymin, xmax, ymax = self.margin_bounds()
        p = np.atleast_2d(points)
        return (
            (p[:, 0] >= xmin) & (p[:, 0] <= xmax)
            & (p[:, 1] >= ymin) & (p[:, 1] <= ymax)
        )

    def cost_at_many(
        self, points: np.ndarray, with_grad: bool = True
    ) -> tuple[np.ndarray, np.ndarray]:
        """Bicubic value and analytic gradient (per meter) at (n, 2) points.

        With with_grad=False the gradient work is skipped and None returned
        in its place.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        inside = self.contains(p)
        if not inside.all():
            bad = p[~inside][0]
            raise DomainError(
                f"query {bad.tolist()} outside bicubic margin {self.margin_bounds()}"
            )
        ny, nx = self.c_map.shape
        u = (p[:, 0] - self.origin[0]) / self.cell_size - 0.5
        v = (p[:, 1] - self.origin[1]) / self.cell_size - 0.5
        iu = np.clip(np.floor(u).astype(np.int64), 1, nx - 3)
        iv = np.clip(np.floor(v).astype(np.int64), 1, ny - 3)
        fu = u - iu
        fv = v - iv
        n = fu.shape[0]
        pu = np.empty((n, 4))
        pu[:, 0] = 1.0
        pu[:, 1] = fu
        pu[:, 2] = fu * fu
        pu[:, 3] = pu[:, 2] * fu
        pv = np.empty((n, 4))
        pv[:, 0] = 1.0
        pv[:, 1] = fv
        pv[:, 2] = fv * fv
        pv[:, 3] = pv[:, 2] * fv
        C = self._coeffs[iv - 1, iu - 1]  # (n, 4, 4): [v power, u power]
        row_v = np.einsum("na,nab->nb", pv, C)
        value = (row_v * pu).sum(axis=1)
        if not with_grad:
            return value, None
        dpu = np.empty((n, 4))
        dpu[:, 0] = 0.0
        dpu[:, 1] = 1.0
        dpu[:, 2] = 2.0 * fu
        dpu[:, 3] = 3.0 * pu[:, 2]
        dpv = np.empty((n, 4))
        dpv[:, 0] = 0.0
        dpv[:, 1] = 1.0
        dpv[:, 2] = 2.0 * fv
        dpv[:, 3] = 3.0 * pv[:, 2]
        row_dv = np.einsum("na,nab->nb", dpv, C)
        grad = np.empty((n, 2))
        grad[:, 0] = (row_v * dpu).sum(axis=1) / self.cell_size
        grad[:, 1] = (row_dv * pu).sum(axis=1) / self.cell_size
        return value, grad

    def cost_at(self, point) -> tuple[float, np.ndarray]:
        value, grad = self.cost_at_many(np.asarray(point, dtype=float)[None, :])
        return float(value[0]), grad[0]

    def curvature_at_many(self, points: np.ndarray) -> np.ndarray:
        """Second derivatives (cxx, cxy, cyy) per square meter at (n, 2) points.

        Piecewise per patch (the surface is C1, so these jump across cell
        boundaries); used by Newton-type optimizers as curvature hints.
        """
        p = np.atleast_2d(np.asarray(points, dtype=float))
        ny, nx = self.c_map.shape
        u = (p[:, 0] - self.origin[0]) / self.cell_size - 0.5
        v = (p[:, 1] - self.origin[1]) / self.cell_size - 0.5
        iu = np.clip(np.floor(u).astype(np.int64), 1, nx - 3)
        iv = np.clip(np.floor(v).astype(np.int64), 1, ny - 3)
        fu = np.clip(u - iu, 0.0, 1.0)
        fv = np.clip(v - iv, 0.0, 1.0)
        n = fu.shape[0]
        pu = np.empty((n, 4))
        pu[:, 0] = 1.0
        pu[:, 1] = fu
        pu[:, 2] = fu * fu
        pu[:, 3] = pu[:, 2] * fu
        pv = np.empty((n, 4))
        pv[:, 0] = 1.0
        pv[:, 1] = fv
        pv[:, 2] = fv * fv
        pv[:, 3] = pv[:, 2] * fv
        dpu = np.empty((n, 4))
        dpu[:, 0] = 0.0
        dpu[:, 1] = 1.0
        dpu[:, 2] = 2.0 * fu
        dpu[:, 3] = 3.0 * pu[:, 2]
        dpv = np.empty((n, 4))
        dpv[:, 0] = 0.0
        dpv[:, 1] = 1.0
        dpv[:, 2] = 2.0 * fv
        dpv[:, 3] = 3.0 * pv[:, 2]
        ddpu = np.zeros((n, 4))
        ddpu[:, 2] = 2.0
        ddpu[:, 3] = 6.0 * fu
        ddpv = np.zeros((n, 4))
        ddpv[:, 2] = 2.0
        ddpv[:, 3] = 6.0 * fv
        C = self._coeffs[iv - 1, iu - 1]
        row_v = np.einsum("na,nab->nb", pv, C)
        row_dv = np.einsum("na,nab->nb", dpv, C)
        row_ddv = np.einsum("na,nab->nb", ddpv, C)
        cell2 = self.cell_size * self.cell_size
        out = np.empty((n, 3))
        out[:, 0] = (row_v * ddpu).sum(axis=1) / cell2
        out[:, 1] = (row_dv * dpu).sum(axis=1) / cell2
        out[:, 2] = (row_ddv * pu).sum(axis=1) / cell2
        return out

    # --- persistence -----------------------------------------------------

    _LAYERS = ("elevation", "slope", "roughness", "d_t", "c_map", "v_c")

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        header = {
            "shape": list(self.c_map.shape),
            "cell_size": self.cell_size,
            "origin": list(self.origin),
            "config": asdict(self.config),
            "layers": list(self._LAYERS),
        }
        (d / "costmap.json").write_text(json.dumps(header, indent=2, sort_keys=True))
        for name in self._LAYERS:
            np.asarray(getattr(self, name), dtype="<f4").tofile(d / f"{name}.f32")

    @classmethod
    def load(cls, directory) -> "CostMap":
        d = Path(directory)
        header = json.loads((d / "costmap.json").read_text())
        shape = tuple(header["shape"])
        layers = {}
        for name in header["layers"]:
            blob = np.fromfile(d / f"{name}.f32", dtype="<f4").astype(float)
            layers[name] = blob.reshape(shape)
        cfg_raw = dict(header["config"])
        return cls(
            elevation=layers["elevation"],
            slope=layers["slope"],
            roughness=layers["roughness"],
            v_c=layers["v_c"].astype(np.uint8),
            d_t=layers["d_t"],
            c_map=layers["c_map"],
            cell_size=header["cell_size"],
            origin=tuple(header["origin"]),
            config=TtaConfig(**cfg_raw),
        )


def _bicubic_coefficients(grid: np.ndarray) -> np.ndarray:
    """Per-cell Catmull-Rom patch coefficients C with f = Tv @ C @ Tu^T."""
    ny, nx = grid.shape
    if ny < 4 or nx < 4:
        raise ConfigError("bicubic view needs a grid of at least 4x4 nodes")
    windows = np.lib.stride_tricks.sliding_window_view(grid, (4, 4))
    return np.einsum("ar,yxrc,bc->yxab", CATMULL_ROM, windows, CATMULL_ROM)


def combine_cost(dem: Dem, d_t: np.ndarray, cfg: TtaConfig,
                 v_c: np.ndarray = None) -> CostMap:
    """Weighted sum of normalized geometry features and the safety decay.

    C_safety = exp((d_0 - D_t) / k), so cost 1 exactly at the safety margin
    and e^-1 one decay length beyond it.
    """
    if v_c is None:
        v_c = obstacle_map(dem, cfg)
    if d_t.shape != dem.slope.shape:
        raise ConfigError("distance grid and DEM are not aligned")
    c_safety = np.exp((cfg.d_0 - d_t) / cfg.k)
    c_map = (
        cfg.lambda_r * dem.roughness / cfg.roughness_max
        + cfg.lambda_s * dem.slope / cfg.slope_max
        + cfg.lambda_c * c_safety
    )
    return CostMap(
        elevation=dem.elevation,
        slope=dem.slope,
        roughness=dem.roughness,
        v_c=np.asarray(v_c, dtype=np.uint8),
        d_t=d_t,
        c_map=c_map,
        cell_size=dem.cell_size,
        origin=dem.origin,
        config=cfg,
    )


def build_cost_map(terrain: PointCloud, obstacles: PointCloud,
                   cfg: TtaConfig) -> CostMap:
    """Full pipeline: rasterize, threshold, dilate + distance, combine."""
    dem = rasterize_dem(terrain, obstacles, cfg)
    v_c = obstacle_map(dem, cfg)
    d_t = distance_field(v_c, cfg)
    return combine_cost(dem, d_t, cfg, v_c=v_c)
