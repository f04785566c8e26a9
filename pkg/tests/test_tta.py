import math

import numpy as np
import pytest

from forestnav.errors import ConfigError, DomainError
from forestnav.tta import (
    CostMap,
    Dem,
    TtaConfig,
    build_cost_map,
    combine_cost,
    distance_field,
    obstacle_map,
    rasterize_dem,
)
from forestnav.voxelizer import PointCloud

from conftest import constant_map, smooth_random_map

CFG = TtaConfig()


def grid_cloud(extent, spacing, z_fn, jitter=0.0, seed=0):
    rng = np.random.default_rng(seed)
    xs = np.arange(spacing / 2, extent[0], spacing)
    ys = np.arange(spacing / 2, extent[1], spacing)
    gx, gy = np.meshgrid(xs, ys)
    x = gx.ravel()
    y = gy.ravel()
    z = z_fn(x, y)
    if jitter:
        z = z + rng.uniform(-jitter, jitter, size=z.shape)
    return PointCloud(points=np.column_stack([x, y, z]))


EMPTY = PointCloud(points=np.zeros((0, 3)))


class TestRasterizeDem:
    def test_flat_cloud(self):
        cloud = grid_cloud((10, 10), 0.1, lambda x, y: np.zeros_like(x))
        dem = rasterize_dem(cloud, EMPTY, CFG)
        assert np.allclose(dem.elevation, 0.0, atol=1e-12)
        assert np.allclose(dem.slope, 0.0, atol=1e-9)
        assert np.allclose(dem.roughness, 0.0, atol=1e-9)

    def test_ramp_slope(self):
        # z = x * tan(10 deg): interior slope within half a degree of 10 deg.
        slope = math.tan(math.radians(10.0))
        cloud = grid_cloud((10, 10), 0.1, lambda x, y: x * slope)
        dem = rasterize_dem(cloud, EMPTY, CFG)
        interior = dem.slope[5:-5, 5:-5]
        assert np.all(np.abs(interior - math.radians(10.0)) < math.radians(0.5))

    def test_uniform_noise_roughness(self):
        # Plane +- eps uniform noise: std = eps/sqrt(3), within 20% inside.
        eps = 0.06
        cloud = grid_cloud(
            (10, 10), 0.05, lambda x, y: np.zeros_like(x), jitter=eps, seed=3
        )
        dem = rasterize_dem(cloud, EMPTY, CFG)
        expected = eps / math.sqrt(3.0)
        interior = dem.roughness[5:-5, 5:-5]
        assert np.all(np.abs(interior - expected) < 0.2 * expected)

    def test_empty_cloud_raises(self):
        with pytest.raises(ConfigError):
            rasterize_dem(EMPTY, EMPTY, CFG)

    def test_sparse_cells_get_max_slope(self):
        # A single point: every neighborhood is degenerate.
        cloud = PointCloud(points=np.array([[1.0, 1.0, 0.5]]))
        dem = rasterize_dem(cloud, EMPTY, CFG)
        assert np.all(dem.slope == math.pi / 2)

    def test_obstacle_points_projected(self):
        cloud = grid_cloud((5, 5), 0.1, lambda x, y: np.zeros_like(x))
        obstacles = PointCloud(points=np.array([[2.5, 2.5, 1.0], [2.5, 2.5, 1.5]]))
        dem = rasterize_dem(cloud, obstacles, CFG)
        iy = int((2.5 - dem.origin[1]) / dem.cell_size)
        ix = int((2.5 - dem.origin[0]) / dem.cell_size)
        assert dem.obstacle_mask[iy, ix]
        assert dem.obstacle_mask.sum() == 1


class TestObstacleMap:
    def _dem(self, slope, roughness, mask=None):
        shape = slope.shape
        return Dem(
            elevation=np.zeros(shape),
            slope=slope,
            roughness=roughness,
            cell_size=0.2,
            origin=(0.0, 0.0),
            obstacle_mask=mask,
        )

    def test_all_below_threshold(self):
        dem = self._dem(np.full((8, 8), 0.1), np.full((8, 8), 0.01))
        assert obstacle_map(dem, CFG).sum() == 0

    def test_threshold_is_strict(self):
        # Exactly at the threshold stays free (strict > in the overflow test).
        slope = np.full((4, 4), CFG.slope_max)
        dem = self._dem(slope, np.zeros((4, 4)))
        assert obstacle_map(dem, CFG).sum() == 0
        slope2 = slope + 1e-12
        assert obstacle_map(self._dem(slope2, np.zeros((4, 4))), CFG).sum() == 16

    def test_roughness_overflow(self):
        rough = np.zeros((4, 4))
        rough[2, 2] = CFG.roughness_max * 1.5
        dem = self._dem(np.zeros((4, 4)), rough)
        v_c = obstacle_map(dem, CFG)
        assert v_c[2, 2] == 1 and v_c.sum() == 1

    def test_tree_cells_injected(self):
        mask = np.zeros((4, 4), dtype=bool)
        mask[1, 3] = True
        dem = self._dem(np.zeros((4, 4)), np.zeros((4, 4)), mask=mask)
        v_c = obstacle_map(dem, CFG)
        assert v_c[1, 3] == 1 and v_c.sum() == 1

    def test_ramp_world_threshold_against_recomputation(self):
        # Sloped sheet steepening with x: cells flagged exactly where an
        # independent plane fit of the same points exceeds the threshold.
        def z_fn(x, y):
            return 2.0 * (x / 10.0) ** 2  # slope rises linearly with x

        cloud = grid_cloud((10, 6), 0.05, z_fn)
        dem = rasterize_dem(cloud, EMPTY, CFG)
        v_c = obstacle_map(dem, CFG)
        # Analytic slope angle at cell centers: atan(dz/dx) = atan(0.4 x / 10).
        ny, nx = dem.slope.shape
        xs = dem.origin[0] + (np.arange(nx) + 0.5) * dem.cell_size
        analytic = np.arctan(0.4 * xs / 10.0)
        inner = slice(4, nx - 4)
        expected_cols = analytic[inner] > CFG.slope_max
        got_cols = v_c[ny // 2, inner].astype(bool)
        # The fitted slope lags the analytic one by at most one cell near the
        # threshold crossing.
        disagree = np.flatnonzero(expected_cols != got_cols)
        assert disagree.size <= 2


def brute_force_distance(v_c, cell):
    ny, nx = v_c.shape
    obstacles = np.argwhere(v_c > 0)
    out = np.zeros((ny, nx))
    for iy in range(ny):
        for ix in range(nx):
            d2 = (obstacles[:, 0] - iy) ** 2 + (obstacles[:, 1] - ix) ** 2
            out[iy, ix] = math.sqrt(float(d2.min()))
    return out * cell


class TestDistanceField:
    def test_single_obstacle_axis_distance(self):
        cfg = TtaConfig(cell_size=0.2, r_dilate=1e-9)
        v_c = np.zeros((9, 9), dtype=np.uint8)
        v_c[4, 4] = 1
        d = distance_field(v_c, cfg)
        assert d[4, 7] == pytest.approx(3 * 0.2)
        assert d[4, 4] == 0.0

    def test_all_free_gets_cap(self):
        d = distance_field(np.zeros((6, 6), dtype=np.uint8), CFG)
        assert np.all(d == CFG.d_t_cap)

    def test_matches_brute_force_exactly(self):
        # No dilation so the oracle sees the same mask.
        cfg = TtaConfig(cell_size=0.2, r_dilate=1e-9)
        rng = np.random.default_rng(0)
        for _ in range(5):
            v_c = (rng.uniform(size=(64, 64)) < 0.02).astype(np.uint8)
            if not v_c.any():
                continue
            got = distance_field(v_c, cfg)
            want = brute_force_distance(v_c, cfg.cell_size)
            assert np.array_equal(got, want)

    def test_dilation_reach(self):
        cfg = TtaConfig(cell_size=0.2, r_dilate=0.4)
        v_c = np.zeros((21, 21), dtype=np.uint8)
        v_c[10, 10] = 1
        d = distance_field(v_c, cfg)
        dilated = d == 0.0
        ys, xs = np.mgrid[0:21, 0:21]
        dist = np.hypot(ys - 10.0, xs - 10.0) * cfg.cell_size
        # Every cell within r_dilate is dilated; none farther than
        # r_dilate + cell diagonal is.
        assert np.all(dilated[dist <= cfg.r_dilate])
        assert not np.any(dilated[dist > cfg.r_dilate + cfg.cell_size * math.sqrt(2)])


class TestCombineCost:
    def _dem(self, shape=(8, 8)):
        return Dem(
            elevation=np.zeros(shape),
            slope=np.zeros(shape),
            roughness=np.zeros(shape),
            cell_size=0.2,
            origin=(0.0, 0.0),
        )

    def test_safety_cost_at_margin_is_one(self):
        dem = self._dem()
        d_t = np.full((8, 8), CFG.d_0)
        cm = combine_cost(dem, d_t, CFG)
        # Flat terrain: C_map = lambda_c * C_safety = lambda_c exactly.
        assert np.allclose(cm.c_map, CFG.lambda_c * 1.0)

    def test_unit_decay(self):
        dem = self._dem()
        d_t = np.full((8, 8), CFG.d_0 + CFG.k)
        cm = combine_cost(dem, d_t, CFG)
        assert np.allclose(cm.c_map, CFG.lambda_c * math.exp(-1.0))

    def test_flat_terrain_cost_is_safety_only(self):
        cfg = TtaConfig(lambda_c=1.0)
        dem = self._dem()
        rng = np.random.default_rng(1)
        d_t = rng.uniform(0.0, 3.0, (8, 8))
        cm = combine_cost(dem, d_t, cfg)
        assert np.allclose(cm.c_map, np.exp((cfg.d_0 - d_t) / cfg.k))

    def test_safety_monotonic_in_distance(self):
        dem = self._dem((4, 4))
        low = combine_cost(dem, np.full((4, 4), 0.5), CFG).c_map[0, 0]
        high = combine_cost(dem, np.full((4, 4), 1.5), CFG).c_map[0, 0]
        assert low > high

    def test_cost_map_nonnegative(self):
        rng = np.random.default_rng(4)
        dem = Dem(
            elevation=rng.normal(size=(10, 10)),
            slope=rng.uniform(0, math.pi / 2, (10, 10)),
            roughness=rng.uniform(0, 0.5, (10, 10)),
            cell_size=0.2,
            origin=(0.0, 0.0),
        )
        d_t = rng.uniform(0, 5, (10, 10))
        cm = combine_cost(dem, d_t, CFG)
        assert np.all(cm.c_map >= 0.0)


class TestBicubic:
    def test_nodes_reproduced(self):
        rng = np.random.default_rng(7)
        cm = smooth_random_map(rng)
        ny, nx = cm.shape
        for iy in range(2, ny - 2, 5):
            for ix in range(2, nx - 2, 5):
                value, _ = cm.cost_at(cm.node_position(iy, ix))
                assert value == pytest.approx(cm.c_map[iy, ix], abs=1e-9)

    def test_constant_map_flat_gradient(self):
        cm = constant_map(3.25)
        rng = np.random.default_rng(8)
        xmin, ymin, xmax, ymax = cm.margin_bounds()
        for _ in range(50):
            p = rng.uniform([xmin, ymin], [xmax, ymax])
            value, grad = cm.cost_at(p)
            assert value == pytest.approx(3.25, abs=1e-12)
            assert np.abs(grad).max() < 1e-9

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        cm = smooth_random_map(rng)
        xmin, ymin, xmax, ymax = cm.margin_bounds()
        h = 1e-4 * cm.cell_size
        for _ in range(100):
            p = rng.uniform([xmin + h, ymin + h], [xmax - h, ymax - h])
            _, grad = cm.cost_at(p)
            fx = (cm.cost_at(p + [h, 0])[0] - cm.cost_at(p - [h, 0])[0]) / (2 * h)
            fy = (cm.cost_at(p + [0, h])[0] - cm.cost_at(p - [0, h])[0]) / (2 * h)
            fd = np.array([fx, fy])
            rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(fd), 1e-9)
            assert rel < 1e-5

    def test_c1_across_cell_boundaries(self):
        rng = np.random.default_rng(10)
        cm = smooth_random_map(rng)
        ny, nx = cm.shape
        eps = 1e-12
        for _ in range(100):
            # A point on a vertical or horizontal cell boundary, evaluated
            # from both adjoining patches.
            vertical = rng.uniform() < 0.5
            iy = int(rng.integers(2, ny - 3))
            ix = int(rng.integers(2, nx - 3))
            if vertical:
                x = cm.origin[0] + (ix + 0.5) * cm.cell_size
                y = cm.origin[1] + (iy + 0.5 + rng.uniform()) * cm.cell_size
            else:
                x = cm.origin[0] + (ix + 0.5 + rng.uniform()) * cm.cell_size
                y = cm.origin[1] + (iy + 0.5) * cm.cell_size
            left = cm.cost_at((x - eps, y - eps))
            right = cm.cost_at((x + eps, y + eps))
            assert left[0] == pytest.approx(right[0], abs=1e-7)
            assert left[1] == pytest.approx(right[1], abs=1e-7)

    def test_margin_enforced(self):
        cm = constant_map(1.0)
        xmin, ymin, xmax, ymax = cm.margin_bounds()
        with pytest.raises(DomainError):
            cm.cost_at((xmin - 0.01, ymin + 1.0))
        with pytest.raises(DomainError):
            cm.cost_at((xmax - 0.5, ymax + 0.01))


class TestPersistence:
    def test_save_load_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        cm = smooth_random_map(rng, shape=(16, 16))
        cm.save(tmp_path / "m")
        again = CostMap.load(tmp_path / "m")
        assert np.allclose(again.c_map, cm.c_map, atol=1e-6)
        assert again.cell_size == cm.cell_size
        assert again.origin == cm.origin
        assert again.config == cm.config
        # Reloaded maps answer queries through the rebuilt bicubic view.
        p = cm.node_position(8, 8)
        assert again.cost_at(p)[0] == pytest.approx(cm.cost_at(p)[0], abs=1e-6)


class TestFullPipeline:
    def test_build_cost_map_smoke(self):
        cloud = grid_cloud((10, 10), 0.1, lambda x, y: 0.05 * x)
        obstacles = PointCloud(points=np.array([[5.0, 5.0, 0.5]]))
        cm = build_cost_map(cloud, obstacles, CFG)
        assert cm.v_c.sum() >= 1
        assert np.all(np.isfinite(cm.c_map))
        assert np.all(cm.d_t >= 0)
        # Cost near the obstacle exceeds cost far away.
        near = cm.cost_at((5.0 + 3 * CFG.cell_size, 5.0))[0]
        far = cm.cost_at((1.5, 1.5))[0]
        assert near > far
