import math

import numpy as np
import pytest

from forestnav.errors import ConfigError, DomainError
from forestnav.sensors import (
    CameraIntrinsics,
    DepthImage,
    downsample_nearest,
    encode_depth,
    inpaint,
    render_depth,
    sample_viewpoints,
)
from forestnav.worldgen import TerrainParams, generate_world

INTR = CameraIntrinsics(
    width=160, height=32, fov_h=math.radians(80), fov_v=math.radians(55),
    max_range=12.0,
)


def make_world(extent=(40.0, 40.0), trees=None, amplitude=0.0, seed=0):
    params = TerrainParams(seed=seed, amplitude=amplitude, tree_density=0.0)
    world = generate_world(params, extent)
    if trees is not None:
        world.trees = np.asarray(trees, dtype=float).reshape(-1, 4)
    return world


def march_oracle(world, origin, direction, max_range, step=0.004):
    """Fine fixed-step march; returns the midpoint of the bracketing step."""
    ts = np.arange(step, max_range + step, step)
    pts = origin[None, :] + ts[:, None] * direction[None, :]
    L, W, _ = world.extent
    inside = (
        (pts[:, 0] >= 0) & (pts[:, 0] <= L) & (pts[:, 1] >= 0) & (pts[:, 1] <= W)
    )
    hit = np.zeros(ts.shape, dtype=bool)
    if inside.any():
        h = world.height_at(pts[inside, 0], pts[inside, 1])
        below = pts[inside, 2] <= h
        hit[np.flatnonzero(inside)[below]] = True
    for tx, ty, radius, height in world.trees:
        ground = world.height_at(tx, ty)
        horiz = np.hypot(pts[:, 0] - tx, pts[:, 1] - ty) <= radius
        vert = (pts[:, 2] >= ground) & (pts[:, 2] <= ground + height)
        hit |= horiz & vert
    idx = np.flatnonzero(hit)
    if idx.size == 0:
        return math.inf
    return float(ts[idx[0]] - step / 2)


class TestRenderFlatWorld:
    def test_analytic_ground_rows(self):
        world = make_world()
        img = render_depth(world, (20.0, 20.0, 1.0, 0.0), INTR)
        depths = img.depths_m()
        rows = np.arange(INTR.height)
        elev = INTR.elevation_of_row(rows)
        center_col = INTR.width // 2
        for r in range(INTR.height):
            d_analytic = math.inf if elev[r] >= 0 else 1.0 / math.sin(-elev[r])
            got = depths[r, center_col]
            if d_analytic > INTR.max_range:
                assert np.isnan(got)
            else:
                assert got == pytest.approx(d_analytic, rel=0.01)

    def test_center_rows_invalid(self):
        world = make_world()
        img = render_depth(world, (20.0, 20.0, 1.0, 0.0), INTR)
        mid = INTR.height // 2
        assert not img.validity[mid - 1].any()  # looking slightly up
        # Row just below center looks down by <1 deg: hits at ~66 m, beyond range.
        assert not img.validity[mid].any()

    def test_camera_below_terrain_raises(self):
        world = make_world()
        with pytest.raises(DomainError):
            render_depth(world, (20.0, 20.0, -0.5, 0.0), INTR)


class TestRenderTrees:
    def test_cylinder_dead_ahead(self):
        world = make_world(trees=[[24.0, 20.0, 0.25, 5.0]])
        img = render_depth(world, (20.0, 20.0, 1.0, 0.0), INTR)
        depths = img.depths_m()
        # The two middle rows straddle the optical axis; both look at the
        # trunk 4 m away, so the range is 3.75 m (cos(small elev) ~ 1).
        center_col = INTR.width // 2
        mid = INTR.height // 2
        for r in (mid - 1, mid):
            assert depths[r, center_col] == pytest.approx(3.75, abs=0.01)

    def test_tree_beyond_range_invalid(self):
        world = make_world(trees=[[33.0, 20.0, 0.25, 5.0]])
        img = render_depth(world, (20.0, 20.0, 1.0, 0.0), INTR)
        mid = INTR.height // 2
        assert not img.validity[mid - 1].any()

    def test_column_band_alignment(self):
        # A thin trunk at a known bearing paints only columns of the lattice
        # cell containing that bearing.
        from forestnav.curves import build_lattice

        m_theta = 5
        lattice = build_lattice(m_theta, INTR.fov_h, 6.0)
        world = make_world(trees=[[1.0, 1.0, 0.05, 5.0]])
        for bearing_deg in (-30.0, -12.0, 0.0, 9.0, 35.0):
            bearing = math.radians(bearing_deg)
            tx = 20.0 + 5.0 * math.cos(bearing)
            ty = 20.0 + 5.0 * math.sin(bearing)
            world.trees = np.array([[tx, ty, 0.05, 5.0]])
            img = render_depth(world, (20.0, 20.0, 1.0, 0.0), INTR)
            depths = img.depths_m()
            mid = INTR.height // 2
            tree_cols = np.flatnonzero(
                np.nan_to_num(depths[mid], nan=np.inf) < 5.3
            )
            assert tree_cols.size > 0
            cell = int(np.searchsorted(
                np.array([lattice.cell_bounds(i)[1] for i in range(m_theta)]),
                bearing,
                side="right",
            ))
            bands = {INTR.column_band(int(c), m_theta) for c in tree_cols}
            assert bands == {cell}

    def test_yaw_rotates_scene(self):
        world = make_world(trees=[[20.0, 24.0, 0.25, 5.0]])  # 4 m to the +y side
        img = render_depth(world, (20.0, 20.0, 1.0, math.pi / 2), INTR)
        depths = img.depths_m()
        mid = INTR.height // 2
        center_col = INTR.width // 2
        assert depths[mid, center_col] == pytest.approx(3.75, abs=0.01)


class TestOracleAgreement:
    def test_1000_random_pixels(self):
        params = TerrainParams(seed=23, amplitude=2.0, tree_density=1.0 / 40.0)
        world = generate_world(params, (40.0, 40.0))
        pose = (20.0, 20.0, world.height_at(20.0, 20.0) + 0.6, 0.7)
        img = render_depth(world, pose, INTR)
        depths = img.depths_m()

        from forestnav.sensors import _ray_directions

        dirs = _ray_directions(INTR, pose[3]).reshape(INTR.height, INTR.width, 3)
        origin = np.array([pose[0], pose[1], pose[2]])
        rng = np.random.default_rng(0)
        rows = rng.integers(0, INTR.height, 1000)
        cols = rng.integers(0, INTR.width, 1000)
        for r, c in zip(rows, cols):
            want = march_oracle(world, origin, dirs[r, c], INTR.max_range)
            got = depths[r, c]
            if want > INTR.max_range:
                assert np.isnan(got) or got > INTR.max_range - 0.02
            else:
                tol = max(0.01, 0.005 * want)
                assert got == pytest.approx(want, abs=tol)


class TestEncoding:
    def test_round_trip_half_millimeter(self):
        rng = np.random.default_rng(1)
        d = rng.uniform(0.05, 12.0, (32, 64))
        counts = encode_depth(d, np.ones_like(d, dtype=bool))
        back = counts.astype(float) / 1000.0
        assert np.abs(back - d).max() <= 0.5e-3

    def test_invalid_is_zero(self):
        d = np.array([[1.0, 2.0]])
        counts = encode_depth(d, np.array([[True, False]]))
        assert counts[0, 1] == 0

    def test_pgm_round_trip(self, tmp_path):
        rng = np.random.default_rng(2)
        data = rng.integers(0, 65535, size=(32, 160), dtype=np.uint16)
        img = DepthImage(data=data, intrinsics=INTR)
        img.save_pgm(tmp_path / "d.pgm")
        again = DepthImage.load_pgm(tmp_path / "d.pgm", INTR)
        assert np.array_equal(again.data, data)


class TestViewpoints:
    def test_single_pose(self, small_forest):
        poses = sample_viewpoints(small_forest, 5.0, 1, seed=3)
        assert len(poses) == 1
        x, y, z, yaw = poses[0]
        assert small_forest.contains(x, y)
        assert z > small_forest.height_at(x, y)

    def test_pairwise_spacing(self, small_forest):
        poses = sample_viewpoints(small_forest, 4.0, 12, seed=4)
        pts = np.array([(p[0], p[1]) for p in poses])
        d = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
        d[np.arange(12), np.arange(12)] = np.inf
        assert d.min() >= 4.0 - 1e-9

    def test_no_pose_inside_tree(self):
        params = TerrainParams(seed=31, tree_density=1.0 / 50.0, amplitude=0.0)
        world = generate_world(params, (100.0, 100.0))
        poses = sample_viewpoints(world, 5.0, 100, seed=5)
        for x, y, _, _ in poses:
            inside = any(
                math.hypot(x - t[0], y - t[1]) <= t[2] for t in world.trees
            )
            assert not inside

    def test_infeasible_count_reports_achievable(self, small_forest):
        with pytest.raises(ConfigError, match="achievable"):
            sample_viewpoints(small_forest, 20.0, 50, seed=6)


class TestInpaint:
    def _image(self, data):
        arr = np.asarray(data, dtype=np.uint16)
        intr = CameraIntrinsics(
            width=arr.shape[1], height=arr.shape[0],
            fov_h=math.radians(80), fov_v=math.radians(55),
        )
        return DepthImage(data=arr, intrinsics=intr)

    def test_no_invalid_is_identity(self):
        rng = np.random.default_rng(3)
        img = self._image(rng.integers(1, 60000, (8, 8)))
        out = inpaint(img)
        assert np.array_equal(out.data, img.data)

    def test_single_hole_gets_neighbor_average(self):
        data = np.full((5, 5), 4000, dtype=np.uint16)
        data[2, 2] = 0
        data[1, 2] = 5000
        data[3, 2] = 3000
        data[2, 1] = 4400
        data[2, 3] = 3600
        out = inpaint(self._image(data))
        assert abs(int(out.data[2, 2]) - 4000) <= 1  # plain average within 1 mm

    def test_stripe_respects_bounds(self):
        data = np.zeros((6, 9), dtype=np.uint16)
        data[:, :3] = 2000
        data[:, 6:] = 8000
        out = inpaint(self._image(data))
        stripe = out.data[:, 3:6].astype(int)
        assert stripe.min() >= 2000 - 1
        assert stripe.max() <= 8000 + 1

    def test_idempotent(self):
        rng = np.random.default_rng(4)
        data = rng.integers(500, 12000, (16, 24)).astype(np.uint16)
        data[rng.uniform(size=data.shape) < 0.3] = 0
        once = inpaint(self._image(data))
        twice = inpaint(once)
        assert np.array_equal(once.data, twice.data)

    def test_all_invalid_raises(self):
        with pytest.raises(DomainError):
            inpaint(self._image(np.zeros((4, 4), dtype=np.uint16)))


class TestDeterminism:
    def test_worker_count_invariant(self):
        params = TerrainParams(seed=41, amplitude=2.0, tree_density=1.0 / 60.0)
        world = generate_world(params, (40.0, 40.0))
        pose = (20.0, 20.0, world.height_at(20.0, 20.0) + 0.5, 0.3)
        imgs = [
            render_depth(world, pose, INTR, noise_sigma_coeff=0.002,
                         noise_dropout=0.01, noise_seed=9, workers=w)
            for w in (1, 2, 8)
        ]
        assert np.array_equal(imgs[0].data, imgs[1].data)
        assert np.array_equal(imgs[0].data, imgs[2].data)


class TestDownsample:
    def test_shape_and_values(self):
        rng = np.random.default_rng(5)
        big = CameraIntrinsics(
            width=640, height=128, fov_h=math.radians(80), fov_v=math.radians(55)
        )
        img = DepthImage(data=rng.integers(0, 60000, (128, 640)).astype(np.uint16),
                         intrinsics=big)
        small = downsample_nearest(img, 4)
        assert small.data.shape == (32, 160)
        assert small.data[0, 0] == img.data[2, 2]
