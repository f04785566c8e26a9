import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from forestnav import curves
from forestnav.curves import (
    EndStateOffset,
    HermiteTrajectory,
    NormalizationConfig,
    build_lattice,
    decode_end_state,
    denormalize_output,
    denormalize_state,
    encode_end_state,
    normalize_output,
    normalize_state,
)
from forestnav.errors import ConfigError, DomainError

finite = st.floats(-10.0, 10.0, allow_nan=False)


def random_trajectory(rng):
    return HermiteTrajectory(
        p_s=rng.uniform(-10, 10, 2),
        v_s=rng.uniform(-3, 3, 2),
        v_e=rng.uniform(-3, 3, 2),
        p_e=rng.uniform(-10, 10, 2),
        t_e=rng.uniform(0.5, 10.0),
    )


class TestEval:
    def test_boundary_conditions_exact(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            traj = random_trajectory(rng)
            p0, v0 = curves.eval(traj, 0.0)
            pe, ve = curves.eval(traj, traj.t_e)
            assert np.allclose(p0, traj.p_s, atol=1e-9, rtol=0)
            assert np.allclose(v0, traj.v_s, atol=1e-9, rtol=0)
            assert np.allclose(pe, traj.p_e, atol=1e-9, rtol=0)
            assert np.allclose(ve, traj.v_e, atol=1e-9, rtol=0)

    def test_symbolic_midpoint(self):
        # Independent oracle: expand P @ H @ T symbolically and evaluate.
        import sympy as sp

        tau = sp.Rational(1, 2)
        h = sp.Matrix(
            [[1, 0, -3, 2], [0, 1, -2, 1], [0, 0, -1, 1], [0, 0, 3, -2]]
        )
        t_e = 2
        pm = sp.Matrix([[0, 1 * t_e, 1 * t_e, 2], [0, 0, 0, 0]])
        tvec = sp.Matrix([1, tau, tau**2, tau**3])
        dtvec = sp.Matrix([0, 1, 2 * tau, 3 * tau**2])
        pos_sym = pm * h * tvec
        vel_sym = (pm * h * dtvec) / t_e

        traj = HermiteTrajectory(p_s=(0, 0), v_s=(1, 0), v_e=(1, 0), p_e=(2, 0), t_e=2)
        pos, vel = curves.eval(traj, 1.0)
        assert pos == pytest.approx([float(pos_sym[0]), float(pos_sym[1])], abs=1e-12)
        assert vel == pytest.approx([float(vel_sym[0]), float(vel_sym[1])], abs=1e-12)
        # Frozen values from the symbolic expansion at tau = 1/2.
        assert pos == pytest.approx([1.0, 0.0], abs=1e-12)
        assert vel == pytest.approx([1.0, 0.0], abs=1e-12)

    def test_position_is_cubic_in_tau(self):
        # Fourth finite difference of any cubic over uniform samples is zero.
        rng = np.random.default_rng(3)
        for _ in range(20):
            traj = random_trajectory(rng)
            ts = np.linspace(0.0, traj.t_e, 9)
            pos, _ = curves.eval(traj, ts)
            scale = max(1.0, np.abs(pos).max())
            d4 = np.diff(pos, n=4, axis=0)
            assert np.abs(d4).max() < 1e-7 * scale

    def test_domain_errors(self):
        traj = HermiteTrajectory(p_s=(0, 0), v_s=(1, 0), v_e=(1, 0), p_e=(2, 0), t_e=2)
        with pytest.raises(DomainError):
            curves.eval(traj, -0.01)
        with pytest.raises(DomainError):
            curves.eval(traj, 2.01)

    def test_t_e_must_be_positive(self):
        with pytest.raises(ConfigError):
            HermiteTrajectory(p_s=(0, 0), v_s=(0, 0), v_e=(0, 0), p_e=(1, 1), t_e=0.0)

    def test_json_round_trip(self):
        traj = HermiteTrajectory(p_s=(0.5, -1), v_s=(1, 0.25), v_e=(0, 1), p_e=(2, 3), t_e=4.5)
        again = HermiteTrajectory.from_json(traj.to_json())
        assert np.array_equal(again.p_s, traj.p_s)
        assert np.array_equal(again.v_e, traj.v_e)
        assert again.t_e == traj.t_e


class TestLattice:
    def test_single_anchor_straight_ahead(self):
        lat = build_lattice(1, math.radians(80), 5.0)
        assert lat.angles == pytest.approx([0.0])
        assert lat.anchors[0] == pytest.approx([5.0, 0.0])

    def test_five_anchor_partition(self):
        # Uniform partition arithmetic: cell width 16 deg, centers at
        # -32, -16, 0, 16, 32 degrees.
        lat = build_lattice(5, math.radians(80), 6.0)
        assert np.degrees(lat.angles) == pytest.approx([-32, -16, 0, 16, 32])

    def test_two_anchor_midpoints(self):
        lat = build_lattice(2, math.radians(80), 1.0)
        assert np.degrees(lat.angles) == pytest.approx([-20, 20])

    def test_angles_symmetric_and_increasing(self):
        for m in (1, 2, 3, 4, 5, 8, 11):
            lat = build_lattice(m, math.radians(70), 3.0)
            th = lat.angles
            assert np.all(np.diff(th) > 0)
            assert th == pytest.approx(-th[::-1], abs=1e-12)

    def test_anchor_norms_equal_r(self):
        lat = build_lattice(7, math.radians(60), 4.5)
        assert np.linalg.norm(lat.anchors, axis=1) == pytest.approx([4.5] * 7)

    def test_invalid_configs(self):
        with pytest.raises(ConfigError):
            build_lattice(0, math.radians(80), 5.0)
        with pytest.raises(ConfigError):
            build_lattice(5, 0.0, 5.0)
        with pytest.raises(ConfigError):
            build_lattice(5, math.pi, 5.0)
        with pytest.raises(ConfigError):
            build_lattice(5, math.radians(80), -1.0)

    def test_cell_bounds_tile_fov(self):
        lat = build_lattice(5, math.radians(80), 6.0)
        lo0, _ = lat.cell_bounds(0)
        _, hi4 = lat.cell_bounds(4)
        assert lo0 == pytest.approx(math.radians(-40))
        assert hi4 == pytest.approx(math.radians(40))
        for i in range(4):
            assert lat.cell_bounds(i)[1] == pytest.approx(lat.cell_bounds(i + 1)[0])


class TestDecode:
    def test_zero_offset_recovers_anchor(self):
        lat = build_lattice(5, math.radians(80), 6.0)
        for i in range(5):
            off = EndStateOffset(p_n=6.0, p_theta=0.0, v_e=(0, 0), c=0.0)
            assert decode_end_state(lat, i, off) == pytest.approx(lat.anchors[i], abs=0)

    def test_degenerate_norm(self):
        lat = build_lattice(3, math.radians(80), 6.0)
        off = EndStateOffset(p_n=0.0, p_theta=0.5, v_e=(0, 0), c=0.0)
        assert decode_end_state(lat, 1, off) == pytest.approx([0.0, 0.0], abs=0)

    def test_angle_cancellation(self):
        # theta_i = 16 deg, offset -16 deg: direct trig evaluation gives (3, 0).
        lat = build_lattice(5, math.radians(80), 6.0)
        off = EndStateOffset(p_n=3.0, p_theta=math.radians(-16), v_e=(0, 0), c=0.0)
        p = decode_end_state(lat, 3, off)
        assert p == pytest.approx([3.0 * math.cos(0.0), 3.0 * math.sin(0.0)], abs=1e-12)

    def test_index_out_of_range(self):
        lat = build_lattice(3, math.radians(80), 6.0)
        off = EndStateOffset(p_n=1.0, p_theta=0.0, v_e=(0, 0), c=0.0)
        with pytest.raises(DomainError):
            decode_end_state(lat, 3, off)

    def test_encode_decode_round_trip(self):
        lat = build_lattice(5, math.radians(80), 6.0)
        rng = np.random.default_rng(5)
        for _ in range(100):
            i = int(rng.integers(5))
            p_n = rng.uniform(0.1, 8.0)
            p_theta = rng.uniform(-0.1, 0.1)
            off = EndStateOffset(p_n=p_n, p_theta=p_theta, v_e=(0, 0), c=0.0)
            p = decode_end_state(lat, i, off)
            p_n2, p_theta2 = encode_end_state(lat, i, p)
            assert p_n2 == pytest.approx(p_n, abs=1e-9)
            assert p_theta2 == pytest.approx(p_theta, abs=1e-9)


CFG = NormalizationConfig(
    v_max=2.0, g_max=10.0, p_n_max=8.0, p_theta_max=math.radians(8), c_max=20.0
)


class TestNormalization:
    def test_zero_maps_to_zero(self):
        s, clamped = normalize_state((0, 0), (0, 0), CFG)
        assert not clamped
        assert s == pytest.approx([0, 0, 0, 0], abs=0)
        y, clamped = normalize_output(
            EndStateOffset(p_n=0, p_theta=0, v_e=(0, 0), c=0), CFG
        )
        assert not clamped
        assert y == pytest.approx([0, 0, 0, 0, 0], abs=0)

    def test_boundary_is_one(self):
        y, clamped = normalize_output(
            EndStateOffset(p_n=CFG.p_n_max, p_theta=0, v_e=(0, 0), c=0), CFG
        )
        assert not clamped
        assert y[0] == 1.0

    def test_out_of_bounds_clamps_and_flags(self):
        y, clamped = normalize_output(
            EndStateOffset(p_n=2 * CFG.p_n_max, p_theta=0, v_e=(0, 0), c=0), CFG
        )
        assert clamped
        assert y[0] == 1.0
        s, clamped = normalize_state((5.0, 0.0), (0, 0), CFG)
        assert clamped
        assert s[0] == 1.0

    @settings(max_examples=200, deadline=None)
    @given(
        vx=st.floats(-2, 2), vy=st.floats(-2, 2),
        gx=st.floats(-10, 10), gy=st.floats(-10, 10),
        p_n=st.floats(0, 8), p_theta=st.floats(-0.139, 0.139),
        vex=st.floats(-2, 2), vey=st.floats(-2, 2), c=st.floats(0, 20),
    )
    def test_round_trip_identity(self, vx, vy, gx, gy, p_n, p_theta, vex, vey, c):
        s, clamped = normalize_state((vx, vy), (gx, gy), CFG)
        assert not clamped
        v_back, g_back = denormalize_state(s, CFG)
        assert v_back == pytest.approx([vx, vy], abs=1e-9)
        assert g_back == pytest.approx([gx, gy], abs=1e-9)

        off = EndStateOffset(p_n=p_n, p_theta=p_theta, v_e=(vex, vey), c=c)
        y, clamped = normalize_output(off, CFG)
        assert not clamped
        back = denormalize_output(y, CFG)
        assert back.p_n == pytest.approx(p_n, abs=1e-9)
        assert back.p_theta == pytest.approx(p_theta, abs=1e-9)
        assert back.v_e == pytest.approx([vex, vey], abs=1e-9)
        assert back.c == pytest.approx(c, abs=1e-9)

    def test_config_must_be_positive(self):
        with pytest.raises(ConfigError):
            NormalizationConfig(v_max=0, g_max=1, p_n_max=1, p_theta_max=1, c_max=1)
