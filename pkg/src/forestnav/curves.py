"""Non-uniform cubic Hermite trajectories and the motion-primitive lattice.

A trajectory is a 2D cubic parameterized by its endpoint positions and
velocities and an execution time ``t_e``.  Candidate end states live on a
fan of anchor directions spread across the sensor's horizontal field of
view; predicted or optimized end states are expressed as polar offsets from
those anchors.  Everything here is pure value arithmetic with no hidden
state, so all operations are safe to call concurrently.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from forestnav.errors import ConfigError, DomainError

# Cubic Hermite basis over normalized time tau = t / t_e, with the control
# point matrix ordered [p_s, v_s*t_e, v_e*t_e, p_e].  Columns multiply
# [1, tau, tau^2, tau^3]^T.
HERMITE_BASIS = np.array(
    [
        [1.0, 0.0, -3.0, 2.0],
        [0.0, 1.0, -2.0, 1.0],
        [0.0, 0.0, -1.0, 1.0],
        [0.0, 0.0, 3.0, -2.0],
    ]
)


def _as_vec2(x, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.shape != (2,):
        raise ConfigError(f"{name} must be a 2-vector, got shape {np.shape(x)}")
    return v


@dataclass(frozen=True)
class HermiteTrajectory:
    """Control-point representation {p_s, v_s, v_e, p_e, t_e} of a 2D trajectory."""

    p_s: np.ndarray
    v_s: np.ndarray
    v_e: np.ndarray
    p_e: np.ndarray
    t_e: float

    def __post_init__(self):
        object.__setattr__(self, "p_s", _as_vec2(self.p_s, "p_s"))
        object.__setattr__(self, "v_s", _as_vec2(self.v_s, "v_s"))
        object.__setattr__(self, "v_e", _as_vec2(self.v_e, "v_e"))
        object.__setattr__(self, "p_e", _as_vec2(self.p_e, "p_e"))
        if not self.t_e > 0:
            raise ConfigError(f"t_e must be positive, got {self.t_e}")

    @property
    def control_matrix(self) -> np.ndarray:
        """2x4 control point matrix [p_s, v_s*t_e, v_e*t_e, p_e]."""
        return np.column_stack(
            [self.p_s, self.v_s * self.t_e, self.v_e * self.t_e, self.p_e]
        )

    def to_dict(self) -> dict:
        return {
            "p_s": [float(self.p_s[0]), float(self.p_s[1])],
            "v_s": [float(self.v_s[0]), float(self.v_s[1])],
            "v_e": [float(self.v_e[0]), float(self.v_e[1])],
            "p_e": [float(self.p_e[0]), float(self.p_e[1])],
            "t_e": float(self.t_e),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HermiteTrajectory":
        return cls(p_s=d["p_s"], v_s=d["v_s"], v_e=d["v_e"], p_e=d["p_e"], t_e=d["t_e"])

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "HermiteTrajectory":
        return cls.from_dict(json.loads(s))


def basis_weights(tau):
    """Basis weights w(tau) with p(t) = [p_s, v_s*t_e, v_e*t_e, p_e] @ w.

    Accepts a scalar or an array of normalized times; returns shape (..., 4).
    """
    tau = np.asarray(tau, dtype=float)
    powers = np.stack(
        [np.ones_like(tau), tau, tau * tau, tau * tau * tau], axis=-1
    )
    return powers @ HERMITE_BASIS.T


def basis_weights_derivative(tau):
    """d/dtau of the basis weights; velocity weights are these / t_e."""
    tau = np.asarray(tau, dtype=float)
    dpowers = np.stack(
        [np.zeros_like(tau), np.ones_like(tau), 2.0 * tau, 3.0 * tau * tau], axis=-1
    )
    return dpowers @ HERMITE_BASIS.T


def eval(traj: HermiteTrajectory, t):
    """Evaluate position and velocity at time t in [0, t_e].

    Returns a pair of 2-vectors for scalar t, or (n, 2) arrays for array t.
    Raises DomainError if any t falls outside [0, t_e].
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0) or np.any(t_arr > traj.t_e):
        raise DomainError(f"t={t} outside [0, {traj.t_e}]")
    tau = t_arr / traj.t_e
    pm = traj.control_matrix
    pos = basis_weights(tau) @ pm.T
    vel = basis_weights_derivative(tau) @ pm.T / traj.t_e
    return pos, vel


@dataclass(frozen=True)
class PrimitiveLattice:
    """Anchor fan: m_theta directions uniformly covering the horizontal FOV.

    Angle i sits at the center of the i-th FOV cell, so the fan is symmetric
    about zero and anchors tile the sensor image in equal column bands.
    """

    m_theta: int
    fov_h: float
    r: float

    def __post_init__(self):
        if self.m_theta < 1:
            raise ConfigError(f"m_theta must be >= 1, got {self.m_theta}")
        if not 0.0 < self.fov_h < math.pi:
            raise ConfigError(f"fov_h must be in (0, pi), got {self.fov_h}")
        if not self.r > 0:
            raise ConfigError(f"r must be positive, got {self.r}")

    @property
    def angles(self) -> np.ndarray:
        i = np.arange(self.m_theta, dtype=float)
        return -0.5 * self.fov_h + (i + 0.5) * self.fov_h / self.m_theta

    @property
    def anchors(self) -> np.ndarray:
        """(m_theta, 2) anchor positions in the body frame, all at radius r."""
        th = self.angles
        return self.r * np.column_stack([np.cos(th), np.sin(th)])

    def cell_bounds(self, i: int) -> tuple[float, float]:
        """(theta_min, theta_max) of FOV cell i; anchors sit at the midpoints."""
        if not 0 <= i < self.m_theta:
            raise DomainError(f"anchor index {i} out of range [0, {self.m_theta})")
        w = self.fov_h / self.m_theta
        lo = -0.5 * self.fov_h + i * w
        return lo, lo + w


def build_lattice(m_theta: int, fov_h: float, r: float) -> PrimitiveLattice:
    """Uniformly sample m_theta anchor angles within the horizontal FOV."""
    return PrimitiveLattice(m_theta=m_theta, fov_h=fov_h, r=r)


@dataclass(frozen=True)
class EndStateOffset:
    """Polar offset from an anchor plus end velocity and scalar cost."""

    p_n: float
    p_theta: float
    v_e: np.ndarray
    c: float

    def __post_init__(self):
        object.__setattr__(self, "v_e", _as_vec2(self.v_e, "v_e"))


def decode_end_state(lattice: PrimitiveLattice, i: int, offset: EndStateOffset) -> np.ndarray:
    """Body-frame end position p_n * (cos(theta_i + p_theta), sin(theta_i + p_theta))."""
    if not 0 <= i < lattice.m_theta:
        raise DomainError(f"anchor index {i} out of range [0, {lattice.m_theta})")
    ang = lattice.angles[i] + offset.p_theta
    return offset.p_n * np.array([math.cos(ang), math.sin(ang)])


def encode_end_state(lattice: PrimitiveLattice, i: int, p_body: np.ndarray) -> tuple[float, float]:
    """Inverse of decode_end_state: body-frame position -> (p_n, p_theta)."""
    if not 0 <= i < lattice.m_theta:
        raise DomainError(f"anchor index {i} out of range [0, {lattice.m_theta})")
    p = np.asarray(p_body, dtype=float)
    p_n = float(np.hypot(p[0], p[1]))
    if p_n == 0.0:
        return 0.0, 0.0
    return p_n, float(math.atan2(p[1], p[0]) - lattice.angles[i])


@dataclass(frozen=True)
class NormalizationConfig:
    """Scales mapping physical states and outputs onto the unit ranges."""

    v_max: float
    g_max: float
    p_n_max: float
    p_theta_max: float
    c_max: float

    def __post_init__(self):
        for name in ("v_max", "g_max", "p_n_max", "p_theta_max", "c_max"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive")


def _clamp(value: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, bool]:
    clipped = np.clip(value, lo, hi)
    return clipped, bool(np.any(clipped != value))


def normalize_state(v_s, g, cfg: NormalizationConfig) -> tuple[np.ndarray, bool]:
    """Normalized state s = [v_s / v_max, g / g_max]; also reports clamping.

    Out-of-bound inputs are clamped to the unit box instead of rejected;
    the flag lets callers log or drop such samples.
    """
    v = _as_vec2(v_s, "v_s") / cfg.v_max
    gg = _as_vec2(g, "g") / cfg.g_max
    s = np.concatenate([v, gg])
    return _clamp(s, -1.0, 1.0)


def denormalize_state(s, cfg: NormalizationConfig) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(s, dtype=float)
    return s[:2] * cfg.v_max, s[2:] * cfg.g_max


def normalize_output(offset: EndStateOffset, cfg: NormalizationConfig) -> tuple[np.ndarray, bool]:
    """Normalized output y = [p_n/p_n_max, p_theta/p_theta_max, v_e/v_max, c/c_max]."""
    y = np.array(
        [
            offset.p_n / cfg.p_n_max,
            offset.p_theta / cfg.p_theta_max,
            offset.v_e[0] / cfg.v_max,
            offset.v_e[1] / cfg.v_max,
            offset.c / cfg.c_max,
        ]
    )
    lo = np.array([0.0, -1.0, -1.0, -1.0, 0.0])
    hi = np.ones(5)
    return _clamp(y, lo, hi)


def denormalize_output(y, cfg: NormalizationConfig) -> EndStateOffset:
    y = np.asarray(y, dtype=float)
    if y.shape != (5,):
        raise ConfigError(f"output vector must have 5 entries, got shape {y.shape}")
    return EndStateOffset(
        p_n=float(y[0] * cfg.p_n_max),
        p_theta=float(y[1] * cfg.p_theta_max),
        v_e=np.array([y[2], y[3]]) * cfg.v_max,
        c=float(y[4] * cfg.c_max),
    )
