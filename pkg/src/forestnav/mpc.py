"""Differential-drive trajectory-following MPC.

A receding-horizon tracker: quadratic state/control costs against reference
states sampled from the planned Hermite curve, Euler-discretized unicycle
dynamics, and box-bounded inputs.  Solved by iterative LQR with the control
box enforced by clamping in the forward rollout and re-linearizing around
the clamped trajectory.  `solve` is a pure function of its arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from forestnav import curves
from forestnav.curves import HermiteTrajectory
from forestnav.errors import ConfigError


def wrap_angle(a):
    """Wrap to (-pi, pi]."""
    out = np.remainder(np.asarray(a, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    out = np.where(out == -math.pi, math.pi, out)
    return float(out) if np.ndim(a) == 0 else out


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


@dataclass(frozen=True)
class ControlInput:
    v: float
    w: float

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.w])


@dataclass
class MpcConfig:
    horizon: int = 20
    dt: float = 0.1
    q: np.ndarray = field(default_factory=lambda: np.diag([6.0, 6.0, 0.1]))
    r: np.ndarray = field(default_factory=lambda: np.diag([0.05, 0.05]))
    v_min: float = -0.5
    v_max: float = 2.0
    w_max: float = 1.5
    max_iterations: int = 50

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(3, 3)
        self.r = np.asarray(self.r, dtype=float).reshape(2, 2)
        if self.horizon < 2:
            raise ConfigError("horizon must be >= 2")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if np.any(np.linalg.eigvalsh(self.q) < -1e-12):
            raise ConfigError("Q must be positive semidefinite")
        if np.any(np.linalg.eigvalsh(self.r) <= 0):
            raise ConfigError("R must be positive definite")
        if self.v_min >= self.v_max or self.w_max <= 0:
            raise ConfigError("invalid input box")

    def clamp(self, u: np.ndarray) -> np.ndarray:
        return np.array(
            [
                min(max(u[0], self.v_min), self.v_max),
                min(max(u[1], -self.w_max), self.w_max),
            ]
        )


def dynamics(x, u) -> np.ndarray:
    """Unicycle state derivative (dx, dy, dtheta) = (v cos, v sin, w)."""
    if isinstance(x, VehicleState):
        x = x.as_array()
    if isinstance(u, ControlInput):
        u = u.as_array()
    return np.array([u[0] * math.cos(x[2]), u[0] * math.sin(x[2]), u[1]])


def step_euler(x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    return x + dt * dynamics(x, u)


def step_rk4(x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    k1 = dynamics(x, u)
    k2 = dynamics(x + 0.5 * dt * k1, u)
    k3 = dynamics(x + 0.5 * dt * k2, u)
    k4 = dynamics(x + dt * k3, u)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def reference_from_trajectory(
    traj: HermiteTrajectory, t0: float, cfg: MpcConfig
) -> np.ndarray:
    """Horizon of (x, y, theta) references sampled along the planned curve.

    Times past the trajectory end clamp to the endpoint; headings come from
    the curve velocity, holding the previous heading wherever the speed is
    degenerate (below 0.05 m/s the heading of a noisy curve is meaningless).
    """
    times = np.clip(t0 + cfg.dt * np.arange(cfg.horizon), 0.0, traj.t_e)
    pos, vel = curves.eval(traj, times)
    refs = np.zeros((cfg.horizon, 3))
    refs[:, :2] = pos
    prev = None
    for k in range(cfg.horizon):
        speed = math.hypot(vel[k, 0], vel[k, 1])
        if speed >= 0.05:
            prev = math.atan2(vel[k, 1], vel[k, 0])
        refs[k, 2] = prev if prev is not None else 0.0
    if prev is None:
        refs[:, 2] = 0.0
    return refs


@dataclass
class MpcSolution:
    controls: np.ndarray          # (N, 2)
    states: np.ndarray            # (N+1, 3), exact Euler rollout of controls
    objective_history: list[float]
    converged: bool

    @property
    def u0(self) -> ControlInput:
        return ControlInput(v=float(self.controls[0, 0]), w=float(self.controls[0, 1]))


def _rollout(x0: np.ndarray, controls: np.ndarray, dt: float) -> np.ndarray:
    states = np.zeros((controls.shape[0] + 1, 3))
    states[0] = x0
    for k in range(controls.shape[0]):
        states[k + 1] = step_euler(states[k], controls[k], dt)
    return states


def _cost(states: np.ndarray, controls: np.ndarray, refs: np.ndarray,
          cfg: MpcConfig) -> float:
    total = 0.0
    for k in range(controls.shape[0]):
        err = states[k] - refs[k]
        err[2] = wrap_angle(err[2])
        total += float(err @ cfg.q @ err) + float(controls[k] @ cfg.r @ controls[k])
    return total


def solve(x_init, refs: np.ndarray, cfg: MpcConfig,
          warm_start: np.ndarray = None) -> MpcSolution:
    """Track the reference horizon; returns box-feasible controls.

    Iterative LQR: linearize the Euler dynamics around the current rollout,
    do a Riccati backward pass, then a line-searched forward pass that
    clamps controls into the box.  Only improving rollouts are accepted, so
    the recorded objective is non-increasing.  Hitting the iteration budget
    returns the best iterate flagged as non-converged.
    """
    if isinstance(x_init, VehicleState):
        x0 = x_init.as_array()
    else:
        x0 = np.asarray(x_init, dtype=float).reshape(3)
    refs = np.asarray(refs, dtype=float)
    if refs.shape[0] < cfg.horizon:
        raise ConfigError(f"need >= {cfg.horizon} reference states, got {refs.shape[0]}")
    refs = refs[: cfg.horizon]
    n = cfg.horizon

    if warm_start is not None and warm_start.shape == (n, 2):
        controls = np.array([cfg.clamp(u) for u in warm_start])
    else:
        controls = np.zeros((n, 2))
    states = _rollout(x0, controls, cfg.dt)
    j = _cost(states, controls, refs, cfg)
    history = [j]
    converged = False
    reg = 1e-6

    for _ in range(cfg.max_iterations):
        # Linearize around the current trajectory.
        a_mats = np.zeros((n, 3, 3))
        b_mats = np.zeros((n, 3, 2))
        for k in range(n):
            th = states[k, 2]
            v = controls[k, 0]
            a_mats[k] = np.eye(3)
            a_mats[k, 0, 2] = -cfg.dt * v * math.sin(th)
            a_mats[k, 1, 2] = cfg.dt * v * math.cos(th)
            b_mats[k] = cfg.dt * np.array(
                [[math.cos(th), 0.0], [math.sin(th), 0.0], [0.0, 1.0]]
            )

        # Backward pass (no terminal cost: stage costs only, per the tracker
        # objective).
        vx = np.zeros(3)
        vxx = np.zeros((3, 3))
        gains_k = np.zeros((n, 2))
        gains_kk = np.zeros((n, 2, 3))
        failed = False
        for k in reversed(range(n)):
            err = states[k] - refs[k]
            err[2] = wrap_angle(err[2])
            lx = 2.0 * cfg.q @ err
            lu = 2.0 * cfg.r @ controls[k]
            lxx = 2.0 * cfg.q
            luu = 2.0 * cfg.r
            qx = lx + a_mats[k].T @ vx
            qu = lu + b_mats[k].T @ vx
            qxx = lxx + a_mats[k].T @ vxx @ a_mats[k]
            quu = luu + b_mats[k].T @ vxx @ b_mats[k] + reg * np.eye(2)
            qux = b_mats[k].T @ vxx @ a_mats[k]
            try:
                quu_inv = np.linalg.inv(quu)
            except np.linalg.LinAlgError:
                failed = True
                break
            gains_k[k] = -quu_inv @ qu
            gains_kk[k] = -quu_inv @ qux
            vx = qx + gains_kk[k].T @ quu @ gains_k[k] \
                + gains_kk[k].T @ qu + qux.T @ gains_k[k]
            vxx = qxx + gains_kk[k].T @ quu @ gains_kk[k] \
                + gains_kk[k].T @ qux + qux.T @ gains_kk[k]
            vxx = 0.5 * (vxx + vxx.T)
        if failed:
            reg *= 10.0
            continue

        # Forward pass with backtracking; controls clamp into the box.
        improved = False
        for alpha in (1.0, 0.5, 0.25, 0.1, 0.03, 0.01):
            new_controls = np.zeros_like(controls)
            new_states = np.zeros_like(states)
            new_states[0] = x0
            for k in range(n):
                du = alpha * gains_k[k] + gains_kk[k] @ (new_states[k] - states[k])
                new_controls[k] = cfg.clamp(controls[k] + du)
                new_states[k + 1] = step_euler(new_states[k], new_controls[k], cfg.dt)
            new_j = _cost(new_states, new_controls, refs, cfg)
            if new_j < j - 1e-12:
                controls, states, j = new_controls, new_states, new_j
                history.append(j)
                improved = True
                break
        if not improved:
            converged = True
            break
        if len(history) >= 2 and history[-2] - history[-1] < 1e-10 * max(1.0, j):
            converged = True
            break

    return MpcSolution(
        controls=controls, states=states, objective_history=history,
        converged=converged,
    )
