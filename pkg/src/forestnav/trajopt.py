"""Expert trajectory generation over the anchor lattice.

Each anchor owns a circular sector (cone) of the field of view.  Within its
cone, the end state of a Hermite trajectory is optimized against the sum of
interpolated map cost and squared speed along the curve plus a terminal
goal-distance term, subject to an end-speed bound.  The per-anchor optima,
their costs, and the argmin selection form the labels a behavior-cloned
policy later regresses.

The solver is projected gradient descent with a log barrier on the cone
constraints and Armijo backtracking: dependency-light, deterministic, and
checkable against a dense grid-search oracle.  Per-anchor problems are
independent; all inputs are immutable during planning.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from forestnav.curves import (
    EndStateOffset,
    HermiteTrajectory,
    PrimitiveLattice,
    NormalizationConfig,
    basis_weights,
    basis_weights_derivative,
    encode_end_state,
    normalize_output,
)
from forestnav.errors import ConfigError, DomainError, InfeasibleSampleError, PlannerError
from forestnav.tta import CostMap


@dataclass(frozen=True)
class ConeRegion:
    """Sector with apex at the start position owning one anchor's end states."""

    apex: np.ndarray
    theta_min: float
    theta_max: float
    p_n_max: float

    def __post_init__(self):
        object.__setattr__(self, "apex", np.asarray(self.apex, dtype=float).reshape(2))
        half = 0.5 * (self.theta_max - self.theta_min)
        center = 0.5 * (self.theta_max + self.theta_min)
        if not 0.0 < half < 0.5 * math.pi:
            raise ConfigError(f"cone half angle must be in (0, pi/2), got {half}")
        if not self.p_n_max > 0:
            raise ConfigError("cone height must be positive")
        object.__setattr__(self, "theta_half", half)
        object.__setattr__(self, "theta_center", center)
        object.__setattr__(self, "axis", np.array([math.cos(center), math.sin(center)]))


def cone_violation(p_s, p_e, cone: ConeRegion) -> tuple[float, float, float]:
    """Constraint residuals (g1, g2, g3); all <= 0 iff p_e lies in the cone.

    g1: behind the apex plane, g2: beyond the cone height, g3: outside the
    half angle.
    """
    dp = np.asarray(p_e, dtype=float) - np.asarray(p_s, dtype=float)
    n = cone.axis
    along = float(dp @ n)
    g1 = -along
    g2 = along - cone.p_n_max
    cos_half = math.cos(cone.theta_half)
    g3 = cos_half * cos_half * float(dp @ dp) - along * along
    return g1, g2, g3


@dataclass
class ObjectiveContext:
    """Everything the per-anchor objective needs besides the decision variables."""

    cost_map: CostMap
    goal: np.ndarray
    p_s: np.ndarray
    v_s: np.ndarray
    t_e: float
    n_t: int = 20
    edge_penalty: float = 50.0

    def __post_init__(self):
        self.goal = np.asarray(self.goal, dtype=float).reshape(2)
        self.p_s = np.asarray(self.p_s, dtype=float).reshape(2)
        self.v_s = np.asarray(self.v_s, dtype=float).reshape(2)
        if self.n_t < 4:
            raise ConfigError("n_t must be >= 4")
        if not np.all(np.isfinite(self.goal)):
            raise ConfigError("goal must be finite")
        tau = np.arange(self.n_t + 1) / self.n_t
        self._w = basis_weights(tau)        # (n_t+1, 4)
        self._dw = basis_weights_derivative(tau)

    @property
    def dt(self) -> float:
        return self.t_e / self.n_t

    def sample_states(self, p_e, v_e) -> tuple[np.ndarray, np.ndarray]:
        """Positions and velocities at the n_t+1 sample times."""
        pm = np.column_stack(
            [self.p_s, self.v_s * self.t_e, np.asarray(v_e) * self.t_e,
             np.asarray(p_e)]
        )
        return self._w @ pm.T, (self._dw @ pm.T) / self.t_e


def _map_cost_penalized(ctx: ObjectiveContext, pos: np.ndarray, need_grad=True):
    """Map cost per sample, extended outside the bicubic margin.

    Out-of-margin samples are evaluated at the clamped boundary point plus a
    quadratic pull-back penalty, keeping line searches near the map edge
    well defined.
    """
    xmin, ymin, xmax, ymax = ctx.cost_map.margin_bounds()
    lo = np.array([xmin, ymin])
    hi = np.array([xmax, ymax])
    clamped = np.clip(pos, lo, hi)
    inside = np.all(pos == clamped, axis=1)
    values, grads = ctx.cost_map.cost_at_many(clamped, with_grad=need_grad)
    if not np.all(inside):
        delta = pos - clamped
        values = values + ctx.edge_penalty * np.sum(delta * delta, axis=1)
        # Clamped axes lose the map gradient and gain the penalty pull-back.
        if need_grad:
            free = delta == 0.0
            grads = np.where(free, grads, 0.0) + 2.0 * ctx.edge_penalty * delta
    return values, grads


def objective(p_e, v_e, ctx: ObjectiveContext) -> tuple[float, np.ndarray]:
    """Endpoint-inclusive Riemann sum of map + speed cost, plus terminal term.

    Returns (J, dJ/d(p_e, v_e)) with the gradient assembled through the
    Hermite basis and the bicubic map gradient.  Raises
    InfeasibleSampleError when a trajectory sample leaves the region the
    bicubic view is defined on.
    """
    pos, vel = ctx.sample_states(p_e, v_e)
    inside = ctx.cost_map.contains(pos)
    if not inside.all():
        bad = int(np.argmin(inside))
        raise InfeasibleSampleError(
            f"trajectory sample {bad} at t={bad * ctx.dt:.3f}s leaves the cost map",
            t=bad * ctx.dt,
            point=pos[bad],
        )
    values, grads = ctx.cost_map.cost_at_many(pos)
    return _assemble(ctx, p_e, pos, vel, values, grads)


def _objective_penalized(
    p_e, v_e, ctx: ObjectiveContext, need_grad: bool = True
) -> tuple[float, np.ndarray]:
    pos, vel = ctx.sample_states(p_e, v_e)
    values, grads = _map_cost_penalized(ctx, pos, need_grad=need_grad)
    return _assemble(ctx, p_e, pos, vel, values, grads, need_grad=need_grad)


def _assemble(ctx, p_e, pos, vel, map_values, map_grads, need_grad=True):
    dt = ctx.dt
    p_e = np.asarray(p_e, dtype=float).reshape(2)
    speed2 = np.sum(vel * vel, axis=1)
    terminal = p_e - ctx.goal
    j = float((map_values + speed2).sum() * dt + terminal @ terminal)
    if not need_grad:
        return j, None

    w_pe = ctx._w[:, 3]        # d pos / d p_e
    w_ve = ctx._w[:, 2] * ctx.t_e
    dw_pe = ctx._dw[:, 3] / ctx.t_e   # d vel / d p_e
    dw_ve = ctx._dw[:, 2]
    g_pe = (
        (map_grads * w_pe[:, None] + 2.0 * vel * dw_pe[:, None]).sum(axis=0) * dt
        + 2.0 * terminal
    )
    g_ve = (map_grads * w_ve[:, None] + 2.0 * vel * dw_ve[:, None]).sum(axis=0) * dt
    return j, np.concatenate([g_pe, g_ve])


@dataclass
class AnchorResult:
    p_e: np.ndarray
    v_e: np.ndarray
    j_t: float
    feasible: bool
    converged: bool
    iterations: int
    stationarity: float


def _cone_residuals_and_grads(p_s, p_e, cone: ConeRegion):
    dp = p_e - p_s
    n = cone.axis
    along = float(dp @ n)
    cos2 = math.cos(cone.theta_half) ** 2
    g = np.empty(3)
    g[0] = -along
    g[1] = along - cone.p_n_max
    g[2] = cos2 * float(dp @ dp) - along * along
    grads = np.empty((3, 2))
    grads[0] = -n
    grads[1] = n
    grads[2] = 2.0 * cos2 * dp - 2.0 * along * n
    return g, grads


def _project_velocity(v, v_max):
    speed = math.hypot(v[0], v[1])
    if speed > v_max:
        return v * (v_max / speed)
    return v


def _quadratic_hessian(ctx: ObjectiveContext) -> np.ndarray:
    """Exact Hessian of the speed-integral + terminal terms (map term omitted).

    Used to precondition descent steps; the quadratic terms dominate the
    objective curvature, so preconditioned steps behave like Newton steps.
    """
    dt = ctx.dt
    dw_ve = ctx._dw[:, 2]
    dw_pe = ctx._dw[:, 3] / ctx.t_e
    h_pp = 2.0 * float(dw_pe @ dw_pe) * dt + 2.0
    h_pv = 2.0 * float(dw_pe @ dw_ve) * dt
    h_vv = 2.0 * float(dw_ve @ dw_ve) * dt
    h = np.zeros((4, 4))
    h[:2, :2] = h_pp * np.eye(2)
    h[:2, 2:] = h_pv * np.eye(2)
    h[2:, :2] = h_pv * np.eye(2)
    h[2:, 2:] = h_vv * np.eye(2)
    return h


def _map_hessian(ctx: ObjectiveContext, p_e, v_e) -> np.ndarray:
    """Exact Hessian of the sampled map term through the Hermite basis."""
    pos, _ = ctx.sample_states(p_e, v_e)
    xmin, ymin, xmax, ymax = ctx.cost_map.margin_bounds()
    clamped = np.clip(pos, [xmin, ymin], [xmax, ymax])
    curv = ctx.cost_map.curvature_at_many(clamped)  # (n, 3): cxx, cxy, cyy
    w_pe = ctx._w[:, 3]
    w_ve = ctx._w[:, 2] * ctx.t_e
    dt = ctx.dt
    spp = float(w_pe @ (curv[:, 0] * w_pe)), float(w_pe @ (curv[:, 1] * w_pe)), \
        float(w_pe @ (curv[:, 2] * w_pe))
    spv = float(w_pe @ (curv[:, 0] * w_ve)), float(w_pe @ (curv[:, 1] * w_ve)), \
        float(w_pe @ (curv[:, 2] * w_ve))
    svv = float(w_ve @ (curv[:, 0] * w_ve)), float(w_ve @ (curv[:, 1] * w_ve)), \
        float(w_ve @ (curv[:, 2] * w_ve))
    h = np.zeros((4, 4))
    for (block, (cxx, cxy, cyy)) in (((0, 0), spp), ((0, 2), spv), ((2, 2), svv)):
        r, c = block
        h[r, c] = cxx
        h[r, c + 1] = cxy
        h[r + 1, c] = cxy
        h[r + 1, c + 1] = cyy
    h[2:, :2] = h[:2, 2:].T
    return h * dt


def _barrier_hessian_pe(p_s, p_e, cone: ConeRegion, mu: float) -> np.ndarray:
    """Hessian of -mu * sum(log(-g_i)) in the end-position block."""
    g, gg = _cone_residuals_and_grads(p_s, p_e, cone)
    n = cone.axis
    cos2 = math.cos(cone.theta_half) ** 2
    h = np.zeros((2, 2))
    for gi, gradi in zip(g, gg):
        h += mu * np.outer(gradi, gradi) / (gi * gi)
    # Only g3 has curvature of its own.
    hess_g3 = 2.0 * cos2 * np.eye(2) - 2.0 * np.outer(n, n)
    h += mu * hess_g3 / (-g[2])
    return h


def _stationarity(x, ctx, cone, v_max, eps_act=1e-6):
    """Norm of the steepest-descent direction projected on the feasible cone."""
    p_e, v_e = x[:2], x[2:]
    _, grad = _objective_penalized(p_e, v_e, ctx)
    d = -grad
    g, gg = _cone_residuals_and_grads(ctx.p_s, p_e, cone)
    for gi, gradi in zip(g, gg):
        if gi > -eps_act:
            gi_full = np.concatenate([gradi, [0.0, 0.0]])
            push = float(d @ gi_full)
            nrm2 = float(gi_full @ gi_full)
            if push > 0 and nrm2 > 0:
                d = d - (push / nrm2) * gi_full
    speed = math.hypot(v_e[0], v_e[1])
    if speed >= v_max - eps_act and speed > 0:
        radial = np.concatenate([[0.0, 0.0], v_e / speed])
        push = float(d @ radial)
        if push > 0:
            d = d - push * radial
    return float(np.linalg.norm(d))


def optimize_anchor(
    ctx: ObjectiveContext,
    cone: ConeRegion,
    v_max: float,
    max_iterations: int = 200,
    gradient_tolerance: float = 1e-9,
    p_e_init: np.ndarray = None,
    v_e_init: np.ndarray = None,
) -> AnchorResult:
    """Minimize the objective inside the cone with bounded end speed.

    Projected descent on a log-barrier relaxation of the cone constraints
    with Armijo backtracking; steps are preconditioned by the analytic
    curvature of the quadratic terms plus the barrier, with
    Levenberg-style damping when the map curvature spoils a step.  The end
    velocity is kept inside its ball by projection.  Starts at the anchor
    point (cone mid height if none is given) with the end velocity along
    the cone axis.
    """
    if p_e_init is None:
        radius = 0.5 * cone.p_n_max
        x_init = ctx.p_s + 0.999 * radius * cone.axis
    else:
        x_init = np.asarray(p_e_init, dtype=float).reshape(2)
        g0, _ = _cone_residuals_and_grads(ctx.p_s, x_init, cone)
        if np.any(g0 >= -1e-9):
            # A drifted warm start falls back onto the cone axis.
            radius = min(
                max(float(np.linalg.norm(x_init - ctx.p_s)), 1e-3),
                0.999 * cone.p_n_max,
            )
            x_init = ctx.p_s + radius * cone.axis
    if v_e_init is None:
        v0 = min(float(np.linalg.norm(ctx.v_s)), v_max) * cone.axis
    else:
        v0 = _project_velocity(np.asarray(v_e_init, dtype=float).reshape(2), v_max)
    x = np.concatenate([x_init, v0])

    g0, _ = _cone_residuals_and_grads(ctx.p_s, x[:2], cone)
    if np.any(g0 >= 0):
        return AnchorResult(
            p_e=x[:2], v_e=x[2:], j_t=math.inf, feasible=False,
            converged=False, iterations=0, stationarity=math.inf,
        )

    def barrier_value(xv, mu):
        p_e, v_e = xv[:2], xv[2:]
        g, _ = _cone_residuals_and_grads(ctx.p_s, p_e, cone)
        if g[0] >= 0 or g[1] >= 0 or g[2] >= 0:
            return math.inf
        j, _ = _objective_penalized(p_e, v_e, ctx, need_grad=False)
        return j - mu * (math.log(-g[0]) + math.log(-g[1]) + math.log(-g[2]))

    def barrier_grad(xv, mu):
        p_e, v_e = xv[:2], xv[2:]
        g, gg = _cone_residuals_and_grads(ctx.p_s, p_e, cone)
        _, grad = _objective_penalized(p_e, v_e, ctx)
        bgrad = grad.copy()
        bgrad[:2] += mu * (gg / (-g)[:, None]).sum(axis=0)
        return bgrad

    j_init, _ = _objective_penalized(x[:2], x[2:], ctx, need_grad=False)
    scale = max(1.0, abs(j_init))
    warm_started = p_e_init is not None and v_e_init is not None
    if warm_started:
        # A warm point is already centered for the final barrier weight.
        mu_values = scale * np.array([1e-6])
    else:
        mu_values = scale * np.array([1e-2, 1e-4, 1e-6])
    h_quad = _quadratic_hessian(ctx)
    stage_budget = max(4, max_iterations // len(mu_values))

    iterations = 0
    eye4 = np.eye(4)
    best_x, best_j = x.copy(), j_init
    for mu in mu_values:
        f = barrier_value(x, mu)
        grad = barrier_grad(x, mu)
        damping = 1e-9 * scale
        stage_iters = 0
        while iterations < max_iterations and stage_iters < stage_budget:
            iterations += 1
            stage_iters += 1
            h = h_quad + _map_hessian(ctx, x[:2], x[2:])
            h[:2, :2] += _barrier_hessian_pe(ctx.p_s, x[:2], cone, mu)
            h += damping * eye4
            try:
                direction = -np.linalg.solve(h, grad)
            except np.linalg.LinAlgError:
                direction = -grad
            if float(grad @ direction) >= 0:
                direction = -grad
            accepted = False
            t = 1.0
            for _ in range(25):
                cand = x + t * direction
                cand[2:] = _project_velocity(cand[2:], v_max)
                f_cand = barrier_value(cand, mu)
                # Projected-Armijo acceptance: decrease proportional to the
                # realized (possibly projected) displacement.
                dx = cand - x
                if f_cand < f - 1e-4 / max(t, 1e-12) * float(dx @ dx):
                    x, f = cand, f_cand
                    grad = barrier_grad(x, mu)
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                # Backtracked steps hint at unmodeled curvature: damp more.
                damping = min(damping * 4.0, 1e3) if t < 0.25 else max(
                    damping * 0.25, 1e-9 * scale
                )
            if not accepted or float(np.linalg.norm(grad)) < max(
                gradient_tolerance, 0.01 * mu
            ):
                break
        j_stage, _ = _objective_penalized(x[:2], x[2:], ctx, need_grad=False)
        if j_stage <= best_j:
            best_x, best_j = x.copy(), j_stage
    best = best_x

    p_e, v_e = best[:2], best[2:]
    j_t = best_j
    g_final, _ = _cone_residuals_and_grads(ctx.p_s, p_e, cone)
    speed = float(np.linalg.norm(v_e))
    feasible = bool(np.all(g_final <= 1e-6) and speed * speed <= v_max * v_max + 1e-6)
    stat = _stationarity(best, ctx, cone, v_max)
    return AnchorResult(
        p_e=p_e,
        v_e=v_e,
        j_t=float(j_t),
        feasible=feasible,
        converged=iterations < max_iterations and stat <= 1e-4 * scale,
        iterations=iterations,
        stationarity=stat,
    )


@dataclass
class Observation:
    """Planner input: world-frame start state, goal, and heading."""

    p_s: np.ndarray
    v_s: np.ndarray
    goal: np.ndarray
    yaw: float

    def __post_init__(self):
        self.p_s = np.asarray(self.p_s, dtype=float).reshape(2)
        self.v_s = np.asarray(self.v_s, dtype=float).reshape(2)
        self.goal = np.asarray(self.goal, dtype=float).reshape(2)


@dataclass
class LatticePlan:
    """Per-anchor optimized end states and costs plus the selected best."""

    p_e: np.ndarray          # (m, 2) world frame
    v_e: np.ndarray          # (m, 2) world frame
    j_t: np.ndarray          # (m,) raw objective values
    c: np.ndarray            # (m,) clipped costs
    feasible: np.ndarray     # (m,) bool
    converged: np.ndarray    # (m,) bool
    best_index: int
    pose: tuple[float, float, float]   # x, y, yaw of the body frame used
    goal: np.ndarray
    trajectory: HermiteTrajectory

    def to_dict(self) -> dict:
        return {
            "pose": {"x": self.pose[0], "y": self.pose[1], "yaw": self.pose[2]},
            "goal": [float(self.goal[0]), float(self.goal[1])],
            "anchors": [
                {
                    "index": i,
                    "p_e": [float(self.p_e[i, 0]), float(self.p_e[i, 1])],
                    "v_e": [float(self.v_e[i, 0]), float(self.v_e[i, 1])],
                    "j_t": float(self.j_t[i]),
                    "c": float(self.c[i]),
                    "feasible": bool(self.feasible[i]),
                    "converged": bool(self.converged[i]),
                }
                for i in range(self.p_e.shape[0])
            ],
            "best_index": int(self.best_index),
            "trajectory": self.trajectory.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "LatticePlan":
        anchors = d["anchors"]
        m = len(anchors)
        p_e = np.array([a["p_e"] for a in anchors], dtype=float).reshape(m, 2)
        v_e = np.array([a["v_e"] for a in anchors], dtype=float).reshape(m, 2)
        return cls(
            p_e=p_e,
            v_e=v_e,
            j_t=np.array([a["j_t"] for a in anchors], dtype=float),
            c=np.array([a["c"] for a in anchors], dtype=float),
            feasible=np.array([a["feasible"] for a in anchors], dtype=bool),
            converged=np.array([a["converged"] for a in anchors], dtype=bool),
            best_index=int(d["best_index"]),
            pose=(d["pose"]["x"], d["pose"]["y"], d["pose"]["yaw"]),
            goal=np.array(d["goal"], dtype=float),
            trajectory=HermiteTrajectory.from_dict(d["trajectory"]),
        )


PLAN_SCHEMA = {
    "type": "object",
    "required": ["pose", "goal", "anchors", "best_index", "trajectory"],
    "properties": {
        "pose": {
            "type": "object",
            "required": ["x", "y", "yaw"],
            "properties": {k: {"type": "number"} for k in ("x", "y", "yaw")},
        },
        "goal": {
            "type": "array", "items": {"type": "number"},
            "minItems": 2, "maxItems": 2,
        },
        "anchors": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["index", "p_e", "v_e", "j_t", "c", "feasible"],
                "properties": {
                    "index": {"type": "integer", "minimum": 0},
                    "p_e": {"type": "array", "items": {"type": "number"},
                            "minItems": 2, "maxItems": 2},
                    "v_e": {"type": "array", "items": {"type": "number"},
                            "minItems": 2, "maxItems": 2},
                    "j_t": {"type": "number"},
                    "c": {"type": "number"},
                    "feasible": {"type": "boolean"},
                },
            },
        },
        "best_index": {"type": "integer", "minimum": 0},
        "trajectory": {
            "type": "object",
            "required": ["p_s", "v_s", "v_e", "p_e", "t_e"],
            "properties": {
                "p_s": {"type": "array", "items": {"type": "number"},
                        "minItems": 2, "maxItems": 2},
                "v_s": {"type": "array", "items": {"type": "number"},
                        "minItems": 2, "maxItems": 2},
                "v_e": {"type": "array", "items": {"type": "number"},
                        "minItems": 2, "maxItems": 2},
                "p_e": {"type": "array", "items": {"type": "number"},
                        "minItems": 2, "maxItems": 2},
                "t_e": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}


def validate_plan_dict(d: dict) -> None:
    """Schema-validate a plan document; raises jsonschema.ValidationError."""
    import jsonschema

    jsonschema.validate(d, PLAN_SCHEMA)
    if d["best_index"] >= len(d["anchors"]):
        raise jsonschema.ValidationError("best_index out of range")


@dataclass
class PlannerSettings:
    """Knobs for plan_lattice; mirrors the planner section of the stack config."""

    t_e: float = 6.0
    n_t: int = 20
    v_max: float = 2.0
    p_n_max: float = 8.0
    g_max: float = 10.0
    c_max: float = 200.0
    max_iterations: int = 200
    gradient_tolerance: float = 1e-9
    edge_penalty: float = 50.0


def _rot(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


def project_goal(p_s: np.ndarray, goal: np.ndarray, g_max: float) -> np.ndarray:
    """Project the goal onto the planning-range sphere around the start.

    The objective consumes a goal *direction* at a fixed range: this keeps
    the terminal pull constant however near or far the true goal is, so the
    vehicle holds pace through the goal-reached ring instead of creeping.
    A degenerate zero-offset goal is returned unchanged.
    """
    delta = goal - p_s
    dist = float(np.linalg.norm(delta))
    if dist == 0.0:
        return goal.copy()
    return p_s + delta * (g_max / dist)


def plan_lattice(
    obs: Observation,
    cost_map: CostMap,
    lattice: PrimitiveLattice,
    settings: PlannerSettings = None,
    warm: LatticePlan = None,
) -> LatticePlan:
    """Optimize every anchor's cone and select the cheapest feasible result.

    Cones partition the field of view at the lattice cell edges, apex at the
    start position, rotated into the world frame by the body yaw.  A warm
    plan from a previous tick seeds each anchor's solve (drifted seeds fall
    back to the anchor).  Raises PlannerError when no anchor yields a
    feasible end state.
    """
    settings = settings or PlannerSettings()
    goal = project_goal(obs.p_s, obs.goal, settings.g_max)
    ctx = ObjectiveContext(
        cost_map=cost_map,
        goal=goal,
        p_s=obs.p_s,
        v_s=obs.v_s,
        t_e=settings.t_e,
        n_t=settings.n_t,
        edge_penalty=settings.edge_penalty,
    )
    m = lattice.m_theta
    results: list[AnchorResult] = []
    for i in range(m):
        lo, hi = lattice.cell_bounds(i)
        cone = ConeRegion(
            apex=obs.p_s,
            theta_min=lo + obs.yaw,
            theta_max=hi + obs.yaw,
            p_n_max=settings.p_n_max,
        )
        p_e_init = obs.p_s + lattice.r * cone.axis
        v_e_init = None
        if warm is not None and warm.feasible[i]:
            p_e_init = warm.p_e[i]
            v_e_init = warm.v_e[i]
        results.append(
            optimize_anchor(
                ctx, cone, settings.v_max,
                max_iterations=settings.max_iterations,
                gradient_tolerance=settings.gradient_tolerance,
                p_e_init=p_e_init,
                v_e_init=v_e_init,
            )
        )

    feasible = np.array([r.feasible for r in results])
    if not feasible.any():
        raise PlannerError("no feasible anchor in the current observation")
    j_t = np.array([r.j_t for r in results])
    masked = np.where(feasible, j_t, np.inf)
    best = int(np.argmin(masked))

    traj = HermiteTrajectory(
        p_s=obs.p_s,
        v_s=obs.v_s,
        v_e=results[best].v_e,
        p_e=results[best].p_e,
        t_e=settings.t_e,
    )
    return LatticePlan(
        p_e=np.array([r.p_e for r in results]),
        v_e=np.array([r.v_e for r in results]),
        j_t=j_t,
        c=np.minimum(j_t, settings.c_max),
        feasible=feasible,
        converged=np.array([r.converged for r in results]),
        best_index=best,
        pose=(float(obs.p_s[0]), float(obs.p_s[1]), float(obs.yaw)),
        goal=goal,
        trajectory=traj,
    )


def make_labels(
    plan: LatticePlan,
    lattice: PrimitiveLattice,
    norm: NormalizationConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-anchor normalized label vectors y* and a clamp mask.

    Each feasible anchor's optimized end state is re-encoded as a polar
    offset in the body frame (inverting the anchor decoding) and normalized.
    The cost channel carries the plan's cost *ranking* (cheapest anchor 0,
    costliest 1): adjacent cones share boundary optima, so raw objective
    gaps are often tiny and a magnitude label would leave the selection
    unlearnable; raw objective values stay available in the plan and the
    exported dataset.  Infeasible anchors get zero offsets and the worst
    cost so a learner ranks blocked directions last.
    """
    x0, y0, yaw = plan.pose
    rot_inv = _rot(-yaw)
    m = plan.p_e.shape[0]
    order = np.argsort(np.where(plan.feasible, plan.j_t, np.inf), kind="stable")
    ranks = np.empty(m)
    ranks[order] = np.arange(m, dtype=float)
    rank_cost = norm.c_max * ranks / max(m - 1, 1)

    labels = np.zeros((m, 5))
    clamped = np.zeros(m, dtype=bool)
    for i in range(m):
        if not plan.feasible[i]:
            labels[i] = [0.0, 0.0, 0.0, 0.0, 1.0]
            continue
        p_body = rot_inv @ (plan.p_e[i] - np.array([x0, y0]))
        v_body = rot_inv @ plan.v_e[i]
        p_n, p_theta = encode_end_state(lattice, i, p_body)
        offset = EndStateOffset(p_n=p_n, p_theta=p_theta, v_e=v_body,
                                c=float(rank_cost[i]))
        labels[i], clamped[i] = normalize_output(offset, norm)
    return labels, clamped
