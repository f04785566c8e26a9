"""Closed-loop simulation, metrics, and dataset export.

The episode loop integrates the unicycle plant with RK4 at the controller
rate, replans on a time trigger at the planner rate (the expert planner
reads the ground-truth cost map), and terminates on goal, collision,
timeout, or planner failure.  Everything is simulated-time driven and
deterministic given seeds; wall clocks are only recorded for the latency
metrics and never steer control flow.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from forestnav import curves, mpc
from forestnav.config import StackConfig
from forestnav.curves import PrimitiveLattice, build_lattice
from forestnav.errors import ConfigError, ForestNavError, PlannerError
from forestnav.sensors import CameraIntrinsics, render_depth, sample_viewpoints
from forestnav.tta import CostMap, TtaConfig, build_cost_map
from forestnav.trajopt import (
    LatticePlan,
    Observation,
    PlannerSettings,
    make_labels,
    plan_lattice,
    validate_plan_dict,
)
from forestnav.voxelizer import VoxelizerConfig, voxelize_obstacles_3d, voxelize_terrain_2d
from forestnav.worldgen import TerrainParams, World, generate_world


@dataclass
class EpisodeConfig:
    stack: StackConfig
    start: tuple[float, float, float]      # x, y, yaw
    goal: tuple[float, float]
    seed: int = 0
    world: World = None                    # pregenerated world overrides seed
    planner_rate: float = None             # default from stack.episode
    controller_rate: float = None
    v_avg_target: float = None
    max_duration: float = None
    goal_radius: float = None
    render_depth: bool = None
    plan_source: str = None                # dir of precomputed plan_%05d.json

    def __post_init__(self):
        ep = self.stack.episode
        for name, default in (
            ("planner_rate", ep.planner_rate),
            ("controller_rate", ep.controller_rate),
            ("v_avg_target", ep.v_avg_target),
            ("max_duration", ep.max_duration),
            ("goal_radius", ep.goal_radius),
            ("render_depth", ep.render_depth),
        ):
            if getattr(self, name) is None:
                setattr(self, name, default)
        if self.planner_rate <= 0 or self.controller_rate < self.planner_rate:
            raise ConfigError("controller rate must be >= planner rate > 0")


@dataclass
class TraceRow:
    t: float
    x: float
    y: float
    theta: float
    v: float
    w: float
    z: float
    clearance: float


@dataclass
class EpisodeTrace:
    rows: list[TraceRow] = field(default_factory=list)
    plans: list[tuple[float, LatticePlan]] = field(default_factory=list)
    depth_frames: list[int] = field(default_factory=list)
    goal: tuple[float, float] = (0.0, 0.0)
    termination: str = ""
    plan_ms: list[float] = field(default_factory=list)
    controller_ms: list[float] = field(default_factory=list)
    tta_ms: float = 0.0

    def save_jsonl(self, path) -> None:
        with open(path, "w") as f:
            header = {
                "type": "header",
                "goal": list(self.goal),
                "termination": self.termination,
                "plans": len(self.plans),
            }
            f.write(json.dumps(header, sort_keys=True) + "\n")
            for row in self.rows:
                f.write(json.dumps(asdict(row), sort_keys=True) + "\n")


@dataclass
class Metrics:
    latency_tta_plan_ms: float
    latency_controller_ms: float
    latency_total_ms: float
    safety_avg: float
    safety_min: float
    bump_height: float
    trajectory_length: float
    duration: float
    avg_speed: float
    termination: str

    def to_dict(self) -> dict:
        d = asdict(self)
        for key, value in d.items():
            if isinstance(value, float) and math.isinf(value):
                d[key] = None
        return d

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def build_world_cost_map(world: World, stack: StackConfig) -> tuple[CostMap, float]:
    """Voxelize the world and run the TTA pipeline; returns (map, wall ms)."""
    t0 = time.perf_counter()
    L, W, H = world.extent
    terrain = voxelize_terrain_2d(
        world,
        VoxelizerConfig(
            voxel_size=stack.voxel.voxel_size, mode="2d-terrain",
            extent=(L, W, H), z_min=world.z_min, workers=stack.voxel.workers,
        ),
    )
    obstacles = voxelize_obstacles_3d(
        world,
        VoxelizerConfig(
            voxel_size=stack.voxel.voxel_size, mode="3d-obstacle",
            extent=(L, W, H), z_min=world.z_min, workers=stack.voxel.workers,
        ),
    )
    tta_cfg = TtaConfig(
        cell_size=stack.tta.cell_size,
        slope_max=stack.tta.slope_max,
        roughness_max=stack.tta.roughness_max,
        r_dilate=stack.tta.r_dilate,
        d_0=stack.tta.d_0,
        k=stack.tta.k,
        lambda_r=stack.tta.lambda_r,
        lambda_s=stack.tta.lambda_s,
        lambda_c=stack.tta.lambda_c,
        feature_radius=stack.tta.feature_radius,
    )
    cost_map = build_cost_map(terrain, obstacles, tta_cfg)
    return cost_map, (time.perf_counter() - t0) * 1000.0


def planner_settings(stack: StackConfig, v_avg_target: float = None) -> PlannerSettings:
    p = stack.planner
    t_e = stack.lattice.t_e
    if v_avg_target:
        # Pace the curve so its reach is covered at the target average speed.
        t_e = p.p_n_max / v_avg_target
    return PlannerSettings(
        t_e=t_e,
        n_t=p.n_t,
        v_max=p.v_max,
        p_n_max=p.p_n_max,
        g_max=p.g_max,
        c_max=p.c_max,
        max_iterations=p.max_iterations,
        gradient_tolerance=p.gradient_tolerance,
        edge_penalty=p.edge_penalty,
    )


def camera_intrinsics(stack: StackConfig) -> CameraIntrinsics:
    cam = stack.camera
    return CameraIntrinsics(
        width=32 * stack.lattice.m_theta,
        height=cam.height_px,
        fov_h=cam.fov_h,
        fov_v=cam.fov_v,
        max_range=cam.max_range,
    )


def make_world(stack: StackConfig, seed: int) -> World:
    w = stack.world
    params = TerrainParams(
        octaves=w.octaves,
        base_frequency=w.base_frequency,
        amplitude=w.amplitude,
        seed=seed,
        tree_density=w.tree_density,
        tree_radius=w.tree_radius,
        tree_spacing=w.tree_spacing,
        tree_height=w.tree_height,
        heightmap_cell=w.heightmap_cell,
        size_z=w.size_z,
        z_min=w.z_min,
    )
    return generate_world(params, (w.size_x, w.size_y))


def _load_precomputed_plan(directory: str, index: int) -> LatticePlan:
    path = Path(directory) / f"plan_{index:05d}.json"
    if not path.exists():
        raise PlannerError(f"no precomputed plan {path}")
    doc = json.loads(path.read_text())
    validate_plan_dict(doc)
    return LatticePlan.from_dict(doc)


def run_episode(cfg: EpisodeConfig) -> tuple[EpisodeTrace, Metrics]:
    """Simulate one goal-reaching episode; see module docstring for the loop."""
    stack = cfg.stack
    world = cfg.world if cfg.world is not None else make_world(stack, cfg.seed)
    L, W, _ = world.extent
    gx, gy = cfg.goal
    if not world.contains(gx, gy):
        raise ConfigError(f"goal {cfg.goal} outside world {L}x{W}")

    cost_map, tta_ms = build_world_cost_map(world, stack)
    lattice = build_lattice(stack.lattice.m_theta, stack.lattice.fov_h, stack.lattice.r)
    settings = planner_settings(stack, cfg.v_avg_target)
    mpc_cfg = mpc.MpcConfig(
        horizon=stack.mpc.horizon,
        dt=stack.mpc.dt,
        q=np.diag([stack.mpc.q_xy, stack.mpc.q_xy, stack.mpc.q_theta]),
        r=np.diag([stack.mpc.r_v, stack.mpc.r_w]),
        v_min=stack.mpc.v_min,
        v_max=stack.mpc.v_max,
        w_max=stack.mpc.w_max,
        max_iterations=stack.mpc.max_iterations,
    )
    intr = camera_intrinsics(stack)

    trace = EpisodeTrace(goal=(float(gx), float(gy)), tta_ms=tta_ms)
    state = np.array([cfg.start[0], cfg.start[1], cfg.start[2]], dtype=float)
    v_cmd, w_cmd = 0.0, 0.0
    dt_c = 1.0 / cfg.controller_rate
    plan_period = 1.0 / cfg.planner_rate
    next_plan_time = 0.0
    sim_time = 0.0
    current_plan: LatticePlan = None
    plan_time = 0.0
    warm = None
    goal_vec = np.array([gx, gy])

    def record(clearance):
        trace.rows.append(
            TraceRow(
                t=sim_time,
                x=float(state[0]), y=float(state[1]), theta=float(state[2]),
                v=float(v_cmd), w=float(w_cmd),
                z=float(world.height_at(state[0], state[1])),
                clearance=float(clearance),
            )
        )

    while True:
        if sim_time >= next_plan_time - 1e-9:
            next_plan_time += plan_period
            if cfg.render_depth:
                z_cam = world.height_at(state[0], state[1]) + stack.camera.mount_height
                render_depth(world, (state[0], state[1], z_cam, state[2]), intr)
                trace.depth_frames.append(len(trace.depth_frames))
            t0 = time.perf_counter()
            try:
                if cfg.plan_source is not None:
                    current_plan = _load_precomputed_plan(
                        cfg.plan_source, len(trace.plans)
                    )
                else:
                    obs = Observation(
                        p_s=state[:2],
                        v_s=v_cmd * np.array([math.cos(state[2]), math.sin(state[2])]),
                        goal=goal_vec,
                        yaw=state[2],
                    )
                    current_plan = plan_lattice(
                        obs, cost_map, lattice, settings, warm=current_plan
                    )
            except ForestNavError:
                trace.termination = "planner-failure"
                record(world.clearance(state[0], state[1]))
                break
            trace.plan_ms.append((time.perf_counter() - t0) * 1000.0)
            trace.plans.append((sim_time, current_plan))
            plan_time = sim_time

        t0 = time.perf_counter()
        refs = mpc.reference_from_trajectory(
            current_plan.trajectory, sim_time - plan_time, mpc_cfg
        )
        sol = mpc.solve(state, refs, mpc_cfg, warm_start=warm)
        warm = np.vstack([sol.controls[1:], sol.controls[-1:]])
        trace.controller_ms.append((time.perf_counter() - t0) * 1000.0)
        v_cmd, w_cmd = float(sol.controls[0, 0]), float(sol.controls[0, 1])

        clearance = world.clearance(state[0], state[1])
        record(clearance)
        if clearance <= 0.0:
            trace.termination = "collision"
            break
        if math.hypot(state[0] - gx, state[1] - gy) <= cfg.goal_radius:
            trace.termination = "goal"
            break
        if sim_time >= cfg.max_duration:
            trace.termination = "timeout"
            break

        state = mpc.step_rk4(state, np.array([v_cmd, w_cmd]), dt_c)
        state[0] = min(max(state[0], 0.0), L)
        state[1] = min(max(state[1], 0.0), W)
        sim_time += dt_c

    return trace, compute_metrics(trace, world)


def compute_metrics(trace: EpisodeTrace, world: World) -> Metrics:
    """Pure function of the trace: safety, bump height, length, latency."""
    if not trace.rows:
        raise ConfigError("empty trace")
    xs = np.array([r.x for r in trace.rows])
    ys = np.array([r.y for r in trace.rows])
    zs = np.array([r.z for r in trace.rows])
    ts = np.array([r.t for r in trace.rows])
    clear = np.array([r.clearance for r in trace.rows])

    length = float(np.hypot(np.diff(xs), np.diff(ys)).sum())
    bump = float(np.abs(np.diff(zs)).sum())
    duration = float(ts[-1] - ts[0]) if ts.size > 1 else 0.0
    plan_ms = float(np.mean(trace.plan_ms)) if trace.plan_ms else 0.0
    ctrl_ms = float(np.mean(trace.controller_ms)) if trace.controller_ms else 0.0
    amortized_tta = trace.tta_ms / max(len(trace.plan_ms), 1)
    return Metrics(
        latency_tta_plan_ms=plan_ms + amortized_tta,
        latency_controller_ms=ctrl_ms,
        latency_total_ms=plan_ms + amortized_tta + ctrl_ms,
        safety_avg=float(np.mean(clear)),
        safety_min=float(np.min(clear)),
        bump_height=bump,
        trajectory_length=length,
        duration=duration,
        avg_speed=length / duration if duration > 0 else 0.0,
        termination=trace.termination,
    )


# --- dataset export --------------------------------------------------------


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def build_dataset(
    worlds: list[World],
    viewpoints_per_world: int,
    states_per_viewpoint: int,
    out_dir,
    stack: StackConfig = None,
    seed: int = 0,
) -> Path:
    """Export depth frames and per-anchor expert labels for imitation training.

    Layout: `depth/w<wi>_v<vi>.pgm` plus a pose sidecar JSON per frame and a
    `manifest.jsonl` whose first line is a header (normalization constants,
    camera geometry, counts) followed by one line per sample with relative
    paths and content hashes.  Rerunning with the same worlds and seed
    produces byte-identical files.
    """
    stack = stack or StackConfig()
    out = Path(out_dir)
    (out / "depth").mkdir(parents=True, exist_ok=True)
    lattice = build_lattice(stack.lattice.m_theta, stack.lattice.fov_h, stack.lattice.r)
    settings = planner_settings(stack, stack.episode.v_avg_target)
    norm = stack.planner.normalization()
    intr = camera_intrinsics(stack)
    margin = settings.p_n_max + 2.0 * stack.tta.cell_size + 1.0

    samples = []
    skipped = 0
    for wi, world in enumerate(worlds):
        cost_map, _ = build_world_cost_map(world, stack)
        poses = sample_viewpoints(
            world,
            stack.dataset.viewpoint_spacing,
            viewpoints_per_world,
            camera_height=stack.camera.mount_height,
            seed=seed * 1000 + wi,
            margin=margin,
        )
        for vi, pose in enumerate(poses):
            img = render_depth(
                world, pose, intr,
                noise_sigma_coeff=(
                    stack.camera.noise_sigma_coeff if stack.camera.noise_enabled else 0.0
                ),
                noise_dropout=(
                    stack.camera.noise_dropout if stack.camera.noise_enabled else 0.0
                ),
                noise_seed=seed * 100_000 + wi * 1000 + vi,
            )
            depth_rel = f"depth/w{wi}_v{vi}.pgm"
            img.save_pgm(out / depth_rel)
            pose_doc = {"x": pose[0], "y": pose[1], "z": pose[2], "yaw": pose[3]}
            (out / depth_rel).with_suffix(".json").write_text(
                json.dumps(pose_doc, sort_keys=True)
            )
            depth_hash = _sha256(out / depth_rel)

            rng = np.random.default_rng([seed, wi, vi])
            for si in range(states_per_viewpoint):
                speed = rng.uniform(0.0, settings.v_max)
                head = pose[3] + rng.normal(0.0, math.radians(15.0))
                v_s = speed * np.array([math.cos(head), math.sin(head)])
                # Goals stay frontal-ish: a goal behind the field of view
                # makes every anchor equally bad and the labels carry no
                # ranking signal.
                bearing = rng.uniform(-math.radians(60.0), math.radians(60.0))
                g_range = rng.uniform(1.0, settings.g_max)
                goal = np.array(pose[:2]) + g_range * np.array(
                    [math.cos(pose[3] + bearing), math.sin(pose[3] + bearing)]
                )
                try:
                    obs = Observation(
                        p_s=np.array(pose[:2]), v_s=v_s, goal=goal, yaw=pose[3]
                    )
                    plan = plan_lattice(obs, cost_map, lattice, settings)
                    labels, _ = make_labels(plan, lattice, norm)
                except ForestNavError:
                    skipped += 1
                    continue
                rot_inv = np.array(
                    [
                        [math.cos(-pose[3]), -math.sin(-pose[3])],
                        [math.sin(-pose[3]), math.cos(-pose[3])],
                    ]
                )
                g_body = rot_inv @ (plan.goal - np.array(pose[:2]))
                from forestnav.curves import normalize_state

                s_vec, _ = normalize_state(rot_inv @ v_s, g_body, norm)
                samples.append(
                    {
                        "id": f"w{wi}_v{vi}_s{si}",
                        "world": wi,
                        "viewpoint": vi,
                        "depth": depth_rel,
                        "depth_sha256": depth_hash,
                        "pose": pose_doc,
                        "state": [float(v) for v in s_vec],
                        "labels": [[float(v) for v in row] for row in labels],
                        "j_t": [float(v) for v in plan.j_t],
                        "best_index": int(plan.best_index),
                    }
                )

    header = {
        "type": "header",
        "version": 1,
        "m_theta": stack.lattice.m_theta,
        "image_width": intr.width,
        "image_height": intr.height,
        "max_range": intr.max_range,
        "fov_h": intr.fov_h,
        "fov_v": intr.fov_v,
        "normalization": {
            "v_max": norm.v_max,
            "g_max": norm.g_max,
            "p_n_max": norm.p_n_max,
            "p_theta_max": norm.p_theta_max,
            "c_max": norm.c_max,
        },
        "lattice_r": stack.lattice.r,
        "t_e": settings.t_e,
        "samples": len(samples),
        "skipped": skipped,
    }
    manifest = out / "manifest.jsonl"
    with open(manifest, "w") as f:
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for sample in samples:
            f.write(json.dumps(sample, sort_keys=True) + "\n")
    return manifest
