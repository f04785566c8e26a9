"""Command-line entry points for the navigation stack.

Subcommands: gen-world, voxelize, tta, plan, simulate, dataset, eval-mpc,
validate-plan.  All output paths get a matplotlib figure next to the
delimited data unless --no-fig is given.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from forestnav import mpc, report
from forestnav.config import StackConfig, load_config
from forestnav.curves import HermiteTrajectory, build_lattice
from forestnav.harness import (
    EpisodeConfig,
    build_dataset,
    build_world_cost_map,
    make_world,
    planner_settings,
    run_episode,
)
from forestnav.tta import CostMap, TtaConfig, build_cost_map
from forestnav.trajopt import Observation, plan_lattice, validate_plan_dict
from forestnav.voxelizer import PointCloud, VoxelizerConfig, voxelize_obstacles_3d, voxelize_terrain_2d
from forestnav.worldgen import World


def _parse_pair(text: str, n: int, name: str) -> list[float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != n:
        raise SystemExit(f"--{name} expects {n} comma-separated values")
    return parts


def cmd_gen_world(args, cfg: StackConfig) -> int:
    world = make_world(cfg, args.seed)
    out = Path(args.out)
    world.save(out)
    avg, mx = world.slope_stats()
    print(
        f"world seed={args.seed}: {world.trees.shape[0]} trees, "
        f"slope avg {math.degrees(avg):.1f} deg max {math.degrees(mx):.1f} deg -> {out}"
    )
    if not args.no_fig:
        report.plot_world(world, out / "world.png")
    return 0


def cmd_voxelize(args, cfg: StackConfig) -> int:
    world = World.load(args.world)
    L, W, H = world.extent
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    common = dict(
        voxel_size=args.voxel_size or cfg.voxel.voxel_size,
        extent=(L, W, H),
        z_min=world.z_min,
        workers=args.workers or cfg.voxel.workers,
    )
    terrain = voxelize_terrain_2d(world, VoxelizerConfig(mode="2d-terrain", **common))
    obstacles = voxelize_obstacles_3d(world, VoxelizerConfig(mode="3d-obstacle", **common))
    terrain.save_ply(out / "terrain.ply")
    obstacles.save_ply(out / "obstacles.ply")
    terrain.save_binary(out / "terrain.bin")
    obstacles.save_binary(out / "obstacles.bin")
    print(f"terrain: {terrain.count} pts, obstacles: {obstacles.count} pts -> {out}")
    return 0


def cmd_tta(args, cfg: StackConfig) -> int:
    terrain = PointCloud.load_ply(args.terrain)
    obstacles = PointCloud.load_ply(args.obstacles)
    t = cfg.tta
    tta_cfg = TtaConfig(
        cell_size=t.cell_size, slope_max=t.slope_max, roughness_max=t.roughness_max,
        r_dilate=t.r_dilate, d_0=t.d_0, k=t.k, lambda_r=t.lambda_r,
        lambda_s=t.lambda_s, lambda_c=t.lambda_c, feature_radius=t.feature_radius,
    )
    cost_map = build_cost_map(terrain, obstacles, tta_cfg)
    out = Path(args.out)
    cost_map.save(out)
    ny, nx = cost_map.shape
    print(f"cost map {nx}x{ny} cells @ {cost_map.cell_size} m -> {out}")
    if not args.no_fig:
        report.plot_costmap(cost_map, out / "costmap.png")
    return 0


def cmd_plan(args, cfg: StackConfig) -> int:
    cost_map = CostMap.load(args.map)
    x, y, yaw = _parse_pair(args.start, 3, "start")
    gx, gy = _parse_pair(args.goal, 2, "goal")
    lattice = build_lattice(cfg.lattice.m_theta, cfg.lattice.fov_h, cfg.lattice.r)
    settings = planner_settings(cfg)
    vx = args.speed * math.cos(yaw)
    vy = args.speed * math.sin(yaw)
    obs = Observation(p_s=(x, y), v_s=(vx, vy), goal=(gx, gy), yaw=yaw)
    plan = plan_lattice(obs, cost_map, lattice, settings)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(plan.to_json())
    print(
        f"best anchor {plan.best_index}, cost {plan.j_t[plan.best_index]:.3f} -> {out}"
    )
    if not args.no_fig:
        report.plot_plan(cost_map, plan, out.with_suffix(".png"))
    return 0


def cmd_simulate(args, cfg: StackConfig) -> int:
    x, y, yaw = _parse_pair(args.start, 3, "start")
    gx, gy = _parse_pair(args.goal, 2, "goal")
    world = World.load(args.world) if args.world else None
    episode = EpisodeConfig(
        stack=cfg,
        start=(x, y, yaw),
        goal=(gx, gy),
        seed=args.seed,
        world=world,
        planner_rate=args.planner_rate,
        controller_rate=args.controller_rate,
        plan_source=args.plan_source,
    )
    trace, metrics = run_episode(episode)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trace.save_jsonl(out / "trace.jsonl")
    metrics.save(out / "metrics.json")
    print(json.dumps(metrics.to_dict(), indent=2, sort_keys=True))
    if not args.no_fig:
        w = world if world is not None else make_world(cfg, args.seed)
        report.plot_episode(w, trace, out / "episode.png")
    return 0 if trace.termination == "goal" else 1


def cmd_dataset(args, cfg: StackConfig) -> int:
    worlds = [make_world(cfg, args.seed + i) for i in range(args.worlds)]
    manifest = build_dataset(
        worlds,
        viewpoints_per_world=args.viewpoints,
        states_per_viewpoint=args.states or cfg.dataset.states_per_viewpoint,
        out_dir=args.out,
        stack=cfg,
        seed=args.seed,
    )
    header = json.loads(manifest.read_text().splitlines()[0])
    print(
        f"dataset: {header['samples']} samples ({header['skipped']} skipped) "
        f"-> {manifest}"
    )
    return 0


def _track_reference(refs_fn, duration, cfg: StackConfig, out_csv, fig_path, title):
    mpc_cfg = mpc.MpcConfig(
        horizon=cfg.mpc.horizon, dt=cfg.mpc.dt,
        q=np.diag([cfg.mpc.q_xy, cfg.mpc.q_xy, cfg.mpc.q_theta]),
        r=np.diag([cfg.mpc.r_v, cfg.mpc.r_w]),
        v_min=cfg.mpc.v_min, v_max=cfg.mpc.v_max, w_max=cfg.mpc.w_max,
        max_iterations=cfg.mpc.max_iterations,
    )
    dt = 1.0 / 20.0
    state = refs_fn(0.0)[0].copy()
    rows = []
    warm = None
    t = 0.0
    while t <= duration:
        refs = refs_fn(t)
        sol = mpc.solve(state, refs, mpc_cfg, warm_start=warm)
        warm = np.vstack([sol.controls[1:], sol.controls[-1:]])
        u = sol.controls[0]
        rows.append([t, *state, *refs[0], u[0], u[1]])
        state = mpc.step_rk4(state, u, dt)
        t += dt
    rows = np.array(rows)
    with open(out_csv, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t", "x", "y", "theta", "ref_x", "ref_y", "ref_theta", "v", "w"])
        writer.writerows(rows.tolist())
    if fig_path is not None:
        report.plot_tracking(rows, fig_path, title=title)
    err = np.hypot(rows[:, 1] - rows[:, 4], rows[:, 2] - rows[:, 5])
    return float(np.sqrt(np.mean(err**2)))


def cmd_eval_mpc(args, cfg: StackConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    mpc_cfg_h = mpc.MpcConfig(horizon=cfg.mpc.horizon, dt=cfg.mpc.dt)

    line = HermiteTrajectory(p_s=(0, 0), v_s=(1, 0), v_e=(1, 0), p_e=(10, 0), t_e=10)

    def line_refs(t):
        return mpc.reference_from_trajectory(line, t, mpc_cfg_h)

    radius, speed = 3.0, 1.0
    omega = speed / radius

    def circle_refs(t):
        ks = t + cfg.mpc.dt * np.arange(cfg.mpc.horizon)
        return np.stack(
            [
                radius * np.sin(omega * ks),
                radius * (1.0 - np.cos(omega * ks)),
                mpc.wrap_angle(omega * ks),
            ],
            axis=1,
        )

    rms_line = _track_reference(
        line_refs, 10.0, cfg, out / "line.csv",
        None if args.no_fig else out / "line.png", "straight line @ 1 m/s",
    )
    rms_circle = _track_reference(
        circle_refs, 2 * math.pi / omega, cfg, out / "circle.csv",
        None if args.no_fig else out / "circle.png", "circle r=3 m @ 1 m/s",
    )
    print(f"straight-line RMS position error: {rms_line:.4f} m")
    print(f"circle RMS position error: {rms_circle:.4f} m")
    return 0


def cmd_validate_plan(args, cfg: StackConfig) -> int:
    doc = json.loads(Path(args.file).read_text())
    validate_plan_dict(doc)
    print(f"{args.file}: valid plan ({len(doc['anchors'])} anchors)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="forestnav",
        description="Off-road forest navigation stack: worlds, cost maps, "
        "expert planning, MPC, simulation, dataset export.",
    )
    parser.add_argument("--config", help="JSON config overriding the defaults")
    parser.add_argument("--seed", type=int, default=0)
    # The same flags are accepted after the subcommand; SUPPRESS keeps an
    # absent subcommand-level flag from clobbering the global one.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-world", parents=[common], help="generate a procedural forest world")
    p.add_argument("--out", required=True)
    p.add_argument("--no-fig", action="store_true")
    p.set_defaults(fn=cmd_gen_world)

    p = sub.add_parser("voxelize", parents=[common], help="terrain + obstacle point clouds")
    p.add_argument("--world", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--voxel-size", type=float)
    p.add_argument("--workers", type=int)
    p.set_defaults(fn=cmd_voxelize)

    p = sub.add_parser("tta", parents=[common], help="build the traversability cost map")
    p.add_argument("--terrain", required=True)
    p.add_argument("--obstacles", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-fig", action="store_true")
    p.set_defaults(fn=cmd_tta)

    p = sub.add_parser("plan", parents=[common], help="one lattice plan on a prebuilt cost map")
    p.add_argument("--map", required=True)
    p.add_argument("--start", required=True, help="x,y,theta")
    p.add_argument("--goal", required=True, help="x,y")
    p.add_argument("--speed", type=float, default=0.0, help="initial speed m/s")
    p.add_argument("--out", required=True)
    p.add_argument("--no-fig", action="store_true")
    p.set_defaults(fn=cmd_plan)

    p = sub.add_parser("simulate", parents=[common], help="closed-loop episode")
    p.add_argument("--world", help="world dir; omitted -> generate from seed")
    p.add_argument("--start", required=True, help="x,y,theta")
    p.add_argument("--goal", required=True, help="x,y")
    p.add_argument("--planner-rate", type=float)
    p.add_argument("--controller-rate", type=float)
    p.add_argument("--plan-source", help="dir of precomputed plan_%%05d.json")
    p.add_argument("--out", required=True)
    p.add_argument("--no-fig", action="store_true")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("dataset", parents=[common], help="export depth + expert labels")
    p.add_argument("--out", required=True)
    p.add_argument("--worlds", type=int, default=1)
    p.add_argument("--viewpoints", type=int, default=16)
    p.add_argument("--states", type=int)
    p.set_defaults(fn=cmd_dataset)

    p = sub.add_parser("eval-mpc", parents=[common], help="straight-line and circle tracking")
    p.add_argument("--out", required=True)
    p.add_argument("--no-fig", action="store_true")
    p.set_defaults(fn=cmd_eval_mpc)

    p = sub.add_parser("validate-plan", parents=[common], help="schema-check a plan JSON")
    p.add_argument("file")
    p.set_defaults(fn=cmd_validate_plan)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config)
    return args.fn(args, cfg)


if __name__ == "__main__":
    sys.exit(main())
