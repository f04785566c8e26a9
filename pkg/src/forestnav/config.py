"""Stack-wide configuration with JSON overrides.

Angles are radians internally; the JSON surface uses `_deg` suffixed keys
for human-facing angular fields.  Every default below is a repo convention
unless a comment says otherwise; none are baked into the algorithms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict

from forestnav.curves import NormalizationConfig
from forestnav.errors import ConfigError


@dataclass
class LatticeConfig:
    m_theta: int = 5
    fov_h: float = math.radians(80.0)
    r: float = 6.0
    t_e: float = 6.0


@dataclass
class WorldConfig:
    size_x: float = 100.0
    size_y: float = 100.0
    size_z: float = 20.0
    z_min: float = -5.0
    heightmap_cell: float = 0.5
    octaves: int = 5
    base_frequency: float = 0.025
    amplitude: float = 3.5
    tree_density: float = 1.0 / 75.0
    tree_radius: float = 0.25
    tree_height: float = 5.0
    tree_spacing: float = 2.0


@dataclass
class VoxelConfig:
    voxel_size: float = 0.2
    workers: int = 1


@dataclass
class TtaDefaults:
    cell_size: float = 0.2
    slope_max: float = math.radians(20.0)
    roughness_max: float = 0.1
    r_dilate: float = 0.4
    d_0: float = 0.6
    k: float = 0.5
    lambda_r: float = 1.0
    lambda_s: float = 1.0
    lambda_c: float = 2.0
    feature_radius: float = 0.6


@dataclass
class PlannerConfig:
    n_t: int = 20
    c_max: float = 200.0
    max_iterations: int = 200
    gradient_tolerance: float = 1e-9
    edge_penalty: float = 50.0
    v_max: float = 2.0
    p_n_max: float = 8.0
    p_theta_max: float = math.radians(8.0)
    g_max: float = 10.0

    def normalization(self) -> NormalizationConfig:
        return NormalizationConfig(
            v_max=self.v_max,
            g_max=self.g_max,
            p_n_max=self.p_n_max,
            p_theta_max=self.p_theta_max,
            c_max=self.c_max,
        )


@dataclass
class CameraConfig:
    height_px: int = 32
    fov_h: float = math.radians(80.0)
    fov_v: float = math.radians(55.0)
    max_range: float = 12.0
    mount_height: float = 0.5
    noise_enabled: bool = False
    noise_sigma_coeff: float = 0.001
    noise_dropout: float = 0.0


@dataclass
class MpcDefaults:
    horizon: int = 20
    dt: float = 0.1
    q_xy: float = 6.0
    q_theta: float = 0.1
    r_v: float = 0.05
    r_w: float = 0.05
    v_min: float = -0.5
    v_max: float = 2.0
    w_max: float = 1.5
    max_iterations: int = 50


@dataclass
class EpisodeDefaults:
    planner_rate: float = 10.0
    controller_rate: float = 20.0
    v_avg_target: float = 1.0
    max_duration: float = 180.0
    goal_radius: float = 1.0
    render_depth: bool = False


@dataclass
class DatasetDefaults:
    viewpoint_spacing: float = 5.0
    states_per_viewpoint: int = 8


@dataclass
class StackConfig:
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    world: WorldConfig = field(default_factory=WorldConfig)
    voxel: VoxelConfig = field(default_factory=VoxelConfig)
    tta: TtaDefaults = field(default_factory=TtaDefaults)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    mpc: MpcDefaults = field(default_factory=MpcDefaults)
    episode: EpisodeDefaults = field(default_factory=EpisodeDefaults)
    dataset: DatasetDefaults = field(default_factory=DatasetDefaults)

    def to_dict(self) -> dict:
        return asdict(self)


# JSON keys carrying degrees, mapped to their radian dataclass fields.
_DEG_FIELDS = {
    "lattice": {"fov_h_deg": "fov_h"},
    "tta": {"slope_max_deg": "slope_max"},
    "planner": {"p_theta_max_deg": "p_theta_max"},
    "camera": {"fov_h_deg": "fov_h", "fov_v_deg": "fov_v"},
}


def _apply_section(obj, section: str, values: dict) -> None:
    deg_map = _DEG_FIELDS.get(section, {})
    for key, value in values.items():
        if key in deg_map:
            setattr(obj, deg_map[key], math.radians(float(value)))
        elif hasattr(obj, key):
            current = getattr(obj, key)
            setattr(obj, key, type(current)(value) if current is not None else value)
        else:
            raise ConfigError(f"unknown config key {section}.{key}")


def load_config(path: str | None = None, overrides: dict | None = None) -> StackConfig:
    """Build a StackConfig from defaults, an optional JSON file, and overrides."""
    cfg = StackConfig()
    layers = []
    if path is not None:
        with open(path) as f:
            layers.append(json.load(f))
    if overrides:
        layers.append(overrides)
    for layer in layers:
        for section, values in layer.items():
            if not hasattr(cfg, section):
                raise ConfigError(f"unknown config section {section!r}")
            if not isinstance(values, dict):
                raise ConfigError(f"config section {section!r} must be an object")
            _apply_section(getattr(cfg, section), section, values)
    return cfg
