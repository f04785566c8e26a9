"""Off-road forest navigation stack.

Procedural forest worlds, point-cloud voxelization, terrain traversability
cost maps, cone-constrained Hermite trajectory optimization over a motion
primitive lattice, a differential-drive MPC follower, and a closed-loop
harness with dataset export for imitation learning.
"""

from forestnav.curves import (
    HermiteTrajectory,
    PrimitiveLattice,
    EndStateOffset,
    NormalizationConfig,
)
from forestnav.worldgen import World, TerrainParams, generate_world
from forestnav.voxelizer import VoxelizerConfig, PointCloud
from forestnav.tta import Dem, TtaConfig, CostMap
from forestnav.trajopt import ConeRegion, ObjectiveContext, LatticePlan
from forestnav.mpc import VehicleState, ControlInput, MpcConfig
from forestnav.sensors import CameraIntrinsics, DepthImage

__version__ = "0.1.0"

__all__ = [
    "HermiteTrajectory",
    "PrimitiveLattice",
    "EndStateOffset",
    "NormalizationConfig",
    "World",
    "TerrainParams",
    "generate_world",
    "VoxelizerConfig",
    "PointCloud",
    "Dem",
    "TtaConfig",
    "CostMap",
    "ConeRegion",
    "ObjectiveContext",
    "LatticePlan",
    "VehicleState",
    "ControlInput",
    "MpcConfig",
    "CameraIntrinsics",
    "DepthImage",
]
