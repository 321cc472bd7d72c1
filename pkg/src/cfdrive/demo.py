"""Small built-in demo dataset used by tests, the quickstart and the review UI.

The corridor scene is a slow drive along a straight lane with a traffic cone
ahead-left and a pedestrian off to the right. The candidate library holds a
left-turn maneuver that exits the drivable corridor, a slow straight
maneuver and a stop, so the checklist produces one unsafe and two safe
verdicts out of the box. World coordinates are deliberately rotated and
offset so frame conversions are exercised everywhere.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .keyframe import EmbeddingRecord, save_embeddings
from .maneuver import ManeuverLibrary, cluster_trajectories, save_library
from .scene import (
    AgentTrack,
    DrivableArea,
    LaneCenterline,
    Pose2,
    Scene,
    TrafficSignal,
    Trajectory,
    Waypoint,
    save_scene,
)

_EGO_WORLD = Pose2(30.0, -12.0, 0.6)
_KEY_TIME = 10.0

EXPERT_WAYPOINTS = ((0.76, 0.02), (1.45, 0.03), (2.05, 0.05), (2.55, 0.07), (3.02, 0.10), (3.44, 0.12))
LEFT_TURN_WAYPOINTS = ((4.85, -0.08), (9.71, -0.22), (14.6, -1.0), (19.4, -2.3), (23.6, -2.6), (27.42, -0.93))
SLOW_STRAIGHT_WAYPOINTS = ((0.8, 0.0), (1.6, 0.0), (2.4, 0.0), (3.2, 0.0), (4.0, 0.0), (4.8, 0.0))
STOP_WAYPOINTS = ((0.0, 0.0),) * 6

CONE_EGO = (8.2, 2.4)
PEDESTRIAN_EGO = (4.4, -7.2)
LANE_EGO = ((-2.6, 0.5), (1.2, 0.7), (5.0, 0.9), (8.8, 1.0))
# Corridor bounds in the ego frame; the left-turn candidate crosses x=14.
CORRIDOR_EGO = ((-6.0, -4.0), (14.0, -4.0), (14.0, 4.0), (-6.0, 4.0))

DEMO_CAPTION = (
    "A daytime service road bordered by fences. A traffic cone stands near the "
    "left edge of the lane ahead, and a pedestrian walks along the right side "
    "of the road."
)


def _to_world(x: float, y: float, yaw: float = 0.0) -> Pose2:
    e = _EGO_WORLD
    c, s = math.cos(e.yaw), math.sin(e.yaw)
    return Pose2(e.x + c * x - s * y, e.y + s * x + c * y, yaw + e.yaw)


def _world_xy(x: float, y: float) -> tuple[float, float]:
    p = _to_world(x, y)
    return (p.x, p.y)


def _traj(points, period: float = 0.5) -> Trajectory:
    return Trajectory(
        tuple(Waypoint((i + 1) * period, x, y) for i, (x, y) in enumerate(points)), period=period
    )


def expert_future() -> Trajectory:
    return _traj(EXPERT_WAYPOINTS)


def left_turn_candidate() -> Trajectory:
    return _traj(LEFT_TURN_WAYPOINTS)


def corridor_scene(caption: str | None = DEMO_CAPTION) -> Scene:
    """The demo corridor scene with a cone on the lane and a pedestrian orphan."""
    ego_points = ((0.0, 0.0), *EXPERT_WAYPOINTS)
    ego_poses = []
    for k, (x, y) in enumerate(ego_points):
        if k == 0:
            yaw = 0.0
        else:
            px, py = ego_points[k - 1]
            yaw = math.atan2(y - py, x - px)
        ego_poses.append((_KEY_TIME + 0.5 * k, _to_world(x, y, yaw)))

    lane_heading = math.atan2(0.2, 3.8)  # the lane drifts slightly left
    cone = AgentTrack(
        id="cone-0",
        category="movable_object.trafficcone",
        length=0.4,
        width=0.4,
        poses=(
            (_KEY_TIME, _to_world(*CONE_EGO, lane_heading)),
            (_KEY_TIME + 4.0, _to_world(*CONE_EGO, lane_heading)),
        ),
        velocity=(0.0, 0.0),
    )
    pedestrian = AgentTrack(
        id="ped-0",
        category="human.pedestrian.moving",
        length=0.6,
        width=0.6,
        poses=(
            (_KEY_TIME, _to_world(*PEDESTRIAN_EGO, math.pi / 2)),
            (_KEY_TIME + 4.0, _to_world(*PEDESTRIAN_EGO, math.pi / 2)),
        ),
        velocity=(0.0, 0.0),
    )
    lane = LaneCenterline(
        id="straight lane",
        polyline=tuple(_world_xy(x, y) for x, y in LANE_EGO),
    )
    drivable = DrivableArea(outer=(tuple(_world_xy(x, y) for x, y in CORRIDOR_EGO),))
    return Scene(
        scene_id="demo-corridor",
        key_time=_KEY_TIME,
        ego_poses=tuple(ego_poses),
        agents=(cone, pedestrian),
        lanes=(lane,),
        drivable=drivable,
        signals=(),
        caption=caption,
    )


def signal_scene() -> Scene:
    """Straight drive at 4 m/s over a stop line that stays red."""
    ego_poses = tuple((0.5 * k, Pose2(2.0 * k, 0.0, 0.0)) for k in range(7))
    lane = LaneCenterline(
        id="main",
        polyline=((-5.0, 0.0), (30.0, 0.0)),
        signal_ids=("sig-0",),
    )
    signal = TrafficSignal(
        id="sig-0",
        stop_line=((6.0, -5.0), (6.0, 5.0)),
        lane_ids=("main",),
        states=((-10.0, 30.0, "red"),),
    )
    drivable = DrivableArea(outer=(((-10.0, -8.0), (40.0, -8.0), (40.0, 8.0), (-10.0, 8.0)),))
    return Scene(
        scene_id="demo-signal",
        key_time=0.0,
        ego_poses=ego_poses,
        agents=(),
        lanes=(lane,),
        drivable=drivable,
        signals=(signal,),
        caption="An empty straight road approaching a traffic light showing red.",
    )


def demo_trajectories() -> list[Trajectory]:
    """Trajectory multiset whose 3-cluster centers are the demo maneuvers."""
    return (
        [_traj(LEFT_TURN_WAYPOINTS)] * 3
        + [_traj(SLOW_STRAIGHT_WAYPOINTS)] * 2
        + [_traj(STOP_WAYPOINTS)]
    )


def demo_library(seed: int = 0) -> ManeuverLibrary:
    return cluster_trajectories(demo_trajectories(), k=3, seed=seed)


def demo_embeddings(n: int = 10, dim: int = 8, seed: int = 7) -> list[EmbeddingRecord]:
    """Two separated blobs of fake image embeddings."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        center = 10.0 if i % 2 else -10.0
        vec = rng.normal(center, 0.1, size=dim).astype(np.float32)
        records.append(EmbeddingRecord(sample_id=f"sample-{i:03d}", vector=vec))
    return records


def write_demo_dataset(out_dir) -> dict[str, Path]:
    """Write scenes, a maneuver library and embeddings; returns the paths."""
    out = Path(out_dir)
    scenes_dir = out / "scenes"
    scenes_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "corridor": scenes_dir / "demo-corridor.json",
        "signal": scenes_dir / "demo-signal.json",
        "library": out / "library.json",
        "embeddings": out / "embeddings.json",
        "scenes_dir": scenes_dir,
    }
    save_scene(corridor_scene(), paths["corridor"])
    save_scene(signal_scene(), paths["signal"])
    save_library(demo_library(), paths["library"])
    save_embeddings(demo_embeddings(), paths["embeddings"])
    return paths
