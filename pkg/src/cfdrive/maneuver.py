"""High-level maneuver labels and the clustered trajectory library.

The library is built once by k-means over expert futures from many scenes
and reused per scene as the set of counterfactual candidates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .config import RuleConfig
from .keyframe import kmeans
from .scene import Scene, Trajectory, Waypoint, wrap_angle


class SpeedClass(str, Enum):
    STOP = "Stop"
    SLOW = "Moving Slowly"
    MODERATE = "Moderate Speed"
    FAST = "Fast"


class Longitudinal(str, Enum):
    ACCELERATING = "Accelerating"
    DECELERATING = "Decelerating"
    CONSTANT = "Constant Speed"


class Lateral(str, Enum):
    STRAIGHT = "Go Straight"
    LEFT = "Left Turn"
    RIGHT = "Right Turn"
    UTURN = "U-Turn"


class LaneBehavior(str, Enum):
    KEEPING = "Lane Keeping"
    CHANGE_LEFT = "Lane Change Left"
    CHANGE_RIGHT = "Lane Change Right"
    UNKNOWN = "Unknown"


@dataclass(frozen=True)
class HighLevelDecision:
    speed: SpeedClass
    longitudinal: Longitudinal
    lateral: Lateral
    lane_behavior: LaneBehavior = LaneBehavior.UNKNOWN

    def __post_init__(self) -> None:
        if self.speed is SpeedClass.STOP:
            if self.lateral is not Lateral.STRAIGHT or self.longitudinal is not Longitudinal.CONSTANT:
                raise ValueError("a Stop decision is Go Straight at Constant Speed by definition")

    def decision_string(self) -> str:
        """Render as "speed, lane behavior, lateral"; lane behavior only when known."""
        parts = [self.speed.value]
        if self.lane_behavior is not LaneBehavior.UNKNOWN:
            parts.append(self.lane_behavior.value)
        parts.append(self.lateral.value)
        return ", ".join(parts)

    def to_dict(self) -> dict:
        return {
            "speed": self.speed.value,
            "longitudinal": self.longitudinal.value,
            "lateral": self.lateral.value,
            "lane_behavior": self.lane_behavior.value,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "HighLevelDecision":
        return cls(
            speed=SpeedClass(doc["speed"]),
            longitudinal=Longitudinal(doc["longitudinal"]),
            lateral=Lateral(doc["lateral"]),
            lane_behavior=LaneBehavior(doc.get("lane_behavior", "Unknown")),
        )


def classify_decision(traj: Trajectory, config: RuleConfig | None = None) -> HighLevelDecision:
    """Deterministic threshold labeling of a trajectory.

    Exact positional duplicates at the tail (degenerate resamples) are
    trimmed first so they cannot change the label.
    """
    config = config or RuleConfig()
    pts = [(0.0, 0.0, 0.0)] + [(w.t, w.x, w.y) for w in traj.waypoints]
    while len(pts) > 2 and pts[-1][1:] == pts[-2][1:]:
        pts.pop()

    seg_len: list[float] = []
    speeds: list[float] = []
    headings: list[float] = []
    for (t0, x0, y0), (t1, x1, y1) in zip(pts, pts[1:]):
        d = math.hypot(x1 - x0, y1 - y0)
        seg_len.append(d)
        speeds.append(d / (t1 - t0))
        if d > 1e-9:
            headings.append(math.atan2(y1 - y0, x1 - x0))

    path_length = sum(seg_len)
    duration = pts[-1][0]
    mean_speed = path_length / duration if duration > 0 else 0.0

    if path_length < config.stop_displacement or mean_speed < config.stop_speed:
        return HighLevelDecision(SpeedClass.STOP, Longitudinal.CONSTANT, Lateral.STRAIGHT)

    if mean_speed < config.speed_slow:
        speed = SpeedClass.SLOW
    elif mean_speed < config.speed_moderate:
        speed = SpeedClass.MODERATE
    else:
        speed = SpeedClass.FAST

    dv = speeds[-1] - speeds[0]
    if dv > config.accel_delta:
        longitudinal = Longitudinal.ACCELERATING
    elif dv < -config.accel_delta:
        longitudinal = Longitudinal.DECELERATING
    else:
        longitudinal = Longitudinal.CONSTANT

    net_turn = sum(wrap_angle(b - a) for a, b in zip(headings, headings[1:]))
    if abs(net_turn) < config.straight_max:
        lateral = Lateral.STRAIGHT
    elif abs(net_turn) >= config.uturn_min:
        lateral = Lateral.UTURN
    elif net_turn > 0:
        lateral = Lateral.LEFT
    else:
        lateral = Lateral.RIGHT

    return HighLevelDecision(speed, longitudinal, lateral)


@dataclass(frozen=True)
class LibraryEntry:
    trajectory: Trajectory
    decision: HighLevelDecision
    cluster_size: int


@dataclass(frozen=True)
class ManeuverLibrary:
    entries: tuple[LibraryEntry, ...]

    def __post_init__(self) -> None:
        shapes = {(len(e.trajectory.waypoints), e.trajectory.period) for e in self.entries}
        if len(shapes) > 1:
            raise ValueError("library entries must share horizon and period")

    def __len__(self) -> int:
        return len(self.entries)


def cluster_trajectories(
    trajs: Sequence[Trajectory], k: int, seed: int = 0, config: RuleConfig | None = None
) -> ManeuverLibrary:
    """Cluster trajectories on concatenated waypoint coordinates and label the centers."""
    if not trajs:
        raise ValueError("no trajectories to cluster")
    shapes = {(len(t.waypoints), t.period) for t in trajs}
    if len(shapes) > 1:
        raise ValueError("trajectories must be resampled to a shared horizon/period first")
    (n_wp, period) = next(iter(shapes))

    vectors = np.stack([t.features() for t in trajs])
    result = kmeans(vectors, k, seed=seed)

    entries = []
    for j in range(k):
        size = int(np.sum(result.assignments == j))
        if size == 0:
            continue
        xy = result.centroids[j].reshape(n_wp, 2)
        center = Trajectory(
            tuple(Waypoint((i + 1) * period, float(x), float(y)) for i, (x, y) in enumerate(xy)),
            period=period,
        )
        entries.append(LibraryEntry(center, classify_decision(center, config), size))

    entries.sort(
        key=lambda e: (-e.cluster_size, e.decision.decision_string(), tuple(map(tuple, e.trajectory.xy().tolist())))
    )
    return ManeuverLibrary(tuple(entries))


def instantiate_candidates(
    scene: Scene, lib: ManeuverLibrary, limit: int | None = None, speed_align: bool = False
) -> list[Trajectory]:
    """Candidate trajectories for a scene, largest clusters first.

    Library trajectories are already expressed in the ego frame and are used
    as-is; with ``speed_align`` they are rescaled longitudinally so the mean
    speed matches the ego speed at the key timestamp.
    """
    entries = list(lib.entries)
    if limit is not None:
        entries = entries[: max(limit, 0)]
    if not speed_align:
        return [e.trajectory for e in entries]

    v0 = _ego_speed_at_key(scene)
    out = []
    for e in entries:
        traj = e.trajectory
        mean = _mean_speed(traj)
        if mean > 1e-6 and v0 > 1e-6:
            scale = v0 / mean
            traj = replace(
                traj,
                waypoints=tuple(Waypoint(w.t, w.x * scale, w.y * scale) for w in traj.waypoints),
            )
        out.append(traj)
    return out


def _mean_speed(traj: Trajectory) -> float:
    pts = np.vstack([[0.0, 0.0], traj.xy()])
    path = float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
    return path / traj.waypoints[-1].t


def _ego_speed_at_key(scene: Scene) -> float:
    dt = 0.1
    t0 = scene.key_time
    p0 = scene.ego_pose_at(t0)
    try:
        p1 = scene.ego_pose_at(t0 + dt)
    except Exception:
        p1 = p0
        p0 = scene.ego_pose_at(t0 - dt)
    return math.hypot(p1.x - p0.x, p1.y - p0.y) / dt


# --- library file --------------------------------------------------------

LIBRARY_SCHEMA = "omnidrive_library_v1"


def save_library(lib: ManeuverLibrary, path) -> None:
    doc = {
        "schema_version": LIBRARY_SCHEMA,
        "entries": [
            {
                "cluster_size": e.cluster_size,
                "decision": e.decision.to_dict(),
                "period": e.trajectory.period,
                "waypoints": [[w.t, w.x, w.y] for w in e.trajectory.waypoints],
            }
            for e in lib.entries
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_library(path) -> ManeuverLibrary:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != LIBRARY_SCHEMA:
        raise ValueError(f"not a maneuver library file: {path}")
    entries = []
    for e in doc["entries"]:
        traj = Trajectory(
            tuple(Waypoint(float(t), float(x), float(y)) for t, x, y in e["waypoints"]),
            period=float(e["period"]),
        )
        entries.append(
            LibraryEntry(traj, HighLevelDecision.from_dict(e["decision"]), int(e["cluster_size"]))
        )
    return ManeuverLibrary(tuple(entries))
