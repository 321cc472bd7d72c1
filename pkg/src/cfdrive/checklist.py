"""Counterfactual rule engine.

Given a scene and a candidate trajectory, sweep the ego footprint along the
trajectory at a fine time grid and test three rules: collision with agents,
leaving the drivable area, and crossing a red-light stop line. The combined
verdict carries the first violation per rule (per culprit), the high-level
decision label and the assigned-lane sequence.

All checks are stateless given (scene, config); many (scene, trajectory)
pairs can be evaluated concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache

import numpy as np

from .config import RuleConfig
from .geometry import OrientedBox, boxes_overlap, point_in_rings, polyline_lateral, segments_intersect
from .maneuver import HighLevelDecision, LaneBehavior, classify_decision
from .scene import Scene, Trajectory, ego_xy, to_ego_frame, wrap_angle

# Outcome categories used by prompt wording and keyword evaluation.
CATEGORY_SAFETY = "safety"
CATEGORY_COLLISION = "collision"
CATEGORY_RED_LIGHT = "red light"
CATEGORY_DRIVABLE = "drivable area"
CATEGORIES = (CATEGORY_SAFETY, CATEGORY_COLLISION, CATEGORY_RED_LIGHT, CATEGORY_DRIVABLE)


class ViolationKind(str, Enum):
    COLLISION = "collision"
    OUT_OF_DRIVABLE = "out_of_drivable_area"
    RED_LIGHT = "red_light"

    @property
    def category(self) -> str:
        return {
            ViolationKind.COLLISION: CATEGORY_COLLISION,
            ViolationKind.OUT_OF_DRIVABLE: CATEGORY_DRIVABLE,
            ViolationKind.RED_LIGHT: CATEGORY_RED_LIGHT,
        }[self]


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    time: float
    location: tuple[float, float]
    culprit: str | None = None

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "time": self.time,
            "location": [self.location[0], self.location[1]],
            "culprit": self.culprit,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Violation":
        return cls(
            kind=ViolationKind(doc["kind"]),
            time=float(doc["time"]),
            location=(float(doc["location"][0]), float(doc["location"][1])),
            culprit=doc.get("culprit"),
        )


@dataclass(frozen=True)
class CounterfactualVerdict:
    trajectory_id: str
    decision: HighLevelDecision
    safe: bool
    violations: tuple[Violation, ...]
    lane_ids: tuple[str | None, ...]

    def __post_init__(self) -> None:
        if self.safe != (len(self.violations) == 0):
            raise ValueError("safe must hold exactly when there are no violations")

    def categories(self) -> set[str]:
        if self.safe:
            return {CATEGORY_SAFETY}
        return {v.kind.category for v in self.violations}

    def to_dict(self) -> dict:
        return {
            "trajectory_id": self.trajectory_id,
            "decision": self.decision.to_dict(),
            "decision_string": self.decision.decision_string(),
            "safe": self.safe,
            "violations": [v.to_dict() for v in self.violations],
            "lane_ids": list(self.lane_ids),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CounterfactualVerdict":
        return cls(
            trajectory_id=doc["trajectory_id"],
            decision=HighLevelDecision.from_dict(doc["decision"]),
            safe=bool(doc["safe"]),
            violations=tuple(Violation.from_dict(v) for v in doc["violations"]),
            lane_ids=tuple(doc.get("lane_ids", [])),
        )


def substep_times(horizon: float, dt: float) -> np.ndarray:
    """The (0, horizon] sweep grid; violation times always lie on it."""
    n = round(horizon / dt)
    return np.arange(1, n + 1) * dt


def _ego_states(traj: Trajectory, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Interpolated (x, y) and heading of the ego center at each sub-step."""
    pts = np.vstack([[0.0, 0.0], traj.xy()])
    ts = np.concatenate([[0.0], traj.times()])
    xs = np.interp(times, ts, pts[:, 0])
    ys = np.interp(times, ts, pts[:, 1])

    seg = np.diff(pts, axis=0)
    seg_heading = np.zeros(len(seg))
    last = 0.0
    for i, d in enumerate(seg):
        if math.hypot(d[0], d[1]) > 1e-12:
            last = math.atan2(d[1], d[0])
        seg_heading[i] = last
    idx = np.clip(np.searchsorted(ts, times, side="left") - 1, 0, len(seg) - 1)
    return np.column_stack([xs, ys]), seg_heading[idx]


@lru_cache(maxsize=256)
def _ego_lane_arrays(scene: Scene) -> dict[str, np.ndarray]:
    out = {}
    for lane in scene.lanes:
        pts = [ego_xy(scene, x, y) for x, y in lane.polyline]
        out[lane.id] = np.asarray(pts, dtype=float)
    return out


def assign_lane(
    scene: Scene, point: tuple[float, float], heading: float, config: RuleConfig | None = None
) -> str | None:
    """Nearest compatible lane for an ego-frame point, or None.

    A lane is compatible when the absolute lateral offset stays within
    ``lane_max_lateral`` and the heading deviates less than
    ``lane_max_heading``; ties resolve to the smaller offset, then the
    lexicographically smaller id.
    """
    config = config or RuleConfig()
    best: tuple[float, str] | None = None
    for lane_id, line in sorted(_ego_lane_arrays(scene).items()):
        lateral, _, lane_heading = polyline_lateral(point, line)
        if abs(lateral) > config.lane_max_lateral:
            continue
        if abs(wrap_angle(heading - lane_heading)) > config.lane_max_heading:
            continue
        key = (abs(lateral), lane_id)
        if best is None or key < best:
            best = key
    return best[1] if best else None


def detect_lane_change(lane_ids, scene: Scene) -> LaneBehavior:
    """Classify an assigned-lane sequence.

    Unknown when assignments are missing anywhere; following a successor
    lane is still lane keeping.
    """
    ids = list(lane_ids)
    if not ids or any(i is None for i in ids):
        return LaneBehavior.UNKNOWN
    compressed = [ids[0]]
    for i in ids[1:]:
        if i != compressed[-1]:
            compressed.append(i)
    lanes = {l.id: l for l in scene.lanes}
    for prev_id, next_id in zip(compressed, compressed[1:]):
        prev, nxt = lanes[prev_id], lanes[next_id]
        if next_id in prev.successors:
            continue
        if next_id == prev.left_neighbor or nxt.right_neighbor == prev_id:
            return LaneBehavior.CHANGE_LEFT
        if next_id == prev.right_neighbor or nxt.left_neighbor == prev_id:
            return LaneBehavior.CHANGE_RIGHT
        return LaneBehavior.UNKNOWN
    return LaneBehavior.KEEPING


def check_collision(scene: Scene, traj: Trajectory, config: RuleConfig | None = None) -> list[Violation]:
    """First overlap per agent between the swept ego box and the agent box.

    Agents are placed at their logged pose at the matching absolute time and
    extrapolated at constant velocity beyond their track.
    """
    config = config or RuleConfig()
    config.validate_for_period(traj.period)
    times = substep_times(traj.horizon, config.dt)
    centers, headings = _ego_states(traj, times)
    ego_radius = math.hypot(scene.ego_length, scene.ego_width) / 2.0

    violations = []
    for agent in scene.agents:
        agent_radius = math.hypot(agent.length, agent.width) / 2.0
        reach = ego_radius + agent_radius
        for i, t in enumerate(times):
            pose = to_ego_frame(scene, agent.pose_at(scene.key_time + float(t)))
            if math.hypot(pose.x - centers[i, 0], pose.y - centers[i, 1]) > reach:
                continue
            ego_box = OrientedBox(centers[i, 0], centers[i, 1], headings[i], scene.ego_length, scene.ego_width)
            agent_box = OrientedBox(pose.x, pose.y, pose.yaw, agent.length, agent.width)
            if boxes_overlap(ego_box, agent_box):
                violations.append(
                    Violation(ViolationKind.COLLISION, float(t), (centers[i, 0], centers[i, 1]), agent.id)
                )
                break
    violations.sort(key=lambda v: (v.time, v.culprit or ""))
    return violations


def check_drivable(scene: Scene, traj: Trajectory, config: RuleConfig | None = None) -> list[Violation]:
    """First sub-step where any ego-box corner leaves the drivable area.

    Scenes without drivable annotation are not checked. At most one
    violation (the first exit) is reported.
    """
    config = config or RuleConfig()
    config.validate_for_period(traj.period)
    if not scene.drivable.outer:
        return []
    times = substep_times(traj.horizon, config.dt)
    centers, headings = _ego_states(traj, times)
    key_pose = scene.key_pose()

    for i, t in enumerate(times):
        box = OrientedBox(centers[i, 0], centers[i, 1], headings[i], scene.ego_length, scene.ego_width)
        for corner in box.corners():
            world = _ego_point_to_world(key_pose, corner)
            if not _drivable_contains_world(scene, world):
                return [
                    Violation(
                        ViolationKind.OUT_OF_DRIVABLE, float(t), (float(corner[0]), float(corner[1]))
                    )
                ]
    return []


def _ego_point_to_world(key_pose, corner) -> tuple[float, float]:
    c, s = math.cos(key_pose.yaw), math.sin(key_pose.yaw)
    x, y = float(corner[0]), float(corner[1])
    return (key_pose.x + c * x - s * y, key_pose.y + s * x + c * y)


def _drivable_contains_world(scene: Scene, p: tuple[float, float]) -> bool:
    # Even-odd across outer rings and holes together; ring boundaries count
    # as inside (touching the boundary is not yet a violation).
    return point_in_rings(p, (*scene.drivable.outer, *scene.drivable.holes))


def check_red_light(scene: Scene, traj: Trajectory, config: RuleConfig | None = None) -> list[Violation]:
    """Stop-line crossings while the signal shows red.

    A crossing only counts when the signal controls the ego's assigned lane
    at that moment; with no assignment (or a signal that declares no lanes)
    the check is permissive and any crossing counts.
    """
    config = config or RuleConfig()
    config.validate_for_period(traj.period)
    if not scene.signals:
        return []
    times = substep_times(traj.horizon, config.dt)
    centers, headings = _ego_states(traj, times)
    path = np.vstack([[0.0, 0.0], centers])

    violations = []
    for signal in scene.signals:
        stop_line = (
            ego_xy(scene, *signal.stop_line[0]),
            ego_xy(scene, *signal.stop_line[1]),
        )
        for i in range(len(times)):
            seg = ((float(path[i, 0]), float(path[i, 1])), (float(path[i + 1, 0]), float(path[i + 1, 1])))
            hit = segments_intersect(seg, stop_line)
            if hit is None:
                continue
            t_cross = float(times[i])
            if signal.state_at(scene.key_time + t_cross) == "red":
                lane = assign_lane(scene, (centers[i, 0], centers[i, 1]), float(headings[i]), config)
                if lane is None or not signal.lane_ids or lane in signal.lane_ids:
                    violations.append(Violation(ViolationKind.RED_LIGHT, t_cross, hit, signal.id))
            break  # only the first crossing of this stop line matters
    violations.sort(key=lambda v: (v.time, v.culprit or ""))
    return violations


def lane_sequence(scene: Scene, traj: Trajectory, config: RuleConfig | None = None) -> tuple[str | None, ...]:
    """Assigned lane id at every waypoint."""
    config = config or RuleConfig()
    out = []
    for w in traj.waypoints:
        out.append(assign_lane(scene, (w.x, w.y), traj.heading_at(w.t), config))
    return tuple(out)


def run_checklist(
    scene: Scene,
    traj: Trajectory,
    config: RuleConfig | None = None,
    trajectory_id: str = "trajectory",
) -> CounterfactualVerdict:
    """All three rule checks plus decision labeling for one trajectory."""
    config = config or RuleConfig()
    violations = [
        *check_collision(scene, traj, config),
        *check_drivable(scene, traj, config),
        *check_red_light(scene, traj, config),
    ]
    violations.sort(key=lambda v: (v.time, v.kind.value, v.culprit or ""))
    lanes = lane_sequence(scene, traj, config)
    decision = replace(classify_decision(traj, config), lane_behavior=detect_lane_change(lanes, scene))
    return CounterfactualVerdict(
        trajectory_id=trajectory_id,
        decision=decision,
        safe=not violations,
        violations=tuple(violations),
        lane_ids=lanes,
    )
