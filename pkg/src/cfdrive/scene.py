"""Neutral driving-scene schema: loading, validation, frame conversion.

A scene file is a single JSON document (``schema_version: "omnidrive_scene_v1"``)
holding a timestamped world snapshot: ego pose samples, agent tracks, lane
centerlines with topology, drivable-area rings and traffic signals. Units are
meters / seconds / radians throughout; the world frame is any fixed planar
frame. The ego frame is anchored at the ego pose at ``key_time``: x forward,
y leftward.

Converter contract for users bringing nuScenes / OpenLane-v2 style
annotations (one scene file per key sample):

* ``ego.poses``        <- ego_pose records (translation x/y, yaw from quaternion)
* ``agents``           <- sample_annotation tracks: category name, box length/
                          width, per-sample pose, velocity if available
* ``lanes``            <- centerline polylines with successor / left / right
                          topology and controlling traffic-light ids
* ``drivable``         <- drivable-area map layer exterior rings and holes
* ``signals``          <- traffic lights: stop-line segment, controlled lane
                          ids, state timeline relative to the same clock
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

SCHEMA_VERSION = "omnidrive_scene_v1"

DEFAULT_HORIZON = 3.0
DEFAULT_PERIOD = 0.5
# Documented default footprint; set per dataset, not a ground-truth value.
DEFAULT_EGO_LENGTH = 4.08
DEFAULT_EGO_WIDTH = 1.85
DEFAULT_LANE_WIDTH = 3.5

SIGNAL_STATES = ("red", "yellow", "green")


class SceneError(Exception):
    """Base class for scene loading problems."""


class SceneParseError(SceneError):
    """Document is not well-formed (bad JSON, wrong top-level shape)."""


class SceneValidationError(SceneError):
    """A field violates the schema; ``field`` is a dotted/indexed path."""

    def __init__(self, field_path: str, message: str):
        self.field = field_path
        super().__init__(f"{field_path}: {message}")


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(float(a), math.tau)
    if w <= -math.pi:
        w += math.tau
    return w


@dataclass(frozen=True)
class Pose2:
    """Planar pose; yaw is counter-clockwise with 0 along +x."""

    x: float
    y: float
    yaw: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.yaw)):
            raise ValueError("pose coordinates must be finite")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))


@dataclass(frozen=True)
class Waypoint:
    t: float
    x: float
    y: float


@dataclass(frozen=True)
class Trajectory:
    """Timed 2D waypoints in the ego frame at the key timestamp.

    The implicit start is the origin at t=0. Waypoint times are strictly
    increasing and start after 0; with the default 3 s horizon at 0.5 s
    period a trajectory has exactly 6 waypoints.
    """

    waypoints: tuple[Waypoint, ...]
    period: float = DEFAULT_PERIOD

    def __post_init__(self) -> None:
        if not self.waypoints:
            raise ValueError("trajectory needs at least one waypoint")
        if self.period <= 0:
            raise ValueError("period must be positive")
        prev = 0.0
        for i, w in enumerate(self.waypoints):
            if w.t <= prev:
                raise ValueError(f"waypoint times must be strictly increasing and > 0 (index {i})")
            prev = w.t

    @property
    def horizon(self) -> float:
        return len(self.waypoints) * self.period

    def times(self) -> np.ndarray:
        return np.array([w.t for w in self.waypoints])

    def xy(self) -> np.ndarray:
        return np.array([[w.x, w.y] for w in self.waypoints])

    def features(self) -> np.ndarray:
        """Concatenated waypoint coordinates (2n-dim clustering feature)."""
        return self.xy().reshape(-1)

    def position_at(self, t: float) -> tuple[float, float]:
        """Linear interpolation, anchored at the origin at t=0; clamps past the end."""
        ts = np.concatenate([[0.0], self.times()])
        xs = np.concatenate([[0.0], self.xy()[:, 0]])
        ys = np.concatenate([[0.0], self.xy()[:, 1]])
        return float(np.interp(t, ts, xs)), float(np.interp(t, ts, ys))

    def heading_at(self, t: float) -> float:
        """Direction of the segment containing t; stationary spans keep the last heading."""
        pts = np.vstack([[0.0, 0.0], self.xy()])
        ts = np.concatenate([[0.0], self.times()])
        idx = int(np.searchsorted(ts, t, side="left"))
        idx = min(max(idx, 1), len(ts) - 1)
        heading = 0.0
        for i in range(idx, 0, -1):
            d = pts[i] - pts[i - 1]
            if float(np.hypot(d[0], d[1])) > 1e-12:
                heading = math.atan2(d[1], d[0])
                break
        return heading


def _interp_pose(t0: float, p0: Pose2, t1: float, p1: Pose2, t: float) -> Pose2:
    if t1 <= t0:
        return p0
    u = (t - t0) / (t1 - t0)
    yaw = p0.yaw + wrap_angle(p1.yaw - p0.yaw) * u
    return Pose2(p0.x + (p1.x - p0.x) * u, p0.y + (p1.y - p0.y) * u, yaw)


@dataclass(frozen=True)
class AgentTrack:
    id: str
    category: str
    length: float
    width: float
    poses: tuple[tuple[float, Pose2], ...]
    velocity: tuple[float, float] | None = None

    def pose_at(self, t: float) -> Pose2:
        """Pose at an absolute time.

        Linear position / shortest-arc yaw between samples, held before the
        first sample, constant-velocity extrapolation (yaw held) after the
        last one.
        """
        times = [pt for pt, _ in self.poses]
        if t <= times[0]:
            return self.poses[0][1]
        if t >= times[-1]:
            t_end, p_end = self.poses[-1]
            vx, vy = self._end_velocity()
            dt = t - t_end
            return Pose2(p_end.x + vx * dt, p_end.y + vy * dt, p_end.yaw)
        i = next(k for k in range(len(times) - 1) if times[k] <= t <= times[k + 1])
        return _interp_pose(times[i], self.poses[i][1], times[i + 1], self.poses[i + 1][1], t)

    def _end_velocity(self) -> tuple[float, float]:
        if self.velocity is not None:
            return self.velocity
        if len(self.poses) >= 2:
            (t0, p0), (t1, p1) = self.poses[-2], self.poses[-1]
            if t1 > t0:
                return ((p1.x - p0.x) / (t1 - t0), (p1.y - p0.y) / (t1 - t0))
        return (0.0, 0.0)


@dataclass(frozen=True)
class LaneCenterline:
    id: str
    polyline: tuple[tuple[float, float], ...]
    successors: tuple[str, ...] = ()
    left_neighbor: str | None = None
    right_neighbor: str | None = None
    signal_ids: tuple[str, ...] = ()
    width: float = DEFAULT_LANE_WIDTH

    def array(self) -> np.ndarray:
        return np.asarray(self.polyline, dtype=float)


@dataclass(frozen=True)
class DrivableArea:
    outer: tuple[tuple[tuple[float, float], ...], ...]
    holes: tuple[tuple[tuple[float, float], ...], ...] = ()


@dataclass(frozen=True)
class TrafficSignal:
    id: str
    stop_line: tuple[tuple[float, float], tuple[float, float]]
    lane_ids: tuple[str, ...] = ()
    states: tuple[tuple[float, float, str], ...] = ()

    def state_at(self, t: float) -> str:
        for start, end, state in self.states:
            if start <= t < end:
                return state
        return "unknown"


@dataclass(frozen=True)
class Scene:
    """Immutable, validated world snapshot around one key timestamp."""

    scene_id: str
    key_time: float
    ego_poses: tuple[tuple[float, Pose2], ...]
    agents: tuple[AgentTrack, ...] = ()
    lanes: tuple[LaneCenterline, ...] = ()
    drivable: DrivableArea = field(default_factory=lambda: DrivableArea(outer=()))
    signals: tuple[TrafficSignal, ...] = ()
    ego_length: float = DEFAULT_EGO_LENGTH
    ego_width: float = DEFAULT_EGO_WIDTH
    caption: str | None = None

    def ego_pose_at(self, t: float) -> Pose2:
        times = [pt for pt, _ in self.ego_poses]
        if t < times[0] - 1e-9 or t > times[-1] + 1e-9:
            raise SceneError(
                f"ego poses cover [{times[0]}, {times[-1]}], cannot interpolate at t={t}"
            )
        t = min(max(t, times[0]), times[-1])
        for i in range(len(times) - 1):
            if times[i] <= t <= times[i + 1]:
                return _interp_pose(times[i], self.ego_poses[i][1], times[i + 1], self.ego_poses[i + 1][1], t)
        return self.ego_poses[-1][1]

    def key_pose(self) -> Pose2:
        return self.ego_pose_at(self.key_time)

    def agent_by_id(self, agent_id: str) -> AgentTrack:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise KeyError(agent_id)

    def lane_by_id(self, lane_id: str) -> LaneCenterline:
        for lane in self.lanes:
            if lane.id == lane_id:
                return lane
        raise KeyError(lane_id)

    def signal_by_id(self, signal_id: str) -> TrafficSignal:
        for s in self.signals:
            if s.id == signal_id:
                return s
        raise KeyError(signal_id)


def to_ego_frame(scene: Scene, p: Pose2) -> Pose2:
    """World pose -> pose in the ego frame at the scene key timestamp."""
    e = scene.key_pose()
    c, s = math.cos(e.yaw), math.sin(e.yaw)
    dx, dy = p.x - e.x, p.y - e.y
    return Pose2(c * dx + s * dy, -s * dx + c * dy, wrap_angle(p.yaw - e.yaw))


def to_world_frame(scene: Scene, p: Pose2) -> Pose2:
    """Inverse of :func:`to_ego_frame`."""
    e = scene.key_pose()
    c, s = math.cos(e.yaw), math.sin(e.yaw)
    return Pose2(e.x + c * p.x - s * p.y, e.y + s * p.x + c * p.y, wrap_angle(p.yaw + e.yaw))


def ego_xy(scene: Scene, x: float, y: float) -> tuple[float, float]:
    """World point -> ego-frame point (position only)."""
    p = to_ego_frame(scene, Pose2(x, y, 0.0))
    return (p.x, p.y)


def expert_trajectory(
    scene: Scene, horizon: float = DEFAULT_HORIZON, period: float = DEFAULT_PERIOD
) -> Trajectory:
    """Resample the logged ego future at ``period`` into the ego frame."""
    n = round(horizon / period)
    last_covered = scene.ego_poses[-1][0]
    if scene.key_time + horizon > last_covered + 1e-9:
        raise SceneError(
            f"ego poses cover up to t={last_covered}, need {scene.key_time + horizon} "
            f"for a {horizon} s horizon"
        )
    waypoints = []
    for k in range(1, n + 1):
        t = scene.key_time + k * period
        ego = to_ego_frame(scene, scene.ego_pose_at(t))
        waypoints.append(Waypoint(k * period, ego.x, ego.y))
    return Trajectory(tuple(waypoints), period=period)


# --- JSON schema ---------------------------------------------------------


def _require(obj: dict, key: str, path: str):
    if key not in obj:
        raise SceneValidationError(f"{path}.{key}" if path else key, "missing required field")
    return obj[key]


def _check_unknown(obj: dict, allowed: set[str], path: str, strict: bool) -> None:
    if not strict:
        return
    for key in obj:
        if key not in allowed:
            raise SceneValidationError(f"{path}.{key}" if path else key, "unknown field")


def _point(v, path: str) -> tuple[float, float]:
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise SceneValidationError(path, "expected [x, y]")
    x, y = float(v[0]), float(v[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise SceneValidationError(path, "coordinates must be finite")
    return (x, y)


def _timed_poses(v, path: str) -> tuple[tuple[float, Pose2], ...]:
    if not isinstance(v, list) or not v:
        raise SceneValidationError(path, "expected a non-empty list of [t, x, y, yaw]")
    out = []
    prev = -math.inf
    for i, row in enumerate(v):
        if not isinstance(row, (list, tuple)) or len(row) != 4:
            raise SceneValidationError(f"{path}[{i}]", "expected [t, x, y, yaw]")
        t = float(row[0])
        if t <= prev:
            raise SceneValidationError(f"{path}[{i}]", "timestamps must be strictly increasing")
        prev = t
        try:
            out.append((t, Pose2(float(row[1]), float(row[2]), float(row[3]))))
        except ValueError as exc:
            raise SceneValidationError(f"{path}[{i}]", str(exc)) from exc
    return tuple(out)


def _ring(v, path: str) -> tuple[tuple[float, float], ...]:
    if not isinstance(v, list):
        raise SceneValidationError(path, "expected a list of points")
    pts = [_point(p, f"{path}[{i}]") for i, p in enumerate(v)]
    if len(pts) >= 2 and pts[0] == pts[-1]:
        pts = pts[:-1]
    dedup: list[tuple[float, float]] = []
    for p in pts:
        if not dedup or p != dedup[-1]:
            dedup.append(p)
    if len(set(dedup)) < 3:
        raise SceneValidationError(path, "ring needs at least 3 distinct vertices")
    return tuple(dedup)


def _parse_agent(obj: dict, path: str, strict: bool) -> AgentTrack:
    _check_unknown(obj, {"id", "category", "length", "width", "poses", "velocity"}, path, strict)
    length = float(_require(obj, "length", path))
    width = float(_require(obj, "width", path))
    if length <= 0 or width <= 0:
        raise SceneValidationError(f"{path}.length", "agent extents must be positive")
    velocity = obj.get("velocity")
    vel = None
    if velocity is not None:
        vel = _point(velocity, f"{path}.velocity")
    return AgentTrack(
        id=str(_require(obj, "id", path)),
        category=str(_require(obj, "category", path)),
        length=length,
        width=width,
        poses=_timed_poses(_require(obj, "poses", path), f"{path}.poses"),
        velocity=vel,
    )


def _parse_lane(obj: dict, path: str, strict: bool) -> LaneCenterline:
    allowed = {"id", "polyline", "successors", "left_neighbor", "right_neighbor", "signal_ids", "width"}
    _check_unknown(obj, allowed, path, strict)
    raw = _require(obj, "polyline", path)
    if not isinstance(raw, list) or len(raw) < 2:
        raise SceneValidationError(f"{path}.polyline", "expected at least 2 points")
    pts = [_point(p, f"{path}.polyline[{i}]") for i, p in enumerate(raw)]
    for i in range(len(pts) - 1):
        if pts[i] == pts[i + 1]:
            raise SceneValidationError(f"{path}.polyline[{i + 1}]", "consecutive points must be distinct")
    return LaneCenterline(
        id=str(_require(obj, "id", path)),
        polyline=tuple(pts),
        successors=tuple(str(s) for s in obj.get("successors", [])),
        left_neighbor=obj.get("left_neighbor"),
        right_neighbor=obj.get("right_neighbor"),
        signal_ids=tuple(str(s) for s in obj.get("signal_ids", [])),
        width=float(obj.get("width", DEFAULT_LANE_WIDTH)),
    )


def _parse_signal(obj: dict, path: str, strict: bool) -> TrafficSignal:
    _check_unknown(obj, {"id", "stop_line", "lane_ids", "states"}, path, strict)
    raw_line = _require(obj, "stop_line", path)
    if not isinstance(raw_line, list) or len(raw_line) != 2:
        raise SceneValidationError(f"{path}.stop_line", "expected two points")
    stop_line = (_point(raw_line[0], f"{path}.stop_line[0]"), _point(raw_line[1], f"{path}.stop_line[1]"))
    states = []
    prev_spans: list[tuple[float, float]] = []
    for i, row in enumerate(obj.get("states", [])):
        if not isinstance(row, (list, tuple)) or len(row) != 3 or row[2] not in SIGNAL_STATES:
            raise SceneValidationError(f"{path}.states[{i}]", "expected [start, end, red|yellow|green]")
        start, end = float(row[0]), float(row[1])
        if end <= start:
            raise SceneValidationError(f"{path}.states[{i}]", "interval end must exceed start")
        for s0, e0 in prev_spans:
            if start < e0 and s0 < end:
                raise SceneValidationError(f"{path}.states[{i}]", "state intervals overlap")
        prev_spans.append((start, end))
        states.append((start, end, str(row[2])))
    return TrafficSignal(
        id=str(_require(obj, "id", path)),
        stop_line=stop_line,
        lane_ids=tuple(str(s) for s in obj.get("lane_ids", [])),
        states=tuple(states),
    )


def scene_from_dict(doc: dict, strict: bool = True) -> Scene:
    if not isinstance(doc, dict):
        raise SceneParseError("top-level document must be an object")
    version = _require(doc, "schema_version", "")
    if version != SCHEMA_VERSION:
        raise SceneValidationError("schema_version", f"expected {SCHEMA_VERSION!r}, got {version!r}")
    allowed = {"schema_version", "scene_id", "key_time", "ego", "agents", "lanes", "drivable", "signals", "caption"}
    _check_unknown(doc, allowed, "", strict)

    ego = _require(doc, "ego", "")
    _check_unknown(ego, {"length", "width", "poses"}, "ego", strict)
    ego_poses = _timed_poses(_require(ego, "poses", "ego"), "ego.poses")
    if len(ego_poses) < 2:
        raise SceneValidationError("ego.poses", "need at least 2 samples")

    agents = tuple(
        _parse_agent(a, f"agents[{i}]", strict) for i, a in enumerate(doc.get("agents", []))
    )
    lanes = tuple(_parse_lane(l, f"lanes[{i}]", strict) for i, l in enumerate(doc.get("lanes", [])))
    signals = tuple(
        _parse_signal(s, f"signals[{i}]", strict) for i, s in enumerate(doc.get("signals", []))
    )

    drv = doc.get("drivable", {"outer": [], "holes": []})
    _check_unknown(drv, {"outer", "holes"}, "drivable", strict)
    drivable = DrivableArea(
        outer=tuple(_ring(r, f"drivable.outer[{i}]") for i, r in enumerate(drv.get("outer", []))),
        holes=tuple(_ring(r, f"drivable.holes[{i}]") for i, r in enumerate(drv.get("holes", []))),
    )

    lane_ids = {l.id for l in lanes}
    signal_ids = {s.id for s in signals}
    for i, lane in enumerate(lanes):
        for ref in (*lane.successors, lane.left_neighbor, lane.right_neighbor):
            if ref is not None and ref not in lane_ids:
                raise SceneValidationError(f"lanes[{i}]", f"unresolved lane reference {ref!r}")
        for ref in lane.signal_ids:
            if ref not in signal_ids:
                raise SceneValidationError(f"lanes[{i}].signal_ids", f"unresolved signal {ref!r}")
    for i, sig in enumerate(signals):
        for ref in sig.lane_ids:
            if ref not in lane_ids:
                raise SceneValidationError(f"signals[{i}].lane_ids", f"unresolved lane {ref!r}")

    return Scene(
        scene_id=str(_require(doc, "scene_id", "")),
        key_time=float(_require(doc, "key_time", "")),
        ego_poses=ego_poses,
        agents=agents,
        lanes=lanes,
        drivable=drivable,
        signals=signals,
        ego_length=float(ego.get("length", DEFAULT_EGO_LENGTH)),
        ego_width=float(ego.get("width", DEFAULT_EGO_WIDTH)),
        caption=doc.get("caption"),
    )


def load_scene(path, strict: bool = True) -> Scene:
    """Load and fully validate one scene file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SceneParseError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return scene_from_dict(doc, strict=strict)


def scene_to_dict(scene: Scene) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "scene_id": scene.scene_id,
        "key_time": scene.key_time,
        "ego": {
            "length": scene.ego_length,
            "width": scene.ego_width,
            "poses": [[t, p.x, p.y, p.yaw] for t, p in scene.ego_poses],
        },
        "agents": [
            {
                "id": a.id,
                "category": a.category,
                "length": a.length,
                "width": a.width,
                "poses": [[t, p.x, p.y, p.yaw] for t, p in a.poses],
                "velocity": list(a.velocity) if a.velocity is not None else None,
            }
            for a in scene.agents
        ],
        "lanes": [
            {
                "id": l.id,
                "polyline": [list(p) for p in l.polyline],
                "successors": list(l.successors),
                "left_neighbor": l.left_neighbor,
                "right_neighbor": l.right_neighbor,
                "signal_ids": list(l.signal_ids),
                "width": l.width,
            }
            for l in scene.lanes
        ],
        "drivable": {
            "outer": [[list(p) for p in ring] for ring in scene.drivable.outer],
            "holes": [[list(p) for p in ring] for ring in scene.drivable.holes],
        },
        "signals": [
            {
                "id": s.id,
                "stop_line": [list(s.stop_line[0]), list(s.stop_line[1])],
                "lane_ids": list(s.lane_ids),
                "states": [list(st) for st in s.states],
            }
            for s in scene.signals
        ],
        "caption": scene.caption,
    }


def save_scene(scene: Scene, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scene_to_dict(scene), fh, indent=1)
        fh.write("\n")


def with_caption(scene: Scene, caption: str) -> Scene:
    return replace(scene, caption=caption)
