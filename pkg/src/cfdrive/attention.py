"""Close-object extraction and the lane-rooted attention tree.

An object is close when its center comes within ``close_radius`` of the
matching-time trajectory position inside the ``close_window``. Close objects
are grouped under the lane they are assigned to; the tree renders in the
fixed "|--- " text layout consumed by prompts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .checklist import assign_lane, substep_times, _ego_lane_arrays, _ego_states
from .config import RuleConfig
from .scene import Scene, Trajectory, to_ego_frame


@dataclass(frozen=True)
class CloseObject:
    agent_id: str
    distance: float
    time: float


@dataclass(frozen=True)
class TreeChild:
    agent_id: str
    category: str
    point: tuple[float, float]


@dataclass(frozen=True)
class LaneGroup:
    lane_id: str
    samples: tuple[tuple[float, float], ...]
    children: tuple[TreeChild, ...]


@dataclass(frozen=True)
class AttentionTree:
    lanes: tuple[LaneGroup, ...]
    orphans: tuple[TreeChild, ...]


def close_objects(scene: Scene, traj: Trajectory, config: RuleConfig | None = None) -> list[CloseObject]:
    """Agents whose minimum distance to the trajectory stays under the radius.

    Distances pair the agent center with the trajectory position at the same
    instant, swept over the sub-step grid; results sort by ascending
    distance.
    """
    config = config or RuleConfig()
    window = min(config.close_window, traj.horizon)
    times = substep_times(window, config.dt)
    centers, _ = _ego_states(traj, times)

    out = []
    for agent in scene.agents:
        best_d = math.inf
        best_t = 0.0
        for i, t in enumerate(times):
            pose = to_ego_frame(scene, agent.pose_at(scene.key_time + float(t)))
            d = math.hypot(pose.x - centers[i, 0], pose.y - centers[i, 1])
            if d < best_d:
                best_d = d
                best_t = float(t)
        if best_d < config.close_radius:
            out.append(CloseObject(agent.id, best_d, best_t))
    out.sort(key=lambda c: (c.distance, c.agent_id))
    return out


def sample_polyline(line: np.ndarray, n: int = 4) -> tuple[tuple[float, float], ...]:
    """n points at equal arclength spacing along a polyline (endpoints included)."""
    line = np.asarray(line, dtype=float)
    seg = np.linalg.norm(np.diff(line, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0:
        return tuple((float(line[0, 0]), float(line[0, 1])) for _ in range(n))
    targets = np.linspace(0.0, total, n)
    xs = np.interp(targets, cum, line[:, 0])
    ys = np.interp(targets, cum, line[:, 1])
    return tuple((float(x), float(y)) for x, y in zip(xs, ys))


def build_attention_tree(
    scene: Scene, close: list[CloseObject], config: RuleConfig | None = None
) -> AttentionTree:
    """Attach each close agent to its assigned lane; unassigned agents become orphans.

    Lanes appear in the order their first (closest) object arrives; children
    keep the ascending-distance order of the close list.
    """
    config = config or RuleConfig()
    lane_lines = _ego_lane_arrays(scene)

    lane_order: list[str] = []
    grouped: dict[str, list[TreeChild]] = {}
    orphans: list[TreeChild] = []

    for c in close:
        agent = scene.agent_by_id(c.agent_id)
        pose = to_ego_frame(scene, agent.pose_at(scene.key_time))
        child = TreeChild(agent.id, agent.category, (pose.x, pose.y))
        lane_id = assign_lane(scene, (pose.x, pose.y), pose.yaw, config)
        if lane_id is None:
            orphans.append(child)
        else:
            if lane_id not in grouped:
                grouped[lane_id] = []
                lane_order.append(lane_id)
            grouped[lane_id].append(child)

    lanes = tuple(
        LaneGroup(lane_id, sample_polyline(lane_lines[lane_id]), tuple(grouped[lane_id]))
        for lane_id in lane_order
    )
    return AttentionTree(lanes=lanes, orphans=tuple(orphans))


def _fmt1(v: float) -> str:
    r = round(v, 1) + 0.0  # kill negative zero
    return f"{r:+.1f}"


def format_point(p: tuple[float, float]) -> str:
    return f"({_fmt1(p[0])}, {_fmt1(p[1])})"


def render_attention_tree(tree: AttentionTree) -> str:
    """Fixed-text tree: lane lines with 4 samples, children indented, orphans last."""
    lines = []
    for lane in tree.lanes:
        samples = ", ".join(format_point(p) for p in lane.samples)
        lines.append(f"|--- {lane.lane_id} [{samples}]")
        for child in lane.children:
            lines.append(f"|   |--- {child.category} at {format_point(child.point)}")
    for child in tree.orphans:
        lines.append(f"|--- {child.category} at {format_point(child.point)}")
    return "\n".join(lines)
