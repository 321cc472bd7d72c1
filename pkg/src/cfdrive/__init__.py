"""Counterfactual driving-scene toolkit.

Simulates candidate ego trajectories against annotated scenes, applies a
rule-based checklist (collision / drivable area / red light), extracts
attention objects, assembles prompts and QA pairs, and evaluates planner and
QA outputs with open-loop and counterfactual metrics.
"""

from .checklist import CounterfactualVerdict, RuleConfig, Violation, ViolationKind, run_checklist
from .maneuver import HighLevelDecision, ManeuverLibrary, classify_decision, cluster_trajectories
from .promptqa import QAItem, parse_trajectory, serialize_trajectory
from .scene import Pose2, Scene, Trajectory, Waypoint, expert_trajectory, load_scene

__all__ = [
    "CounterfactualVerdict",
    "HighLevelDecision",
    "ManeuverLibrary",
    "Pose2",
    "QAItem",
    "RuleConfig",
    "Scene",
    "Trajectory",
    "Violation",
    "ViolationKind",
    "Waypoint",
    "classify_decision",
    "cluster_trajectories",
    "expert_trajectory",
    "load_scene",
    "parse_trajectory",
    "run_checklist",
    "serialize_trajectory",
]
