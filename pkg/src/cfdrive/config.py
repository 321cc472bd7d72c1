"""Tunable thresholds for rule checks and maneuver labeling."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields


@dataclass(frozen=True)
class RuleConfig:
    """Checklist and labeling thresholds.

    The label thresholds are conventions, not dataset ground truth: a
    trajectory is a Stop below ``stop_displacement`` of travelled path (or a
    mean speed under ``stop_speed``), speed classes split at ``speed_slow`` /
    ``speed_moderate`` m/s, accelerating/decelerating needs an end-to-start
    speed delta above ``accel_delta``, and the lateral classes split at
    ``straight_max`` / ``uturn_min`` of net heading change.
    """

    # Rule-check discretization and gates
    dt: float = 0.1
    lane_max_lateral: float = 3.5
    lane_max_heading: float = math.radians(45.0)
    close_radius: float = 10.0
    close_window: float = 3.0

    # Maneuver labeling thresholds
    stop_displacement: float = 1.0
    stop_speed: float = 0.5
    speed_slow: float = 4.0
    speed_moderate: float = 10.0
    accel_delta: float = 2.0
    straight_max: float = math.radians(15.0)
    uturn_min: float = math.radians(120.0)

    def __post_init__(self) -> None:
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ValueError(f"{f.name} must be positive")

    def validate_for_period(self, period: float) -> None:
        if self.dt > period + 1e-12:
            raise ValueError(f"sub-step dt={self.dt} must not exceed trajectory period={period}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, doc: dict) -> "RuleConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown rule-config fields: {sorted(unknown)}")
        return cls(**doc)


def load_rule_config(path) -> RuleConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return RuleConfig.from_dict(json.load(fh))
