import math

import numpy as np
import pytest

from cfdrive.checklist import (
    CounterfactualVerdict,
    ViolationKind,
    assign_lane,
    check_collision,
    check_drivable,
    check_red_light,
    detect_lane_change,
    run_checklist,
    substep_times,
)
from cfdrive.config import RuleConfig
from cfdrive.demo import left_turn_candidate
from cfdrive.maneuver import LaneBehavior
from cfdrive.scene import (
    AgentTrack,
    DrivableArea,
    LaneCenterline,
    Pose2,
    Scene,
    TrafficSignal,
    Trajectory,
    Waypoint,
)

from scenegen import (
    corridor_exit_oracle,
    dense_first_hits,
    random_collision_scene,
    random_corridor_scene,
)


def straight_traj(speed=4.0, n=6):
    return Trajectory(tuple(Waypoint(0.5 * k, speed * 0.5 * k, 0.0) for k in range(1, n + 1)))


def bare_scene(**kwargs) -> Scene:
    defaults = dict(
        scene_id="t",
        key_time=0.0,
        ego_poses=((0.0, Pose2(0, 0, 0)), (4.0, Pose2(0, 0, 0))),
    )
    defaults.update(kwargs)
    return Scene(**defaults)


def static_agent(agent_id, x, y, yaw=0.0, length=4.0, width=2.0):
    return AgentTrack(
        id=agent_id,
        category="vehicle.car",
        length=length,
        width=width,
        poses=((0.0, Pose2(x, y, yaw)), (4.0, Pose2(x, y, yaw))),
    )


class TestCheckCollision:
    def test_empty_agent_list(self):
        assert check_collision(bare_scene(), straight_traj()) == []

    def test_stationary_agent_on_path(self):
        # Ego at 4 m/s, front bumper 2.04 m ahead of center; the agent rear
        # sits at x=6, so contact is at t = (6 - 2.04) / 4 = 0.99 s and the
        # first overlapping sub-step is t=1.0.
        scene = bare_scene(agents=(static_agent("a", 7.0, 0.0, length=2.0),))
        violations = check_collision(scene, straight_traj(speed=4.0))
        assert len(violations) == 1
        v = violations[0]
        assert v.kind is ViolationKind.COLLISION
        assert v.culprit == "a"
        assert v.time == pytest.approx(1.0, abs=0.0501)

    def test_first_overlap_per_agent(self):
        scene = bare_scene(agents=(static_agent("a", 4.0, 0.0), static_agent("b", 8.0, 0.0)))
        violations = check_collision(scene, straight_traj(speed=4.0))
        assert [v.culprit for v in violations] == ["a", "b"]
        assert violations[0].time < violations[1].time

    def test_constant_velocity_extrapolation(self):
        # Track ends at t=1 while moving toward the path; the overlap only
        # happens in the extrapolated span.
        agent = AgentTrack(
            id="mover",
            category="vehicle.car",
            length=2.0,
            width=2.0,
            poses=((0.0, Pose2(10.0, -12.0, math.pi / 2)), (1.0, Pose2(10.0, -8.0, math.pi / 2))),
        )
        scene = bare_scene(agents=(agent,))
        violations = check_collision(scene, straight_traj(speed=6.0))
        assert violations and violations[0].time > 1.0

    def test_matches_dense_oracle_on_random_scenes(self):
        rng = np.random.default_rng(2024)
        config = RuleConfig()
        for i in range(60):
            scene, traj, _ = random_collision_scene(rng, f"fuzz-{i}")
            expected = dense_first_hits(scene, traj)
            got = {v.culprit: v.time for v in check_collision(scene, traj, config)}
            assert set(got) == set(expected), f"scene {i}: {got} vs {expected}"
            for agent_id, t_dense in expected.items():
                assert got[agent_id] >= t_dense - 1e-9
                assert got[agent_id] <= t_dense + config.dt + 1e-9


class TestCheckDrivable:
    def test_huge_square_no_violation(self):
        ring = ((-100.0, -100.0), (100.0, -100.0), (100.0, 100.0), (-100.0, 100.0))
        scene = bare_scene(drivable=DrivableArea(outer=(ring,)))
        assert check_drivable(scene, straight_traj()) == []

    def test_no_drivable_annotation_skips_check(self):
        assert check_drivable(bare_scene(), straight_traj()) == []

    def test_exit_reports_first_corner_out(self):
        ring = ((-5.0, -3.0), (6.0, -3.0), (6.0, 3.0), (-5.0, 3.0))
        scene = bare_scene(drivable=DrivableArea(outer=(ring,)))
        violations = check_drivable(scene, straight_traj(speed=4.0))
        assert len(violations) == 1
        v = violations[0]
        assert v.kind is ViolationKind.OUT_OF_DRIVABLE
        # Front corner (2.04 m ahead of center) crosses x=6 at t=(6-2.04)/4=0.99.
        assert v.time == pytest.approx(1.0, abs=0.051)

    def test_hole_is_off_limits(self):
        ring = ((-50.0, -50.0), (50.0, -50.0), (50.0, 50.0), (-50.0, 50.0))
        hole = ((5.0, -2.0), (9.0, -2.0), (9.0, 2.0), (5.0, 2.0))
        scene = bare_scene(drivable=DrivableArea(outer=(ring,), holes=(hole,)))
        violations = check_drivable(scene, straight_traj(speed=4.0))
        assert len(violations) == 1

    def test_matches_point_sampling_oracle_on_corridors(self):
        rng = np.random.default_rng(77)
        for i in range(1000):
            scene, traj, exits, (x_end, half_width) = random_corridor_scene(rng, f"cor-{i}")
            expected = corridor_exit_oracle(traj, x_end, half_width)
            got = check_drivable(scene, traj)
            assert bool(got) == (expected is not None) == exits, f"scene {i}"
            if got:
                assert abs(got[0].time - expected) <= 0.1 + 1e-9


class TestCheckRedLight:
    def _scene(self, states, lane_ids=("main",), stop_x=6.0):
        lane = LaneCenterline(id="main", polyline=((-5.0, 0.0), (30.0, 0.0)),
                              signal_ids=("sig",) if lane_ids else ())
        other = LaneCenterline(id="other", polyline=((-5.0, 50.0), (30.0, 50.0)))
        signal = TrafficSignal(
            id="sig",
            stop_line=((stop_x, -4.0), (stop_x, 4.0)),
            lane_ids=lane_ids,
            states=states,
        )
        return bare_scene(lanes=(lane, other), signals=(signal,))

    def test_green_at_crossing(self):
        scene = self._scene(states=((0.0, 10.0, "green"),))
        assert check_red_light(scene, straight_traj(speed=4.0)) == []

    def test_red_crossing_at_one_and_a_half_seconds(self):
        scene = self._scene(states=((0.0, 10.0, "red"),))
        violations = check_red_light(scene, straight_traj(speed=4.0))
        assert len(violations) == 1
        v = violations[0]
        assert v.kind is ViolationKind.RED_LIGHT
        assert v.culprit == "sig"
        assert v.time == pytest.approx(1.5, abs=1e-9)

    def test_stopping_short_of_the_line(self):
        # 4 m/s for ~1 s then hold at x=5, one meter before the stop line.
        traj = Trajectory(tuple(
            Waypoint(0.5 * k, min(5.0, 4.0 * 0.5 * k), 0.0) for k in range(1, 7)
        ))
        scene = self._scene(states=((0.0, 10.0, "red"),))
        assert check_red_light(scene, traj) == []

    def test_signal_for_other_lane_does_not_gate_ego(self):
        scene = self._scene(states=((0.0, 10.0, "red"),), lane_ids=("other",))
        assert check_red_light(scene, straight_traj(speed=4.0)) == []

    def test_permissive_when_no_lane_assignment(self):
        lane = LaneCenterline(id="far", polyline=((-5.0, 80.0), (30.0, 80.0)))
        signal = TrafficSignal(
            id="sig", stop_line=((6.0, -4.0), (6.0, 4.0)), lane_ids=("far",),
            states=((0.0, 10.0, "red"),),
        )
        scene = bare_scene(lanes=(lane,), signals=(signal,))
        violations = check_red_light(scene, straight_traj(speed=4.0))
        assert len(violations) == 1


class TestAssignLane:
    def test_single_lane_underfoot(self):
        scene = bare_scene(lanes=(LaneCenterline(id="a", polyline=((-5.0, 0.0), (20.0, 0.0))),))
        assert assign_lane(scene, (2.0, 0.3), 0.0) == "a"

    def test_beyond_lateral_threshold(self):
        scene = bare_scene(lanes=(LaneCenterline(id="a", polyline=((-5.0, 0.0), (20.0, 0.0))),))
        assert assign_lane(scene, (2.0, 5.0), 0.0) is None

    def test_heading_gate(self):
        scene = bare_scene(lanes=(LaneCenterline(id="a", polyline=((-5.0, 0.0), (20.0, 0.0))),))
        assert assign_lane(scene, (2.0, 0.0), math.radians(90.0)) is None

    def test_between_two_parallel_lanes(self):
        # Lanes at y=0 and y=3.5; a point at y=1.0 is 1.0 / 2.5 m away.
        lanes = (
            LaneCenterline(id="low", polyline=((-5.0, 0.0), (20.0, 0.0))),
            LaneCenterline(id="high", polyline=((-5.0, 3.5), (20.0, 3.5))),
        )
        scene = bare_scene(lanes=lanes)
        assert assign_lane(scene, (2.0, 1.0), 0.0) == "low"
        assert assign_lane(scene, (2.0, 2.5), 0.0) == "high"


class TestDetectLaneChange:
    def _scene(self):
        a = LaneCenterline(id="a", polyline=((-5.0, 0.0), (10.0, 0.0)),
                           successors=("b",), right_neighbor="r")
        b = LaneCenterline(id="b", polyline=((10.0, 0.0), (30.0, 0.0)))
        r = LaneCenterline(id="r", polyline=((-5.0, -3.5), (30.0, -3.5)), left_neighbor="a")
        return bare_scene(lanes=(a, b, r))

    def test_constant_id(self):
        assert detect_lane_change(["a", "a", "a"], self._scene()) is LaneBehavior.KEEPING

    def test_change_to_right_neighbor(self):
        assert detect_lane_change(["a", "a", "r"], self._scene()) is LaneBehavior.CHANGE_RIGHT

    def test_change_to_left_neighbor_via_back_reference(self):
        assert detect_lane_change(["r", "a"], self._scene()) is LaneBehavior.CHANGE_LEFT

    def test_successor_is_lane_keeping(self):
        assert detect_lane_change(["a", "a", "b"], self._scene()) is LaneBehavior.KEEPING

    def test_missing_assignments_are_unknown(self):
        assert detect_lane_change(["a", None, "a"], self._scene()) is LaneBehavior.UNKNOWN
        assert detect_lane_change([], self._scene()) is LaneBehavior.UNKNOWN


class TestRunChecklist:
    def test_expert_is_safe_in_corridor_fixture(self, corridor, corridor_expert):
        verdict = run_checklist(corridor, corridor_expert, trajectory_id="expert")
        assert verdict.safe
        assert verdict.violations == ()
        assert verdict.decision.decision_string() == "Moving Slowly, Lane Keeping, Go Straight"

    def test_left_turn_candidate_leaves_drivable(self, corridor):
        verdict = run_checklist(corridor, left_turn_candidate(), trajectory_id="cand")
        assert not verdict.safe
        assert {v.kind for v in verdict.violations} == {ViolationKind.OUT_OF_DRIVABLE}
        assert verdict.decision.decision_string() == "Moderate Speed, Left Turn"

    def test_stop_in_empty_scene_is_safe(self):
        stop = Trajectory(tuple(Waypoint(0.5 * k, 0.0, 0.0) for k in range(1, 7)))
        verdict = run_checklist(bare_scene(), stop, trajectory_id="stop")
        assert verdict.safe
        assert verdict.decision.decision_string() == "Stop, Go Straight"

    def test_safe_iff_no_violations_enforced(self, corridor_expert):
        from cfdrive.maneuver import classify_decision

        with pytest.raises(ValueError):
            CounterfactualVerdict(
                trajectory_id="x",
                decision=classify_decision(corridor_expert),
                safe=False,
                violations=(),
                lane_ids=(),
            )

    def test_verdict_round_trip(self, corridor):
        verdict = run_checklist(corridor, left_turn_candidate(), trajectory_id="cand")
        assert CounterfactualVerdict.from_dict(verdict.to_dict()) == verdict

    def test_categories(self, corridor, corridor_expert):
        safe = run_checklist(corridor, corridor_expert)
        unsafe = run_checklist(corridor, left_turn_candidate())
        assert safe.categories() == {"safety"}
        assert unsafe.categories() == {"drivable area"}


def rigid_transform_scene(scene: Scene, dx: float, dy: float, rot: float) -> Scene:
    c, s = math.cos(rot), math.sin(rot)

    def move(p: Pose2) -> Pose2:
        return Pose2(c * p.x - s * p.y + dx, s * p.x + c * p.y + dy, p.yaw + rot)

    def move_xy(pt):
        return (c * pt[0] - s * pt[1] + dx, s * pt[0] + c * pt[1] + dy)

    return Scene(
        scene_id=scene.scene_id,
        key_time=scene.key_time,
        ego_poses=tuple((t, move(p)) for t, p in scene.ego_poses),
        agents=tuple(
            AgentTrack(
                id=a.id, category=a.category, length=a.length, width=a.width,
                poses=tuple((t, move(p)) for t, p in a.poses),
                velocity=(
                    (c * a.velocity[0] - s * a.velocity[1], s * a.velocity[0] + c * a.velocity[1])
                    if a.velocity is not None else None
                ),
            )
            for a in scene.agents
        ),
        lanes=tuple(
            LaneCenterline(
                id=l.id, polyline=tuple(move_xy(p) for p in l.polyline),
                successors=l.successors, left_neighbor=l.left_neighbor,
                right_neighbor=l.right_neighbor, signal_ids=l.signal_ids, width=l.width,
            )
            for l in scene.lanes
        ),
        drivable=DrivableArea(
            outer=tuple(tuple(move_xy(p) for p in ring) for ring in scene.drivable.outer),
            holes=tuple(tuple(move_xy(p) for p in ring) for ring in scene.drivable.holes),
        ),
        signals=tuple(
            TrafficSignal(
                id=sg.id,
                stop_line=(move_xy(sg.stop_line[0]), move_xy(sg.stop_line[1])),
                lane_ids=sg.lane_ids, states=sg.states,
            )
            for sg in scene.signals
        ),
        ego_length=scene.ego_length,
        ego_width=scene.ego_width,
        caption=scene.caption,
    )


class TestChecklistInvariants:
    def test_rigid_world_invariance(self, corridor, corridor_expert):
        moved = rigid_transform_scene(corridor, 120.0, -55.0, 1.1)
        for traj in (corridor_expert, left_turn_candidate()):
            a = run_checklist(corridor, traj, trajectory_id="t")
            b = run_checklist(moved, traj, trajectory_id="t")
            assert a.safe == b.safe
            assert [v.kind for v in a.violations] == [v.kind for v in b.violations]
            assert [v.time for v in a.violations] == pytest.approx(
                [v.time for v in b.violations]
            )
            assert a.decision == b.decision
            assert a.lane_ids == b.lane_ids

    def test_safe_iff_violations_empty_fuzzed(self):
        rng = np.random.default_rng(5)
        for i in range(20):
            scene, traj, _ = random_collision_scene(rng, f"fz-{i}")
            verdict = run_checklist(scene, traj)
            assert verdict.safe == (len(verdict.violations) == 0)

    def test_shrinking_footprint_never_adds_collisions(self):
        rng = np.random.default_rng(6)
        for i in range(15):
            scene, traj, _ = random_collision_scene(rng, f"shrink-{i}")
            big = {v.culprit for v in check_collision(scene, traj)}
            import dataclasses

            smaller = dataclasses.replace(
                scene, ego_length=scene.ego_length * 0.6, ego_width=scene.ego_width * 0.6
            )
            small = {v.culprit for v in check_collision(smaller, traj)}
            assert small <= big

    def test_shrinking_footprint_never_adds_drivable_violations(self):
        # Convex corridors: corner containment is monotone in the box size there.
        rng = np.random.default_rng(8)
        import dataclasses

        for i in range(30):
            scene, traj, _exits, _ = random_corridor_scene(rng, f"mono-{i}")
            big = bool(check_drivable(scene, traj))
            smaller = dataclasses.replace(
                scene, ego_length=scene.ego_length * 0.5, ego_width=scene.ego_width * 0.5
            )
            small = bool(check_drivable(smaller, traj))
            assert not (small and not big)

    def test_violation_times_on_substep_grid(self, corridor, signal):
        config = RuleConfig()
        cases = [
            (corridor, left_turn_candidate()),
            (signal, straight_traj(speed=4.0)),
        ]
        for scene, traj in cases:
            grid = substep_times(traj.horizon, config.dt)
            verdict = run_checklist(scene, traj, config)
            for v in verdict.violations:
                assert 0.0 < v.time <= traj.horizon + 1e-9
                assert np.isclose(grid, v.time).any()
