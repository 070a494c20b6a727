import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from astra_nav.geom import (
    ActionTrajectory,
    Pose2,
    PoseTrajectory,
    actions_to_poses,
    compose_se2,
    poses_to_actions,
    wrap_angle,
)

finite_coord = st.floats(-50.0, 50.0, allow_nan=False, allow_infinity=False)
finite_angle = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)
poses = st.builds(Pose2, finite_coord, finite_coord, finite_angle)


def test_compose_identity():
    assert compose_se2(Pose2(), Pose2(1, 2, 0.3)) == Pose2(1, 2, 0.3)


def test_compose_quarter_turn():
    out = compose_se2(Pose2(0, 0, math.pi / 2), Pose2(1, 0, 0))
    assert out.x == pytest.approx(0.0, abs=1e-12)
    assert out.y == pytest.approx(1.0, abs=1e-12)
    assert out.theta == pytest.approx(math.pi / 2)


def test_compose_rotation_by_hand():
    # rotating (sqrt(2), 0) by pi/4 gives (1, 1)
    out = compose_se2(Pose2(1, 1, math.pi / 4), Pose2(math.sqrt(2), 0, math.pi / 4))
    assert out.x == pytest.approx(2.0, abs=1e-12)
    assert out.y == pytest.approx(2.0, abs=1e-12)
    assert out.theta == pytest.approx(math.pi / 2)


def test_actions_to_poses_zero_actions():
    start = Pose2(3.0, -1.0, 0.7)
    traj = ActionTrajectory(np.zeros((5, 3)))
    out = actions_to_poses(traj, start)
    assert len(out) == 6
    assert out[0] is start
    for p in out.poses:
        assert p == start


def test_actions_to_poses_translation_only():
    out = actions_to_poses(ActionTrajectory([[1, 0, 0], [1, 0, 0]]), Pose2())
    assert out.to_jsonable() == [[0, 0, 0], [1, 0, 0], [2, 0, 0]]


def test_actions_to_poses_turn_then_go():
    out = actions_to_poses(ActionTrajectory([[1, 0, math.pi / 2], [1, 0, 0]]), Pose2())
    last = out[-1]
    assert last.x == pytest.approx(1.0, abs=1e-12)
    assert last.y == pytest.approx(1.0, abs=1e-12)
    assert last.theta == pytest.approx(math.pi / 2)


def test_poses_to_actions_single_pose_is_empty():
    assert len(poses_to_actions(PoseTrajectory((Pose2(1, 2, 3),)))) == 0


def test_poses_to_actions_unit_step():
    out = poses_to_actions(PoseTrajectory((Pose2(), Pose2(1, 0, 0))))
    np.testing.assert_allclose(out.steps, [[1, 0, 0]])


def test_round_trip_random_path():
    rng = np.random.default_rng(7)
    pts = [Pose2(0, 0, 0)]
    for _ in range(9):
        pts.append(
            Pose2(rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-math.pi, math.pi))
        )
    original = PoseTrajectory(tuple(pts))
    rebuilt = actions_to_poses(poses_to_actions(original), original[0])
    np.testing.assert_allclose(rebuilt.as_array(), original.as_array(), atol=1e-9)


@given(st.lists(poses, min_size=1, max_size=12))
@settings(max_examples=200, deadline=None)
def test_round_trip_property(pose_list):
    traj = PoseTrajectory(tuple(pose_list))
    rebuilt = actions_to_poses(poses_to_actions(traj), traj[0])
    np.testing.assert_allclose(rebuilt.as_array(), traj.as_array(), atol=1e-9)


def test_associativity_on_random_triples():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        a, b, c = (
            Pose2(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-math.pi, math.pi))
            for _ in range(3)
        )
        left = compose_se2(compose_se2(a, b), c)
        right = compose_se2(a, compose_se2(b, c))
        assert abs(left.x - right.x) < 1e-12
        assert abs(left.y - right.y) < 1e-12
        assert abs(wrap_angle(left.theta - right.theta)) < 1e-12


def test_theta_wrap_quarter_turns():
    for k in range(17):
        pose = Pose2()
        for _ in range(k):
            pose = compose_se2(pose, Pose2(0, 0, math.pi / 2))
        assert -math.pi < pose.theta <= math.pi


def test_wrap_angle_boundary():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(0.0) == 0.0


def test_action_trajectory_rejects_nan():
    with pytest.raises(ValueError):
        ActionTrajectory([[np.nan, 0, 0]])


def test_json_round_trip():
    traj = ActionTrajectory([[0.1, -0.2, 0.3], [0.0, 0.5, -0.1]])
    assert ActionTrajectory.from_jsonable(traj.to_jsonable()) == traj
    pt = PoseTrajectory((Pose2(1, 2, 0.4), Pose2(2, 2, -0.1)))
    assert PoseTrajectory.from_jsonable(pt.to_jsonable()).as_array() == pytest.approx(
        pt.as_array()
    )
