"""Planar (SE2) pose algebra and trajectory conversions.

An action trajectory is a sequence of relative increments
(dx_k, dy_k, dtheta_k); the matching pose trajectory is obtained by the
recurrence

    [x_k]   [x_{k-1}]   [cos th_{k-1}  -sin th_{k-1}] [dx_k]
    [y_k] = [y_{k-1}] + [sin th_{k-1}   cos th_{k-1}] [dy_k]
    th_k  = th_{k-1} + dtheta_k

Convention: x forward, y left, theta counter-clockwise, and headings are
wrapped to (-pi, pi] after every composition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the interval (-pi, pi]."""
    w = theta % _TWO_PI  # [0, 2*pi)
    return w - _TWO_PI if w > math.pi else w


@dataclass(frozen=True)
class Pose2:
    """A planar pose. theta is stored wrapped to (-pi, pi]."""

    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def inverse(self) -> "Pose2":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(-c * self.x - s * self.y, s * self.x - c * self.y, -self.theta)

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)


def compose_se2(a: Pose2, b: Pose2) -> Pose2:
    """Compose two planar poses: rotate b's translation by a.theta, add, sum headings."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.theta + b.theta,
    )


def relative_pose(a: Pose2, b: Pose2) -> Pose2:
    """b expressed in the frame of a, i.e. a^-1 (+) b."""
    return compose_se2(a.inverse(), b)


@dataclass(frozen=True)
class ActionTrajectory:
    """Ordered relative increments, stored as an (n, 3) float array."""

    steps: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        arr = np.asarray(self.steps, dtype=float).reshape(-1, 3)
        if arr.size and not np.isfinite(arr).all():
            raise ValueError("action trajectory contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "steps", arr)

    def __len__(self) -> int:
        return self.steps.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, ActionTrajectory) and np.array_equal(self.steps, other.steps)

    def to_jsonable(self) -> list[list[float]]:
        return [[float(v) for v in row] for row in self.steps]

    @classmethod
    def from_jsonable(cls, data) -> "ActionTrajectory":
        return cls(np.asarray(data, dtype=float).reshape(-1, 3))


@dataclass(frozen=True)
class PoseTrajectory:
    """Ordered poses, length n+1 for n actions; poses[0] is the start pose."""

    poses: tuple[Pose2, ...]

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, i):
        return self.poses[i]

    def as_array(self) -> np.ndarray:
        """(n+1, 3) array of [x, y, theta] rows."""
        return np.array([[p.x, p.y, p.theta] for p in self.poses]).reshape(-1, 3)

    def path_length(self) -> float:
        xy = self.as_array()[:, :2]
        if len(xy) < 2:
            return 0.0
        return float(np.sum(np.hypot(*np.diff(xy, axis=0).T)))

    def to_jsonable(self) -> list[list[float]]:
        return [[p.x, p.y, p.theta] for p in self.poses]

    @classmethod
    def from_jsonable(cls, data) -> "PoseTrajectory":
        return cls(tuple(Pose2(*row) for row in data))


def actions_to_poses(traj: ActionTrajectory, start: Pose2) -> PoseTrajectory:
    """Integrate relative increments into world-frame poses; poses[0] == start."""
    poses = [start]
    for dx, dy, dth in traj.steps:
        poses.append(compose_se2(poses[-1], Pose2(dx, dy, dth)))
    return PoseTrajectory(tuple(poses))


def poses_to_actions(poses: PoseTrajectory) -> ActionTrajectory:
    """Invert actions_to_poses: per-step increments in the previous pose's frame."""
    if len(poses) == 0:
        raise ValueError("pose trajectory must contain at least the start pose")
    steps = np.empty((len(poses) - 1, 3))
    for k in range(1, len(poses)):
        rel = relative_pose(poses[k - 1], poses[k])
        steps[k - 1] = (rel.x, rel.y, rel.theta)
    return ActionTrajectory(steps)
