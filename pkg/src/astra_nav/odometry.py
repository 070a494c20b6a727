"""Grid-correlation relative pose estimation, sensor fusion, and trajectory metrics.

The matcher builds a normalized cross-correlation volume between two
top-down grids over a small odd search window (7x7 cells by default) and
reads the relative translation off the argmax, sweeping a small set of
candidate rotations. Wheel, gyro, and grid-matching increments are fused
by weighted averaging with renormalization over the sources present.

Metrics follow the usual trajectory-evaluation triple:
  ATE  root-mean-square positional error, no alignment;
  RTE  mean relative translation error over 10 m sliding segments, in %;
  RRE  mean absolute relative heading error per segment, degrees per 10 m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import AstraError, GeometryMismatchError
from .geom import Pose2, PoseTrajectory, compose_se2, wrap_angle


class OdometryError(AstraError):
    pass


@dataclass
class SensorIncrement:
    """One fusion step: wheel (dx, dy, dtheta), gyro heading increment, optional
    grid-matching (dx, dy, dtheta); dt in seconds."""

    dt: float
    wheel: tuple[float, float, float] | None = None
    imu_dtheta: float | None = None
    vision: tuple[float, float, float] | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise OdometryError("increment dt must be positive")


@dataclass
class FusionWeights:
    wheel_trans: float = 0.5
    vision_trans: float = 0.5
    wheel_rot: float = 0.2
    imu_rot: float = 0.6
    vision_rot: float = 0.2

    def __post_init__(self):
        for name in ("wheel_trans", "vision_trans", "wheel_rot", "imu_rot", "vision_rot"):
            if getattr(self, name) < 0:
                raise OdometryError(f"fusion weight {name} must be >= 0")


@dataclass
class CorrelationVolume:
    """scores[sy + c, sx + c] holds the match quality for cell shift (sx, sy),
    where c = window // 2 is the zero-shift center."""

    scores: np.ndarray
    resolution: float

    @property
    def window(self) -> int:
        return self.scores.shape[0]

    def best_shift(self) -> tuple[int, int]:
        """Argmax cell shift (sx, sy); ties resolve toward the center, then row-major."""
        c = self.window // 2
        best = None
        for sy in range(-c, c + 1):
            for sx in range(-c, c + 1):
                score = self.scores[sy + c, sx + c]
                key = (-score, sx * sx + sy * sy, sy, sx)
                if best is None or key < best[0]:
                    best = (key, (sx, sy))
        return best[1]


def _grid_values(grid) -> np.ndarray:
    values = grid.values if hasattr(grid, "values") else np.asarray(grid)
    return np.asarray(values, dtype=float)


def _ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Normalized cross-correlation; 0 when either patch has zero variance."""
    da = a - a.mean()
    db = b - b.mean()
    denom = math.sqrt(float((da * da).sum()) * float((db * db).sum()))
    if denom == 0.0:
        return 0.0
    return float((da * db).sum()) / denom


def correlation_volume(prev, curr, window: int = 7) -> CorrelationVolume:
    """Correlate curr against prev shifted over all cell offsets in the window.

    score(sx, sy) compares curr(p) with prev(p - (sx, sy)) over the valid
    overlap, so content that moved by +s cells peaks at offset s.
    """
    a = _grid_values(prev)
    b = _grid_values(curr)
    if a.shape != b.shape:
        raise GeometryMismatchError("grids must share shape")
    res_a = getattr(prev, "resolution", None)
    res_b = getattr(curr, "resolution", None)
    if res_a is not None and res_b is not None and res_a != res_b:
        raise GeometryMismatchError("grids must share resolution")
    if window % 2 == 0 or window < 1:
        raise OdometryError("search window must be an odd positive integer")
    h, w = a.shape
    if window > min(h, w):
        raise OdometryError("search window exceeds grid size")
    c = window // 2
    scores = np.zeros((window, window))
    for sy in range(-c, c + 1):
        for sx in range(-c, c + 1):
            ys, ye = max(0, sy), h + min(0, sy)
            xs, xe = max(0, sx), w + min(0, sx)
            cur = b[ys:ye, xs:xe]
            prv = a[ys - sy : ye - sy, xs - sx : xe - sx]
            scores[sy + c, sx + c] = _ncc(cur, prv)
    return CorrelationVolume(scores, res_a if res_a is not None else 1.0)


def rotate_grid(grid, angle: float):
    """Rotate grid content counter-clockwise about the grid center (nearest neighbor)."""
    values = _grid_values(grid)
    h, w = values.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    ca, sa = math.cos(-angle), math.sin(-angle)
    src_x = ca * (xs - cx) - sa * (ys - cy) + cx
    src_y = sa * (xs - cx) + ca * (ys - cy) + cy
    sx = np.rint(src_x).astype(int)
    sy = np.rint(src_y).astype(int)
    valid = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
    out = np.zeros_like(values)
    out[valid] = values[sy[valid], sx[valid]]
    return out


_DEFAULT_ANGLES = tuple(np.round(np.arange(-0.2, 0.2001, 0.05), 10))


def grid_match(prev, curr, window: int = 7, angle_set=_DEFAULT_ANGLES) -> tuple[float, float, float]:
    """Relative (dx, dy, dtheta) between two grids: argmax of the correlation
    volume over a rotation sweep; ties prefer the smallest |angle|, then the
    center-closest shift."""
    if not len(angle_set):
        raise OdometryError("angle_set must be nonempty")
    a = _grid_values(prev)
    res = getattr(prev, "resolution", 1.0)
    best = None
    for angle in sorted(angle_set, key=lambda x: (abs(x), x)):
        derot = rotate_grid(curr, -angle)
        vol = correlation_volume(a, derot, window)
        sx, sy = vol.best_shift()
        score = vol.scores[sy + vol.window // 2, sx + vol.window // 2]
        key = (-score, abs(angle), angle, sx * sx + sy * sy, sy, sx)
        if best is None or key < best[0]:
            best = (key, (sx * res, sy * res, float(angle)))
    return best[1]


def fuse_increment(
    inc: SensorIncrement, weights: FusionWeights | None = None
) -> tuple[float, float, float]:
    """Weighted mean of the available sources; absent sources drop out and the
    remaining weights renormalize."""
    w = weights or FusionWeights()
    trans_sources = []
    if inc.wheel is not None:
        trans_sources.append((w.wheel_trans, inc.wheel[0], inc.wheel[1]))
    if inc.vision is not None:
        trans_sources.append((w.vision_trans, inc.vision[0], inc.vision[1]))
    rot_sources = []
    if inc.wheel is not None:
        rot_sources.append((w.wheel_rot, inc.wheel[2]))
    if inc.imu_dtheta is not None:
        rot_sources.append((w.imu_rot, inc.imu_dtheta))
    if inc.vision is not None:
        rot_sources.append((w.vision_rot, inc.vision[2]))
    if not trans_sources or not rot_sources:
        raise OdometryError("increment carries no usable source")
    tw = sum(s[0] for s in trans_sources)
    rw = sum(s[0] for s in rot_sources)
    if tw <= 0 or rw <= 0:
        raise OdometryError("active fusion weights sum to zero")
    dx = sum(s[0] * s[1] for s in trans_sources) / tw
    dy = sum(s[0] * s[2] for s in trans_sources) / tw
    dth = sum(s[0] * s[1] for s in rot_sources) / rw
    return (dx, dy, dth)


def dead_reckon(
    increments: list[SensorIncrement], start: Pose2, weights: FusionWeights | None = None
) -> PoseTrajectory:
    """Fold fused increments through pose composition from the start pose."""
    poses = [start]
    for inc in increments:
        dx, dy, dth = fuse_increment(inc, weights)
        poses.append(compose_se2(poses[-1], Pose2(dx, dy, dth)))
    return PoseTrajectory(tuple(poses))


def _segment_ends(cum: np.ndarray, length: float) -> list[tuple[int, int]]:
    """(start, end) index pairs where the gt arc length first reaches start+length."""
    pairs = []
    n = len(cum)
    j = 0
    for i in range(n):
        target = cum[i] + length
        while j < n and cum[j] < target:
            j += 1
        if j >= n:
            break
        pairs.append((i, j))
    return pairs


def traj_metrics(
    est: PoseTrajectory, gt: PoseTrajectory, segment_length: float = 10.0
) -> dict[str, float]:
    """ATE (m), RTE (%), RRE (deg / 10 m) between an estimate and ground truth.

    Relative errors compare per-segment increments expressed in the segment's
    start frame, so a rigid start offset scores zero. Trajectories shorter
    than the segment length fall back to a single whole-span segment.
    """
    if len(est) != len(gt):
        raise OdometryError(f"trajectory lengths differ: {len(est)} vs {len(gt)}")
    if len(gt) < 2:
        raise OdometryError("trajectories need at least two poses")
    e = est.as_array()
    g = gt.as_array()
    steps = np.hypot(*np.diff(g[:, :2], axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    if cum[-1] <= 0:
        raise OdometryError("ground-truth path length must be positive")
    ate = float(np.sqrt(np.mean(np.sum((e[:, :2] - g[:, :2]) ** 2, axis=1))))
    pairs = _segment_ends(cum, segment_length)
    if not pairs:
        pairs = [(0, len(gt) - 1)]
    rte_terms = []
    rre_terms = []
    for i, j in pairs:
        seg_len = cum[j] - cum[i]
        rel_g = _relative_xy(g, i, j)
        rel_e = _relative_xy(e, i, j)
        rte_terms.append(np.linalg.norm(rel_e - rel_g) / seg_len * 100.0)
        dth = abs(wrap_angle((e[j, 2] - e[i, 2]) - (g[j, 2] - g[i, 2])))
        rre_terms.append(math.degrees(dth) * (10.0 / seg_len))
    return {
        "rte_percent": float(np.mean(rte_terms)),
        "rre_deg_per_10m": float(np.mean(rre_terms)),
        "ate_m": ate,
    }


def _relative_xy(arr: np.ndarray, i: int, j: int) -> np.ndarray:
    """Translation from pose i to pose j, expressed in pose i's frame."""
    c, s = math.cos(arr[i, 2]), math.sin(arr[i, 2])
    dx, dy = arr[j, 0] - arr[i, 0], arr[j, 1] - arr[i, 1]
    return np.array([c * dx + s * dy, -s * dx + c * dy])
