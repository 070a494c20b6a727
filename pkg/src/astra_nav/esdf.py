"""Occupancy grids, exact Euclidean distance transforms, and masked signed fields.

Grid geometry convention (frozen, tested): a 2D grid stores values[row, col]
with the center of cell (row r, col c) at world point

    (origin_x + c * resolution, origin_y + r * resolution)

so world x maps to columns and world y to rows. Bilinear sampling uses the
corner layout f(u, v) = f00*(1-u)(1-v) + f10*u(1-v) + f01*(1-u)v + f11*u*v
where u, v are the fractional offsets inside the cell square whose low
corner is (ix, iy), f10 is the +x neighbor and f01 the +y neighbor.

The signed field is positive on free cells (distance to the nearest
occupied cell) and negative on occupied cells (minus the distance to the
nearest free cell), so occupied cells sit at or below -resolution. When a
grid has no cell of the queried class, every distance is capped at the
grid diagonal resolution*hypot(width, height).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import AstraError, GeometryMismatchError
from .geom import PoseTrajectory

log = logging.getLogger(__name__)

_NO_TARGET = 1.0e7  # rows/cols placeholder well above any real grid extent


def _check_geometry(values: np.ndarray, resolution: float, ndim: int):
    if values.ndim != ndim or min(values.shape) < 1:
        raise ValueError(f"grid values must be {ndim}-D with all dims >= 1")
    if not resolution > 0:
        raise ValueError("resolution must be positive")


@dataclass
class OccupancyGrid:
    """3D occupancy, values[z, row, col] with True marking occupied voxels."""

    values: np.ndarray
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=bool)
        _check_geometry(self.values, self.resolution, 3)
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def depth(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass
class BinaryMap2D:
    """2D occupancy, values[row, col] with True marking occupied cells."""

    values: np.ndarray
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=bool)
        _check_geometry(self.values, self.resolution, 2)
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class EsdfMap:
    """Signed distance per cell, meters; geometry as BinaryMap2D."""

    values: np.ndarray
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        _check_geometry(self.values, self.resolution, 2)
        self.origin = (float(self.origin[0]), float(self.origin[1]))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class TrajMask:
    """Boolean corridor mask around a reference trajectory; geometry as BinaryMap2D."""

    values: np.ndarray
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=bool)
        _check_geometry(self.values, self.resolution, 2)
        self.origin = (float(self.origin[0]), float(self.origin[1]))


def same_geometry(a, b) -> bool:
    return (
        a.values.shape[-2:] == b.values.shape[-2:]
        and a.resolution == b.resolution
        and a.origin == b.origin
    )


def compress_grid(grid: OccupancyGrid) -> BinaryMap2D:
    """Flatten a 3D grid to 2D: a cell is occupied iff any voxel in its column is."""
    return BinaryMap2D(grid.values.any(axis=0), grid.resolution, grid.origin)


def _nearest_along_rows(target: np.ndarray) -> np.ndarray:
    """Per column, row distance (in cells) to the nearest True in that column."""
    h, w = target.shape
    dist = np.empty((h, w))
    run = np.full(w, _NO_TARGET)
    for r in range(h):
        run = np.where(target[r], 0.0, run + 1.0)
        dist[r] = run
    run = np.full(w, _NO_TARGET)
    for r in range(h - 1, -1, -1):
        run = np.where(target[r], 0.0, run + 1.0)
        np.minimum(dist[r], run, out=dist[r])
    return dist


def _envelope_1d(f: np.ndarray) -> np.ndarray:
    """1D squared-distance transform d[i] = min_j f[j] + (i-j)^2.

    Lower envelope of parabolas; exact for integer-valued f.
    """
    n = f.shape[0]
    d = np.empty(n)
    v = np.zeros(n, dtype=np.intp)
    z = np.empty(n + 1)
    z[0], z[1] = -np.inf, np.inf
    k = 0
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) ** 2 + f[v[k]]
    return d


def edt_squared(map2d: BinaryMap2D, target: str = "occupied") -> np.ndarray:
    """Exact squared cell distance from every cell to the nearest target-class cell.

    Results are exact integers (as int64). If the grid has no cell of the
    target class, every entry is the squared diagonal width^2 + height^2.
    """
    if target not in ("occupied", "free"):
        raise ValueError("target must be 'occupied' or 'free'")
    mask = map2d.values if target == "occupied" else ~map2d.values
    h, w = mask.shape
    if not mask.any():
        return np.full((h, w), w * w + h * h, dtype=np.int64)
    col_dist = _nearest_along_rows(mask)
    sq = col_dist * col_dist
    out = np.empty((h, w))
    for r in range(h):
        out[r] = _envelope_1d(sq[r])
    return out.astype(np.int64)


def edt(map2d: BinaryMap2D, target: str = "occupied") -> np.ndarray:
    """Exact Euclidean distance (meters) from every cell to the nearest target cell."""
    return np.sqrt(edt_squared(map2d, target).astype(float)) * map2d.resolution


def distance_cap(map2d) -> float:
    """Cap used when a class is absent: the grid diagonal in meters."""
    h, w = map2d.values.shape[-2:]
    return float(np.hypot(w, h) * map2d.resolution)


def signed_esdf(map2d: BinaryMap2D) -> EsdfMap:
    """Signed field: +distance-to-occupied on free cells, -distance-to-free on occupied."""
    d_occ = edt(map2d, "occupied")
    d_free = edt(map2d, "free")
    values = np.where(map2d.values, -d_free, d_occ)
    return EsdfMap(values, map2d.resolution, map2d.origin)


def _cell_centers(shape: tuple[int, int], resolution: float, origin) -> np.ndarray:
    h, w = shape
    xs = origin[0] + np.arange(w) * resolution
    ys = origin[1] + np.arange(h) * resolution
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def make_mask(gt_poses: PoseTrajectory, geometry, dilation_radius: float) -> TrajMask:
    """Mark every cell whose center lies within dilation_radius of the trajectory polyline."""
    if dilation_radius < 0:
        raise ValueError("dilation radius must be >= 0")
    shape = geometry.values.shape[-2:]
    res, origin = geometry.resolution, geometry.origin
    pts = np.asarray([[p.x, p.y] for p in gt_poses.poses]) if len(gt_poses) else np.zeros((0, 2))
    mask = np.zeros(shape, dtype=bool)
    if len(pts) == 0:
        return TrajMask(mask, res, origin)
    centers = _cell_centers(shape, res, origin)
    min_d = np.full(centers.shape[0], np.inf)
    if len(pts) == 1:
        min_d = np.hypot(*(centers - pts[0]).T)
    else:
        for a, b in zip(pts[:-1], pts[1:]):
            ab = b - a
            denom = float(ab @ ab)
            if denom == 0.0:
                d = np.hypot(*(centers - a).T)
            else:
                t = np.clip((centers - a) @ ab / denom, 0.0, 1.0)
                proj = a + t[:, None] * ab
                d = np.hypot(*(centers - proj).T)
            np.minimum(min_d, d, out=min_d)
    mask = (min_d <= dilation_radius).reshape(shape)
    if not mask.any():
        lo = (origin[0] - res / 2, origin[1] - res / 2)
        hi = (origin[0] + (shape[1] - 0.5) * res, origin[1] + (shape[0] - 0.5) * res)
        outside = (
            (pts[:, 0] < lo[0]) | (pts[:, 0] > hi[0]) | (pts[:, 1] < lo[1]) | (pts[:, 1] > hi[1])
        ).all()
        if outside:
            log.warning("trajectory lies entirely outside the grid; mask is empty")
    return TrajMask(mask, res, origin)


def mask_esdf(phi: EsdfMap, mask: TrajMask, alpha: float) -> EsdfMap:
    """Attenuate the field inside the corridor: phi * (1 - alpha) there, phi elsewhere."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if not same_geometry(phi, mask):
        raise GeometryMismatchError("field and mask geometry differ")
    values = phi.values * (1.0 - alpha * mask.values)
    return EsdfMap(values, phi.resolution, phi.origin)


def _bilinear(values: np.ndarray, resolution: float, origin, pts: np.ndarray):
    """Shared bilinear kernel.

    Returns (sampled values, d/dx, d/dy, out-of-bounds mask). Points outside
    the cell-center lattice clamp to the border; clamped coordinates carry
    zero gradient in the clamped direction.
    """
    h, w = values.shape
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    gx = (pts[:, 0] - origin[0]) / resolution
    gy = (pts[:, 1] - origin[1]) / resolution
    cx = np.clip(gx, 0.0, w - 1.0)
    cy = np.clip(gy, 0.0, h - 1.0)
    oob = (gx != cx) | (gy != cy)
    ix = np.minimum(np.floor(cx).astype(np.intp), max(w - 2, 0))
    iy = np.minimum(np.floor(cy).astype(np.intp), max(h - 2, 0))
    u = cx - ix
    v = cy - iy
    jx = np.minimum(ix + 1, w - 1)
    jy = np.minimum(iy + 1, h - 1)
    f00 = values[iy, ix]
    f10 = values[iy, jx]
    f01 = values[jy, ix]
    f11 = values[jy, jx]
    out = f00 * (1 - u) * (1 - v) + f10 * u * (1 - v) + f01 * (1 - u) * v + f11 * u * v
    du = (f10 - f00) * (1 - v) + (f11 - f01) * v
    dv = (f01 - f00) * (1 - u) + (f11 - f10) * u
    inside_x = (gx == cx).astype(float)
    inside_y = (gy == cy).astype(float)
    return out, du * inside_x / resolution, dv * inside_y / resolution, oob


def sample_bilinear(phi: EsdfMap, points, with_oob: bool = False):
    """Bilinearly interpolate the field at world points (meters)."""
    out, _, _, oob = _bilinear(phi.values, phi.resolution, phi.origin, points)
    return (out, oob) if with_oob else out


def sample_bilinear_with_grad(phi: EsdfMap, points):
    """Values plus spatial gradient (d/dx, d/dy) at world points."""
    out, dx, dy, _ = _bilinear(phi.values, phi.resolution, phi.origin, points)
    return out, dx, dy


def traj_esdf_sum(phi: EsdfMap, poses: PoseTrajectory) -> float:
    """Sum of the sampled field over trajectory points, excluding the fixed start pose."""
    if len(poses) <= 1:
        return 0.0
    pts = poses.as_array()[1:, :2]
    return float(np.sum(sample_bilinear(phi, pts)))


# --- text file formats -------------------------------------------------------

def save_grid(grid, path) -> None:
    """Write OCC2 (occupancy) or ESDF (signed field) text files."""
    if isinstance(grid, OccupancyGrid):
        header = (
            f"OCC2 {grid.width} {grid.height} {grid.depth} "
            f"{grid.resolution!r} {grid.origin[0]!r} {grid.origin[1]!r}"
        )
        body = "\n".join(
            " ".join("1" if v else "0" for v in row)
            for plane in grid.values
            for row in plane
        )
    elif isinstance(grid, BinaryMap2D):
        header = (
            f"OCC2 {grid.width} {grid.height} "
            f"{grid.resolution!r} {grid.origin[0]!r} {grid.origin[1]!r}"
        )
        body = "\n".join(" ".join("1" if v else "0" for v in row) for row in grid.values)
    elif isinstance(grid, EsdfMap):
        header = (
            f"ESDF {grid.width} {grid.height} "
            f"{grid.resolution!r} {grid.origin[0]!r} {grid.origin[1]!r}"
        )
        body = "\n".join(" ".join(repr(float(v)) for v in row) for row in grid.values)
    else:
        raise TypeError(f"cannot serialize {type(grid).__name__}")
    with open(path, "w") as fh:
        fh.write(header + "\n" + body + "\n")


class GridParseError(AstraError):
    """Malformed grid file; message carries the file and offending field."""


def _parse_header(tokens: list[str], path) -> tuple[str, list[int], float, tuple[float, float]]:
    magic = tokens[0]
    if magic == "OCC2":
        if len(tokens) == 7:
            dims = [int(tokens[1]), int(tokens[2]), int(tokens[3])]
            rest = tokens[4:]
        elif len(tokens) == 6:
            dims = [int(tokens[1]), int(tokens[2])]
            rest = tokens[3:]
        else:
            raise GridParseError(f"{path}: OCC2 header needs 5 or 6 fields, got {len(tokens) - 1}")
    elif magic == "ESDF":
        if len(tokens) != 6:
            raise GridParseError(f"{path}: ESDF header needs 5 fields, got {len(tokens) - 1}")
        dims = [int(tokens[1]), int(tokens[2])]
        rest = tokens[3:]
    else:
        raise GridParseError(f"{path}: unknown grid magic {magic!r} (line 1, field 1)")
    return magic, dims, float(rest[0]), (float(rest[1]), float(rest[2]))


def load_grid(path):
    """Read a grid file; returns OccupancyGrid, BinaryMap2D, or EsdfMap per its header."""
    with open(path) as fh:
        lines = fh.read().split("\n")
    if not lines or not lines[0].strip():
        raise GridParseError(f"{path}: empty file (line 1)")
    try:
        magic, dims, res, origin = _parse_header(lines[0].split(), path)
    except ValueError as e:
        raise GridParseError(f"{path}: bad header value (line 1): {e}") from e
    body = " ".join(lines[1:]).split()
    if magic == "OCC2" and len(dims) == 3:
        w, h, d = dims
        expected = w * h * d
    else:
        w, h = dims[0], dims[1]
        expected = w * h
    if len(body) != expected:
        raise GridParseError(f"{path}: expected {expected} cell values, got {len(body)} (line 2+)")
    try:
        flat = np.array([float(t) for t in body])
    except ValueError as e:
        raise GridParseError(f"{path}: bad cell value (line 2+): {e}") from e
    if magic == "ESDF":
        return EsdfMap(flat.reshape(h, w), res, origin)
    if len(dims) == 3:
        return OccupancyGrid(flat.reshape(d, h, w) != 0, res, origin)
    return BinaryMap2D(flat.reshape(h, w) != 0, res, origin)
