"""Root trajectory planning.

Pipeline: occupancy-grid path search -> planar waypoints -> lifted 6-DoF
poses -> pick/carry/place via-point sequence -> velocity-limited,
time-parameterised trajectory with contact flags.

The planar planner is an 8-connected A* on an inflated occupancy grid with
line-of-sight shortcutting. It fills the slot a local planner (e.g. a timed
elastic band) would occupy; the contract is goal + map -> planar waypoints.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage

from rootguide.se3 import (
    Pose,
    Rotation,
    angular_distance,
    interpolate_pose,
    rot6d_encode,
    wrap_angle,
)
from rootguide.trajectory import Frame, TimedTrajectory

SQRT2 = math.sqrt(2.0)


class PlanningError(RuntimeError):
    pass


class InvalidEndpoint(PlanningError):
    pass


class Unreachable(PlanningError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PlanarWaypoint:
    x: float
    y: float
    psi: float

    def __post_init__(self):
        object.__setattr__(self, "psi", wrap_angle(self.psi))


@dataclass
class OccupancyMap:
    """Boolean occupancy grid; ``grid[iy, ix]`` is True where occupied.

    Cell ``(ix, iy)`` covers ``[origin + (ix, iy) * cell_size, origin + (ix + 1, iy + 1) * cell_size)``.
    """

    origin: np.ndarray
    cell_size: float
    grid: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(2)
        self.grid = np.asarray(self.grid, dtype=bool)
        if self.grid.ndim != 2:
            raise ValueError("occupancy grid must be 2-D")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")

    @classmethod
    def empty(cls, origin, size_xy, cell_size: float) -> OccupancyMap:
        nx = int(math.ceil(size_xy[0] / cell_size))
        ny = int(math.ceil(size_xy[1] / cell_size))
        return cls(np.asarray(origin, dtype=float), cell_size, np.zeros((ny, nx), dtype=bool))

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def to_cell(self, x: float, y: float) -> tuple[int, int]:
        return (
            int(math.floor((x - self.origin[0]) / self.cell_size)),
            int(math.floor((y - self.origin[1]) / self.cell_size)),
        )

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (
            self.origin[0] + (ix + 0.5) * self.cell_size,
            self.origin[1] + (iy + 0.5) * self.cell_size,
        )

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= iy < self.grid.shape[0] and 0 <= ix < self.grid.shape[1]

    def inflated(self, radius: float) -> OccupancyMap:
        """Mark every cell whose center lies within ``radius`` of an occupied cell center."""
        if radius <= 0 or not self.grid.any():
            return OccupancyMap(self.origin, self.cell_size, self.grid.copy())
        dist = ndimage.distance_transform_edt(~self.grid) * self.cell_size
        return OccupancyMap(self.origin, self.cell_size, self.grid | (dist <= radius))

    def add_box(self, lo_xy, hi_xy) -> None:
        """Mark the axis-aligned rectangle as occupied (cells whose centers fall inside)."""
        ys, xs = np.mgrid[0 : self.grid.shape[0], 0 : self.grid.shape[1]]
        cx = self.origin[0] + (xs + 0.5) * self.cell_size
        cy = self.origin[1] + (ys + 0.5) * self.cell_size
        inside = (cx >= lo_xy[0]) & (cx <= hi_xy[0]) & (cy >= lo_xy[1]) & (cy <= hi_xy[1])
        self.grid |= inside

    # file I/O: PGM P5 image (>= 128 is free) plus a JSON sidecar
    @classmethod
    def load(cls, pgm_path: str | Path, meta_path: str | Path | None = None) -> OccupancyMap:
        from PIL import Image

        pgm_path = Path(pgm_path)
        meta_path = Path(meta_path) if meta_path else pgm_path.with_suffix(".json")
        meta = json.loads(meta_path.read_text())
        img = np.asarray(Image.open(pgm_path).convert("L"))
        # image row 0 is the top edge (max y)
        occ = (img < 128)[::-1].copy()
        return cls(np.asarray(meta["origin"], dtype=float), float(meta["cell_size"]), occ)

    def save(self, pgm_path: str | Path, meta_path: str | Path | None = None) -> None:
        from PIL import Image

        pgm_path = Path(pgm_path)
        meta_path = Path(meta_path) if meta_path else pgm_path.with_suffix(".json")
        img = np.where(self.grid[::-1], 0, 255).astype(np.uint8)
        Image.fromarray(img, mode="L").save(pgm_path, format="PPM")
        meta_path.write_text(json.dumps({"origin": self.origin.tolist(), "cell_size": self.cell_size}))


def segment_cells(m: OccupancyMap, a: Sequence[float], b: Sequence[float]) -> list[tuple[int, int]]:
    """All grid cells touched by segment a-b (supercover; corners include both neighbours)."""
    ux0 = (a[0] - m.origin[0]) / m.cell_size
    uy0 = (a[1] - m.origin[1]) / m.cell_size
    ux1 = (b[0] - m.origin[0]) / m.cell_size
    uy1 = (b[1] - m.origin[1]) / m.cell_size
    ix, iy = int(math.floor(ux0)), int(math.floor(uy0))
    ex, ey = int(math.floor(ux1)), int(math.floor(uy1))
    dx, dy = ux1 - ux0, uy1 - uy0
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    inf = math.inf
    t_dx = abs(1.0 / dx) if dx != 0 else inf
    t_dy = abs(1.0 / dy) if dy != 0 else inf
    if dx > 0:
        tmx = (math.floor(ux0) + 1 - ux0) * t_dx
    elif dx < 0:
        tmx = (ux0 - math.floor(ux0)) * t_dx
    else:
        tmx = inf
    if dy > 0:
        tmy = (math.floor(uy0) + 1 - uy0) * t_dy
    elif dy < 0:
        tmy = (uy0 - math.floor(uy0)) * t_dy
    else:
        tmy = inf
    cells = [(ix, iy)]
    n_steps = abs(ex - ix) + abs(ey - iy)
    for _ in range(n_steps + 2):
        if (ix, iy) == (ex, ey):
            break
        if abs(tmx - tmy) < 1e-12:
            if tmx > 1.0:
                break
            # passing through a lattice corner: claim both side cells
            cells.append((ix + sx, iy))
            cells.append((ix, iy + sy))
            ix += sx
            iy += sy
            tmx += t_dx
            tmy += t_dy
        elif tmx < tmy:
            if tmx > 1.0:
                break
            ix += sx
            tmx += t_dx
        else:
            if tmy > 1.0:
                break
            iy += sy
            tmy += t_dy
        cells.append((ix, iy))
    return cells


def line_of_sight(m: OccupancyMap, a, b) -> bool:
    for ix, iy in segment_cells(m, a, b):
        if not m.in_bounds(ix, iy) or m.grid[iy, ix]:
            return False
    return True


_MOVES = [(1, 0, 1.0), (-1, 0, 1.0), (0, 1, 1.0), (0, -1, 1.0), (1, 1, SQRT2), (1, -1, SQRT2), (-1, 1, SQRT2), (-1, -1, SQRT2)]


def grid_neighbors(grid: np.ndarray, ix: int, iy: int):
    """Free 8-connected neighbours; diagonals may not cut an occupied corner."""
    ny, nx = grid.shape
    for dx, dy, cost in _MOVES:
        jx, jy = ix + dx, iy + dy
        if not (0 <= jx < nx and 0 <= jy < ny) or grid[jy, jx]:
            continue
        if dx and dy and (grid[iy, jx] or grid[jy, ix]):
            continue
        yield jx, jy, cost


def astar(grid: np.ndarray, start: tuple[int, int], goal: tuple[int, int]) -> tuple[list[tuple[int, int]], float]:
    """Shortest 8-connected path between free cells; cost in cell units."""

    def h(c):
        ddx, ddy = abs(c[0] - goal[0]), abs(c[1] - goal[1])
        return (SQRT2 - 1.0) * min(ddx, ddy) + max(ddx, ddy)

    g = {start: 0.0}
    parent: dict[tuple[int, int], tuple[int, int] | None] = {start: None}
    heap = [(h(start), 0.0, start)]
    closed = set()
    while heap:
        _, gc, c = heapq.heappop(heap)
        if c in closed:
            continue
        if c == goal:
            path = [c]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return path[::-1], gc
        closed.add(c)
        for jx, jy, cost in grid_neighbors(grid, c[0], c[1]):
            n = (jx, jy)
            ng = gc + cost
            if ng < g.get(n, math.inf) - 1e-12:
                g[n] = ng
                parent[n] = c
                heapq.heappush(heap, (ng + h(n), ng, n))
    raise Unreachable(f"no path from cell {start} to cell {goal}")


def shortcut(m: OccupancyMap, pts: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Greedy string pulling: extend each segment while line of sight holds."""
    if len(pts) <= 2:
        return list(pts)
    out = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = i + 1
        while j + 1 < len(pts) and line_of_sight(m, pts[i], pts[j + 1]):
            j += 1
        out.append(pts[j])
        i = j
    return out


class PathPlanner:
    """Planning session holding the inflated map. Single writer."""

    def __init__(self, occupancy: OccupancyMap, inflation_radius: float = 0.0):
        self.map = occupancy
        self.inflation_radius = inflation_radius
        self.inflated = occupancy.inflated(inflation_radius)

    def _check_endpoint(self, name: str, wp: PlanarWaypoint) -> tuple[int, int]:
        ix, iy = self.inflated.to_cell(wp.x, wp.y)
        if not self.inflated.in_bounds(ix, iy):
            raise InvalidEndpoint(f"{name} ({wp.x:.3f}, {wp.y:.3f}) is outside the map")
        if self.inflated.grid[iy, ix]:
            raise InvalidEndpoint(f"{name} ({wp.x:.3f}, {wp.y:.3f}) is occupied after inflation")
        return ix, iy

    def plan(self, start: PlanarWaypoint, goal: PlanarWaypoint) -> list[PlanarWaypoint]:
        s = self._check_endpoint("start", start)
        g = self._check_endpoint("goal", goal)
        if line_of_sight(self.inflated, (start.x, start.y), (goal.x, goal.y)):
            pts = [(start.x, start.y), (goal.x, goal.y)]
        else:
            cells, _ = astar(self.inflated.grid, s, g)
            pts = [(start.x, start.y)] + [self.inflated.cell_center(*c) for c in cells[1:-1]] + [(goal.x, goal.y)]
            pts = shortcut(self.inflated, pts)
        out = []
        for i, (x, y) in enumerate(pts):
            if i + 1 < len(pts):
                nx, ny = pts[i + 1]
                psi = math.atan2(ny - y, nx - x) if (nx, ny) != (x, y) else goal.psi
            else:
                psi = goal.psi
            out.append(PlanarWaypoint(x, y, psi))
        return out


def plan_path(
    occupancy: OccupancyMap, start: PlanarWaypoint, goal: PlanarWaypoint, inflation_radius: float = 0.0
) -> list[PlanarWaypoint]:
    return PathPlanner(occupancy, inflation_radius).plan(start, goal)


def path_length(path: Sequence[PlanarWaypoint]) -> float:
    return sum(math.hypot(b.x - a.x, b.y - a.y) for a, b in zip(path, path[1:]))


def lift_waypoints(path: Sequence[PlanarWaypoint], h_stand: float) -> list[Pose]:
    """Planar waypoints -> root poses at standing height with pure yaw."""
    if not h_stand > 0:
        raise ConfigError("h_stand must be positive")
    return [Pose(np.array([w.x, w.y, h_stand]), Rotation.from_yaw(w.psi)) for w in path]


def build_sequence(
    current: Pose,
    target: Pose,
    end: Pose,
    nav_waypoints: Sequence[Pose],
    h_stand: float,
) -> list[tuple[Pose, bool]]:
    """Via-point sequence for one pick-carry-place cycle.

    ``current, target_up, target, target_up, nav..., end_up, end, end_up``,
    where ``X_up`` is ``X`` raised to ``h_stand``. Contact is on from
    ``target`` through ``end`` inclusive.
    """
    target_up = target.with_z(h_stand)
    end_up = end.with_z(h_stand)
    seq = [(current, False), (target_up, False), (target, True), (target_up, True)]
    seq += [(p, True) for p in nav_waypoints]
    seq += [(end_up, True), (end, True), (end_up, False)]
    return seq


def segment_steps(a: Pose, b: Pose, v_max: float, omega_max: float, dt: float) -> int:
    """Number of dt-steps for a synchronised move a -> b under both speed limits."""
    dist = float(np.linalg.norm(np.asarray(b.position) - np.asarray(a.position)))
    ang = angular_distance(a.rotation, b.rotation)
    duration = max(dist / v_max, ang / omega_max)
    # guard against ceil(250.0000000001) from float noise in the division
    return max(1, int(math.ceil(duration / dt - 1e-9)))


def interpolate_trajectory(
    waypoints: Sequence[tuple[Pose, bool]],
    v_max: float,
    omega_max: float,
    dt: float,
    t0: float = 0.0,
) -> TimedTrajectory:
    """Piecewise geodesic interpolation through the via-points.

    Each segment lasts the longer of its translational and rotational
    durations, rounded up to whole dt steps; frames carry the contact flag of
    the segment's destination. Zero-length segments take one step so that a
    contact switch between coincident poses still gets a frame.
    """
    if not (v_max > 0 and omega_max > 0 and dt > 0):
        raise ConfigError(f"limits must be positive: v_max={v_max}, omega_max={omega_max}, dt={dt}")
    if not waypoints:
        raise ConfigError("need at least one waypoint")
    first_pose, first_contact = waypoints[0]
    frames = [Frame(first_pose, bool(first_contact))]
    for (a, _), (b, c) in zip(waypoints, waypoints[1:]):
        n = segment_steps(a, b, v_max, omega_max, dt)
        for k in range(1, n + 1):
            frames.append(Frame(interpolate_pose(a, b, k / n) if k < n else b, bool(c)))
    return TimedTrajectory(dt=dt, frames=frames, t0=t0)


@dataclass(frozen=True)
class GoalObservation:
    delta_p: np.ndarray  # root frame, m
    delta_r: np.ndarray  # 6D encoding of R_cur^-1 R_ref
    contact: bool

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.delta_p, self.delta_r, [float(self.contact)]])


def goal_observation(current_root: Pose, reference: tuple[Pose, bool]) -> GoalObservation:
    ref, contact = reference
    rinv = current_root.rotation.inverse()
    dp = rinv.apply(np.asarray(ref.position) - np.asarray(current_root.position))
    dr = rot6d_encode(rinv * ref.rotation)
    return GoalObservation(dp, dr, bool(contact))
