"""Occupancy-grid mapping and grid path planning.

The grid accumulates range-sensor evidence: the cell containing a ray
endpoint collects a hit, cells the ray crosses on the way lose one (floor
zero), and anything a ray ever touched counts as observed. A cell is
occupied once its hit count reaches the threshold, unknown if never
observed, free otherwise. Downstream stages consume binary occupancy:
a majority median filter knocks out isolated noise cells (ties resolve
to occupied and windows truncate at the border, so border walls survive),
inflation grows obstacles by a euclidean disc so a point planner respects
the robot's body, and an A-star search with a euclidean heuristic plans
over the result.

Cells are addressed as (ix, iy) with ix along +x; arrays index [iy, ix].
Path costs are in cell units: 1 per axis step, sqrt(2) per diagonal.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Posture, RobotGeometry

__all__ = [
    "FREE",
    "GridPath",
    "InvalidEndpoint",
    "NoPath",
    "OCCUPIED",
    "OccupancyGrid",
    "PlanningError",
    "UNKNOWN",
    "astar",
    "grid_header_text",
    "grid_to_pgm",
    "inflate",
    "ingest_ir_scan",
    "load_grid",
    "median_filter",
    "save_grid",
    "traverse_ray",
]

FREE = 0
UNKNOWN = 127
OCCUPIED = 255

_SQRT2 = math.sqrt(2.0)


class PlanningError(Exception):
    """Base class for planning failures."""


class NoPath(PlanningError):
    """The frontier was exhausted without reaching the goal."""


class InvalidEndpoint(PlanningError):
    """Start or goal is out of bounds, occupied, or unknown."""


class OccupancyGrid:
    """Hit-count occupancy grid over a rectangle of the world plane."""

    def __init__(self, resolution: float, origin: tuple[float, float],
                 width: int, height: int, occupied_threshold: int = 2):
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        if width < 1 or height < 1:
            raise ValueError("grid must be at least 1x1 cells")
        if occupied_threshold < 1:
            raise ValueError("occupied_threshold must be at least 1")
        self.resolution = float(resolution)
        self.origin = (float(origin[0]), float(origin[1]))
        self.width = int(width)
        self.height = int(height)
        self.occupied_threshold = int(occupied_threshold)
        self.hits = np.zeros((height, width), dtype=np.int32)
        self.observed = np.zeros((height, width), dtype=bool)
        self.skipped_readings = 0

    def clone_empty(self) -> "OccupancyGrid":
        return OccupancyGrid(self.resolution, self.origin, self.width,
                             self.height, self.occupied_threshold)

    def cell_of(self, x: float, y: float) -> tuple[int, int] | None:
        """Cell containing the world point, or None when outside."""
        ix = math.floor((x - self.origin[0]) / self.resolution)
        iy = math.floor((y - self.origin[1]) / self.resolution)
        if 0 <= ix < self.width and 0 <= iy < self.height:
            return ix, iy
        return None

    def cell_center(self, cell: tuple[int, int]) -> tuple[float, float]:
        return (self.origin[0] + (cell[0] + 0.5) * self.resolution,
                self.origin[1] + (cell[1] + 0.5) * self.resolution)

    def in_bounds(self, cell: tuple[int, int]) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def occupancy(self) -> np.ndarray:
        """Binary occupancy: hit count at or beyond the threshold."""
        return self.hits >= self.occupied_threshold

    def states(self) -> np.ndarray:
        """Per-cell state byte: FREE, UNKNOWN, or OCCUPIED."""
        out = np.full((self.height, self.width), FREE, dtype=np.uint8)
        out[~self.observed] = UNKNOWN
        out[self.occupancy()] = OCCUPIED
        return out


def traverse_ray(grid: OccupancyGrid, x0: float, y0: float,
                 x1: float, y1: float) -> list[tuple[int, int]]:
    """Cells crossed from (x0, y0) to (x1, y1) inclusive, in visit order.

    Steps cell to cell along the segment; when the segment leaves the grid
    the walk stops at the boundary. Exact boundary crossings step the x
    axis first, which keeps visit order deterministic.
    """
    start = grid.cell_of(x0, y0)
    if start is None:
        return []
    end = grid.cell_of(x1, y1)
    ix, iy = start
    cells = [(ix, iy)]
    dx, dy = x1 - x0, y1 - y0
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    res, (ox, oy) = grid.resolution, grid.origin
    if dx != 0.0:
        nx = ox + (ix + (step_x > 0)) * res
        t_max_x, t_dx = (nx - x0) / dx, res / abs(dx)
    else:
        t_max_x, t_dx = math.inf, math.inf
    if dy != 0.0:
        ny = oy + (iy + (step_y > 0)) * res
        t_max_y, t_dy = (ny - y0) / dy, res / abs(dy)
    else:
        t_max_y, t_dy = math.inf, math.inf

    limit = grid.width + grid.height + 4
    for _ in range(limit):
        if (ix, iy) == end:
            break
        if min(t_max_x, t_max_y) > 1.0:
            break
        if t_max_x <= t_max_y:
            ix += step_x
            t_max_x += t_dx
        else:
            iy += step_y
            t_max_y += t_dy
        if not (0 <= ix < grid.width and 0 <= iy < grid.height):
            break
        cells.append((ix, iy))
    return cells


def ingest_ir_scan(grid: OccupancyGrid, pose: Posture, readings,
                   geometry: RobotGeometry) -> int:
    """Fold one 5-ray range scan into the grid; returns readings skipped.

    An in-range reading frees every crossed cell (hit count minus one,
    floor zero) and adds a hit to the endpoint cell. A None reading frees
    along the ray out to the sensor's maximum range. Readings whose
    endpoint lies outside the grid are skipped entirely and counted.
    """
    if len(readings) != len(geometry.ir_ray_angles):
        raise ValueError("one reading per sensor ray expected")
    skipped = 0
    for reading, ray_angle in zip(readings, geometry.ir_ray_angles):
        angle = pose.theta + ray_angle
        direction = (math.cos(angle), math.sin(angle))
        if reading is None:
            reach = geometry.ir_range_max
            endpoint_hit = False
        else:
            reach = float(reading)
            endpoint_hit = True
        ex = pose.x + reach * direction[0]
        ey = pose.y + reach * direction[1]
        end_cell = grid.cell_of(ex, ey)
        if endpoint_hit and end_cell is None:
            skipped += 1
            continue
        cells = traverse_ray(grid, pose.x, pose.y, ex, ey)
        if not cells:
            skipped += 1
            continue
        for cell in cells:
            if endpoint_hit and cell == end_cell:
                continue
            grid.hits[cell[1], cell[0]] = max(0, grid.hits[cell[1], cell[0]] - 1)
            grid.observed[cell[1], cell[0]] = True
        if endpoint_hit:
            ix, iy = end_cell
            grid.hits[iy, ix] += 1
            grid.observed[iy, ix] = True
    grid.skipped_readings += skipped
    return skipped


def _window_sums(mask: np.ndarray, window: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-cell (sum over window, cells present) with border truncation."""
    half = window // 2
    h, w = mask.shape
    total = np.zeros((h, w), dtype=np.int32)
    present = np.zeros((h, w), dtype=np.int32)
    values = mask.astype(np.int32)
    ones = np.ones((h, w), dtype=np.int32)
    for di in range(-half, half + 1):
        for dj in range(-half, half + 1):
            src_r = slice(max(0, -di), min(h, h - di))
            src_c = slice(max(0, -dj), min(w, w - dj))
            dst_r = slice(max(0, di), min(h, h + di))
            dst_c = slice(max(0, dj), min(w, w + dj))
            total[dst_r, dst_c] += values[src_r, src_c]
            present[dst_r, dst_c] += ones[src_r, src_c]
    return total, present


def median_filter(grid: OccupancyGrid, window: int = 3) -> OccupancyGrid:
    """Majority vote of binary occupancy over each window neighborhood.

    Windows truncate at the border and exact ties resolve to occupied,
    so a wall hugging the grid edge survives while an isolated hit in the
    open is removed. Unknown cells vote free but stay unknown in the
    output. The result is a fresh grid whose hit counts are normalized to
    the threshold (occupied) or zero.
    """
    if window % 2 == 0 or window < 3:
        raise ValueError("window must be odd and at least 3")
    occ_sum, present = _window_sums(grid.occupancy(), window)
    occupied = 2 * occ_sum >= present
    out = grid.clone_empty()
    out.hits[occupied] = grid.occupied_threshold
    out.observed = grid.observed.copy()
    out.hits[~out.observed] = 0
    out.skipped_readings = grid.skipped_readings
    return out


def inflate(grid: OccupancyGrid, margin: float) -> OccupancyGrid:
    """Grow every occupied cell by a euclidean disc of the given radius.

    A cell becomes occupied when its center lies within ``margin`` of an
    occupied cell's center; inflated cells count as observed.
    """
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    occ = grid.occupancy()
    reach = int(math.floor(margin / grid.resolution + 1e-9))
    h, w = occ.shape
    inflated = occ.copy()
    for di in range(-reach, reach + 1):
        for dj in range(-reach, reach + 1):
            if di == 0 and dj == 0:
                continue
            if math.hypot(di, dj) * grid.resolution > margin + 1e-9:
                continue
            src_r = slice(max(0, -di), min(h, h - di))
            src_c = slice(max(0, -dj), min(w, w - dj))
            dst_r = slice(max(0, di), min(h, h + di))
            dst_c = slice(max(0, dj), min(w, w + dj))
            inflated[dst_r, dst_c] |= occ[src_r, src_c]
    out = grid.clone_empty()
    out.hits = grid.hits.copy()
    out.hits[inflated] = np.maximum(out.hits[inflated], grid.occupied_threshold)
    out.observed = grid.observed | inflated
    out.skipped_readings = grid.skipped_readings
    return out


@dataclass(frozen=True)
class GridPath:
    """Planned cell sequence with its cost in cell units."""

    cells: tuple[tuple[int, int], ...]
    cost: float
    expanded: tuple[tuple[int, int], ...] = field(default=(), repr=False)


def astar(grid: OccupancyGrid, start: tuple[int, int],
          goal: tuple[int, int]) -> GridPath:
    """Minimum-cost 8-connected path from start to goal.

    Axis steps cost 1, diagonals sqrt(2); a diagonal is forbidden when
    both cells it squeezes between are occupied. Unknown cells are
    untraversable. The euclidean heuristic is admissible and consistent
    for these costs; ties break on smaller heuristic, then lexicographic
    cell index, so results are deterministic.
    """
    states = grid.states()

    def free(cell):
        return grid.in_bounds(cell) and states[cell[1], cell[0]] == FREE

    def occupied(cell):
        return grid.in_bounds(cell) and states[cell[1], cell[0]] == OCCUPIED

    for name, cell in (("start", start), ("goal", goal)):
        if not grid.in_bounds(cell):
            raise InvalidEndpoint(f"{name} {cell} is outside the grid")
        if not free(cell):
            raise InvalidEndpoint(f"{name} {cell} is not a free cell")

    def heuristic(cell):
        return math.hypot(cell[0] - goal[0], cell[1] - goal[1])

    g_cost = {start: 0.0}
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    frontier = [(heuristic(start), heuristic(start), start)]
    closed: set[tuple[int, int]] = set()
    expanded: list[tuple[int, int]] = []

    while frontier:
        _, _, cell = heapq.heappop(frontier)
        if cell in closed:
            continue
        closed.add(cell)
        expanded.append(cell)
        if cell == goal:
            path = [cell]
            while path[-1] != start:
                path.append(parent[path[-1]])
            path.reverse()
            return GridPath(tuple(path), g_cost[goal], tuple(expanded))
        cx, cy = cell
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                nxt = (cx + dx, cy + dy)
                if not free(nxt) or nxt in closed:
                    continue
                if dx != 0 and dy != 0:
                    if occupied((cx + dx, cy)) and occupied((cx, cy + dy)):
                        continue
                    step = _SQRT2
                else:
                    step = 1.0
                tentative = g_cost[cell] + step
                if tentative < g_cost.get(nxt, math.inf):
                    g_cost[nxt] = tentative
                    parent[nxt] = cell
                    h = heuristic(nxt)
                    heapq.heappush(frontier, (tentative + h, h, nxt))
    raise NoPath(f"no route from {start} to {goal}")


def grid_to_pgm(grid: OccupancyGrid) -> bytes:
    """Binary PGM image of the cell states, row 0 (smallest y) first."""
    header = f"P5\n{grid.width} {grid.height}\n255\n".encode("ascii")
    return header + grid.states().tobytes()


def grid_header_text(grid: OccupancyGrid) -> str:
    """Sidecar header describing geometry the image cannot carry."""
    return (
        f"resolution_mm {grid.resolution:g}\n"
        f"origin_mm {grid.origin[0]:g} {grid.origin[1]:g}\n"
        f"width_cells {grid.width}\n"
        f"height_cells {grid.height}\n"
        f"occupied_threshold {grid.occupied_threshold}\n"
    )


def save_grid(grid: OccupancyGrid, stem: str | Path) -> tuple[Path, Path]:
    """Write <stem>.pgm and <stem>.txt; returns both paths."""
    stem = Path(stem)
    pgm = stem.with_suffix(".pgm")
    txt = stem.with_suffix(".txt")
    pgm.write_bytes(grid_to_pgm(grid))
    txt.write_text(grid_header_text(grid), encoding="ascii")
    return pgm, txt


def load_grid(stem: str | Path) -> OccupancyGrid:
    """Rebuild a grid from save_grid output.

    Hit counts are normalized on save, so occupied cells come back at
    exactly the threshold; a save/load/save cycle is byte-identical.
    """
    stem = Path(stem)
    meta: dict[str, str] = {}
    for line in stem.with_suffix(".txt").read_text(encoding="ascii").splitlines():
        key, _, value = line.partition(" ")
        meta[key] = value
    data = stem.with_suffix(".pgm").read_bytes()
    magic, dims, maxval, raster = data.split(b"\n", 3)
    if magic != b"P5" or maxval != b"255":
        raise ValueError("not a grid image produced by save_grid")
    width, height = (int(v) for v in dims.split())
    grid = OccupancyGrid(
        float(meta["resolution_mm"]),
        tuple(float(v) for v in meta["origin_mm"].split()),
        width, height,
        int(meta["occupied_threshold"]),
    )
    states = np.frombuffer(raster[: width * height], dtype=np.uint8)
    states = states.reshape((height, width))
    grid.observed = states != UNKNOWN
    grid.hits = np.where(states == OCCUPIED, grid.occupied_threshold, 0).astype(np.int32)
    return grid
