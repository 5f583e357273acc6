"""Constant-speed wandering trajectories over a 2-D occupancy grid.

Grid conventions: ``cells[r, c]`` is True for an obstacle. Column ``c`` runs
along world +x and row ``r`` along world +z; cell ``(r, c)`` covers
``[ox + c*res, ox + (c+1)*res) x [oz + r*res, oz + (r+1)*res)``. Heights are
world y (y-up), and the camera flies at the middle of the height band.

Movement is 8-connected without corner cutting: a diagonal move is allowed
only when both orthogonal neighbours are free. The same rule defines
reachability for planning.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, RoutingError
from .trajectory import CameraPath, walk_chords

HEIGHT_BAND = (1.3, 1.5)
DEFAULT_RESOLUTION = 0.1
DEFAULT_COVERAGE = 0.5
DEFAULT_COVERAGE_RADIUS = 0.5

_NEIGHBOURS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]
_SQRT2 = math.sqrt(2.0)


@dataclass(eq=False)
class OccupancyGrid:
    cells: np.ndarray
    resolution: float = DEFAULT_RESOLUTION
    origin: tuple = (0.0, 0.0, 0.0)
    height_band: tuple = HEIGHT_BAND

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=bool)
        if self.cells.ndim != 2 or self.cells.size == 0:
            raise DomainError("occupancy grid must be a non-empty 2-D array")
        if not self.resolution > 0:
            raise DomainError("grid resolution must be positive")
        if not self.height_band[0] < self.height_band[1]:
            raise DomainError("height band must satisfy z_min < z_max")
        self.origin = tuple(float(v) for v in self.origin)

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    @property
    def free(self) -> np.ndarray:
        return ~self.cells

    @property
    def camera_height(self) -> float:
        return 0.5 * (self.height_band[0] + self.height_band[1])

    def is_free(self, r: int, c: int) -> bool:
        rows, cols = self.cells.shape
        return 0 <= r < rows and 0 <= c < cols and not self.cells[r, c]

    def cell_to_world(self, rc) -> np.ndarray:
        """Continuous cell coordinates (row, col) -> world (x, y, z)."""
        rc = np.asarray(rc, dtype=np.float64)
        x = self.origin[0] + rc[..., 1] * self.resolution
        z = self.origin[2] + rc[..., 0] * self.resolution
        return np.stack([x, np.full_like(x, self.camera_height), z], axis=-1)

    def world_to_cell(self, xyz) -> tuple[int, int]:
        xyz = np.asarray(xyz, dtype=np.float64)
        c = math.floor((xyz[0] - self.origin[0]) / self.resolution)
        r = math.floor((xyz[2] - self.origin[2]) / self.resolution)
        return r, c


@dataclass
class WaypointPlan:
    waypoints: list
    covered_fraction: float
    radius_cells: int
    target_coverage: float = DEFAULT_COVERAGE
    incomplete: bool = False
    start: tuple | None = None
    covered: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "waypoints": [list(map(int, w)) for w in self.waypoints],
            "covered_fraction": self.covered_fraction,
            "radius_cells": self.radius_cells,
            "target_coverage": self.target_coverage,
            "incomplete": self.incomplete,
        }


def extract_free_space(
    samples,
    band: tuple = HEIGHT_BAND,
    resolution: float = DEFAULT_RESOLUTION,
    origin=None,
    shape=None,
) -> OccupancyGrid:
    """Rasterize 3-D scene samples into an occupancy grid.

    A cell is an obstacle iff at least one sample with height inside the
    closed ``band`` falls into it. Without explicit ``origin``/``shape`` the
    grid spans the horizontal bounding box of all samples.
    """
    pts = np.asarray(samples, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise DomainError("no samples to rasterize")
    if not band[0] < band[1]:
        raise DomainError("height band must satisfy z_min < z_max")
    if origin is None:
        origin = (float(pts[:, 0].min()), 0.0, float(pts[:, 2].min()))
    origin = tuple(float(v) for v in origin)
    if shape is None:
        cols = int(math.floor((pts[:, 0].max() - origin[0]) / resolution)) + 1
        rows = int(math.floor((pts[:, 2].max() - origin[2]) / resolution)) + 1
        shape = (rows, cols)
    cells = np.zeros(shape, dtype=bool)
    in_band = (pts[:, 1] >= band[0]) & (pts[:, 1] <= band[1])
    sel = pts[in_band]
    c = np.floor((sel[:, 0] - origin[0]) / resolution).astype(np.int64)
    r = np.floor((sel[:, 2] - origin[2]) / resolution).astype(np.int64)
    ok = (r >= 0) & (r < shape[0]) & (c >= 0) & (c < shape[1])
    cells[r[ok], c[ok]] = True
    return OccupancyGrid(cells, resolution, origin, tuple(band))


# --- connectivity --------------------------------------------------------------------


def _moves(free: np.ndarray, r: int, c: int):
    rows, cols = free.shape
    for dr, dc in _NEIGHBOURS:
        nr, nc = r + dr, c + dc
        if not (0 <= nr < rows and 0 <= nc < cols) or not free[nr, nc]:
            continue
        if dr and dc and not (free[r + dr, c] and free[r, c + dc]):
            continue
        yield nr, nc, (_SQRT2 if dr and dc else 1.0)


def reachable_from(grid: OccupancyGrid, start) -> np.ndarray:
    free = grid.free
    seen = np.zeros_like(free)
    r0, c0 = start
    if not free[r0, c0]:
        raise DomainError(f"start cell {start} is an obstacle")
    seen[r0, c0] = True
    queue = deque([(r0, c0)])
    while queue:
        r, c = queue.popleft()
        for nr, nc, _ in _moves(free, r, c):
            if not seen[nr, nc]:
                seen[nr, nc] = True
                queue.append((nr, nc))
    return seen


def _bfs_update(free: np.ndarray, dist: np.ndarray, source) -> None:
    """Lower ``dist`` (hop counts) with a BFS from ``source``."""
    r0, c0 = source
    dist[r0, c0] = 0
    queue = deque([(r0, c0)])
    while queue:
        r, c = queue.popleft()
        d = dist[r, c] + 1
        for nr, nc, _ in _moves(free, r, c):
            if d < dist[nr, nc]:
                dist[nr, nc] = d
                queue.append((nr, nc))


def coverage_mask(grid: OccupancyGrid, cells, radius_cells: int) -> np.ndarray:
    """Free cells within Chebyshev distance ``radius_cells`` of any given cell."""
    mask = np.zeros(grid.shape, dtype=bool)
    for r, c in cells:
        mask[max(r - radius_cells, 0) : r + radius_cells + 1, max(c - radius_cells, 0) : c + radius_cells + 1] = True
    return mask & grid.free


def _window_sums(values: np.ndarray, radius: int) -> np.ndarray:
    """Sum of ``values`` over the clipped (2r+1)^2 window around every cell."""
    rows, cols = values.shape
    integral = np.zeros((rows + 1, cols + 1), dtype=np.int64)
    integral[1:, 1:] = np.cumsum(np.cumsum(values.astype(np.int64), axis=0), axis=1)
    r = np.arange(rows)
    c = np.arange(cols)
    r0 = np.clip(r - radius, 0, rows)[:, None]
    r1 = np.clip(r + radius + 1, 0, rows)[:, None]
    c0 = np.clip(c - radius, 0, cols)[None, :]
    c1 = np.clip(c + radius + 1, 0, cols)[None, :]
    return integral[r1, c1] - integral[r0, c1] - integral[r1, c0] + integral[r0, c0]


def plan_waypoints(
    grid: OccupancyGrid,
    target_coverage: float = DEFAULT_COVERAGE,
    coverage_radius: float = DEFAULT_COVERAGE_RADIUS,
    seed: int = 0,
    start=None,
) -> WaypointPlan:
    """Greedy farthest-point waypoint placement until ``target_coverage`` is met.

    Each round takes the uncovered reachable cell farthest (in BFS hops) from
    the existing waypoints and places the next waypoint at the reachable cell
    within the coverage radius of it that covers the most new free cells.
    Ties go to the lexicographically smallest cell. When no uncovered
    reachable cell remains before the target is met the plan is returned
    with ``incomplete=True``.
    """
    if not 0.0 < target_coverage <= 1.0:
        raise DomainError("target coverage must lie in (0, 1]")
    if coverage_radius < 0:
        raise DomainError("coverage radius must be non-negative")
    free = grid.free
    n_free = int(free.sum())
    if n_free == 0:
        raise DomainError("grid has no free cell")
    radius = int(math.floor(coverage_radius / grid.resolution + 1e-9))

    if start is None:
        candidates = np.argwhere(free)
        rng = np.random.default_rng(seed)
        start = tuple(int(v) for v in candidates[rng.integers(len(candidates))])
    start = (int(start[0]), int(start[1]))
    if not grid.is_free(*start):
        raise DomainError(f"start cell {start} is not free")

    reach = reachable_from(grid, start)
    covered = np.zeros(grid.shape, dtype=bool)
    dist = np.full(grid.shape, np.iinfo(np.int64).max, dtype=np.int64)
    waypoints: list[tuple[int, int]] = []

    def add(cell):
        r, c = cell
        waypoints.append(cell)
        covered[max(r - radius, 0) : r + radius + 1, max(c - radius, 0) : c + radius + 1] = True
        np.logical_and(covered, free, out=covered)
        _bfs_update(free, dist, cell)

    add(start)
    incomplete = False
    while covered.sum() / n_free < target_coverage:
        open_cells = reach & ~covered
        if not open_cells.any():
            incomplete = True
            break
        far = np.where(open_cells, dist, -1)
        # argmax returns the first maximum in row-major (lexicographic) order
        target = np.unravel_index(int(np.argmax(far)), grid.shape)
        gain = _window_sums(free & ~covered, radius)
        window = np.zeros(grid.shape, dtype=bool)
        tr, tc = target
        window[max(tr - radius, 0) : tr + radius + 1, max(tc - radius, 0) : tc + radius + 1] = True
        score = np.where(window & reach, gain, -1)
        choice = np.unravel_index(int(np.argmax(score)), grid.shape)
        add((int(choice[0]), int(choice[1])))

    return WaypointPlan(
        waypoints,
        float(covered.sum() / n_free),
        radius,
        target_coverage,
        incomplete,
        start,
        covered,
    )


# --- routing ------------------------------------------------------------------------


def _octile(a, b) -> float:
    dr = abs(a[0] - b[0])
    dc = abs(a[1] - b[1])
    return max(dr, dc) + (_SQRT2 - 1.0) * min(dr, dc)


def route(grid: OccupancyGrid, a, b) -> list[tuple[int, int]]:
    """Shortest 8-connected cell path from ``a`` to ``b`` (A*, octile metric).

    Heap ties are broken by lexicographic cell order.
    """
    a = (int(a[0]), int(a[1]))
    b = (int(b[0]), int(b[1]))
    if not grid.is_free(*a) or not grid.is_free(*b):
        raise RoutingError(f"no route from {a} to {b}: endpoint is not free", (a, b))
    free = grid.free
    g = {a: 0.0}
    parent: dict = {}
    heap = [(_octile(a, b), a)]
    closed = set()
    while heap:
        _, cell = heapq.heappop(heap)
        if cell in closed:
            continue
        if cell == b:
            path = [cell]
            while cell in parent:
                cell = parent[cell]
                path.append(cell)
            return path[::-1]
        closed.add(cell)
        for nr, nc, cost in _moves(free, *cell):
            nxt = (nr, nc)
            ng = g[cell] + cost
            if ng < g.get(nxt, math.inf) - 1e-12:
                g[nxt] = ng
                parent[nxt] = cell
                heapq.heappush(heap, (ng + _octile(nxt, b), nxt))
    raise RoutingError(f"no route from {a} to {b}: cells are disconnected", (a, b))


def cell_path_length(cells) -> float:
    """Length (in cells) of a polyline through cell centers."""
    pts = np.asarray(cells, dtype=np.float64)
    if len(pts) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def supercover(a, b, eps: float = 1e-9) -> set[tuple[int, int]]:
    """Every cell touched by the segment between the centers of cells ``a`` and ``b``.

    Touching an edge or a corner counts, so a clear supercover guarantees a
    collision-free segment.
    """
    y0, x0 = a[0] + 0.5, a[1] + 0.5
    y1, x1 = b[0] + 0.5, b[1] + 0.5
    out: set[tuple[int, int]] = set()
    xlo, xhi = min(x0, x1), max(x0, x1)
    for c in range(math.floor(xlo - eps), math.floor(xhi + eps) + 1):
        sx0 = max(float(c), xlo)
        sx1 = min(float(c + 1), xhi)
        if sx0 > sx1 + eps:
            continue
        if x1 == x0:
            ya, yb = y0, y1
        else:
            ya = y0 + (sx0 - x0) * (y1 - y0) / (x1 - x0)
            yb = y0 + (sx1 - x0) * (y1 - y0) / (x1 - x0)
        lo, hi = min(ya, yb), max(ya, yb)
        for r in range(math.floor(lo - eps), math.floor(hi + eps) + 1):
            out.add((r, c))
    return out


def line_of_sight(grid: OccupancyGrid, a, b) -> bool:
    return all(grid.is_free(r, c) for r, c in supercover(a, b))


def shortcut(grid: OccupancyGrid, cells) -> list[tuple[int, int]]:
    """Drop intermediate cells while the straight chord stays collision-free."""
    cells = list(cells)
    if len(cells) <= 2:
        return cells
    out = [cells[0]]
    i = 0
    while i < len(cells) - 1:
        j = i + 1
        while j + 1 < len(cells) and line_of_sight(grid, cells[i], cells[j + 1]):
            j += 1
        out.append(cells[j])
        i = j
    return out


def route_and_resample(grid: OccupancyGrid, plan: WaypointPlan, step: float) -> CameraPath:
    """Route through the plan's waypoints and resample at constant speed.

    Each leg is an A* route, shortcut by line of sight, and the joined
    polyline (through cell centers, at camera height) is walked with chords
    of exactly ``step`` scene units.
    """
    if not step > 0:
        raise DomainError("step must be positive")
    if not plan.waypoints:
        raise DomainError("plan has no waypoints")
    poly_cells: list[tuple[int, int]] = [tuple(plan.waypoints[0])]
    for a, b in zip(plan.waypoints[:-1], plan.waypoints[1:]):
        if tuple(a) == tuple(b):
            continue
        leg = shortcut(grid, route(grid, a, b))
        poly_cells.extend(leg[1:])
    centers = np.asarray(poly_cells, dtype=np.float64) + 0.5
    world = grid.cell_to_world(centers)
    if len(world) == 1:
        return CameraPath(world)
    return CameraPath(np.asarray(walk_chords(world, step)))
