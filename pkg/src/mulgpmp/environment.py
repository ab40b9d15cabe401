"""Occupancy grids, signed distance fields and the A* path seeder."""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .gp_prior import SupportTrajectory


class NoPathError(RuntimeError):
    """A* exhausted the reachable set without finding the goal."""


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Boolean occupancy over a regular grid.

    ``cells[row, col]`` covers the square whose lower-left corner is
    ``origin + (col, row) * cell_size``; row 0 is the lowest y.
    """

    origin: tuple[float, float]
    cell_size: float
    cells: np.ndarray

    def __post_init__(self):
        cells = np.array(self.cells, dtype=bool)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise ValueError("cells must be a non-empty 2D array")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    def __eq__(self, other):
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (self.origin == other.origin and self.cell_size == other.cell_size
                and np.array_equal(self.cells, other.cells))

    __hash__ = None

    @classmethod
    def empty(cls, xmin, ymin, xmax, ymax, cell_size) -> "OccupancyGrid":
        width = int(math.ceil((xmax - xmin) / cell_size))
        height = int(math.ceil((ymax - ymin) / cell_size))
        return cls((xmin, ymin), cell_size, np.zeros((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def extent(self) -> tuple[float, float, float, float]:
        x0, y0 = self.origin
        return x0, y0, x0 + self.width * self.cell_size, y0 + self.height * self.cell_size

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Meshgrid (X, Y) of cell-center coordinates, shaped like ``cells``."""
        xs = self.origin[0] + (np.arange(self.width) + 0.5) * self.cell_size
        ys = self.origin[1] + (np.arange(self.height) + 0.5) * self.cell_size
        return np.meshgrid(xs, ys)

    def cell_of(self, point) -> tuple[int, int]:
        """(row, col) of the cell containing ``point``; may lie outside the grid."""
        col = int(math.floor((point[0] - self.origin[0]) / self.cell_size))
        row = int(math.floor((point[1] - self.origin[1]) / self.cell_size))
        return row, col

    def occupied_at(self, point) -> bool:
        row, col = self.cell_of(point)
        if 0 <= row < self.height and 0 <= col < self.width:
            return bool(self.cells[row, col])
        return False

    def with_rectangles(self, rects, occupied=True) -> "OccupancyGrid":
        """Copy with every cell whose center lies in an (x0, y0, x1, y1) box set."""
        X, Y = self.cell_centers()
        cells = self.cells.copy()
        for x0, y0, x1, y1 in rects:
            cells[(X >= x0) & (X <= x1) & (Y >= y0) & (Y <= y1)] = occupied
        return OccupancyGrid(self.origin, self.cell_size, cells)

    def with_discs(self, centers, radius: float) -> "OccupancyGrid":
        """Copy with discs of ``radius`` around each center marked occupied."""
        X, Y = self.cell_centers()
        cells = self.cells.copy()
        r2 = radius * radius
        cs = self.cell_size
        for cx, cy in np.reshape(centers, (-1, 2)):
            # only touch the bounding window of the disc
            c0 = max(int((cx - radius - self.origin[0]) / cs) - 1, 0)
            c1 = min(int((cx + radius - self.origin[0]) / cs) + 2, self.width)
            r0 = max(int((cy - radius - self.origin[1]) / cs) - 1, 0)
            r1 = min(int((cy + radius - self.origin[1]) / cs) + 2, self.height)
            if c0 >= c1 or r0 >= r1:
                continue
            dx = X[r0:r1, c0:c1] - cx
            dy = Y[r0:r1, c0:c1] - cy
            cells[r0:r1, c0:c1] |= dx * dx + dy * dy <= r2
        return OccupancyGrid(self.origin, self.cell_size, cells)


@dataclass(frozen=True)
class SignedDistanceField:
    origin: tuple[float, float]
    cell_size: float
    values: np.ndarray

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]


def compute_sdf(grid: OccupancyGrid) -> SignedDistanceField:
    """Exact Euclidean signed distance between cell centers.

    Free cells hold the distance to the nearest occupied center, occupied
    cells minus the distance to the nearest free center. Space beyond the
    border counts as free.
    """
    occ = grid.cells
    cs = grid.cell_size
    if not occ.any():
        sentinel = cs * math.hypot(grid.width, grid.height)
        values = np.full(occ.shape, sentinel)
    else:
        padded = np.pad(occ, 1, constant_values=False)
        outside = ndimage.distance_transform_edt(~padded)[1:-1, 1:-1]
        inside = ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
        values = cs * np.where(occ, -inside, outside)
    values.setflags(write=False)
    return SignedDistanceField(grid.origin, cs, values)


def sdf_query(sdf: SignedDistanceField, point):
    """Bilinear distance and its gradient at one or many points.

    ``point`` has shape (2,) or (n, 2). Points beyond the outermost cell
    centers are clamped; the gradient along a clamped axis is zero.
    """
    p = np.asarray(point, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    cs = sdf.cell_size
    v = sdf.values
    h, w = v.shape

    u = (p[:, 0] - sdf.origin[0]) / cs - 0.5
    s = (p[:, 1] - sdf.origin[1]) / cs - 0.5
    inside_u = (u > 0) & (u < w - 1)
    inside_s = (s > 0) & (s < h - 1)
    u = np.clip(u, 0.0, w - 1)
    s = np.clip(s, 0.0, h - 1)
    c0 = np.clip(np.floor(u).astype(int), 0, max(w - 2, 0))
    r0 = np.clip(np.floor(s).astype(int), 0, max(h - 2, 0))
    c1 = np.minimum(c0 + 1, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    fu = u - c0
    fs = s - r0

    v00 = v[r0, c0]
    v01 = v[r0, c1]
    v10 = v[r1, c0]
    v11 = v[r1, c1]
    bottom = v00 + fu * (v01 - v00)
    top = v10 + fu * (v11 - v10)
    dist = bottom + fs * (top - bottom)

    grad = np.empty_like(p)
    grad[:, 0] = ((1 - fs) * (v01 - v00) + fs * (v11 - v10)) / cs
    grad[:, 1] = (top - bottom) / cs
    grad[~inside_u, 0] = 0.0
    grad[~inside_s, 1] = 0.0
    if single:
        return float(dist[0]), grad[0]
    return dist, grad


@dataclass(frozen=True)
class GridPath:
    waypoints: np.ndarray
    cost: float  # meters

    @property
    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)))


def inflate(grid: OccupancyGrid, inflation: float) -> OccupancyGrid:
    if inflation <= 0:
        return grid
    values = compute_sdf(grid).values
    return OccupancyGrid(grid.origin, grid.cell_size, values < inflation)


def downsample(grid: OccupancyGrid, factor: int) -> OccupancyGrid:
    """Coarse grid; a coarse cell is occupied if any of its fine cells is."""
    if factor < 1:
        raise ValueError("downsample factor must be >= 1")
    if factor == 1:
        return grid
    h, w = grid.cells.shape
    H, W = -(-h // factor), -(-w // factor)
    padded = np.zeros((H * factor, W * factor), dtype=bool)
    padded[:h, :w] = grid.cells
    coarse = padded.reshape(H, factor, W, factor).any(axis=(1, 3))
    return OccupancyGrid(grid.origin, grid.cell_size * factor, coarse)


_MOVES = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def grid_neighbors(cells: np.ndarray, row: int, col: int):
    """8-connected free neighbors with step costs; no corner cutting."""
    h, w = cells.shape
    for dr, dc in _MOVES:
        r, c = row + dr, col + dc
        if not (0 <= r < h and 0 <= c < w) or cells[r, c]:
            continue
        if dr and dc:
            if cells[row + dr, col] or cells[row, col + dc]:
                continue
            yield r, c, math.sqrt(2.0)
        else:
            yield r, c, 1.0


def astar_path(grid: OccupancyGrid, start, goal, downsample_factor: int = 4, inflation: float = 1.0) -> GridPath:
    """Minimal-cost 8-connected path on the inflated, coarsened grid."""
    coarse = downsample(inflate(grid, inflation), downsample_factor)
    cells = coarse.cells
    h, w = cells.shape
    endpoints = []
    for name, pt in (("start", start), ("goal", goal)):
        row, col = coarse.cell_of(pt)
        if not (0 <= row < h and 0 <= col < w):
            raise ValueError(f"{name} {tuple(pt)} lies outside the grid")
        if cells[row, col]:
            raise ValueError(f"{name} {tuple(pt)} is in collision on the search grid")
        endpoints.append((row, col))
    (sr, sc), (gr, gc) = endpoints

    def heuristic(r, c):
        return math.hypot(r - gr, c - gc)

    start_idx = sr * w + sc
    goal_idx = gr * w + gc
    g_cost = {start_idx: 0.0}
    parent = {start_idx: -1}
    closed = set()
    h0 = heuristic(sr, sc)
    heap = [(h0, h0, start_idx)]
    while heap:
        f, hv, idx = heapq.heappop(heap)
        if idx in closed:
            continue
        if idx == goal_idx:
            break
        closed.add(idx)
        row, col = divmod(idx, w)
        g = g_cost[idx]
        for r, c, step in grid_neighbors(cells, row, col):
            nidx = r * w + c
            if nidx in closed:
                continue
            ng = g + step
            if ng < g_cost.get(nidx, math.inf):
                g_cost[nidx] = ng
                parent[nidx] = idx
                hn = heuristic(r, c)
                heapq.heappush(heap, (ng + hn, hn, nidx))
    else:
        raise NoPathError(f"no path from {tuple(start)} to {tuple(goal)}")

    chain = []
    idx = goal_idx
    while idx != -1:
        chain.append(divmod(idx, w))
        idx = parent[idx]
    chain.reverse()
    rc = np.array(chain, dtype=float)
    cs = coarse.cell_size
    waypoints = np.column_stack(
        [coarse.origin[0] + (rc[:, 1] + 0.5) * cs, coarse.origin[1] + (rc[:, 0] + 0.5) * cs]
    )
    return GridPath(waypoints, g_cost[goal_idx] * cs)


def path_to_trajectory(path, N: int, t0: float, tN: float) -> SupportTrajectory:
    """Constant-speed support trajectory resampled along a polyline.

    ``path`` is a :class:`GridPath` or an (n, 2) array of waypoints.
    """
    wp = np.asarray(getattr(path, "waypoints", path), dtype=float)
    if wp.ndim != 2 or wp.shape[0] < 2:
        raise ValueError("path needs at least two waypoints")
    if N < 1:
        raise ValueError("N must be >= 1")
    seg = np.diff(wp, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    keep = seg_len > 0
    d = wp.shape[1]
    states = np.zeros((N + 1, 2 * d))
    if not keep.any():
        states[:, :d] = wp[0]
        return SupportTrajectory(t0, tN, states)

    pts = np.vstack([wp[:1], wp[1:][keep]])
    seg, seg_len = seg[keep], seg_len[keep]
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total = cum[-1]
    s = total * np.arange(N + 1) / N
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(seg_len) - 1)
    frac = (s - cum[idx]) / seg_len[idx]
    pos = pts[idx] + frac[:, None] * seg[idx]
    pos[0] = wp[0]
    pos[-1] = wp[-1]
    tangent = seg[idx] / seg_len[idx, None]
    states[:, :d] = pos
    states[:, d:] = total / (tN - t0) * tangent
    return SupportTrajectory(t0, tN, states)


def load_map(path) -> OccupancyGrid:
    """Read a text map: header ``width height cell_size origin_x origin_y``.

    The first text row is the top (highest y) row of the grid.
    """
    lines = [ln.rstrip("\n") for ln in Path(path).read_text().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty map file")
    head = lines[0].split()
    if len(head) != 5:
        raise ValueError(f"{path}: header must be 'width height cell_size origin_x origin_y'")
    width, height = int(head[0]), int(head[1])
    cell_size, ox, oy = float(head[2]), float(head[3]), float(head[4])
    rows = [ln.strip() for ln in lines[1:]]
    if len(rows) != height or any(len(r) != width for r in rows):
        raise ValueError(f"{path}: expected {height} rows of {width} characters")
    bad = set("".join(rows)) - {"#", "."}
    if bad:
        raise ValueError(f"{path}: unexpected map characters {sorted(bad)}")
    cells = np.array([[ch == "#" for ch in r] for r in rows], dtype=bool)[::-1]
    return OccupancyGrid((ox, oy), cell_size, cells)


def dump_map(grid: OccupancyGrid) -> str:
    head = f"{grid.width} {grid.height} {grid.cell_size!r} {grid.origin[0]!r} {grid.origin[1]!r}"
    rows = ["".join("#" if c else "." for c in row) for row in grid.cells[::-1]]
    return "\n".join([head, *rows]) + "\n"


def save_map(grid: OccupancyGrid, path) -> None:
    Path(path).write_text(dump_map(grid))
