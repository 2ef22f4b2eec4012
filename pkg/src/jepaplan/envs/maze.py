"""Maze environment: a 4x4 grid of cells, half of them open, point-mass agent.

Actions are target velocities. Each step runs a few substeps of first-order
velocity relaxation (inertia) with axis-separated wall collisions that zero
the blocked velocity component. Observations are 3-channel images plus the
agent velocity as proprioception.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigError
from .geometry import Rect, axis_move_limit, disc_coverage, rect_coverage, rect_distance

GRID_N = 4

# Fraction of open cells must stay within [0.50, 0.60]: 8 or 9 of 16.
_OPEN_COUNTS = (8, 9)


@dataclass
class MazeWorld:
    """One maze instance: layout plus agent state (position, velocity)."""

    grid: np.ndarray  # (4, 4) uint8, 1 = open cell, index [ix, iy]
    cell_size: float = 16.0
    agent_radius: float = 2.0
    max_speed: float = 5.0
    gain: float = 0.5
    substeps: int = 4
    dt: float = 0.25
    pos: np.ndarray = field(default_factory=lambda: np.zeros(2))
    vel: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=np.uint8)
        if self.grid.shape != (GRID_N, GRID_N):
            raise ConfigError("maze grid must be 4x4")
        n_open = int(self.grid.sum())
        if n_open not in _OPEN_COUNTS:
            raise ConfigError("maze must have 8 or 9 open cells")
        if not layout_connected(self.grid):
            raise ConfigError("maze open cells must form one connected component")
        self.pos = np.asarray(self.pos, dtype=np.float64)
        self.vel = np.asarray(self.vel, dtype=np.float64)

    @property
    def side(self) -> float:
        return GRID_N * self.cell_size

    @property
    def success_threshold(self) -> float:
        return 0.5 * self.cell_size

    @property
    def closed_rects(self) -> list[Rect]:
        cs = self.cell_size
        return [
            (ix * cs, (ix + 1) * cs, iy * cs, (iy + 1) * cs)
            for ix in range(GRID_N)
            for iy in range(GRID_N)
            if not self.grid[ix, iy]
        ]

    def to_json(self) -> dict:
        return {
            "kind": "maze",
            "grid": self.grid.astype(int).tolist(),
            "cell_size": self.cell_size,
            "agent_radius": self.agent_radius,
            "max_speed": self.max_speed,
            "gain": self.gain,
            "substeps": self.substeps,
            "dt": self.dt,
            "pos": [float(self.pos[0]), float(self.pos[1])],
            "vel": [float(self.vel[0]), float(self.vel[1])],
        }

    @classmethod
    def from_json(cls, data: dict) -> "MazeWorld":
        fields_ = {k: v for k, v in data.items() if k != "kind"}
        fields_["grid"] = np.asarray(fields_["grid"], dtype=np.uint8)
        fields_["pos"] = np.asarray(fields_["pos"], dtype=np.float64)
        fields_["vel"] = np.asarray(fields_["vel"], dtype=np.float64)
        return cls(**fields_)


def layout_connected(grid: np.ndarray) -> bool:
    """Flood fill over 4-neighbours: all open cells reachable from the first."""
    open_cells = [(ix, iy) for ix in range(GRID_N) for iy in range(GRID_N) if grid[ix, iy]]
    if not open_cells:
        return False
    seen = {open_cells[0]}
    queue = deque(seen)
    while queue:
        cx, cy = queue.popleft()
        for nx, ny in ((cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)):
            if 0 <= nx < GRID_N and 0 <= ny < GRID_N and grid[nx, ny] and (nx, ny) not in seen:
                seen.add((nx, ny))
                queue.append((nx, ny))
    return len(seen) == len(open_cells)


def sample_layout(rng: np.random.Generator) -> np.ndarray:
    """Grow a random connected set of 8 or 9 open cells."""
    target = int(rng.choice(_OPEN_COUNTS))
    grid = np.zeros((GRID_N, GRID_N), dtype=np.uint8)
    start = (int(rng.integers(GRID_N)), int(rng.integers(GRID_N)))
    grid[start] = 1
    frontier = {start}
    while int(grid.sum()) < target:
        candidates = sorted(
            {
                (nx, ny)
                for cx, cy in frontier
                for nx, ny in ((cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1))
                if 0 <= nx < GRID_N and 0 <= ny < GRID_N and not grid[nx, ny]
            }
        )
        pick = candidates[int(rng.integers(len(candidates)))]
        grid[pick] = 1
        frontier.add(pick)
    return grid


def sample_layout_pools(
    seed: int, n_train: int = 5, n_eval: int = 5, max_tries: int = 10000
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Distinct layouts split into disjoint train and eval pools."""
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x6D617A65)))
    layouts: list[np.ndarray] = []
    keys: set[bytes] = set()
    for _ in range(max_tries):
        if len(layouts) == n_train + n_eval:
            break
        grid = sample_layout(rng)
        key = grid.tobytes()
        if key not in keys:
            keys.add(key)
            layouts.append(grid)
    else:
        raise ConfigError("could not sample enough distinct maze layouts")
    return layouts[:n_train], layouts[n_train:]


def maze_legal(world: MazeWorld, pos: np.ndarray, tol: float = 1e-9) -> bool:
    r = world.agent_radius
    if not (r - tol <= pos[0] <= world.side - r + tol):
        return False
    if not (r - tol <= pos[1] <= world.side - r + tol):
        return False
    return all(rect_distance(pos, rect) >= r - tol for rect in world.closed_rects)


def maze_step(world: MazeWorld, action: np.ndarray) -> MazeWorld:
    """Relax velocity toward the target and integrate with wall collisions.

    Per substep: v += gain * (a - v), then the position moves axis by axis;
    a blocked axis keeps its coordinate clamped at the wall and has its
    velocity component zeroed.
    """
    a = np.asarray(action, dtype=np.float64)
    speed = float(np.hypot(a[0], a[1]))
    if speed > world.max_speed:
        a = a * (world.max_speed / speed)
    pos = world.pos.copy()
    vel = world.vel.copy()
    rects = world.closed_rects
    r = world.agent_radius
    lo, hi = 0.0, world.side
    for _ in range(world.substeps):
        vel += world.gain * (a - vel)
        for axis in (0, 1):
            new_c, hit = axis_move_limit(pos, axis, vel[axis] * world.dt, rects, r, lo, hi)
            pos[axis] = new_c
            if hit:
                vel[axis] = 0.0
    return replace(world, pos=pos, vel=vel)


def render_maze(world: MazeWorld, pos: np.ndarray, res: int | None = None) -> np.ndarray:
    """3 x res x res image: walls in red+blue, agent as a green AA disc."""
    if res is None:
        res = int(round(world.side))
    scale = res / world.side
    walls = np.zeros((res, res), dtype=np.float32)
    for x0, x1, y0, y1 in world.closed_rects:
        walls += rect_coverage(res, (x0 * scale, x1 * scale, y0 * scale, y1 * scale))
    np.clip(walls, 0.0, 1.0, out=walls)
    agent = disc_coverage(res, np.asarray(pos, dtype=np.float64) * scale, world.agent_radius * scale)
    return np.stack([0.5 * walls, agent, walls])


def sample_maze_world(
    rng: np.random.Generator,
    layout: np.ndarray | None = None,
    cell_size: float = 16.0,
    agent_radius: float = 2.0,
) -> MazeWorld:
    if layout is None:
        layout = sample_layout(rng)
    world = MazeWorld(grid=layout, cell_size=cell_size, agent_radius=agent_radius)
    world.pos = sample_maze_position(world, rng)
    world.vel = np.zeros(2)
    return world


def sample_maze_position(
    world: MazeWorld, rng: np.random.Generator, max_tries: int = 10000
) -> np.ndarray:
    r = world.agent_radius
    for _ in range(max_tries):
        p = rng.uniform(r, world.side - r, size=2)
        if maze_legal(world, p):
            return p
    raise ConfigError("could not sample a legal maze position")


def cell_of(world: MazeWorld, pos: np.ndarray) -> tuple[int, int]:
    ix = min(GRID_N - 1, max(0, int(pos[0] // world.cell_size)))
    iy = min(GRID_N - 1, max(0, int(pos[1] // world.cell_size)))
    return ix, iy


def cell_distance(grid: np.ndarray, a: tuple[int, int], b: tuple[int, int]) -> int:
    """BFS hop count between cells over open 4-neighbours; -1 if unreachable."""
    if not (grid[a] and grid[b]):
        return -1
    dist = {a: 0}
    queue = deque([a])
    while queue:
        cur = queue.popleft()
        if cur == b:
            return dist[cur]
        cx, cy = cur
        for nxt in ((cx + 1, cy), (cx - 1, cy), (cx, cy + 1), (cx, cy - 1)):
            nx, ny = nxt
            if 0 <= nx < GRID_N and 0 <= ny < GRID_N and grid[nx, ny] and nxt not in dist:
                dist[nxt] = dist[cur] + 1
                queue.append(nxt)
    return -1
