"""Two-room environment: a square arena split by a wall with a door.

Wall and door placement are drawn once per instance. The agent is a disc that
executes displacement actions; motion stops at first contact (no sliding), the
door gap is passable. Observations are 2-channel images: agent disc and walls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .geometry import (
    Rect,
    disc_coverage,
    rect_coverage,
    rect_distance,
    segment_bounds_exit,
    segment_rect_entry,
)

# Back-off along the motion direction after a contact, in arena units.
_CONTACT_SLACK = 1e-9


@dataclass(frozen=True)
class WallWorld:
    """Geometry of one wall-environment instance (arena units == pixels)."""

    side: float = 64.0
    wall_x: float = 32.0
    door_center_y: float = 32.0
    door_half_width: float = 6.0
    agent_radius: float = 1.5
    wall_half_thickness: float = 0.5
    success_threshold: float = 2.5

    def __post_init__(self) -> None:
        if not 0 < self.wall_x < self.side:
            raise ConfigError("wall_x must lie strictly inside the arena")
        lo = self.door_center_y - self.door_half_width
        hi = self.door_center_y + self.door_half_width
        if not (0 < lo and hi < self.side):
            raise ConfigError("door opening must lie strictly inside the vertical extent")
        if self.door_half_width <= self.agent_radius:
            raise ConfigError("door must be wider than the agent")

    @property
    def wall_rects(self) -> list[Rect]:
        x0 = self.wall_x - self.wall_half_thickness
        x1 = self.wall_x + self.wall_half_thickness
        return [
            (x0, x1, 0.0, self.door_center_y - self.door_half_width),
            (x0, x1, self.door_center_y + self.door_half_width, self.side),
        ]

    def to_json(self) -> dict:
        return {
            "kind": "wall",
            "side": self.side,
            "wall_x": self.wall_x,
            "door_center_y": self.door_center_y,
            "door_half_width": self.door_half_width,
            "agent_radius": self.agent_radius,
            "wall_half_thickness": self.wall_half_thickness,
            "success_threshold": self.success_threshold,
        }

    @classmethod
    def from_json(cls, data: dict) -> "WallWorld":
        fields = {k: v for k, v in data.items() if k != "kind"}
        return cls(**fields)


def wall_legal(world: WallWorld, pos: np.ndarray, tol: float = 1e-9) -> bool:
    r = world.agent_radius
    if not (r - tol <= pos[0] <= world.side - r + tol):
        return False
    if not (r - tol <= pos[1] <= world.side - r + tol):
        return False
    return all(rect_distance(pos, rect) >= r - tol for rect in world.wall_rects)


def wall_step(world: WallWorld, pos: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Move by `action`; truncate at first contact with wall or boundary.

    Sliding is disallowed: the step ends where the disc first touches a
    barrier. Illegal motion is clipped, never raised.
    """
    pos = np.asarray(pos, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    norm = float(np.hypot(action[0], action[1]))
    if norm == 0.0:
        return pos.copy()
    r = world.agent_radius
    t_hit = segment_bounds_exit(pos, action, r, world.side - r)
    for rect in world.wall_rects:
        t_hit = min(t_hit, segment_rect_entry(pos, action, rect, r))
    if t_hit == float("inf") or t_hit >= 1.0:
        return pos + action
    t_safe = max(0.0, t_hit - _CONTACT_SLACK / norm)
    return pos + t_safe * action


def render_wall(world: WallWorld, pos: np.ndarray) -> np.ndarray:
    """2 x res x res image: channel 0 agent (AA disc), channel 1 walls."""
    res = int(round(world.side))
    agent = disc_coverage(res, np.asarray(pos, dtype=np.float64), world.agent_radius)
    walls = np.zeros((res, res), dtype=np.float32)
    for rect in world.wall_rects:
        walls += rect_coverage(res, rect)
    np.clip(walls, 0.0, 1.0, out=walls)
    return np.stack([agent, walls])


def sample_wall_world(
    rng: np.random.Generator,
    side: float = 64.0,
    wall_x_frac: tuple[float, float] = (0.3, 0.7),
    door_half_width_range: tuple[float, float] = (4.0, 8.0),
    agent_radius: float = 1.5,
    wall_half_thickness: float = 0.5,
    success_threshold: float = 2.5,
) -> WallWorld:
    """Draw wall and door placement for a fresh instance."""
    wall_x = rng.uniform(wall_x_frac[0] * side, wall_x_frac[1] * side)
    hw = rng.uniform(*door_half_width_range)
    pad = 1.0
    door_cy = rng.uniform(hw + pad, side - hw - pad)
    return WallWorld(
        side=side,
        wall_x=wall_x,
        door_center_y=door_cy,
        door_half_width=hw,
        agent_radius=agent_radius,
        wall_half_thickness=wall_half_thickness,
        success_threshold=success_threshold,
    )


def sample_wall_position(
    world: WallWorld,
    rng: np.random.Generator,
    side_of_wall: int | None = None,
    max_tries: int = 1000,
) -> np.ndarray:
    """Uniform legal position; optionally constrained left (-1) / right (+1) of the wall."""
    r = world.agent_radius
    for _ in range(max_tries):
        p = rng.uniform(r, world.side - r, size=2)
        if not wall_legal(world, p):
            continue
        if side_of_wall is not None and np.sign(p[0] - world.wall_x) != side_of_wall:
            continue
        return p
    raise ConfigError("could not sample a legal wall-environment position")


def crossed_door(world: WallWorld, poses: np.ndarray) -> bool:
    """True when the trajectory visits both sides of the wall plane."""
    sides = np.sign(poses[:, 0] - world.wall_x)
    return bool((sides > 0).any() and (sides < 0).any())
