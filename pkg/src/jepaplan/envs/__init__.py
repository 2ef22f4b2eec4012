from .geometry import (
    Rect,
    axis_move_limit,
    disc_coverage,
    rect_coverage,
    rect_distance,
    segment_bounds_exit,
    segment_rect_entry,
)
from .maze import (
    GRID_N,
    MazeWorld,
    cell_distance,
    cell_of,
    layout_connected,
    maze_legal,
    maze_step,
    render_maze,
    sample_layout,
    sample_layout_pools,
    sample_maze_position,
    sample_maze_world,
)
from .wall import (
    WallWorld,
    crossed_door,
    render_wall,
    sample_wall_position,
    sample_wall_world,
    wall_legal,
    wall_step,
)

__all__ = [
    "GRID_N",
    "MazeWorld",
    "Rect",
    "WallWorld",
    "axis_move_limit",
    "cell_distance",
    "cell_of",
    "crossed_door",
    "disc_coverage",
    "layout_connected",
    "maze_legal",
    "maze_step",
    "rect_coverage",
    "rect_distance",
    "render_maze",
    "render_wall",
    "sample_layout",
    "sample_layout_pools",
    "sample_maze_position",
    "sample_maze_world",
    "sample_wall_position",
    "sample_wall_world",
    "segment_bounds_exit",
    "segment_rect_entry",
    "wall_legal",
    "wall_step",
]
