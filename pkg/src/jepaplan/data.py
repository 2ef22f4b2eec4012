"""Offline trajectory datasets: generation, on-disk format, and batching.

A dataset is a directory holding `manifest.json` plus `data.bin`. The binary
file is a sequence of per-trajectory records, each little-endian FP32:
images (S,C,H,W), actions (S-1,2), poses (S,2), then velocities (S,2) for the
maze. All trajectories in a dataset share one shape, so records are
fixed-stride and the file is memory-mapped for reading.

Generation is seeded per (seed, slot, attempt) so parallel and serial
generation, or regeneration from the manifest alone, produce identical bytes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .envs import (
    MazeWorld,
    WallWorld,
    crossed_door,
    maze_step,
    render_maze,
    render_wall,
    sample_layout_pools,
    sample_maze_position,
    sample_wall_position,
    sample_wall_world,
    wall_step,
)
from .errors import ConfigError, DataError

MANIFEST_NAME = "manifest.json"
DATA_NAME = "data.bin"
SEGMENT_LEN = 16


# ---------------------------------------------------------------------------
# Generation configs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WallGenConfig:
    """Wall dataset generator settings. Defaults are the full-scale WS regime."""

    regime: str = "ws"
    n_trajectories: int = 1000
    n_states: int = 64
    side: float = 64.0
    agent_radius: float = 1.5
    wall_half_thickness: float = 0.5
    door_half_width_range: tuple[float, float] = (4.0, 8.0)
    wall_x_frac: tuple[float, float] = (0.3, 0.7)
    success_threshold: float = 2.5
    norm_mean: float = 1.0
    norm_sd: float = 0.4
    norm_clip: tuple[float, float] = (0.2, 1.8)
    kappa: float = 5.0
    crossing_quota: bool = True
    max_attempts: int = 1000

    @classmethod
    def for_regime(cls, regime: str, **overrides) -> "WallGenConfig":
        if regime == "ws":
            cfg = cls()
        elif regime == "wb":
            cfg = cls(regime="wb", norm_mean=2.0, norm_sd=0.8, norm_clip=(0.4, 3.6))
        else:
            raise ConfigError(f"unknown wall regime {regime!r} (expected ws or wb)")
        return replace(cfg, **overrides) if overrides else cfg


@dataclass(frozen=True)
class MazeGenConfig:
    """Maze dataset generator settings. Defaults are the full-scale regime."""

    n_trajectories: int = 1000
    n_states: int = 101
    cell_size: float = 16.0
    agent_radius: float = 2.0
    resolution: int = 64
    max_speed: float = 5.0
    n_train_layouts: int = 5
    n_eval_layouts: int = 5


# ---------------------------------------------------------------------------
# Dataset container
# ---------------------------------------------------------------------------


@dataclass
class Trajectory:
    observations: np.ndarray  # (S, C, H, W) float32
    actions: np.ndarray  # (S-1, 2) float32
    poses: np.ndarray  # (S, 2) float32
    proprio: np.ndarray | None  # (S, 2) float32, maze velocities
    world: WallWorld | MazeWorld
    crossed_door: bool | None


class TrajectoryDataset:
    """Memory-mapped view over a generated dataset directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        manifest_path = self.root / MANIFEST_NAME
        if not manifest_path.is_file():
            raise DataError(f"no dataset manifest at {manifest_path}")
        self.manifest = json.loads(manifest_path.read_text())
        if self.manifest.get("format") != "jepaplan-dataset":
            raise DataError(f"not a dataset manifest: {manifest_path}")
        blocks = self.manifest["blocks"]
        self._img_elems = int(blocks["images_elems"])
        self._act_elems = int(blocks["actions_elems"])
        self._pose_elems = int(blocks["poses_elems"])
        self._prop_elems = int(blocks["proprio_elems"])
        self._stride = self._img_elems + self._act_elems + self._pose_elems + self._prop_elems
        n_total = self._stride * self.n_trajectories
        data_path = self.root / self.manifest["data_file"]
        if not data_path.is_file():
            raise DataError(f"missing dataset payload {data_path}")
        if data_path.stat().st_size != 4 * n_total:
            raise DataError(
                f"dataset payload size mismatch: expected {4 * n_total} bytes, "
                f"found {data_path.stat().st_size}"
            )
        self._data = np.memmap(data_path, dtype="<f4", mode="r", shape=(n_total,))

    # -- manifest accessors --------------------------------------------------

    @property
    def env_kind(self) -> str:
        return self.manifest["env"]

    @property
    def regime(self) -> str:
        return self.manifest["regime"]

    @property
    def n_trajectories(self) -> int:
        return int(self.manifest["n_trajectories"])

    @property
    def n_states(self) -> int:
        return int(self.manifest["n_states"])

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.manifest["image_shape"])

    @property
    def has_proprio(self) -> bool:
        return self._prop_elems > 0

    def __len__(self) -> int:
        return self.n_trajectories

    # -- per-trajectory views -------------------------------------------------

    def _record(self, k: int) -> np.ndarray:
        if not 0 <= k < self.n_trajectories:
            raise DataError(f"trajectory index {k} out of range")
        off = k * self._stride
        return self._data[off : off + self._stride]

    def images(self, k: int) -> np.ndarray:
        s = self.n_states
        return self._record(k)[: self._img_elems].reshape((s, *self.image_shape))

    def actions(self, k: int) -> np.ndarray:
        off = self._img_elems
        return self._record(k)[off : off + self._act_elems].reshape((self.n_states - 1, 2))

    def poses(self, k: int) -> np.ndarray:
        off = self._img_elems + self._act_elems
        return self._record(k)[off : off + self._pose_elems].reshape((self.n_states, 2))

    def proprio(self, k: int) -> np.ndarray | None:
        if not self.has_proprio:
            return None
        off = self._img_elems + self._act_elems + self._pose_elems
        return self._record(k)[off:].reshape((self.n_states, 2))

    def world(self, k: int) -> WallWorld | MazeWorld:
        data = self.manifest["worlds"][k]
        if data["kind"] == "wall":
            return WallWorld.from_json(data)
        return MazeWorld.from_json(data)

    def crossed(self, k: int) -> bool | None:
        flags = self.manifest.get("crossed")
        return None if flags is None else bool(flags[k])

    def trajectory(self, k: int) -> Trajectory:
        return Trajectory(
            observations=self.images(k),
            actions=self.actions(k),
            poses=self.poses(k),
            proprio=self.proprio(k),
            world=self.world(k),
            crossed_door=self.crossed(k),
        )


def _write_manifest(path: Path, manifest: dict) -> None:
    path.write_text(json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n")


def save_dataset(ds: TrajectoryDataset, out_dir: str | Path) -> Path:
    """Rewrite a loaded dataset to a new directory, record by record."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(out / MANIFEST_NAME, ds.manifest)
    with open(out / ds.manifest["data_file"], "wb") as fh:
        for k in range(len(ds)):
            fh.write(ds._record(k).tobytes())
    return out


def load_dataset(path: str | Path) -> TrajectoryDataset:
    return TrajectoryDataset(path)


# ---------------------------------------------------------------------------
# Wall generation
# ---------------------------------------------------------------------------


def _slot_rng(seed: int, slot: int, attempt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((int(seed), int(slot), int(attempt))))


def wall_rollout(cfg: WallGenConfig, rng: np.random.Generator):
    """One trajectory: fixed base direction, von Mises heading noise per step."""
    world = sample_wall_world(
        rng,
        side=cfg.side,
        wall_x_frac=cfg.wall_x_frac,
        door_half_width_range=cfg.door_half_width_range,
        agent_radius=cfg.agent_radius,
        wall_half_thickness=cfg.wall_half_thickness,
        success_threshold=cfg.success_threshold,
    )
    pos = sample_wall_position(world, rng)
    base = rng.uniform(0.0, 2.0 * np.pi)
    poses = np.empty((cfg.n_states, 2))
    actions = np.empty((cfg.n_states - 1, 2))
    poses[0] = pos
    for t in range(cfg.n_states - 1):
        theta = base + rng.vonmises(0.0, cfg.kappa)
        norm = float(np.clip(rng.normal(cfg.norm_mean, cfg.norm_sd), *cfg.norm_clip))
        action = norm * np.array([np.cos(theta), np.sin(theta)])
        actions[t] = action
        pos = wall_step(world, pos, action)
        poses[t + 1] = pos
    return world, poses, actions, base


def generate_wall_dataset(
    out_dir: str | Path, seed: int, cfg: WallGenConfig | None = None
) -> TrajectoryDataset:
    """Generate and persist a wall dataset; half the slots must cross the door.

    Even slots take the first attempt whose trajectory crosses, odd slots the
    first that does not, so the quota is exact and order-independent.
    """
    cfg = cfg or WallGenConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    res = int(round(cfg.side))
    worlds, crossed_flags, bases, attempts_used = [], [], [], []
    with open(out / DATA_NAME, "wb") as fh:
        for slot in range(cfg.n_trajectories):
            want_cross = cfg.crossing_quota and slot % 2 == 0
            for attempt in range(cfg.max_attempts):
                rng = _slot_rng(seed, slot, attempt)
                world, poses, actions, base = wall_rollout(cfg, rng)
                crossed = crossed_door(world, poses)
                if not cfg.crossing_quota or crossed == want_cross:
                    break
            else:
                raise DataError(
                    f"door-crossing quota unreachable for slot {slot} "
                    f"within {cfg.max_attempts} attempts"
                )
            images = np.stack([render_wall(world, p) for p in poses])
            fh.write(images.astype("<f4").tobytes())
            fh.write(actions.astype("<f4").tobytes())
            fh.write(poses.astype("<f4").tobytes())
            worlds.append(world.to_json())
            crossed_flags.append(bool(crossed))
            bases.append(float(base))
            attempts_used.append(attempt + 1)
    s = cfg.n_states
    manifest = {
        "format": "jepaplan-dataset",
        "version": 1,
        "env": "wall",
        "regime": cfg.regime,
        "seed": int(seed),
        "n_trajectories": cfg.n_trajectories,
        "n_states": s,
        "image_shape": [2, res, res],
        "action_dim": 2,
        "generator": {
            "scheme": "per-slot attempt-indexed rejection",
            "config": {
                "side": cfg.side,
                "agent_radius": cfg.agent_radius,
                "wall_half_thickness": cfg.wall_half_thickness,
                "door_half_width_range": list(cfg.door_half_width_range),
                "wall_x_frac": list(cfg.wall_x_frac),
                "success_threshold": cfg.success_threshold,
                "norm_mean": cfg.norm_mean,
                "norm_sd": cfg.norm_sd,
                "norm_clip": list(cfg.norm_clip),
                "kappa": cfg.kappa,
                "crossing_quota": cfg.crossing_quota,
            },
        },
        "blocks": {
            "images_elems": s * 2 * res * res,
            "actions_elems": (s - 1) * 2,
            "poses_elems": s * 2,
            "proprio_elems": 0,
        },
        "data_file": DATA_NAME,
        "worlds": worlds,
        "crossed": crossed_flags,
        "base_directions": bases,
        "attempts": attempts_used,
        "counts": {
            "crossed": int(sum(crossed_flags)),
            "not_crossed": int(len(crossed_flags) - sum(crossed_flags)),
        },
    }
    _write_manifest(out / MANIFEST_NAME, manifest)
    return TrajectoryDataset(out)


# ---------------------------------------------------------------------------
# Maze generation
# ---------------------------------------------------------------------------


def maze_rollout(cfg: MazeGenConfig, layout: np.ndarray, rng: np.random.Generator):
    """One trajectory: per-step random target velocity, norm uniform in [0, max)."""
    world = MazeWorld(
        grid=layout,
        cell_size=cfg.cell_size,
        agent_radius=cfg.agent_radius,
        max_speed=cfg.max_speed,
    )
    world.pos = sample_maze_position(world, rng)
    world.vel = np.zeros(2)
    poses = np.empty((cfg.n_states, 2))
    vels = np.empty((cfg.n_states, 2))
    actions = np.empty((cfg.n_states - 1, 2))
    poses[0], vels[0] = world.pos, world.vel
    for t in range(cfg.n_states - 1):
        theta = rng.uniform(0.0, 2.0 * np.pi)
        norm = rng.uniform(0.0, cfg.max_speed)
        action = norm * np.array([np.cos(theta), np.sin(theta)])
        actions[t] = action
        world = maze_step(world, action)
        poses[t + 1], vels[t + 1] = world.pos, world.vel
    return world, poses, vels, actions


def generate_maze_dataset(
    out_dir: str | Path, seed: int, cfg: MazeGenConfig | None = None
) -> TrajectoryDataset:
    """Generate and persist a maze dataset over the 5 training layouts."""
    cfg = cfg or MazeGenConfig()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_layouts, eval_layouts = sample_layout_pools(
        seed, n_train=cfg.n_train_layouts, n_eval=cfg.n_eval_layouts
    )
    worlds, layout_index = [], []
    with open(out / DATA_NAME, "wb") as fh:
        for slot in range(cfg.n_trajectories):
            idx = slot % cfg.n_train_layouts
            rng = _slot_rng(seed, slot, 0)
            world, poses, vels, actions = maze_rollout(cfg, train_layouts[idx], rng)
            images = np.stack(
                [render_maze(world, p, res=cfg.resolution) for p in poses]
            )
            fh.write(images.astype("<f4").tobytes())
            fh.write(actions.astype("<f4").tobytes())
            fh.write(poses.astype("<f4").tobytes())
            fh.write(vels.astype("<f4").tobytes())
            start_world = world.to_json()
            start_world["pos"] = [float(poses[0, 0]), float(poses[0, 1])]
            start_world["vel"] = [float(vels[0, 0]), float(vels[0, 1])]
            worlds.append(start_world)
            layout_index.append(idx)
    s = cfg.n_states
    manifest = {
        "format": "jepaplan-dataset",
        "version": 1,
        "env": "maze",
        "regime": "maze",
        "seed": int(seed),
        "n_trajectories": cfg.n_trajectories,
        "n_states": s,
        "image_shape": [3, cfg.resolution, cfg.resolution],
        "action_dim": 2,
        "generator": {
            "scheme": "per-slot seeded",
            "config": {
                "cell_size": cfg.cell_size,
                "agent_radius": cfg.agent_radius,
                "resolution": cfg.resolution,
                "max_speed": cfg.max_speed,
                "n_train_layouts": cfg.n_train_layouts,
                "n_eval_layouts": cfg.n_eval_layouts,
            },
        },
        "blocks": {
            "images_elems": s * 3 * cfg.resolution * cfg.resolution,
            "actions_elems": (s - 1) * 2,
            "poses_elems": s * 2,
            "proprio_elems": s * 2,
        },
        "data_file": DATA_NAME,
        "worlds": worlds,
        "layout_index": layout_index,
        "layouts_train": [g.astype(int).tolist() for g in train_layouts],
        "layouts_eval": [g.astype(int).tolist() for g in eval_layouts],
        "counts": {"layouts": cfg.n_train_layouts},
    }
    _write_manifest(out / MANIFEST_NAME, manifest)
    return TrajectoryDataset(out)


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    """B contiguous length-L windows plus goal candidates for the value loss.

    Goals come in two sets of B: the final state of each window's source
    trajectory, and a uniform random state of the batch itself (referenced by
    (row, position) into the windows, so its latent can be gathered instead of
    re-encoded). `state_ids` and goal ids are global (trajectory, time) pairs;
    id equality is what "state equals goal" means for the reward indicator.
    """

    images: torch.Tensor  # (B, L, C, H, W)
    actions: torch.Tensor  # (B, L-1, 2)
    proprio: torch.Tensor | None  # (B, L, 2)
    state_ids: np.ndarray  # (B, L, 2) int64
    goal_final_images: torch.Tensor  # (B, C, H, W)
    goal_final_proprio: torch.Tensor | None  # (B, 2)
    goal_final_ids: np.ndarray  # (B, 2) int64
    goal_random_src: np.ndarray  # (B, 2) int64 (batch row, window position)
    goal_random_ids: np.ndarray  # (B, 2) int64

    @property
    def batch_size(self) -> int:
        return self.images.shape[0]

    @property
    def segment_len(self) -> int:
        return self.images.shape[1]


def sample_batch(
    ds: TrajectoryDataset,
    batch_size: int,
    rng: np.random.Generator,
    segment_len: int = SEGMENT_LEN,
) -> Batch:
    """Uniform contiguous windows with trajectory-final and random batch goals."""
    if len(ds) == 0:
        raise DataError("cannot sample from an empty dataset")
    s = ds.n_states
    if s < segment_len:
        raise DataError(f"trajectories too short ({s}) for segment length {segment_len}")
    traj = rng.integers(0, len(ds), size=batch_size)
    start = rng.integers(0, s - segment_len + 1, size=batch_size)
    images = np.stack([ds.images(int(k))[b : b + segment_len] for k, b in zip(traj, start)])
    actions = np.stack(
        [ds.actions(int(k))[b : b + segment_len - 1] for k, b in zip(traj, start)]
    )
    state_ids = np.stack(
        np.broadcast_arrays(
            traj[:, None].astype(np.int64),
            (start[:, None] + np.arange(segment_len)[None, :]).astype(np.int64),
        ),
        axis=-1,
    )
    proprio = None
    goal_final_proprio = None
    if ds.has_proprio:
        proprio_np = np.stack(
            [ds.proprio(int(k))[b : b + segment_len] for k, b in zip(traj, start)]
        )
        proprio = torch.from_numpy(np.ascontiguousarray(proprio_np))
        goal_final_proprio = torch.from_numpy(
            np.stack([ds.proprio(int(k))[s - 1] for k in traj])
        )
    goal_final_images = torch.from_numpy(np.stack([ds.images(int(k))[s - 1] for k in traj]))
    goal_final_ids = np.stack(
        [traj.astype(np.int64), np.full(batch_size, s - 1, dtype=np.int64)], axis=-1
    )
    rand_row = rng.integers(0, batch_size, size=batch_size)
    rand_pos = rng.integers(0, segment_len, size=batch_size)
    goal_random_src = np.stack(
        [rand_row.astype(np.int64), rand_pos.astype(np.int64)], axis=-1
    )
    goal_random_ids = state_ids[rand_row, rand_pos]
    return Batch(
        images=torch.from_numpy(np.ascontiguousarray(images)),
        actions=torch.from_numpy(np.ascontiguousarray(actions)),
        proprio=proprio,
        state_ids=state_ids,
        goal_final_images=goal_final_images,
        goal_final_proprio=goal_final_proprio,
        goal_final_ids=goal_final_ids,
        goal_random_src=goal_random_src,
        goal_random_ids=goal_random_ids,
    )
