"""MPC over latent rollouts with an MPPI action-sequence optimizer.

The planner encodes the current observation, rolls candidate action
sequences through the predictor, scores them by summed latent distance to
the goal embedding, and executes the head of the softmax-averaged sequence.
Replanning shifts the mean sequence one step (warm start) and re-optimizes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .envs import MazeWorld, WallWorld, maze_step, render_maze, render_wall, wall_step
from .errors import ConfigError, NumericError

# ---------------------------------------------------------------------------
# Config and result types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlanConfig:
    horizon: int = 96
    total_steps: int = 200
    num_samples: int = 2000
    sigma: float = 12.0
    temperature: float = 0.005
    action_bound: float = 1.8  # per-component box, actions clipped to [-b, b]
    replan_interval: int = 1
    n_opt: int = 1  # MPPI iterations per replan after the burn-in
    burn_in: int = 10  # MPPI iterations before the first action
    success_threshold: float = 2.5

    def __post_init__(self) -> None:
        if self.horizon < 1 or self.total_steps < 1:
            raise ConfigError("horizon and total_steps must be positive")
        if self.num_samples < 1:
            raise ConfigError("num_samples must be at least 1")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if self.sigma < 0 or self.action_bound <= 0:
            raise ConfigError("sigma must be >= 0 and action_bound > 0")
        if self.replan_interval < 1 or self.n_opt < 1 or self.burn_in < 0:
            raise ConfigError("replan_interval/n_opt must be >= 1, burn_in >= 0")

    @classmethod
    def for_env(cls, kind: str, regime: str | None = None, **overrides) -> "PlanConfig":
        """Benchmark defaults per environment and data regime."""
        if kind == "wall":
            if regime == "wb":
                cfg = cls(horizon=64, total_steps=64, action_bound=3.6)
            else:
                cfg = cls()
        elif kind == "maze":
            cfg = cls(horizon=100, total_steps=200, num_samples=500, sigma=5.0,
                      temperature=0.0025, action_bound=5.0, success_threshold=8.0)
        else:
            raise ConfigError(f"unknown environment kind {kind!r}")
        return replace(cfg, **overrides) if overrides else cfg


@dataclass
class PlanResult:
    success: bool
    steps_to_goal: int | None
    poses: np.ndarray  # (T+1, 2) including the start
    executed_actions: np.ndarray  # (T, 2)
    best_costs: list[float]  # min sampled cost at each replan
    goal: tuple[float, float] = (0.0, 0.0)
    seed: int | None = None
    env: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "success": bool(self.success),
            "steps_to_goal": self.steps_to_goal,
            "poses": np.asarray(self.poses, dtype=np.float64).tolist(),
            "executed_actions": np.asarray(self.executed_actions,
                                           dtype=np.float64).tolist(),
            "best_costs": [float(c) for c in self.best_costs],
            "goal": [float(self.goal[0]), float(self.goal[1])],
            "seed": self.seed,
            "env": self.env,
        }

    @classmethod
    def from_json(cls, data: dict) -> "PlanResult":
        return cls(
            success=bool(data["success"]),
            steps_to_goal=data["steps_to_goal"],
            poses=np.asarray(data["poses"], dtype=np.float64),
            executed_actions=np.asarray(data["executed_actions"], dtype=np.float64),
            best_costs=[float(c) for c in data["best_costs"]],
            goal=tuple(data["goal"]),
            seed=data.get("seed"),
            env=data.get("env", {}),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PlanResult":
        return cls.from_json(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# Environment sessions: uniform stepping/rendering over both environments
# ---------------------------------------------------------------------------


class WallSession:
    kind = "wall"

    def __init__(self, world: WallWorld, start):
        self.world = world
        self.pos = np.asarray(start, dtype=np.float64).copy()

    def observe(self) -> tuple[np.ndarray, np.ndarray | None]:
        return render_wall(self.world, self.pos), None

    def render_pose(self, pose) -> tuple[np.ndarray, np.ndarray | None]:
        return render_wall(self.world, np.asarray(pose, dtype=np.float64)), None

    def step(self, action) -> None:
        self.pos = wall_step(self.world, self.pos, np.asarray(action, dtype=np.float64))

    def pose(self) -> np.ndarray:
        return self.pos.copy()

    def env_json(self) -> dict:
        return {"kind": "wall", "world": self.world.to_json()}


class MazeSession:
    kind = "maze"

    def __init__(self, world: MazeWorld, start, resolution: int | None = None):
        start = np.asarray(start, dtype=np.float64)
        self.world = replace(world, pos=start, vel=np.zeros(2))
        self.resolution = resolution

    def observe(self) -> tuple[np.ndarray, np.ndarray | None]:
        img = render_maze(self.world, self.world.pos, res=self.resolution)
        return img, self.world.vel.astype(np.float32).copy()

    def render_pose(self, pose) -> tuple[np.ndarray, np.ndarray | None]:
        pose = np.asarray(pose, dtype=np.float64)
        # A goal observation shows the agent at rest.
        return render_maze(self.world, pose, res=self.resolution), np.zeros(2, np.float32)

    def step(self, action) -> None:
        self.world = maze_step(self.world, np.asarray(action, dtype=np.float64))

    def pose(self) -> np.ndarray:
        return self.world.pos.copy()

    def env_json(self) -> dict:
        return {"kind": "maze", "world": self.world.to_json(),
                "resolution": self.resolution}


def make_session(env_json: dict, start) -> WallSession | MazeSession:
    kind = env_json.get("kind")
    if kind == "wall":
        return WallSession(WallWorld.from_json(env_json["world"]), start)
    if kind == "maze":
        return MazeSession(MazeWorld.from_json(env_json["world"]), start,
                           resolution=env_json.get("resolution"))
    raise ConfigError(f"unknown environment kind {kind!r}")


# ---------------------------------------------------------------------------
# Costs and MPPI
# ---------------------------------------------------------------------------


def rollout_cost(model, z0: torch.Tensor, actions: torch.Tensor,
                 z_goal: torch.Tensor) -> torch.Tensor:
    """Summed latent distance to goal over an open-loop rollout.

    z0 (D,) or (K, D); actions (K, H, 2); z_goal (D,). Returns (K,) costs:
    sum_t d(z_hat_t -> z_goal) for t = 1..H with unit weights; the distance
    is the negated model value, so quasimetric heads see the predicted state
    as the first argument.
    """
    if actions.dim() != 3:
        raise ConfigError(f"actions must be (K, H, 2), got {tuple(actions.shape)}")
    k = actions.shape[0]
    if z0.dim() == 1:
        z0 = z0.unsqueeze(0).expand(k, -1)
    with torch.no_grad():
        zs = model.rollout(z0, actions)  # (K, H+1, D)
        values = model.value(zs[:, 1:], z_goal.reshape(1, 1, -1))
    return -values.sum(dim=1)


def mppi_step(
    cost_fn, mean_seq: np.ndarray, cfg: PlanConfig, rng: np.random.Generator
) -> tuple[np.ndarray, dict]:
    """One MPPI update of the mean action sequence.

    Samples K perturbations of the mean, clips to the action box, scores them
    with cost_fn, and returns the softmax(-cost/temperature) average. Info
    carries per-sample costs and weights plus the best sampled cost.
    """
    h = mean_seq.shape[0]
    eps = rng.normal(0.0, cfg.sigma, size=(cfg.num_samples, h, 2))
    samples = np.clip(mean_seq[None] + eps, -cfg.action_bound, cfg.action_bound)
    costs = np.asarray(cost_fn(samples), dtype=np.float64).reshape(cfg.num_samples)
    if np.all(np.isnan(costs)):
        raise NumericError("MPPI: every sampled sequence has NaN cost")
    costs = np.where(np.isnan(costs), np.inf, costs)
    best = float(np.min(costs))
    if not np.isfinite(best):
        raise NumericError("MPPI: no sampled sequence has finite cost")
    logits = -(costs - best) / cfg.temperature
    weights = np.exp(logits)
    weights = weights / weights.sum()
    new_mean = np.tensordot(weights, samples, axes=1)
    info = {"costs": costs, "weights": weights, "best_cost": best}
    return new_mean, info


# ---------------------------------------------------------------------------
# MPC loop
# ---------------------------------------------------------------------------


def _encode_observation(model, obs: np.ndarray, proprio: np.ndarray | None):
    img = torch.from_numpy(np.ascontiguousarray(obs, dtype=np.float32)).unsqueeze(0)
    prop = None
    if proprio is not None:
        prop = torch.from_numpy(np.ascontiguousarray(proprio, dtype=np.float32))
        prop = prop.unsqueeze(0)
    with torch.no_grad():
        return model.encode(img, prop).squeeze(0)


def mpc_plan(
    session, model, goal_pose, cfg: PlanConfig, seed: int | None = 0
) -> PlanResult:
    """Model-predictive control toward a goal pose; see the module docstring.

    The rollout horizon is capped at the remaining step budget, the mean
    sequence starts at zero and is warm-started by shifting after each
    executed action, and the loop exits early once the trace comes within
    the success threshold of the goal.
    """
    goal_pose = np.asarray(goal_pose, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence(seed) if seed is not None
                                else None)
    goal_obs, goal_prop = session.render_pose(goal_pose)
    z_goal = _encode_observation(model, goal_obs, goal_prop)

    poses = [session.pose()]
    executed: list[np.ndarray] = []
    best_costs: list[float] = []
    success = bool(np.linalg.norm(poses[0] - goal_pose) <= cfg.success_threshold)
    steps_to_goal = 0 if success else None

    mean = np.zeros((min(cfg.horizon, cfg.total_steps), 2))
    step = 0
    while not success and step < cfg.total_steps:
        h = min(cfg.horizon, cfg.total_steps - step)
        mean = mean[:h]
        obs, prop = session.observe()
        z0 = _encode_observation(model, obs, prop)

        def cost_fn(samples: np.ndarray) -> np.ndarray:
            acts = torch.from_numpy(np.ascontiguousarray(samples, dtype=np.float32))
            return rollout_cost(model, z0, acts, z_goal).numpy()

        iters = cfg.burn_in if step == 0 else cfg.n_opt
        info = {}
        for _ in range(max(1, iters)):
            mean, info = mppi_step(cost_fn, mean, cfg, rng)
        best_costs.append(info["best_cost"])

        n_exec = min(cfg.replan_interval, h, cfg.total_steps - step)
        for i in range(n_exec):
            action = mean[i].copy()
            session.step(action)
            executed.append(action)
            poses.append(session.pose())
            step += 1
            if np.linalg.norm(poses[-1] - goal_pose) <= cfg.success_threshold:
                success = True
                steps_to_goal = step
                break
        mean = np.concatenate([mean[n_exec:], np.zeros((n_exec, 2))], axis=0)

    return PlanResult(
        success=success,
        steps_to_goal=steps_to_goal,
        poses=np.asarray(poses),
        executed_actions=(np.asarray(executed) if executed
                          else np.zeros((0, 2))),
        best_costs=best_costs,
        goal=(float(goal_pose[0]), float(goal_pose[1])),
        seed=seed,
        env=session.env_json(),
    )


def plan_config_json(cfg: PlanConfig) -> dict:
    return asdict(cfg)
