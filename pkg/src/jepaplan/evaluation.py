"""Benchmarking, brute-force value oracle, and hyperparameter sweeps.

The oracle discretizes a wall arena into square cells, runs BFS over the
8-connected free-cell graph, and converts hop counts into discounted
values. It exists to validate learned value heads; the environments
themselves are continuous and have no canonical graph.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.stats import spearmanr

from .data import TrajectoryDataset
from .envs import (
    WallWorld,
    cell_distance,
    cell_of,
    render_wall,
    sample_layout_pools,
    sample_maze_position,
    sample_maze_world,
    sample_wall_position,
    sample_wall_world,
    wall_legal,
)
from .errors import ConfigError, DataError
from .planning import PlanConfig, PlanResult, make_session, mpc_plan

# ---------------------------------------------------------------------------
# Brute-force value oracle
# ---------------------------------------------------------------------------

_NEIGHBOR_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, -1),
                     (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass
class OracleValueTable:
    """Shortest-path values on a discretized wall arena.

    Cells are squares of edge side/resolution indexed [iy, ix]; a cell is
    free when a disc centered on it is legal. d(s,g) is the BFS hop count
    over 8-connected free cells with unit steps, and
    V*(s,g) = -(1 - gamma^d)/(1 - gamma), so V*(g,g) = 0 and unreachable
    pairs take the infinite-horizon limit -1/(1-gamma).
    """

    world: WallWorld
    resolution: int
    gamma: float
    free: np.ndarray  # (R, R) bool
    cell: float
    _graph: csr_matrix | None = field(default=None, repr=False)
    _dist_cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_free(self) -> int:
        return int(self.free.sum())

    def cell_index(self, pos) -> tuple[int, int]:
        r = self.resolution
        ix = min(r - 1, max(0, int(pos[0] // self.cell)))
        iy = min(r - 1, max(0, int(pos[1] // self.cell)))
        return iy, ix

    def center(self, iy: int, ix: int) -> np.ndarray:
        return np.array([(ix + 0.5) * self.cell, (iy + 0.5) * self.cell])

    def _adjacency(self) -> csr_matrix:
        if self._graph is None:
            r = self.resolution
            rows, cols = [], []
            free = self.free
            idx = np.arange(r * r).reshape(r, r)
            for dy, dx in _NEIGHBOR_OFFSETS:
                src_y = slice(max(0, -dy), r - max(0, dy))
                src_x = slice(max(0, -dx), r - max(0, dx))
                dst_y = slice(max(0, dy), r + min(0, dy))
                dst_x = slice(max(0, dx), r + min(0, dx))
                ok = free[src_y, src_x] & free[dst_y, dst_x]
                rows.append(idx[src_y, src_x][ok])
                cols.append(idx[dst_y, dst_x][ok])
            rows = np.concatenate(rows)
            cols = np.concatenate(cols)
            data = np.ones(len(rows), dtype=np.float64)
            self._graph = csr_matrix((data, (rows, cols)), shape=(r * r, r * r))
        return self._graph

    def distances_from(self, goal_pos) -> np.ndarray:
        """BFS hop counts (R, R) from every cell to the goal cell; inf if cut off."""
        iy, ix = self.cell_index(goal_pos)
        if not self.free[iy, ix]:
            raise DataError(f"goal cell ({iy}, {ix}) is blocked")
        key = (iy, ix)
        if key not in self._dist_cache:
            node = iy * self.resolution + ix
            d = dijkstra(self._adjacency(), indices=node, unweighted=True)
            d = d.reshape(self.resolution, self.resolution)
            d[~self.free] = np.inf
            self._dist_cache[key] = d
        return self._dist_cache[key]

    def value(self, pos, goal_pos) -> float:
        d = self.distances_from(goal_pos)[self.cell_index(pos)]
        return float(-(1.0 - self.gamma**d) / (1.0 - self.gamma))

    def values_for_goal(self, positions: np.ndarray, goal_pos) -> np.ndarray:
        dist = self.distances_from(goal_pos)
        iy = np.clip((positions[:, 1] // self.cell).astype(int), 0, self.resolution - 1)
        ix = np.clip((positions[:, 0] // self.cell).astype(int), 0, self.resolution - 1)
        d = dist[iy, ix]
        return -(1.0 - self.gamma**d) / (1.0 - self.gamma)

    def free_cells(self) -> np.ndarray:
        """(N, 2) array of free (iy, ix) indices in row-major order."""
        return np.argwhere(self.free)


def oracle_values(world: WallWorld, resolution: int, gamma: float = 0.98) -> OracleValueTable:
    if resolution < 2:
        raise ConfigError("oracle resolution must be at least 2")
    if not 0 < gamma < 1:
        raise ConfigError("gamma must lie in (0, 1)")
    cell = world.side / resolution
    if abs(cell - round(cell)) > 1e-9:
        raise ConfigError(
            f"resolution {resolution} must divide the arena side {world.side}")
    centers_x = (np.arange(resolution) + 0.5) * cell
    free = np.zeros((resolution, resolution), dtype=bool)
    for iy in range(resolution):
        for ix in range(resolution):
            free[iy, ix] = wall_legal(world, np.array([centers_x[ix], centers_x[iy]]))
    return OracleValueTable(world=world, resolution=resolution, gamma=gamma,
                            free=free, cell=cell)


# ---------------------------------------------------------------------------
# Value alignment
# ---------------------------------------------------------------------------


@dataclass
class AlignmentResult:
    rho: float
    n_pairs: int
    model_values: np.ndarray
    oracle_values: np.ndarray

    def to_json(self) -> dict:
        return {"rho": None if np.isnan(self.rho) else float(self.rho),
                "n_pairs": self.n_pairs,
                "degenerate": bool(np.isnan(self.rho))}


def value_alignment(model, table: OracleValueTable, n_pairs: int = 2000,
                    seed: int = 0, batch_size: int = 512) -> AlignmentResult:
    """Spearman rank correlation between -V_theta and -V* on random legal pairs.

    Positions are free-cell centers so model and oracle rank the same poses.
    A constant model output makes the correlation undefined; that is
    reported as rho = nan rather than raised.
    """
    if n_pairs < 2:
        raise ConfigError("need at least two pairs for a rank correlation")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xA716)))
    cells = table.free_cells()
    if len(cells) < 2:
        raise DataError("oracle table has fewer than two free cells")
    s_idx = rng.integers(0, len(cells), size=n_pairs)
    g_idx = rng.integers(0, len(cells), size=n_pairs)

    # Encode each distinct cell center once.
    used = np.unique(np.concatenate([s_idx, g_idx]))
    lookup = {int(c): k for k, c in enumerate(used)}
    images = np.stack([
        render_wall(table.world, table.center(*cells[c])) for c in used
    ])
    feats = []
    with torch.no_grad():
        for i in range(0, len(images), batch_size):
            chunk = torch.from_numpy(images[i:i + batch_size])
            feats.append(model.encode(chunk, None))
    z = torch.cat(feats, dim=0)

    s_rows = torch.as_tensor([lookup[int(c)] for c in s_idx])
    g_rows = torch.as_tensor([lookup[int(c)] for c in g_idx])
    with torch.no_grad():
        v_model = model.value(z[s_rows], z[g_rows]).double().numpy()

    v_star = np.empty(n_pairs)
    for k in range(n_pairs):
        s = table.center(*cells[s_idx[k]])
        g = table.center(*cells[g_idx[k]])
        v_star[k] = table.value(s, g)

    if np.ptp(v_model) == 0.0 or np.ptp(v_star) == 0.0:
        rho = float("nan")
    else:
        rho = float(spearmanr(-v_model, -v_star).statistic)
    return AlignmentResult(rho=rho, n_pairs=n_pairs,
                           model_values=v_model, oracle_values=v_star)


# ---------------------------------------------------------------------------
# Benchmark protocol
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkSpec:
    """One success-rate benchmark: environment family, instance set, planner.

    The instance set is a pure function of the spec (not of the model), so
    every mode evaluated against the same spec shares identical instances.
    """

    env_kind: str = "wall"
    regime: str = "ws"  # wall only; selects the planner preset
    instances: int | None = None  # None: 200 wall / 80 maze
    seed: int = 0
    plan: PlanConfig | None = None  # None: PlanConfig.for_env defaults
    label: str = ""
    # wall world sampling
    side: float = 64.0
    agent_radius: float = 1.5
    door_half_width_range: tuple[float, float] = (4.0, 8.0)
    wall_x_frac: tuple[float, float] = (0.3, 0.7)
    wall_half_thickness: float = 0.5
    # maze world sampling
    cell_size: float = 16.0
    maze_agent_radius: float = 2.0
    resolution: int | None = 64
    layout_seed: int = 0
    n_train_layouts: int = 5
    n_eval_layouts: int = 5
    min_cell_distance: int = 3

    def __post_init__(self) -> None:
        if self.env_kind not in ("wall", "maze"):
            raise ConfigError(f"unknown environment kind {self.env_kind!r}")
        if self.env_kind == "wall" and self.regime not in ("ws", "wb"):
            raise ConfigError(f"unknown wall regime {self.regime!r}")
        if self.instances is not None and self.instances < 1:
            raise ConfigError("instances must be positive")

    @property
    def n_instances(self) -> int:
        if self.instances is not None:
            return self.instances
        return 200 if self.env_kind == "wall" else 80

    def plan_config(self) -> PlanConfig:
        if self.plan is not None:
            return self.plan
        return PlanConfig.for_env(self.env_kind, self.regime)

    def to_json(self) -> dict:
        out = asdict(self)
        out["plan"] = asdict(self.plan_config())
        return out


@dataclass(frozen=True)
class BenchmarkInstance:
    env: dict  # session JSON, see planning.make_session
    start: tuple[float, float]
    goal: tuple[float, float]
    seed: int


def benchmark_instances(spec: BenchmarkSpec) -> list[BenchmarkInstance]:
    """Seed-reproducible instance set; independent of the model under test."""
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 0xB37C4)))
    out: list[BenchmarkInstance] = []
    if spec.env_kind == "maze":
        _, eval_layouts = sample_layout_pools(
            spec.layout_seed, spec.n_train_layouts, spec.n_eval_layouts)
    for _ in range(spec.n_instances):
        inst_seed = int(rng.integers(0, 2**63 - 1))
        if spec.env_kind == "wall":
            world = sample_wall_world(
                rng, side=spec.side, wall_x_frac=spec.wall_x_frac,
                door_half_width_range=spec.door_half_width_range,
                agent_radius=spec.agent_radius,
                wall_half_thickness=spec.wall_half_thickness)
            side_of = -1 if rng.random() < 0.5 else 1
            start = sample_wall_position(world, rng, side_of_wall=side_of)
            goal = sample_wall_position(world, rng, side_of_wall=-side_of)
            env = {"kind": "wall", "world": world.to_json()}
        else:
            layout = eval_layouts[int(rng.integers(len(eval_layouts)))]
            world = sample_maze_world(rng, layout=layout,
                                      cell_size=spec.cell_size,
                                      agent_radius=spec.maze_agent_radius)
            start = sample_maze_position(world, rng)
            for _ in range(1000):
                goal = sample_maze_position(world, rng)
                hops = cell_distance(world.grid, cell_of(world, start),
                                     cell_of(world, goal))
                if hops >= spec.min_cell_distance:
                    break
            else:
                raise ConfigError("could not sample a goal 3+ cells from the start")
            env = {"kind": "maze", "world": world.to_json(),
                   "resolution": spec.resolution}
        out.append(BenchmarkInstance(
            env=env, start=(float(start[0]), float(start[1])),
            goal=(float(goal[0]), float(goal[1])), seed=inst_seed))
    return out


@dataclass
class BenchmarkResult:
    spec: BenchmarkSpec
    success_rate: float
    results: list[PlanResult]

    def summary_json(self) -> dict:
        return {
            "label": self.spec.label,
            "env_kind": self.spec.env_kind,
            "regime": self.spec.regime,
            "instances": len(self.results),
            "seed": self.spec.seed,
            "success_rate": self.success_rate,
            "spec": self.spec.to_json(),
        }


def run_benchmark(model, spec: BenchmarkSpec, out_dir: str | Path | None = None,
                  progress=None) -> BenchmarkResult:
    """Plan every instance and report the fraction that reach the goal."""
    insts = benchmark_instances(spec)
    plan_cfg = spec.plan_config()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    results: list[PlanResult] = []
    for i, inst in enumerate(insts):
        session = make_session(inst.env, inst.start)
        res = mpc_plan(session, model, inst.goal, plan_cfg, seed=inst.seed)
        results.append(res)
        if out is not None:
            res.save(out / f"instance_{i:04d}.json")
        if progress is not None:
            progress(i + 1, len(insts), res)
    rate = float(np.mean([r.success for r in results])) if results else 0.0
    bench = BenchmarkResult(spec=spec, success_rate=rate, results=results)
    if out is not None:
        (out / "benchmark.json").write_text(
            json.dumps(bench.summary_json(), indent=1) + "\n")
    return bench


def recompute_success_rate(out_dir: str | Path) -> float:
    """Re-derive the rate from persisted per-instance results."""
    paths = sorted(Path(out_dir).glob("instance_*.json"))
    if not paths:
        raise DataError(f"no persisted plan results under {out_dir}")
    results = [PlanResult.load(p) for p in paths]
    return float(np.mean([r.success for r in results]))


# ---------------------------------------------------------------------------
# Hyperparameter sweep
# ---------------------------------------------------------------------------


def sweep(param: str, values, ds: TrajectoryDataset, train_cfg,
          spec: BenchmarkSpec, out_dir: str | Path) -> list[dict]:
    """Train once per value of gamma or tau and benchmark each model."""
    from .training import train  # local import to avoid a cycle

    if param not in ("gamma", "tau"):
        raise ConfigError(f"sweep parameter must be gamma or tau, got {param!r}")
    values = [float(v) for v in values]
    if not values:
        raise ConfigError("sweep needs at least one value")
    for v in values:
        if not 0 < v < 1:
            raise ConfigError(f"sweep values must lie in (0, 1), got {v}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    for v in values:
        cfg = replace(train_cfg, **{param: v})
        run_dir = out / f"{param}_{v:g}"
        model, record = train(cfg.mode, ds, cfg, out_dir=run_dir)
        bench = run_benchmark(model, spec, out_dir=run_dir / "bench")
        rows.append({
            "param": param,
            "value": v,
            "success_rate": bench.success_rate,
            "instances": len(bench.results),
            "mode": cfg.mode,
            "config_hash": record.config_hash,
            "run_dir": str(run_dir),
        })
    return rows
