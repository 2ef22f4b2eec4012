"""Oracle value table, alignment, benchmark protocol, and sweep tests.

The BFS oracle is validated against closed-form geometric-series values
and the Bellman identity; benchmarks run with an exact-dynamics pose
model so the protocol (not network quality) is what gets exercised.
"""

import json

import numpy as np
import pytest
import torch

from jepaplan.data import WallGenConfig, generate_wall_dataset
from jepaplan.envs import WallWorld, sample_layout_pools, cell_distance, cell_of, MazeWorld
from jepaplan.errors import ConfigError, DataError
from jepaplan.evaluation import (
    AlignmentResult,
    BenchmarkSpec,
    OracleValueTable,
    benchmark_instances,
    oracle_values,
    recompute_success_rate,
    run_benchmark,
    sweep,
    value_alignment,
)
from jepaplan.models import (
    EncoderConfig,
    ModelConfig,
    PredictorConfig,
    ValueHeadConfig,
    WorldModel,
)
from jepaplan.planning import PlanConfig
from jepaplan.training import TrainConfig, train


def tiny_world(**kw):
    base = dict(side=16.0, wall_x=8.0, door_center_y=8.0, door_half_width=3.0,
                agent_radius=1.5, wall_half_thickness=0.5)
    base.update(kw)
    return WallWorld(**base)


class CentroidModel:
    """Pose-space stand-in: encode reads the agent centroid off the render."""

    def encode(self, img, prop=None):
        m = img[:, 0]
        _, h, w = m.shape
        xs = torch.arange(w, dtype=torch.float32) + 0.5
        ys = torch.arange(h, dtype=torch.float32) + 0.5
        tot = m.sum(dim=(-2, -1)).clamp(min=1e-9)
        x = (m * xs[None, None, :]).sum(dim=(-2, -1)) / tot
        y = (m * ys[None, :, None]).sum(dim=(-2, -1)) / tot
        return torch.stack([x, y], dim=-1)

    def rollout(self, z0, actions):
        return torch.cat([z0[:, None], z0[:, None] + actions.cumsum(dim=1)], dim=1)

    def value(self, z, g):
        return -torch.linalg.vector_norm(z - g, dim=-1)


class OracleBackedModel(CentroidModel):
    """Value head that looks the answer up in the oracle table."""

    def __init__(self, table):
        self.table = table

    def value(self, z_s, z_g):
        vals = [self.table.value(s.numpy(), g.numpy())
                for s, g in zip(z_s, z_g)]
        return torch.tensor(vals, dtype=torch.float64)


class ConstantModel(CentroidModel):
    def value(self, z_s, z_g):
        return torch.zeros(z_s.shape[0], dtype=torch.float64)


# ---------------------------------------------------------------------------
# Oracle table
# ---------------------------------------------------------------------------


def test_oracle_goal_cell_value_is_zero():
    table = oracle_values(tiny_world(), resolution=16, gamma=0.98)
    g = np.array([4.5, 4.5])
    assert table.value(g, g) == 0.0
    assert table.distances_from(g)[table.cell_index(g)] == 0.0


def test_oracle_three_hop_value():
    # d=3 at gamma=0.98: -(1 - 0.98^3)/0.02 = -2.9404, a plain geometric sum.
    table = oracle_values(tiny_world(), resolution=16, gamma=0.98)
    s = np.array([2.5, 4.5])
    g = np.array([5.5, 4.5])
    d = table.distances_from(g)[table.cell_index(s)]
    assert d == 3.0
    v = table.value(s, g)
    assert v == -(1.0 - 0.98**3) / (1.0 - 0.98)
    assert v == pytest.approx(-2.9404, abs=1e-9)


def test_oracle_unreachable_limit():
    # Door is physically passable but narrower than the discretization can
    # thread: every crossing cell center sits within the agent radius of a
    # wall rect, so the far side is unreachable on the graph.
    world = tiny_world(door_center_y=4.0, door_half_width=1.6)
    table = oracle_values(world, resolution=8, gamma=0.98)
    s = np.array([3.0, 9.0])
    g = np.array([13.0, 9.0])
    d = table.distances_from(g)[table.cell_index(s)]
    assert np.isinf(d)
    assert table.value(s, g) == -1.0 / (1.0 - 0.98)
    assert table.value(s, g) == pytest.approx(-50.0, abs=1e-9)


def test_oracle_open_space_distance_is_chebyshev():
    # 8-connected unit-step BFS equals Chebyshev distance away from walls.
    world = tiny_world(wall_x=2.5, door_center_y=8.0, door_half_width=3.0)
    table = oracle_values(world, resolution=16, gamma=0.98)
    rng = np.random.default_rng(0)
    for _ in range(25):
        iy1, iy2 = rng.integers(2, 14, size=2)
        ix1, ix2 = rng.integers(5, 14, size=2)
        assert table.free[iy1, ix1] and table.free[iy2, ix2]
        d = table.distances_from(table.center(iy2, ix2))[iy1, ix1]
        assert d == max(abs(int(iy1) - int(iy2)), abs(int(ix1) - int(ix2)))


def test_oracle_bellman_identity():
    # V*(s,g) = -1 + gamma * max over free 8-neighbours V*(s',g) for s != g.
    for gamma in (0.93, 0.98):
        table = oracle_values(tiny_world(), resolution=16, gamma=gamma)
        for goal in (np.array([4.5, 4.5]), np.array([12.5, 10.5])):
            dist = table.distances_from(goal)
            v = -(1.0 - gamma**dist) / (1.0 - gamma)
            gy, gx = table.cell_index(goal)
            for iy, ix in table.free_cells():
                if (iy, ix) == (gy, gx):
                    continue
                best = -np.inf
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        if dy == dx == 0:
                            continue
                        ny, nx = iy + dy, ix + dx
                        if 0 <= ny < 16 and 0 <= nx < 16 and table.free[ny, nx]:
                            best = max(best, v[ny, nx])
                if np.isinf(best):
                    continue  # isolated cell: no neighbours to back up from
                assert v[iy, ix] == pytest.approx(-1.0 + gamma * best, abs=1e-9)


def test_oracle_vectorized_values_match_scalar():
    table = oracle_values(tiny_world(), resolution=16, gamma=0.95)
    goal = np.array([12.5, 8.5])
    cells = table.free_cells()
    pts = np.stack([table.center(iy, ix) for iy, ix in cells[:40]])
    vec = table.values_for_goal(pts, goal)
    for k, p in enumerate(pts):
        assert vec[k] == table.value(p, goal)


def test_oracle_distance_cache_reuse():
    table = oracle_values(tiny_world(), resolution=16)
    g = np.array([4.5, 4.5])
    assert table.distances_from(g) is table.distances_from(g + 0.2)  # same cell


def test_oracle_validation_errors():
    with pytest.raises(ConfigError):
        oracle_values(tiny_world(), resolution=48)  # 48 does not divide 16
    with pytest.raises(ConfigError):
        oracle_values(tiny_world(), resolution=1)
    with pytest.raises(ConfigError):
        oracle_values(tiny_world(), resolution=16, gamma=1.0)
    table = oracle_values(tiny_world(), resolution=16)
    with pytest.raises(DataError):
        table.distances_from(np.array([8.0, 14.0]))  # inside the wall


# ---------------------------------------------------------------------------
# Value alignment
# ---------------------------------------------------------------------------


def test_alignment_oracle_backed_model_is_perfect():
    table = oracle_values(tiny_world(), resolution=16, gamma=0.98)
    res = value_alignment(OracleBackedModel(table), table, n_pairs=300, seed=1)
    assert res.rho == pytest.approx(1.0, abs=1e-12)
    assert res.n_pairs == 300
    assert not res.to_json()["degenerate"]


def test_alignment_constant_model_is_degenerate():
    table = oracle_values(tiny_world(), resolution=16)
    res = value_alignment(ConstantModel(), table, n_pairs=50, seed=0)
    assert np.isnan(res.rho)
    assert res.to_json() == {"rho": None, "n_pairs": 50, "degenerate": True}


def test_alignment_random_model_runs_and_is_bounded():
    cfg = ModelConfig(
        encoder=EncoderConfig(in_channels=2, image_size=16, widths=(4, 8),
                              latent_dim=8, group_norm_groups=4),
        predictor=PredictorConfig(latent_dim=8, action_dim=2, hidden=(16,)),
        head=ValueHeadConfig(kind="euclidean", latent_dim=8),
    )
    torch.manual_seed(0)
    model = WorldModel(cfg)
    table = oracle_values(tiny_world(), resolution=16)
    res = value_alignment(model, table, n_pairs=60, seed=2)
    assert -1.0 <= res.rho <= 1.0


def test_alignment_determinism_and_validation():
    table = oracle_values(tiny_world(), resolution=16)
    model = OracleBackedModel(table)
    a = value_alignment(model, table, n_pairs=40, seed=3)
    b = value_alignment(model, table, n_pairs=40, seed=3)
    assert a.rho == b.rho
    np.testing.assert_array_equal(a.oracle_values, b.oracle_values)
    with pytest.raises(ConfigError):
        value_alignment(model, table, n_pairs=1)


# ---------------------------------------------------------------------------
# Benchmark instances
# ---------------------------------------------------------------------------


def test_default_instance_counts():
    assert BenchmarkSpec(env_kind="wall").n_instances == 200
    assert BenchmarkSpec(env_kind="maze").n_instances == 80
    assert BenchmarkSpec(env_kind="wall", instances=12).n_instances == 12


def test_spec_validation():
    with pytest.raises(ConfigError):
        BenchmarkSpec(env_kind="cliff")
    with pytest.raises(ConfigError):
        BenchmarkSpec(env_kind="wall", regime="zz")
    with pytest.raises(ConfigError):
        BenchmarkSpec(env_kind="wall", instances=0)


def test_spec_plan_defaults_follow_env():
    assert BenchmarkSpec(env_kind="wall", regime="ws").plan_config().horizon == 96
    assert BenchmarkSpec(env_kind="wall", regime="wb").plan_config().total_steps == 64
    assert BenchmarkSpec(env_kind="maze").plan_config().num_samples == 500
    custom = PlanConfig(horizon=5)
    assert BenchmarkSpec(env_kind="wall", plan=custom).plan_config() is custom


def test_wall_instances_oppose_sides_and_reproduce():
    spec = BenchmarkSpec(env_kind="wall", regime="ws", instances=20, seed=11)
    insts = benchmark_instances(spec)
    assert len(insts) == 20
    for inst in insts:
        world = WallWorld.from_json(inst.env["world"])
        s_side = np.sign(inst.start[0] - world.wall_x)
        g_side = np.sign(inst.goal[0] - world.wall_x)
        assert s_side == -g_side and s_side != 0
    again = benchmark_instances(spec)
    assert [i.seed for i in insts] == [i.seed for i in again]
    assert all(a.env == b.env and a.start == b.start and a.goal == b.goal
               for a, b in zip(insts, again))
    other = benchmark_instances(BenchmarkSpec(env_kind="wall", regime="ws",
                                              instances=20, seed=12))
    assert [i.seed for i in insts] != [i.seed for i in other]


def test_maze_instances_use_eval_layouts_and_min_distance():
    spec = BenchmarkSpec(env_kind="maze", instances=10, seed=4, layout_seed=2)
    insts = benchmark_instances(spec)
    _, eval_pool = sample_layout_pools(2, 5, 5)
    eval_keys = {g.tobytes() for g in eval_pool}
    for inst in insts:
        world = MazeWorld.from_json(inst.env["world"])
        assert world.grid.tobytes() in eval_keys
        hops = cell_distance(world.grid, cell_of(world, np.asarray(inst.start)),
                             cell_of(world, np.asarray(inst.goal)))
        assert hops >= 3


# ---------------------------------------------------------------------------
# run_benchmark
# ---------------------------------------------------------------------------

FAST_PLAN = PlanConfig(horizon=8, total_steps=24, num_samples=64, sigma=1.8,
                       temperature=0.005, action_bound=1.8, burn_in=5,
                       success_threshold=2.5)

FAST_SPEC = BenchmarkSpec(env_kind="wall", regime="ws", instances=8, seed=5,
                          plan=FAST_PLAN, side=32.0, agent_radius=1.0,
                          door_half_width_range=(3.0, 5.0))


def test_run_benchmark_persists_and_recomputes(tmp_path):
    bench = run_benchmark(CentroidModel(), FAST_SPEC, out_dir=tmp_path)
    assert 0.0 <= bench.success_rate <= 1.0
    assert len(bench.results) == 8
    assert bench.success_rate == np.mean([r.success for r in bench.results])
    files = sorted(tmp_path.glob("instance_*.json"))
    assert len(files) == 8
    assert recompute_success_rate(tmp_path) == bench.success_rate
    summary = json.loads((tmp_path / "benchmark.json").read_text())
    assert summary["success_rate"] == bench.success_rate
    assert summary["instances"] == 8
    assert summary["spec"]["plan"]["horizon"] == 8


def test_run_benchmark_deterministic():
    a = run_benchmark(CentroidModel(), FAST_SPEC)
    b = run_benchmark(CentroidModel(), FAST_SPEC)
    assert a.success_rate == b.success_rate
    for ra, rb in zip(a.results, b.results):
        assert np.array_equal(ra.poses, rb.poses)


def test_recompute_missing_dir_errors(tmp_path):
    with pytest.raises(DataError):
        recompute_success_rate(tmp_path)


# ---------------------------------------------------------------------------
# Sweep
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def wall_ds(tmp_path_factory):
    cfg = WallGenConfig.for_regime("ws", n_trajectories=10, n_states=17, side=32.0)
    return generate_wall_dataset(tmp_path_factory.mktemp("wds"), seed=7, cfg=cfg)


def small_train_cfg(ds):
    model = ModelConfig(
        encoder=EncoderConfig(in_channels=2, image_size=32, widths=(8, 16),
                              latent_dim=32, group_norm_groups=4),
        predictor=PredictorConfig(latent_dim=32, action_dim=2, hidden=(32,)),
        head=ValueHeadConfig(kind="euclidean", latent_dim=32),
    )
    return TrainConfig(mode="VF", steps=2, batch_size=4, segment_len=8,
                       warmup_steps=1, model=model)


def test_sweep_validation(wall_ds, tmp_path):
    cfg = small_train_cfg(wall_ds)
    with pytest.raises(ConfigError):
        sweep("sigma", [0.5], wall_ds, cfg, FAST_SPEC, tmp_path)
    with pytest.raises(ConfigError):
        sweep("gamma", [0.5, 1.0], wall_ds, cfg, FAST_SPEC, tmp_path)
    with pytest.raises(ConfigError):
        sweep("tau", [], wall_ds, cfg, FAST_SPEC, tmp_path)


def test_single_value_sweep_equals_one_benchmark(wall_ds, tmp_path):
    cfg = small_train_cfg(wall_ds)
    spec = BenchmarkSpec(env_kind="wall", regime="ws", instances=3, seed=5,
                         plan=PlanConfig(horizon=4, total_steps=6,
                                         num_samples=16, sigma=1.8,
                                         action_bound=1.8, burn_in=2,
                                         success_threshold=2.5),
                         side=32.0, agent_radius=1.5)
    rows = sweep("gamma", [0.9], wall_ds, cfg, spec, tmp_path / "sw")
    assert len(rows) == 1
    assert rows[0]["param"] == "gamma" and rows[0]["value"] == 0.9
    from dataclasses import replace
    model, _ = train("VF", wall_ds, replace(cfg, gamma=0.9),
                     out_dir=tmp_path / "direct")
    direct = run_benchmark(model, spec)
    assert rows[0]["success_rate"] == direct.success_rate
    assert (tmp_path / "sw" / "gamma_0.9" / "bench" / "benchmark.json").exists()
