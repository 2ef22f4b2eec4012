import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jepaplan.errors import ConfigError
from jepaplan.envs import (
    WallWorld,
    crossed_door,
    render_wall,
    sample_wall_position,
    sample_wall_world,
    wall_legal,
    wall_step,
)

WORLD = WallWorld(
    side=64.0,
    wall_x=30.0,
    door_center_y=40.0,
    door_half_width=5.0,
    agent_radius=1.5,
)


def test_zero_action_is_identity():
    p = np.array([10.0, 10.0])
    assert np.array_equal(wall_step(WORLD, p, np.zeros(2)), p)


def test_free_space_move_is_exact():
    p = np.array([10.0, 10.0])
    a = np.array([3.25, -4.5])
    assert np.array_equal(wall_step(WORLD, p, a), p + a)


def test_wall_blocks_off_door_crossing():
    # oracle: contact plane at wall_x - half_thickness - radius = 28.0
    p = np.array([20.0, 10.0])
    out = wall_step(WORLD, p, np.array([30.0, 0.0]))
    assert out[0] == pytest.approx(28.0, abs=1e-6)
    assert out[0] < 28.0 + 1e-12  # never inside the contact plane
    assert out[1] == 10.0
    assert wall_legal(WORLD, out)


def test_door_gap_is_passable():
    p = np.array([20.0, 40.0])
    out = wall_step(WORLD, p, np.array([25.0, 0.0]))
    assert np.allclose(out, [45.0, 40.0])
    assert crossed_door(WORLD, np.stack([p, out]))


def test_door_edge_still_blocks():
    # y near the door edge: the lower wall segment's top corner blocks the disc
    p = np.array([20.0, 35.8])  # door spans y in [35, 45], radius 1.5
    out = wall_step(WORLD, p, np.array([30.0, 0.0]))
    assert out[0] < 30.0
    assert wall_legal(WORLD, out)


def test_boundary_clips():
    p = np.array([5.0, 5.0])
    out = wall_step(WORLD, p, np.array([0.0, -10.0]))
    assert out[1] == pytest.approx(WORLD.agent_radius, abs=1e-6)


@settings(max_examples=60, deadline=None)
@given(
    px=st.floats(4.0, 24.0),
    py=st.floats(4.0, 60.0),
    ax=st.floats(-2.0, 2.0),
    ay=st.floats(-2.0, 2.0),
)
def test_free_space_homogeneity(px, py, ax, ay):
    # stepping a then a equals one step of 2a when both routes stay clear
    p = np.array([px, py])
    a = np.array([ax, ay])
    two = wall_step(WORLD, p, 2 * a)
    one_one = wall_step(WORLD, wall_step(WORLD, p, a), a)
    if np.array_equal(two, p + 2 * a) and np.array_equal(one_one, p + 2 * a):
        assert np.allclose(two, one_one, atol=1e-9)


def test_many_random_steps_stay_legal():
    rng = np.random.default_rng(0)
    p = sample_wall_position(WORLD, rng)
    for _ in range(500):
        a = rng.normal(0, 3.0, size=2)
        p = wall_step(WORLD, p, a)
        assert wall_legal(WORLD, p), p


def test_render_shape_range_and_determinism():
    p = np.array([12.3, 45.6])
    img1 = render_wall(WORLD, p)
    img2 = render_wall(WORLD, p)
    assert img1.shape == (2, 64, 64)
    assert img1.dtype == np.float32
    assert img1.min() >= 0.0 and img1.max() <= 1.0
    assert np.array_equal(img1, img2)


def test_render_agent_mass_position_invariant():
    rng = np.random.default_rng(1)
    masses = []
    for _ in range(100):
        p = sample_wall_position(WORLD, rng)
        if not (4 < p[0] < 60 and 4 < p[1] < 60):
            continue
        masses.append(render_wall(WORLD, p)[0].sum())
    masses = np.array(masses)
    assert (masses.max() - masses.min()) / masses.mean() < 0.05


def test_render_walls_channel_independent_of_agent():
    rng = np.random.default_rng(2)
    ref = render_wall(WORLD, sample_wall_position(WORLD, rng))[1]
    for _ in range(10):
        img = render_wall(WORLD, sample_wall_position(WORLD, rng))
        assert np.array_equal(img[1], ref)


def test_sample_world_deterministic_and_valid():
    w1 = sample_wall_world(np.random.default_rng(42))
    w2 = sample_wall_world(np.random.default_rng(42))
    assert w1 == w2
    assert 0.3 * 64 <= w1.wall_x <= 0.7 * 64
    assert 4.0 <= w1.door_half_width <= 8.0
    lo = w1.door_center_y - w1.door_half_width
    hi = w1.door_center_y + w1.door_half_width
    assert 0 < lo and hi < w1.side


def test_side_constrained_position_sampling():
    rng = np.random.default_rng(3)
    for side in (-1, 1):
        for _ in range(20):
            p = sample_wall_position(WORLD, rng, side_of_wall=side)
            assert np.sign(p[0] - WORLD.wall_x) == side
            assert wall_legal(WORLD, p)


def test_crossed_door_classifier():
    stay = np.array([[10.0, 5.0], [20.0, 8.0]])
    cross = np.array([[10.0, 40.0], [45.0, 40.0]])
    assert not crossed_door(WORLD, stay)
    assert crossed_door(WORLD, cross)


def test_json_roundtrip():
    data = WORLD.to_json()
    back = WallWorld.from_json(data)
    assert back == WORLD
    assert data["kind"] == "wall"


def test_invalid_geometry_rejected():
    with pytest.raises(ConfigError):
        WallWorld(side=64.0, wall_x=70.0)
    with pytest.raises(ConfigError):
        WallWorld(side=64.0, door_center_y=2.0, door_half_width=6.0)
    with pytest.raises(ConfigError):
        WallWorld(door_half_width=1.0, agent_radius=1.5)
