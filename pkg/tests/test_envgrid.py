import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bimrl.envgrid import (
    EPISODES_PER_TASK,
    OBJECT_TO_IDX,
    OBS_SHAPE,
    Action,
    GridEnv,
    VecGridEnv,
    egocentric_view,
    generate_task,
)
from bimrl.exceptions import ParameterError, ProtocolError

from .oracles import actions_along, count_objects, find_cells, shortest_cell_path

MR = {"room_count": 2, "max_room_size": 4}
KC = {"row_count": 1, "room_size": 3}


def test_generation_is_deterministic():
    a = generate_task("MultiRoom", 0, {"room_count": 4, "max_room_size": 5})
    b = generate_task("MultiRoom", 0, {"room_count": 4, "max_room_size": 5})
    assert a.same_layout(b)
    c = generate_task("MultiRoom", 1, {"room_count": 4, "max_room_size": 5})
    assert not a.same_layout(c)


def test_multiroom_has_one_goal(multiroom):
    assert count_objects(multiroom.grid, "goal") == 1


def test_keycorridor_has_one_key_and_one_locked_door(keycorridor):
    assert count_objects(keycorridor.grid, "key") == 1
    assert count_objects(keycorridor.grid, "door", "locked") == 1


def test_horizons():
    t = generate_task("MultiRoom", 0, MR)
    assert (t.H, t.H_plus) == (40, 160)
    t = generate_task("KeyCorridor", 0, KC)
    assert (t.H, t.H_plus) == (90, 360)
    assert generate_task("MultiRoom", 0, {**MR, "horizon": 7}).H == 7


@pytest.mark.parametrize(
    "family, params, field",
    [
        ("MultiRoom", {"room_count": 1}, "room_count"),
        ("MultiRoom", {"max_room_size": 3}, "max_room_size"),
        ("KeyCorridor", {"row_count": 0}, "row_count"),
        ("MultiRoom", {"rooms": 2}, "rooms"),
        ("Maze", {}, "family"),
    ],
)
def test_bad_params_name_the_field(family, params, field):
    with pytest.raises(ParameterError) as err:
        generate_task(family, 0, params)
    assert err.value.field == field
    assert field in str(err.value)


def test_reset_protocol(multiroom):
    env = GridEnv(multiroom)
    first = env.reset(0)
    assert first.shape == OBS_SHAPE
    np.testing.assert_array_equal(env.reset(3), first)
    with pytest.raises(ProtocolError):
        env.reset(4)
    with pytest.raises(ProtocolError):
        env.reset(-1)


def test_forward_into_wall_is_a_no_op():
    task = generate_task("MultiRoom", 0, MR)
    env = GridEnv(task)
    env.reset(0)
    # turn until a wall is in front
    for _ in range(4):
        if env.grid[env.front_pos()][0] == OBJECT_TO_IDX["wall"]:
            break
        env.step(Action.LEFT)
    else:
        pytest.skip("start pose not adjacent to a wall")
    pos = env.pos
    tr = env.step(Action.FORWARD)
    assert env.pos == pos and tr.reward == 0.0 and not tr.episode_done


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_goal_reward_matches_formula(seed):
    task = generate_task("MultiRoom", seed, MR)
    (goal,) = find_cells(task.grid, "goal")
    path = shortest_cell_path(task.grid, task.agent_start, goal)
    actions = actions_along(task.grid, path, task.agent_dir)
    assert len(actions) <= task.H
    env = GridEnv(task)
    env.reset(0)
    for t, a in enumerate(actions, start=1):
        tr = env.step(a)
        if t < len(actions):
            assert tr.reward == 0.0 and not tr.episode_done
    assert tr.success and tr.episode_done
    assert tr.reward == pytest.approx(1 - 0.9 * len(actions) / task.H, abs=1e-12)
    with pytest.raises(ProtocolError):
        env.step(Action.LEFT)


def test_locked_door_needs_key(keycorridor):
    env = GridEnv(keycorridor)
    env.reset(0)
    (door,) = [c for c in find_cells(keycorridor.grid, "door") if keycorridor.grid[c][2] == 2]
    # place the agent next to the door, facing it, without the key
    for d, (dx, dy) in enumerate(((1, 0), (0, 1), (-1, 0), (0, -1))):
        p = (door[0] - dx, door[1] - dy)
        if env.grid[p][0] == OBJECT_TO_IDX["empty"]:
            env.pos, env.dir = p, d
            break
    env.step(Action.TOGGLE)
    assert env.grid[door][2] == 2


def test_task_done_only_on_fourth_episode(multiroom):
    env = GridEnv(multiroom)
    flags = []
    for e in range(EPISODES_PER_TASK):
        env.reset(e)
        while True:
            tr = env.step(Action.LEFT)
            if tr.episode_done:
                flags.append(tr.task_done)
                break
    assert flags == [False, False, False, True]


def test_egocentric_view_puts_agent_bottom_centre():
    grid = np.zeros((9, 9, 3), dtype=np.int8)
    grid[..., 0] = OBJECT_TO_IDX["empty"]
    grid[4, 1] = (OBJECT_TO_IDX["ball"], 2, 0)
    view = egocentric_view(grid, (4, 4), 3)  # facing up
    assert view[3, 3, 0] == OBJECT_TO_IDX["ball"]
    assert view[3, 6, 0] == OBJECT_TO_IDX["empty"]


@settings(max_examples=25, deadline=None)
@given(
    family=st.sampled_from(["MultiRoom", "KeyCorridor"]),
    seed=st.integers(0, 10_000),
    actions=st.lists(st.integers(0, 6), min_size=1, max_size=60),
)
def test_observation_invariants_and_replay(family, seed, actions):
    task = generate_task(family, seed, MR if family == "MultiRoom" else KC)

    def play():
        env = GridEnv(task)
        out = [env.reset(0)]
        rewards = []
        for a in actions:
            tr = env.step(a)
            out.append(tr.obs)
            rewards.append(tr.reward)
            if tr.episode_done:
                break
        return out, rewards

    obs, rewards = play()
    for o in obs:
        assert o.shape == OBS_SHAPE and o.min() >= 0.0 and o.max() <= 1.0
    assert sum(r != 0 for r in rewards) <= 1
    assert all(0.0 <= r <= 1.0 for r in rewards)
    obs2, rewards2 = play()
    assert rewards == rewards2
    for a, b in zip(obs, obs2):
        np.testing.assert_array_equal(a, b)


def test_vec_env_steps_only_active(multiroom):
    venv = VecGridEnv([multiroom, multiroom])
    venv.reset([0, 0])
    out = venv.step([Action.LEFT, Action.LEFT], active=[True, False])
    assert out[1] is None and out[0].action == Action.LEFT
