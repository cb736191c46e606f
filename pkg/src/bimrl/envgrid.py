"""Procedurally generated, partially observable gridworlds.

Two families are provided, modelled after the MiniGrid tasks of the same
names:

* ``MultiRoom``: a chain of rooms joined by closed doors; reach the green
  goal square in the last room.
* ``KeyCorridor``: a 3-column room grid; the target ball sits behind a locked
  door whose key is hidden in one of the left-hand rooms.

A *task* is one generated layout.  The agent sees four episodes of every
task; the layout and the start pose are identical across those episodes.

Observations are egocentric ``7 x 7 x 3`` float arrays indexed ``[x, y, c]``
with the agent at ``(3, 6)`` looking "up".  Channels hold the object type,
color and state ids, each divided by the largest id of its table::

    OBJECT_TO_IDX  unseen 0, empty 1, wall 2, floor 3, door 4, key 5,
                   ball 6, box 7, goal 8, lava 9, agent 10     (/10)
    COLOR_TO_IDX   red 0, green 1, blue 2, purple 3, yellow 4, grey 5 (/5)
    STATE_TO_IDX   open 0, closed 1, locked 2                   (/2)

Cells hidden behind walls or closed doors are encoded as ``unseen``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping, Optional

import numpy as np

from .exceptions import ParameterError, ProtocolError

OBJECT_TO_IDX = {
    "unseen": 0,
    "empty": 1,
    "wall": 2,
    "floor": 3,
    "door": 4,
    "key": 5,
    "ball": 6,
    "box": 7,
    "goal": 8,
    "lava": 9,
    "agent": 10,
}
COLOR_TO_IDX = {"red": 0, "green": 1, "blue": 2, "purple": 3, "yellow": 4, "grey": 5}
STATE_TO_IDX = {"open": 0, "closed": 1, "locked": 2}

OBS_SHAPE = (7, 7, 3)
N_ACTIONS = 7
EPISODES_PER_TASK = 4
VIEW = 7

_NORM = np.array(
    [max(OBJECT_TO_IDX.values()), max(COLOR_TO_IDX.values()), max(STATE_TO_IDX.values())],
    dtype=np.float32,
)

EMPTY = OBJECT_TO_IDX["empty"]
WALL = OBJECT_TO_IDX["wall"]
DOOR = OBJECT_TO_IDX["door"]
KEY = OBJECT_TO_IDX["key"]
BALL = OBJECT_TO_IDX["ball"]
GOAL = OBJECT_TO_IDX["goal"]
OPEN, CLOSED, LOCKED = 0, 1, 2
_PICKABLE = (KEY, BALL, OBJECT_TO_IDX["box"])
_OVERLAPPABLE = (EMPTY, GOAL, OBJECT_TO_IDX["floor"], OBJECT_TO_IDX["lava"])

# right, down, left, up
DIR_TO_VEC = ((1, 0), (0, 1), (-1, 0), (0, -1))


class Action(IntEnum):
    LEFT = 0
    RIGHT = 1
    FORWARD = 2
    PICKUP = 3
    DROP = 4
    TOGGLE = 5
    DONE = 6


FAMILIES = ("MultiRoom", "KeyCorridor")
_FAMILY_PARAMS = {
    "MultiRoom": {"room_count": 2, "max_room_size": 4},
    "KeyCorridor": {"row_count": 1, "room_size": 3},
}


@dataclass(eq=False)
class TaskSpec:
    """A generated task: family, seed, parameters and the frozen layout.

    ``grid`` has shape ``(width, height, 3)`` and holds integer
    ``(type, color, state)`` triples.
    """

    family: str
    seed: int
    params: dict
    H: int
    grid: np.ndarray = field(repr=False)
    agent_start: tuple
    agent_dir: int
    target: Optional[tuple] = None

    @property
    def H_plus(self) -> int:
        return EPISODES_PER_TASK * self.H

    def same_layout(self, other: "TaskSpec") -> bool:
        return (
            self.grid.shape == other.grid.shape
            and bool(np.array_equal(self.grid, other.grid))
            and self.agent_start == other.agent_start
            and self.agent_dir == other.agent_dir
        )


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    episode_done: bool
    task_done: bool
    success: bool = False


def _canonical_family(family: str) -> str:
    for name in FAMILIES:
        if str(family).lower() == name.lower():
            return name
    raise ParameterError("family", f"unknown family {family!r}; expected one of {FAMILIES}")


def _validate_params(family: str, params: Optional[Mapping]) -> dict:
    defaults = _FAMILY_PARAMS[family]
    params = dict(params or {})
    horizon = params.pop("horizon", None)
    unknown = set(params) - set(defaults)
    if unknown:
        raise ParameterError(sorted(unknown)[0], f"not a {family} parameter")
    out = {**defaults, **params}
    for name, value in out.items():
        if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
            raise ParameterError(name, f"must be an integer, got {value!r}")
        out[name] = int(value)
    if family == "MultiRoom":
        if out["room_count"] < 2:
            raise ParameterError("room_count", "must be >= 2")
        if out["max_room_size"] < 4:
            raise ParameterError("max_room_size", "must be >= 4")
    else:
        if out["row_count"] < 1:
            raise ParameterError("row_count", "must be >= 1")
        if out["room_size"] < 3:
            raise ParameterError("room_size", "must be >= 3")
    if horizon is not None:
        if int(horizon) < 1:
            raise ParameterError("horizon", "must be >= 1")
        out["horizon"] = int(horizon)
    return out


def default_horizon(family: str, params: Mapping) -> int:
    if "horizon" in params:
        return int(params["horizon"])
    if family == "MultiRoom":
        return 20 * params["room_count"]
    return 30 * params["room_size"] * params["row_count"]


def generate_task(family: str, seed: int, params: Optional[Mapping] = None) -> TaskSpec:
    """Build a deterministic task layout for ``(family, seed, params)``."""
    family = _canonical_family(family)
    if int(seed) < 0:
        raise ParameterError("seed", "must be non-negative")
    params = _validate_params(family, params)
    rng = np.random.default_rng(int(seed))
    if family == "MultiRoom":
        grid, start, start_dir, target = _gen_multiroom(
            rng, params["room_count"], params["max_room_size"]
        )
    else:
        grid, start, start_dir, target = _gen_keycorridor(
            rng, params["row_count"], params["room_size"]
        )
    return TaskSpec(
        family=family,
        seed=int(seed),
        params=params,
        H=default_horizon(family, params),
        grid=grid,
        agent_start=start,
        agent_dir=start_dir,
        target=target,
    )


# -- generators --------------------------------------------------------------


def _rand_color(rng, exclude=None):
    choices = [c for c in range(len(COLOR_TO_IDX)) if c != exclude]
    return int(choices[int(rng.integers(len(choices)))])


def _interior_cells(x0, y0, w, h):
    return [(x, y) for x in range(x0 + 1, x0 + w - 1) for y in range(y0 + 1, y0 + h - 1)]


def _rects_intersect(a, b):
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    return not (ax1 < bx0 or bx1 < ax0 or ay1 < by0 or by1 < ay0)


def _gen_multiroom(rng, room_count, max_size, grid_size=25, min_size=4):
    grid_size = max(grid_size, max_size * room_count)
    for _ in range(1000):
        rooms = _place_rooms(rng, room_count, min_size, max_size, grid_size)
        if rooms is not None:
            break
    else:  # pragma: no cover - exhausted retries
        raise ParameterError("max_room_size", "could not place rooms")

    grid = np.zeros((grid_size, grid_size, 3), dtype=np.int8)
    grid[..., 0] = WALL
    grid[..., 1] = COLOR_TO_IDX["grey"]
    for x0, y0, w, h, _, _ in rooms:
        for x, y in _interior_cells(x0, y0, w, h):
            grid[x, y] = (EMPTY, 0, 0)
    prev_color = None
    for _, _, _, _, door, _ in rooms[1:]:
        color = _rand_color(rng, exclude=prev_color)
        grid[door] = (DOOR, color, CLOSED)
        prev_color = color

    last = rooms[-1]
    cells = _interior_cells(*last[:4])
    goal = cells[int(rng.integers(len(cells)))]
    grid[goal] = (GOAL, COLOR_TO_IDX["green"], 0)

    first = rooms[0]
    cells = _interior_cells(*first[:4])
    start = cells[int(rng.integers(len(cells)))]
    return grid, tuple(int(v) for v in start), int(rng.integers(4)), None


def _place_rooms(rng, room_count, min_size, max_size, grid_size):
    def size():
        return int(rng.integers(min_size, max_size + 1)), int(rng.integers(min_size, max_size + 1))

    w, h = size()
    x0 = int(rng.integers(0, grid_size - w + 1))
    y0 = int(rng.integers(0, grid_size - h + 1))
    # (x0, y0, w, h, entry_door, entry_side)
    rooms = [(x0, y0, w, h, None, None)]
    while len(rooms) < room_count:
        px, py, pw, ph, _, pside = rooms[-1]
        for _ in range(60):
            side = int(rng.integers(4))
            if side == pside:
                continue
            w, h = size()
            if side == 0:
                door = (px + pw - 1, py + int(rng.integers(1, ph - 1)))
                x0, y0 = door[0], door[1] - int(rng.integers(1, h - 1))
                free = (x0 + 1, y0, x0 + w - 1, y0 + h - 1)
            elif side == 2:
                door = (px, py + int(rng.integers(1, ph - 1)))
                x0, y0 = door[0] - w + 1, door[1] - int(rng.integers(1, h - 1))
                free = (x0, y0, x0 + w - 2, y0 + h - 1)
            elif side == 1:
                door = (px + int(rng.integers(1, pw - 1)), py + ph - 1)
                x0, y0 = door[0] - int(rng.integers(1, w - 1)), door[1]
                free = (x0, y0 + 1, x0 + w - 1, y0 + h - 1)
            else:
                door = (px + int(rng.integers(1, pw - 1)), py)
                x0, y0 = door[0] - int(rng.integers(1, w - 1)), door[1] - h + 1
                free = (x0, y0, x0 + w - 1, y0 + h - 2)
            if x0 < 0 or y0 < 0 or x0 + w > grid_size or y0 + h > grid_size:
                continue
            if any(
                _rects_intersect(free, (rx, ry, rx + rw - 1, ry + rh - 1))
                for rx, ry, rw, rh, _, _ in rooms
            ):
                continue
            rooms.append((x0, y0, w, h, door, (side + 2) % 4))
            break
        else:
            return None
    return rooms


def _gen_keycorridor(rng, num_rows, room_size, num_cols=3):
    step = room_size - 1
    width, height = step * num_cols + 1, step * num_rows + 1
    grid = np.zeros((width, height, 3), dtype=np.int8)
    grid[..., 0] = WALL
    grid[..., 1] = COLOR_TO_IDX["grey"]

    def interior(i, j):
        return _interior_cells(i * step, j * step, room_size, room_size)

    for i in range(num_cols):
        for j in range(num_rows):
            for cell in interior(i, j):
                grid[cell] = (EMPTY, 0, 0)

    # union-find over rooms; middle column is an open hallway
    parent = {(i, j): (i, j) for i in range(num_cols) for j in range(num_rows)}

    def find(r):
        while parent[r] != r:
            parent[r] = parent[parent[r]]
            r = parent[r]
        return r

    def union(a, b):
        parent[find(a)] = find(b)

    for j in range(1, num_rows):
        y = j * step
        for x in range(step + 1, 2 * step):
            grid[x, y] = (EMPTY, 0, 0)
        union((1, j - 1), (1, j))

    def wall_door_pos(a, b):
        (i0, j0), (i1, j1) = sorted([a, b])
        if i0 != i1:
            x = i1 * step
            return (x, j0 * step + int(rng.integers(1, room_size - 1)))
        y = j1 * step
        return (i0 * step + int(rng.integers(1, room_size - 1)), y)

    locked_row = int(rng.integers(num_rows))
    locked_room = (2, locked_row)
    door_color = _rand_color(rng)
    grid[wall_door_pos((1, locked_row), locked_room)] = (DOOR, door_color, LOCKED)
    union((1, locked_row), locked_room)

    ball_color = _rand_color(rng)
    cells = interior(*locked_room)
    ball = cells[int(rng.integers(len(cells)))]
    grid[ball] = (BALL, ball_color, 0)

    key_room = (0, int(rng.integers(num_rows)))
    cells = interior(*key_room)
    key = cells[int(rng.integers(len(cells)))]
    grid[key] = (KEY, door_color, 0)

    agent_room = (1, num_rows // 2)
    cells = [c for c in interior(*agent_room) if grid[c][0] == EMPTY]
    start = cells[int(rng.integers(len(cells)))]

    # connect every room except the locked one to the hallway component
    rooms = [r for r in parent if r != locked_room]
    while len({find(r) for r in rooms}) > 1:
        a = rooms[int(rng.integers(len(rooms)))]
        neighbours = [
            (a[0] + dx, a[1] + dy)
            for dx, dy in DIR_TO_VEC
            if (a[0] + dx, a[1] + dy) in parent and (a[0] + dx, a[1] + dy) != locked_room
        ]
        b = neighbours[int(rng.integers(len(neighbours)))]
        if find(a) == find(b):
            continue
        pos = wall_door_pos(a, b)
        grid[pos] = (DOOR, _rand_color(rng, exclude=door_color), CLOSED)
        union(a, b)

    return grid, tuple(int(v) for v in start), int(rng.integers(4)), (BALL, ball_color)


# -- observation -------------------------------------------------------------


def _rotate_left(view: np.ndarray) -> np.ndarray:
    return view[::-1].swapaxes(0, 1)


def _see_behind(cell) -> bool:
    kind = cell[0]
    if kind == WALL:
        return False
    if kind == DOOR:
        return cell[2] == OPEN
    return True


def _visibility(view: np.ndarray) -> np.ndarray:
    w, h = view.shape[:2]
    mask = np.zeros((w, h), dtype=bool)
    mask[w // 2, h - 1] = True
    for j in reversed(range(h)):
        for i in range(w - 1):
            if not mask[i, j] or not _see_behind(view[i, j]):
                continue
            mask[i + 1, j] = True
            if j > 0:
                mask[i + 1, j - 1] = True
                mask[i, j - 1] = True
        for i in reversed(range(1, w)):
            if not mask[i, j] or not _see_behind(view[i, j]):
                continue
            mask[i - 1, j] = True
            if j > 0:
                mask[i - 1, j - 1] = True
                mask[i, j - 1] = True
    return mask


def egocentric_view(grid: np.ndarray, pos, direction: int, carrying=None) -> np.ndarray:
    """Integer ``(7, 7, 3)`` view of ``grid`` from ``pos`` facing ``direction``."""
    ax, ay = pos
    half = VIEW // 2
    if direction == 0:
        tx, ty = ax, ay - half
    elif direction == 1:
        tx, ty = ax - half, ay
    elif direction == 2:
        tx, ty = ax - VIEW + 1, ay - half
    else:
        tx, ty = ax - half, ay - VIEW + 1

    W, H = grid.shape[:2]
    view = np.empty((VIEW, VIEW, 3), dtype=np.int8)
    view[..., 0] = WALL
    view[..., 1] = COLOR_TO_IDX["grey"]
    view[..., 2] = 0
    x0, y0 = max(tx, 0), max(ty, 0)
    x1, y1 = min(tx + VIEW, W), min(ty + VIEW, H)
    if x0 < x1 and y0 < y1:
        view[x0 - tx : x1 - tx, y0 - ty : y1 - ty] = grid[x0:x1, y0:y1]
    for _ in range(direction + 1):
        view = _rotate_left(view)

    mask = _visibility(view)
    agent_cell = (VIEW // 2, VIEW - 1)
    view = np.array(view)
    view[agent_cell] = carrying if carrying is not None else (EMPTY, 0, 0)
    view[~mask] = 0
    return view


def normalize_view(view: np.ndarray) -> np.ndarray:
    return view.astype(np.float32) / _NORM


# -- environment -------------------------------------------------------------


class GridEnv:
    """Single-task gridworld following the four-episode task protocol.

    Usage::

        env = GridEnv(generate_task("MultiRoom", seed=0))
        obs = env.reset(0)
        tr = env.step(Action.FORWARD)
    """

    def __init__(self, task: TaskSpec):
        self.task = task
        self.episode_index = None
        self.episode_done = True
        self.grid = None
        self.pos = None
        self.dir = None
        self.carrying = None
        self.step_count = 0

    @property
    def H(self) -> int:
        return self.task.H

    def reset(self, episode_index: int) -> np.ndarray:
        if not 0 <= int(episode_index) < EPISODES_PER_TASK:
            raise ProtocolError(
                f"episode_index must be in [0, {EPISODES_PER_TASK}), got {episode_index}"
            )
        self.episode_index = int(episode_index)
        self.grid = self.task.grid.copy()
        self.pos = tuple(self.task.agent_start)
        self.dir = int(self.task.agent_dir)
        self.carrying = None
        self.step_count = 0
        self.episode_done = False
        return self.observation()

    def observation(self) -> np.ndarray:
        return normalize_view(egocentric_view(self.grid, self.pos, self.dir, self.carrying))

    def front_pos(self):
        dx, dy = DIR_TO_VEC[self.dir]
        return self.pos[0] + dx, self.pos[1] + dy

    def _in_bounds(self, p):
        return 0 <= p[0] < self.grid.shape[0] and 0 <= p[1] < self.grid.shape[1]

    def step(self, action: int) -> Transition:
        if self.episode_index is None or self.episode_done:
            raise ProtocolError("step() called before reset() or after the episode ended")
        action = int(action)
        if not 0 <= action < N_ACTIONS:
            raise ProtocolError(f"action must be in [0, {N_ACTIONS}), got {action}")

        self.step_count += 1
        success = False
        front = self.front_pos()
        cell = self.grid[front] if self._in_bounds(front) else np.array((WALL, 5, 0))
        kind = int(cell[0])

        if action == Action.LEFT:
            self.dir = (self.dir - 1) % 4
        elif action == Action.RIGHT:
            self.dir = (self.dir + 1) % 4
        elif action == Action.FORWARD:
            if kind in _OVERLAPPABLE or (kind == DOOR and cell[2] == OPEN):
                self.pos = front
                if kind == GOAL:
                    success = True
        elif action == Action.PICKUP:
            if kind in _PICKABLE and self.carrying is None:
                self.carrying = tuple(int(v) for v in cell)
                self.grid[front] = (EMPTY, 0, 0)
                if self.task.target is not None and self.carrying[:2] == tuple(self.task.target):
                    success = True
        elif action == Action.DROP:
            if kind == EMPTY and self.carrying is not None:
                self.grid[front] = self.carrying
                self.carrying = None
        elif action == Action.TOGGLE:
            if kind == DOOR:
                if cell[2] == LOCKED:
                    if (
                        self.carrying is not None
                        and self.carrying[0] == KEY
                        and self.carrying[1] == cell[1]
                    ):
                        self.grid[front][2] = OPEN
                elif cell[2] == CLOSED:
                    self.grid[front][2] = OPEN
                else:
                    self.grid[front][2] = CLOSED

        reward = 0.0
        if success:
            reward = 1.0 - 0.9 * (self.step_count / self.H)
        self.episode_done = success or self.step_count >= self.H
        task_done = self.episode_done and self.episode_index == EPISODES_PER_TASK - 1
        return Transition(
            obs=self.observation(),
            action=action,
            reward=float(reward),
            episode_done=self.episode_done,
            task_done=task_done,
            success=success,
        )

    def render_ascii(self) -> str:
        chars = {EMPTY: ".", WALL: "#", DOOR: "D", KEY: "k", BALL: "o", GOAL: "G", 0: " "}
        arrows = ">v<^"
        rows = []
        for y in range(self.grid.shape[1]):
            row = []
            for x in range(self.grid.shape[0]):
                if (x, y) == tuple(self.pos):
                    row.append(arrows[self.dir])
                    continue
                kind = int(self.grid[x, y, 0])
                ch = chars.get(kind, "?")
                if kind == DOOR:
                    ch = "_" if self.grid[x, y, 2] == OPEN else ("L" if self.grid[x, y, 2] == LOCKED else "D")
                row.append(ch)
            rows.append("".join(row))
        return "\n".join(rows)


class VecGridEnv:
    """Steps a list of :class:`GridEnv` synchronously."""

    def __init__(self, tasks):
        self.envs = [GridEnv(t) for t in tasks]

    def __len__(self):
        return len(self.envs)

    def reset(self, episode_indices):
        return np.stack([env.reset(i) for env, i in zip(self.envs, episode_indices)])

    def step(self, actions, active=None):
        active = [True] * len(self.envs) if active is None else active
        return [env.step(a) if on else None for env, a, on in zip(self.envs, actions, active)]
