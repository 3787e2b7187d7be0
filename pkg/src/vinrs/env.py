"""Deterministic gridworld MDPs and an exact value-iteration planner."""

from collections import deque
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, NamedTuple, Optional, Tuple

import numpy as np

Cell = Tuple[int, int]

UP, DOWN, LEFT, RIGHT = 0, 1, 2, 3
ACTIONS = (UP, DOWN, LEFT, RIGHT)
ACTION_NAMES = ("Up", "Down", "Left", "Right")
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
N_ACTIONS = len(ACTIONS)


@dataclass(frozen=True)
class Gridworld:
    """Finite deterministic gridworld.

    Cells are ``(row, col)``. States are the non-wall cells numbered in
    row-major order. Reaching the goal ends the episode; traps only cost
    their penalty. Moving into a wall or off the grid leaves the agent put.
    """

    height: int
    width: int
    walls: FrozenSet[Cell]
    goal: Cell
    start: Cell
    goal_reward: float = 1.0
    step_reward: float = -0.01
    traps: Tuple[Tuple[Cell, float], ...] = ()
    gamma: float = 0.99
    max_episode_steps: int = 500

    cells: Tuple[Cell, ...] = field(init=False, repr=False, compare=False)
    next_state: np.ndarray = field(init=False, repr=False, compare=False)
    cell_reward: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "walls", frozenset(tuple(c) for c in self.walls))
        object.__setattr__(self, "traps", tuple(sorted((tuple(c), float(p)) for c, p in self.traps)))
        if self.height < 1 or self.width < 1:
            raise ValueError("grid dimensions must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be positive")
        for name, c in (("goal", self.goal), ("start", self.start)):
            if not self._inside(c) or c in self.walls:
                raise ValueError(f"{name} {c} must be a free cell inside the grid")
        trap_cells = set()
        for c, p in self.traps:
            if not self._inside(c) or c in self.walls:
                raise ValueError(f"trap {c} must be a free cell inside the grid")
            if c == self.goal:
                raise ValueError("the goal cannot be a trap")
            if c in trap_cells:
                raise ValueError(f"duplicate trap {c}")
            if p >= 0:
                raise ValueError("trap penalties must be negative")
            trap_cells.add(c)

        cells = tuple((r, c) for r in range(self.height) for c in range(self.width)
                      if (r, c) not in self.walls)
        index = {cell: i for i, cell in enumerate(cells)}
        nxt = np.empty((len(cells), N_ACTIONS), dtype=np.int64)
        for i, (r, c) in enumerate(cells):
            for a, (dr, dc) in enumerate(MOVES):
                dest = (r + dr, c + dc)
                nxt[i, a] = index[dest] if dest in index else i
        trap_map = dict(self.traps)
        reward = np.array([
            self.goal_reward if cell == self.goal else trap_map.get(cell, self.step_reward)
            for cell in cells
        ])
        nxt.setflags(write=False)
        reward.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "next_state", nxt)
        object.__setattr__(self, "cell_reward", reward)

        unreachable = set(cells) - set(_bfs_distances(self, self.goal))
        if unreachable:
            raise ValueError(f"cells cannot reach the goal: {sorted(unreachable)[:5]}")

    def _inside(self, c: Cell) -> bool:
        return 0 <= c[0] < self.height and 0 <= c[1] < self.width

    @property
    def n_states(self) -> int:
        return len(self.cells)

    @property
    def trap_map(self) -> Dict[Cell, float]:
        return dict(self.traps)

    def state_of(self, cell: Cell) -> int:
        return self._index[tuple(cell)]

    def cell_of(self, state: int) -> Cell:
        return self.cells[state]

    @property
    def start_state(self) -> int:
        return self.state_of(self.start)

    @property
    def goal_state(self) -> int:
        return self.state_of(self.goal)

    def is_terminal(self, state: int) -> bool:
        return state == self.goal_state


def _bfs_distances(world: Gridworld, source: Cell) -> Dict[Cell, int]:
    # moves are symmetric, so distances from the goal equal distances to it
    dist = {source: 0}
    queue = deque([source])
    while queue:
        r, c = queue.popleft()
        for dr, dc in MOVES:
            n = (r + dr, c + dc)
            if world._inside(n) and n not in world.walls and n not in dist:
                dist[n] = dist[(r, c)] + 1
                queue.append(n)
    return dist


def shortest_path_length(world: Gridworld, source: Optional[Cell] = None) -> int:
    return _bfs_distances(world, world.goal)[tuple(source or world.start)]


# layouts ----------------------------------------------------------------------

FOUR_ROOMS_LAYOUT = (
    "#############",
    "#     #     #",
    "#     #     #",
    "#           #",
    "#     #     #",
    "#     #     #",
    "## ####     #",
    "#     ### ###",
    "#     #     #",
    "#     #     #",
    "#           #",
    "#     #     #",
    "#############",
)


def _parse_layout(rows):
    walls = frozenset((r, c) for r, line in enumerate(rows)
                      for c, ch in enumerate(line) if ch == "#")
    return len(rows), len(rows[0]), walls


def doorways(world: Gridworld):
    """Free cells squeezed between two opposite walls."""
    out = []
    for (r, c) in world.cells:
        vertical = (r - 1, c) in world.walls and (r + 1, c) in world.walls
        horizontal = (r, c - 1) in world.walls and (r, c + 1) in world.walls
        if vertical or horizontal:
            out.append((r, c))
    return out


def four_rooms(gamma: float = 0.99, step_reward: float = -0.01, goal_reward: float = 1.0,
               max_episode_steps: int = 500) -> Gridworld:
    """Classic 13x13 four-rooms maze: start top-left room, goal bottom-right room."""
    h, w, walls = _parse_layout(FOUR_ROOMS_LAYOUT)
    return Gridworld(h, w, walls, goal=(11, 11), start=(1, 1), goal_reward=goal_reward,
                     step_reward=step_reward, gamma=gamma, max_episode_steps=max_episode_steps)


def four_rooms_traps(n_traps: int = 8, penalty: float = -1.0, seed: int = 0,
                     **kwargs) -> Gridworld:
    """Four rooms with ``n_traps`` penalty cells drawn with a seeded RNG.

    Doorways, the start, the goal and the goal's neighbours are never trapped.
    """
    base = four_rooms(**kwargs)
    if n_traps == 0:
        return base
    if penalty >= 0:
        raise ValueError("trap penalty must be negative")
    banned = set(doorways(base)) | {base.start, base.goal}
    gr, gc = base.goal
    banned |= {(gr + dr, gc + dc) for dr, dc in MOVES}
    candidates = [c for c in base.cells if c not in banned]
    if not 0 <= n_traps <= len(candidates):
        raise ValueError(f"n_traps must be in [0, {len(candidates)}], got {n_traps}")
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(candidates), size=n_traps, replace=False)
    traps = tuple((candidates[i], float(penalty)) for i in sorted(picks))
    return Gridworld(base.height, base.width, base.walls, base.goal, base.start,
                     base.goal_reward, base.step_reward, traps, base.gamma,
                     base.max_episode_steps)


def make_world(name: str, **kwargs) -> Gridworld:
    if name == "four_rooms":
        return four_rooms(**kwargs)
    if name == "four_rooms_traps":
        return four_rooms_traps(**kwargs)
    raise ValueError(f"unknown environment {name!r}")


# dynamics ---------------------------------------------------------------------

def step(world: Gridworld, state: int, action: int, t: int = 0):
    """Apply ``action`` in ``state``; ``t`` counts steps already taken.

    Returns ``(next_state, reward, done)`` where the reward belongs to the
    cell being entered and ``done`` also fires at the step cap.
    """
    nxt = int(world.next_state[state, action])
    reward = float(world.cell_reward[nxt])
    done = nxt == world.goal_state or t + 1 >= world.max_episode_steps
    return nxt, reward, done


def render(world: Gridworld, state: int) -> np.ndarray:
    """3 x H x W observation: walls, goal/traps, agent one-hot."""
    planes = np.zeros((3, world.height, world.width))
    for (r, c) in world.walls:
        planes[0, r, c] = 1.0
    planes[1][world.goal] = 1.0
    if world.traps:
        scale = max(abs(p) for _, p in world.traps)
        for cell, p in world.traps:
            planes[1][cell] = p / scale
    planes[2][world.cells[state]] = 1.0
    return planes


def render_all(world: Gridworld) -> np.ndarray:
    """Observations for every state, stacked as n_states x 3 x H x W."""
    base = render(world, 0)
    base[2] = 0.0
    out = np.repeat(base[None], world.n_states, axis=0)
    for s, cell in enumerate(world.cells):
        out[s, 2][cell] = 1.0
    return out


# planning ---------------------------------------------------------------------

class ValueIterationResult(NamedTuple):
    values: np.ndarray
    q: np.ndarray
    greedy: np.ndarray
    sweeps: int


def _greedy(q: np.ndarray) -> np.ndarray:
    # np.argmax keeps the first maximum, i.e. Up < Down < Left < Right
    return np.argmax(q, axis=1)


def exact_value_iteration(world: Gridworld, tol: float = 1e-10,
                          max_sweeps: int = 100_000) -> ValueIterationResult:
    """Synchronous Bellman sweeps with reward collected in the current cell.

    Q(s, a) = R(s) + gamma * V(s'),  V(goal) = R(goal) (absorbing).
    This orders actions exactly like returns built from ``step`` rewards.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if world.gamma >= 1.0 and world.step_reward >= 0:
        raise ValueError("gamma = 1 needs a negative step reward to converge")
    n = world.n_states
    g = world.goal_state
    R = world.cell_reward
    nxt = world.next_state
    v = np.zeros(n)
    for sweep in range(1, max_sweeps + 1):
        q = R[:, None] + world.gamma * v[nxt]
        q[g, :] = R[g]
        v_new = q.max(axis=1)
        delta = np.max(np.abs(v_new - v))
        v = v_new
        if delta < tol:
            break
    else:
        raise RuntimeError(f"value iteration did not converge in {max_sweeps} sweeps")
    q = R[:, None] + world.gamma * v[nxt]
    q[g, :] = R[g]
    return ValueIterationResult(q.max(axis=1), q, _greedy(q), sweep)


def shaped_value_iteration(world: Gridworld, potential: np.ndarray, tol: float = 1e-12,
                           max_sweeps: int = 100_000) -> ValueIterationResult:
    """Value iteration on a potential-shaped reward.

    ``potential`` is either a state table (n,) giving F = g*phi(s') - phi(s),
    or a state-action table (n, 4) giving the look-ahead form
    F = g*phi(s', a') - phi(s, a), with zero potential at the goal.

    For the look-ahead form the returned ``q`` is already advice-corrected
    (Q_shaped(s, a) + phi(s, a)), the quantity a look-ahead agent acts on.
    """
    phi = np.asarray(potential, dtype=np.float64)
    n, g, gam = world.n_states, world.goal_state, world.gamma
    R, nxt = world.cell_reward, world.next_state
    if phi.shape == (n,):
        phi = phi.copy()
        phi[g] = 0.0
        lookahead = False
    elif phi.shape == (n, N_ACTIONS):
        phi = phi.copy()
        phi[g, :] = 0.0
        lookahead = True
    else:
        raise ValueError(f"potential must have shape ({n},) or ({n}, {N_ACTIONS})")

    q = np.zeros((n, N_ACTIONS))
    for sweep in range(1, max_sweeps + 1):
        if lookahead:
            # the agent at s' picks a' by Q_shaped + phi, then receives g*phi(s', a')
            best = (q + phi).max(axis=1)
            q_new = R[:, None] - phi + gam * best[nxt]
            q_new[g, :] = R[g]
        else:
            v = q.max(axis=1)
            q_new = R[:, None] + gam * phi[nxt] - phi[:, None] + gam * v[nxt]
            q_new[g, :] = R[g]
        delta = np.max(np.abs(q_new - q))
        q = q_new
        if delta < tol:
            break
    else:
        raise RuntimeError(f"shaped value iteration did not converge in {max_sweeps} sweeps")
    if lookahead:
        q = q + phi
    return ValueIterationResult(q.max(axis=1), q, _greedy(q), sweep)


def greedy_tie_sets(q: np.ndarray, atol: float = 1e-9):
    """For every state, the set of actions within ``atol`` of the best."""
    best = q.max(axis=1, keepdims=True)
    return [frozenset(np.flatnonzero(row >= b - atol).tolist()) for row, b in zip(q, best)]


def greedy_rollout(world: Gridworld, policy: np.ndarray, state: Optional[int] = None,
                   max_steps: Optional[int] = None):
    """Follow a deterministic policy; returns the visited state sequence."""
    s = world.start_state if state is None else state
    path = [s]
    limit = max_steps if max_steps is not None else world.n_states
    for _ in range(limit):
        if world.is_terminal(s):
            break
        s = int(world.next_state[s, policy[s]])
        path.append(s)
    return path


# text map format --------------------------------------------------------------

def dumps_map(world: Gridworld) -> str:
    """Serialise to the plain-text map format (header line + one char per cell)."""
    header = [f"gamma={world.gamma!r}", f"step_reward={world.step_reward!r}",
              f"goal_reward={world.goal_reward!r}",
              f"max_episode_steps={world.max_episode_steps}"]
    penalties = {p for _, p in world.traps}
    if len(penalties) > 1:
        raise ValueError("the text map format holds a single trap penalty")
    if penalties:
        header.append(f"trap_penalty={penalties.pop()!r}")
    traps = world.trap_map
    lines = [" ".join(header)]
    for r in range(world.height):
        row = []
        for c in range(world.width):
            cell = (r, c)
            if cell in world.walls:
                row.append("#")
            elif cell == world.goal:
                row.append("G")
            elif cell == world.start:
                row.append("S")
            elif cell in traps:
                row.append("T")
            else:
                row.append(".")
        lines.append("".join(row))
    return "\n".join(lines) + "\n"


def loads_map(text: str) -> Gridworld:
    """Parse the plain-text map format; Gridworld validates the invariants."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty map")
    fields = {}
    for tok in lines[0].split():
        if "=" not in tok:
            raise ValueError(f"bad header token {tok!r}")
        k, v = tok.split("=", 1)
        fields[k] = v
    for required in ("gamma", "step_reward"):
        if required not in fields:
            raise ValueError(f"map header lacks {required}=")
    rows = lines[1:]
    if len({len(r) for r in rows}) != 1:
        raise ValueError("map rows must have equal length")
    walls, traps = set(), []
    goal = start = None
    penalty = float(fields.get("trap_penalty", -1.0))
    for r, line in enumerate(rows):
        for c, ch in enumerate(line):
            if ch == "#":
                walls.add((r, c))
            elif ch == "G":
                if goal is not None:
                    raise ValueError("more than one goal")
                goal = (r, c)
            elif ch == "S":
                if start is not None:
                    raise ValueError("more than one start")
                start = (r, c)
            elif ch == "T":
                traps.append(((r, c), penalty))
            elif ch != ".":
                raise ValueError(f"unknown map character {ch!r}")
    if goal is None or start is None:
        raise ValueError("map needs exactly one G and one S")
    return Gridworld(len(rows), len(rows[0]), frozenset(walls), goal, start,
                     goal_reward=float(fields.get("goal_reward", 1.0)),
                     step_reward=float(fields["step_reward"]), traps=tuple(traps),
                     gamma=float(fields["gamma"]),
                     max_episode_steps=int(fields.get("max_episode_steps", 500)))
