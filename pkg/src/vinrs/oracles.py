"""Slow reference implementations used to cross-check the fast code paths.

Everything here is written with explicit loops and shares no code with the
modules it checks beyond plain data containers.
"""

import itertools
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .env import Gridworld, MOVES
from .graph import ExperienceGraph


# tensor ops -------------------------------------------------------------------

def conv2d_loops(x: np.ndarray, k: np.ndarray, b=None) -> np.ndarray:
    """Same-padded stride-1 cross-correlation, one output element at a time."""
    C, H, W = x.shape
    O, Ci, kh, kw = k.shape
    assert Ci == C
    out = np.zeros((O, H, W))
    for o in range(O):
        for i in range(H):
            for j in range(W):
                acc = 0.0 if b is None else float(b[o])
                for c in range(C):
                    for u in range(kh):
                        for v in range(kw):
                            ii, jj = i + u - kh // 2, j + v - kw // 2
                            if 0 <= ii < H and 0 <= jj < W:
                                acc += k[o, c, u, v] * x[c, ii, jj]
                out[o, i, j] = acc
    return out


def channel_max_loops(x: np.ndarray):
    C, H, W = x.shape
    vals = np.empty((H, W))
    arg = np.empty((H, W), dtype=int)
    for i in range(H):
        for j in range(W):
            best, bi = x[0, i, j], 0
            for c in range(1, C):
                if x[c, i, j] > best:
                    best, bi = x[c, i, j], c
            vals[i, j], arg[i, j] = best, bi
    return vals, arg


def dense_loops(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = np.zeros(w.shape[0])
    for o in range(w.shape[0]):
        out[o] = b[o] + sum(w[o, i] * x[i] for i in range(w.shape[1]))
    return out


# value iteration -------------------------------------------------------------

def value_iteration_loops(world: Gridworld, sweeps: int = 5000) -> Dict[Tuple[int, int], float]:
    """Gauss-free synchronous sweeps over a dict of cells; the goal is absorbing."""
    free = [(r, c) for r in range(world.height) for c in range(world.width)
            if (r, c) not in world.walls]
    traps = dict(world.traps)

    def reward(cell):
        if cell == world.goal:
            return world.goal_reward
        return traps.get(cell, world.step_reward)

    V = {cell: 0.0 for cell in free}
    for _ in range(sweeps):
        new = {}
        for cell in free:
            if cell == world.goal:
                new[cell] = world.goal_reward
                continue
            best = -np.inf
            for dr, dc in MOVES:
                nxt = (cell[0] + dr, cell[1] + dc)
                if nxt not in V:
                    nxt = cell
                best = max(best, reward(cell) + world.gamma * V[nxt])
            new[cell] = best
        delta = max(abs(new[c] - V[c]) for c in free)
        V = new
        if delta < 1e-13:
            break
    return V


# message passing --------------------------------------------------------------

def _paths_to_leaves(succ: Sequence[Sequence[int]], i: int) -> List[List[int]]:
    if not succ[i]:
        return [[i]]
    return [[i] + tail for j in succ[i] for tail in _paths_to_leaves(succ, j)]


def _paths_from_sources(pred: Sequence[Sequence[int]], entry: Sequence[bool],
                        i: int) -> List[List[int]]:
    """Every backward path that ends at i and starts at a node with an entry term."""
    out = [[i]] if entry[i] else []
    for j in pred[i]:
        out.extend(path + [i] for path in _paths_from_sources(pred, entry, j))
    return out


def beta_enumerated(g: ExperienceGraph, probs: np.ndarray) -> np.ndarray:
    """Sum over root-to-leaf suffixes of the probability product, with 1/outdegree branching."""
    n = g.n_nodes
    beta = np.zeros(n)
    for i in range(n):
        for path in _paths_to_leaves(g.successors, i):
            w = 1.0
            for m, node in enumerate(path):
                w *= probs[node]
                if m + 1 < len(path):
                    w /= len(g.successors[node])
            beta[i] += w
    return beta


def alpha_enumerated(g: ExperienceGraph, probs: np.ndarray) -> np.ndarray:
    """Sum over entry-to-node prefixes; each arrival divides by the incoming count.

    A node's incoming count is its predecessor count plus one if it is an
    episode start or has no predecessors (that extra slot is the entry).
    """
    n = g.n_nodes
    starts = g.episode_starts()
    entry = [(i in starts) or not g.predecessors[i] for i in range(n)]
    incoming = [len(g.predecessors[i]) + int(entry[i]) for i in range(n)]
    alpha = np.zeros(n)
    for i in range(n):
        for path in _paths_from_sources(g.predecessors, entry, i):
            w = 1.0 / incoming[path[0]]
            for a, b in zip(path, path[1:]):
                w *= probs[a] / incoming[b]
            alpha[i] += w
    return alpha / n


def labels_enumerated(alpha: np.ndarray, beta: np.ndarray, floor: float = 1e-3,
                      flat_rtol: float = 1e-9) -> np.ndarray:
    x = [a * b for a, b in zip(alpha, beta)]
    lo, hi = min(x), max(x)
    if hi - lo <= flat_rtol * max(abs(hi), abs(lo)):
        return np.ones(len(x))
    return np.array([floor + (1 - floor) * (v - lo) / (hi - lo) for v in x])


def random_dag_graph(rng: np.random.Generator, n_nodes: int, step_reward: float = -0.01,
                     edge_prob: float = 0.35) -> ExperienceGraph:
    """Random DAG experience graph (edges only go from lower to higher ids)."""
    lines = []
    for i in range(n_nodes):
        r = rng.choice([step_reward, step_reward, step_reward, 1.0, -1.0])
        lines.append(f"node {i} s={i} a={int(rng.integers(4))} r={float(r)!r}")
    for i, j in itertools.combinations(range(n_nodes), 2):
        if rng.random() < edge_prob:
            lines.append(f"edge {i} {j}")
    return ExperienceGraph.loads("\n".join(lines), step_reward)


# losses ---------------------------------------------------------------------

def bce_loop(labels, phi, rewarding) -> float:
    if not rewarding:
        return 0.0
    total = 0.0
    for i in rewarding:
        total -= labels[i] * np.log(phi[i]) + (1 - labels[i]) * np.log(1 - phi[i])
    return total / len(rewarding)


def recursive_loop(phi, A) -> float:
    total = 0.0
    for i in range(len(phi)):
        for j in range(len(phi)):
            total += A[i][j] * (phi[i] - phi[j]) ** 2
    return total


# returns --------------------------------------------------------------------

def lambda_returns_loops(rewards, next_values, gamma, lam, terminal) -> List[float]:
    """Forward-view lambda-return as the explicit weighted mix of n-step returns."""
    T = len(rewards)
    out = []
    for t in range(T):
        horizon = T - t
        nstep = []
        for k in range(1, horizon + 1):
            g = sum(gamma ** m * rewards[t + m] for m in range(k))
            last = t + k - 1
            if not (k == horizon and terminal):
                g += gamma ** k * next_values[last]
            nstep.append(g)
        total = sum((1 - lam) * lam ** (k - 1) * nstep[k - 1] for k in range(1, horizon))
        total += lam ** (horizon - 1) * nstep[horizon - 1]
        out.append(total)
    return out
