"""Experience graph over visited (state, action) pairs."""

from typing import Dict, List, Optional, Set, Tuple

import numpy as np

Key = Tuple[int, int]


class ExperienceGraph:
    """Directed graph of (state, action) nodes linked by consecutive steps.

    Each node keeps the last reward observed when its action was taken and
    how many times it was taken. ``trajectories`` holds the node sequence of
    every recorded episode; a call whose source is not the pending successor
    of the previous call starts a new trajectory.
    """

    def __init__(self, step_reward: float = -0.01):
        self.step_reward = float(step_reward)
        self.reset()

    def reset(self) -> None:
        self.keys: List[Key] = []
        self.index: Dict[Key, int] = {}
        self.rewards: List[Optional[float]] = []
        self.visits: List[int] = []
        self.edges: Set[Tuple[int, int]] = set()
        self.successors: List[List[int]] = []
        self.predecessors: List[List[int]] = []
        self.trajectories: List[List[int]] = []
        self._pending: Optional[int] = None

    def __len__(self):
        return len(self.keys)

    @property
    def n_nodes(self) -> int:
        return len(self.keys)

    def _upsert(self, key: Key) -> int:
        i = self.index.get(key)
        if i is None:
            i = len(self.keys)
            self.index[key] = i
            self.keys.append(key)
            self.rewards.append(None)
            self.visits.append(0)
            self.successors.append([])
            self.predecessors.append([])
        return i

    def add_transition(self, s: int, a: int, r: float, s_next: Optional[int] = None,
                       a_next: Optional[int] = None):
        """Record that (s, a) earned r and was followed by (s_next, a_next).

        Leave ``s_next``/``a_next`` as None for the last step of an episode.
        Returns the two node ids (the second is None for a final step).
        """
        i = self._upsert((int(s), int(a)))
        self.rewards[i] = float(r)
        self.visits[i] += 1
        if self._pending == i and self.trajectories:
            self.trajectories[-1].append(i)
        else:
            self.trajectories.append([i])

        if s_next is None:
            self._pending = None
            return i, None
        if a_next is None:
            raise ValueError("a_next is required when s_next is given")
        j = self._upsert((int(s_next), int(a_next)))
        if (i, j) not in self.edges:
            self.edges.add((i, j))
            self.successors[i].append(j)
            self.predecessors[j].append(i)
        self._pending = j
        return i, j

    def end_episode(self) -> None:
        """Close the current trajectory (for episodes cut by the step cap)."""
        if self._pending is not None:
            self.trajectories[-1].append(self._pending)
        self._pending = None

    def reward_array(self) -> np.ndarray:
        # a node seen only as a successor has no reward yet; treat it as a plain step
        return np.array([self.step_reward if r is None else r for r in self.rewards])

    def adjacency(self) -> np.ndarray:
        n = self.n_nodes
        A = np.zeros((n, n))
        for i, j in self.edges:
            A[i, j] = 1.0
        return A

    def edge_arrays(self):
        """Sources and targets of all edges, sorted for reproducibility."""
        if not self.edges:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        e = np.array(sorted(self.edges), dtype=np.int64)
        return e[:, 0], e[:, 1]

    def rewarding_nodes(self) -> List[int]:
        """Nodes whose reward differs from the plain step reward (goal and trap hits)."""
        return [i for i, r in enumerate(self.rewards)
                if r is not None and r != self.step_reward]

    def episode_starts(self) -> Set[int]:
        return {traj[0] for traj in self.trajectories if traj}

    def states(self) -> List[int]:
        """Distinct states appearing in the graph, in first-seen order."""
        seen, out = set(), []
        for s, _ in self.keys:
            if s not in seen:
                seen.add(s)
                out.append(s)
        return out

    # text format ---------------------------------------------------------------

    def dumps(self) -> str:
        lines = []
        for i, (s, a) in enumerate(self.keys):
            r = self.step_reward if self.rewards[i] is None else self.rewards[i]
            lines.append(f"node {i} s={s} a={a} r={r!r}")
        for i, j in sorted(self.edges):
            lines.append(f"edge {i} {j}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, step_reward: float = -0.01) -> "ExperienceGraph":
        g = cls(step_reward)
        edges = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "node":
                idx = int(parts[1])
                kv = dict(p.split("=", 1) for p in parts[2:])
                if idx != g.n_nodes:
                    raise ValueError(f"node indices must be consecutive, got {idx}")
                i = g._upsert((int(kv["s"]), int(kv["a"])))
                if i != idx:
                    raise ValueError(f"duplicate node key at index {idx}")
                g.rewards[i] = float(kv["r"])
            elif parts[0] == "edge":
                edges.append((int(parts[1]), int(parts[2])))
            else:
                raise ValueError(f"unknown record {parts[0]!r}")
        for i, j in edges:
            if not (0 <= i < g.n_nodes and 0 <= j < g.n_nodes):
                raise ValueError(f"edge {i}->{j} references a missing node")
            if (i, j) not in g.edges:
                g.edges.add((i, j))
                g.successors[i].append(j)
                g.predecessors[j].append(i)
        return g
