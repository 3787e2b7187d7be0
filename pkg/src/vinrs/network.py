"""Value-iteration convolutional network producing per-action potentials."""

import math
from dataclasses import dataclass, fields
from typing import Dict, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from . import numcore as nc
from .env import MOVES, N_ACTIONS, Gridworld, render, render_all
from .graph import ExperienceGraph
from .messages import (MessageTable, OptimalityModel, base_loss_from_logits, message_labels,
                       recursive_loss)

OBS_CHANNELS = 3


@dataclass
class VinConfig:
    k_iterations: int = 26
    h_channels: int = 8
    q_channels: int = N_ACTIONS
    kernel_size: int = 3
    fn_units: int = 32
    eta: float = 10.0
    train_period: int = 10
    train_iters: int = 20
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.k_iterations < 1:
            raise ValueError("k_iterations must be >= 1")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ValueError("kernel_size must be a positive odd integer")
        if self.q_channels != N_ACTIONS:
            raise ValueError(f"q_channels must equal the action count ({N_ACTIONS})")
        for name in ("h_channels", "fn_units", "train_period", "train_iters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


class ForwardResult(NamedTuple):
    phi: nc.Tensor
    qmap: nc.Tensor
    vmap: nc.Tensor


class VinNetwork:
    """cnnH -> cnnR -> K rounds of (wQ * r + wV * v, channel max) -> Fn -> Opt -> sigmoid."""

    def __init__(self, config: VinConfig, height: int, width: int, seed: int = 0):
        self.config = config
        self.height, self.width = int(height), int(width)
        c, k, x = config.h_channels, config.kernel_size, config.q_channels
        flat = x * self.height * self.width
        shapes = {
            "cnnH_w": (c, OBS_CHANNELS, k, k), "cnnH_b": (c,),
            "cnnR_w": (1, c, 1, 1), "cnnR_b": (1,),
            "wQ": (x, 1, k, k), "wV": (x, 1, k, k),
            "fn_w": (config.fn_units, flat), "fn_b": (config.fn_units,),
            "opt_w": (x, config.fn_units), "opt_b": (x,),
        }
        rng = np.random.default_rng(seed)
        self.params: Dict[str, nc.Parameter] = {}
        for name, shape in shapes.items():
            if len(shape) == 1:
                value = np.zeros(shape)
            else:
                fan_in = int(np.prod(shape[1:]))
                bound = 0.5 / math.sqrt(fan_in)
                value = rng.uniform(-bound, bound, size=shape)
            self.params[name] = nc.Parameter(value, name)

    def __getitem__(self, name: str) -> nc.Parameter:
        return self.params[name]

    def parameters(self):
        return list(self.params.values())

    def set_weights(self, **values):
        for name, v in values.items():
            p = self.params[name]
            v = np.asarray(v, dtype=np.float64)
            if v.shape != p.shape:
                raise ValueError(f"{name}: expected shape {p.shape}, got {v.shape}")
            p.data[...] = v

    def copy(self) -> "VinNetwork":
        other = VinNetwork(self.config, self.height, self.width)
        other.set_weights(**{k: p.data for k, p in self.params.items()})
        return other

    def forward(self, obs, k_iterations: Optional[int] = None, fused: bool = True) -> ForwardResult:
        return forward(self, obs, k_iterations, fused)

    def potential_table(self, world: Gridworld) -> np.ndarray:
        """phi(s, a) for every state, as an n_states x 4 array."""
        with nc.no_grad():
            out = forward(self, render_all(world)).phi.data
        return out.copy()

    def potential(self, world: Gridworld, s: int, a: int) -> float:
        with nc.no_grad():
            return float(forward(self, render(world, s)).phi.data[a])


def _batched(t: nc.Tensor):
    """Add a batch axis so every layer sees N x C x H x W."""
    if t.data.ndim == 3:
        return nc.reshape(t, (1,) + t.shape), True
    return t, False


def evaluate_q(net: VinNetwork, rmap, vmap) -> nc.Tensor:
    """Convolve concat(r, v) with concat(wQ, wV) along the input-channel axis."""
    r, squeeze = _batched(nc.as_tensor(rmap))
    v, _ = _batched(nc.as_tensor(vmap))
    if r.shape[0] != v.shape[0] or r.shape[2:] != v.shape[2:]:
        raise ValueError(f"rmap {r.shape} and vmap {v.shape} do not align")
    rv = nc.concat([r, v], axis=1)
    w = nc.concat([net["wQ"], net["wV"]], axis=1)
    q = nc.conv2d(rv, w)
    return nc.reshape(q, q.shape[1:]) if squeeze else q


def forward(net: VinNetwork, obs, k_iterations: Optional[int] = None,
            fused: bool = True) -> ForwardResult:
    """Run the network on one observation (3 x H x W) or a batch (B x 3 x H x W)."""
    logits, q, v = forward_logits(net, obs, k_iterations, fused)
    return ForwardResult(nc.sigmoid(logits), q, v)


def forward_logits(net: VinNetwork, obs, k_iterations: Optional[int] = None,
                   fused: bool = True):
    """Pre-sigmoid outputs, Q map and V map for one observation or a batch.

    The reward channel's contribution wQ * r is the same in every round, so it
    is computed once; the sum equals evaluate_q's concatenated convolution.
    ``fused=False`` builds the loop from separate conv/max nodes (slow, kept
    as a cross-check of the fused recurrence).
    """
    K = net.config.k_iterations if k_iterations is None else int(k_iterations)
    if K < 1:
        raise ValueError("k_iterations must be >= 1")
    x, squeeze = _batched(nc.as_tensor(obs))
    if x.shape[1:] != (OBS_CHANNELS, net.height, net.width):
        raise ValueError(f"observation shape {x.shape[1:]} does not match network "
                         f"input {(OBS_CHANNELS, net.height, net.width)}")
    B, H, W = x.shape[0], net.height, net.width
    h = nc.relu(nc.conv2d(x, net["cnnH_w"], net["cnnH_b"]))
    r = nc.conv2d(h, net["cnnR_w"], net["cnnR_b"])
    q_r = nc.conv2d(r, net["wQ"])
    if fused:
        q = nc.conv_max_recurrence(q_r, net["wV"], K + 1)
    else:
        q = q_r
        v, _ = nc.channel_max(q)
        for _ in range(K + 1):
            q = q_r + nc.conv2d(nc.reshape(v, (B, 1, H, W)), net["wV"])
            v, _ = nc.channel_max(q)
    v, _ = nc.channel_max(q)
    flat = nc.reshape(q, (B, -1))
    fn = nc.relu(nc.dense(flat, net["fn_w"], net["fn_b"]))
    logits = nc.dense(fn, net["opt_w"], net["opt_b"])
    if squeeze:
        return (nc.reshape(logits, logits.shape[1:]), nc.reshape(q, q.shape[1:]),
                nc.reshape(v, v.shape[1:]))
    return logits, q, v


# training ---------------------------------------------------------------------

class NodeBatch(NamedTuple):
    """Everything the potential loss needs, detached from the live graph."""
    obs: np.ndarray
    rows: np.ndarray
    actions: np.ndarray
    labels: np.ndarray
    rewarding: np.ndarray
    adjacency: np.ndarray


def node_batch(g: ExperienceGraph, images: Mapping[int, np.ndarray],
               table: MessageTable) -> NodeBatch:
    states = g.states()
    missing = [s for s in states if s not in images]
    if missing:
        raise ValueError(f"no image for graph states {missing[:5]}")
    row_of = {s: i for i, s in enumerate(states)}
    obs = np.stack([np.asarray(images[s], dtype=np.float64) for s in states])
    rows = np.array([row_of[s] for s, _ in g.keys], dtype=np.int64)
    actions = np.array([a for _, a in g.keys], dtype=np.int64)
    return NodeBatch(obs, rows, actions, np.asarray(table.label),
                     np.asarray(g.rewarding_nodes(), dtype=np.int64), g.adjacency())


def node_loss(net: VinNetwork, batch: NodeBatch, eta: Optional[float] = None,
              k_iterations: Optional[int] = None) -> nc.Tensor:
    """Cross-entropy at rewarding nodes plus eta times edge smoothness."""
    eta = net.config.eta if eta is None else eta
    logits = forward_logits(net, batch.obs, k_iterations)[0]
    x = logits.shape[1]
    node_logits = nc.take(nc.reshape(logits, (-1,)), batch.rows * x + batch.actions)
    base = base_loss_from_logits(batch.labels, node_logits, batch.rewarding)
    rec = recursive_loss(nc.sigmoid(node_logits), batch.adjacency)
    return base + eta * rec


def train_step(net: VinNetwork, images: Mapping[int, np.ndarray], g: ExperienceGraph,
               optimizer, model: Optional[OptimalityModel] = None,
               table: Optional[MessageTable] = None) -> float:
    """One optimiser step on the potential loss; returns the loss before the step."""
    if g.n_nodes == 0:
        raise ValueError("graph is empty")
    if table is None:
        table = message_labels(g, model or OptimalityModel())
    batch = node_batch(g, images, table)
    return train_on_batch(net, batch, optimizer)


def train_on_batch(net: VinNetwork, batch: NodeBatch, optimizer) -> float:
    loss = node_loss(net, batch)
    optimizer.zero_grad()
    nc.backward(loss)
    optimizer.step()
    return loss.item()


def lookahead_F(potential, s: int, a: int, s_next: int, a_next: int, gamma: float) -> float:
    """gamma * phi(s', a') - phi(s, a); ``potential`` is a table or a callable."""
    if callable(potential):
        return gamma * potential(s_next, a_next) - potential(s, a)
    phi = np.asarray(potential)
    return float(gamma * phi[s_next, a_next] - phi[s, a])


# hand-wired planner -------------------------------------------------------------

WALL_PENALTY = 1e3


def planning_iterations(world: Gridworld, tol: float = 1e-9) -> int:
    """Rounds needed for the wired network to settle within ``tol``.

    Every free cell settles after a number of rounds equal to its distance
    to the goal; the goal itself relaxes geometrically at rate gamma.
    """
    from .env import _bfs_distances
    diameter = max(_bfs_distances(world, world.goal).values())
    if world.gamma >= 1.0:
        return 2 * diameter + 2
    scale = WALL_PENALTY + abs(world.goal_reward) + 1.0
    return diameter + int(math.ceil(math.log(tol / scale) / math.log(world.gamma)))


def value_iteration_wiring(world: Gridworld, seed: int = 0) -> VinNetwork:
    """Network whose weights make its value map equal exact value iteration.

    cnnH/cnnR turn the observation into the per-cell reward map; walls get a
    large penalty. wQ copies that reward into every action channel and wV
    shifts gamma * V from the neighbour each action moves to. The goal is
    absorbing, which a shift-invariant convolution cannot express directly,
    so its reward is offset by the discounted value of its best neighbour.
    """
    cfg = VinConfig(k_iterations=1, h_channels=8, kernel_size=3)
    net = VinNetwork(cfg, world.height, world.width, seed)
    for p in net.parameters():
        p.data[...] = 0.0

    gam, Rs, Rg = world.gamma, world.step_reward, world.goal_reward
    trap_scale = max((abs(p) for _, p in world.traps), default=1.0)
    big = 1e9
    h_w = np.zeros((8, 3, 3, 3))
    h_b = np.zeros(8)
    h_w[0, 0, 1, 1] = 1.0            # wall indicator
    h_w[1, 1, 1, 1] = 1.0            # goal indicator
    h_w[2, 1, 1, 1] = -1.0           # trap magnitude
    h_w[3, 1, 1, 1] = -big           # trap indicator = relu(-big p) - relu(-big p - 1)
    h_w[4, 1, 1, 1] = -big
    h_b[4] = -1.0
    h_b[5] = 1.0                     # constant one

    best_nbr = -np.inf
    gr, gc = world.goal
    for dr, dc in MOVES:
        n = (gr + dr, gc + dc)
        if world._inside(n) and n not in world.walls:
            best_nbr = max(best_nbr, world.cell_reward[world.state_of(n)] + gam * Rg)
    goal_r = Rg - gam * best_nbr if np.isfinite(best_nbr) else Rg

    r_w = np.zeros((1, 8, 1, 1))
    r_w[0, 0] = -WALL_PENALTY - Rs
    r_w[0, 1] = goal_r - Rs
    r_w[0, 2] = -trap_scale
    r_w[0, 3] = -Rs
    r_w[0, 4] = Rs
    r_w[0, 5] = Rs

    wq = np.zeros((N_ACTIONS, 1, 3, 3))
    wv = np.zeros((N_ACTIONS, 1, 3, 3))
    for a, (dr, dc) in enumerate(MOVES):
        wq[a, 0, 1, 1] = 1.0
        wv[a, 0, 1 + dr, 1 + dc] = gam
    net.set_weights(cnnH_w=h_w, cnnH_b=h_b, cnnR_w=r_w, wQ=wq, wV=wv)
    return net


def planned_values(world: Gridworld, k_iterations: Optional[int] = None) -> np.ndarray:
    """Value map of the wired network at every free cell, in state order."""
    net = value_iteration_wiring(world)
    K = planning_iterations(world) if k_iterations is None else k_iterations
    with nc.no_grad():
        vmap = forward(net, render(world, world.start_state), K).vmap.data
    return np.array([vmap[c] for c in world.cells])


# checkpoints ------------------------------------------------------------------

def dumps_checkpoint(net: VinNetwork) -> str:
    cfg = " ".join(f"{f.name}={getattr(net.config, f.name)!r}" for f in fields(VinConfig))
    lines = ["vinrs-checkpoint 1", f"grid height={net.height} width={net.width}",
             f"config {cfg}"]
    for name, p in net.params.items():
        lines.append(f"param {name} {','.join(str(d) for d in p.shape)}")
        lines.append(" ".join(repr(float(v)) for v in p.data.reshape(-1)))
    return "\n".join(lines) + "\n"


def loads_checkpoint(text: str, config: Optional[VinConfig] = None) -> VinNetwork:
    lines = text.splitlines()
    if not lines or lines[0].strip() != "vinrs-checkpoint 1":
        raise ValueError("not a vinrs checkpoint")
    grid = dict(t.split("=") for t in lines[1].split()[1:])
    stored = {}
    for tok in lines[2].split()[1:]:
        k, v = tok.split("=", 1)
        stored[k] = v
    if config is None:
        kinds = {f.name: f.type for f in fields(VinConfig)}
        config = VinConfig(**{k: (float(v) if kinds[k] in (float, "float") else int(v))
                              for k, v in stored.items() if k in kinds})
    net = VinNetwork(config, int(grid["height"]), int(grid["width"]))
    seen = set()
    i = 3
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        head = lines[i].split()
        if head[0] != "param" or len(head) != 3:
            raise ValueError(f"bad checkpoint line {i + 1}")
        name = head[1]
        shape = tuple(int(d) for d in head[2].split(","))
        if name not in net.params:
            raise ValueError(f"unknown parameter {name!r}")
        if shape != net.params[name].shape:
            raise ValueError(f"{name}: checkpoint shape {shape} does not match "
                             f"config shape {net.params[name].shape}")
        values = np.array([float(v) for v in lines[i + 1].split()])
        net.set_weights(**{name: values.reshape(shape)})
        seen.add(name)
        i += 2
    if seen != set(net.params):
        raise ValueError(f"checkpoint lacks parameters {sorted(set(net.params) - seen)}")
    return net
