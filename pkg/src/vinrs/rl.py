"""Tabular actor-critic with a lambda-return critic, shaped value mixing,
and the outer loop that periodically fits the potential network.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, NamedTuple, Optional, Sequence, Union

import numpy as np

from . import numcore as nc
from .env import N_ACTIONS, Gridworld, render, step
from .graph import ExperienceGraph
from .messages import OptimalityModel, message_labels
from .network import VinConfig, VinNetwork, node_batch, train_on_batch

SHAPING_MODES = ("none", "exact_messages", "cnn")

Potential = Union[np.ndarray, Callable[[int, int], float], None]


def softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - np.max(x))
    return z / z.sum()


class PolicyTable:
    """Softmax preferences per state, mixed with an epsilon-uniform floor."""

    def __init__(self, n_states: int, n_actions: int = N_ACTIONS, epsilon: float = 0.1):
        if not 0.0 <= epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        self.theta = np.zeros((n_states, n_actions))
        self.epsilon = float(epsilon)

    @property
    def n_actions(self) -> int:
        return self.theta.shape[1]

    def softmax(self, s: int) -> np.ndarray:
        return softmax(self.theta[s])

    def probs(self, s: int) -> np.ndarray:
        return (1.0 - self.epsilon) * self.softmax(s) + self.epsilon / self.n_actions


class CriticTable:
    def __init__(self, n_states: int, lam: float = 0.95):
        if not 0.0 <= lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        self.v = np.zeros(n_states)
        self.lam = float(lam)


def select_action(policy: PolicyTable, s: int, rng: np.random.Generator) -> int:
    # both draws happen every call so the stream length does not depend on theta
    explore = rng.random() < policy.epsilon
    u = rng.random()
    if explore:
        return int(min(u * policy.n_actions, policy.n_actions - 1))
    cdf = np.cumsum(policy.softmax(s))
    return int(min(np.searchsorted(cdf, u * cdf[-1], side="right"), policy.n_actions - 1))


def _phi(potential: Potential, s: int, a: int) -> float:
    if potential is None:
        return 0.0
    if callable(potential):
        return float(potential(s, a))
    return float(potential[s, a])


def shaped_reward(r: float, s: int, a: int, s_next: Optional[int], a_next: Optional[int],
                  potential: Potential, gamma: float, terminal: bool = False) -> float:
    """r + gamma * phi(s', a') - phi(s, a); phi(s', a') is 0 after a terminal step."""
    if potential is None:
        return r
    nxt = 0.0 if terminal else _phi(potential, s_next, a_next)
    # grouped so a constant potential with gamma = 1 returns r exactly
    return r + (gamma * nxt - _phi(potential, s, a))


@dataclass
class Trajectory:
    """states has one more entry than actions/rewards; ``terminal`` marks goal arrival."""
    states: List[int] = field(default_factory=list)
    actions: List[int] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    terminal: bool = False

    def __len__(self):
        return len(self.actions)


def lambda_returns(rewards: Sequence[float], next_values: Sequence[float], gamma: float,
                   lam: float, terminal: bool) -> np.ndarray:
    """G_t = r_t + gamma * ((1 - lam) * V(s_{t+1}) + lam * G_{t+1}).

    The last step bootstraps on V(s_T) unless the episode ended at the goal.
    """
    T = len(rewards)
    G = np.empty(T)
    nv = np.asarray(next_values, dtype=np.float64)
    tail = 0.0 if terminal else nv[T - 1]
    for t in range(T - 1, -1, -1):
        if t == T - 1:
            G[t] = rewards[t] + gamma * tail
        else:
            G[t] = rewards[t] + gamma * ((1.0 - lam) * nv[t] + lam * G[t + 1])
        if not math.isfinite(G[t]):
            raise FloatingPointError(f"non-finite return at step {t}")
    return G


def shaped_rewards(traj: Trajectory, potential: Potential, gamma: float,
                   policy: Optional[PolicyTable] = None) -> np.ndarray:
    """Per-step look-ahead shaped rewards for a finished trajectory.

    A step-capped episode has no next action, so its last step uses the
    policy's expected potential at the final state.
    """
    T = len(traj)
    out = np.empty(T)
    for t in range(T):
        s, a, r = traj.states[t], traj.actions[t], traj.rewards[t]
        if t + 1 < T:
            out[t] = shaped_reward(r, s, a, traj.states[t + 1], traj.actions[t + 1],
                                   potential, gamma)
        elif traj.terminal or potential is None:
            out[t] = shaped_reward(r, s, a, None, None, potential, gamma, terminal=True)
        else:
            sT = traj.states[T]
            pi = policy.probs(sT) if policy is not None else np.full(N_ACTIONS, 1 / N_ACTIONS)
            expected = sum(pi[b] * _phi(potential, sT, b) for b in range(len(pi)))
            out[t] = r + (gamma * expected - _phi(potential, s, a))
    return out


@dataclass
class TrainConfig:
    episodes: int = 500
    alpha_mix: float = 0.9
    gamma: float = 0.99
    lam: float = 0.95
    epsilon: float = 0.1
    actor_lr: float = 0.1
    critic_lr: float = 0.1
    temperature: float = 1.0
    shaping_mode: str = "none"
    reset_graph: bool = True
    advice_correction: bool = True
    vin: VinConfig = field(default_factory=VinConfig)

    def __post_init__(self):
        if not 0.0 <= self.alpha_mix <= 1.0:
            raise ValueError("alpha_mix must lie in [0, 1]")
        if self.shaping_mode not in SHAPING_MODES:
            raise ValueError(f"shaping_mode must be one of {SHAPING_MODES}")
        if self.episodes < 1:
            raise ValueError("episodes must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")

    @property
    def N(self) -> int:
        return self.vin.train_period

    @property
    def k_train(self) -> int:
        return self.vin.train_iters


class UpdateStats(NamedTuple):
    actor_grad_norm: float
    critic_loss: float


def combined_returns(policy: PolicyTable, critic: CriticTable, traj: Trajectory,
                     config: TrainConfig, potential: Potential = None):
    """(original lambda-returns, shaped lambda-returns, mixed returns, shaped rewards).

    Both lambda-returns bootstrap on the same critic, which estimates the
    unshaped value.
    """
    gamma, lam = config.gamma, critic.lam
    next_v = critic.v[np.asarray(traj.states[1:], dtype=np.int64)]
    g_orig = lambda_returns(traj.rewards, next_v, gamma, lam, traj.terminal)
    if potential is None:
        return g_orig, g_orig, g_orig, np.asarray(traj.rewards, dtype=np.float64)
    r_shaped = shaped_rewards(traj, potential, gamma, policy)
    g_shaped = lambda_returns(r_shaped, next_v, gamma, lam, traj.terminal)
    if config.advice_correction:
        # look-ahead shaping lowers Q(s, a) by phi(s, a); add it back so the
        # shaped estimate ranks actions the way the unshaped one does
        g_shaped = g_shaped + np.array([_phi(potential, s, a)
                                        for s, a in zip(traj.states, traj.actions)])
    mix = config.alpha_mix
    return g_orig, g_shaped, mix * g_orig + (1.0 - mix) * g_shaped, r_shaped


def episode_update(policy: PolicyTable, critic: CriticTable, traj: Trajectory,
                   config: TrainConfig, potential: Potential = None) -> UpdateStats:
    """Policy-gradient step on the mixed return, then move V toward the original return.

    Steps are applied in time order; each uses the softmax of the current
    preferences for its score function.
    """
    if len(traj) == 0:
        return UpdateStats(0.0, 0.0)
    g_orig, _, q_comb, _ = combined_returns(policy, critic, traj, config, potential)
    grad = np.zeros_like(policy.theta)
    sq_err = 0.0
    for t in range(len(traj)):
        s, a = traj.states[t], traj.actions[t]
        adv = q_comb[t] - critic.v[s]
        score = -policy.softmax(s)
        score[a] += 1.0
        policy.theta[s] += config.actor_lr * adv * score
        grad[s] += adv * score
        err = g_orig[t] - critic.v[s]
        sq_err += err * err
        critic.v[s] += config.critic_lr * err
    return UpdateStats(float(np.linalg.norm(grad)), 0.5 * sq_err / len(traj))


class EpisodeMetrics(NamedTuple):
    episode: int
    steps: int
    cumulative_steps: int
    ret: float
    shaped_return: float
    cnn_loss: float


def rollout(world: Gridworld, policy: PolicyTable, rng: np.random.Generator,
            graph: Optional[ExperienceGraph] = None,
            model: Optional[OptimalityModel] = None) -> Trajectory:
    """One episode from the start cell; optionally records every step in ``graph``."""
    traj = Trajectory(states=[world.start_state])
    s = world.start_state
    a = select_action(policy, s, rng)
    t = 0
    while True:
        s2, r, done = step(world, s, a, t)
        t += 1
        traj.actions.append(a)
        traj.rewards.append(r)
        traj.states.append(s2)
        if model is not None:
            model.observe(r)
        if done:
            traj.terminal = world.is_terminal(s2)
            if graph is not None:
                graph.add_transition(s, a, r)
                graph.end_episode()
            return traj
        a2 = select_action(policy, s2, rng)
        if graph is not None:
            graph.add_transition(s, a, r, s2, a2)
        s, a = s2, a2


def _streams(seed: int):
    rl_seq, cnn_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(rl_seq), int(cnn_seq.generate_state(1)[0])


def train(world: Gridworld, config: TrainConfig, seed: int = 0) -> Iterator[EpisodeMetrics]:
    """Run the full loop and yield one metrics record per episode.

    Every N episodes the potential is refit from the experience graph:
    ``exact_messages`` uses the normalised message labels directly (unseen
    pairs get 0) while ``cnn`` trains the network on them and evaluates it
    on every state. The RL and network random streams are independent, so
    the action sequence never depends on network training.
    """
    rng, cnn_seed = _streams(seed)
    n = world.n_states
    policy = PolicyTable(n, epsilon=config.epsilon)
    critic = CriticTable(n, lam=config.lam)
    mode = config.shaping_mode
    shaping = mode != "none"
    graph = ExperienceGraph(world.step_reward) if shaping else None
    model = OptimalityModel(config.temperature) if shaping else None
    images = {}
    net = optimizer = None
    phi: Potential = None
    if mode == "exact_messages":
        phi = np.zeros((n, N_ACTIONS))
    elif mode == "cnn":
        net = VinNetwork(config.vin, world.height, world.width, seed=cnn_seed)
        optimizer = nc.Adam(net.parameters(), learning_rate=config.vin.learning_rate)
        phi = net.potential_table(world)

    cumulative = 0
    for ep in range(1, config.episodes + 1):
        traj = rollout(world, policy, rng, graph, model)
        cnn_loss = math.nan
        if shaping:
            if mode == "cnn":
                for s in traj.states[:-1]:
                    if s not in images:
                        images[s] = render(world, s)
            if ep % config.N == 0 and graph.n_nodes > 0:
                table = message_labels(graph, model)
                if mode == "exact_messages":
                    phi = np.zeros((n, N_ACTIONS))
                    for i, (s, a) in enumerate(graph.keys):
                        phi[s, a] = table.label[i]
                else:
                    batch = node_batch(graph, images, table)
                    losses = [train_on_batch(net, batch, optimizer)
                              for _ in range(config.k_train)]
                    cnn_loss = losses[-1]
                    phi = net.potential_table(world)
                if config.reset_graph:
                    graph.reset()
        _, _, _, r_shaped = combined_returns(policy, critic, traj, config, phi)
        episode_update(policy, critic, traj, config, phi)
        cumulative += len(traj)
        yield EpisodeMetrics(ep, len(traj), cumulative, float(np.sum(traj.rewards)),
                             float(np.sum(r_shaped)), cnn_loss)
