"""Small hand-built worlds and graphs shared by the self-check and the tests."""

import numpy as np

from .env import Gridworld, loads_map, render
from .graph import ExperienceGraph
from .messages import OptimalityModel, message_labels
from .network import NodeBatch, VinConfig, VinNetwork, node_batch

CORRIDOR_MAP = """gamma=0.9 step_reward=0.0 goal_reward=1.0
S...G
"""

FRAMED_CORRIDOR_MAP = """gamma=0.99 step_reward=-0.01 goal_reward=1.0
#######
#S...G#
#######
"""

TWO_ROOM_MAP = """gamma=0.99 step_reward=-0.01 goal_reward=1.0
#########
#S..#...#
#...#...#
#.......#
#...#..G#
#########
"""


def corridor_world() -> Gridworld:
    """Bare 1 x 5 corridor, goal at the right end."""
    return loads_map(CORRIDOR_MAP)


def framed_corridor_world() -> Gridworld:
    return loads_map(FRAMED_CORRIDOR_MAP)


def two_room_world() -> Gridworld:
    return loads_map(TWO_ROOM_MAP)


def five_node_graph(world: Gridworld) -> ExperienceGraph:
    """Two short episodes in the framed corridor, five distinct (state, action) pairs."""
    g = ExperienceGraph(world.step_reward)
    s = [world.state_of((1, c)) for c in range(1, 6)]
    right, down = 3, 1
    g.add_transition(s[0], right, world.step_reward, s[1], right)
    g.add_transition(s[1], right, world.step_reward, s[2], down)
    g.add_transition(s[2], down, world.step_reward, s[2], right)
    g.add_transition(s[2], right, world.step_reward, s[3], right)
    g.add_transition(s[3], right, world.goal_reward)
    return g


def five_node_fixture(seed: int = 0):
    """Network plus loss batch for gradient checks; weights are spread wide
    enough that every layer carries a non-trivial gradient."""
    world = framed_corridor_world()
    g = five_node_graph(world)
    model = OptimalityModel()
    for r in g.reward_array():
        model.observe(r)
    table = message_labels(g, model)
    images = {s: render(world, s) for s in g.states()}
    cfg = VinConfig(k_iterations=3, h_channels=4, fn_units=6)
    net = VinNetwork(cfg, world.height, world.width, seed=seed)
    rng = np.random.default_rng(seed + 1)
    for p in net.parameters():
        p.data[...] = rng.uniform(-0.6, 0.6, size=p.shape)
    return net, node_batch(g, images, table)
