"""Reward shaping for tabular actor-critic with a value-iteration network potential."""

from . import env, graph, messages, network, numcore, rl
from .env import Gridworld, four_rooms, four_rooms_traps
from .network import VinConfig, VinNetwork
from .rl import TrainConfig, train

__all__ = ["env", "graph", "messages", "network", "numcore", "rl", "Gridworld", "four_rooms",
           "four_rooms_traps", "VinConfig", "VinNetwork", "TrainConfig", "train"]
