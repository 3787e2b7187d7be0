"""Forward/backward message labels on a graph of noisy optimal episodes.

Builds an experience graph from five epsilon-greedy runs of the optimal
Four Rooms policy and prints, per cell, the best label over actions.
Labels are high near the goal (backward messages) and near the start
(forward messages) and fall to the floor in between.

    python3 demos/message_labels.py [--seed 0]
"""

import argparse

import numpy as np

from vinrs.env import exact_value_iteration, four_rooms, step
from vinrs.graph import ExperienceGraph
from vinrs.messages import OptimalityModel, message_labels


def noisy_episodes(world, policy, rng, episodes=5, eps=0.1):
    g, model = ExperienceGraph(world.step_reward), OptimalityModel()

    def act(s):
        return int(policy[s]) if rng.random() > eps else int(rng.integers(4))

    for _ in range(episodes):
        s, t = world.start_state, 0
        a = act(s)
        while True:
            s2, r, done = step(world, s, a, t)
            t += 1
            model.observe(r)
            if done:
                g.add_transition(s, a, r)
                g.end_episode()
                break
            a2 = act(s2)
            g.add_transition(s, a, r, s2, a2)
            s, a = s2, a2
    return g, model


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    world = four_rooms()
    policy = exact_value_iteration(world).greedy
    g, model = noisy_episodes(world, policy, np.random.default_rng(args.seed))
    table = message_labels(g, model)
    best = {}
    for i, (s, _) in enumerate(g.keys):
        best[s] = max(best.get(s, 0.0), table.label[i])
    print(f"{g.n_nodes} nodes, {len(g.edges)} edges, rewarding nodes {g.rewarding_nodes()}")
    for r in range(world.height):
        row = []
        for c in range(world.width):
            cell = (r, c)
            if cell in world.walls:
                row.append("  ##")
            elif world.state_of(cell) in best:
                row.append(f"{best[world.state_of(cell)]:4.2f}")
            else:
                row.append("   .")
        print(" ".join(row))


if __name__ == "__main__":
    main()
