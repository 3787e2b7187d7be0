"""Hand-wire the value-iteration network and compare it with exact value iteration.

The wired network turns the observation into a reward map and uses shift
kernels for the four moves, so after enough rounds its value map is the
optimal value function. With too few rounds the values are still wrong.

    python3 demos/planning_oracle.py
"""

import numpy as np

from vinrs.env import exact_value_iteration, four_rooms
from vinrs.fixtures import corridor_world, two_room_world
from vinrs.network import planned_values, planning_iterations


def show_grid(world, values):
    for r in range(world.height):
        row = []
        for c in range(world.width):
            row.append("   ##" if (r, c) in world.walls else f"{values[world.state_of((r, c))]:5.2f}")
        print(" ".join(row))


def main():
    for name, world in (("corridor", corridor_world()), ("two rooms", two_room_world()),
                        ("four rooms", four_rooms())):
        exact = exact_value_iteration(world, tol=1e-12).values
        K = planning_iterations(world)
        for k in (1, K // 10, K):
            err = np.abs(planned_values(world, k) - exact).max()
            print(f"{name:10s} rounds={k:5d}  max |V_net - V_exact| = {err:.2e}")
    world = two_room_world()
    print("\nwired network values, two rooms:")
    show_grid(world, planned_values(world))


if __name__ == "__main__":
    main()
