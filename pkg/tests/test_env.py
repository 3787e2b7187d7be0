import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vinrs.env import (MOVES, DOWN, RIGHT, Gridworld, doorways, dumps_map, exact_value_iteration,
                       four_rooms, four_rooms_traps, greedy_rollout, greedy_tie_sets, loads_map,
                       render, render_all, shaped_value_iteration, shortest_path_length, step)
from vinrs.oracles import value_iteration_loops


def test_four_rooms_layout():
    w = four_rooms()
    assert (w.height, w.width) == (13, 13)
    assert w.n_states == 104
    assert len(doorways(w)) == 4


def test_zero_traps_is_plain_four_rooms():
    assert four_rooms_traps(0, -1.0, seed=123) == four_rooms()


def test_traps_deterministic_per_seed():
    a, b = four_rooms_traps(8, -1.0, seed=7), four_rooms_traps(8, -1.0, seed=7)
    assert a.traps == b.traps and len(a.traps) == 8
    assert four_rooms_traps(8, -1.0, seed=8).traps != a.traps


def test_trap_cells_avoid_doorways_start_and_goal():
    w = four_rooms_traps(8, -1.0, seed=7)
    cells = {c for c, _ in w.traps}
    assert not cells & (set(doorways(w)) | {w.start, w.goal})


def test_invalid_worlds_rejected():
    with pytest.raises(ValueError):
        Gridworld(3, 3, frozenset({(1, 1)}), goal=(1, 1), start=(0, 0))
    with pytest.raises(ValueError):
        Gridworld(3, 3, frozenset(), goal=(2, 2), start=(0, 0), gamma=1.5)
    with pytest.raises(ValueError):
        four_rooms_traps(8, penalty=1.0)


def test_wall_bump_stays_put():
    w = four_rooms()
    s = w.start_state  # (1, 1): wall above
    s2, r, done = step(w, s, 0)
    assert s2 == s and r == w.step_reward and not done


def test_step_into_goal():
    w = four_rooms()
    s = w.state_of((11, 10))
    s2, r, done = step(w, s, RIGHT)
    assert s2 == w.goal_state and r == w.goal_reward and done


def test_step_cap_ends_episode():
    w = four_rooms(max_episode_steps=3)
    _, _, done = step(w, w.start_state, DOWN, t=2)
    assert done


def test_transition_table_matches_enumeration():
    w = four_rooms_traps(8, -1.0, seed=3)
    free = {(r, c) for r in range(w.height) for c in range(w.width)} - set(w.walls)
    for s, (r, c) in enumerate(w.cells):
        for a, (dr, dc) in enumerate(MOVES):
            dest = (r + dr, c + dc)
            expect = dest if dest in free else (r, c)
            s2, reward, _ = step(w, s, a)
            assert w.cell_of(s2) == expect
            assert reward == w.cell_reward[w.state_of(expect)]


def test_render_start_and_planes():
    w = four_rooms()
    img = render(w, w.start_state)
    assert img.shape == (3, 13, 13)
    assert img[2].sum() == 1.0 and img[2][w.start] == 1.0
    walls = np.zeros((13, 13))
    for c in w.walls:
        walls[c] = 1.0
    np.testing.assert_array_equal(img[0], walls)


def test_renders_differ_only_in_agent_plane():
    w = four_rooms_traps(8, -1.0, seed=7)
    a, b = render(w, 0), render(w, 50)
    np.testing.assert_array_equal(a[:2], b[:2])
    assert not np.array_equal(a[2], b[2])


def test_trap_plane_count():
    img = render(four_rooms_traps(8, -1.0, seed=7), 0)
    assert np.count_nonzero(img[1]) == 9


def test_render_all_matches_render():
    w = four_rooms_traps(4, -1.0, seed=1)
    batch = render_all(w)
    for s in (0, 17, w.n_states - 1):
        np.testing.assert_array_equal(batch[s], render(w, s))


@settings(max_examples=50, deadline=None)
@given(s=st.integers(0, 103), a=st.integers(0, 3))
def test_render_after_step_tracks_next_state(s, a):
    w = four_rooms()
    s2, _, _ = step(w, s, a)
    img = render(w, s2)
    assert img[2][w.cell_of(s2)] == 1.0 and img[2].sum() == 1.0


# value iteration -----------------------------------------------------------------

def test_single_free_cell_is_goal():
    w = Gridworld(1, 1, frozenset(), goal=(0, 0), start=(0, 0), gamma=0.9, goal_reward=2.0)
    res = exact_value_iteration(w)
    # the second sweep only confirms the first one changed nothing
    assert res.values.tolist() == [2.0] and res.sweeps == 2


def test_three_cell_corridor_values():
    w = loads_map("gamma=0.9 step_reward=0.0 goal_reward=1.0\nS.G\n")
    v = exact_value_iteration(w).values
    np.testing.assert_allclose(v, [0.81, 0.9, 1.0], atol=1e-12)


def test_greedy_rollout_is_shortest_path():
    w = four_rooms()
    res = exact_value_iteration(w)
    path = greedy_rollout(w, res.greedy)
    assert path[-1] == w.goal_state
    assert len(path) - 1 == shortest_path_length(w) == 20


def test_value_iteration_matches_loop_oracle():
    w = four_rooms_traps(8, -1.0, seed=2)
    v = exact_value_iteration(w, tol=1e-13).values
    ref = value_iteration_loops(w)
    assert max(abs(v[w.state_of(c)] - ref[c]) for c in w.cells) < 1e-9


def test_bellman_consistency_and_all_states_reach_goal():
    w = four_rooms_traps(8, -1.0, seed=5)
    res = exact_value_iteration(w, tol=1e-12)
    np.testing.assert_allclose(res.values, res.q.max(axis=1), atol=1e-12)
    for s in range(w.n_states):
        path = greedy_rollout(w, res.greedy, state=s)
        assert path[-1] == w.goal_state and len(path) - 1 <= w.n_states


@pytest.mark.parametrize("form", ["state", "state_action"])
def test_shaped_value_iteration_preserves_tie_sets(form):
    w = four_rooms_traps(8, -1.0, seed=1)
    base = greedy_tie_sets(exact_value_iteration(w, tol=1e-12).q)
    rng = np.random.default_rng(11)
    shape = (w.n_states,) if form == "state" else (w.n_states, 4)
    for _ in range(3):
        shaped = shaped_value_iteration(w, rng.uniform(-1, 1, size=shape))
        assert greedy_tie_sets(shaped.q) == base


def test_shaped_value_iteration_rejects_bad_shape():
    with pytest.raises(ValueError):
        shaped_value_iteration(four_rooms(), np.zeros(3))


# text map format -------------------------------------------------------------------

def test_map_roundtrip():
    w = four_rooms_traps(8, -1.0, seed=7)
    text = dumps_map(w)
    assert loads_map(text) == w
    assert text.splitlines()[0].startswith("gamma=")


@pytest.mark.parametrize("text", [
    "", "gamma=0.9\nSG\n", "gamma=0.9 step_reward=0\nS.\n", "gamma=0.9 step_reward=0\nSGG\n",
    "gamma=0.9 step_reward=0\nS.G\n..\n", "gamma=0.9 step_reward=0\nSxG\n",
])
def test_bad_maps_rejected(text):
    with pytest.raises(ValueError):
        loads_map(text)


def test_unreachable_cell_rejected():
    with pytest.raises(ValueError, match="reach"):
        loads_map("gamma=0.9 step_reward=0\nS.G#.\n")
