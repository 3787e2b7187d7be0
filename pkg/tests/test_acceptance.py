"""One test per acceptance criterion; each prints a PASS/FAIL line.

The learning-speed test runs the full experiment (three modes, two maps,
ten seeds, 500 episodes) and takes the better part of an hour on one core.
"""

import time

import numpy as np

from vinrs import numcore as nc
from vinrs.env import (exact_value_iteration, four_rooms, four_rooms_traps, greedy_tie_sets,
                       shaped_value_iteration)
from vinrs.fixtures import corridor_world, five_node_fixture, two_room_world
from vinrs.harness import load_run, load_summary, run
from vinrs.messages import OptimalityModel, message_labels
from vinrs.network import node_loss, planned_values, planning_iterations
from vinrs.oracles import alpha_enumerated, beta_enumerated, labels_enumerated, random_dag_graph
from vinrs.rl import PolicyTable, rollout, shaped_rewards


def test_planning_equivalence(criterion):
    t0 = time.perf_counter()
    errors = {}
    for name, world in (("corridor", corridor_world()), ("two-room", two_room_world()),
                        ("four-rooms", four_rooms())):
        exact = exact_value_iteration(world, tol=1e-12).values
        errors[name] = float(np.abs(planned_values(world) - exact).max())
        assert planning_iterations(world) >= max(
            abs(r - world.goal[0]) + abs(c - world.goal[1]) for r, c in world.cells)
    secs = time.perf_counter() - t0
    worst = max(errors.values())
    passed = worst < 1e-6 and secs < 10
    criterion(1, passed, f"max |dV| {worst:.1e} ({', '.join(f'{k} {v:.1e}' for k, v in errors.items())}); {secs:.1f} s")
    assert passed


def test_message_passing_exactness(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        g = random_dag_graph(rng, int(rng.integers(1, 13)))
        model = OptimalityModel()
        for r in g.reward_array():
            model.observe(r)
        p = np.atleast_1d(model.optimality_prob(g.reward_array()))
        table = message_labels(g, model)
        a, b = alpha_enumerated(g, p), beta_enumerated(g, p)
        worst = max(worst, np.abs(table.alpha - a).max(), np.abs(table.beta - b).max(),
                    np.abs(table.label - labels_enumerated(a, b)).max())
    secs = time.perf_counter() - t0
    passed = worst <= 1e-10 and secs < 5
    criterion(2, passed, f"max error {worst:.1e} over 50 DAGs; {secs:.1f} s")
    assert passed


def test_gradient_integrity(criterion):
    t0 = time.perf_counter()
    net, batch = five_node_fixture()
    report = nc.grad_check_report(lambda: node_loss(net, batch), net.parameters(), h=1e-5)
    secs = time.perf_counter() - t0
    name, worst = max(report.items(), key=lambda kv: kv[1])
    passed = worst < 1e-4 and secs < 30
    criterion(3, passed, f"max relative error {worst:.1e} ({name}) over {len(report)} "
              f"parameters; {secs:.1f} s")
    assert passed


def test_shaping_invariance(criterion):
    t0 = time.perf_counter()
    world = four_rooms()
    base = greedy_tie_sets(exact_value_iteration(world, tol=1e-12).q)
    rng = np.random.default_rng(7)
    mismatches = 0
    for i in range(20):
        # alternate state potentials and state-action look-ahead potentials
        shape = (world.n_states,) if i % 2 else (world.n_states, 4)
        phi = rng.uniform(-1.0, 1.0, size=shape)
        shaped = greedy_tie_sets(shaped_value_iteration(world, phi).q)
        mismatches += sum(x != y for x, y in zip(base, shaped))
    secs = time.perf_counter() - t0
    passed = mismatches == 0 and secs < 10
    criterion(4, passed, f"{mismatches} differing tie-sets over 20 tables x "
              f"{world.n_states} states; {secs:.1f} s")
    assert passed


def test_telescoping(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    worst = 0.0
    n_terminal = 0
    for i in range(100):
        # short caps give truncated episodes, long ones mostly reach the goal
        world = four_rooms(gamma=1.0, max_episode_steps=int(rng.choice([30, 2000])))
        policy = PolicyTable(world.n_states, epsilon=0.3)
        policy.theta[:] = rng.normal(size=policy.theta.shape)
        traj = rollout(world, policy, rng)
        phi = rng.uniform(-1.0, 1.0, size=(world.n_states, 4))
        shaped = shaped_rewards(traj, phi, 1.0, policy)
        last = traj.states[-1]
        phi_end = 0.0 if traj.terminal else float(policy.probs(last) @ phi[last])
        n_terminal += traj.terminal
        expect = phi_end - phi[traj.states[0], traj.actions[0]]
        worst = max(worst, abs((shaped.sum() - sum(traj.rewards)) - expect))
    secs = time.perf_counter() - t0
    passed = worst <= 1e-10 and secs < 5
    criterion(5, passed, f"max |gap| {worst:.1e} on 100 trajectories ({n_terminal} reached "
              f"the goal); {secs:.1f} s")
    assert passed


MODES = ("none", "exact_messages", "cnn")


def test_learning_speed_ordering(criterion, tmp_path):
    lines, ok = [], True
    slowest = 0.0
    for env in ("four_rooms", "four_rooms_traps"):
        means = {}
        for mode in MODES:
            cfg = tmp_path / f"{env}_{mode}.cfg"
            cfg.write_text(f"env = {env}\nmodes = {mode}\nseeds = 0-9\nepisodes = 500\n")
            t0 = time.perf_counter()
            out = run(cfg, str(tmp_path / env / mode))
            slowest = max(slowest, time.perf_counter() - t0)
            means[mode] = load_summary(out / "summary.csv")[(mode, 300)]
        a2c, msg, cnn = means["none"], means["exact_messages"], means["cnn"]
        ok &= cnn <= a2c and msg <= a2c and cnn <= 1.1 * msg
        lines.append(f"{env}: A2C {a2c:.1f}, messages {msg:.1f}, CNN {cnn:.1f}")
    passed = ok and slowest < 15 * 60
    criterion(6, passed, "mean cumulative steps at episode 300: " + "; ".join(lines)
              + f"; slowest mode {slowest / 60:.1f} min")
    assert passed


def test_determinism(criterion, tmp_path):
    cfg = tmp_path / "det.cfg"
    cfg.write_text("env = four_rooms_traps\nmodes = none, exact_messages, cnn\nseeds = 3\n"
                   "episodes = 40\n")
    a, b = run(cfg, str(tmp_path / "a")), run(cfg, str(tmp_path / "b"))
    names = sorted(p.name for p in a.glob("*.csv"))
    same = all((a / n).read_bytes() == (b / n).read_bytes() for n in names)
    passed = same and len(names) == 4
    criterion(7, passed, f"{len(names)} files compared byte for byte")
    assert passed


def test_full_mix_equivalence(criterion, tmp_path):
    t0 = time.perf_counter()
    curves = {}
    for mode in MODES:
        cfg = tmp_path / f"{mode}.cfg"
        mix = "1.0" if mode != "none" else "0.9"
        cfg.write_text(f"modes = {mode}\nseeds = 5\nepisodes = 500\nalpha_mix = {mix}\n")
        out = run(cfg, str(tmp_path / mode))
        # episode, steps, cumulative_steps, return
        curves[mode] = load_run(out / f"{mode}_5.csv")[:, :4]
    secs = time.perf_counter() - t0
    same = all(np.array_equal(curves["none"], curves[m]) for m in ("exact_messages", "cnn"))
    passed = same and secs < 120
    criterion(8, passed, f"alpha_mix=1 curves identical to unshaped: {same}; {secs:.1f} s")
    assert passed
