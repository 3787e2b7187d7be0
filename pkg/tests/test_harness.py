import io
import os
import subprocess
import sys

import numpy as np
import pytest

from vinrs import harness
from vinrs.cli import main
from vinrs.env import four_rooms_traps, loads_map

HEADER = ",".join(harness.CSV_HEADER)


def write_cfg(tmp_path, body):
    path = tmp_path / "exp.cfg"
    path.write_text(body)
    return path


def test_parse_config_defaults_and_overrides():
    cfg = harness.parse_config("# comment\nenv = four_rooms_traps\nseeds = 0-2, 5\n"
                               "alpha_mix = 0.5  # mix\nk_iterations = 7\nreset_graph = false\n")
    assert cfg.env == "four_rooms_traps"
    assert cfg.seeds == (0, 1, 2, 5)
    assert cfg.train.alpha_mix == 0.5 and cfg.train.vin.k_iterations == 7
    assert cfg.train.reset_graph is False
    d = harness.parse_config("")
    assert (d.train.gamma, d.train.lam, d.train.alpha_mix, d.train.vin.eta) == (0.99, 0.95, 0.9, 10.0)
    assert d.modes == ("none", "exact_messages", "cnn") and d.seeds == tuple(range(10))


@pytest.mark.parametrize("body", [
    "bogus = 1\n", "alpha_mix = high\n", "alpha_mix = 2\n", "modes = none, fancy\n",
    "env = mars\n", "just words\n", "seeds = 1\nseeds = 2\n", "workers = 0\n",
])
def test_parse_config_errors(body):
    with pytest.raises(harness.ConfigError):
        harness.parse_config(body)


def test_run_row_accounting(tmp_path):
    cfg = write_cfg(tmp_path, "modes = none\nseeds = 0, 1\nepisodes = 10\n")
    out = harness.run(cfg, str(tmp_path / "out"))
    csvs = sorted(p.name for p in out.glob("*_*.csv"))
    assert csvs == ["none_0.csv", "none_1.csv"]
    for name in csvs:
        lines = (out / name).read_text().splitlines()
        assert lines[0] == HEADER and len(lines) == 11
        assert harness.load_run(out / name).shape == (10, 6)
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0] == "mode,checkpoint,mean,std,n"
    assert len(summary) == 1  # 10 episodes reach no checkpoint


def test_run_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path, "modes = none, exact_messages\nseeds = 4\nepisodes = 30\n")
    a = harness.run(cfg, str(tmp_path / "a"))
    b = harness.run(cfg, str(tmp_path / "b"))
    for name in ("none_4.csv", "exact_messages_4.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_summary_uses_population_std(tmp_path):
    cfg = write_cfg(tmp_path, "modes = none\nseeds = 0-2\nepisodes = 100\n")
    out = harness.run(cfg, str(tmp_path / "out"))
    cum = [harness.load_run(out / f"none_{s}.csv")[99, 2] for s in range(3)]
    row = (out / "summary.csv").read_text().splitlines()[1].split(",")
    assert row[:2] == ["none", "100"] and row[4] == "3"
    assert float(row[2]) == pytest.approx(np.mean(cum))
    assert float(row[3]) == pytest.approx(np.std(cum))


def test_seed_offset(tmp_path, monkeypatch):
    monkeypatch.setenv(harness.SEED_OFFSET_ENV, "100")
    cfg = write_cfg(tmp_path, "modes = none\nseeds = 0\nepisodes = 5\n")
    out = harness.run(cfg, str(tmp_path / "out"))
    assert (out / "none_100.csv").exists()
    monkeypatch.setenv(harness.SEED_OFFSET_ENV, "abc")
    with pytest.raises(harness.ConfigError):
        harness.run(cfg, str(tmp_path / "bad"))


def test_parallel_workers_match_serial(tmp_path):
    serial = write_cfg(tmp_path, "modes = none\nseeds = 0, 1\nepisodes = 20\n")
    a = harness.run(serial, str(tmp_path / "a"))
    (tmp_path / "par.cfg").write_text("modes = none\nseeds = 0, 1\nepisodes = 20\nworkers = 2\n")
    b = harness.run(tmp_path / "par.cfg", str(tmp_path / "b"))
    for s in (0, 1):
        assert (a / f"none_{s}.csv").read_bytes() == (b / f"none_{s}.csv").read_bytes()


def test_unwritable_output(tmp_path):
    cfg = write_cfg(tmp_path, "modes = none\nseeds = 0\nepisodes = 2\n")
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(harness.ConfigError):
        harness.run(cfg, str(blocker / "sub"))


def test_load_run_rejects_bad_prefix_sum(tmp_path):
    p = tmp_path / "none_0.csv"
    p.write_text(HEADER + "\n1,5,5,0.0,0.0,nan\n2,3,9,0.0,0.0,nan\n")
    with pytest.raises(ValueError, match="prefix"):
        harness.load_run(p)
    p.write_text("a,b\n")
    with pytest.raises(ValueError, match="header"):
        harness.load_run(p)


# plotdata ------------------------------------------------------------------------------

def fake_csv(path, steps):
    cum = np.cumsum(steps)
    rows = [HEADER] + [f"{i + 1},{s},{c},0.0,0.0,nan" for i, (s, c) in enumerate(zip(steps, cum))]
    path.write_text("\n".join(rows) + "\n")


def read_dat(path):
    return np.loadtxt(path, comments="#")


def test_plotdata_single_seed(tmp_path):
    fake_csv(tmp_path / "none_0.csv", [5, 3, 2])
    (path,) = harness.plotdata(tmp_path)
    d = read_dat(path)
    np.testing.assert_array_equal(d[:, 1], d[:, 2])
    np.testing.assert_array_equal(d[:, 1], d[:, 3])
    assert path.read_text().startswith("# episode mean lo hi")


def test_plotdata_identical_runs(tmp_path):
    fake_csv(tmp_path / "cnn_0.csv", [5, 3, 2])
    fake_csv(tmp_path / "cnn_1.csv", [5, 3, 2])
    d = read_dat(harness.plotdata(tmp_path)[0])
    np.testing.assert_array_equal(d[:, 2], d[:, 3])


def test_plotdata_hand_fixture(tmp_path):
    fake_csv(tmp_path / "exact_messages_0.csv", [4, 2, 6])    # cumulative 4, 6, 12
    fake_csv(tmp_path / "exact_messages_1.csv", [2, 2, 2])    # cumulative 2, 4, 6
    out = tmp_path / "plots"
    (path,) = harness.plotdata(tmp_path, str(out))
    assert path == out / "exact_messages.dat"
    expect = np.array([[1, 3, 2, 4], [2, 5, 4, 6], [3, 9, 6, 12]], dtype=float)
    np.testing.assert_allclose(read_dat(path), expect)


def test_plotdata_errors(tmp_path):
    with pytest.raises(harness.ConfigError):
        harness.plotdata(tmp_path / "missing")
    with pytest.raises(harness.ConfigError):
        harness.plotdata(tmp_path)
    fake_csv(tmp_path / "none_0.csv", [1, 2])
    fake_csv(tmp_path / "none_1.csv", [1, 2, 3])
    with pytest.raises(ValueError, match="episode counts"):
        harness.plotdata(tmp_path)


# self-checks and CLI ---------------------------------------------------------------

def test_selfcheck_passes():
    buf = io.StringIO()
    results = harness.selfcheck(out=buf)
    assert all(r.ok for r in results), buf.getvalue()
    statuses = [r.status for r in results]
    assert statuses.count("XFAIL") == 1 and statuses.count("FAIL") == 0
    assert "K=1" in buf.getvalue()


def test_corrupted_gradient_names_parameter():
    r = harness.gradcheck(corrupt_grad=True, out=io.StringIO())
    assert not r.ok and r.status == "FAIL"
    assert "cnnH_w" in r.detail


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["gradcheck"]) == harness.EXIT_OK
    assert main(["gradcheck", "--corrupt-grad"]) == harness.EXIT_CHECK_FAILED
    bad = write_cfg(tmp_path, "nonsense = 3\n")
    assert main(["run", str(bad)]) == harness.EXIT_CONFIG
    assert main(["run", str(tmp_path / "absent.cfg")]) == harness.EXIT_CONFIG
    assert main(["plotdata", str(tmp_path / "nothing")]) == harness.EXIT_CONFIG
    capsys.readouterr()


def test_cli_run_and_plotdata(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "modes = none\nseeds = 0\nepisodes = 5\n")
    out = tmp_path / "res"
    assert main(["run", str(cfg), "--output-dir", str(out)]) == 0
    assert main(["plotdata", str(out)]) == 0
    assert (out / "none.dat").exists()
    capsys.readouterr()


def test_cli_map_dump_roundtrip(capsys):
    assert main(["map-dump", "four_rooms_traps", "--trap-seed", "7"]) == 0
    text = capsys.readouterr().out
    assert loads_map(text) == four_rooms_traps(seed=7)


def test_module_entry_point():
    env = dict(os.environ)
    proc = subprocess.run([sys.executable, "-m", "vinrs", "map-dump", "four_rooms"],
                          capture_output=True, text=True, env=env, timeout=60)
    assert proc.returncode == 0 and proc.stdout.count("\n") == 14
