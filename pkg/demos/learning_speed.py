"""Cumulative steps to goal for plain A2C, message-label shaping and CNN shaping.

Runs every mode on Four Rooms and Four Rooms Traps with ten seeds and
prints the episode-300 comparison. Each (env, mode) pair goes through the
same ``run`` entry point the CLI uses, so the CSVs land in results/<env>/<mode>/.

    python3 demos/learning_speed.py [--episodes 500] [--seeds 0-9]
"""

import argparse
import tempfile
import time
from pathlib import Path

from vinrs.cli import _keep_freed_memory
from vinrs.harness import load_summary, run

MODES = ("none", "exact_messages", "cnn")


def run_mode(env: str, mode: str, seeds: str, episodes: int, out: Path) -> float:
    text = f"env = {env}\nmodes = {mode}\nseeds = {seeds}\nepisodes = {episodes}\n"
    with tempfile.NamedTemporaryFile("w", suffix=".cfg", delete=False) as fh:
        fh.write(text)
    t0 = time.perf_counter()
    run(fh.name, str(out / mode))
    Path(fh.name).unlink()
    return time.perf_counter() - t0


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--episodes", type=int, default=500)
    ap.add_argument("--seeds", default="0-9")
    ap.add_argument("--out", default="results")
    ap.add_argument("--checkpoint", type=int, default=300)
    args = ap.parse_args()
    _keep_freed_memory()
    for env in ("four_rooms", "four_rooms_traps"):
        means = {}
        for mode in MODES:
            out = Path(args.out) / env
            secs = run_mode(env, mode, args.seeds, args.episodes, out)
            means[mode] = load_summary(out / mode / "summary.csv")[(mode, args.checkpoint)]
            print(f"{env:17s} {mode:15s} mean cumulative steps at {args.checkpoint}: "
                  f"{means[mode]:9.1f}   ({secs:6.1f} s)", flush=True)
        print(f"{env:17s} cnn <= a2c: {means['cnn'] <= means['none']}   "
              f"messages <= a2c: {means['exact_messages'] <= means['none']}   "
              f"cnn within 10% of messages: {means['cnn'] <= 1.1 * means['exact_messages']}",
              flush=True)


if __name__ == "__main__":
    main()
