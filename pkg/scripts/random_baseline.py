"""Measure the random-policy episodic return for an experiment config.

Usage:
    python scripts/random_baseline.py configs/exp1.cfg [--episodes 64] [--seed 0]

This is the no-learning reference point: uniformly random joint poses each
step. Trained runs are judged against it (the acceptance suite requires a
trained policy to clear 3x this value on Experiment I).
"""

import argparse
import sys

from langarm.config import build_env, load_experiment
from langarm.trainer import measure_random_baseline


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("config")
    parser.add_argument("--episodes", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    cfg = load_experiment(args.config)
    env = build_env(cfg)
    value = measure_random_baseline(env, args.episodes, args.seed)
    print(f"random-policy mean episodic return over {args.episodes} episodes: "
          f"{value:.6f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
