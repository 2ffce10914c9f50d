"""Train one experiment config end to end, then evaluate and render frames.

Usage:
    python scripts/run_exp.py configs/exp1.cfg [--seed 7] [--workers 1]

Artifacts land in the config's [run] out directory: metrics.csv, curve.svg,
checkpoint_final.bin, eval.csv, and one PPM frame pair per rollout step.
"""

import argparse
import os
import sys
import time

from langarm.cli import main as cli_main


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("config")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--out", default=None)
    args = parser.parse_args()

    train_args = ["train", args.config, "--workers", str(args.workers)]
    if args.seed is not None:
        train_args += ["--seed", str(args.seed)]
    if args.out is not None:
        train_args += ["--out", args.out]

    t0 = time.time()
    code = cli_main(train_args)
    if code != 0:
        return code
    print(f"training took {time.time() - t0:.0f}s")

    from langarm.config import load_experiment
    out = args.out if args.out is not None else load_experiment(args.config).out
    ckpt = os.path.join(out, "checkpoint_final.bin")
    code = cli_main(["eval", ckpt, args.config, "--out", out])
    if code != 0:
        return code
    return cli_main(["render-rollout", ckpt, args.config,
                     "--out", os.path.join(out, "rollout")])


if __name__ == "__main__":
    sys.exit(main())
