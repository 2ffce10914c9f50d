"""Command-line interface: train, eval, render-rollout, gradcheck.

Exit codes: 0 success; 1 gradcheck failure; 2 malformed or missing config;
3 non-finite loss or gradient during training (offending batch dumped next to
the metrics); 4 checkpoint/model shape mismatch; 5 unwritable output
directory. Relative output paths resolve under $LANGARM_OUT when it is set.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .config import (ConfigError, build_env, build_policy_config,
                     load_experiment, override_seed)
from .env import state_features
from .gradcheck import format_report, run_gradcheck
from .networks import Policy
from .optim import NanGradient
from .params import CheckpointMismatch, load_checkpoint
from .ppo import NanLossError
from .raster import write_ppm
from .trainer import evaluate_policy, train

EXIT_GRADCHECK = 1
EXIT_CONFIG = 2
EXIT_NAN = 3
EXIT_CHECKPOINT = 4
EXIT_OUTDIR = 5


def resolve_out(path: str) -> str:
    root = os.environ.get("LANGARM_OUT")
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _prepare_outdir(path: str) -> str:
    out = resolve_out(path)
    try:
        os.makedirs(out, exist_ok=True)
        probe = os.path.join(out, ".write_probe")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as err:
        print(f"error: output directory {out!r} is not writable: {err}", file=sys.stderr)
        sys.exit(EXIT_OUTDIR)
    return out


def _load_config(path: str):
    try:
        return load_experiment(path)
    except FileNotFoundError:
        print(f"error: config file {path!r} not found", file=sys.stderr)
        sys.exit(EXIT_CONFIG)
    except ConfigError as err:
        print(f"error: {path}: {err}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def _load_policy(checkpoint: str, cfg) -> Policy:
    try:
        policy_cfg = build_policy_config(cfg)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)
    rng = np.random.Generator(np.random.PCG64(0))
    policy = Policy(policy_cfg, rng)
    try:
        load_checkpoint(checkpoint, policy.params)
    except FileNotFoundError:
        print(f"error: checkpoint {checkpoint!r} not found", file=sys.stderr)
        sys.exit(EXIT_CHECKPOINT)
    except CheckpointMismatch as err:
        print(f"error: checkpoint mismatch: {err}", file=sys.stderr)
        sys.exit(EXIT_CHECKPOINT)
    return policy


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg = override_seed(cfg, args.seed)
    out = _prepare_outdir(args.out if args.out is not None else cfg.out)
    try:
        result = train(cfg, out, workers=args.workers)
    except (NanLossError, NanGradient) as err:
        print(f"error: training aborted on non-finite values: {err}", file=sys.stderr)
        print(f"offending batch dumped to {os.path.join(out, 'nan_batch.npz')}",
              file=sys.stderr)
        return EXIT_NAN
    ev = result["final_eval"]
    if ev is not None:
        print(f"final eval return {ev['mean_return']:.4f}, "
              f"success {['%.2f' % s if s is not None else '-' for s in ev['success']]}")
    print(f"metrics: {result['metrics']}")
    print(f"checkpoint: {result['checkpoint']}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    policy = _load_policy(args.checkpoint, cfg)
    env = build_env(cfg)
    report = evaluate_policy(policy, env, args.episodes)
    out = _prepare_outdir(args.out)
    csv_path = os.path.join(out, "eval.csv")
    with open(csv_path, "w") as fh:
        fh.write("episode,instruction_id,episode_return,success\n")
        for e, rec in enumerate(report["episodes"]):
            fh.write(f"{e},{rec['instruction_id']},{repr(rec['episode_return'])},"
                     f"{int(rec['success'])}\n")
    print(f"mean episodic return: {report['mean_return']:.4f}")
    print(f"wrong-cube contact rate: {report['wrong_rate']:.4f}")
    for i, (inst, s) in enumerate(zip(cfg.instruction_set.instructions, report["success"])):
        rate = "n/a" if s is None else f"{s:.2f}"
        print(f"success[{i}] {inst.text!r}: {rate}")
    print(f"per-episode CSV: {csv_path}")
    return 0


def cmd_render_rollout(args) -> int:
    cfg = _load_config(args.config)
    policy = _load_policy(args.checkpoint, cfg)
    env = build_env(cfg)
    out = _prepare_outdir(args.out)
    seed = args.seed if args.seed is not None else cfg.seed
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xF4A])))
    state = env.reset(rng=rng)
    horizon = env.horizon
    for t in range(horizon):
        obs = state.frames[0]
        for cam, img in zip(env.cameras, obs.images):
            write_ppm(os.path.join(out, f"frame_{t:03d}_{cam.pose}.ppm"), img)
        if t == horizon - 1:
            break
        tok, pix, mot = state_features(state)
        mean = policy.act_mean(tok[None], pix[None], mot[None])[0]
        state = env.step(mean).state
    print(f"wrote {horizon * len(env.cameras)} frames to {out}")
    print(f"instruction: {state.instruction.text!r}")
    return 0


def cmd_gradcheck(args) -> int:
    passed, results = run_gradcheck(seed=args.seed)
    print(format_report(results))
    return 0 if passed else EXIT_GRADCHECK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="langarm",
        description="Instruction-conditioned arm control trained with PPO.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training experiment")
    p_train.add_argument("config")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--workers", type=int, default=1)
    p_train.add_argument("--out", default=None)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("config")
    p_eval.add_argument("--episodes", type=int, default=30)
    p_eval.add_argument("--out", default=".")
    p_eval.set_defaults(fn=cmd_eval)

    p_render = sub.add_parser("render-rollout", help="write PPM frames of one episode")
    p_render.add_argument("checkpoint")
    p_render.add_argument("config")
    p_render.add_argument("--seed", type=int, default=None)
    p_render.add_argument("--out", default="rollout")
    p_render.set_defaults(fn=cmd_render_rollout)

    p_gc = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p_gc.add_argument("--seed", type=int, default=0)
    p_gc.set_defaults(fn=cmd_gradcheck)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
