"""Training loop: collect, update, evaluate, checkpoint, log.

Evaluation is fully deterministic: actions are the distribution mean and the
instruction cycles round-robin over the set, so success rates are exact
properties of the current parameters rather than sample estimates.
"""

from __future__ import annotations

import os
from functools import partial

import numpy as np

from .env import TouchEnv, state_features
from .metrics import MetricsWriter, write_learning_curve
from .networks import Policy
from .optim import Adam, NanGradient
from .params import save_checkpoint
from .ppo import (NanLossError, RunningRewardStats, TrainerConfig,
                  collect_rollouts, compute_returns_advantages, ppo_update)


def evaluate_policy(policy: Policy, env: TouchEnv, episodes: int) -> dict:
    """Deterministic eval: mean-action rollouts, instructions round-robin.

    Success for an episode means the target cube was touched on at least one
    step; the wrong-contact rate is the fraction of all steps on which some
    fingertip touched a non-target cube.
    """
    n_instr = len(env.instruction_set)
    per_episode = []
    success_hits = [0] * n_instr
    success_counts = [0] * n_instr
    wrong_steps = 0
    total_steps = 0
    for e in range(episodes):
        iid = e % n_instr
        state = env.reset(instruction_id=iid)
        ep_return = 0.0
        touched = False
        for _ in range(env.horizon):
            tok, pix, mot = state_features(state)
            mean = policy.act_mean(tok[None], pix[None], mot[None])[0]
            result = env.step(mean)
            state = result.state
            ep_return += result.reward
            touched = touched or result.info["target_touched"]
            wrong_steps += int(result.info["wrong_touched"])
            total_steps += 1
        success_hits[iid] += int(touched)
        success_counts[iid] += 1
        per_episode.append({
            "instruction_id": iid,
            "episode_return": ep_return,
            "success": touched,
        })
    success = [h / c if c else None for h, c in zip(success_hits, success_counts)]
    return {
        "mean_return": float(np.mean([p["episode_return"] for p in per_episode])),
        "success": success,
        "wrong_rate": wrong_steps / total_steps if total_steps else 0.0,
        "episodes": per_episode,
    }


def measure_random_baseline(env: TouchEnv, episodes: int, seed: int) -> float:
    """Mean episodic return of uniformly random joint poses (the no-learning
    reference point for judging trained performance)."""
    low = env.robot.limits_low
    high = env.robot.limits_high
    returns = []
    for e in range(episodes):
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([seed, 0xBA5E, e])))
        state = env.reset(rng=rng)
        ep_return = 0.0
        for _ in range(env.horizon):
            action = rng.uniform(low, high)
            result = env.step(action)
            ep_return += result.reward
        returns.append(ep_return)
    return float(np.mean(returns))


def train(exp_cfg, out_dir, workers: int = 1, env_factory=None,
          progress=None) -> dict:
    """Run the configured experiment; writes metrics, checkpoints, curve.

    ``env_factory`` is a zero-argument picklable callable used by worker
    processes; with workers=1 it is unused. ``progress`` is an optional
    callback(update_idx, row_dict) for live reporting.
    """
    from .config import build_env, build_policy_config

    tcfg: TrainerConfig = exp_cfg.trainer
    os.makedirs(out_dir, exist_ok=True)
    envs = [build_env(exp_cfg) for _ in range(tcfg.rollouts)]
    eval_env = build_env(exp_cfg)
    if env_factory is None:
        env_factory = partial(build_env, exp_cfg)
    policy_cfg = build_policy_config(exp_cfg)
    init_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([tcfg.seed])))
    policy = Policy(policy_cfg, init_rng)
    optimizer = Adam(policy.params, lr=tcfg.lr)
    stats = RunningRewardStats()
    n_instr = len(exp_cfg.instruction_set)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    last_eval = None
    with MetricsWriter(metrics_path, n_instr) as writer:
        for u in range(tcfg.n_updates):
            batch = collect_rollouts(policy, envs, tcfg, u, stats,
                                     workers=workers, env_factory=env_factory)
            returns, advantages = compute_returns_advantages(batch, tcfg.gamma)
            try:
                m = ppo_update(policy, optimizer, batch, returns, advantages, tcfg)
            except (NanLossError, NanGradient) as err:
                dump = getattr(err, "dump", None) or {
                    "tokens": batch.flat("tokens"), "pixels": batch.flat("pixels"),
                    "motor": batch.flat("motor"), "actions": batch.flat("actions"),
                    "log_prob_old": batch.flat("log_prob_old"),
                    "returns": returns, "advantages": advantages,
                }
                np.savez(os.path.join(out_dir, "nan_batch.npz"), **dump)
                raise
            row = {
                "update": u,
                "env_steps": (u + 1) * tcfg.rollouts * tcfg.horizon,
                "train_return": float(batch.episodic_returns.mean()),
                **m,
            }
            if (u + 1) % tcfg.eval_every == 0 or u == tcfg.n_updates - 1:
                last_eval = evaluate_policy(policy, eval_env, tcfg.eval_episodes)
                row["eval_return"] = last_eval["mean_return"]
                row["eval_wrong_rate"] = last_eval["wrong_rate"]
                for i, s in enumerate(last_eval["success"]):
                    row[f"success_{i}"] = s
                save_checkpoint(os.path.join(out_dir, "checkpoint.bin"),
                                policy.params, optimizer)
            writer.write(row)
            if progress is not None:
                progress(u, row)
    final_path = os.path.join(out_dir, "checkpoint_final.bin")
    save_checkpoint(final_path, policy.params, optimizer)
    write_learning_curve(metrics_path, os.path.join(out_dir, "curve.svg"))
    return {
        "metrics": metrics_path,
        "checkpoint": final_path,
        "final_eval": last_eval,
        "policy": policy,
    }
