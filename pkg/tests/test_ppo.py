"""Rollout collection, reward normalization, returns, and the clipped update."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import langarm.autodiff as ad
from langarm.autodiff import Tensor
from langarm.env import TouchEnv
from langarm.instructions import Instruction, InstructionSet, RewardSpec
from langarm.networks import Policy, PolicyConfig, gaussian_log_prob
from langarm.optim import Adam
from langarm.ppo import (NanLossError, RunningRewardStats, TrainerConfig,
                         TrajectoryBatch, collect_rollouts,
                         compute_returns_advantages, episode_rngs,
                         ppo_loss_terms, ppo_update)
from langarm.raster import CameraSpec, Table
from langarm.sim import SceneObject, build_planar_2x3


def make_tiny_env():
    cubes = [
        SceneObject("c0", "blue", (0.38, 0.02, 0.06), 0.06),
        SceneObject("c1", "green", (0.55, 0.02, 0.06), 0.06),
    ]
    specs = (RewardSpec("touch_binary", "blue"), RewardSpec("touch_binary", "green"))
    instructions = (Instruction.make(0, "Touch the blue cube."),
                    Instruction.make(1, "Touch the green cube."))
    cameras = [
        CameraSpec("front", 4, 4, (-0.88, 0.88), (-0.08, 0.60)),
        CameraSpec("top", 4, 4, (-0.88, 0.88), (-0.40, 0.96)),
    ]
    return TouchEnv(
        robot=build_planar_2x3(),
        objects=cubes,
        table=Table((-0.85, 0.85), (-0.15, 0.90), (-0.04, 0.0)),
        instruction_set=InstructionSet(instructions, specs),
        cameras=cameras,
        horizon=4,
    )


def _tiny_env_factory():  # module-level so worker processes can import it
    return make_tiny_env()


def tiny_policy(seed=0):
    robot = build_planar_2x3()
    cfg = PolicyConfig(
        dof=robot.dof,
        n_channels=18,
        img_h=4,
        img_w=4,
        motor_dim=36,
        action_low=tuple(robot.limits_low),
        action_high=tuple(robot.limits_high),
        sigma=0.36,
    )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed])))
    return Policy(cfg, rng)


def tiny_trainer(**overrides) -> TrainerConfig:
    kwargs = dict(lr=1e-3, epochs=1, rollouts=2, horizon=4, total_steps=8,
                  eval_every=1, eval_episodes=2, seed=3)
    kwargs.update(overrides)
    return TrainerConfig(**kwargs)


def collect(policy=None, cfg=None, **kw):
    policy = policy or tiny_policy()
    cfg = cfg or tiny_trainer()
    envs = [make_tiny_env() for _ in range(cfg.rollouts)]
    stats = RunningRewardStats()
    batch = collect_rollouts(policy, envs, cfg, 0, stats, **kw)
    return policy, cfg, stats, batch


# -- configuration -----------------------------------------------------------------


def test_trainer_config_rejects_bad_clip_and_gamma():
    with pytest.raises(ValueError):
        TrainerConfig(clip_eps=0.0)
    with pytest.raises(ValueError):
        TrainerConfig(clip_eps=1.0)
    with pytest.raises(ValueError):
        TrainerConfig(gamma=0.0)
    with pytest.raises(ValueError):
        TrainerConfig(gamma=1.5)
    TrainerConfig(gamma=1.0)  # closed upper end is allowed


def test_n_updates_is_total_steps_over_batch():
    cfg = TrainerConfig(rollouts=24, horizon=32, total_steps=76800)
    assert cfg.n_updates == 100


# -- running reward statistics -----------------------------------------------------


def test_running_stats_match_population_moments():
    xs = np.random.default_rng(0).normal(3.0, 2.5, size=257)
    stats = RunningRewardStats()
    for x in xs:
        stats.update(float(x))
    assert stats.count == 257
    np.testing.assert_allclose(stats.mean, xs.mean(), rtol=1e-12)
    np.testing.assert_allclose(stats.std, xs.std(), rtol=1e-10)


def test_running_stats_scale_floor():
    stats = RunningRewardStats()
    assert stats.std == 0.0
    assert stats.scale == 1e-4
    stats.update(5.0)  # one sample: population std is 0
    assert stats.scale == 1e-4
    stats.update(7.0)
    assert stats.scale == 1.0  # std of {5, 7} is exactly 1


@given(st.integers(0, 2**32 - 1), st.integers(2, 40))
@settings(max_examples=30, deadline=None)
def test_running_stats_commute_with_doubling(seed, n):
    # scaling every return by a power of two scales the std exactly
    xs = np.random.default_rng(seed).normal(0.0, 1.0, size=n)
    a, b = RunningRewardStats(), RunningRewardStats()
    for x in xs:
        a.update(float(x))
        b.update(float(2.0 * x))
    assert b.std == 2.0 * a.std


# -- returns and advantages ---------------------------------------------------------


def batch_with(rewards, values=None):
    rewards = np.asarray(rewards, dtype=np.float64)
    R, T = rewards.shape
    values = np.zeros((R, T)) if values is None else np.asarray(values, dtype=np.float64)
    zeros = np.zeros((R, T))
    return TrajectoryBatch(
        tokens=np.zeros((R, T, 8), dtype=np.int64),
        pixels=np.zeros((R, T, 1, 1, 1)),
        motor=np.zeros((R, T, 1)),
        actions=np.zeros((R, T, 2)),
        log_prob_old=zeros.copy(),
        value_old=values,
        rewards=rewards,
        episodic_returns=rewards.sum(axis=1),
        done=np.zeros((R, T), dtype=bool),
        target_touched=np.zeros((R, T), dtype=bool),
        wrong_touched=np.zeros((R, T), dtype=bool),
    )


def test_returns_terminal_reward_propagates_backwards():
    returns, _ = compute_returns_advantages(batch_with([[0.0, 0.0, 1.0]]), gamma=1.0)
    np.testing.assert_array_equal(returns, [[1.0, 1.0, 1.0]])


def test_returns_initial_reward_does_not_leak_forward():
    returns, _ = compute_returns_advantages(batch_with([[1.0, 0.0, 0.0]]), gamma=0.5)
    np.testing.assert_array_equal(returns, [[1.0, 0.0, 0.0]])


def test_returns_match_explicit_discounted_suffix_sums():
    rng = np.random.default_rng(4)
    rewards = rng.normal(size=(5, 13))
    gamma = 0.93
    returns, _ = compute_returns_advantages(batch_with(rewards), gamma)
    for r in range(5):
        for t in range(13):
            expected = sum(gamma ** (k - t) * rewards[r, k] for k in range(t, 13))
            np.testing.assert_allclose(returns[r, t], expected, rtol=1e-10)


def test_returns_do_not_bleed_across_episodes():
    rewards = np.array([[0.0, 0.0], [5.0, 0.0]])
    returns, _ = compute_returns_advantages(batch_with(rewards), gamma=1.0)
    np.testing.assert_array_equal(returns[0], [0.0, 0.0])


def test_advantages_are_standardized():
    rng = np.random.default_rng(5)
    rewards = rng.normal(size=(4, 16))
    values = rng.normal(size=(4, 16))
    _, adv = compute_returns_advantages(batch_with(rewards, values), gamma=0.99)
    assert abs(adv.mean()) < 1e-10
    np.testing.assert_allclose(adv.std(), 1.0, rtol=1e-9)


def test_advantages_degenerate_batch_is_all_zero():
    _, adv = compute_returns_advantages(batch_with(np.ones((3, 1))), gamma=1.0)
    # identical returns and values everywhere: centered advantage is 0, and the
    # standard-deviation floor keeps the division finite
    np.testing.assert_array_equal(adv, np.zeros((3, 1)))


# -- loss terms ----------------------------------------------------------------------


def test_identical_log_probs_give_unit_ratio_exactly():
    lp = np.random.default_rng(6).normal(size=20)
    adv = np.random.default_rng(7).normal(size=20)
    ret = np.zeros(20)
    ratio, policy_loss, _ = ppo_loss_terms(
        Tensor(lp.copy()), Tensor(ret.copy()), lp, adv, ret, clip_eps=0.2)
    np.testing.assert_array_equal(ratio.data, np.ones(20))
    np.testing.assert_allclose(policy_loss.data, -adv.mean(), rtol=1e-12)


def test_positive_advantage_ratio_above_band_is_clipped():
    # ratio exp(log 1.5) = 1.5 with eps 0.2 clamps to 1.2; the positive
    # advantage makes the clipped term the minimum
    lp_new = Tensor(np.array([np.log(1.5)]))
    ratio, policy_loss, _ = ppo_loss_terms(
        lp_new, Tensor(np.zeros(1)), np.zeros(1), np.ones(1), np.zeros(1), 0.2)
    np.testing.assert_allclose(ratio.data, [1.5], rtol=1e-12)
    np.testing.assert_allclose(policy_loss.data, -1.2, rtol=1e-12)


def test_negative_advantage_ratio_above_band_is_not_clipped():
    # with advantage -1 the unclipped term -1.5 is the smaller one
    lp_new = Tensor(np.array([np.log(1.5)]))
    _, policy_loss, _ = ppo_loss_terms(
        lp_new, Tensor(np.zeros(1)), np.zeros(1), -np.ones(1), np.zeros(1), 0.2)
    np.testing.assert_allclose(policy_loss.data, 1.5, rtol=1e-12)


def test_value_loss_is_mean_squared_error():
    v = np.array([1.0, 2.0, 3.0])
    ret = np.array([0.0, 2.0, 5.0])
    _, _, value_loss = ppo_loss_terms(
        Tensor(np.zeros(3)), Tensor(v.copy()), np.zeros(3), np.zeros(3), ret, 0.2)
    np.testing.assert_allclose(value_loss.data, (1.0 + 0.0 + 4.0) / 3.0, rtol=1e-12)


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=40, deadline=None)
def test_clipped_objective_never_exceeds_unclipped(seed):
    rng = np.random.default_rng(seed)
    n = 16
    lp_new = rng.normal(size=n)
    lp_old = lp_new - rng.normal(scale=0.5, size=n)
    adv = rng.normal(size=n)
    ratio = np.exp(lp_new - lp_old)
    clipped = np.clip(ratio, 0.8, 1.2) * adv
    unclipped = ratio * adv
    _, policy_loss, _ = ppo_loss_terms(
        Tensor(lp_new), Tensor(np.zeros(n)), lp_old, adv, np.zeros(n), 0.2)
    assert np.all(np.minimum(unclipped, clipped) <= unclipped + 1e-15)
    np.testing.assert_allclose(
        policy_loss.data, -np.minimum(unclipped, clipped).mean(), rtol=1e-10)


# -- episode RNG streams --------------------------------------------------------------


def test_episode_rngs_are_deterministic_and_distinct():
    e1, n1 = episode_rngs(7, 2, 5)
    e2, n2 = episode_rngs(7, 2, 5)
    assert e1.random() == e2.random()
    assert n1.random() == n2.random()
    e3, n3 = episode_rngs(7, 2, 5)
    assert e3.random() != n3.random()  # env and noise streams differ


def test_episode_rngs_vary_with_update_and_episode():
    draws = {episode_rngs(7, u, e)[0].random() for u in range(3) for e in range(3)}
    assert len(draws) == 9


# -- rollout collection ----------------------------------------------------------------


def test_collect_shapes_and_flags():
    _, cfg, stats, batch = collect()
    R, T = cfg.rollouts, cfg.horizon
    assert batch.n_rollouts == R and batch.horizon == T
    assert batch.tokens.shape == (R, T, 8)
    assert batch.pixels.shape == (R, T, 18, 4, 4)
    assert batch.motor.shape == (R, T, 36)
    assert batch.actions.shape == (R, T, 6)
    assert batch.done[:, :-1].sum() == 0 and batch.done[:, -1].all()
    assert stats.count == R


def test_collect_is_deterministic():
    _, _, _, b1 = collect()
    _, _, _, b2 = collect()
    np.testing.assert_array_equal(b1.actions, b2.actions)
    np.testing.assert_array_equal(b1.pixels, b2.pixels)
    np.testing.assert_array_equal(b1.rewards, b2.rewards)
    np.testing.assert_array_equal(b1.log_prob_old, b2.log_prob_old)


def test_collect_snapshot_matches_batched_recompute_bitwise():
    policy, _, _, batch = collect()
    with ad.no_grad():
        mean, value = policy.forward(batch.flat("tokens"), batch.flat("pixels"),
                                     batch.flat("motor"))
        lp = gaussian_log_prob(mean, batch.flat("actions"), policy.cfg.sigma)
    np.testing.assert_array_equal(batch.log_prob_old.reshape(-1), lp.data)
    np.testing.assert_array_equal(batch.value_old.reshape(-1), value.data)


def test_collect_normalizes_rewards_in_episode_order():
    # replaying the absorb-then-scale order on the raw returns must reproduce
    # the stored rewards exactly
    _, _, stats, batch = collect()
    replay = RunningRewardStats()
    raw_returns = batch.episodic_returns
    for r in range(batch.n_rollouts):
        replay.update(float(raw_returns[r]))
        np.testing.assert_allclose(batch.rewards[r].sum() * replay.scale,
                                   raw_returns[r], atol=1e-12)
    assert replay.count == stats.count
    assert replay.scale == stats.scale


def test_flat_reshapes_rollout_major():
    _, _, _, batch = collect()
    flat = batch.flat("actions")
    np.testing.assert_array_equal(flat[:batch.horizon], batch.actions[0])


# -- worker processes -------------------------------------------------------------------


def test_worker_collection_requires_factory():
    policy = tiny_policy()
    cfg = tiny_trainer()
    envs = [make_tiny_env() for _ in range(cfg.rollouts)]
    with pytest.raises(ValueError):
        collect_rollouts(policy, envs, cfg, 0, RunningRewardStats(), workers=2)


def test_worker_collection_is_deterministic():
    _, _, _, b1 = collect(workers=2, env_factory=_tiny_env_factory)
    _, _, _, b2 = collect(workers=2, env_factory=_tiny_env_factory)
    np.testing.assert_array_equal(b1.actions, b2.actions)
    np.testing.assert_array_equal(b1.rewards, b2.rewards)


def test_worker_collection_matches_single_process():
    # same seeded episode streams; tiny numeric slack because BLAS may pick
    # different kernels for the different batch shapes the two paths use
    _, _, stats1, b1 = collect(workers=1)
    _, _, stats2, b2 = collect(workers=2, env_factory=_tiny_env_factory)
    np.testing.assert_array_equal(b1.tokens, b2.tokens)
    np.testing.assert_allclose(b1.actions, b2.actions, atol=1e-9)
    np.testing.assert_allclose(b1.rewards, b2.rewards, atol=1e-9)
    np.testing.assert_allclose(b1.episodic_returns, b2.episodic_returns, atol=1e-9)
    np.testing.assert_allclose(stats1.scale, stats2.scale, atol=1e-12)


# -- the update ---------------------------------------------------------------------------


def test_first_epoch_ratio_is_exactly_one():
    policy, cfg, _, batch = collect()
    returns, adv = compute_returns_advantages(batch, cfg.gamma)
    opt = Adam(policy.params, lr=cfg.lr)
    metrics = ppo_update(policy, opt, batch, returns, adv, cfg)
    assert metrics["ratio_dev"] == 0.0


def test_update_emits_metrics_and_steps_optimizer():
    policy, cfg, _, batch = collect(cfg=tiny_trainer(epochs=3))
    returns, adv = compute_returns_advantages(batch, cfg.gamma)
    opt = Adam(policy.params, lr=cfg.lr)
    before = policy.params["actor.out.w"].data.copy()
    metrics = ppo_update(policy, opt, batch, returns, adv, cfg)
    for key in ("ratio_dev", "policy_loss", "value_loss", "mean_ratio", "clip_frac"):
        assert key in metrics and np.isfinite(metrics[key])
    assert 0.0 <= metrics["clip_frac"] <= 1.0
    assert opt.step_count == 3
    assert not np.array_equal(policy.params["actor.out.w"].data, before)


def test_update_raises_on_non_finite_loss():
    policy, cfg, _, batch = collect()
    returns, adv = compute_returns_advantages(batch, cfg.gamma)
    batch.log_prob_old[0, 0] = np.nan
    opt = Adam(policy.params, lr=cfg.lr)
    with pytest.raises(NanLossError) as err:
        ppo_update(policy, opt, batch, returns, adv, cfg)
    assert "log_prob_old" in err.value.dump
