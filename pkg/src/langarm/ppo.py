"""PPO without GAE: rollout storage, reward normalization, clipped updates.

Returns are plain discounted reward sums within each fixed-length episode
(no bootstrapping, no GAE); advantages are returns minus the collection-time
value estimates, standardized across the batch. Per-step rewards are divided
by a running standard deviation of episodic returns (Welford, with a floor)
before returns are computed.

The log-probabilities and values that anchor the ratio are recomputed once at
the end of collection with the exact same batched forward pass the update
epochs use, so the first epoch of every update reproduces them bit for bit
and the importance ratio starts at exactly 1.
"""

from __future__ import annotations

import multiprocessing as mp
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .env import TouchEnv, state_features
from .networks import Policy, gaussian_log_prob, sample_action
from .optim import Adam


@dataclass(frozen=True)
class TrainerConfig:
    lr: float = 1e-5
    epochs: int = 60
    clip_eps: float = 0.2
    gamma: float = 0.99
    value_coef: float = 0.5
    entropy_coef: float = 0.0  # inert while sigma is fixed; kept for parity
    rollouts: int = 24
    horizon: int = 32
    total_steps: int = 768 * 100
    eval_every: int = 10
    eval_episodes: int = 6
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.clip_eps < 1.0:
            raise ValueError("clip_eps must lie in (0, 1)")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")

    @property
    def n_updates(self) -> int:
        return self.total_steps // (self.rollouts * self.horizon)


class RunningRewardStats:
    """Welford accumulator over episodic returns; scale floors at 1e-4."""

    def __init__(self):
        self.count = 0
        self.mean = 0.0
        self.m2 = 0.0

    def update(self, x: float):
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    @property
    def std(self) -> float:
        if self.count == 0:
            return 0.0
        return float(np.sqrt(self.m2 / self.count))

    @property
    def scale(self) -> float:
        return max(self.std, 1e-4)


@dataclass
class TrajectoryBatch:
    """Rollout storage; all arrays lead with (rollouts, horizon)."""

    tokens: np.ndarray  # (R, T, L) int64
    pixels: np.ndarray  # (R, T, C, H, W)
    motor: np.ndarray  # (R, T, M)
    actions: np.ndarray  # (R, T, dof)
    log_prob_old: np.ndarray  # (R, T)
    value_old: np.ndarray  # (R, T)
    rewards: np.ndarray  # (R, T), normalized
    episodic_returns: np.ndarray  # (R,), native (pre-normalization) scale
    done: np.ndarray  # (R, T) bool
    target_touched: np.ndarray  # (R, T) bool
    wrong_touched: np.ndarray  # (R, T) bool

    @property
    def n_rollouts(self) -> int:
        return self.rewards.shape[0]

    @property
    def horizon(self) -> int:
        return self.rewards.shape[1]

    def flat(self, name: str) -> np.ndarray:
        arr = getattr(self, name)
        return arr.reshape((arr.shape[0] * arr.shape[1],) + arr.shape[2:])


def episode_rngs(seed: int, update_idx: int, episode_idx: int):
    """Independent (environment, action-noise) streams for one episode."""
    env_rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([seed, update_idx, episode_idx, 0])))
    noise_rng = np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([seed, update_idx, episode_idx, 1])))
    return env_rng, noise_rng


def _alloc_batch(R: int, T: int, env: TouchEnv, dof: int, max_len: int):
    from .env import feature_dims

    n_ch, h, w, motor_dim = feature_dims(env)
    return TrajectoryBatch(
        tokens=np.zeros((R, T, max_len), dtype=np.int64),
        pixels=np.zeros((R, T, n_ch, h, w)),
        motor=np.zeros((R, T, motor_dim)),
        actions=np.zeros((R, T, dof)),
        log_prob_old=np.zeros((R, T)),
        value_old=np.zeros((R, T)),
        rewards=np.zeros((R, T)),
        episodic_returns=np.zeros(R),
        done=np.zeros((R, T), dtype=bool),
        target_touched=np.zeros((R, T), dtype=bool),
        wrong_touched=np.zeros((R, T), dtype=bool),
    )


def collect_rollouts(policy: Policy, envs: list[TouchEnv], cfg: TrainerConfig,
                     update_idx: int, stats: RunningRewardStats,
                     workers: int = 1, env_factory=None) -> TrajectoryBatch:
    """Run R seeded episodes of T steps with the frozen policy snapshot.

    With workers > 1 the episodes are partitioned into contiguous groups and
    executed in forked worker processes; per-episode RNG streams keep the
    result independent of the partitioning, and reward normalization always
    happens in the parent in episode order.
    """
    R, T = cfg.rollouts, cfg.horizon
    dof = policy.cfg.dof
    sigma = policy.cfg.sigma
    max_len = policy.cfg.lang.max_len
    batch = _alloc_batch(R, T, envs[0], dof, max_len)

    if workers <= 1:
        _collect_lockstep(policy, envs, batch, cfg, update_idx)
    else:
        _collect_workers(policy, batch, cfg, update_idx, workers, env_factory)

    # Normalize rewards sequentially in episode order: each episode's return
    # is absorbed into the running stats, then its rewards are scaled by the
    # updated std. Doing this in the parent keeps the result independent of
    # how collection was partitioned across workers.
    for r in range(R):
        batch.episodic_returns[r] = batch.rewards[r].sum()
        stats.update(float(batch.episodic_returns[r]))
        batch.rewards[r] /= stats.scale

    # Snapshot log-probs and values with the same flattened batched forward
    # the update epochs run, so the first-epoch ratio is exactly 1.
    with ad.no_grad():
        mean, value = policy.forward(batch.flat("tokens"), batch.flat("pixels"),
                                     batch.flat("motor"))
        lp = gaussian_log_prob(mean, batch.flat("actions"), sigma)
    batch.log_prob_old[:] = lp.data.reshape(R, T)
    batch.value_old[:] = value.data.reshape(R, T)
    return batch


def _collect_lockstep(policy: Policy, envs, batch: TrajectoryBatch,
                      cfg: TrainerConfig, update_idx: int):
    R, T = cfg.rollouts, cfg.horizon
    sigma = policy.cfg.sigma
    noise_rngs = []
    states = []
    for r in range(R):
        env_rng, noise_rng = episode_rngs(cfg.seed, update_idx, r)
        states.append(envs[r].reset(rng=env_rng))
        noise_rngs.append(noise_rng)
    for t in range(T):
        for r in range(R):
            tok, pix, mot = state_features(states[r])
            batch.tokens[r, t] = tok
            batch.pixels[r, t] = pix
            batch.motor[r, t] = mot
        mean = policy.act_mean(batch.tokens[:, t], batch.pixels[:, t], batch.motor[:, t])
        for r in range(R):
            action = sample_action(mean[r], sigma, noise_rngs[r])
            result = envs[r].step(action)
            states[r] = result.state
            batch.actions[r, t] = action
            batch.rewards[r, t] = result.reward
            batch.done[r, t] = result.done
            batch.target_touched[r, t] = result.info["target_touched"]
            batch.wrong_touched[r, t] = result.info["wrong_touched"]


_WORKER_CTX: dict = {}


def _worker_init(policy_cfg, param_state, env_factory, trainer_cfg, update_idx):
    rng = np.random.Generator(np.random.PCG64(0))
    policy = Policy(policy_cfg, rng)
    policy.params.load_state_arrays(param_state)
    _WORKER_CTX["policy"] = policy
    _WORKER_CTX["env"] = env_factory()
    _WORKER_CTX["cfg"] = trainer_cfg
    _WORKER_CTX["update_idx"] = update_idx


def _worker_run(episode_indices):
    policy: Policy = _WORKER_CTX["policy"]
    env: TouchEnv = _WORKER_CTX["env"]
    cfg: TrainerConfig = _WORKER_CTX["cfg"]
    update_idx: int = _WORKER_CTX["update_idx"]
    out = []
    for r in episode_indices:
        env_rng, noise_rng = episode_rngs(cfg.seed, update_idx, r)
        state = env.reset(rng=env_rng)
        rec = {
            "tokens": [], "pixels": [], "motor": [], "actions": [],
            "rewards": [], "done": [], "target": [], "wrong": [],
        }
        for t in range(cfg.horizon):
            tok, pix, mot = state_features(state)
            mean = policy.act_mean(tok[None], pix[None], mot[None])[0]
            action = sample_action(mean, policy.cfg.sigma, noise_rng)
            result = env.step(action)
            state = result.state
            rec["tokens"].append(tok)
            rec["pixels"].append(pix)
            rec["motor"].append(mot)
            rec["actions"].append(action)
            rec["rewards"].append(result.reward)
            rec["done"].append(result.done)
            rec["target"].append(result.info["target_touched"])
            rec["wrong"].append(result.info["wrong_touched"])
        out.append((r, {k: np.array(v) for k, v in rec.items()}))
    return out


def _collect_workers(policy: Policy, batch: TrajectoryBatch, cfg: TrainerConfig,
                     update_idx: int, workers: int, env_factory):
    if env_factory is None:
        raise ValueError("worker collection needs a picklable env factory")
    R = cfg.rollouts
    bounds = np.linspace(0, R, workers + 1).astype(int)
    groups = [list(range(bounds[i], bounds[i + 1])) for i in range(workers)]
    groups = [g for g in groups if g]
    ctx = mp.get_context("fork")
    with ctx.Pool(
        processes=len(groups),
        initializer=_worker_init,
        initargs=(policy.cfg, policy.params.state_arrays(), env_factory, cfg, update_idx),
    ) as pool:
        for chunk in pool.map(_worker_run, groups):
            for r, rec in chunk:
                batch.tokens[r] = rec["tokens"]
                batch.pixels[r] = rec["pixels"]
                batch.motor[r] = rec["motor"]
                batch.actions[r] = rec["actions"]
                batch.rewards[r] = rec["rewards"]
                batch.done[r] = rec["done"]
                batch.target_touched[r] = rec["target"]
                batch.wrong_touched[r] = rec["wrong"]


def compute_returns_advantages(batch: TrajectoryBatch, gamma: float):
    """Discounted future sums per episode and standardized advantages."""
    R, T = batch.rewards.shape
    returns = np.zeros((R, T))
    acc = np.zeros(R)
    for t in range(T - 1, -1, -1):
        acc = batch.rewards[:, t] + gamma * acc
        returns[:, t] = acc
    adv = returns - batch.value_old
    adv = (adv - adv.mean()) / max(adv.std(), 1e-8)
    return returns, adv


class NanLossError(Exception):
    """The update produced a non-finite loss; carries the batch for dumping."""

    def __init__(self, message: str, dump: dict):
        super().__init__(message)
        self.dump = dump


def ppo_loss_terms(log_prob_new: Tensor, value_new: Tensor, log_prob_old: np.ndarray,
                   advantages: np.ndarray, returns: np.ndarray, clip_eps: float):
    """Clipped-surrogate policy loss and squared-error value loss (tensors)."""
    ratio = ad.exp(ad.sub(log_prob_new, Tensor(log_prob_old)))
    unclipped = ad.mul(ratio, Tensor(advantages))
    clipped = ad.mul(ad.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps), Tensor(advantages))
    policy_loss = ad.mul(ad.tmean(ad.minimum(unclipped, clipped)), -1.0)
    value_loss = ad.tmean(ad.square(ad.sub(value_new, Tensor(returns))))
    return ratio, policy_loss, value_loss


def ppo_update(policy: Policy, optimizer: Adam, batch: TrajectoryBatch,
               returns: np.ndarray, advantages: np.ndarray, cfg: TrainerConfig) -> dict:
    """Multi-epoch full-batch PPO update; returns per-update metrics."""
    tokens = batch.flat("tokens")
    pixels = batch.flat("pixels")
    motor = batch.flat("motor")
    actions = batch.flat("actions")
    lp_old = batch.flat("log_prob_old")
    ret = returns.reshape(-1)
    adv = advantages.reshape(-1)
    # The image batch is fixed across epochs, so the first conv layer's patch
    # matrix can be built once and reused by every forward and weight-grad GEMM.
    pixels_t = Tensor(pixels)
    ad.precompute_conv_cols(pixels_t)
    metrics = {}
    for epoch in range(cfg.epochs):
        policy.params.zero_grads()
        mean, value = policy.forward(tokens, pixels_t, motor)
        lp_new = gaussian_log_prob(mean, actions, policy.cfg.sigma)
        ratio, policy_loss, value_loss = ppo_loss_terms(
            lp_new, value, lp_old, adv, ret, cfg.clip_eps)
        total = ad.add(policy_loss, ad.mul(value_loss, cfg.value_coef))
        if not np.isfinite(total.data):
            raise NanLossError(
                f"non-finite loss at epoch {epoch}",
                {"tokens": tokens, "pixels": pixels, "motor": motor,
                 "actions": actions, "log_prob_old": lp_old,
                 "returns": ret, "advantages": adv},
            )
        if epoch == 0:
            metrics["ratio_dev"] = float(np.abs(ratio.data - 1.0).max())
        total.backward()
        optimizer.step()
        metrics["policy_loss"] = float(policy_loss.data)
        metrics["value_loss"] = float(value_loss.data)
        metrics["mean_ratio"] = float(ratio.data.mean())
        metrics["clip_frac"] = float((np.abs(ratio.data - 1.0) > cfg.clip_eps).mean())
    return metrics
