"""Finite-difference verification of the analytic gradients.

Runs the full training loss (clipped surrogate + value term) on a small
synthetic batch at desk dimensions, backpropagates once, then probes random
entries of every named parameter with central differences. The error measure
is |analytic - numeric| / max(|analytic|, |numeric|, floor); the floor turns
the measure into an absolute tolerance for near-zero gradients, where finite
differences are dominated by roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .instructions import BOS, MAX_LEN, VOCAB
from .networks import Policy, PolicyConfig, gaussian_log_prob
from .ppo import ppo_loss_terms
from .sim import build_planar_2x3


@dataclass(frozen=True)
class GradCheckResult:
    tensor_name: str
    max_rel_err: float
    probes: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < 1e-4


def desk_policy_config() -> PolicyConfig:
    robot = build_planar_2x3()
    return PolicyConfig(
        dof=robot.dof,
        n_channels=18,
        img_h=32,
        img_w=16,
        motor_dim=3 * (robot.dof + robot.n_fingertips),
        action_low=tuple(robot.limits_low),
        action_high=tuple(robot.limits_high),
    )


def synthetic_batch(cfg: PolicyConfig, batch: int, rng: np.random.Generator) -> dict:
    """Random but well-scaled inputs exercising every network path."""
    tokens = rng.integers(0, cfg.lang.vocab, size=(batch, cfg.lang.max_len))
    tokens[:, 0] = BOS
    mid = 0.5 * (np.asarray(cfg.action_low) + np.asarray(cfg.action_high))
    actions = mid + cfg.sigma * rng.standard_normal((batch, cfg.dof))
    return {
        "tokens": tokens,
        "pixels": rng.uniform(0.0, 1.0, size=(batch, cfg.n_channels, cfg.img_h, cfg.img_w)),
        "motor": rng.uniform(-1.5, 1.5, size=(batch, cfg.motor_dim)),
        "actions": actions,
        "log_prob_old": rng.normal(0.0, 1.0, size=batch),
        "advantages": rng.standard_normal(batch),
        "returns": rng.standard_normal(batch),
    }


def _total_loss(policy: Policy, data: dict, clip_eps: float, value_coef: float):
    mean, value = policy.forward(data["tokens"], data["pixels"], data["motor"])
    lp_new = gaussian_log_prob(mean, data["actions"], policy.cfg.sigma)
    _, policy_loss, value_loss = ppo_loss_terms(
        lp_new, value, data["log_prob_old"], data["advantages"], data["returns"], clip_eps)
    return ad.add(policy_loss, ad.mul(value_loss, value_coef))


def run_gradcheck(seed: int = 0, batch: int = 5, probes_per_tensor: int = 4,
                  h: float = 1e-5, floor: float = 1e-6,
                  clip_eps: float = 0.2, value_coef: float = 0.5):
    """Probe every parameter tensor; returns (all_passed, results list)."""
    cfg = desk_policy_config()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x99C])))
    policy = Policy(cfg, rng)
    data = synthetic_batch(cfg, batch, rng)

    policy.params.zero_grads()
    loss = _total_loss(policy, data, clip_eps, value_coef)
    loss.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in policy.params.items()}

    def loss_value() -> float:
        with ad.no_grad():
            return float(_total_loss(policy, data, clip_eps, value_coef).data)

    used_tokens = np.unique(data["tokens"])
    results = []
    for name, tensor in policy.params.items():
        flat = tensor.data.reshape(-1)
        if name == "lang.embed":
            # probe rows that actually appear, otherwise both sides are zero
            rows = rng.choice(used_tokens, size=probes_per_tensor)
            cols = rng.integers(0, tensor.data.shape[1], size=probes_per_tensor)
            idxs = rows * tensor.data.shape[1] + cols
        else:
            idxs = rng.integers(0, flat.size, size=min(probes_per_tensor, flat.size))
        max_err = 0.0
        for idx in idxs:
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = loss_value()
            flat[idx] = orig - h
            f_minus = loss_value()
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[name].reshape(-1)[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            max_err = max(max_err, err)
        results.append(GradCheckResult(name, max_err, len(idxs)))
    return all(r.passed for r in results), results


def format_report(results) -> str:
    lines = [f"{'tensor':<22} {'max rel err':>12}  status"]
    for r in results:
        lines.append(f"{r.tensor_name:<22} {r.max_rel_err:>12.3e}  "
                     f"{'ok' if r.passed else 'FAIL'}")
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results)} tensors checked, {n_fail} failures")
    return "\n".join(lines)
