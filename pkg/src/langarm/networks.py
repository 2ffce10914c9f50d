"""Policy networks: multimodal encoders, fusion, actor and critic heads.

The instruction encoder is a small transformer (3 layers, 2 heads, width 50)
over learned token embeddings plus sinusoidal position codes, mean-pooled over
non-pad positions. Stacked camera images go through a 2-conv / 2-linear
encoder to 256 features; stacked proprioception and tactile bits through one
linear+tanh layer to 128. The three embeddings are concatenated (language,
vision, motor) and feed two separate 500/256/128 tanh trunks: the actor ends
in a tanh scaled to the joint limits, the critic in an unsquashed scalar.

Actions are sampled from a diagonal Gaussian with fixed standard deviation
around the actor output; log-probabilities are evaluated at the raw sample
(before the environment clamps it to the joint limits).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .instructions import MAX_LEN, PAD, VOCAB
from .params import (ParamStore, init_conv, init_embedding, init_layer_norm,
                     init_linear)


@dataclass(frozen=True)
class LangConfig:
    layers: int = 3
    heads: int = 2
    hidden: int = 50
    ff_hidden: int = 100
    max_len: int = MAX_LEN
    vocab: int = len(VOCAB)

    def __post_init__(self):
        if self.hidden % self.heads:
            raise ValueError("hidden size must divide evenly across heads")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads


@dataclass(frozen=True)
class PolicyConfig:
    dof: int
    n_channels: int
    img_h: int
    img_w: int
    motor_dim: int
    action_low: tuple[float, ...]
    action_high: tuple[float, ...]
    sigma: float = 0.36
    lang: LangConfig = field(default_factory=LangConfig)
    conv_channels: tuple[int, int] = (16, 32)
    vision_hidden: int = 256
    vision_out: int = 256
    motor_out: int = 128
    trunk: tuple[int, int, int] = (500, 256, 128)

    def __post_init__(self):
        if self.img_h % 4 or self.img_w % 4:
            raise ValueError(
                f"image resolution {self.img_h}x{self.img_w} must be divisible by 4"
            )
        if len(self.action_low) != self.dof or len(self.action_high) != self.dof:
            raise ValueError("action bounds must match dof")

    @property
    def fused_dim(self) -> int:
        return self.lang.hidden + self.vision_out + self.motor_out


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Sinusoidal position codes, (length, dim)."""
    pos = np.arange(length)[:, None]
    i = np.arange(dim // 2)[None, :]
    angles = pos / np.power(10000.0, 2.0 * i / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


class Policy:
    """All networks over one ParamStore; forward passes are batched."""

    def __init__(self, cfg: PolicyConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.params = ParamStore()
        lc = cfg.lang
        self.pos_enc = positional_encoding(lc.max_len, lc.hidden)
        p, c = self.params, cfg
        init_embedding(p, rng, "lang.embed", lc.vocab, lc.hidden)
        for l in range(lc.layers):
            for proj in ("wq", "wk", "wv"):
                p.add(f"lang.l{l}.{proj}",
                      rng.uniform(-np.sqrt(6.0 / (2 * lc.hidden)),
                                  np.sqrt(6.0 / (2 * lc.hidden)),
                                  size=(lc.hidden, lc.hidden)))
            init_layer_norm(p, f"lang.l{l}.ln1", lc.hidden)
            init_linear(p, rng, f"lang.l{l}.ff1", lc.hidden, lc.ff_hidden)
            init_linear(p, rng, f"lang.l{l}.ff2", lc.ff_hidden, lc.hidden)
            init_layer_norm(p, f"lang.l{l}.ln2", lc.hidden)
        c1, c2 = c.conv_channels
        init_conv(p, rng, "vision.conv1", c.n_channels, c1)
        init_conv(p, rng, "vision.conv2", c1, c2)
        flat = c2 * (c.img_h // 4) * (c.img_w // 4)
        init_linear(p, rng, "vision.fc1", flat, c.vision_hidden)
        init_linear(p, rng, "vision.fc2", c.vision_hidden, c.vision_out)
        init_linear(p, rng, "motor.fc", c.motor_dim, c.motor_out)
        for head in ("actor", "critic"):
            widths = (c.fused_dim,) + c.trunk
            for i in range(len(c.trunk)):
                init_linear(p, rng, f"{head}.fc{i + 1}", widths[i], widths[i + 1])
        init_linear(p, rng, "actor.out", c.trunk[-1], c.dof)
        init_linear(p, rng, "critic.out", c.trunk[-1], 1)
        self._mid = 0.5 * (np.asarray(c.action_low) + np.asarray(c.action_high))
        self._half = 0.5 * (np.asarray(c.action_high) - np.asarray(c.action_low))

    # -- encoders -------------------------------------------------------------

    def lang_forward(self, tokens: np.ndarray) -> Tensor:
        """Instruction embedding: tokens (B, L) int -> (B, hidden)."""
        lc = self.cfg.lang
        p = self.params
        b, L = tokens.shape
        x = ad.add(ad.embedding(p["lang.embed"], tokens), Tensor(self.pos_enc[:L]))
        for l in range(lc.layers):
            x = self._attention_block(x, l, b, L)
        mask = (tokens != PAD).astype(np.float64)[:, :, None]
        return ad.masked_mean(x, mask, axis=1)

    def _attention_block(self, x: Tensor, l: int, b: int, L: int) -> Tensor:
        lc = self.cfg.lang
        p = self.params
        h, dk = lc.heads, lc.head_dim
        flat = ad.reshape(x, (b * L, lc.hidden))

        def split_heads(t):
            # (B*L, hidden) -> (B*heads, L, head_dim)
            t = ad.reshape(t, (b, L, h, dk))
            t = ad.transpose(t, (0, 2, 1, 3))
            return ad.reshape(t, (b * h, L, dk))

        q = split_heads(ad.matmul(flat, p[f"lang.l{l}.wq"]))
        k = split_heads(ad.matmul(flat, p[f"lang.l{l}.wk"]))
        v = split_heads(ad.matmul(flat, p[f"lang.l{l}.wv"]))
        scores = ad.mul(ad.bmm(q, ad.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(dk))
        attn = ad.softmax(scores, axis=-1)
        ctx = ad.bmm(attn, v)
        ctx = ad.reshape(ctx, (b, h, L, dk))
        ctx = ad.transpose(ctx, (0, 2, 1, 3))
        ctx = ad.reshape(ctx, (b, L, lc.hidden))
        x = ad.layer_norm(ad.add(x, ctx), p[f"lang.l{l}.ln1.gain"], p[f"lang.l{l}.ln1.bias"])
        flat = ad.reshape(x, (b * L, lc.hidden))
        ff = ad.tanh(ad.linear(flat, p[f"lang.l{l}.ff1.w"], p[f"lang.l{l}.ff1.b"]))
        ff = ad.linear(ff, p[f"lang.l{l}.ff2.w"], p[f"lang.l{l}.ff2.b"])
        ff = ad.reshape(ff, (b, L, lc.hidden))
        return ad.layer_norm(ad.add(x, ff), p[f"lang.l{l}.ln2.gain"], p[f"lang.l{l}.ln2.bias"])

    def vision_forward(self, pixels) -> Tensor:
        """Stacked frames (B, C, H, W) -> (B, vision_out)."""
        p = self.params
        c1, c2 = self.cfg.conv_channels
        x = pixels if isinstance(pixels, Tensor) else Tensor(pixels)
        x = ad.add(ad.conv2d(x, p["vision.conv1.w"]),
                   ad.reshape(p["vision.conv1.b"], (c1, 1, 1)))
        x = ad.maxpool2x2(ad.tanh(x))
        x = ad.add(ad.conv2d(x, p["vision.conv2.w"]),
                   ad.reshape(p["vision.conv2.b"], (c2, 1, 1)))
        x = ad.maxpool2x2(ad.tanh(x))
        b = x.shape[0]
        x = ad.reshape(x, (b, x.shape[1] * x.shape[2] * x.shape[3]))
        x = ad.tanh(ad.linear(x, p["vision.fc1.w"], p["vision.fc1.b"]))
        return ad.linear(x, p["vision.fc2.w"], p["vision.fc2.b"])

    def motor_forward(self, motor) -> Tensor:
        """Stacked proprioception+tactile (B, M) -> (B, motor_out)."""
        x = motor if isinstance(motor, Tensor) else Tensor(motor)
        return ad.tanh(ad.linear(x, self.params["motor.fc.w"], self.params["motor.fc.b"]))

    def fuse(self, tokens, pixels, motor) -> Tensor:
        g = self.lang_forward(tokens)
        v = self.vision_forward(pixels)
        m = self.motor_forward(motor)
        return ad.concat([g, v, m], axis=1)

    # -- heads ---------------------------------------------------------------

    def _trunk(self, fused: Tensor, head: str) -> Tensor:
        p = self.params
        x = fused
        for i in range(len(self.cfg.trunk)):
            x = ad.tanh(ad.linear(x, p[f"{head}.fc{i + 1}.w"], p[f"{head}.fc{i + 1}.b"]))
        return x

    def actor_mean(self, fused: Tensor) -> Tensor:
        x = self._trunk(fused, "actor")
        raw = ad.tanh(ad.linear(x, self.params["actor.out.w"], self.params["actor.out.b"]))
        return ad.add(ad.mul(raw, Tensor(self._half)), Tensor(self._mid))

    def critic_value(self, fused: Tensor) -> Tensor:
        x = self._trunk(fused, "critic")
        out = ad.linear(x, self.params["critic.out.w"], self.params["critic.out.b"])
        return ad.reshape(out, (out.shape[0],))

    def forward(self, tokens, pixels, motor) -> tuple[Tensor, Tensor]:
        """(action mean (B, dof), state value (B,)) for a feature batch."""
        fused = self.fuse(tokens, pixels, motor)
        return self.actor_mean(fused), self.critic_value(fused)

    def act_mean(self, tokens, pixels, motor) -> np.ndarray:
        """Actor-only forward without graph construction (for rollouts)."""
        with ad.no_grad():
            return self.actor_mean(self.fuse(tokens, pixels, motor)).data


# -- fixed-width Gaussian action distribution ----------------------------------


def sample_action(mean: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return mean + sigma * rng.standard_normal(mean.shape)


def gaussian_log_prob(mean: Tensor, actions: np.ndarray, sigma: float) -> Tensor:
    """Log density of a diagonal Gaussian at given actions; (B,) per row.

    Implemented with tensor ops so the same code path serves both the
    no-grad snapshot pass and the differentiated update pass.
    """
    dof = mean.shape[-1]
    diff = ad.sub(Tensor(actions), mean)
    quad = ad.tsum(ad.square(diff), axis=-1)
    const = dof * (-np.log(sigma) - 0.5 * np.log(2.0 * np.pi))
    return ad.add(ad.mul(quad, -0.5 / (sigma * sigma)), const)


def gaussian_entropy(dof: int, sigma: float) -> float:
    """Differential entropy; constant because sigma is fixed."""
    return dof * 0.5 * (1.0 + np.log(2.0 * np.pi * sigma * sigma))
