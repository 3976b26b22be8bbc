"""Dual-stream diffusion compositor: denoiser, schedule, loss, and sampler.

One weight-shared U-shaped denoiser processes the source and target streams
as a folded batch; the streams interact only inside joint self-attention,
which attends over the concatenation of both streams' spatial tokens.
Cross-attention is per stream, against that stream's object tokens. The
source stream is conditioned clean (timestep 0); the loss and the sampler
touch only the target stream's prediction.

The schedule is a 1000-step variance-preserving cosine table with
v-parameterization; sampling runs ancestral DDPM over an evenly strided
subset (50 steps by default) with classifier-free guidance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .conditioning import (
    BOX_FEATURE_DIM,
    CH_LATENT,
    CH_MASK,
    CH_PLUCKER,
    CH_RENDER,
    N_CHANNELS,
    TOKEN_DIM,
    ClassVocabulary,
    StreamConditioning,
)
from .errors import CheckpointError, ShapeMismatch, StepOutOfRange, UntrainedModel
from .latentcodec import Codec

CHECKPOINT_VERSION = 1


class NoiseSchedule:
    """Discrete variance-preserving schedule: alpha[t]^2 + sigma[t]^2 = 1."""

    def __init__(self, total_steps: int = 1000, cosine_s: float = 0.008):
        self.total_steps = total_steps
        t = np.arange(total_steps + 1, dtype=np.float64)
        f = np.cos((t / total_steps + cosine_s) / (1 + cosine_s) * np.pi / 2) ** 2
        abar = f / f[0]
        betas = np.clip(1.0 - abar[1:] / abar[:-1], 0.0, 0.999)
        self.alpha_bar = np.cumprod(1.0 - betas)
        self.alpha = torch.from_numpy(np.sqrt(self.alpha_bar)).float()
        self.sigma = torch.from_numpy(np.sqrt(1.0 - self.alpha_bar)).float()

    def check_step(self, t: int) -> None:
        if not (0 <= t < self.total_steps):
            raise StepOutOfRange(f"step {t} outside [0, {self.total_steps})")

    def sample_timesteps(self, n_steps: int) -> list:
        """Evenly strided descending timestep subset for ancestral sampling."""
        if not (1 <= n_steps <= self.total_steps):
            raise StepOutOfRange(f"cannot sample with {n_steps} steps")
        stride = self.total_steps // n_steps
        return [self.total_steps - 1 - i * stride for i in range(n_steps)]


def _timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    ang = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=1)


class TokenEncoder(nn.Module):
    """Class table plus corner-encoding MLP; null slots use a learned token."""

    def __init__(self, vocab_size: int):
        super().__init__()
        self.class_table = nn.Embedding(vocab_size, TOKEN_DIM)
        self.box_mlp = nn.Sequential(
            nn.Linear(BOX_FEATURE_DIM, TOKEN_DIM),
            nn.SiLU(),
            nn.Linear(TOKEN_DIM, TOKEN_DIM),
        )
        self.null_token = nn.Parameter(torch.randn(TOKEN_DIM) * 0.02)

    def forward(self, class_ids, box_features, null_mask):
        tok = self.class_table(class_ids) + self.box_mlp(box_features)
        return torch.where(null_mask[..., None], self.null_token, tok)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, temb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(min(8, c_in), c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.temb = nn.Linear(temb_dim, c_out)
        self.norm2 = nn.GroupNorm(min(8, c_out), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(nn.functional.silu(self.norm1(x)))
        h = h + self.temb(nn.functional.silu(temb))[:, :, None, None]
        h = self.conv2(nn.functional.silu(self.norm2(h)))
        return h + self.skip(x)


class JointSelfAttention(nn.Module):
    """Self-attention over the concatenated spatial tokens of both streams."""

    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        self.norm = nn.GroupNorm(min(8, channels), channels)
        self.attn = nn.MultiheadAttention(channels, heads, batch_first=True)
        self.last_token_count = None  # shape probe for tests

    def forward(self, x):
        # x: (B*2, C, H, W) with streams adjacent in the batch dimension
        b2, c, h, w = x.shape
        seq = self.norm(x).reshape(b2 // 2, 2, c, h * w)
        seq = seq.permute(0, 1, 3, 2).reshape(b2 // 2, 2 * h * w, c)
        self.last_token_count = seq.shape[1]
        out, _ = self.attn(seq, seq, seq, need_weights=False)
        out = out.reshape(b2 // 2, 2, h * w, c).permute(0, 1, 3, 2).reshape(b2, c, h, w)
        return x + out


class CrossAttention(nn.Module):
    """Each stream's pixels attend to that stream's token sequence only."""

    def __init__(self, channels: int, heads: int = 4):
        super().__init__()
        self.norm = nn.GroupNorm(min(8, channels), channels)
        self.to_kv = nn.Linear(TOKEN_DIM, 2 * channels)
        self.attn = nn.MultiheadAttention(channels, heads, batch_first=True)

    def forward(self, x, tokens):
        # x: (B*2, C, H, W); tokens: (B*2, L, TOKEN_DIM)
        b2, c, h, w = x.shape
        q = self.norm(x).reshape(b2, c, h * w).permute(0, 2, 1)
        k, v = self.to_kv(tokens).chunk(2, dim=-1)
        out, _ = self.attn(q, k, v, need_weights=False)
        return x + out.permute(0, 2, 1).reshape(b2, c, h, w)


class _Level(nn.Module):
    def __init__(self, c_in, c_out, temb_dim, attend: bool):
        super().__init__()
        self.res = ResBlock(c_in, c_out, temb_dim)
        self.jsa = JointSelfAttention(c_out) if attend else None
        self.ca = CrossAttention(c_out) if attend else None

    def forward(self, x, temb, tokens):
        x = self.res(x, temb)
        if self.jsa is not None:
            x = self.jsa(x)
            x = self.ca(x, tokens)
        return x


class DualStreamDenoiser(nn.Module):
    """Weight-shared UNet over folded (batch x stream) inputs.

    Three resolutions; joint self-attention and cross-attention at the two
    lowest. The first convolution's weights for channels [4:15) start at
    zero, so at initialization the added conditioning channels are invisible
    to the output.
    """

    def __init__(self, vocab_size: int, width: int = 40, n_blocks: int = 2):
        super().__init__()
        w = width
        self.width = width
        self.n_blocks = n_blocks
        temb_dim = 4 * w
        self.temb_mlp = nn.Sequential(nn.Linear(w, temb_dim), nn.SiLU(), nn.Linear(temb_dim, temb_dim))
        self.tokens = TokenEncoder(vocab_size)
        self.conv_in = nn.Conv2d(N_CHANNELS, w, 3, padding=1)
        with torch.no_grad():
            self.conv_in.weight[:, CH_RENDER.start :] = 0.0

        widths = [w, 2 * w, 3 * w]
        attend = [False, True, True]
        self.down = nn.ModuleList()
        self.downsample = nn.ModuleList()
        c = w
        self._skip_widths = [w]
        for lvl, (cw, att) in enumerate(zip(widths, attend)):
            blocks = nn.ModuleList()
            for _ in range(n_blocks):
                blocks.append(_Level(c, cw, temb_dim, att))
                c = cw
                self._skip_widths.append(c)
            self.down.append(blocks)
            if lvl < len(widths) - 1:
                self.downsample.append(nn.Conv2d(c, c, 3, stride=2, padding=1))
                self._skip_widths.append(c)

        self.mid1 = ResBlock(c, c, temb_dim)
        self.mid_jsa = JointSelfAttention(c)
        self.mid_ca = CrossAttention(c)
        self.mid2 = ResBlock(c, c, temb_dim)

        self.up = nn.ModuleList()
        self.upsample = nn.ModuleList()
        skip_widths = list(self._skip_widths)
        for lvl in reversed(range(len(widths))):
            cw, att = widths[lvl], attend[lvl]
            blocks = nn.ModuleList()
            for _ in range(n_blocks + 1):
                blocks.append(_Level(c + skip_widths.pop(), cw, temb_dim, att))
                c = cw
            self.up.append(blocks)
            if lvl > 0:
                self.upsample.append(
                    nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(c, c, 3, padding=1))
                )

        self.out_norm = nn.GroupNorm(8, c)
        self.out_conv = nn.Conv2d(c, 4, 3, padding=1)

    def forward(self, channels: torch.Tensor, t: torch.Tensor, class_ids, box_features, null_mask):
        """channels: (B, 2, 15, h, w); t: (B, 2) long; token parts (B, 2, L, ...)."""
        B, S, C, H, W = channels.shape
        if S != 2 or C != N_CHANNELS:
            raise ShapeMismatch(f"expected (B, 2, {N_CHANNELS}, h, w), got {tuple(channels.shape)}")
        x = channels.reshape(B * 2, C, H, W)
        temb = self.temb_mlp(_timestep_embedding(t.reshape(-1), self.width))
        tok = self.tokens(
            class_ids.reshape(B * 2, -1),
            box_features.reshape(B * 2, class_ids.shape[2], BOX_FEATURE_DIM),
            null_mask.reshape(B * 2, -1),
        )

        h = self.conv_in(x)
        skips = [h]
        ds = iter(self.downsample)
        for lvl, blocks in enumerate(self.down):
            for block in blocks:
                h = block(h, temb, tok)
                skips.append(h)
            if lvl < len(self.down) - 1:
                h = next(ds)(h)
                skips.append(h)

        h = self.mid1(h, temb)
        h = self.mid_jsa(h)
        h = self.mid_ca(h, tok)
        h = self.mid2(h, temb)

        us = iter(self.upsample)
        for i, blocks in enumerate(self.up):
            for block in blocks:
                h = block(torch.cat([h, skips.pop()], dim=1), temb, tok)
            if i < len(self.up) - 1:
                h = next(us)(h)

        out = self.out_conv(nn.functional.silu(self.out_norm(h)))
        return out.reshape(B, 2, 4, H, W)


@dataclass
class ConditionedBatch:
    """Stacked stream pairs ready for the loss: target [0:4) holds the CLEAN
    target latent; drop_flags marks unconditional-regime samples."""

    channels: torch.Tensor  # (B, 2, 15, h, w)
    class_ids: torch.Tensor  # (B, 2, L)
    box_features: torch.Tensor  # (B, 2, L, BOX_FEATURE_DIM)
    null_mask: torch.Tensor  # (B, 2, L)
    drop_flags: torch.Tensor  # (B,) bool

    @staticmethod
    def from_pairs(pairs, drop_flags=None) -> "ConditionedBatch":
        """pairs: list of (src: StreamConditioning, tgt: StreamConditioning)."""
        chans, ids, feats, null = [], [], [], []
        for src, tgt in pairs:
            c, i, f, n = _stack_pair(src, tgt)
            chans.append(c[0])
            ids.append(i[0])
            feats.append(f[0])
            null.append(n[0])
        if drop_flags is None:
            drop_flags = torch.zeros(len(pairs), dtype=torch.bool)
        return ConditionedBatch(
            channels=torch.stack(chans),
            class_ids=torch.stack(ids),
            box_features=torch.stack(feats),
            null_mask=torch.stack(null),
            drop_flags=torch.as_tensor(drop_flags, dtype=torch.bool),
        )


@dataclass
class CompositorConfig:
    width: int = 40
    n_blocks: int = 2
    classes: list = field(default_factory=list)
    scene_diameter: float = 16.0
    max_objects: int = 8
    latent_res: int = 8
    total_steps: int = 1000
    uncond_zero_plucker: bool = False
    default_sample_steps: int = 50
    default_cfg_scale: float = 2.0


def _stack_pair(src: StreamConditioning, tgt: StreamConditioning):
    channels = torch.stack([src.channels, tgt.channels])[None]
    ids = torch.stack([src.tokens.class_ids, tgt.tokens.class_ids])[None]
    feats = torch.stack([src.tokens.box_features, tgt.tokens.box_features])[None]
    null = torch.stack([src.tokens.null_mask, tgt.tokens.null_mask])[None]
    return channels, ids, feats, null


class Compositor:
    """Denoiser + frozen codec + schedule, with save/load and sampling."""

    def __init__(self, config: CompositorConfig, codec: Codec, seed: int = 0):
        self.config = config
        self.codec = codec
        self.vocab = ClassVocabulary(config.classes)
        torch.manual_seed(seed)
        self.net = DualStreamDenoiser(self.vocab.size, config.width, config.n_blocks)
        self.schedule = NoiseSchedule(config.total_steps)
        self.trained_steps = 0
        self.seed = seed

    @property
    def untrained(self) -> bool:
        return self.trained_steps == 0

    # --- forward passes -----------------------------------------------------

    def denoise_batch(self, channels, t, class_ids, box_features, null_mask):
        return self.net(channels, t, class_ids, box_features, null_mask)

    def denoise(self, src: StreamConditioning, tgt: StreamConditioning, t_tgt: int):
        """Single-pair forward; returns the target stream's v-prediction (4, h, w).

        The source stream runs at timestep 0 (clean conditioning view); the
        source-stream output is discarded.
        """
        self.schedule.check_step(int(t_tgt))
        channels, ids, feats, null = _stack_pair(src, tgt)
        t = torch.tensor([[0, int(t_tgt)]], dtype=torch.long)
        with torch.no_grad():
            out = self.net(channels, t, ids, feats, null)
        return out[0, 1]

    def drop_conditioning(self, channels: torch.Tensor, null_mask: torch.Tensor):
        """Unconditional variant: zero render+mask channels (and Plücker when
        configured) and replace every token with the null token."""
        ch = channels.clone()
        ch[..., CH_RENDER, :, :] = 0.0
        ch[..., CH_MASK, :, :] = 0.0
        if self.config.uncond_zero_plucker:
            ch[..., CH_PLUCKER, :, :] = 0.0
        return ch, torch.ones_like(null_mask)

    def training_loss(self, conditioned, rng: torch.Generator) -> torch.Tensor:
        """v-prediction MSE on the target stream for one conditioned sample.

        ``conditioned`` carries the stacked pair with the clean target latent
        in the target stream's [0:4) channels; noise and the timestep are
        drawn from ``rng`` here.
        """
        channels, ids, feats, null = (
            conditioned.channels,
            conditioned.class_ids,
            conditioned.box_features,
            conditioned.null_mask,
        )
        B = channels.shape[0]
        t = torch.randint(0, self.schedule.total_steps, (B,), generator=rng)
        x0 = channels[:, 1, CH_LATENT]
        eps = torch.randn(x0.shape, generator=rng)
        a = self.schedule.alpha[t][:, None, None, None]
        s = self.schedule.sigma[t][:, None, None, None]
        x_t = a * x0 + s * eps
        v_target = a * eps - s * x0

        ch = channels.clone()
        ch[:, 1, CH_LATENT] = x_t
        if conditioned.drop_flags.any():
            drop = conditioned.drop_flags
            ch_u, null_u = self.drop_conditioning(ch[drop], null[drop])
            ch[drop] = ch_u
            null = null.clone()
            null[drop] = null_u
        tt = torch.stack([torch.zeros(B, dtype=torch.long), t], dim=1)
        pred = self.net(ch, tt, ids, feats, null)[:, 1]
        return torch.mean((pred - v_target) ** 2)

    # --- sampling -------------------------------------------------------------

    def sample(
        self,
        src: StreamConditioning,
        tgt: StreamConditioning,
        steps: int | None = None,
        cfg_scale: float | None = None,
        seed: int = 0,
        return_latent: bool = False,
    ):
        """Ancestral DDPM sampling of the target stream.

        ``tgt`` supplies the conditioning channels; its [0:4) block is
        ignored and replaced by the evolving noisy latent. Guidance mixes the
        conditional and dropped-conditioning predictions in v space:
        v = v_uncond + cfg * (v_cond - v_uncond); cfg == 1 short-circuits to
        the conditional branch exactly. Deterministic for a fixed seed.
        """
        if self.untrained:
            raise UntrainedModel("checkpoint is flagged untrained")
        steps = self.config.default_sample_steps if steps is None else steps
        cfg = self.config.default_cfg_scale if cfg_scale is None else float(cfg_scale)
        gen = torch.Generator().manual_seed(seed)

        channels, ids, feats, null = _stack_pair(src, tgt)
        res = channels.shape[-1]
        x = torch.randn((4, res, res), generator=gen)
        abar = self.schedule.alpha_bar
        stride = self.schedule.total_steps // steps
        timesteps = self.schedule.sample_timesteps(steps)

        self.net.eval()
        with torch.no_grad():
            for t in timesteps:
                ch = channels.clone()
                ch[0, 1, CH_LATENT] = x
                tt = torch.tensor([[0, t]], dtype=torch.long)
                if cfg == 1.0:
                    v = self.net(ch, tt, ids, feats, null)[0, 1]
                else:
                    ch_u, null_u = self.drop_conditioning(ch, null)
                    ch2 = torch.cat([ch, ch_u], dim=0)
                    null2 = torch.cat([null, null_u], dim=0)
                    ids2 = torch.cat([ids, ids], dim=0)
                    feats2 = torch.cat([feats, feats], dim=0)
                    out = self.net(ch2, tt.repeat(2, 1), ids2, feats2, null2)
                    v_c, v_u = out[0, 1], out[1, 1]
                    v = v_u + cfg * (v_c - v_u)

                a_t = float(np.sqrt(abar[t]))
                s_t = float(np.sqrt(1.0 - abar[t]))
                x0 = a_t * x - s_t * v
                prev = t - stride
                a_prev = float(abar[prev]) if prev >= 0 else 1.0
                beta_eff = 1.0 - float(abar[t]) / a_prev
                var = beta_eff * (1.0 - a_prev) / (1.0 - float(abar[t]))
                mean = (
                    np.sqrt(a_prev) * beta_eff / (1.0 - float(abar[t])) * x0
                    + np.sqrt(float(abar[t]) / a_prev) * (1.0 - a_prev) / (1.0 - float(abar[t])) * x
                )
                if prev >= 0:
                    x = mean + math.sqrt(var) * torch.randn(x.shape, generator=gen)
                else:
                    x = x0

        if return_latent:
            return x
        return self.codec.decode(x)

    # --- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        torch.save(
            {
                "format_version": CHECKPOINT_VERSION,
                "kind": "compositor",
                "config": self.config.__dict__,
                "state_dict": self.net.state_dict(),
                "trained_steps": self.trained_steps,
                "codec_hash": self.codec.state_hash(),
                "seed": self.seed,
            },
            path,
        )

    @staticmethod
    def load(path, codec: Codec) -> "Compositor":
        blob = torch.load(path, map_location="cpu", weights_only=True)
        if blob.get("kind") != "compositor":
            raise CheckpointError(f"{path} is not a compositor checkpoint")
        if blob.get("format_version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"checkpoint version {blob.get('format_version')} != {CHECKPOINT_VERSION}"
            )
        if blob["codec_hash"] != codec.state_hash():
            raise CheckpointError("checkpoint was trained against a different codec")
        comp = Compositor(CompositorConfig(**blob["config"]), codec, seed=blob.get("seed", 0))
        comp.net.load_state_dict(blob["state_dict"])
        comp.trained_steps = blob["trained_steps"]
        return comp
