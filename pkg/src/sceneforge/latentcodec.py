"""Toy image codec: 4-channel latents at 8x spatial downsampling.

A small deterministic convolutional autoencoder stands in for a pretrained
VAE so the compositor's 15-channel input layout works at desk scale. After
training, a scale factor is calibrated so latents have roughly unit standard
deviation on the training set; the factor travels with the checkpoint and is
applied inside encode/decode.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import BadShape, CheckpointError

DOWNSAMPLE = 8
LATENT_CHANNELS = 4
CHECKPOINT_VERSION = 1


def _norm(ch):
    return nn.GroupNorm(min(8, ch), ch)


class _CodecNet(nn.Module):
    # full-resolution convolutions dominate single-core cost, so the widths
    # taper hard toward 64x64 and capacity concentrates at 8x8 and 16x16
    def __init__(self, width=32):
        super().__init__()
        w = width
        self.encoder = nn.Sequential(
            nn.Conv2d(3, w, 3, stride=2, padding=1),
            _norm(w),
            nn.SiLU(),
            nn.Conv2d(w, 2 * w, 3, stride=2, padding=1),
            _norm(2 * w),
            nn.SiLU(),
            nn.Conv2d(2 * w, 4 * w, 3, stride=2, padding=1),
            _norm(4 * w),
            nn.SiLU(),
            nn.Conv2d(4 * w, 4 * w, 3, padding=1),
            _norm(4 * w),
            nn.SiLU(),
            nn.Conv2d(4 * w, LATENT_CHANNELS, 1),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(LATENT_CHANNELS, 4 * w, 3, padding=1),
            _norm(4 * w),
            nn.SiLU(),
            nn.Conv2d(4 * w, 4 * w, 3, padding=1),
            _norm(4 * w),
            nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(4 * w, 2 * w, 3, padding=1),
            _norm(2 * w),
            nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(2 * w, w, 3, padding=1),
            _norm(w),
            nn.SiLU(),
            nn.Upsample(scale_factor=2, mode="nearest"),
            nn.Conv2d(w, 3, 3, padding=1),
        )


@dataclass(frozen=True)
class LatentImage:
    data: torch.Tensor  # (4, h/8, w/8) float32
    scale: float  # calibration factor already applied to data

    @property
    def resolution(self):
        return self.data.shape[1] * DOWNSAMPLE, self.data.shape[2] * DOWNSAMPLE


class Codec:
    """Frozen-weight encode/decode plus the training entry point."""

    def __init__(self, width: int = 32, latent_scale: float = 1.0, trained_steps: int = 0, seed: int = 0):
        torch.manual_seed(seed)
        self.net = _CodecNet(width)
        self.width = width
        self.latent_scale = float(latent_scale)
        self.trained_steps = int(trained_steps)
        self.seed = int(seed)
        self.net.eval()

    @property
    def untrained(self) -> bool:
        return self.trained_steps == 0

    def _check_image(self, image: np.ndarray | torch.Tensor) -> torch.Tensor:
        x = torch.as_tensor(np.asarray(image), dtype=torch.float32)
        if x.ndim != 3 or x.shape[2] != 3:
            raise BadShape(f"expected (H, W, 3) image, got {tuple(x.shape)}")
        h, w = x.shape[:2]
        if h % DOWNSAMPLE or w % DOWNSAMPLE:
            raise BadShape(f"image dims {h}x{w} not divisible by {DOWNSAMPLE}")
        return x.permute(2, 0, 1)

    @torch.no_grad()
    def encode(self, image) -> LatentImage:
        x = self._check_image(image)
        z = self.net.encoder(x[None])[0] * self.latent_scale
        return LatentImage(data=z, scale=self.latent_scale)

    @torch.no_grad()
    def decode(self, latent) -> np.ndarray:
        z = latent.data if isinstance(latent, LatentImage) else torch.as_tensor(latent)
        if z.ndim != 3 or z.shape[0] != LATENT_CHANNELS:
            raise BadShape(f"expected ({LATENT_CHANNELS}, h, w) latent, got {tuple(z.shape)}")
        x = self.net.decoder(z[None] / self.latent_scale)[0]
        return x.clamp(0, 1).permute(1, 2, 0).numpy()

    def decode_batch(self, z: torch.Tensor) -> torch.Tensor:
        """(B, 4, h, w) scaled latents -> (B, 3, H, W), differentiable."""
        return self.net.decoder(z / self.latent_scale)

    def encode_batch(self, x: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) images -> (B, 4, h, w) scaled latents, differentiable."""
        return self.net.encoder(x) * self.latent_scale

    def state_hash(self) -> str:
        h = hashlib.sha256()
        for key, value in sorted(self.net.state_dict().items()):
            h.update(key.encode())
            h.update(value.numpy().tobytes())
        h.update(np.float64(self.latent_scale).tobytes())
        return h.hexdigest()

    def save(self, path) -> None:
        torch.save(
            {
                "format_version": CHECKPOINT_VERSION,
                "kind": "codec",
                "config": {"width": self.width, "seed": self.seed},
                "state_dict": self.net.state_dict(),
                "latent_scale": self.latent_scale,
                "trained_steps": self.trained_steps,
            },
            path,
        )

    @staticmethod
    def load(path) -> "Codec":
        blob = torch.load(path, map_location="cpu", weights_only=True)
        if blob.get("kind") != "codec":
            raise CheckpointError(f"{path} is not a codec checkpoint")
        if blob.get("format_version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"codec checkpoint version {blob.get('format_version')} != {CHECKPOINT_VERSION}"
            )
        codec = Codec(
            width=blob["config"]["width"],
            latent_scale=blob["latent_scale"],
            trained_steps=blob["trained_steps"],
            seed=blob["config"].get("seed", 0),
        )
        codec.net.load_state_dict(blob["state_dict"])
        codec.net.eval()
        return codec


def _frames_tensor(videos) -> torch.Tensor:
    frames = [v.frame(i) for v in videos for i in range(v.n_frames)]
    return torch.from_numpy(np.stack(frames)).permute(0, 3, 1, 2).contiguous()


def train_codec(
    videos,
    steps: int,
    batch_size: int = 16,
    lr: float = 2e-3,
    width: int = 32,
    seed: int = 0,
    log_every: int = 200,
    log=None,
) -> Codec:
    """Train the autoencoder on all frames of the given videos.

    Deterministic for a fixed seed. steps == 0 returns a freshly initialized
    codec flagged untrained.
    """
    codec = Codec(width=width, seed=seed)
    if steps == 0:
        return codec

    data = _frames_tensor(videos)
    gen = torch.Generator().manual_seed(seed)
    torch.manual_seed(seed + 1)
    net = codec.net
    net.train()
    opt = torch.optim.AdamW(net.parameters(), lr=lr, weight_decay=1e-5)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=steps)
    for step in range(steps):
        idx = torch.randint(0, len(data), (batch_size,), generator=gen)
        x = data[idx]
        z = net.encoder(x)
        y = net.decoder(z)
        loss = torch.mean((y - x) ** 2)
        opt.zero_grad()
        loss.backward()
        opt.step()
        sched.step()
        if log and (step % log_every == 0 or step == steps - 1):
            log({"step": step, "loss": float(loss.detach())})
    net.eval()

    with torch.no_grad():
        sample = data[:: max(1, len(data) // 64)]
        std = float(net.encoder(sample).std())
    codec.latent_scale = 1.0 / std if std > 0 else 1.0
    codec.trained_steps = steps
    return codec


def reconstruction_psnr(codec: Codec, videos) -> float:
    """Mean reconstruction PSNR over all frames of the given videos."""
    vals = []
    for v in videos:
        for i in range(v.n_frames):
            img = v.frame(i)
            rec = codec.decode(codec.encode(img))
            mse = float(np.mean((rec - img) ** 2))
            vals.append(99.0 if mse < 1e-10 else -10.0 * np.log10(mse))
    return float(np.mean(vals))
