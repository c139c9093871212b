"""Latent codecs: the encoder/decoder pair between pixel and latent space.

Two variants behind one interface: an exact identity codec (channel
reordering only, the default for unit tests) and a trained convolutional
autoencoder (plain MSE, no KL term, deterministic bottleneck). The trained
variant standardizes latents to roughly unit scale per channel so the
diffusion stack sees well-conditioned inputs, and exposes its encoder trunk
as the frozen feature extractor reused by the semantic adapter and the
feature-distance metric.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from rewash.imutil import stack_images, to_image, to_tensor
from rewash.training import (
    TrainConfig,
    TrainingError,
    check_finite,
    config_fingerprint,
    load_checkpoint,
    numpy_rng,
    save_checkpoint,
    torch_generator,
)


class CodecError(ValueError):
    """Shape or configuration error in encode/decode."""


class IdentityCodec:
    """Pixel-space codec: the latent is the image itself, channels first."""

    downsample = 1
    latent_channels = 3

    def latent_shape(self, height: int, width: int) -> tuple[int, int, int]:
        return (3, height, width)

    def encode(self, img: np.ndarray) -> torch.Tensor:
        t = to_tensor(img)
        if t.shape[0] != 3:
            raise CodecError(f"expected 3-channel image, got shape {tuple(t.shape)}")
        return t

    def decode(self, z: torch.Tensor) -> np.ndarray:
        if z.ndim != 3 or z.shape[0] != 3:
            raise CodecError(f"expected 3xHxW latent, got shape {tuple(z.shape)}")
        return to_image(z)

    def encode_batch(self, batch: torch.Tensor) -> torch.Tensor:
        return batch

    def decode_batch(self, latents: torch.Tensor) -> torch.Tensor:
        return latents.clamp(0.0, 1.0)

    @property
    def fingerprint(self) -> str:
        return config_fingerprint({"codec": "identity"})

    def to_config(self) -> dict:
        return {"variant": "identity"}


class ConvAutoencoder(nn.Module):
    """Small strided conv autoencoder with a deterministic bottleneck.

    The trunk feature map (just before the latent projection) doubles as the
    frozen image-feature extractor for conditioning and quality metrics.
    """

    def __init__(self, downsample: int = 4, latent_channels: int = 4, base_width: int = 32):
        super().__init__()
        if downsample not in (1, 2, 4, 8):
            raise CodecError(f"downsample must be a power of two <= 8, got {downsample}")
        self.downsample = downsample
        self.latent_channels = latent_channels
        self.base_width = base_width
        n_down = int(math.log2(downsample)) if downsample > 1 else 0

        enc: list[nn.Module] = [nn.Conv2d(3, base_width, 3, padding=1), nn.SiLU()]
        width = base_width
        for _ in range(n_down):
            enc += [nn.Conv2d(width, width * 2, 3, stride=2, padding=1), nn.SiLU()]
            width *= 2
        enc += [nn.Conv2d(width, width, 3, padding=1), nn.SiLU()]
        self.encoder_trunk = nn.Sequential(*enc)
        self.trunk_width = width
        self.to_latent = nn.Conv2d(width, latent_channels, 1)

        dec: list[nn.Module] = [nn.Conv2d(latent_channels, width, 1), nn.SiLU(),
                                nn.Conv2d(width, width, 3, padding=1), nn.SiLU()]
        for _ in range(n_down):
            dec += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(width, width // 2, 3, padding=1),
                nn.SiLU(),
            ]
            width //= 2
        dec += [nn.Conv2d(width, 3, 3, padding=1)]
        self.decoder = nn.Sequential(*dec)

        # latent standardization fitted after training; identity until then
        self.register_buffer("latent_shift", torch.zeros(latent_channels, 1, 1))
        self.register_buffer("latent_scale", torch.ones(latent_channels, 1, 1))

    def features(self, batch: torch.Tensor) -> torch.Tensor:
        return self.encoder_trunk(batch)

    def encode_raw(self, batch: torch.Tensor) -> torch.Tensor:
        return self.to_latent(self.encoder_trunk(batch))

    def encode_batch(self, batch: torch.Tensor) -> torch.Tensor:
        return (self.encode_raw(batch) - self.latent_shift) / self.latent_scale

    def decode_batch(self, latents: torch.Tensor) -> torch.Tensor:
        raw = latents * self.latent_scale + self.latent_shift
        return self.decoder(raw).clamp(0.0, 1.0)

    def forward(self, batch: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encode_raw(batch))


@dataclass
class TrainedCodec:
    """Inference wrapper pairing the autoencoder with its fingerprint."""

    model: ConvAutoencoder
    resolution: int

    def __post_init__(self):
        self.model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)

    @property
    def downsample(self) -> int:
        return self.model.downsample

    @property
    def latent_channels(self) -> int:
        return self.model.latent_channels

    def latent_shape(self, height: int, width: int) -> tuple[int, int, int]:
        d = self.model.downsample
        if height % d or width % d:
            raise CodecError(f"image size {height}x{width} not divisible by {d}")
        return (self.model.latent_channels, height // d, width // d)

    def encode(self, img: np.ndarray) -> torch.Tensor:
        t = to_tensor(img)
        self.latent_shape(t.shape[1], t.shape[2])
        with torch.no_grad():
            return self.model.encode_batch(t[None])[0]

    def decode(self, z: torch.Tensor) -> np.ndarray:
        if z.ndim != 3 or z.shape[0] != self.model.latent_channels:
            raise CodecError(f"expected {self.model.latent_channels}xHxW latent, got {tuple(z.shape)}")
        with torch.no_grad():
            return to_image(self.model.decode_batch(z[None])[0])

    def encode_batch(self, batch: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.model.encode_batch(batch)

    def decode_batch(self, latents: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.model.decode_batch(latents)

    def to_config(self) -> dict:
        return {
            "variant": "autoencoder",
            "downsample": self.model.downsample,
            "latent_channels": self.model.latent_channels,
            "base_width": self.model.base_width,
            "resolution": self.resolution,
        }

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.to_config())

    def save(self, path: str | Path) -> None:
        save_checkpoint(path, "codec", self.to_config(), self.model.state_dict())

    @classmethod
    def load(cls, path: str | Path) -> "TrainedCodec":
        payload = load_checkpoint(path, "codec")
        cfg = payload["config"]
        model = ConvAutoencoder(
            downsample=cfg["downsample"],
            latent_channels=cfg["latent_channels"],
            base_width=cfg["base_width"],
        )
        model.load_state_dict(payload["state"])
        return cls(model=model, resolution=cfg["resolution"])


def train_autoencoder(
    train_images: np.ndarray,
    val_images: np.ndarray,
    cfg: TrainConfig,
    downsample: int = 4,
    latent_channels: int = 4,
    base_width: int = 32,
) -> tuple[TrainedCodec, dict]:
    """Fit the autoencoder by MSE reconstruction; returns codec and history.

    Zero steps returns the seeded initialization unchanged (standardization
    buffers included). Aborts on non-finite loss or an empty corpus.
    """
    if len(train_images) == 0:
        raise TrainingError("empty training corpus")
    torch.manual_seed(cfg.seed)
    model = ConvAutoencoder(downsample, latent_channels, base_width)
    resolution = int(train_images[0].shape[0])

    train_t = stack_images(train_images)
    val_t = stack_images(val_images if len(val_images) else train_images[:1])

    def val_loss() -> float:
        model.eval()
        with torch.no_grad():
            losses = [
                F.mse_loss(model(val_t[i : i + 64]), val_t[i : i + 64]).item()
                for i in range(0, len(val_t), 64)
            ]
        return float(np.mean(losses))

    history = {"val_mse": [val_loss()], "train_mse": []}
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    rng = numpy_rng(cfg.seed)
    model.train()
    for step in range(cfg.steps):
        idx = rng.integers(0, len(train_t), size=min(cfg.batch_size, len(train_t)))
        batch = train_t[idx]
        recon = model(batch)
        loss = F.mse_loss(recon, batch)
        check_finite(loss, "codec", step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history["train_mse"].append(loss.item())
        if (step + 1) % cfg.val_every == 0:
            history["val_mse"].append(val_loss())
            model.train()
    history["val_mse"].append(val_loss())

    # fit per-channel latent standardization on the train split; zero-step
    # runs return the bare initialization, identity buffers included
    model.eval()
    if cfg.steps > 0:
        with torch.no_grad():
            raws = torch.cat(
                [model.encode_raw(train_t[i : i + 64]) for i in range(0, len(train_t), 64)]
            )
            mean = raws.mean(dim=(0, 2, 3), keepdim=True)[0]
            std = raws.std(dim=(0, 2, 3), keepdim=True)[0].clamp_min(1e-4)
        model.latent_shift.copy_(mean)
        model.latent_scale.copy_(std)
    return TrainedCodec(model=model, resolution=resolution), history
