"""Learned high-perturbation watermark: an encoder CNN writes a
payload-conditioned residual under a hard L-infinity budget, and a decoder
CNN recovers the bits. Training runs the residual image through a
differentiable corruption layer (additive noise, blur, crop-resize) so
recovery survives the distortions a regeneration pass inflicts."""

from __future__ import annotations

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
from rewash.watermarks.base import DetectionOutcome, WatermarkError

STEGA_PAYLOAD_BITS = 16
DEFAULT_BUDGET = 0.10


class StegaEncoder(nn.Module):
    def __init__(self, n_bits: int = STEGA_PAYLOAD_BITS, budget: float = DEFAULT_BUDGET):
        super().__init__()
        self.n_bits = n_bits
        self.budget = budget
        self.payload_map = nn.Linear(n_bits, 8 * 8 * 4)
        self.net = nn.Sequential(
            nn.Conv2d(3 + 4, 32, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(32, 32, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(32, 3, 3, padding=1),
        )

    def forward(self, images: torch.Tensor, payload: torch.Tensor) -> torch.Tensor:
        b, _, h, w = images.shape
        pmap = self.payload_map(payload * 2.0 - 1.0).reshape(b, 4, 8, 8)
        pmap = F.interpolate(pmap, size=(h, w), mode="nearest")
        residual = self.net(torch.cat([images, pmap], dim=1))
        return (images + self.budget * torch.tanh(residual)).clamp(0.0, 1.0)


class StegaDecoder(nn.Module):
    """Keeps a coarse spatial grid before the head so spatially coded bits
    survive pooling."""

    def __init__(self, n_bits: int = STEGA_PAYLOAD_BITS):
        super().__init__()
        self.n_bits = n_bits
        self.net = nn.Sequential(
            nn.Conv2d(3, 32, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(64, 64, 3, stride=2, padding=1),
            nn.SiLU(),
        )
        self.head = nn.Sequential(
            nn.Linear(64 * 16, 128),
            nn.SiLU(),
            nn.Linear(128, n_bits),
        )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        feats = F.adaptive_avg_pool2d(self.net(images), 4).flatten(1)
        return self.head(feats)


_BLUR_SIGMAS = (0.0, 0.6, 1.0, 1.5)
_BLUR_KERNELS: dict[float, torch.Tensor] = {}


def _blur_kernel(sigma: float) -> torch.Tensor:
    if sigma not in _BLUR_KERNELS:
        radius = 2
        ax = torch.arange(-radius, radius + 1, dtype=torch.float32)
        k1 = torch.exp(-0.5 * (ax / sigma) ** 2)
        k1 = k1 / k1.sum()
        k2 = torch.outer(k1, k1)
        _BLUR_KERNELS[sigma] = k2.expand(3, 1, 5, 5).contiguous()
    return _BLUR_KERNELS[sigma]


def corrupt(
    images: torch.Tensor,
    gen: torch.Generator,
    noise_max: float = 0.06,
    min_scale: float = 0.8,
    strength: float = 1.0,
) -> torch.Tensor:
    """Differentiable noise + blur + crop-resize with per-call parameters.

    strength in [0, 1] scales every corruption, used as a curriculum ramp
    during training.
    """
    b, c, h, w = images.shape
    out = images
    if float(torch.rand(1, generator=gen)) < strength:
        sigma = _BLUR_SIGMAS[int(torch.randint(len(_BLUR_SIGMAS), (1,), generator=gen))]
        if sigma > 0:
            out = F.conv2d(
                F.pad(out, (2, 2, 2, 2), mode="replicate"), _blur_kernel(sigma), groups=3
            )
    lo = 1.0 - strength * (1.0 - min_scale)
    scale = lo + (1.0 - lo) * torch.rand(1, generator=gen).item()
    ch, cw = max(8, int(round(h * scale))), max(8, int(round(w * scale)))
    if ch < h or cw < w:
        top = int(torch.randint(h - ch + 1, (1,), generator=gen))
        left = int(torch.randint(w - cw + 1, (1,), generator=gen))
        out = F.interpolate(
            out[:, :, top : top + ch, left : left + cw],
            size=(h, w), mode="bilinear", align_corners=False,
        )
    level = strength * noise_max * torch.rand(1, generator=gen).item()
    out = out + level * torch.randn(out.shape, generator=gen)
    return out.clamp(0.0, 1.0)


class StegaWatermarker:
    """Trained encoder/decoder pair carrying one fixed payload."""

    name = "stega_toy"
    n_bits = STEGA_PAYLOAD_BITS

    def __init__(self, encoder: StegaEncoder, decoder: StegaDecoder, payload: np.ndarray):
        if len(payload) != encoder.n_bits:
            raise WatermarkError(f"payload must be {encoder.n_bits} bits")
        self.encoder = encoder.eval()
        self.decoder = decoder.eval()
        for p in list(encoder.parameters()) + list(decoder.parameters()):
            p.requires_grad_(False)
        self.payload = np.asarray(payload, dtype=np.int64)
        self._payload_t = torch.from_numpy(self.payload).float()[None]

    def embed(self, img: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            out = self.encoder(to_tensor(img)[None], self._payload_t)
        return to_image(out[0])

    def decode_bits(self, img: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            logits = self.decoder(to_tensor(img)[None])[0]
        return (logits > 0).long().numpy()

    def detect(self, img: np.ndarray) -> DetectionOutcome:
        bits = self.decode_bits(img)
        return DetectionOutcome(score=float(np.mean(bits == self.payload)), bits=bits)

    def to_config(self) -> dict:
        from rewash.watermarks.base import payload_to_hex

        return {
            "scheme": self.name,
            "n_bits": self.n_bits,
            "budget": self.encoder.budget,
            "payload": payload_to_hex(self.payload),
        }

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.to_config())

    def save(self, path: str | Path) -> None:
        save_checkpoint(
            path,
            "stega",
            self.to_config(),
            {
                "encoder": self.encoder.state_dict(),
                "decoder": self.decoder.state_dict(),
                "payload": torch.from_numpy(self.payload),
            },
        )

    @classmethod
    def load(cls, path: str | Path) -> "StegaWatermarker":
        payload = load_checkpoint(path, "stega")
        cfg = payload["config"]
        enc = StegaEncoder(cfg["n_bits"], cfg["budget"])
        dec = StegaDecoder(cfg["n_bits"])
        enc.load_state_dict(payload["state"]["encoder"])
        dec.load_state_dict(payload["state"]["decoder"])
        return cls(enc, dec, payload["state"]["payload"].numpy())


def train_stega_toy(
    train_images: np.ndarray,
    cfg: TrainConfig,
    payload: np.ndarray | None = None,
    budget: float = DEFAULT_BUDGET,
    corruption_strength: float = 1.0,
) -> tuple[StegaWatermarker, dict]:
    """Joint encoder/decoder training through the corruption layer.

    Random payloads are drawn per step so the decoder reads bits rather than
    memorizing one pattern; the returned watermarker carries the given (or a
    seed-derived) fixed payload. Aborts on non-finite loss.
    """
    if len(train_images) == 0:
        raise TrainingError("empty training corpus")
    torch.manual_seed(cfg.seed)
    encoder = StegaEncoder(budget=budget)
    decoder = StegaDecoder()
    images_t = stack_images(train_images)
    opt = torch.optim.Adam(
        list(encoder.parameters()) + list(decoder.parameters()), lr=cfg.lr
    )
    gen = torch_generator(cfg.seed + 1)
    rng = numpy_rng(cfg.seed)
    history = {"train_bce": [], "train_bitacc": []}
    # corruption ramps in once the clean task is learned, and a quarter of
    # batches stay clean so the clean round trip never degrades
    ramp_steps = max(1, int(0.6 * cfg.steps))
    for step in range(cfg.steps):
        idx = rng.integers(0, len(images_t), size=min(cfg.batch_size, len(images_t)))
        batch = images_t[idx]
        bits = torch.randint(0, 2, (len(batch), STEGA_PAYLOAD_BITS), generator=gen).float()
        marked = encoder(batch, bits)
        strength = corruption_strength * min(1.0, step / ramp_steps)
        if float(torch.rand(1, generator=gen)) < 0.25:
            strength = 0.0
        corrupted = corrupt(marked, gen, strength=strength)
        logits = decoder(corrupted)
        loss = F.binary_cross_entropy_with_logits(logits, bits)
        check_finite(loss, "stega", step)
        opt.zero_grad()
        loss.backward()
        opt.step()
        history["train_bce"].append(loss.item())
        history["train_bitacc"].append(((logits > 0).float() == bits).float().mean().item())
    if payload is None:
        payload = numpy_rng(cfg.seed + 2).integers(0, 2, STEGA_PAYLOAD_BITS)
    return StegaWatermarker(encoder, decoder, payload), history
