"""Semantic control adapter: frozen image-feature encoder, trainable
projection to context tokens, and per-slot image key/value projections for
the decoupled cross-attention sites of the backbone."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from rewash.codec import ConvAutoencoder
from rewash.denoiser import Denoiser
from rewash.imutil import stack_images, to_tensor
from rewash.schedule import NoiseSchedule, forward_noise_batch
from rewash.training import (
    TrainConfig,
    TrainingError,
    assert_unchanged,
    check_finite,
    config_fingerprint,
    load_checkpoint,
    numpy_rng,
    param_checksum,
    save_checkpoint,
    torch_generator,
)


class FeatureEncoder:
    """Frozen feature extractor over the trained autoencoder trunk.

    Produces one pooled vector per image: the global mean of the trunk map
    concatenated with a 2x2 grid of patch means. Reused by the semantic
    adapter and by the feature-distance quality metric.
    """

    def __init__(self, autoencoder: ConvAutoencoder):
        self.model = autoencoder
        self.model.eval()
        for p in self.model.parameters():
            p.requires_grad_(False)
        self.feature_dim = autoencoder.trunk_width * 5

    def features(self, batch: torch.Tensor) -> torch.Tensor:
        """(B, 3, H, W) images -> (B, feature_dim) pooled trunk features."""
        with torch.no_grad():
            fmap = self.model.features(batch)
        global_pool = fmap.mean(dim=(2, 3))
        patches = F.adaptive_avg_pool2d(fmap, 2).flatten(1)
        return torch.cat([global_pool, patches], dim=1)

    def encode_arrays(self, images) -> np.ndarray:
        """List of HxWxC arrays -> (N, feature_dim) numpy features."""
        out = []
        for i in range(0, len(images), 64):
            batch = stack_images(images[i : i + 64])
            out.append(self.features(batch).numpy())
        return np.concatenate(out, axis=0)

    def checksum(self) -> str:
        return param_checksum(self.model)


class ImageKV(nn.Module):
    """Per-slot key/value projections for the image attention branch."""

    def __init__(self, ctx_dim: int, channels: int):
        super().__init__()
        self.to_k = nn.Linear(ctx_dim, channels, bias=False)
        self.to_v = nn.Linear(ctx_dim, channels, bias=False)

    def forward(self, tokens: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        return self.to_k(tokens), self.to_v(tokens)


class SemanticAdapter(nn.Module):
    """Projection network plus image cross-attention weights.

    The feature encoder stays frozen and is referenced, not owned; only the
    projection MLP and the per-slot ImageKV modules train.
    """

    def __init__(
        self,
        feature_dim: int,
        sites: list[tuple[str, int]],
        n_tokens: int = 4,
        ctx_dim: int = 64,
        hidden: int = 256,
    ):
        super().__init__()
        self.n_tokens = n_tokens
        self.ctx_dim = ctx_dim
        self.feature_dim = feature_dim
        self.site_names = [name for name, _ in sites]
        self.site_channels = {name: ch for name, ch in sites}
        self.proj = nn.Sequential(
            nn.Linear(feature_dim, hidden),
            nn.SiLU(),
            nn.Linear(hidden, n_tokens * ctx_dim),
        )
        self.token_norm = nn.LayerNorm(ctx_dim)
        self.image_kv = nn.ModuleDict(
            {name: ImageKV(ctx_dim, ch) for name, ch in sites}
        )

    def tokens_from_features(self, feats: torch.Tensor) -> torch.Tensor:
        raw = self.proj(feats).reshape(-1, self.n_tokens, self.ctx_dim)
        return self.token_norm(raw)

    def slot_kv(self, tokens: torch.Tensor) -> list:
        """Ordered (site, (K', V')) pairs consumable by the denoiser."""
        return [(name, self.image_kv[name](tokens)) for name in self.site_names]

    def to_config(self) -> dict:
        return {
            "n_tokens": self.n_tokens,
            "ctx_dim": self.ctx_dim,
            "feature_dim": self.feature_dim,
            "sites": [[n, self.site_channels[n]] for n in self.site_names],
        }

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.to_config())

    def save(self, path: str | Path, upstream: dict | None = None) -> None:
        save_checkpoint(path, "semantic_adapter", self.to_config(), self.state_dict(), upstream)

    @classmethod
    def load(cls, path: str | Path) -> "SemanticAdapter":
        payload = load_checkpoint(path, "semantic_adapter")
        cfg = payload["config"]
        adapter = cls(
            feature_dim=cfg["feature_dim"],
            sites=[(n, c) for n, c in cfg["sites"]],
            n_tokens=cfg["n_tokens"],
            ctx_dim=cfg["ctx_dim"],
        )
        adapter.load_state_dict(payload["state"])
        adapter.eval()
        return adapter


def embed_image(
    adapter: SemanticAdapter, encoder: FeatureEncoder, img: np.ndarray
) -> torch.Tensor:
    """Deterministic (n_tokens, ctx_dim) embedding of one image."""
    t = to_tensor(img)
    if t.shape[1] % 4 or t.shape[2] % 4:
        raise ValueError(f"image resolution {tuple(t.shape[1:])} not supported")
    feats = encoder.features(t[None])
    with torch.no_grad():
        return adapter.tokens_from_features(feats)[0]


def train_semantic_adapter(
    train_images: np.ndarray,
    val_images: np.ndarray,
    denoiser: Denoiser,
    codec,
    encoder: FeatureEncoder,
    schedule: NoiseSchedule,
    cfg: TrainConfig,
    n_tokens: int = 4,
) -> tuple[SemanticAdapter, dict]:
    """Train projection and image-attention weights against the frozen stack.

    The loss is the conditional noise-prediction error with the clean image
    itself as the condition. Backbone and feature-encoder checksums are
    verified unchanged; any drift aborts.
    """
    if len(train_images) == 0:
        raise TrainingError("empty training corpus")
    torch.manual_seed(cfg.seed)
    adapter = SemanticAdapter(
        feature_dim=encoder.feature_dim,
        sites=denoiser.attention_sites,
        n_tokens=n_tokens,
        ctx_dim=denoiser.config.ctx_dim,
    )
    denoiser.eval()
    for p in denoiser.parameters():
        p.requires_grad_(False)
    frozen_before = {
        "backbone": param_checksum(denoiser),
        "feature_encoder": encoder.checksum(),
    }

    train_t = stack_images(train_images)
    val_t = stack_images(val_images if len(val_images) else train_images[:1])
    with torch.no_grad():
        train_z = torch.cat(
            [codec.encode_batch(train_t[i : i + 64]) for i in range(0, len(train_t), 64)]
        )
        val_z = torch.cat(
            [codec.encode_batch(val_t[i : i + 64]) for i in range(0, len(val_t), 64)]
        )
    train_feats = encoder.features(train_t)
    val_feats = encoder.features(val_t)

    gen = torch_generator(cfg.seed + 1)
    rng = numpy_rng(cfg.seed)

    def eval_losses() -> tuple[float, float]:
        """(conditional, unconditional) noise-prediction loss on val."""
        adapter.eval()
        cond, uncond = [], []
        with torch.no_grad():
            for i in range(0, len(val_z), 64):
                z0 = val_z[i : i + 64]
                t = torch.randint(1, schedule.T + 1, (len(z0),), generator=gen)
                eps = torch.randn(z0.shape, generator=gen)
                z_t = forward_noise_batch(schedule, z0, t, eps)
                tokens = adapter.tokens_from_features(val_feats[i : i + 64])
                cond.append(F.mse_loss(denoiser(z_t, t, image_kv=adapter.slot_kv(tokens)), eps).item())
                uncond.append(F.mse_loss(denoiser(z_t, t), eps).item())
        return float(np.mean(cond)), float(np.mean(uncond))

    c0, u0 = eval_losses()
    history = {"val_cond": [c0], "val_uncond": [u0], "train_loss": []}
    opt = torch.optim.Adam(adapter.parameters(), lr=cfg.lr)
    adapter.train()
    for step in range(cfg.steps):
        idx = rng.integers(0, len(train_z), size=min(cfg.batch_size, len(train_z)))
        z0 = train_z[idx]
        t = torch.randint(1, schedule.T + 1, (len(z0),), generator=gen)
        eps = torch.randn(z0.shape, generator=gen)
        z_t = forward_noise_batch(schedule, z0, t, eps)
        tokens = adapter.tokens_from_features(train_feats[idx])
        loss = F.mse_loss(denoiser(z_t, t, image_kv=adapter.slot_kv(tokens)), eps)
        check_finite(loss, "semantic_adapter", step)
        opt.zero_grad()
        loss.backward()
        if cfg.grad_clip:
            nn.utils.clip_grad_norm_(adapter.parameters(), cfg.grad_clip)
        opt.step()
        history["train_loss"].append(loss.item())
    c1, u1 = eval_losses()
    history["val_cond"].append(c1)
    history["val_uncond"].append(u1)

    assert_unchanged("backbone", frozen_before["backbone"], param_checksum(denoiser))
    assert_unchanged("feature_encoder", frozen_before["feature_encoder"], encoder.checksum())
    adapter.eval()
    return adapter, history
