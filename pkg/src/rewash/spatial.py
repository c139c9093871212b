"""Spatial control network: a trainable clone of the backbone encoder
conditioned on the edge map, emitting zero-initialized additive residuals
for the decoder blocks."""

from __future__ import annotations

import copy
import math
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from rewash.denoiser import Denoiser, sinusoidal_embedding
from rewash.edges import canny, edge_to_rgb
from rewash.imutil import stack_images
from rewash.schedule import NoiseSchedule, forward_noise_batch
from rewash.semantic import FeatureEncoder, ImageKV, SemanticAdapter
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


def _edge_encoder(width: int, downsample: int) -> nn.Sequential:
    """Fresh 4-layer conv stack taking the 3-channel edge map to latent
    resolution; stride placement follows the codec downsample factor."""
    n_strided = int(math.log2(downsample)) if downsample > 1 else 0
    if n_strided > 3:
        raise ValueError(f"downsample {downsample} needs more than 3 strided layers")
    layers: list[nn.Module] = []
    channels = [16, 32, width, width]
    cin = 3
    for i, cout in enumerate(channels):
        stride = 2 if i < n_strided else 1
        layers += [nn.Conv2d(cin, cout, 3, stride=stride, padding=1)]
        if i < len(channels) - 1:
            layers += [nn.SiLU()]
        cin = cout
    return nn.Sequential(*layers)


class SpatialControlNet(nn.Module):
    """Encoder/mid clone of a trained backbone plus edge conditioning.

    At initialization every residual is exactly zero (zero output convs), so
    plugging a fresh net into the pipeline reproduces the semantic-only
    pipeline bit for bit.
    """

    def __init__(self, backbone: Denoiser, adapter: SemanticAdapter, downsample: int):
        super().__init__()
        self.backbone_config = backbone.to_config()
        self.downsample = downsample
        w0, w1, w2 = backbone.config.widths

        # trainable copies of the backbone encoder path and time embedding
        clone_names = [
            "time_mlp", "stem", "enc0", "down0",
            "enc1", "enc1_self", "enc1_cross", "down1",
            "enc2", "enc2_self", "enc2_cross",
            "mid1", "mid_self", "mid_cross", "mid2",
        ]
        for name in clone_names:
            self.add_module(name, copy.deepcopy(getattr(backbone, name)))
        self.null_context = nn.Parameter(backbone.null_context.detach().clone())

        # the clone consumes the same semantic tokens through its own copies
        # of the adapter's encoder-site projections
        self.image_kv = nn.ModuleDict()
        for name, _ in backbone.encoder_sites:
            self.image_kv[name] = copy.deepcopy(adapter.image_kv[name])

        self.edge_encoder = _edge_encoder(w0, downsample)
        self.zero_out = nn.ModuleList(
            [nn.Conv2d(ch, ch, 1) for _, ch in backbone.residual_slots]
        )
        for conv in self.zero_out:
            nn.init.zeros_(conv.weight)
            nn.init.zeros_(conv.bias)

        self.time_dim = backbone.config.time_dim

    def forward(
        self,
        edge_rgb: torch.Tensor,
        z_t: torch.Tensor,
        t: torch.Tensor,
        tokens: torch.Tensor | None,
    ) -> list[torch.Tensor]:
        """Residual tensors for the decoder slots, deepest slot first.

        edge_rgb: (B, 3, H, W) binary edge map replicated to 3 channels,
        at image resolution; z_t and t as in the backbone.
        """
        if edge_rgb.shape[-2:] != (z_t.shape[-2] * self.downsample, z_t.shape[-1] * self.downsample):
            raise ValueError(
                f"edge map {tuple(edge_rgb.shape[-2:])} does not cover latent "
                f"{tuple(z_t.shape[-2:])} at downsample {self.downsample}"
            )
        t_emb = self.time_mlp(
            sinusoidal_embedding(t, self.time_dim).to(z_t.dtype)
        )
        kv = {}
        if tokens is not None:
            kv = {name: self.image_kv[name](tokens) for name in self.image_kv}
        hint = self.edge_encoder(edge_rgb)
        h0 = self.enc0(self.stem(z_t) + hint, t_emb)
        h1 = self.enc1(self.down0(h0), t_emb)
        h1 = self.enc1_cross(self.enc1_self(h1), self.null_context, kv.get("enc1"))
        h2 = self.enc2(self.down1(h1), t_emb)
        h2 = self.enc2_cross(self.enc2_self(h2), self.null_context, kv.get("enc2"))
        m = self.mid1(h2, t_emb)
        m = self.mid_cross(self.mid_self(m), self.null_context, kv.get("mid"))
        m = self.mid2(m, t_emb)
        return [self.zero_out[0](m), self.zero_out[1](h1), self.zero_out[2](h0)]

    def to_config(self) -> dict:
        return {"backbone": self.backbone_config, "downsample": self.downsample}

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.to_config())

    def save(self, path: str | Path, upstream: dict | None = None) -> None:
        save_checkpoint(path, "spatial_control", self.to_config(), self.state_dict(), upstream)

    @classmethod
    def load(cls, path: str | Path, backbone: Denoiser, adapter: SemanticAdapter) -> "SpatialControlNet":
        payload = load_checkpoint(path, "spatial_control")
        net = cls(backbone, adapter, payload["config"]["downsample"])
        net.load_state_dict(payload["state"])
        net.eval()
        return net


def spatial_residuals(
    net: SpatialControlNet,
    edge: np.ndarray,
    z_t: torch.Tensor,
    t: int,
    tokens: torch.Tensor | None,
) -> list[torch.Tensor]:
    """Single-latent wrapper: HxW binary edge map to per-slot residuals."""
    edge_rgb = torch.from_numpy(edge_to_rgb(edge).transpose(2, 0, 1))[None]
    with torch.no_grad():
        res = net(
            edge_rgb,
            z_t[None],
            torch.tensor([t], dtype=torch.long),
            None if tokens is None else tokens[None] if tokens.ndim == 2 else tokens,
        )
    return [r[0] for r in res]


def precompute_edges(images: np.ndarray) -> torch.Tensor:
    """Canny edge maps for a corpus, replicated to 3 channels, as a batch."""
    maps = [edge_to_rgb(canny(img)) for img in images]
    return stack_images(maps)


def train_spatial_net(
    train_images: np.ndarray,
    val_images: np.ndarray,
    denoiser: Denoiser,
    adapter: SemanticAdapter,
    codec,
    encoder: FeatureEncoder,
    schedule: NoiseSchedule,
    cfg: TrainConfig,
    train_edges: torch.Tensor | None = None,
    val_edges: torch.Tensor | None = None,
) -> tuple[SpatialControlNet, dict]:
    """Train the control net against the frozen backbone and adapter.

    Edge maps are derived from the clean images unless precomputed pairs are
    supplied. Frozen-group checksums (backbone, adapter, feature encoder)
    are verified after training.
    """
    if len(train_images) == 0:
        raise TrainingError("empty training corpus")
    torch.manual_seed(cfg.seed)
    denoiser.eval()
    adapter.eval()
    for p in denoiser.parameters():
        p.requires_grad_(False)
    for p in adapter.parameters():
        p.requires_grad_(False)
    net = SpatialControlNet(denoiser, adapter, codec.downsample)
    frozen_before = {
        "backbone": param_checksum(denoiser),
        "adapter": param_checksum(adapter),
        "feature_encoder": encoder.checksum(),
    }

    train_t = stack_images(train_images)
    val_t = stack_images(val_images if len(val_images) else train_images[:1])
    if train_edges is None:
        train_edges = precompute_edges(train_images)
    if val_edges is None:
        val_edges = precompute_edges(val_images if len(val_images) else train_images[:1])
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
        """(with spatial control, semantic-only) val losses on one draw."""
        net.eval()
        with_ctrl, semantic_only = [], []
        with torch.no_grad():
            for i in range(0, len(val_z), 64):
                z0 = val_z[i : i + 64]
                t = torch.randint(1, schedule.T + 1, (len(z0),), generator=gen)
                eps = torch.randn(z0.shape, generator=gen)
                z_t = forward_noise_batch(schedule, z0, t, eps)
                tokens = adapter.tokens_from_features(val_feats[i : i + 64])
                kv = adapter.slot_kv(tokens)
                res = net(val_edges[i : i + 64], z_t, t, tokens)
                with_ctrl.append(
                    F.mse_loss(denoiser(z_t, t, image_kv=kv, residuals=res), eps).item()
                )
                semantic_only.append(F.mse_loss(denoiser(z_t, t, image_kv=kv), eps).item())
        return float(np.mean(with_ctrl)), float(np.mean(semantic_only))

    s0, sem0 = eval_losses()
    history = {"val_spatial": [s0], "val_semantic_only": [sem0], "train_loss": []}
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    net.train()
    for step in range(cfg.steps):
        idx = rng.integers(0, len(train_z), size=min(cfg.batch_size, len(train_z)))
        z0 = train_z[idx]
        t = torch.randint(1, schedule.T + 1, (len(z0),), generator=gen)
        eps = torch.randn(z0.shape, generator=gen)
        z_t = forward_noise_batch(schedule, z0, t, eps)
        tokens = adapter.tokens_from_features(train_feats[idx])
        kv = adapter.slot_kv(tokens)
        res = net(train_edges[idx], z_t, t, tokens)
        loss = F.mse_loss(denoiser(z_t, t, image_kv=kv, residuals=res), eps)
        check_finite(loss, "spatial_control", step)
        opt.zero_grad()
        loss.backward()
        if cfg.grad_clip:
            nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip)
        opt.step()
        history["train_loss"].append(loss.item())
    s1, sem1 = eval_losses()
    history["val_spatial"].append(s1)
    history["val_semantic_only"].append(sem1)

    assert_unchanged("backbone", frozen_before["backbone"], param_checksum(denoiser))
    assert_unchanged("adapter", frozen_before["adapter"], param_checksum(adapter))
    assert_unchanged("feature_encoder", frozen_before["feature_encoder"], encoder.checksum())
    net.eval()
    return net, history
