"""Toy U-Net noise predictor with declared hook points.

Every attention site carries a decoupled cross-attention slot: the query
projection is shared between a learned null-context branch (standing in for
an empty prompt) and an optional image branch whose per-slot key/value
tensors are supplied by a semantic adapter. Decoder blocks accept optional
additive residual tensors from a spatial control network. With both hooks
empty the network is a pure function of (z_t, t), bit-identical to the bare
backbone.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from rewash.schedule import NoiseSchedule, forward_noise_batch
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


class HookShapeError(ValueError):
    """Mismatched shapes on an attention or residual hook."""


def decoupled_attention(
    queries: torch.Tensor,
    null_k: torch.Tensor,
    null_v: torch.Tensor,
    img_k: torch.Tensor | None = None,
    img_v: torch.Tensor | None = None,
) -> torch.Tensor:
    """Sum of two softmax attentions sharing the same queries.

    queries: (B, N, d); null_k/null_v: (M, d) or (B, M, d); the optional
    image branch has its own key/value tensors of shape (M', d) or
    (B, M', d). Softmax rows are scaled by 1/sqrt(d). A zero image value
    matrix contributes exactly zero, leaving the null branch untouched.
    """
    d = queries.shape[-1]
    scale = 1.0 / math.sqrt(d)

    def branch(k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
        if k.ndim == 2:
            k = k.expand(queries.shape[0], *k.shape)
            v = v.expand(queries.shape[0], *v.shape)
        if k.shape[-1] != d:
            raise HookShapeError(f"key dim {k.shape[-1]} != query dim {d}")
        attn = torch.softmax(queries @ k.transpose(-2, -1) * scale, dim=-1)
        return attn @ v

    out = branch(null_k, null_v)
    if img_k is not None:
        out = out + branch(img_k, img_v)
    return out


class CrossAttention(nn.Module):
    """Decoupled cross-attention over flattened spatial tokens."""

    def __init__(self, channels: int, ctx_dim: int):
        super().__init__()
        self.channels = channels
        self.norm = nn.GroupNorm(_groups(channels), channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(ctx_dim, channels, bias=False)
        self.to_v = nn.Linear(ctx_dim, channels, bias=False)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(
        self,
        x: torch.Tensor,
        ctx: torch.Tensor,
        image_kv: tuple[torch.Tensor, torch.Tensor] | None = None,
    ) -> torch.Tensor:
        b, c, h, w = x.shape
        tokens = self.norm(x).reshape(b, c, h * w).transpose(1, 2)
        q = self.to_q(tokens)
        null_k = self.to_k(ctx)
        null_v = self.to_v(ctx)
        img_k = img_v = None
        if image_kv is not None:
            img_k, img_v = image_kv
            if img_k.shape[-1] != c:
                raise HookShapeError(
                    f"image keys have dim {img_k.shape[-1]}, slot expects {c}"
                )
        z = decoupled_attention(q, null_k, null_v, img_k, img_v)
        z = z.transpose(1, 2).reshape(b, c, h, w)
        return x + self.proj(z)


class SelfAttention(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.GroupNorm(_groups(channels), channels)
        self.qkv = nn.Conv2d(channels, channels * 3, 1)
        self.proj = nn.Conv2d(channels, channels, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        q, k, v = self.qkv(self.norm(x)).reshape(b, 3, c, h * w).unbind(1)
        attn = torch.softmax(q.transpose(1, 2) @ k / math.sqrt(c), dim=-1)
        out = (attn @ v.transpose(1, 2)).transpose(1, 2).reshape(b, c, h, w)
        return x + self.proj(out)


class ResidualSlot(nn.Module):
    """Additive injection point on a decoder block output; a module so the
    composed value (block output plus control residual) is observable."""

    def forward(self, x: torch.Tensor, residual: torch.Tensor | None) -> torch.Tensor:
        if residual is None:
            return x
        if residual.shape != x.shape:
            raise HookShapeError(
                f"residual has shape {tuple(residual.shape)}, block output is {tuple(x.shape)}"
            )
        return x + residual


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(_groups(cin), cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, cout)
        self.norm2 = nn.GroupNorm(_groups(cout), cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x: torch.Tensor, t_emb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(t_emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


def _groups(channels: int) -> int:
    for g in (8, 4, 2, 1):
        if channels % g == 0:
            return g
    return 1


def sinusoidal_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """(B,) integer timesteps -> (B, dim) sin/cos features."""
    half = dim // 2
    freqs = torch.exp(
        torch.arange(half, dtype=torch.float64) * (-math.log(10000.0) / (half - 1))
    ).to(t.device)
    args = t.double()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=-1)


@dataclass
class DenoiserConfig:
    latent_channels: int = 4
    widths: tuple[int, ...] = (64, 128, 256)
    ctx_dim: int = 64
    time_dim: int = 128
    # self-attention at the two lowest resolutions; cross-attention at every
    # attention site, encoder and decoder alike
    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


class Denoiser(nn.Module):
    """Three-resolution U-Net predicting the forward-process noise.

    Attention sites (in forward order): encoder level 1, encoder level 2,
    mid, decoder level 2, decoder level 1. `attention_sites` exposes their
    names and channel widths so adapters can build matching projections.
    Decoder residual slots (`residual_slots`) follow decoder order: level 2,
    level 1, level 0 outputs.
    """

    def __init__(self, config: DenoiserConfig | None = None):
        super().__init__()
        self.config = config or DenoiserConfig()
        c = self.config
        w0, w1, w2 = c.widths
        td = c.time_dim

        self.time_mlp = nn.Sequential(
            nn.Linear(td, td), nn.SiLU(), nn.Linear(td, td)
        )
        self.null_context = nn.Parameter(torch.zeros(1, c.ctx_dim))
        nn.init.normal_(self.null_context, std=0.02)

        self.stem = nn.Conv2d(c.latent_channels, w0, 3, padding=1)
        self.enc0 = ResBlock(w0, w0, td)
        self.down0 = nn.Conv2d(w0, w1, 3, stride=2, padding=1)
        self.enc1 = ResBlock(w1, w1, td)
        self.enc1_self = SelfAttention(w1)
        self.enc1_cross = CrossAttention(w1, c.ctx_dim)
        self.down1 = nn.Conv2d(w1, w2, 3, stride=2, padding=1)
        self.enc2 = ResBlock(w2, w2, td)
        self.enc2_self = SelfAttention(w2)
        self.enc2_cross = CrossAttention(w2, c.ctx_dim)
        self.mid1 = ResBlock(w2, w2, td)
        self.mid_self = SelfAttention(w2)
        self.mid_cross = CrossAttention(w2, c.ctx_dim)
        self.mid2 = ResBlock(w2, w2, td)

        self.dec2 = ResBlock(w2 + w2, w2, td)
        self.dec2_self = SelfAttention(w2)
        self.dec2_cross = CrossAttention(w2, c.ctx_dim)
        self.slot_dec2 = ResidualSlot()
        self.up2 = nn.Conv2d(w2, w1, 3, padding=1)
        self.dec1 = ResBlock(w1 + w1, w1, td)
        self.dec1_self = SelfAttention(w1)
        self.dec1_cross = CrossAttention(w1, c.ctx_dim)
        self.slot_dec1 = ResidualSlot()
        self.up1 = nn.Conv2d(w1, w0, 3, padding=1)
        self.dec0 = ResBlock(w0 + w0, w0, td)
        self.slot_dec0 = ResidualSlot()
        self.head = nn.Sequential(
            nn.GroupNorm(_groups(w0), w0),
            nn.SiLU(),
            nn.Conv2d(w0, c.latent_channels, 3, padding=1),
        )

    @property
    def attention_sites(self) -> list[tuple[str, int]]:
        w0, w1, w2 = self.config.widths
        return [
            ("enc1", w1),
            ("enc2", w2),
            ("mid", w2),
            ("dec2", w2),
            ("dec1", w1),
        ]

    @property
    def encoder_sites(self) -> list[tuple[str, int]]:
        """Attention sites present in the encoder/mid clone."""
        return self.attention_sites[:3]

    @property
    def residual_slots(self) -> list[tuple[str, int]]:
        w0, w1, w2 = self.config.widths
        return [("dec2", w2), ("dec1", w1), ("dec0", w0)]

    def time_embedding(self, t: torch.Tensor) -> torch.Tensor:
        emb = sinusoidal_embedding(t, self.config.time_dim)
        return self.time_mlp(emb.to(self.stem.weight.dtype))

    def encode_features(
        self,
        z_t: torch.Tensor,
        t_emb: torch.Tensor,
        ctx: torch.Tensor,
        image_kv: list | None,
    ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
        """Encoder plus mid; shared verbatim by the spatial-control clone."""
        kv = dict(image_kv or [])
        h0 = self.enc0(self.stem(z_t), t_emb)
        h1 = self.enc1(self.down0(h0), t_emb)
        h1 = self.enc1_cross(self.enc1_self(h1), ctx, kv.get("enc1"))
        h2 = self.enc2(self.down1(h1), t_emb)
        h2 = self.enc2_cross(self.enc2_self(h2), ctx, kv.get("enc2"))
        m = self.mid1(h2, t_emb)
        m = self.mid_cross(self.mid_self(m), ctx, kv.get("mid"))
        m = self.mid2(m, t_emb)
        return h0, h1, h2, m

    def forward(
        self,
        z_t: torch.Tensor,
        t: torch.Tensor,
        image_kv: list | None = None,
        residuals: list[torch.Tensor] | None = None,
        ctx: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Predict the noise in z_t (B, C, H, W) at integer timesteps t (B,).

        image_kv is an ordered list of (site_name, (K', V')) pairs from a
        semantic adapter; residuals is one additive tensor per decoder slot
        from a spatial control network. Both default to empty hooks.
        """
        if z_t.ndim != 4 or z_t.shape[1] != self.config.latent_channels:
            raise HookShapeError(
                f"expected (B,{self.config.latent_channels},H,W) latent, got {tuple(z_t.shape)}"
            )
        if residuals is not None and len(residuals) != len(self.residual_slots):
            raise HookShapeError(
                f"{len(residuals)} residuals for {len(self.residual_slots)} decoder slots"
            )
        t_emb = self.time_embedding(t)
        ctx = self.null_context if ctx is None else ctx
        kv = dict(image_kv or [])
        h0, h1, h2, m = self.encode_features(z_t, t_emb, ctx, image_kv)

        r = residuals or [None, None, None]
        u2 = self.dec2(torch.cat([m, h2], dim=1), t_emb)
        u2 = self.dec2_cross(self.dec2_self(u2), ctx, kv.get("dec2"))
        u2 = self.slot_dec2(u2, r[0])
        u1 = self.dec1(torch.cat([_up(self.up2, u2), h1], dim=1), t_emb)
        u1 = self.dec1_cross(self.dec1_self(u1), ctx, kv.get("dec1"))
        u1 = self.slot_dec1(u1, r[1])
        u0 = self.dec0(torch.cat([_up(self.up1, u1), h0], dim=1), t_emb)
        u0 = self.slot_dec0(u0, r[2])
        return self.head(u0)

    def to_config(self) -> dict:
        return self.config.to_dict()

    @property
    def fingerprint(self) -> str:
        return config_fingerprint(self.to_config())

    def save(self, path: str | Path, upstream: dict | None = None) -> None:
        save_checkpoint(path, "denoiser", self.to_config(), self.state_dict(), upstream)

    @classmethod
    def load(cls, path: str | Path) -> "Denoiser":
        payload = load_checkpoint(path, "denoiser")
        cfg = payload["config"]
        model = cls(DenoiserConfig(
            latent_channels=cfg["latent_channels"],
            widths=tuple(cfg["widths"]),
            ctx_dim=cfg["ctx_dim"],
            time_dim=cfg["time_dim"],
        ))
        model.load_state_dict(payload["state"])
        model.eval()
        return model


def _up(conv: nn.Conv2d, x: torch.Tensor) -> torch.Tensor:
    return conv(F.interpolate(x, scale_factor=2, mode="nearest"))


def predict_noise(
    denoiser: Denoiser,
    z_t: torch.Tensor,
    t: int,
    image_kv: list | None = None,
    residuals: list[torch.Tensor] | None = None,
) -> torch.Tensor:
    """Single-latent convenience wrapper around Denoiser.forward."""
    with torch.no_grad():
        out = denoiser(
            z_t[None],
            torch.tensor([t], dtype=torch.long),
            image_kv=image_kv,
            residuals=None if residuals is None else [r[None] for r in residuals],
        )
    return out[0]


def train_backbone(
    latents: torch.Tensor,
    val_latents: torch.Tensor,
    schedule: NoiseSchedule,
    cfg: TrainConfig,
    model_config: DenoiserConfig | None = None,
) -> tuple[Denoiser, dict]:
    """Fit the unconditional noise predictor on pre-encoded latents."""
    if len(latents) == 0:
        raise TrainingError("empty latent corpus")
    torch.manual_seed(cfg.seed)
    model = Denoiser(model_config)
    gen = torch_generator(cfg.seed + 1)
    rng = numpy_rng(cfg.seed)

    def eval_loss(data: torch.Tensor) -> float:
        model.eval()
        losses = []
        with torch.no_grad():
            for i in range(0, len(data), 64):
                z0 = data[i : i + 64]
                t = torch.randint(1, schedule.T + 1, (len(z0),), generator=gen)
                eps = torch.randn(z0.shape, generator=gen)
                z_t = forward_noise_batch(schedule, z0, t, eps)
                losses.append(F.mse_loss(model(z_t, t), eps).item())
        return float(np.mean(losses))

    history = {"val_loss": [eval_loss(val_latents if len(val_latents) else latents)],
               "train_loss": []}
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    model.train()
    for step in range(cfg.steps):
        idx = rng.integers(0, len(latents), size=min(cfg.batch_size, len(latents)))
        z0 = latents[idx]
        t = torch.randint(1, schedule.T + 1, (len(z0),), generator=gen)
        eps = torch.randn(z0.shape, generator=gen)
        z_t = forward_noise_batch(schedule, z0, t, eps)
        loss = F.mse_loss(model(z_t, t), eps)
        check_finite(loss, "backbone", step)
        opt.zero_grad()
        loss.backward()
        if cfg.grad_clip:
            nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip)
        opt.step()
        history["train_loss"].append(loss.item())
    history["val_loss"].append(eval_loss(val_latents if len(val_latents) else latents))
    model.eval()
    return model, history
