"""The four regeneration attacks over one pipeline stack.

regen / rinse run the uncontrolled noise-and-denoise loop; the controlled
attacks regenerate from clean noise (or a partially noised latent) while
steering the denoiser with semantic tokens and edge-map residuals extracted
from the watermarked input. All randomness comes from explicit per-image
seeds; a fixed seed gives a bit-identical attack output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from rewash.denoiser import Denoiser
from rewash.edges import canny, edge_to_rgb
from rewash.imutil import to_image
from rewash.schedule import NoiseSchedule, ScheduleError, strided_times
from rewash.semantic import FeatureEncoder, SemanticAdapter
from rewash.spatial import SpatialControlNet
from rewash.training import config_fingerprint, derive_seed, torch_generator


class MissingComponentError(RuntimeError):
    """A controlled attack was requested without its trained components."""


@dataclass
class ControlledPipeline:
    """Codec + schedule + denoiser stack with optional control components."""

    codec: object
    schedule: NoiseSchedule
    denoiser: Denoiser
    adapter: SemanticAdapter | None = None
    spatial: SpatialControlNet | None = None
    encoder: FeatureEncoder | None = None
    n_sample_steps: int = 50
    edge_sigma: float = 1.4
    edge_low: float = 0.1
    edge_high: float = 0.2

    def __post_init__(self):
        want = self.denoiser.config.latent_channels
        have = self.codec.latent_channels
        if want != have:
            raise MissingComponentError(
                f"codec produces {have}-channel latents, denoiser expects {want}"
            )
        if self.spatial is not None:
            if self.spatial.backbone_config != self.denoiser.to_config():
                raise MissingComponentError(
                    "spatial control net was built for a different backbone config"
                )
            if self.spatial.downsample != self.codec.downsample:
                raise MissingComponentError(
                    "spatial control net downsample does not match the codec"
                )

    @property
    def fingerprint(self) -> str:
        parts = {
            "codec": getattr(self.codec, "fingerprint", "?"),
            "schedule": self.schedule.to_config(),
            "denoiser": self.denoiser.to_config(),
            "adapter": None if self.adapter is None else self.adapter.to_config(),
            "spatial": None if self.spatial is None else self.spatial.to_config(),
            "n_sample_steps": self.n_sample_steps,
        }
        return config_fingerprint(parts)

    def require_controls(self) -> None:
        missing = [
            name
            for name, comp in (
                ("adapter", self.adapter),
                ("spatial", self.spatial),
                ("encoder", self.encoder),
            )
            if comp is None
        ]
        if missing:
            raise MissingComponentError(
                f"controlled attack needs trained components: missing {missing}"
            )


def _per_image_noise(pipeline: ControlledPipeline, shape, seeds: list[int]) -> torch.Tensor:
    draws = []
    for s in seeds:
        g = torch_generator(s)
        draws.append(torch.randn(shape, generator=g))
    return torch.stack(draws)


def _reverse_loop(
    pipeline: ControlledPipeline,
    z: torch.Tensor,
    t_start: int,
    image_kv: list | None = None,
    edge_rgb: torch.Tensor | None = None,
    tokens: torch.Tensor | None = None,
) -> torch.Tensor:
    """Strided deterministic reverse walk from t_start to 0."""
    s = pipeline.schedule
    times = strided_times(s, t_start, pipeline.n_sample_steps)
    denoiser = pipeline.denoiser
    ab = s.alpha_bars
    with torch.no_grad():
        for t, t_prev in zip(times[:-1], times[1:]):
            t_batch = torch.full((z.shape[0],), t, dtype=torch.long)
            residuals = None
            if edge_rgb is not None:
                residuals = pipeline.spatial(edge_rgb, z, t_batch, tokens)
            eps = denoiser(z, t_batch, image_kv=image_kv, residuals=residuals)
            if ab[t] > 0.0:
                c1 = torch.tensor(np.sqrt(1.0 - ab[t]), dtype=z.dtype)
                c2 = torch.tensor(1.0 / np.sqrt(ab[t]), dtype=z.dtype)
                z0_hat = (z - c1 * eps) * c2
            else:  # degenerate zero-signal step: prior-mean estimate
                z0_hat = torch.zeros_like(z)
            c3 = torch.tensor(np.sqrt(ab[t_prev]), dtype=z.dtype)
            c4 = torch.tensor(np.sqrt(1.0 - ab[t_prev]), dtype=z.dtype)
            z = c3 * z0_hat + c4 * eps
    return z


def _control_inputs(pipeline: ControlledPipeline, images: list[np.ndarray]):
    """Edge maps and semantic tokens for a batch of watermarked inputs."""
    from rewash.imutil import stack_images

    edges = [
        edge_to_rgb(canny(im, pipeline.edge_sigma, pipeline.edge_low, pipeline.edge_high))
        for im in images
    ]
    edge_rgb = stack_images(edges)
    feats = pipeline.encoder.features(stack_images(images))
    with torch.no_grad():
        tokens = pipeline.adapter.tokens_from_features(feats)
        image_kv = pipeline.adapter.slot_kv(tokens)
    return edge_rgb, tokens, image_kv


def regen_batch(
    images: list[np.ndarray], pipeline: ControlledPipeline, t_star: int, seeds: list[int]
) -> list[np.ndarray]:
    """Uncontrolled regeneration: encode, noise to t_star, denoise, decode."""
    if not 1 <= t_star <= pipeline.schedule.T:
        raise ScheduleError(f"t_star {t_star} outside [1, {pipeline.schedule.T}]")
    z0 = torch.stack([pipeline.codec.encode(im) for im in images])
    eps = _per_image_noise(pipeline, z0.shape[1:], seeds)
    ab = pipeline.schedule.alpha_bars[t_star]
    z = torch.tensor(np.sqrt(ab), dtype=z0.dtype) * z0 + torch.tensor(
        np.sqrt(1.0 - ab), dtype=z0.dtype
    ) * eps
    z = _reverse_loop(pipeline, z, t_star)
    out = pipeline.codec.decode_batch(z)
    return [to_image(out[i]) for i in range(len(images))]


def regen(
    x_w: np.ndarray, pipeline: ControlledPipeline, t_star: int = 70, seed: int = 0
) -> np.ndarray:
    return regen_batch([x_w], pipeline, t_star, [seed])[0]


def rinse_batch(
    images: list[np.ndarray],
    pipeline: ControlledPipeline,
    t_star: int,
    k: int,
    seeds: list[int],
) -> list[np.ndarray]:
    """k sequential regen passes; k=1 is exactly regen."""
    if k < 1:
        raise ScheduleError(f"rinse count k must be >= 1, got {k}")
    current = images
    for i in range(k):
        iter_seeds = seeds if i == 0 else [derive_seed(s, "rinse", i) for s in seeds]
        current = regen_batch(current, pipeline, t_star, iter_seeds)
    return current


def rinse(
    x_w: np.ndarray,
    pipeline: ControlledPipeline,
    t_star: int = 70,
    k: int = 2,
    seed: int = 0,
) -> np.ndarray:
    return rinse_batch([x_w], pipeline, t_star, k, [seed])[0]


def ctrl_regen_batch(
    images: list[np.ndarray], pipeline: ControlledPipeline, seeds: list[int]
) -> list[np.ndarray]:
    """Controlled regeneration from clean noise.

    The initial latent is drawn from the seed stream alone; the input enters
    only through its semantic tokens and edge-map residuals.
    """
    pipeline.require_controls()
    h, w = images[0].shape[:2]
    shape = pipeline.codec.latent_shape(h, w)
    z = _per_image_noise(pipeline, shape, seeds)
    edge_rgb, tokens, image_kv = _control_inputs(pipeline, images)
    z = _reverse_loop(pipeline, z, pipeline.schedule.T, image_kv, edge_rgb, tokens)
    out = pipeline.codec.decode_batch(z)
    return [to_image(out[i]) for i in range(len(images))]


def ctrl_regen(x_w: np.ndarray, pipeline: ControlledPipeline, seed: int = 0) -> np.ndarray:
    return ctrl_regen_batch([x_w], pipeline, [seed])[0]


def ctrl_regen_plus_batch(
    images: list[np.ndarray],
    pipeline: ControlledPipeline,
    t_star: int,
    seeds: list[int],
) -> list[np.ndarray]:
    """Controlled regeneration from a partially noised latent of the input."""
    pipeline.require_controls()
    if not 1 <= t_star <= pipeline.schedule.T:
        raise ScheduleError(f"t_star {t_star} outside [1, {pipeline.schedule.T}]")
    z0 = torch.stack([pipeline.codec.encode(im) for im in images])
    eps = _per_image_noise(pipeline, z0.shape[1:], seeds)
    ab = pipeline.schedule.alpha_bars[t_star]
    z = torch.tensor(np.sqrt(ab), dtype=z0.dtype) * z0 + torch.tensor(
        np.sqrt(1.0 - ab), dtype=z0.dtype
    ) * eps
    edge_rgb, tokens, image_kv = _control_inputs(pipeline, images)
    z = _reverse_loop(pipeline, z, t_star, image_kv, edge_rgb, tokens)
    out = pipeline.codec.decode_batch(z)
    return [to_image(out[i]) for i in range(len(images))]


def ctrl_regen_plus(
    x_w: np.ndarray, pipeline: ControlledPipeline, t_star: int, seed: int = 0
) -> np.ndarray:
    return ctrl_regen_plus_batch([x_w], pipeline, t_star, [seed])[0]


def ddim_invert(
    pipeline: ControlledPipeline, z0: torch.Tensor, n_steps: int | None = None
) -> torch.Tensor:
    """Deterministic inversion from clean latents to estimated initial noise.

    Walks the reverse-sampler time grid upward, re-noising with the model's
    own predictions; unconditional, mirroring unconditional generation.
    """
    s = pipeline.schedule
    times = strided_times(s, s.T, n_steps or pipeline.n_sample_steps)[::-1]
    ab = s.alpha_bars
    z = z0
    denoiser = pipeline.denoiser
    with torch.no_grad():
        for t_cur, t_next in zip(times[:-1], times[1:]):
            t_eval = max(t_cur, 1)
            t_batch = torch.full((z.shape[0],), t_eval, dtype=torch.long)
            eps = denoiser(z, t_batch)
            c1 = torch.tensor(np.sqrt(1.0 - ab[t_cur]), dtype=z.dtype)
            c2 = torch.tensor(1.0 / np.sqrt(ab[t_cur]), dtype=z.dtype)
            z0_hat = (z - c1 * eps) * c2
            c3 = torch.tensor(np.sqrt(ab[t_next]), dtype=z.dtype)
            c4 = torch.tensor(np.sqrt(1.0 - ab[t_next]), dtype=z.dtype)
            z = c3 * z0_hat + c4 * eps
    return z


def sample_unconditional(
    pipeline: ControlledPipeline, latent_shape: tuple[int, int, int], seeds: list[int]
) -> torch.Tensor:
    """Generate latents from pure per-seed noise with the bare backbone."""
    z = _per_image_noise(pipeline, latent_shape, seeds)
    return _reverse_loop(pipeline, z, pipeline.schedule.T)
