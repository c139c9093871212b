import numpy as np
import pytest
import torch

from rewash.codec import ConvAutoencoder, IdentityCodec
from rewash.data import _render_image
from rewash.denoiser import DenoiserConfig, train_backbone
from rewash.schedule import make_schedule
from rewash.semantic import FeatureEncoder, train_semantic_adapter
from rewash.training import TrainConfig

torch.set_num_threads(1)

TINY_RES = 16
TINY_CONFIG = DenoiserConfig(latent_channels=3, widths=(8, 8, 8), ctx_dim=8, time_dim=16)


def synthetic_images(n: int, res: int, seed: int = 0) -> np.ndarray:
    return np.stack([_render_image(np.random.default_rng([seed, i]), res) for i in range(n)])


@pytest.fixture(scope="session")
def tiny_stack():
    """A briefly trained identity-codec stack for module-level tests.

    Small enough to train in under a minute; not meant to produce good
    samples, only to give the adapters a meaningful frozen backbone.
    """
    images = synthetic_images(8, TINY_RES, seed=3)
    codec = IdentityCodec()
    schedule = make_schedule(100, 1e-3, 0.05)
    torch.manual_seed(0)
    feature_ae = ConvAutoencoder(downsample=4, latent_channels=4, base_width=8)
    encoder = FeatureEncoder(feature_ae)
    latents = torch.stack([codec.encode(im) for im in images])
    backbone, _ = train_backbone(
        latents, latents, schedule,
        TrainConfig(steps=300, batch_size=8, lr=2e-3, seed=0),
        model_config=TINY_CONFIG,
    )
    adapter, hist = train_semantic_adapter(
        images, images, backbone, codec, encoder, schedule,
        TrainConfig(steps=400, batch_size=8, lr=2e-3, seed=1),
    )
    return {
        "images": images,
        "codec": codec,
        "encoder": encoder,
        "schedule": schedule,
        "backbone": backbone,
        "adapter": adapter,
        "adapter_history": hist,
    }
