"""Stage training with explicit checkpoint reuse.

Stage order: codec -> backbone -> semantic -> spatial -> stega. Each
checkpoint stores the weight-level fingerprints of the components it was
trained against; a stage is reused only when those match, and reuse is
recorded in the train manifest rather than happening silently.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import torch

from rewash.codec import ConvAutoencoder, IdentityCodec, TrainedCodec, train_autoencoder
from rewash.data import ImageDataset, ingest, make_synthetic_corpus
from rewash.denoiser import Denoiser, DenoiserConfig, train_backbone
from rewash.harness.config import ExperimentConfig
from rewash.schedule import NoiseSchedule, make_schedule
from rewash.semantic import FeatureEncoder, SemanticAdapter, train_semantic_adapter
from rewash.spatial import SpatialControlNet, train_spatial_net
from rewash.training import (
    FingerprintError,
    load_checkpoint,
    param_checksum,
)
from rewash.watermarks.stega import StegaWatermarker, train_stega_toy

STAGE_ORDER = ("codec", "backbone", "semantic", "spatial", "stega")


def build_schedule(cfg: ExperimentConfig) -> NoiseSchedule:
    return make_schedule(
        cfg.schedule_T, cfg.schedule_beta_min, cfg.schedule_beta_max, cfg.schedule_kind
    )


def get_dataset(cfg: ExperimentConfig) -> ImageDataset:
    corpus = Path(cfg.corpus_dir)
    has_images = corpus.is_dir() and any(p.suffix == ".png" for p in corpus.iterdir())
    if not has_images and cfg.synth_corpus_images > 0:
        make_synthetic_corpus(corpus, cfg.synth_corpus_images, cfg.resolution, cfg.seed)
    return ingest(corpus, cfg.resolution, seed=cfg.seed)


def weight_fingerprint(module: torch.nn.Module) -> str:
    return param_checksum(module)[:16]


def _encode_corpus(codec, images: np.ndarray) -> torch.Tensor:
    from rewash.imutil import stack_images

    batch = stack_images(images)
    with torch.no_grad():
        return torch.cat(
            [codec.encode_batch(batch[i : i + 64]) for i in range(0, len(batch), 64)]
        )


def _summary(history: dict) -> dict:
    out = {}
    for key, vals in history.items():
        if vals:
            out[key] = {"first": float(vals[0]), "last": float(vals[-1]), "n": len(vals)}
    return out


def run_pipeline_train(
    cfg: ExperimentConfig, stages: list[str] | None = None, force: bool = False
) -> dict:
    """Train (or reuse) the requested stages; returns the train manifest."""
    requested = list(stages or STAGE_ORDER)
    for s in requested:
        if s not in STAGE_ORDER:
            raise ValueError(f"unknown stage {s!r}, expected subset of {STAGE_ORDER}")
    dataset = get_dataset(cfg)
    schedule = build_schedule(cfg)
    manifest_path = cfg.train_manifest_path
    manifest = {"config": cfg.to_dict(), "stages": {}}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        manifest["config"] = cfg.to_dict()
        manifest.setdefault("stages", {})

    train_imgs = dataset.split("train")
    val_imgs = dataset.split("val")

    ae_codec: TrainedCodec | None = None
    backbone: Denoiser | None = None
    adapter: SemanticAdapter | None = None
    encoder: FeatureEncoder | None = None

    def record(stage: str, reused: bool, wall: float, fingerprint: str, history: dict | None):
        manifest["stages"][stage] = {
            "path": str(cfg.checkpoint_path(stage)),
            "reused": reused,
            "wall_clock_s": round(wall, 3),
            "fingerprint": fingerprint,
            "history": _summary(history) if history else None,
        }

    # --- codec: always needed (its trunk is the frozen feature extractor)
    path = cfg.checkpoint_path("codec")
    t0 = time.time()
    if path.exists() and not force:
        ae_codec = TrainedCodec.load(path)
        record("codec", True, time.time() - t0, weight_fingerprint(ae_codec.model), None)
    elif "codec" in requested:
        ae_codec, hist = train_autoencoder(
            train_imgs, val_imgs,
            cfg.codec_train.to_train_config(cfg.seed, "codec"),
            downsample=cfg.codec_downsample,
            latent_channels=cfg.codec_latent_channels,
            base_width=cfg.codec_base_width,
        )
        ae_codec.save(path)
        record("codec", False, time.time() - t0, weight_fingerprint(ae_codec.model), hist)
    else:
        raise FingerprintError("codec checkpoint missing; run the codec stage first")
    encoder = FeatureEncoder(ae_codec.model)
    pipeline_codec = IdentityCodec() if cfg.codec_variant == "identity" else ae_codec
    codec_fp = weight_fingerprint(ae_codec.model)

    def want(stage: str) -> bool:
        return stage in requested

    def reusable(stage: str, expected_upstream: dict) -> dict | None:
        p = cfg.checkpoint_path(stage)
        if not p.exists() or force:
            return None
        payload = load_checkpoint(p, _CKPT_KINDS[stage])
        for k, v in expected_upstream.items():
            if payload.get("upstream", {}).get(k) != v:
                return None
        return payload

    # --- backbone
    upstream = {"codec": codec_fp, "schedule": json.dumps(schedule.to_config())}
    payload = reusable("backbone", upstream)
    t0 = time.time()
    if payload is not None:
        backbone = Denoiser.load(cfg.checkpoint_path("backbone"))
        record("backbone", True, time.time() - t0, weight_fingerprint(backbone), None)
    elif want("backbone"):
        latents = _encode_corpus(pipeline_codec, train_imgs)
        val_latents = _encode_corpus(pipeline_codec, val_imgs)
        backbone, hist = train_backbone(
            latents, val_latents, schedule,
            cfg.backbone_train.to_train_config(cfg.seed, "backbone"),
            model_config=DenoiserConfig(
                latent_channels=pipeline_codec.latent_channels,
                widths=tuple(cfg.backbone_widths),
                ctx_dim=cfg.backbone_ctx_dim,
                time_dim=cfg.backbone_time_dim,
            ),
        )
        backbone.save(cfg.checkpoint_path("backbone"), upstream=upstream)
        record("backbone", False, time.time() - t0, weight_fingerprint(backbone), hist)

    # --- semantic adapter
    if backbone is not None:
        upstream = {"backbone": weight_fingerprint(backbone), "codec": codec_fp}
        payload = reusable("semantic", upstream)
        t0 = time.time()
        if payload is not None:
            adapter = SemanticAdapter.load(cfg.checkpoint_path("semantic"))
            record("semantic", True, time.time() - t0, weight_fingerprint(adapter), None)
        elif want("semantic"):
            adapter, hist = train_semantic_adapter(
                train_imgs, val_imgs, backbone, pipeline_codec, encoder, schedule,
                cfg.semantic_train.to_train_config(cfg.seed, "semantic"),
                n_tokens=cfg.semantic_n_tokens,
            )
            adapter.save(cfg.checkpoint_path("semantic"), upstream=upstream)
            record("semantic", False, time.time() - t0, weight_fingerprint(adapter), hist)

    # --- spatial control net
    if backbone is not None and adapter is not None:
        upstream = {
            "backbone": weight_fingerprint(backbone),
            "adapter": weight_fingerprint(adapter),
            "codec": codec_fp,
        }
        payload = reusable("spatial", upstream)
        t0 = time.time()
        if payload is not None:
            record("spatial", True, time.time() - t0, "", None)
        elif want("spatial"):
            spatial, hist = train_spatial_net(
                train_imgs, val_imgs, backbone, adapter, pipeline_codec, encoder, schedule,
                cfg.spatial_train.to_train_config(cfg.seed, "spatial"),
            )
            spatial.save(cfg.checkpoint_path("spatial"), upstream=upstream)
            record("spatial", False, time.time() - t0, weight_fingerprint(spatial), hist)

    # --- learned watermark (independent of the diffusion stack)
    t0 = time.time()
    if cfg.checkpoint_path("stega").exists() and not force:
        record("stega", True, time.time() - t0, "", None)
    elif want("stega"):
        from rewash.watermarks.base import random_payload
        from rewash.watermarks.stega import STEGA_PAYLOAD_BITS

        stega, hist = train_stega_toy(
            train_imgs,
            cfg.stega_train.to_train_config(cfg.seed, "stega"),
            payload=random_payload(STEGA_PAYLOAD_BITS, cfg.payload_seed),
            budget=cfg.stega_budget,
        )
        stega.save(cfg.checkpoint_path("stega"))
        record("stega", False, time.time() - t0, "", hist)

    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


_CKPT_KINDS = {
    "codec": "codec",
    "backbone": "denoiser",
    "semantic": "semantic_adapter",
    "spatial": "spatial_control",
    "stega": "stega",
}


def load_components(cfg: ExperimentConfig, need_controls: bool = True) -> dict:
    """Load every trained component, verifying fingerprint chains."""
    ae_codec = TrainedCodec.load(cfg.checkpoint_path("codec"))
    encoder = FeatureEncoder(ae_codec.model)
    pipeline_codec = IdentityCodec() if cfg.codec_variant == "identity" else ae_codec
    codec_fp = weight_fingerprint(ae_codec.model)
    schedule = build_schedule(cfg)

    backbone_payload = load_checkpoint(cfg.checkpoint_path("backbone"), "denoiser")
    if backbone_payload.get("upstream", {}).get("codec") not in (None, codec_fp):
        raise FingerprintError("backbone was trained against a different codec")
    backbone = Denoiser.load(cfg.checkpoint_path("backbone"))

    out = {
        "codec": pipeline_codec,
        "feature_codec": ae_codec,
        "encoder": encoder,
        "schedule": schedule,
        "backbone": backbone,
        "adapter": None,
        "spatial": None,
    }
    if not need_controls:
        return out

    backbone_fp = weight_fingerprint(backbone)
    sem_payload = load_checkpoint(cfg.checkpoint_path("semantic"), "semantic_adapter")
    if sem_payload.get("upstream", {}).get("backbone") not in (None, backbone_fp):
        raise FingerprintError("semantic adapter was trained against a different backbone")
    adapter = SemanticAdapter.load(cfg.checkpoint_path("semantic"))

    spa_payload = load_checkpoint(cfg.checkpoint_path("spatial"), "spatial_control")
    if spa_payload.get("upstream", {}).get("backbone") not in (None, backbone_fp):
        raise FingerprintError("spatial net was trained against a different backbone")
    if spa_payload.get("upstream", {}).get("adapter") not in (None, weight_fingerprint(adapter)):
        raise FingerprintError("spatial net was trained against a different adapter")
    spatial = SpatialControlNet.load(cfg.checkpoint_path("spatial"), backbone, adapter)

    out["adapter"] = adapter
    out["spatial"] = spatial
    return out


def load_stega(cfg: ExperimentConfig) -> StegaWatermarker:
    return StegaWatermarker.load(cfg.checkpoint_path("stega"))
