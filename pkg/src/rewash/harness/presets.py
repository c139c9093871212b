"""Canonical experiment presets.

`desk` is the full-size default configuration (hours of training on a
GPU-class machine); `micro` shrinks widths and step counts so the whole
pipeline trains on a single CPU core in well under an hour while keeping
every interface and evaluation identical.
"""

from __future__ import annotations

from rewash.harness.config import ExperimentConfig, TrainParams


def micro_preset(workdir: str, corpus_dir: str | None = None, seed: int = 0) -> ExperimentConfig:
    return ExperimentConfig(
        workdir=workdir,
        corpus_dir=corpus_dir or f"{workdir}/corpus",
        seed=seed,
        resolution=64,
        synth_corpus_images=400,
        codec_base_width=16,
        codec_train=TrainParams(steps=1200, batch_size=16, lr=2e-3),
        backbone_widths=[32, 64, 96],
        backbone_ctx_dim=32,
        backbone_time_dim=64,
        backbone_train=TrainParams(steps=2000, batch_size=32, lr=2e-3),
        semantic_train=TrainParams(steps=1500, batch_size=32, lr=2e-3),
        spatial_train=TrainParams(steps=1200, batch_size=32, lr=1e-3),
        stega_train=TrainParams(steps=2500, batch_size=16, lr=2e-3),
        eval_images=48,
        eval_negatives=200,
        ring_eval_samples=200,
    )


def desk_preset(workdir: str, corpus_dir: str | None = None, seed: int = 0) -> ExperimentConfig:
    return ExperimentConfig(
        workdir=workdir,
        corpus_dir=corpus_dir or f"{workdir}/corpus",
        seed=seed,
        resolution=64,
        synth_corpus_images=5000,
        codec_base_width=32,
        codec_train=TrainParams(steps=8000, batch_size=32, lr=1e-3),
        backbone_widths=[64, 128, 256],
        backbone_ctx_dim=64,
        backbone_time_dim=128,
        backbone_train=TrainParams(steps=30000, batch_size=32, lr=1e-4),
        semantic_train=TrainParams(steps=20000, batch_size=32, lr=1e-4),
        spatial_train=TrainParams(steps=20000, batch_size=32, lr=1e-4),
        stega_train=TrainParams(steps=10000, batch_size=32, lr=1e-3),
        eval_images=200,
        eval_negatives=1000,
        ring_eval_samples=500,
    )


PRESETS = {"micro": micro_preset, "desk": desk_preset}
